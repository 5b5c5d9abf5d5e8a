"""Detection and correction metrics, threshold sweeps, and speed benchmarks.

Detection is scored micro-averaged over a whole evaluation set: an
index (gap or position) counts as a true positive only when it exactly
matches a gold edit of that sentence. Correction additionally requires
the proposed fill token to match.

Threshold sweeps reuse one cached scoring pass per method; only the
thresholding is repeated, so sweeping dozens of candidate thresholds
costs no extra model passes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import GOLD_DELETE, GOLD_INSERT, INSERTION_TASK, GoldEdit
from .inference import (
    MODE_FAST,
    MODE_PER_GAP,
    MODES,
    flag_deletions,
    flag_insertions,
    insertion_gap_scores,
)
from .model import ModelState

TokenSequence = list[int]
EvalRecord = tuple[TokenSequence, list[GoldEdit]]

DIRECTION_BELOW = "below"
DIRECTION_ABOVE = "above"


@dataclass(frozen=True)
class Metrics:
    """Micro-averaged counts with derived precision, recall and F1.

    Every ratio with a zero denominator is defined as 0.0 so that a
    method that flags nothing scores 0, not an error.
    """

    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def as_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
        }


def gold_index_sets(records: Sequence[EvalRecord], task: str) -> list[set[int]]:
    """Gold gap sets (insertion task) or position sets (deletion task)."""
    kind = GOLD_INSERT if task == INSERTION_TASK else GOLD_DELETE
    return [{e.index for e in golds if e.kind == kind} for _, golds in records]


def detection_metrics(gold_sets: Sequence[set[int]], flag_lists: Sequence[Sequence[int]]) -> Metrics:
    if len(gold_sets) != len(flag_lists):
        raise ValueError("gold and prediction lists differ in length")
    tp = fp = fn = 0
    for gold, flags in zip(gold_sets, flag_lists):
        flags = set(flags)
        tp += len(flags & gold)
        fp += len(flags - gold)
        fn += len(gold - flags)
    return Metrics(tp, fp, fn)


def correction_metrics(
    records: Sequence[EvalRecord],
    proposals: Sequence[Sequence[tuple[int, Sequence[int]]]],
) -> Metrics:
    """Exact-match scoring of insertion fixes: (gap, top-1 token) pairs."""
    if len(records) != len(proposals):
        raise ValueError("records and proposals differ in length")
    tp = fp = fn = 0
    for (_, golds), props in zip(records, proposals):
        gold_pairs = {(e.index, e.token) for e in golds if e.kind == GOLD_INSERT}
        pred_pairs = {(g, candidates[0]) for g, candidates in props if len(candidates)}
        tp += len(pred_pairs & gold_pairs)
        fp += len(pred_pairs - gold_pairs)
        fn += len(gold_pairs - pred_pairs)
    return Metrics(tp, fp, fn)


def threshold_flags(
    score_lists: Sequence[np.ndarray],
    threshold: float,
    direction: str = DIRECTION_BELOW,
    run_filter_sentences: Sequence[TokenSequence] | None = None,
) -> list[list[int]]:
    """Apply one threshold to cached score arrays.

    With run_filter_sentences given (deletion detection on the null
    signal), identical-token runs collapse to their last position;
    direction must then be "above".
    """
    if run_filter_sentences is not None:
        if direction != DIRECTION_ABOVE:
            raise ValueError("run-filtered flagging reads high scores as errors")
        return [flag_deletions(s, sc, threshold) for s, sc in zip(run_filter_sentences, score_lists)]
    if direction == DIRECTION_BELOW:
        return [flag_insertions(sc, threshold) for sc in score_lists]
    if direction == DIRECTION_ABOVE:
        with np.errstate(invalid="ignore"):
            return [[int(i) for i in np.flatnonzero(np.asarray(sc) > threshold)] for sc in score_lists]
    raise ValueError(f"direction must be {DIRECTION_BELOW!r} or {DIRECTION_ABOVE!r}")


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    metrics: Metrics


@dataclass(frozen=True)
class SweepResult:
    points: tuple[SweepPoint, ...]

    @property
    def best(self) -> SweepPoint:
        """Highest F1; ties go to the smaller threshold."""
        best = self.points[0]
        for p in self.points[1:]:
            if p.metrics.f1 > best.metrics.f1:
                best = p
        return best


def sweep_thresholds(
    score_lists: Sequence[np.ndarray],
    gold_sets: Sequence[set[int]],
    thresholds: Sequence[float],
    direction: str = DIRECTION_BELOW,
    run_filter_sentences: Sequence[TokenSequence] | None = None,
) -> SweepResult:
    """Score every candidate threshold against cached score arrays."""
    if not len(thresholds):
        raise ValueError("no thresholds to sweep")
    ts = sorted(float(t) for t in thresholds)
    points = []
    for t in ts:
        flags = threshold_flags(score_lists, t, direction, run_filter_sentences)
        points.append(SweepPoint(t, detection_metrics(gold_sets, flags)))
    return SweepResult(tuple(points))


def parse_grid(text: str) -> tuple[float, ...]:
    """Threshold grid from "lo:hi:step" (hi inclusive) or "a,b,c"."""
    text = text.strip()
    try:
        if ":" in text:
            lo, hi, step = (float(x) for x in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            values = np.arange(lo, hi + step / 2, step)
        else:
            values = np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError:
        raise ValueError(f"cannot parse threshold grid {text!r}") from None
    if values.size == 0:
        raise ValueError(f"cannot parse threshold grid {text!r}")
    return tuple(round(float(v), 10) for v in values)


_GRID_WIDE = tuple(round(0.02 * i, 4) for i in range(1, 50))
_GRID_LOW = (1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3,
             0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
_GRID_HIGH = tuple(round(0.05 * i, 4) for i in range(1, 20))


def default_grid(method: str, task: str) -> tuple[float, ...]:
    """Sweep grid matched to a method's score distribution.

    The null-signal detector sees well-spread probabilities, the
    token-probability baselines concentrate near zero (hence the
    log-spaced low end), and the inserted-mask baseline reads high
    scores as errors.
    """
    if method == "null":
        return _GRID_WIDE
    if method in ("substituted-mask", "no-mask"):
        return _GRID_LOW
    if method == "inserted-mask":
        if task != INSERTION_TASK:
            raise ValueError("inserted-mask is an insertion-task baseline")
        return _GRID_HIGH
    raise ValueError(f"no default grid for method {method!r}")


# ---------------------------------------------------------------------------
# speed benchmark

@dataclass(frozen=True)
class BenchmarkResult:
    mode: str
    n_sentences: int
    n_sequences: int  # model passes, exact
    n_tokens: int
    seconds: float

    @property
    def sentences_per_second(self) -> float:
        return self.n_sentences / self.seconds if self.seconds > 0 else float("inf")


def probe_workload(sentences: Sequence[TokenSequence], mode: str) -> tuple[int, int]:
    """Exact (sequences, tokens) a gap scan feeds through the model.

    Only interior gaps are probed, so a sentence of n words costs n - 1
    probes of n + 1 tokens per-gap, or one 2n + 1 token pass fast;
    sentences under two words cost nothing.
    """
    if mode == MODE_PER_GAP:
        seqs = sum(len(s) - 1 for s in sentences if len(s) >= 2)
        toks = sum((len(s) - 1) * (len(s) + 1) for s in sentences if len(s) >= 2)
    elif mode == MODE_FAST:
        seqs = sum(1 for s in sentences if len(s) >= 2)
        toks = sum(2 * len(s) + 1 for s in sentences if len(s) >= 2)
    else:
        raise ValueError(f"mode must be one of {MODES}")
    return seqs, toks


def benchmark_insertion_modes(
    state: ModelState,
    sentences: Sequence[TokenSequence],
    warmup_sentences: int = 4,
    max_tokens: int = 16384,
    timer: Callable[[], float] = time.perf_counter,
) -> dict[str, BenchmarkResult]:
    """Wall-clock both insertion scan modes on the same sentences.

    A short warmup scan runs first and is excluded from the timings.
    """
    if not sentences:
        raise ValueError("benchmark needs at least one sentence")
    warm = list(sentences[:warmup_sentences])
    results = {}
    for mode in (MODE_PER_GAP, MODE_FAST):
        insertion_gap_scores(state, warm, mode=mode, max_tokens=max_tokens)
        t0 = timer()
        insertion_gap_scores(state, list(sentences), mode=mode, max_tokens=max_tokens)
        dt = timer() - t0
        seqs, toks = probe_workload(sentences, mode)
        results[mode] = BenchmarkResult(mode, len(sentences), seqs, toks, dt)
    return results


def insertion_speedup(results: dict[str, BenchmarkResult]) -> float:
    """Mean per-sentence time ratio, per-gap over fast."""
    return results[MODE_PER_GAP].seconds / results[MODE_FAST].seconds
