"""Error detection and correction built on the null-token signal.

Detection reads the probability the model assigns to the null token:

* insertion task (a word is missing): probe gaps with a mask and flag
  gaps where the null probability is low, meaning something real
  belongs there;
* deletion task (a word is spurious): score the unmasked sentence and
  flag positions whose null probability is high, meaning the model
  would rather erase the token.

Gap g sits before word g; a length-n sentence has gaps 0..n. All of
them are probed by default. include_boundary_gaps=False restricts
probing to interior gaps 1..n-1 (training only ever splices tokens
after a word, so the outermost gaps see a weaker signal; the flag
exists to measure that ablation). Unprobed gaps carry NaN scores and
are never flagged.

Per-gap insertion probing rebuilds the sentence once per gap, so a
flagged gap's correction candidates come from the very pass that
scored it. The fast mode probes every evaluated gap in one pass over a
single interleaved sequence, masks alternating with words.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .corpus import DELETION_TASK, INSERTION_TASK, TASKS, TokenSequence
from .corruption import top_content_ids
from .model import ModelState, batched_probs
from .vocab import MASK_ID, NULL_ID

MODE_PER_GAP = "per-gap"
MODE_FAST = "fast"
MODE_SINGLE_PASS = "single-pass"
MODES = (MODE_PER_GAP, MODE_FAST)


@dataclass(frozen=True)
class DetectorConfig:
    insertion_threshold: float = 0.10
    deletion_threshold: float = 0.99
    top_k_corrections: int = 5
    include_boundary_gaps: bool = True

    def __post_init__(self):
        if not 0.0 < self.insertion_threshold < 1.0:
            raise ValueError("insertion_threshold must lie strictly in (0, 1)")
        if not 0.0 < self.deletion_threshold < 1.0:
            raise ValueError("deletion_threshold must lie strictly in (0, 1)")
        if self.top_k_corrections < 1:
            raise ValueError("top_k_corrections must be positive")


@dataclass(frozen=True, eq=False)
class DetectionReport:
    """Detection outcome for one sentence.

    null_probability is indexed by gap for the insertion task (length
    n+1, NaN at gaps that were not evaluated) and by token position for
    the deletion task (length n). corrections maps each flagged gap to
    ranked (token id, probability) pairs taken from the same forward
    pass that produced the gap's score; it stays empty for deletions.
    """

    task: str
    mode: str
    threshold: float
    null_probability: np.ndarray
    flagged: tuple[int, ...]
    corrections: dict = field(default_factory=dict)


def _check_probe_length(n_probe: int, max_len: int, mode: str) -> None:
    if n_probe > max_len:
        hint = "; per-gap mode probes with shorter sequences" if mode == MODE_FAST else ""
        raise ValueError(
            f"probe sequence of {n_probe} tokens exceeds the model's max_len {max_len}{hint}; "
            "retrain with a larger max_len or split the input"
        )


def evaluated_gaps(n_words: int, include_boundary_gaps: bool) -> range:
    return range(0, n_words + 1) if include_boundary_gaps else range(1, n_words)


def _insertion_scan(
    state: ModelState,
    sentences: Sequence[TokenSequence],
    mode: str,
    include_boundary_gaps: bool,
    max_tokens: int,
    top_k: int,
) -> tuple[list[np.ndarray], list[dict]]:
    """Score every evaluated gap of every sentence; when top_k > 0 also
    collect each gap's top-k (token, probability) fill candidates from
    the same probability row."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    max_len = state.config.max_len
    scores = [np.full(len(s) + 1, np.nan) for s in sentences]
    cands: list[dict] = [{} for _ in sentences]

    probes = []
    owners = []  # (sentence index, {gap: mask position within probe})
    for i, s in enumerate(sentences):
        n = len(s)
        gaps = evaluated_gaps(n, include_boundary_gaps)
        if len(gaps) == 0:
            continue
        if mode == MODE_FAST:
            length = 2 * n + 1 if include_boundary_gaps else 2 * n - 1
            _check_probe_length(length, max_len, mode)
            seq = np.full(length, MASK_ID, dtype=np.int64)
            if include_boundary_gaps:
                seq[1::2] = s
                owners.append((i, {g: 2 * g for g in gaps}))
            else:
                seq[0::2] = s
                owners.append((i, {g: 2 * g - 1 for g in gaps}))
            probes.append(seq.tolist())
        else:
            _check_probe_length(n + 1, max_len, mode)
            words = list(s)
            for g in gaps:
                probes.append(words[:g] + [MASK_ID] + words[g:])
                owners.append((i, {g: g}))

    for (i, positions), probs in zip(owners, batched_probs(state, probes, max_tokens=max_tokens)):
        for g, p in positions.items():
            row = probs[p]
            scores[i][g] = row[NULL_ID]
            if top_k > 0:
                ids = top_content_ids(row, top_k)
                cands[i][g] = tuple((t, float(row[t])) for t in ids)
    return scores, cands


def insertion_gap_scores(
    state: ModelState,
    sentences: Sequence[TokenSequence],
    mode: str = MODE_FAST,
    include_boundary_gaps: bool = True,
    max_tokens: int = 16384,
) -> list[np.ndarray]:
    """Null probability at every evaluated gap: one array of length n+1
    per sentence, indexed by gap, NaN where not evaluated."""
    scores, _ = _insertion_scan(state, sentences, mode, include_boundary_gaps,
                                max_tokens, top_k=0)
    return scores


def deletion_position_scores(
    state: ModelState,
    sentences: Sequence[TokenSequence],
    max_tokens: int = 16384,
) -> list[np.ndarray]:
    """Null probability at every token of the unmasked sentence."""
    for s in sentences:
        _check_probe_length(len(s), state.config.max_len, MODE_PER_GAP)
    scores = []
    for probs in batched_probs(state, list(sentences), max_tokens=max_tokens):
        scores.append(np.array(probs[:, NULL_ID]))
    return scores


def flag_insertions(scores: np.ndarray, threshold: float) -> list[int]:
    """Gaps whose null probability falls below threshold. NaN entries
    (unprobed gaps) never compare below and are never flagged."""
    scores = np.asarray(scores)
    with np.errstate(invalid="ignore"):
        return [int(g) for g in np.flatnonzero(scores < threshold)]


def identical_runs(sentence: TokenSequence) -> Iterator[tuple[int, int]]:
    """Maximal runs of one repeated token, as (start, end) inclusive."""
    i, n = 0, len(sentence)
    while i < n:
        j = i
        while j + 1 < n and sentence[j + 1] == sentence[i]:
            j += 1
        yield i, j
        i = j + 1


def flag_deletions(sentence: TokenSequence, scores: np.ndarray, threshold: float) -> list[int]:
    """Positions whose null probability exceeds threshold.

    A run of identical tokens is one candidate, scored by the run
    maximum and reported at the run's last position: duplicates are
    mutually indistinguishable and the canonical edit script always
    deletes at the end of the run.
    """
    scores = np.asarray(scores)
    flags = []
    for i, j in identical_runs(sentence):
        if float(scores[i:j + 1].max()) > threshold:
            flags.append(j)
    return flags


def _insertion_report(state, sentence, cfg, mode, max_tokens) -> DetectionReport:
    if len(sentence) == 0:
        raise ValueError("cannot run detection on an empty sentence")
    (scores,), (cand,) = _insertion_scan(
        state, [sentence], mode, cfg.include_boundary_gaps,
        max_tokens, cfg.top_k_corrections,
    )
    flags = flag_insertions(scores, cfg.insertion_threshold)
    return DetectionReport(
        task=INSERTION_TASK,
        mode=mode,
        threshold=cfg.insertion_threshold,
        null_probability=scores,
        flagged=tuple(flags),
        corrections={g: cand[g] for g in flags},
    )


def detect_insertions(
    state: ModelState,
    sentence: TokenSequence,
    cfg: DetectorConfig = DetectorConfig(),
    max_tokens: int = 16384,
) -> DetectionReport:
    """Probe each evaluated gap with its own masked pass; flag gaps
    whose null probability falls below the threshold, with fill
    candidates for every flagged gap from the same pass."""
    return _insertion_report(state, sentence, cfg, MODE_PER_GAP, max_tokens)


def detect_insertions_fast(
    state: ModelState,
    sentence: TokenSequence,
    cfg: DetectorConfig = DetectorConfig(),
    max_tokens: int = 16384,
) -> DetectionReport:
    """Same contract as detect_insertions from one interleaved forward
    pass covering all evaluated gaps."""
    return _insertion_report(state, sentence, cfg, MODE_FAST, max_tokens)


def detect_deletions(
    state: ModelState,
    sentence: TokenSequence,
    cfg: DetectorConfig = DetectorConfig(),
    max_tokens: int = 16384,
) -> DetectionReport:
    """Score the unmasked sentence once; flag positions whose null
    probability exceeds the threshold, reporting an identical-token run
    only at its last position."""
    if len(sentence) == 0:
        raise ValueError("cannot run detection on an empty sentence")
    (scores,) = deletion_position_scores(state, [sentence], max_tokens=max_tokens)
    flags = flag_deletions(sentence, scores, cfg.deletion_threshold)
    return DetectionReport(
        task=DELETION_TASK,
        mode=MODE_SINGLE_PASS,
        threshold=cfg.deletion_threshold,
        null_probability=scores,
        flagged=tuple(flags),
    )


def detect_errors(
    state: ModelState,
    sentences: Sequence[TokenSequence],
    task: str,
    threshold: float,
    mode: str = MODE_FAST,
    include_boundary_gaps: bool = True,
    max_tokens: int = 16384,
) -> list[DetectionReport]:
    """Batch detection for one task, without correction candidates."""
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    reports = []
    if task == INSERTION_TASK:
        score_lists = insertion_gap_scores(
            state, sentences, mode=mode,
            include_boundary_gaps=include_boundary_gaps, max_tokens=max_tokens,
        )
        for sc in score_lists:
            reports.append(DetectionReport(
                task, mode, threshold, sc, tuple(flag_insertions(sc, threshold))))
    else:
        score_lists = deletion_position_scores(state, sentences, max_tokens=max_tokens)
        for s, sc in zip(sentences, score_lists):
            reports.append(DetectionReport(
                task, MODE_SINGLE_PASS, threshold, sc,
                tuple(flag_deletions(s, sc, threshold))))
    return reports


def correct_insertions(
    state: ModelState,
    sentence: TokenSequence,
    gaps: Sequence[int],
    top_k: int = 5,
    max_tokens: int = 16384,
) -> list[tuple[int, tuple[tuple[int, float], ...]]]:
    """Ranked (token, probability) fill candidates for each gap.

    Each gap is probed independently against the original sentence, so
    proposals for one gap do not assume any other proposal is applied.
    """
    if top_k < 1:
        raise ValueError("top_k must be positive")
    sentence = list(sentence)
    n = len(sentence)
    for g in gaps:
        if not 0 <= g <= n:
            raise ValueError(f"gap {g} out of range 0..{n}")
    _check_probe_length(n + 1, state.config.max_len, MODE_PER_GAP)
    probes = [sentence[:g] + [MASK_ID] + sentence[g:] for g in gaps]
    out = []
    for g, probs in zip(gaps, batched_probs(state, probes, max_tokens=max_tokens)):
        row = probs[g]
        ids = top_content_ids(row, top_k)
        out.append((int(g), tuple((t, float(row[t])) for t in ids)))
    return out


def correct_insertion(
    state: ModelState,
    sentence: TokenSequence,
    gap: int,
    k: int = 5,
    max_tokens: int = 16384,
) -> tuple[tuple[int, float], ...]:
    """Fill candidates for a single gap, most probable first."""
    ((_, pairs),) = correct_insertions(state, sentence, [gap], top_k=k,
                                       max_tokens=max_tokens)
    return pairs


@dataclass(frozen=True)
class RankedSentence:
    """One corpus sentence ordered by error evidence, with the warning
    positions that triggered the score."""

    index: int
    score: float
    insertion_gaps: tuple[int, ...]
    deletion_positions: tuple[int, ...]


def rank_sentences(
    state: ModelState,
    sentences: Sequence[TokenSequence],
    cfg: DetectorConfig = DetectorConfig(),
    mode: str = MODE_FAST,
    max_tokens: int = 16384,
) -> list[RankedSentence]:
    """Order sentences by strongest error evidence, most suspicious first.

    Evidence is the larger of the insertion deficit (how far the worst
    gap's null probability falls below the insertion threshold,
    relative to the threshold) and the deletion excess (how far the
    worst position rises above the deletion threshold, relative to the
    remaining headroom). Clean sentences score 0. Sorted by descending
    score; ties keep corpus order.
    """
    if not sentences:
        return []
    gap_lists = insertion_gap_scores(state, sentences, mode=mode,
                                     include_boundary_gaps=cfg.include_boundary_gaps,
                                     max_tokens=max_tokens)
    pos_lists = deletion_position_scores(state, sentences, max_tokens=max_tokens)
    ranked = []
    for i, (gsc, psc) in enumerate(zip(gap_lists, pos_lists)):
        deficit = 0.0
        probed = gsc[np.isfinite(gsc)]
        if probed.size:
            deficit = max(0.0, float(cfg.insertion_threshold - probed.min())
                          / cfg.insertion_threshold)
        excess = 0.0
        if psc.size:
            excess = max(0.0, float(psc.max() - cfg.deletion_threshold)
                         / (1.0 - cfg.deletion_threshold))
        ranked.append(RankedSentence(
            index=i,
            score=max(deficit, excess),
            insertion_gaps=tuple(flag_insertions(gsc, cfg.insertion_threshold)),
            deletion_positions=tuple(flag_deletions(sentences[i], psc,
                                                    cfg.deletion_threshold)),
        ))
    ranked.sort(key=lambda r: -r.score)
    return ranked
