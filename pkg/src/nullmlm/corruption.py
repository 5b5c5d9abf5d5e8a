"""Training-time corruption of clean sentences.

Two corruption schemes, selected by CorruptionConfig.baseline_mode:

* baseline mode: classic masked language modeling. A non-adjacent
  subset of word positions is selected (15% by default, at least one)
  and each selected word is masked, replaced by a random word, or left
  in place (80/10/10). The target at each selected position is the
  original word. No tokens are inserted.

* main mode: the combined objective's corruption. A non-adjacent
  subset of word positions is selected (floor of 15% of n, at least
  one word); each selected word independently becomes either a
  substitution or an insertion site with equal probability.

  - Substitution edits the word in place: half the time it is masked,
    half the time left unchanged. Target: the original word.
  - Insertion splices one extra token immediately after the word. The
    spliced token is a mask (50%), a uniformly random word (15%), or a
    "mask and generate" draw (35%): the clean sentence with a single
    mask in that gap is scored by an auxiliary prediction oracle and
    the token is drawn uniformly from the oracle's top ten words
    there. Target: the null class.

`corrupt_batch` is deterministic in (sentences, seed) regardless of the
oracle's internal batching: all random draws, including the top-k pick
index for mask-and-generate, happen before the single oracle call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .vocab import MASK_ID, N_SPECIALS, NULL_ID, Vocab

# fill kinds recorded per edited position, for diagnostics and tests
FILL_MASK = "mask"
FILL_RANDOM = "random"
FILL_MAG = "mask-and-generate"
FILL_UNCHANGED = "unchanged"

# the baseline scheme's fixed shares: mask / random / unchanged
BASELINE_MASK_SHARE = 0.8
BASELINE_RANDOM_SHARE = 0.1

PredictionOracle = Callable[[Sequence[Sequence[int]]], list]


@dataclass(frozen=True)
class CorruptionConfig:
    corruption_rate: float = 0.15
    # selected slot becomes a substitution vs an insertion
    sub_ins_split: float = 0.5
    # insertion fill shares: (mask, random word, mask-and-generate)
    ins_fill_mix: tuple[float, float, float] = (0.5, 0.15, 0.35)
    # within substitution: mask vs leave unchanged
    sub_mask_prob: float = 0.5
    mag_top_k: int = 10
    # False folds the mask-and-generate share into random fills
    mag_enabled: bool = True
    # True selects the plain-MLM 80/10/10 scheme with no insertions
    baseline_mode: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ins_fill_mix", tuple(float(v) for v in self.ins_fill_mix))
        if not 0.0 < self.corruption_rate <= 1.0:
            raise ValueError("corruption_rate must be in (0, 1]")
        if not 0.0 <= self.sub_ins_split <= 1.0:
            raise ValueError("sub_ins_split must be in [0, 1]")
        if not 0.0 <= self.sub_mask_prob <= 1.0:
            raise ValueError("sub_mask_prob must be in [0, 1]")
        if len(self.ins_fill_mix) != 3 or any(not 0.0 <= v <= 1.0 for v in self.ins_fill_mix):
            raise ValueError("ins_fill_mix must be three probabilities")
        if abs(sum(self.ins_fill_mix) - 1.0) > 1e-9:
            raise ValueError("ins_fill_mix must sum to 1")
        if self.mag_top_k < 1:
            raise ValueError("mag_top_k must be positive")

    def effective_ins_mix(self, have_oracle: bool) -> tuple[float, float, float]:
        """(mask, random, mag) splice shares after the mag_enabled switch."""
        mask_r, rand_r, mag_r = self.ins_fill_mix
        if self.mag_enabled and have_oracle:
            return mask_r, rand_r, mag_r
        return mask_r, rand_r + mag_r, 0.0


@dataclass(frozen=True)
class CorruptionRecord:
    """One corrupted training example.

    targets maps positions in `corrupted` to target token ids; positions
    listed in ins_indices were spliced in and always target the null id,
    every other targeted position is a substitution slot targeting the
    original word there. fill_kinds records, for each targeted position,
    how its surface token was chosen.
    """
    original: tuple
    corrupted: tuple
    targets: dict = field(default_factory=dict)
    ins_indices: tuple = ()
    fill_kinds: dict = field(default_factory=dict)

    def __post_init__(self):
        for i in self.ins_indices:
            if self.targets.get(i) != NULL_ID:
                raise ValueError("insertion positions must target the null id")
        if len(self.corrupted) != len(self.original) + len(self.ins_indices):
            raise ValueError("corrupted length inconsistent with insertions")

    @property
    def sub_indices(self) -> tuple:
        return tuple(sorted(set(self.targets) - set(self.ins_indices)))


def max_corrupted_length(n_words: int, cfg: CorruptionConfig) -> int:
    """Worst-case corrupted length: every selected slot becomes an
    insertion."""
    if cfg.baseline_mode:
        return n_words
    want = max(1, int(cfg.corruption_rate * n_words + 1e-9))
    return n_words + min(want, (n_words + 1) // 2)


def pick_slots(n_slots: int, rate: float, rng: np.random.Generator) -> list[int]:
    """Choose a sorted subset of range(n_slots) with pairwise distance
    at least 2, targeting max(1, floor(rate * n_slots)) picks.

    Adjacent edits would let one splice hide another, so the packing
    limit ceil(n_slots / 2) caps the count when the target is too big.
    """
    if n_slots < 1:
        raise ValueError("need at least one slot")
    # the epsilon keeps binary representation error from dragging an
    # exact product like 0.15 * 60 below its true floor
    want = max(1, int(rate * n_slots + 1e-9))
    want = min(want, (n_slots + 1) // 2)
    chosen: list[int] = []
    for c in rng.permutation(n_slots):
        if all(abs(int(c) - p) >= 2 for p in chosen):
            chosen.append(int(c))
            if len(chosen) == want:
                break
    return sorted(chosen)


@dataclass
class _Plan:
    original: tuple
    # gap -> (kind, token or None when pending/unchanged)
    ins_by_gap: dict
    sub_by_word: dict
    # (gap, pick_index) for fills awaiting the oracle
    pending_mag: list


def _plan_one(sentence, vocab: Vocab, cfg: CorruptionConfig,
              rng: np.random.Generator, have_oracle: bool) -> _Plan:
    s = tuple(int(t) for t in sentence)
    n = len(s)
    if n == 0:
        raise ValueError("cannot corrupt an empty sentence")
    for t in s:
        if not N_SPECIALS <= t < vocab.size:
            raise ValueError("clean sentences must contain only content word ids")

    ins_by_gap: dict = {}
    sub_by_word: dict = {}
    pending: list = []

    if cfg.baseline_mode:
        for w in pick_slots(n, cfg.corruption_rate, rng):
            u = rng.random()
            if u < BASELINE_MASK_SHARE:
                sub_by_word[w] = (FILL_MASK, MASK_ID)
            elif u < BASELINE_MASK_SHARE + BASELINE_RANDOM_SHARE:
                sub_by_word[w] = (FILL_RANDOM, int(rng.integers(N_SPECIALS, vocab.size)))
            else:
                sub_by_word[w] = (FILL_UNCHANGED, None)
        return _Plan(s, ins_by_gap, sub_by_word, pending)

    mask_r, rand_r, _ = cfg.effective_ins_mix(have_oracle)
    k_eff = min(cfg.mag_top_k, vocab.n_content)
    for w in pick_slots(n, cfg.corruption_rate, rng):
        if rng.random() < cfg.sub_ins_split:
            if rng.random() < cfg.sub_mask_prob:
                sub_by_word[w] = (FILL_MASK, MASK_ID)
            else:
                sub_by_word[w] = (FILL_UNCHANGED, None)
        else:
            g = w + 1  # the inserted token goes right after the chosen word
            u = rng.random()
            if u < mask_r:
                ins_by_gap[g] = (FILL_MASK, MASK_ID)
            elif u < mask_r + rand_r:
                ins_by_gap[g] = (FILL_RANDOM, int(rng.integers(N_SPECIALS, vocab.size)))
            else:
                ins_by_gap[g] = (FILL_MAG, None)
                pending.append((g, int(rng.integers(k_eff))))
    return _Plan(s, ins_by_gap, sub_by_word, pending)


def _mag_query(source: tuple, gap: int) -> list[int]:
    return list(source[:gap]) + [MASK_ID] + list(source[gap:])


def top_content_ids(prob_row: np.ndarray, k: int) -> list[int]:
    """Ids of the k most probable content words in one probability row,
    ties broken toward the smaller id."""
    content = np.asarray(prob_row, dtype=np.float64)[N_SPECIALS:]
    order = np.argsort(-content, kind="stable")[:k]
    return [int(i) + N_SPECIALS for i in order]


def mask_and_generate(
    sentence: Sequence[int],
    gap: int,
    oracle: PredictionOracle,
    top_k: int = 10,
    seed: int = 0,
) -> int:
    """One mask-and-generate draw: place a mask at `gap`, score it with
    the oracle, and return one of the oracle's top_k content words
    uniformly at random. Deterministic given seed."""
    if top_k < 1:
        raise ValueError("top_k must be positive")
    s = tuple(int(t) for t in sentence)
    if not 0 <= gap <= len(s):
        raise ValueError(f"gap {gap} out of range 0..{len(s)}")
    (probs,) = oracle([_mag_query(s, gap)])
    top = top_content_ids(np.asarray(probs)[gap], top_k)
    rng = np.random.default_rng(seed)
    return top[int(rng.integers(len(top)))]


def _assemble(plan: _Plan) -> CorruptionRecord:
    n = len(plan.original)
    out: list[int] = []
    targets: dict = {}
    kinds: dict = {}
    ins_idx: list[int] = []
    for g in range(n + 1):
        if g in plan.ins_by_gap:
            kind, tok = plan.ins_by_gap[g]
            assert tok is not None, "unresolved mask-and-generate fill"
            i = len(out)
            out.append(tok)
            targets[i] = NULL_ID
            kinds[i] = kind
            ins_idx.append(i)
        if g < n:
            if g in plan.sub_by_word:
                kind, tok = plan.sub_by_word[g]
                i = len(out)
                out.append(plan.original[g] if tok is None else tok)
                targets[i] = plan.original[g]
                kinds[i] = kind
            else:
                out.append(plan.original[g])
    return CorruptionRecord(plan.original, tuple(out), targets, tuple(ins_idx), kinds)


def corrupt_batch(
    sentences: Sequence[Sequence[int]],
    vocab: Vocab,
    cfg: CorruptionConfig,
    seed: int,
    oracle: PredictionOracle | None = None,
) -> list[CorruptionRecord]:
    """Corrupt a batch of clean sentences.

    All randomness derives from per-sentence child seeds of `seed`, and
    the oracle (when needed) is called exactly once on the collected
    mask-and-generate queries, so results do not depend on batch order
    of oracle work or on worker count.
    """
    if not sentences:
        return []
    have_oracle = oracle is not None
    if not cfg.baseline_mode and cfg.mag_enabled and cfg.ins_fill_mix[2] > 0 and not have_oracle:
        raise ValueError(
            "mask-and-generate fills need a prediction oracle; "
            "pass one or disable them via mag_enabled=False"
        )
    children = np.random.SeedSequence(seed).spawn(len(sentences))
    plans = [
        _plan_one(s, vocab, cfg, np.random.default_rng(c), have_oracle)
        for s, c in zip(sentences, children)
    ]

    queries = []
    owners = []  # (plan index, gap, pick index)
    for pi, plan in enumerate(plans):
        for gap, pick in plan.pending_mag:
            queries.append(_mag_query(plan.original, gap))
            owners.append((pi, gap, pick))
    if queries:
        rows = oracle(queries)
        if len(rows) != len(queries):
            raise ValueError("oracle returned a wrong number of probability arrays")
        for (pi, gap, pick), probs in zip(owners, rows):
            top = top_content_ids(np.asarray(probs)[gap], cfg.mag_top_k)
            plans[pi].ins_by_gap[gap] = (FILL_MAG, top[pick])

    return [_assemble(p) for p in plans]


def corrupt(
    sentence: Sequence[int],
    vocab: Vocab,
    cfg: CorruptionConfig,
    seed: int,
    oracle: PredictionOracle | None = None,
) -> CorruptionRecord:
    """Single-sentence convenience wrapper around corrupt_batch."""
    return corrupt_batch([sentence], vocab, cfg, seed, oracle)[0]
