"""Detection baselines driven by ordinary token probabilities.

All three run on a plain masked LM and need no null-token training:

* substituted-mask: mask each position in turn and score the original
  token; a low score marks the position as out of place;
* no-mask: score every visible token in one unmasked pass; low
  self-probability marks the position;
* inserted-mask: put a mask into each gap and read the best content
  token's probability; a high score means a real word plausibly
  belongs there. This one only makes sense for the insertion task.

The positional baselines serve both tasks. For the deletion task a
flagged position is the proposed deletion. For the insertion task a
suspicious position g is read as evidence for gap g: the token right
after a missing word is the one whose context broke. Gap-indexed views
honor the null detector's include_boundary_gaps setting; the final gap
n never has a witness token under the positional reading and stays
NaN either way.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .inference import evaluated_gaps
from .model import ModelState, batched_probs
from .vocab import MASK_ID, N_SPECIALS

BASELINE_SUBSTITUTED_MASK = "substituted-mask"
BASELINE_NO_MASK = "no-mask"
BASELINE_INSERTED_MASK = "inserted-mask"
BASELINES = (BASELINE_SUBSTITUTED_MASK, BASELINE_NO_MASK, BASELINE_INSERTED_MASK)

# score direction that marks an error, per baseline
BASELINE_DIRECTIONS = {
    BASELINE_SUBSTITUTED_MASK: "below",
    BASELINE_NO_MASK: "below",
    BASELINE_INSERTED_MASK: "above",
}

TokenSequence = list[int]


def substituted_mask_scores(
    state: ModelState,
    sentences: Sequence[TokenSequence],
    max_tokens: int = 16384,
) -> list[np.ndarray]:
    """Probability of each original token when masked, per position."""
    probes = []
    owners = []
    for i, s in enumerate(sentences):
        s = list(s)
        for p in range(len(s)):
            probes.append(s[:p] + [MASK_ID] + s[p + 1:])
            owners.append((i, p, s[p]))
    out = [np.empty(len(s)) for s in sentences]
    for (i, p, tok), probs in zip(owners, batched_probs(state, probes, max_tokens=max_tokens)):
        out[i][p] = probs[p, tok]
    return out


def no_mask_scores(
    state: ModelState,
    sentences: Sequence[TokenSequence],
    max_tokens: int = 16384,
) -> list[np.ndarray]:
    """Probability of each visible token at its own position, one pass."""
    out = []
    for s, probs in zip(sentences, batched_probs(state, list(sentences), max_tokens=max_tokens)):
        out.append(np.array(probs[np.arange(len(s)), np.asarray(s, dtype=np.int64)]))
    return out


def inserted_mask_scores(
    state: ModelState,
    sentences: Sequence[TokenSequence],
    include_boundary_gaps: bool = True,
    max_tokens: int = 16384,
) -> list[np.ndarray]:
    """Best content-token probability for a mask at each evaluated gap,
    one length-(n+1) gap-indexed array per sentence, NaN elsewhere."""
    probes = []
    owners = []
    for i, s in enumerate(sentences):
        s = list(s)
        for g in evaluated_gaps(len(s), include_boundary_gaps):
            probes.append(s[:g] + [MASK_ID] + s[g:])
            owners.append((i, g))
    out = [np.full(len(s) + 1, np.nan) for s in sentences]
    for (i, g), probs in zip(owners, batched_probs(state, probes, max_tokens=max_tokens)):
        out[i][g] = probs[g, N_SPECIALS:].max()
    return out


def positional_gap_scores(
    score_lists: Sequence[np.ndarray],
    include_boundary_gaps: bool = True,
) -> list[np.ndarray]:
    """Reindex per-position scores as gap-indexed arrays for the
    insertion task: gap g takes the score of position g, the token
    right after the gap. Gap n has no such witness and stays NaN, as
    does gap 0 when boundary gaps are excluded."""
    out = []
    for sc in score_lists:
        gaps = np.full(len(sc) + 1, np.nan)
        if include_boundary_gaps:
            gaps[:-1] = np.asarray(sc)
        else:
            gaps[1:-1] = np.asarray(sc)[1:]
        out.append(gaps)
    return out


def baseline_scores(
    state: ModelState,
    sentences: Sequence[TokenSequence],
    method: str,
    include_boundary_gaps: bool = True,
    max_tokens: int = 16384,
) -> list[np.ndarray]:
    if method == BASELINE_SUBSTITUTED_MASK:
        return substituted_mask_scores(state, sentences, max_tokens=max_tokens)
    if method == BASELINE_NO_MASK:
        return no_mask_scores(state, sentences, max_tokens=max_tokens)
    if method == BASELINE_INSERTED_MASK:
        return inserted_mask_scores(state, sentences,
                                    include_boundary_gaps=include_boundary_gaps,
                                    max_tokens=max_tokens)
    raise ValueError(f"method must be one of {BASELINES}")
