"""Synthetic corpus: a first-order Markov grammar plus error injection.

The grammar has three symbol classes:

* pair heads: always followed by one fixed partner symbol, emulating
  multi-token words;
* fillers: parenthetical symbols, each compatible with a random subset
  of predecessors and a random subset of successors. They carry the
  open-class entropy of real text: given only the context, a filler's
  identity is unpredictable, but a visible filler in a compatible spot
  is always grammatical. The compatibility restriction keeps a filler
  dropped into an arbitrary gap from being universally undetectable;
* plain symbols: followed either by one of exactly K core successors
  or, with probability filler_rate, by a compatible filler.

Without the filler class every position of a strict-K chain is nearly
deterministic under bidirectional masked prediction, which makes
"mask it and score the original word" an unrealistically strong error
detector. Fillers restore the asymmetry the detection task has in real
text: identity is hard to guess, consistency is easy to check.

Error injection produces evaluation pairs (erroneous sentence, gold
edits). For the insertion task a word is deleted and the gold edit
re-inserts it at a gap; for the deletion task a spurious word is
inserted and the gold edit deletes it. Injected errors are constrained
to be detectable in principle: the edit must break at least one
adjacent transition, and fills are real content words, never control
tokens or fillers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .vocab import N_SPECIALS, Vocab

TokenSequence = list[int]

INSERTION_TASK = "insertion"
DELETION_TASK = "deletion"
TASKS = (INSERTION_TASK, DELETION_TASK)

GOLD_INSERT = "insert-at-gap"
GOLD_DELETE = "delete-at-position"


class DatasetError(ValueError):
    """Raised for malformed corpus or evaluation files."""


@dataclass(frozen=True)
class GoldEdit:
    """One gold correction, indexed into the erroneous sentence.

    A gap index g addresses the slot before token g (0..n inclusive);
    `token` is the id to insert and is present only for insertions.
    """

    kind: str
    index: int
    token: int | None = None

    def __post_init__(self):
        if self.kind not in (GOLD_INSERT, GOLD_DELETE):
            raise ValueError(f"unknown gold edit kind {self.kind!r}")
        if self.index < 0:
            raise ValueError("gold edit index must be nonnegative")
        if (self.kind == GOLD_INSERT) != (self.token is not None):
            raise ValueError("insert edits carry a token, delete edits do not")


@dataclass(frozen=True)
class GrammarConfig:
    vocab_size: int = 200
    successors_per_symbol: int = 4
    pair_head_fraction: float = 0.2
    filler_fraction: float = 0.15
    filler_rate: float = 0.15
    filler_compat: float = 0.5
    length_range: tuple[int, int] = (10, 60)
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        if not 1 <= self.successors_per_symbol < self.vocab_size:
            raise ValueError("successors_per_symbol must satisfy 1 <= K < vocab_size")
        for name in ("pair_head_fraction", "filler_fraction", "filler_rate", "filler_compat"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        # heads, their partners and fillers are disjoint classes
        if 2 * self.pair_head_fraction + self.filler_fraction > 1.0 + 1e-9:
            raise ValueError("pair heads, partners and fillers exceed the vocabulary")
        lo, hi = self.length_range
        if lo < 2 or hi < lo:
            raise ValueError("length_range must satisfy 2 <= min <= max")


@dataclass(frozen=True)
class MarkovGrammar:
    """Frozen transition structure sampled from a GrammarConfig.

    All ids live in vocabulary space (content ids start at 4).
    `core` maps each plain symbol to its K permitted core successors.
    """

    n_content: int
    partner: dict  # head id -> partner id
    fillers: frozenset
    core: dict  # plain id -> tuple of successor ids
    filler_pred: dict  # filler id -> frozenset of permitted predecessors
    filler_succ: dict  # filler id -> tuple of permitted successors
    filler_rate: float

    @property
    def content_ids(self) -> range:
        return range(N_SPECIALS, N_SPECIALS + self.n_content)

    def is_filler(self, t: int) -> bool:
        return t in self.fillers

    def is_head(self, t: int) -> bool:
        return t in self.partner

    def allows(self, a: int, b: int) -> bool:
        """True when token b is permitted directly after token a."""
        if a in self.partner:
            return b == self.partner[a]
        if a in self.fillers:
            # embeds the predecessor check for filler-filler bigrams
            return b in self.filler_succ[a]
        if b in self.fillers:
            return a in self.filler_pred[b]
        return b in self.core[a]

    @classmethod
    def build(cls, cfg: GrammarConfig, rng: np.random.Generator) -> "MarkovGrammar":
        ids = np.arange(N_SPECIALS, N_SPECIALS + cfg.vocab_size)
        n_heads = int(cfg.pair_head_fraction * cfg.vocab_size)
        n_fillers = int(cfg.filler_fraction * cfg.vocab_size)
        perm = rng.permutation(ids)
        heads = perm[:n_heads]
        fillers = frozenset(int(t) for t in perm[n_heads:n_heads + n_fillers])
        pool = perm[n_heads + n_fillers:]
        partners = rng.choice(pool, size=n_heads, replace=False) if n_heads else np.array([], dtype=int)
        partner = {int(h): int(p) for h, p in zip(heads, partners)}

        n_compat = max(1, round(cfg.filler_compat * cfg.vocab_size))
        non_filler = np.array([t for t in ids if int(t) not in fillers])
        filler_pred = {}
        for f in sorted(fillers):
            others = ids[ids != f]
            filler_pred[f] = frozenset(
                int(t) for t in rng.choice(others, size=min(n_compat, len(others)), replace=False)
            )

        core = {}
        for t in ids:
            t = int(t)
            if t in partner or t in fillers:
                continue
            options = non_filler[non_filler != t]
            core[t] = tuple(int(s) for s in rng.choice(options, size=cfg.successors_per_symbol, replace=False))

        filler_succ = {}
        for f in sorted(fillers):
            others = ids[ids != f]
            chosen = rng.choice(others, size=min(n_compat, len(others)), replace=False)
            succ = tuple(sorted(
                int(b) for b in chosen
                if int(b) not in fillers or f in filler_pred[int(b)]
            ))
            if not succ:  # pathological compat settings: keep the chain alive
                succ = (int(non_filler[non_filler != f][0]),)
            filler_succ[f] = succ
        return cls(cfg.vocab_size, partner, fillers, core, filler_pred, filler_succ, cfg.filler_rate)

    def compatible_fillers(self, prev: int) -> list[int]:
        return [f for f in sorted(self.fillers) if prev != f and prev in self.filler_pred[f]]

    def sample_next(self, prev: int, rng: np.random.Generator) -> int:
        if prev in self.partner:
            return self.partner[prev]
        if prev in self.fillers:
            options = self.filler_succ[prev]
            return int(options[int(rng.integers(len(options)))])
        if self.filler_rate > 0 and rng.random() < self.filler_rate:
            options = self.compatible_fillers(prev)
            if options:
                return int(options[int(rng.integers(len(options)))])
        return int(rng.choice(self.core[prev]))

    def sample_sentence(self, length: int, rng: np.random.Generator) -> TokenSequence:
        out = [int(rng.integers(N_SPECIALS, N_SPECIALS + self.n_content))]
        while len(out) < length:
            out.append(self.sample_next(out[-1], rng))
        return out

    def sample_corpus(
        self,
        n_sentences: int,
        length_range: tuple[int, int],
        seed: int,
    ) -> list[TokenSequence]:
        rng = np.random.default_rng(seed)
        lo, hi = length_range
        lengths = rng.integers(lo, hi + 1, size=n_sentences)
        return [self.sample_sentence(int(n), rng) for n in lengths]


def build_grammar(cfg: GrammarConfig) -> MarkovGrammar:
    """Transition structure for cfg. Deterministic in cfg.seed and
    independent of how many sentences are later sampled."""
    table_seed, _ = np.random.SeedSequence(cfg.seed).spawn(2)
    return MarkovGrammar.build(cfg, np.random.default_rng(table_seed))


def generate_corpus(cfg: GrammarConfig, n_sentences: int) -> list[TokenSequence]:
    """Sample sentences from the grammar defined by cfg.

    Deterministic given cfg.seed; every emitted id is a content id and
    every adjacent bigram is permitted by the transition structure.
    """
    if n_sentences < 0:
        raise ValueError("n_sentences must be nonnegative")
    _, corpus_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    grammar = build_grammar(cfg)
    rng = np.random.default_rng(corpus_seed)
    lo, hi = cfg.length_range
    lengths = rng.integers(lo, hi + 1, size=n_sentences)
    return [grammar.sample_sentence(int(n), rng) for n in lengths]


def _bridges(grammar: MarkovGrammar | None, a: int | None, t: int, b: int | None) -> bool:
    """True when t sits undetectably between a and b (both links legal).

    Sentence boundaries (None) impose no constraint on their side.
    """
    if grammar is None:
        return False
    left_ok = a is None or grammar.allows(a, t)
    right_ok = b is None or grammar.allows(t, b)
    return left_ok and right_ok


def _pick_spaced(candidates: list[int], k: int, spacing: int, rng: np.random.Generator, tries: int = 20) -> list[int]:
    """k values from candidates, pairwise at least `spacing` apart."""
    for _ in range(tries):
        chosen: list[int] = []
        for c in rng.permutation(candidates):
            if all(abs(int(c) - p) >= spacing for p in chosen):
                chosen.append(int(c))
                if len(chosen) == k:
                    return sorted(chosen)
    raise ValueError(f"cannot place {k} edits with spacing {spacing} in {len(candidates)} candidate slots")


def inject_errors(
    sentence: TokenSequence,
    task: str,
    n_errors: int,
    seed: int,
    grammar: MarkovGrammar | None = None,
    vocab: Vocab | None = None,
    plausible_fraction: float = 0.35,
) -> tuple[TokenSequence, list[GoldEdit]]:
    """Derive an erroneous sentence and the gold edits that repair it.

    insertion task: deletes n_errors interior words; each gold edit
    re-inserts the word at its gap in the shortened sentence.
    deletion task: inserts n_errors spurious content words at interior
    gaps; each gold edit deletes one of them. A spurious word is drawn
    either uniformly or, with plausible_fraction, as a legal successor
    of its left neighbor (a hard case: locally plausible, globally
    wrong).

    When a grammar is supplied, spurious words are never fillers and
    every injected error is guaranteed to break at least one adjacent
    transition; without one, only control tokens and immediate
    duplicates are avoided. Gold edits come out sorted and non-adjacent.
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    if n_errors < 1:
        raise ValueError("n_errors must be positive")
    n = len(sentence)
    rng = np.random.default_rng(seed)

    if task == INSERTION_TASK:
        # interior deletions only: a missing first or last word leaves
        # no broken transition to observe
        if n < 3 * n_errors + 1:
            raise ValueError(f"sentence of {n} too short for {n_errors} insertion-task errors")
        candidates = [
            j for j in range(1, n - 1)
            if grammar is None or not grammar.allows(sentence[j - 1], sentence[j + 1])
        ]
        if len(candidates) < n_errors:
            raise ValueError("not enough detectable deletion sites in sentence")
        positions = _pick_spaced(candidates, n_errors, 3, rng)
        corrupted = [t for j, t in enumerate(sentence) if j not in positions]
        golds = [GoldEdit(GOLD_INSERT, j - k, sentence[j]) for k, j in enumerate(positions)]
        return corrupted, golds

    # deletion task
    if n < 2 * n_errors:
        raise ValueError(f"sentence of {n} too short for {n_errors} deletion-task errors")
    gaps = _pick_spaced(list(range(1, n)), n_errors, 2, rng)
    fills: list[int] = []
    for g in gaps:
        left, right = sentence[g - 1], sentence[g]
        fills.append(_draw_spurious(left, right, rng, grammar, vocab, plausible_fraction))
    corrupted = list(sentence)
    golds = []
    for k, (g, t) in enumerate(zip(gaps, fills)):
        corrupted.insert(g + k, t)
        golds.append(GoldEdit(GOLD_DELETE, g + k))
    return corrupted, golds


def _draw_spurious(
    left: int,
    right: int,
    rng: np.random.Generator,
    grammar: MarkovGrammar | None,
    vocab: Vocab | None,
    plausible_fraction: float,
) -> int:
    if grammar is None:
        if vocab is None:
            raise ValueError("deletion-task injection needs a grammar or a vocab to draw spurious words")
        for _ in range(200):
            t = int(rng.integers(N_SPECIALS, vocab.size))
            if t not in (left, right):
                return t
        raise ValueError("could not draw a spurious word distinct from its neighbors")

    def acceptable(t: int) -> bool:
        if t in (left, right) or grammar.is_filler(t):
            return False
        return not _bridges(grammar, left, t, right)

    if rng.random() < plausible_fraction and not grammar.is_head(left) and not grammar.is_filler(left):
        plausible = [t for t in grammar.core[left] if acceptable(t)]
        if plausible:
            return int(plausible[int(rng.integers(len(plausible)))])
    lo = N_SPECIALS
    hi = N_SPECIALS + grammar.n_content
    for _ in range(200):
        t = int(rng.integers(lo, hi))
        if acceptable(t):
            return t
    raise ValueError("could not draw a detectable spurious word")


def build_eval_set(
    sentences: Iterable[TokenSequence],
    task: str,
    grammar: MarkovGrammar,
    seed: int,
    error_mix: dict[int, float] | None = None,
) -> list[tuple[TokenSequence, list[GoldEdit]]]:
    """Inject errors into each sentence, drawing the per-sentence error
    count from error_mix (default: one error 75%, two errors 25%)."""
    mix = error_mix or {1: 0.75, 2: 0.25}
    counts = sorted(mix)
    weights = np.array([mix[c] for c in counts], dtype=float)
    weights = weights / weights.sum()
    rng = np.random.default_rng(seed)
    records = []
    for s in sentences:
        k = int(rng.choice(counts, p=weights))
        if task == INSERTION_TASK:
            k = min(k, max(1, (len(s) - 1) // 3))
        seed_s = int(rng.integers(2**63))
        records.append(inject_errors(s, task, k, seed_s, grammar=grammar))
    return records


# ---------------------------------------------------------------------------
# file formats

def save_corpus(path, sentences: Sequence[TokenSequence], vocab: Vocab) -> None:
    """One sentence per line, symbols separated by single spaces."""
    with open(path, "w", encoding="utf-8") as f:
        for s in sentences:
            f.write(" ".join(vocab.decode(s)) + "\n")


def load_corpus(path, vocab: Vocab) -> list[TokenSequence]:
    sentences = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                sentences.append(vocab.encode(line.split(" ")))
            except ValueError as e:
                raise DatasetError(f"{path}: line {lineno}: {e}") from None
    return sentences


def save_eval_set(path, records: Sequence[tuple[TokenSequence, list[GoldEdit]]], vocab: Vocab) -> None:
    """One JSON record per line: {"source": "sym sym ...", "edits": [...]}.

    `source` is the erroneous sentence; `edits` are the gold corrections
    with symbol strings for insert tokens.
    """
    with open(path, "w", encoding="utf-8") as f:
        for sentence, golds in records:
            edits = []
            for e in golds:
                d: dict = {"kind": e.kind, "index": e.index}
                if e.token is not None:
                    d["token"] = vocab.symbol_of(e.token)
                edits.append(d)
            f.write(json.dumps({"source": " ".join(vocab.decode(sentence)), "edits": edits}) + "\n")


def load_eval_set(path, vocab: Vocab) -> list[tuple[TokenSequence, list[GoldEdit]]]:
    """Parse and validate an evaluation file.

    Raises DatasetError naming the offending line for malformed JSON,
    unknown symbols, bad edit kinds, or out-of-range indices (gaps may
    be 0..n, positions 0..n-1 for a source of n tokens).
    """
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{path}: line {lineno}: invalid JSON ({e.msg})") from None
            try:
                records.append(_parse_eval_record(obj, vocab))
            except (ValueError, KeyError, TypeError) as e:
                raise DatasetError(f"{path}: line {lineno}: {e}") from None
    return records


def _parse_eval_record(obj: dict, vocab: Vocab) -> tuple[TokenSequence, list[GoldEdit]]:
    if not isinstance(obj, dict) or "source" not in obj or "edits" not in obj:
        raise ValueError("record must be an object with 'source' and 'edits'")
    sentence = vocab.encode(str(obj["source"]).split(" "))
    n = len(sentence)
    golds = []
    for e in obj["edits"]:
        kind = e["kind"]
        index = int(e["index"])
        token = vocab.id_of(e["token"]) if "token" in e else None
        gold = GoldEdit(kind, index, token)
        if gold.kind == GOLD_INSERT and index > n:
            raise ValueError(f"insert gap {index} out of range 0..{n}")
        if gold.kind == GOLD_DELETE and index >= n:
            raise ValueError(f"delete position {index} out of range 0..{n - 1}")
        golds.append(gold)
    return sentence, golds
