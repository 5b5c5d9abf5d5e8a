"""Minimal edit scripts between token sequences.

`align(a, b)` returns a shortest script of insert/delete/substitute
edits, all indexed against the source sequence `a`:

* insert at i: splice a token in before a[i] (i == len(a) appends);
* delete at i: drop a[i];
* substitute at i: replace a[i].

The backtrack resolves cost ties in a fixed order (keep matching
tokens, then substitute, then delete, then insert), and the result is
normalized so that an edit inside a run of identical tokens lands at
the run's tail: deleting one of "x x x" deletes the last x, and
inserting an x before an x lands after the existing run. Reduplicated
tokens are thereby always blamed on the final copy, matching the
convention used for gold deletion positions. Normalization never
changes what the script produces and is idempotent.

`apply_edits` is the inverse convention: edits are applied in source
coordinates simultaneously, so indices never need shifting by the
caller.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus import GOLD_DELETE, GOLD_INSERT, GoldEdit

OP_INSERT = "insert"
OP_DELETE = "delete"
OP_SUBSTITUTE = "substitute"
OPS = (OP_INSERT, OP_DELETE, OP_SUBSTITUTE)


@dataclass(frozen=True)
class Edit:
    op: str
    index: int
    token: int | None = None

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown edit op {self.op!r}")
        if self.index < 0:
            raise ValueError("edit index must be nonnegative")
        if (self.op == OP_DELETE) != (self.token is None):
            raise ValueError("delete edits carry no token; others must")


def apply_edits(source: Sequence, edits: Sequence[Edit]) -> list:
    """Apply a script in source coordinates.

    Inserts at the same gap keep their list order; a position may carry
    at most one delete or substitute. Raises ValueError on out-of-range
    indices or conflicting edits.
    """
    n = len(source)
    inserts: dict[int, list] = {}
    replace: dict[int, object] = {}
    deleted: set[int] = set()
    for e in edits:
        if e.op == OP_INSERT:
            if e.index > n:
                raise ValueError(f"insert index {e.index} out of range 0..{n}")
            inserts.setdefault(e.index, []).append(e.token)
            continue
        if e.index >= n:
            raise ValueError(f"{e.op} index {e.index} out of range 0..{n - 1}")
        if e.index in deleted or e.index in replace:
            raise ValueError(f"conflicting edits at position {e.index}")
        if e.op == OP_DELETE:
            deleted.add(e.index)
        else:
            replace[e.index] = e.token
    out: list = []
    for i in range(n + 1):
        out.extend(inserts.get(i, ()))
        if i == n:
            break
        if i in deleted:
            continue
        out.append(replace[i] if i in replace else source[i])
    return out


def align(a: Sequence, b: Sequence) -> list[Edit]:
    """Shortest edit script turning a into b (unit costs), normalized.

    Deterministic: ties in the dynamic program are broken by preferring
    to keep equal tokens, then substitute, then delete, then insert.
    """
    m, n = len(a), len(b)
    # cost[i][j]: edits to turn a[:i] into b[:j]
    cost = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        cost[i][0] = i
    for j in range(1, n + 1):
        cost[0][j] = j
    for i in range(1, m + 1):
        ai = a[i - 1]
        row, prev = cost[i], cost[i - 1]
        for j in range(1, n + 1):
            diag = prev[j - 1] + (ai != b[j - 1])
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)

    edits: list[Edit] = []
    i, j = m, n
    while i > 0 or j > 0:
        c = cost[i][j]
        if i > 0 and j > 0 and cost[i - 1][j - 1] + (a[i - 1] != b[j - 1]) == c:
            i -= 1
            j -= 1
            if a[i] != b[j]:
                edits.append(Edit(OP_SUBSTITUTE, i, b[j]))
        elif i > 0 and cost[i - 1][j] + 1 == c:
            i -= 1
            edits.append(Edit(OP_DELETE, i))
        else:
            j -= 1
            edits.append(Edit(OP_INSERT, i, b[j]))
    edits.reverse()
    return normalize_edits(a, edits)


def _run_end(a: Sequence, i: int) -> int:
    """Index of the last token in the run of a[i]-equal tokens at i."""
    r = i
    while r + 1 < len(a) and a[r + 1] == a[i]:
        r += 1
    return r


def normalize_edits(a: Sequence, edits: Sequence[Edit]) -> list[Edit]:
    """Move edits inside runs of identical tokens to the run tail.

    A delete of a[i] slides to the last position of its run; an insert
    of token t at a gap facing a t slides past the run of t's. A slide
    is skipped whenever another edit occupies the crossed span
    (including a second insert sharing the gap), which keeps the
    script's effect unchanged in every case. Output is ordered by
    (index, inserts first); same-gap inserts keep their relative order.
    Idempotent: single passes repeat until nothing slides.
    """
    edits = list(edits)
    while True:
        slid = _normalize_pass(a, edits)
        if slid == edits:
            return slid
        edits = slid


def _normalize_pass(a: Sequence, edits: list[Edit]) -> list[Edit]:
    sub_pos = {e.index for e in edits if e.op == OP_SUBSTITUTE}
    gap_count: dict[int, int] = {}
    for e in edits:
        if e.op == OP_INSERT:
            gap_count[e.index] = gap_count.get(e.index, 0) + 1

    # deletes move as run-clusters: the k deletes inside one run of equal
    # tokens go to the run's last k positions, unless a substitute sits in
    # the crossed span or an insert targets a gap strictly inside it
    moved: dict[int, int] = {}
    i = 0
    while i < len(a):
        r = _run_end(a, i)
        dels = sorted(e.index for e in edits if e.op == OP_DELETE and i <= e.index <= r)
        if dels:
            lo = dels[0]
            target = list(range(r - len(dels) + 1, r + 1))
            blocked = any(k in sub_pos for k in range(lo, r + 1)) or any(
                gap_count.get(k) for k in range(lo + 1, r + 1)
            )
            if not blocked and dels != target:
                moved.update(zip(dels, target))
        i = r + 1

    pos_used = {moved.get(e.index, e.index) for e in edits if e.op != OP_INSERT}
    out: list[Edit] = []
    for e in edits:
        if e.op == OP_DELETE and e.index in moved:
            e = Edit(OP_DELETE, moved[e.index])
        elif e.op == OP_INSERT and e.index < len(a) and a[e.index] == e.token:
            r = _run_end(a, e.index) + 1  # gap just past the run
            clear = (
                gap_count.get(e.index) == 1
                and all(k not in pos_used for k in range(e.index, r))
                and all(not gap_count.get(k) for k in range(e.index + 1, r + 1))
            )
            if clear:
                gap_count[e.index] -= 1
                gap_count[r] = gap_count.get(r, 0) + 1
                e = Edit(OP_INSERT, r, e.token)
        out.append(e)
    out.sort(key=lambda e: (e.index, e.op != OP_INSERT))
    return out


def gold_to_edits(golds: Sequence[GoldEdit]) -> list[Edit]:
    """Gold corrections (on an erroneous sentence) as a script."""
    out = []
    for g in golds:
        if g.kind == GOLD_INSERT:
            out.append(Edit(OP_INSERT, g.index, g.token))
        else:
            out.append(Edit(OP_DELETE, g.index))
    return out


def edits_to_gold(edits: Sequence[Edit]) -> list[GoldEdit]:
    """Script as gold corrections; substitutions have no gold form."""
    out = []
    for e in edits:
        if e.op == OP_SUBSTITUTE:
            raise ValueError("substitute edits have no gold-correction form")
        if e.op == OP_INSERT:
            out.append(GoldEdit(GOLD_INSERT, e.index, e.token))
        else:
            out.append(GoldEdit(GOLD_DELETE, e.index))
    return out
