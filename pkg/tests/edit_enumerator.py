"""Brute-force oracle: every minimal edit script between two sequences.

Written independently of the package's alignment module so the two can
be checked against each other. Scripts use the same conventions as
nullmlm.align: indices refer to the source sequence, inserts at gap i
land before source position i, and inserts sharing a gap apply in list
order (left to right).
"""

from functools import lru_cache


def suffix_distances(a, b):
    """E[i][j] = edit distance from a[i:] to b[j:] with unit costs."""
    m, n = len(a), len(b)
    E = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        E[i][n] = m - i
    for j in range(n + 1):
        E[m][j] = n - j
    for i in range(m - 1, -1, -1):
        for j in range(n - 1, -1, -1):
            E[i][j] = min(
                E[i + 1][j + 1] + (a[i] != b[j]),
                E[i + 1][j] + 1,
                E[i][j + 1] + 1,
            )
    return E


def canonical(script):
    """Sort by (index, inserts first), keeping same-gap insert order."""
    return tuple(sorted(script, key=lambda e: (e[1], e[0] != "insert")))


def all_minimal_scripts(a, b):
    """The set of all unit-cost-minimal scripts turning a into b.

    Each script is a canonically ordered tuple of ("insert", i, token),
    ("delete", i, None), or ("substitute", i, token) triples.
    """
    a, b = tuple(a), tuple(b)
    m, n = len(a), len(b)
    E = suffix_distances(a, b)

    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == m and j == n:
            return ((),)
        out = []
        if i < m and j < n and E[i][j] == E[i + 1][j + 1] + (a[i] != b[j]):
            step = () if a[i] == b[j] else (("substitute", i, b[j]),)
            out.extend(step + tail for tail in rec(i + 1, j + 1))
        if i < m and E[i][j] == E[i + 1][j] + 1:
            out.extend((("delete", i, None),) + tail for tail in rec(i + 1, j))
        if j < n and E[i][j] == E[i][j + 1] + 1:
            out.extend((("insert", i, b[j]),) + tail for tail in rec(i, j + 1))
        return tuple(out)

    return {canonical(s) for s in rec(0, 0)}


def min_distance(a, b) -> int:
    return suffix_distances(tuple(a), tuple(b))[0][0]
