"""Symbol vocabulary with reserved control tokens.

Ids 0..3 are fixed: pad, unknown, mask, and the null class. The null id
is a legal prediction target (meaning "no word belongs here") but never
appears in corpus text. Content symbols occupy ids 4 and up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

PAD_TOKEN = "[pad]"
UNK_TOKEN = "[unk]"
MASK_TOKEN = "[mask]"
NULL_TOKEN = "[null]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, MASK_TOKEN, NULL_TOKEN)

PAD_ID = 0
UNK_ID = 1
MASK_ID = 2
NULL_ID = 3
N_SPECIALS = len(SPECIAL_TOKENS)


@dataclass(frozen=True)
class Vocab:
    """Bidirectional symbol/id map over a fixed symbol tuple."""

    symbols: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.symbols) < N_SPECIALS + 2:
            raise ValueError("vocabulary needs the 4 control tokens plus at least 2 content symbols")
        if tuple(self.symbols[:N_SPECIALS]) != SPECIAL_TOKENS:
            raise ValueError(f"ids 0..3 must be {SPECIAL_TOKENS}")
        index = {s: i for i, s in enumerate(self.symbols)}
        if len(index) != len(self.symbols):
            raise ValueError("duplicate symbol in vocabulary")
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def n_content(self) -> int:
        return len(self.symbols) - N_SPECIALS

    @property
    def content_ids(self) -> range:
        return range(N_SPECIALS, len(self.symbols))

    def is_special(self, token_id: int) -> bool:
        return 0 <= token_id < N_SPECIALS

    def id_of(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise ValueError(f"unknown symbol {symbol!r}") from None

    def symbol_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.symbols):
            raise ValueError(f"token id {token_id} out of range for vocabulary of {len(self.symbols)}")
        return self.symbols[token_id]

    def encode(self, symbols: list[str]) -> list[int]:
        return [self.id_of(s) for s in symbols]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.symbol_of(i) for i in ids]

    def to_dict(self) -> dict:
        return {"symbols": list(self.symbols)}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(tuple(d["symbols"]))


def build_vocab(n_content_symbols: int) -> Vocab:
    """Vocabulary of `n_content_symbols` generated content symbols plus
    the 4 control tokens. Deterministic: symbol i is named w{i:03d}."""
    if n_content_symbols < 2:
        raise ValueError("need at least 2 content symbols")
    content = tuple(f"w{i:03d}" for i in range(n_content_symbols))
    return Vocab(SPECIAL_TOKENS + content)
