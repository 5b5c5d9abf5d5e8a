"""Transformer encoder with a full-vocabulary head and exact gradients.

The network is a standard pre-norm encoder: learned token and position
embeddings, per-layer multi-head self-attention and GELU feed-forward
blocks with residual connections, a final layer norm, and an untied
linear output head over the whole vocabulary (content symbols plus the
control tokens, so "null" is an ordinary prediction class).

Both the forward pass and backpropagation are written out by hand in
numpy. Parameters are stored as float32 (the checkpoint payload dtype);
matmuls run in a caller-chosen dtype, float32 by default and float64
when gradients or losses are being verified against finite differences.
Probabilities are always accumulated in float64 so each softmax row
sums to 1 within 1e-12 and every entry is strictly positive.

Two training objectives share one loss routine:

* "mlm": cross-entropy at substituted positions only (the plain masked
  language model baseline). Records carrying insertion targets are
  rejected.
* "null": the combined objective, cross-entropy at substituted
  positions plus cross-entropy pushing inserted positions onto the
  null class.

The loss is the per-sequence sum of negative log probabilities at
target positions, averaged over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .corruption import CorruptionRecord
from .vocab import PAD_ID

OBJECTIVE_MLM = "mlm"
OBJECTIVE_NULL = "null"
OBJECTIVES = (OBJECTIVE_MLM, OBJECTIVE_NULL)

_LN_EPS = 1e-5
_GELU_C0 = math.sqrt(2.0 / math.pi)
_GELU_C1 = 0.044715


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    max_len: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the 4 control ids plus content")
        if min(self.n_layers, self.n_heads, self.d_model, self.d_ff, self.max_len) < 1:
            raise ValueError("all size fields must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "n_layers": self.n_layers,
            "n_heads": self.n_heads, "d_model": self.d_model,
            "d_ff": self.d_ff, "max_len": self.max_len, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelState:
    config: ModelConfig
    params: dict  # name -> np.ndarray


@dataclass(frozen=True)
class ForwardOutput:
    hidden: np.ndarray  # (B, L, D) final-norm representations
    logits: np.ndarray  # (B, L, V)
    probs: np.ndarray   # (B, L, V) float64, rows sum to 1


@dataclass(frozen=True)
class LossParts:
    total: float
    substitution: float
    insertion: float


def param_shapes(cfg: ModelConfig) -> dict:
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes = {"tok_emb": (v, d), "pos_emb": (cfg.max_len, d)}
    for i in range(cfg.n_layers):
        p = f"l{i}."
        shapes[p + "ln1.gain"] = (d,)
        shapes[p + "ln1.bias"] = (d,)
        for m in ("wq", "wk", "wv", "wo"):
            shapes[p + "attn." + m] = (d, d)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[p + "attn." + b] = (d,)
        shapes[p + "ln2.gain"] = (d,)
        shapes[p + "ln2.bias"] = (d,)
        shapes[p + "ff.w1"] = (d, f)
        shapes[p + "ff.b1"] = (f,)
        shapes[p + "ff.w2"] = (f, d)
        shapes[p + "ff.b2"] = (d,)
    shapes["final_ln.gain"] = (d,)
    shapes["final_ln.bias"] = (d,)
    shapes["head.w"] = (d, v)
    shapes["head.b"] = (v,)
    return shapes


def init_params(cfg: ModelConfig) -> ModelState:
    """Weights and embeddings ~ N(0, 0.02^2); biases zero; norm gains one.

    Deterministic in cfg.seed.
    """
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith((".bias", ".b", "b1", "b2", "bq", "bk", "bv", "bo")):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            params[name] = rng.normal(0.0, 0.02, size=shape).astype(np.float32)
    return ModelState(cfg, params)


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length id sequences into (ids, mask) arrays.

    Padding uses the pad id; mask is True at real positions.
    """
    if not seqs:
        raise ValueError("empty batch")
    max_len = max(len(s) for s in seqs)
    ids = np.full((len(seqs), max_len), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), max_len), dtype=bool)
    for b, s in enumerate(seqs):
        ids[b, : len(s)] = s
        mask[b, : len(s)] = True
    return ids, mask


def _layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * istd
    return xhat * gain + bias, xhat, istd


def _layer_norm_backward(dy, xhat, istd, gain):
    dg = (dy * xhat).sum(axis=(0, 1))
    db = dy.sum(axis=(0, 1))
    dxhat = dy * gain
    dx = istd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(z):
    # z**3 spelled as multiplies: the pow ufunc is an order of magnitude
    # slower than three multiplies on float32
    z2 = z * z
    t = np.tanh(_GELU_C0 * (z + _GELU_C1 * z2 * z))
    return 0.5 * z * (1.0 + t), t


def _gelu_backward(dz_out, z, t):
    return dz_out * (0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * _GELU_C0 * (1.0 + 3.0 * _GELU_C1 * (z * z)))


def _split_heads(x, n_heads):
    b, l, d = x.shape
    return x.reshape(b, l, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, l, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dk)


def _forward_full(state: ModelState, ids: np.ndarray, pad_mask: np.ndarray | None, dtype, need_cache: bool, pos_offsets: np.ndarray | None = None):
    cfg = state.config
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ValueError("ids must be a (batch, length) array")
    b, l = ids.shape
    if l > cfg.max_len:
        raise ValueError(f"sequence length {l} exceeds max_len {cfg.max_len}")
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= cfg.vocab_size:
        raise ValueError("token id out of range for model vocabulary")
    if pad_mask is None:
        pad_mask = np.ones((b, l), dtype=bool)
    pad_mask = np.asarray(pad_mask, dtype=bool)
    if pad_mask.shape != (b, l):
        raise ValueError("pad_mask shape must match ids")
    if pos_offsets is None:
        pos_offsets = np.zeros(b, dtype=np.int64)
    pos_offsets = np.asarray(pos_offsets, dtype=np.int64)
    if pos_offsets.shape != (b,):
        raise ValueError("pos_offsets must be one offset per batch row")
    if pos_offsets.min(initial=0) < 0 or int(pos_offsets.max(initial=0)) + l > cfg.max_len:
        raise ValueError("position offsets push a row past max_len")
    pos_idx = pos_offsets[:, None] + np.arange(l)[None, :]

    P = {k: v.astype(dtype, copy=False) for k, v in state.params.items()}
    h = cfg.n_heads
    dk = cfg.d_model // h
    scale = dtype(1.0) / np.sqrt(np.asarray(dk, dtype=dtype))

    x = P["tok_emb"][ids] + P["pos_emb"][pos_idx]
    # masked keys are excluded from every attention row
    neg = np.asarray(-np.inf, dtype=dtype)
    key_bias = np.where(pad_mask[:, None, None, :], dtype(0.0), neg)

    cache = {"ids": ids, "pad_mask": pad_mask, "pos_idx": pos_idx, "x0": x, "layers": []} if need_cache else None
    for i in range(cfg.n_layers):
        p = f"l{i}."
        h1, xhat1, istd1 = _layer_norm(x, P[p + "ln1.gain"], P[p + "ln1.bias"])
        q = _split_heads(h1 @ P[p + "attn.wq"] + P[p + "attn.bq"], h)
        k = _split_heads(h1 @ P[p + "attn.wk"] + P[p + "attn.bk"], h)
        v = _split_heads(h1 @ P[p + "attn.wv"] + P[p + "attn.bv"], h)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale + key_bias
        scores -= scores.max(axis=-1, keepdims=True)
        att = np.exp(scores)
        att /= att.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(att @ v)
        attn_out = ctx @ P[p + "attn.wo"] + P[p + "attn.bo"]
        x2 = x + attn_out
        h2, xhat2, istd2 = _layer_norm(x2, P[p + "ln2.gain"], P[p + "ln2.bias"])
        z = h2 @ P[p + "ff.w1"] + P[p + "ff.b1"]
        fz, gelu_t = _gelu(z)
        x3 = x2 + fz @ P[p + "ff.w2"] + P[p + "ff.b2"]
        if need_cache:
            cache["layers"].append({
                "x_in": x, "h1": h1, "xhat1": xhat1, "istd1": istd1,
                "q": q, "k": k, "v": v, "att": att, "ctx": ctx,
                "x2": x2, "h2": h2, "xhat2": xhat2, "istd2": istd2,
                "z": z, "gelu_t": gelu_t, "fz": fz,
            })
        x = x3

    hidden, xhat_f, istd_f = _layer_norm(x, P["final_ln.gain"], P["final_ln.bias"])
    logits = hidden @ P["head.w"] + P["head.b"]
    # the training path derives probabilities from its own log-softmax
    probs = None if need_cache else softmax64(logits)
    if need_cache:
        cache["x_final"] = x
        cache["xhat_f"] = xhat_f
        cache["istd_f"] = istd_f
        cache["hidden"] = hidden
        cache["P"] = P
        cache["scale"] = scale
    return ForwardOutput(hidden, logits, probs), cache


def forward(state: ModelState, ids: np.ndarray, pad_mask: np.ndarray | None = None, dtype=np.float32, pos_offsets: np.ndarray | None = None) -> ForwardOutput:
    """Run the encoder over a padded id batch.

    Deterministic; padded positions never contribute to attention, so
    each sequence's outputs are independent of its batch neighbors.
    pos_offsets shifts each row's position indices (default zero, the
    inference convention).
    """
    out, _ = _forward_full(state, ids, pad_mask, dtype, need_cache=False, pos_offsets=pos_offsets)
    return out


def mlm_probabilities(state: ModelState, sentence: Sequence[int], dtype=np.float32) -> np.ndarray:
    """Per-position probability rows for a single sentence, shape (n, V)."""
    if len(sentence) == 0:
        raise ValueError("empty sentence")
    out = forward(state, np.asarray([sentence]), None, dtype=dtype)
    return out.probs[0]


def softmax64(logits: np.ndarray) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax64(logits: np.ndarray) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    m = x.max(axis=-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def _backward(state: ModelState, cache: dict, dlogits: np.ndarray) -> dict:
    cfg = state.config
    P = cache["P"]
    grads = {}
    hidden = cache["hidden"]
    b, l, d = hidden.shape

    grads["head.w"] = hidden.reshape(-1, d).T @ dlogits.reshape(-1, cfg.vocab_size)
    grads["head.b"] = dlogits.sum(axis=(0, 1))
    dhidden = dlogits @ P["head.w"].T
    dx, dg, db = _layer_norm_backward(dhidden, cache["xhat_f"], cache["istd_f"], P["final_ln.gain"])
    grads["final_ln.gain"] = dg
    grads["final_ln.bias"] = db

    for i in reversed(range(cfg.n_layers)):
        p = f"l{i}."
        c = cache["layers"][i]
        # feed-forward sublayer
        dffo = dx
        grads[p + "ff.w2"] = c["fz"].reshape(-1, cfg.d_ff).T @ dffo.reshape(-1, d)
        grads[p + "ff.b2"] = dffo.sum(axis=(0, 1))
        dfz = dffo @ P[p + "ff.w2"].T
        dz = _gelu_backward(dfz, c["z"], c["gelu_t"])
        grads[p + "ff.w1"] = c["h2"].reshape(-1, d).T @ dz.reshape(-1, cfg.d_ff)
        grads[p + "ff.b1"] = dz.sum(axis=(0, 1))
        dh2 = dz @ P[p + "ff.w1"].T
        dx2_ln, dg2, db2 = _layer_norm_backward(dh2, c["xhat2"], c["istd2"], P[p + "ln2.gain"])
        grads[p + "ln2.gain"] = dg2
        grads[p + "ln2.bias"] = db2
        dx2 = dx + dx2_ln

        # attention sublayer
        dattn = dx2
        grads[p + "attn.wo"] = c["ctx"].reshape(-1, d).T @ dattn.reshape(-1, d)
        grads[p + "attn.bo"] = dattn.sum(axis=(0, 1))
        dctx = _split_heads(dattn @ P[p + "attn.wo"].T, cfg.n_heads)
        datt = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = c["att"].transpose(0, 1, 3, 2) @ dctx
        dscores = c["att"] * (datt - (datt * c["att"]).sum(axis=-1, keepdims=True))
        dq = (dscores @ c["k"]) * cache["scale"]
        dk = (dscores.transpose(0, 1, 3, 2) @ c["q"]) * cache["scale"]
        dq_m, dk_m, dv_m = (_merge_heads(a) for a in (dq, dk, dv))
        grads[p + "attn.wq"] = c["h1"].reshape(-1, d).T @ dq_m.reshape(-1, d)
        grads[p + "attn.wk"] = c["h1"].reshape(-1, d).T @ dk_m.reshape(-1, d)
        grads[p + "attn.wv"] = c["h1"].reshape(-1, d).T @ dv_m.reshape(-1, d)
        grads[p + "attn.bq"] = dq_m.sum(axis=(0, 1))
        grads[p + "attn.bk"] = dk_m.sum(axis=(0, 1))
        grads[p + "attn.bv"] = dv_m.sum(axis=(0, 1))
        dh1 = dq_m @ P[p + "attn.wq"].T + dk_m @ P[p + "attn.wk"].T + dv_m @ P[p + "attn.wv"].T
        dx_ln, dg1, db1 = _layer_norm_backward(dh1, c["xhat1"], c["istd1"], P[p + "ln1.gain"])
        grads[p + "ln1.gain"] = dg1
        grads[p + "ln1.bias"] = db1
        dx = dx2 + dx_ln

    # embeddings
    ids = cache["ids"]
    dtok = np.zeros_like(P["tok_emb"])
    np.add.at(dtok, ids.reshape(-1), dx.reshape(-1, d))
    grads["tok_emb"] = dtok
    dpos = np.zeros_like(P["pos_emb"])
    np.add.at(dpos, cache["pos_idx"].reshape(-1), dx.reshape(-1, d))
    grads["pos_emb"] = dpos
    return grads


def loss_and_grads(
    state: ModelState,
    records: Sequence[CorruptionRecord],
    objective: str,
    dtype=np.float32,
    pos_offsets: np.ndarray | None = None,
) -> tuple[LossParts, dict]:
    """Objective loss over a batch of corruption records, with exact
    analytic gradients for every parameter.

    Loss is the sum of negative log probabilities at each record's
    target positions, averaged over records. Under "mlm" only
    substitution targets are legal; a record carrying insertion targets
    is rejected.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    if not records:
        raise ValueError("empty batch")
    if objective == OBJECTIVE_MLM:
        for r in records:
            if r.ins_indices:
                raise ValueError("mlm objective cannot train on insertion (null) targets")

    ids, pad_mask = pad_batch([r.corrupted for r in records])
    out, cache = _forward_full(state, ids, pad_mask, dtype, need_cache=True, pos_offsets=pos_offsets)
    logp = log_softmax64(out.logits)
    probs = np.exp(logp)

    n = len(records)
    dlogits = np.zeros(out.logits.shape, dtype=np.float64)
    loss_sub = 0.0
    loss_ins = 0.0
    for b, r in enumerate(records):
        ins = set(r.ins_indices)
        for i, t in r.targets.items():
            if i in ins:
                loss_ins -= logp[b, i, t]
            else:
                loss_sub -= logp[b, i, t]
            dlogits[b, i, :] += probs[b, i, :]
            dlogits[b, i, t] -= 1.0
    loss_sub /= n
    loss_ins /= n
    dlogits /= n

    grads = _backward(state, cache, dlogits.astype(dtype))
    return LossParts(loss_sub + loss_ins, loss_sub, loss_ins), grads


def batched_probs(
    state: ModelState,
    seqs: Sequence[Sequence[int]],
    dtype=np.float32,
    max_tokens: int = 16384,
) -> Iterable[np.ndarray]:
    """Yield one (len, V) float64 probability array per input sequence,
    batching internally under a padded-token budget."""
    chunk: list = []
    budget_len = 0
    for s in seqs:
        new_len = max(budget_len, len(s))
        if chunk and new_len * (len(chunk) + 1) > max_tokens:
            yield from _probs_chunk(state, chunk, dtype)
            chunk, budget_len = [], 0
        chunk.append(s)
        budget_len = max(budget_len, len(s))
    if chunk:
        yield from _probs_chunk(state, chunk, dtype)


def _probs_chunk(state, chunk, dtype):
    ids, mask = pad_batch(chunk)
    probs = forward(state, ids, mask, dtype=dtype).probs
    for b, s in enumerate(chunk):
        yield probs[b, : len(s)]


def make_oracle(state: ModelState, dtype=np.float32) -> Callable:
    """Adapt a model into the prediction-oracle callable used by the
    corruption pipeline: list of sentences -> list of (len, V) rows."""
    def oracle(seqs: Sequence[Sequence[int]]) -> list[np.ndarray]:
        return list(batched_probs(state, seqs, dtype=dtype))
    return oracle
