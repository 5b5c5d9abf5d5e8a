"""Training loop, optimizer, and checkpoint serialization.

Training is deterministic in TrainConfig.seed: per-step batch and
corruption seeds are pre-generated from one seed sequence, so the same
config and corpus always reproduce the same parameters, regardless of
how oracle work is batched internally.

Checkpoints are a small binary container (magic "NULM"): a canonical
JSON header carrying the model config, vocabulary, objective, step
count, and a digest of the training config, followed by the named
float32 tensors in sorted order. Parameters are stored exactly as
trained, so save, load, save again is byte-identical and a reloaded
model's forward pass is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corruption import (
    CorruptionConfig,
    PredictionOracle,
    corrupt_batch,
    max_corrupted_length,
)
from .model import (
    LossParts,
    ModelConfig,
    ModelState,
    OBJECTIVES,
    init_params,
    loss_and_grads,
)
from .vocab import Vocab

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"NULM"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "null"
    total_steps: int = 4000
    batch_size: int = 64
    base_lr: float = 1e-4
    warmup_steps: int = 400
    clip_norm: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"
    log_every: int = 100
    # shift each training row to a random position window, so every
    # position embedding gets trained even on a short-sentence corpus
    position_jitter: bool = True
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.total_steps < 0:
            raise ValueError("total_steps must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.base_lr <= 0 or self.clip_norm <= 0:
            raise ValueError("base_lr and clip_norm must be positive")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("warmup_steps must be in [0, total_steps]")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def effective_corruption(self) -> CorruptionConfig:
        """The corruption actually applied: the plain masked objective
        always trains on the 80/10/10 baseline scheme."""
        return replace(self.corruption, baseline_mode=(self.objective == "mlm"))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "objective", "total_steps", "batch_size", "base_lr", "warmup_steps",
            "clip_norm", "adam_beta1", "adam_beta2", "adam_eps",
            "seed", "dtype", "log_every", "position_jitter")}
        corr = vars(self.corruption).copy()
        corr["ins_fill_mix"] = list(corr["ins_fill_mix"])
        d["corruption"] = corr
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        corr = d.pop("corruption", {})
        return cls(corruption=CorruptionConfig(**corr), **d)


def train_config_digest(cfg: TrainConfig) -> str:
    """Stable sha256 over the canonical-JSON form of the config."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to cfg.base_lr, then constant. step is 1-based."""
    if cfg.warmup_steps <= 0:
        return cfg.base_lr
    return cfg.base_lr * min(1.0, step / cfg.warmup_steps)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def init(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros(p.shape, dtype=np.float64) for k, p in params.items()},
            v={k: np.zeros(p.shape, dtype=np.float64) for k, p in params.items()},
        )


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients in place so the joint L2 norm is at most
    max_norm. Returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        g64 = np.asarray(g, dtype=np.float64)
        total += float((g64 * g64).sum())
    norm = total ** 0.5
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def adam_step(state: ModelState, grads: dict, opt: AdamState, lr: float, cfg: TrainConfig):
    """One Adam update. Moments are float64; parameters stay float32."""
    opt.t += 1
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    bc1 = 1.0 - b1 ** opt.t
    bc2 = 1.0 - b2 ** opt.t
    for k, p in state.params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        opt.m[k] = b1 * opt.m[k] + (1.0 - b1) * g
        opt.v[k] = b2 * opt.v[k] + (1.0 - b2) * g * g
        mhat = opt.m[k] / bc1
        vhat = opt.v[k] / bc2
        new = p.astype(np.float64) - lr * mhat / (np.sqrt(vhat) + eps)
        state.params[k] = new.astype(np.float32)


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    vocab: Vocab
    objective: str
    step: int
    train_digest: str


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    state: ModelState
    losses: list  # one LossParts per step


def state_from_checkpoint(ckpt: Checkpoint) -> ModelState:
    return ModelState(ckpt.config, {k: v.copy() for k, v in ckpt.params.items()})


def train(
    corpus: Sequence[Sequence[int]],
    vocab: Vocab,
    cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
    oracle: PredictionOracle | None = None,
    callback: Callable[[int, LossParts], None] | None = None,
    init_state: ModelState | None = None,
) -> TrainResult:
    """Train a model on a clean corpus under cfg.objective.

    The oracle (a stronger or earlier model's prediction function) is
    only consulted for mask-and-generate insertion fills; pass None for
    the plain masked objective or when those fills are disabled.

    init_state warm-starts from an existing model (copied, the original
    stays frozen) instead of fresh random parameters.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    if init_state is not None:
        # seed only matters for fresh initialization, so ignore it here
        if model_cfg is not None and replace(init_state.config, seed=model_cfg.seed) != model_cfg:
            raise ValueError("init_state was built for a different model config")
        model_cfg = init_state.config
    elif model_cfg is None:
        model_cfg = ModelConfig(vocab_size=vocab.size, seed=cfg.seed)
    if model_cfg.vocab_size != vocab.size:
        raise ValueError("model vocab_size does not match the vocabulary")
    corr_cfg = cfg.effective_corruption()
    max_sent = max(len(s) for s in corpus)
    if max_corrupted_length(max_sent, corr_cfg) > model_cfg.max_len:
        raise ValueError(
            f"corpus has a {max_sent}-word sentence; worst-case corruption "
            f"reaches {max_corrupted_length(max_sent, corr_cfg)} tokens, "
            f"over max_len {model_cfg.max_len}"
        )

    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    if init_state is not None:
        state = ModelState(model_cfg, {k: v.copy() for k, v in init_state.params.items()})
    else:
        state = init_params(model_cfg)
    opt = AdamState.init(state.params)
    root = np.random.SeedSequence(cfg.seed)
    step_seeds = root.generate_state(2 * cfg.total_steps, dtype=np.uint64)

    losses: list[LossParts] = []
    for step in range(1, cfg.total_steps + 1):
        pick_rng = np.random.default_rng(int(step_seeds[2 * (step - 1)]))
        idx = pick_rng.integers(len(corpus), size=cfg.batch_size)
        batch = [corpus[int(i)] for i in idx]
        records = corrupt_batch(
            batch, vocab, corr_cfg,
            seed=int(step_seeds[2 * (step - 1) + 1]), oracle=oracle,
        )
        offsets = None
        if cfg.position_jitter:
            room = model_cfg.max_len - max(len(r.corrupted) for r in records)
            if room > 0:
                offsets = pick_rng.integers(0, room + 1, size=len(records))
        parts, grads = loss_and_grads(state, records, cfg.objective,
                                      dtype=dtype, pos_offsets=offsets)
        clip_global_norm(grads, cfg.clip_norm)
        adam_step(state, grads, opt, lr_at(step, cfg), cfg)
        losses.append(parts)
        if callback is not None:
            callback(step, parts)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d loss %.4f (sub %.4f ins %.4f)",
                     step, parts.total, parts.substitution, parts.insertion)

    ckpt = Checkpoint(
        config=model_cfg,
        params={k: v.copy() for k, v in state.params.items()},
        vocab=vocab,
        objective=cfg.objective,
        step=cfg.total_steps,
        train_digest=train_config_digest(cfg),
    )
    return TrainResult(ckpt, state, losses)


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = _canonical_json({
        "model": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.to_dict(),
        "objective": ckpt.objective,
        "step": ckpt.step,
        "train_digest": ckpt.train_digest,
    })
    names = sorted(ckpt.params)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            f.write(arr.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return b


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such checkpoint file: {path}")
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a model checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", _read_exact(f, 8, "header length"))
        try:
            header = json.loads(_read_exact(f, hlen, "header"))
            config = ModelConfig.from_dict(header["model"])
            vocab = Vocab.from_dict(header["vocab"])
            objective = header["objective"]
            step = int(header["step"])
            digest = header["train_digest"]
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
            raise CheckpointError(f"malformed checkpoint header: {e}") from e
        (n_tensors,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        params = {}
        for _ in range(n_tensors):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
            name = _read_exact(f, nlen, "tensor name").decode()
            (ndim,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
            shape = tuple(
                struct.unpack("<Q", _read_exact(f, 8, "dimension"))[0]
                for _ in range(ndim)
            )
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = _read_exact(f, 4 * count, f"tensor {name}")
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
        trailing = f.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after last tensor")
    return Checkpoint(config, params, vocab, objective, step, digest)
