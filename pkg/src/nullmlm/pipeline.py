"""End-to-end experiment: train, build evaluation sets, sweep, score.

One call to run_experiment produces everything the evaluation story
needs from scratch:

* a plain masked LM (the baselines' scorer and the fill oracle),
* the null-token model trained with all three fill kinds,
* an ablation of it trained without mask-and-generate fills,
* fresh test and dev splits for both error tasks,
* per-method thresholds swept on the dev split only,
* test metrics for every method, a correction score, and a speed
  benchmark of the two insertion scan modes.

Every stage is seeded, so two runs with the same config agree exactly.

By default both null models start from the masked LM's weights rather
than from scratch. Random initialization reliably stalls on the null
objective: about half the supervised slots show the original word at
its own position, so a fresh model can reach a shallow copy-plus-
constant optimum without ever using context, and stays there.
Inheriting a model that already predicts words from context sidesteps
that trap, and keeps the ablation comparable, since both variants
inherit the same weights.
"""

from __future__ import annotations

import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .baselines import (
    BASELINE_DIRECTIONS,
    BASELINE_INSERTED_MASK,
    BASELINE_NO_MASK,
    BASELINE_SUBSTITUTED_MASK,
    baseline_scores,
    positional_gap_scores,
)
from .corpus import (
    DELETION_TASK,
    INSERTION_TASK,
    GrammarConfig,
    build_eval_set,
    build_grammar,
    generate_corpus,
    save_eval_set,
)
from .corruption import CorruptionConfig
from .evaluate import (
    DIRECTION_ABOVE,
    DIRECTION_BELOW,
    Metrics,
    benchmark_insertion_modes,
    correction_metrics,
    default_grid,
    detection_metrics,
    gold_index_sets,
    insertion_speedup,
    sweep_thresholds,
    threshold_flags,
)
from .inference import (
    MODE_FAST,
    MODE_PER_GAP,
    correct_insertions,
    deletion_position_scores,
    insertion_gap_scores,
)
from .model import ModelConfig, make_oracle
from .trainer import TrainConfig, save_checkpoint, train
from .vocab import Vocab, build_vocab

METHOD_NULL = "null"
METHOD_NULL_FAST = "null-fast"
METHOD_NULL_NO_MAG = "null-no-mag"

MODEL_MLM = "mlm"
MODEL_NULL = "null"
MODEL_NO_MAG = "no-mag"


@dataclass(frozen=True)
class ExperimentConfig:
    grammar: GrammarConfig = GrammarConfig()
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    max_len: int = 128
    train_sentences: int = 12000
    batch_size: int = 64
    lr: float = 3e-3
    null_lr: float = 1e-3
    warmup_steps: int = 100
    mlm_steps: int = 1200
    null_steps: int = 2400
    mlm_seed: int = 101
    null_seed: int = 102
    null_warm_start: bool = True
    position_jitter: bool = True
    eval_sentences: int = 2000
    dev_sentences: int = 500
    eval_length_range: tuple[int, int] = (10, 50)
    eval_seed: int = 7
    include_no_mag: bool = True
    speed_sentences: int = 200
    speed_length: int = 50
    correction_top_k: int = 5

    def model_config(self, vocab_size: int, seed: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d_model=self.d_model,
            d_ff=self.d_ff,
            max_len=self.max_len,
            seed=seed,
        )

    def train_config(self, objective: str, steps: int, seed: int, use_mag: bool = True) -> TrainConfig:
        return TrainConfig(
            objective=objective,
            total_steps=steps,
            batch_size=self.batch_size,
            base_lr=self.lr if objective == "mlm" else self.null_lr,
            warmup_steps=self.warmup_steps,
            seed=seed,
            position_jitter=self.position_jitter,
            corruption=CorruptionConfig(mag_enabled=use_mag),
        )


@dataclass(frozen=True)
class MethodResult:
    task: str
    method: str
    model: str
    threshold: float
    dev_f1: float
    test: Metrics

    def as_dict(self) -> dict:
        return {
            "task": self.task, "method": self.method, "model": self.model,
            "threshold": self.threshold, "dev_f1": self.dev_f1,
            "test": self.test.as_dict(),
        }


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    vocab: Vocab
    checkpoints: dict
    states: dict
    losses: dict
    eval_sets: dict
    dev_sets: dict
    detection: dict  # task -> method -> MethodResult
    correction: Metrics
    benchmark: dict  # mode -> BenchmarkResult
    timings: dict = field(default_factory=dict)

    @property
    def speedup(self) -> float:
        return insertion_speedup(self.benchmark)

    def summary(self) -> dict:
        return {
            "detection": {
                task: {m: r.as_dict() for m, r in methods.items()}
                for task, methods in self.detection.items()
            },
            "correction": self.correction.as_dict(),
            "benchmark": {
                mode: {
                    "n_sentences": b.n_sentences, "n_sequences": b.n_sequences,
                    "n_tokens": b.n_tokens, "seconds": b.seconds,
                }
                for mode, b in self.benchmark.items()
            },
            "speedup": self.speedup,
            "final_losses": {
                name: float(np.mean([p.total for p in curve[-100:]]))
                for name, curve in self.losses.items()
            },
            "timings": {k: round(v, 2) for k, v in self.timings.items()},
        }


@contextmanager
def _stage(timings: dict, name: str, log: Callable[[str], None] | None):
    if log:
        log(f"[{name}] ...")
    t0 = time.perf_counter()
    yield
    timings[name] = time.perf_counter() - t0
    if log:
        log(f"[{name}] done in {timings[name]:.1f}s")


def _sweep_and_score(
    task: str,
    method: str,
    model_name: str,
    dev_scores,
    test_scores,
    dev_gold,
    test_gold,
    direction: str,
    dev_run_sentences=None,
    test_run_sentences=None,
    grid=None,
) -> MethodResult:
    grid = grid if grid is not None else default_grid(
        "null" if method.startswith("null") else method, task)
    sweep = sweep_thresholds(dev_scores, dev_gold, grid, direction, dev_run_sentences)
    best = sweep.best
    flags = threshold_flags(test_scores, best.threshold, direction, test_run_sentences)
    return MethodResult(task, method, model_name, best.threshold,
                        best.metrics.f1, detection_metrics(test_gold, flags))


def run_experiment(cfg: ExperimentConfig, log: Callable[[str], None] | None = None) -> ExperimentResult:
    timings: dict = {}

    vocab = build_vocab(cfg.grammar.vocab_size)
    grammar = build_grammar(cfg.grammar)
    with _stage(timings, "corpus", log):
        corpus = generate_corpus(cfg.grammar, cfg.train_sentences)

    losses = {}
    states = {}
    checkpoints = {}

    def train_one(name, objective, steps, seed, use_mag, oracle, init_state=None):
        tc = cfg.train_config(objective, steps, seed, use_mag=use_mag)
        mc = cfg.model_config(vocab.size, seed)
        with _stage(timings, f"train-{name}", log):
            out = train(corpus, vocab, tc, model_cfg=mc, oracle=oracle,
                        init_state=init_state)
        losses[name] = out.losses
        states[name] = out.state
        checkpoints[name] = out.checkpoint
        if log:
            tail = out.losses[-100:]
            log(f"[train-{name}] mean loss over last 100 steps: "
                f"{np.mean([p.total for p in tail]):.4f} "
                f"(sub {np.mean([p.substitution for p in tail]):.4f}, "
                f"ins {np.mean([p.insertion for p in tail]):.4f})")

    train_one(MODEL_MLM, "mlm", cfg.mlm_steps, cfg.mlm_seed, True, None)
    oracle = make_oracle(states[MODEL_MLM])
    base = states[MODEL_MLM] if cfg.null_warm_start else None
    train_one(MODEL_NULL, "null", cfg.null_steps, cfg.null_seed, True, oracle,
              init_state=base)
    if cfg.include_no_mag:
        train_one(MODEL_NO_MAG, "null", cfg.null_steps, cfg.null_seed, False, None,
                  init_state=base)

    # fresh sentences for both splits of both tasks, then error injection
    with _stage(timings, "eval-sets", log):
        seeds = [int(s) for s in np.random.SeedSequence(cfg.eval_seed).generate_state(9, dtype=np.uint32)]
        eval_sets, dev_sets = {}, {}
        for k, task in enumerate((INSERTION_TASK, DELETION_TASK)):
            test_sents = grammar.sample_corpus(cfg.eval_sentences, cfg.eval_length_range, seeds[4 * k])
            dev_sents = grammar.sample_corpus(cfg.dev_sentences, cfg.eval_length_range, seeds[4 * k + 1])
            eval_sets[task] = build_eval_set(test_sents, task, grammar, seeds[4 * k + 2])
            dev_sets[task] = build_eval_set(dev_sents, task, grammar, seeds[4 * k + 3])

    detection: dict = {INSERTION_TASK: {}, DELETION_TASK: {}}

    # insertion task -------------------------------------------------------
    task = INSERTION_TASK
    test_sents = [s for s, _ in eval_sets[task]]
    dev_sents = [s for s, _ in dev_sets[task]]
    test_gold = gold_index_sets(eval_sets[task], task)
    dev_gold = gold_index_sets(dev_sets[task], task)

    with _stage(timings, "scan-insertion-null", log):
        dev_pg = insertion_gap_scores(states[MODEL_NULL], dev_sents, mode=MODE_PER_GAP)
        test_pg = insertion_gap_scores(states[MODEL_NULL], test_sents, mode=MODE_PER_GAP)
        dev_fast = insertion_gap_scores(states[MODEL_NULL], dev_sents, mode=MODE_FAST)
        test_fast = insertion_gap_scores(states[MODEL_NULL], test_sents, mode=MODE_FAST)
    detection[task][METHOD_NULL] = _sweep_and_score(
        task, METHOD_NULL, MODEL_NULL, dev_pg, test_pg, dev_gold, test_gold, DIRECTION_BELOW)
    detection[task][METHOD_NULL_FAST] = _sweep_and_score(
        task, METHOD_NULL_FAST, MODEL_NULL, dev_fast, test_fast, dev_gold, test_gold, DIRECTION_BELOW)

    for method in (BASELINE_SUBSTITUTED_MASK, BASELINE_NO_MASK, BASELINE_INSERTED_MASK):
        with _stage(timings, f"scan-insertion-{method}", log):
            dev_sc = baseline_scores(states[MODEL_MLM], dev_sents, method)
            test_sc = baseline_scores(states[MODEL_MLM], test_sents, method)
        if method != BASELINE_INSERTED_MASK:
            # positional scores become gap evidence: the witness token
            # sits right after the hole
            dev_sc = positional_gap_scores(dev_sc)
            test_sc = positional_gap_scores(test_sc)
        detection[task][method] = _sweep_and_score(
            task, method, MODEL_MLM, dev_sc, test_sc, dev_gold, test_gold,
            BASELINE_DIRECTIONS[method])

    # correction on the main method's flagged gaps
    with _stage(timings, "correction", log):
        theta = detection[task][METHOD_NULL].threshold
        flags = threshold_flags(test_pg, theta, DIRECTION_BELOW)
        proposals = [
            correct_insertions(states[MODEL_NULL], s, f, top_k=cfg.correction_top_k) if f else []
            for s, f in zip(test_sents, flags)
        ]
        correction = correction_metrics(eval_sets[task], proposals)

    # deletion task --------------------------------------------------------
    task = DELETION_TASK
    test_sents = [s for s, _ in eval_sets[task]]
    dev_sents = [s for s, _ in dev_sets[task]]
    test_gold = gold_index_sets(eval_sets[task], task)
    dev_gold = gold_index_sets(dev_sets[task], task)

    null_models = [(METHOD_NULL, MODEL_NULL)]
    if cfg.include_no_mag:
        null_models.append((METHOD_NULL_NO_MAG, MODEL_NO_MAG))
    for method, model_name in null_models:
        with _stage(timings, f"scan-deletion-{method}", log):
            dev_sc = deletion_position_scores(states[model_name], dev_sents)
            test_sc = deletion_position_scores(states[model_name], test_sents)
        detection[task][method] = _sweep_and_score(
            task, method, model_name, dev_sc, test_sc, dev_gold, test_gold,
            DIRECTION_ABOVE, dev_run_sentences=dev_sents, test_run_sentences=test_sents)

    for method in (BASELINE_SUBSTITUTED_MASK, BASELINE_NO_MASK):
        with _stage(timings, f"scan-deletion-{method}", log):
            dev_sc = baseline_scores(states[MODEL_MLM], dev_sents, method)
            test_sc = baseline_scores(states[MODEL_MLM], test_sents, method)
        detection[task][method] = _sweep_and_score(
            task, method, MODEL_MLM, dev_sc, test_sc, dev_gold, test_gold,
            BASELINE_DIRECTIONS[method])

    # speed ----------------------------------------------------------------
    with _stage(timings, "benchmark", log):
        speed_sents = grammar.sample_corpus(
            cfg.speed_sentences, (cfg.speed_length, cfg.speed_length), seeds[8])
        benchmark = benchmark_insertion_modes(states[MODEL_NULL], speed_sents)

    return ExperimentResult(
        config=cfg, vocab=vocab, checkpoints=checkpoints, states=states,
        losses=losses, eval_sets=eval_sets, dev_sets=dev_sets,
        detection=detection, correction=correction, benchmark=benchmark,
        timings=timings,
    )


def save_artifacts(result: ExperimentResult, out_dir: str) -> None:
    """Checkpoints, evaluation files, and a JSON summary under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    for name, ckpt in result.checkpoints.items():
        save_checkpoint(ckpt, os.path.join(out_dir, f"{name}.ckpt"))
    for task, records in result.eval_sets.items():
        save_eval_set(os.path.join(out_dir, f"eval-{task}.jsonl"), records, result.vocab)
    for task, records in result.dev_sets.items():
        save_eval_set(os.path.join(out_dir, f"dev-{task}.jsonl"), records, result.vocab)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(result.summary(), f, indent=2)
        f.write("\n")
