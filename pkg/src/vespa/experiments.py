"""Desk-scale experiment recipes: gated vs single-head, transfer, specialization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .ablation import evaluate_model
from .config import ModelSection
from .metrics import MetricsReport
from .model import ModelParams, init_params
from .synthdata import Dataset, GenConfig, generate, split
from .training import TrainConfig, TrainResult, fit, transfer_train

log = logging.getLogger(__name__)

BENCHMARK_EPOCHS = 30
SPLIT_RATIOS = (0.7, 0.1, 0.2)


@dataclass
class Benchmark:
    train: Dataset
    val: Dataset
    test: Dataset
    gen: GenConfig


def benchmark_data(gen: GenConfig, split_seed: int | None = None) -> Benchmark:
    data, _ = generate(gen)
    tr, va, te = split(data, SPLIT_RATIOS, gen.seed if split_seed is None else split_seed)
    return Benchmark(tr, va, te, gen)


def train_model(train_set: Dataset, gated: bool, seed: int, epochs: int = BENCHMARK_EPOCHS, model: ModelSection | None = None, **train_kw) -> TrainResult:
    model = model or ModelSection()
    cfg = replace(model, gated=gated).build(train_set.feature_dim, train_set.attribute_count, train_set.view_count)
    params = init_params(cfg, seed)
    return fit(params, train_set, TrainConfig(epochs=epochs, seed=seed, **train_kw))


@dataclass
class ComparisonRow:
    seed: int
    coupling: float
    gated: MetricsReport
    baseline: MetricsReport
    gated_params: ModelParams
    baseline_params: ModelParams
    test: Dataset

    @property
    def mA_gap(self) -> float:
        return 100 * (self.gated.mA - self.baseline.mA)

    @property
    def f1_gap(self) -> float:
        return 100 * (self.gated.example_f1 - self.baseline.example_f1)


def compare_gated_baseline(coupling: float, seeds=(0, 1, 2), epochs: int = BENCHMARK_EPOCHS, **gen_kw) -> list[ComparisonRow]:
    """Train the gated model and the architecture-matched single head per seed."""
    rows = []
    for s in seeds:
        bench = benchmark_data(GenConfig(seed=s, coupling=coupling, **gen_kw))
        gated = train_model(bench.train, True, s, epochs)
        base = train_model(bench.train, False, s, epochs)
        g_rep, _ = evaluate_model(gated.params, bench.test)
        b_rep, _ = evaluate_model(base.params, bench.test)
        row = ComparisonRow(s, coupling, g_rep, b_rep, gated.params, base.params, bench.test)
        log.info("coupling=%s seed=%d gated mA=%.4f F1=%.4f baseline mA=%.4f F1=%.4f",
                 coupling, s, g_rep.mA, g_rep.example_f1, b_rep.mA, b_rep.example_f1)
        rows.append(row)
    return rows


@dataclass
class TransferResult:
    view_accuracy: np.ndarray  # per view, against the hidden true views
    transferred: MetricsReport
    baseline: MetricsReport
    view_checksum_before: str
    view_checksum_after: str
    expert_update_norm: float

    @property
    def mA_gap(self) -> float:
        return 100 * (self.transferred.mA - self.baseline.mA)


def transfer_target(seed: int) -> GenConfig:
    """Same view geometry as the source benchmark, new samples and a new attribute task."""
    return GenConfig(seed=seed + 1000, world_seed=seed, attribute_seed=seed + 1000)


def transfer_experiment(seed: int = 0, epochs: int = BENCHMARK_EPOCHS, source: ModelParams | None = None) -> TransferResult:
    """Pretrain on view-labeled data, then fine-tune on a view-less dataset.

    The view branch is frozen (learning rate 0) during fine-tuning.  The
    target's true views are hidden from training and used only to score the
    transferred gate.
    """
    if source is None:
        bench = benchmark_data(GenConfig(seed=seed))
        source = train_model(bench.train, True, seed, epochs).params
    target = benchmark_data(transfer_target(seed))
    hidden_train = target.train.without_views()

    params = source.copy()
    before = params.copy()
    result = transfer_train(params, hidden_train, TrainConfig(epochs=epochs, seed=seed, view_branch_lr=0.0))
    baseline = train_model(hidden_train, False, seed, epochs)

    t_rep, batch = evaluate_model(result.params, target.test)
    b_rep, _ = evaluate_model(baseline.params, target.test)
    diff = [result.params.arrays[k] - before.arrays[k] for k in params.arrays if k.startswith("expert")]
    return TransferResult(
        view_accuracy=t_rep.per_view_accuracy,
        transferred=t_rep,
        baseline=b_rep,
        view_checksum_before=before.checksum("view"),
        view_checksum_after=result.params.checksum("view"),
        expert_update_norm=float(np.sqrt(sum(np.sum(d * d) for d in diff))),
    )


def diagonal_dominant(grid: np.ndarray) -> bool:
    rows = [s for s in range(grid.shape[0]) if not np.all(np.isnan(grid[s]))]
    return all(int(np.nanargmax(grid[s])) == s for s in rows)

