"""View-unit specialization: each true-view subset scored through each expert alone."""

from __future__ import annotations

import numpy as np

from .metrics import MetricError, PredictionBatch, binarize, evaluate, mean_accuracy
from .model import VIEW_NAMES, ModelParams, predict


def specialization_ablation(params: ModelParams, dataset, threshold: float = 0.5) -> np.ndarray:
    """V x V grid of mA; row = true view subset, column = expert used alone.

    The gate is forced one-hot on the column's expert, which switches off the
    view predictor and the other experts.  For an ungated model the single
    expert fills every column.  Rows whose subset is empty (or has no
    attribute with both label values) are NaN.
    """
    v_count = params.config.view_count
    views = np.asarray(dataset.views)
    if np.all(views < 0):
        raise MetricError("specialization ablation needs view-labeled data")
    grid = np.full((v_count, v_count), np.nan)
    for s in range(v_count):
        rows = np.flatnonzero(views == s)
        if len(rows) == 0:
            continue
        x, y = dataset.x[rows], dataset.attrs[rows]
        for u in range(v_count):
            gate = u if params.config.gated else None
            scores = predict(params, x, gate_override=gate)["scores"]
            try:
                grid[s, u] = mean_accuracy(binarize(scores, threshold), y)
            except MetricError:
                grid[s, :] = np.nan
                break
    return grid


def grid_csv(grid: np.ndarray, names=VIEW_NAMES) -> str:
    v = grid.shape[0]
    labels = [names[i] if i < len(names) else str(i) for i in range(v)]
    lines = ["subset\\unit," + ",".join(labels)]
    for s in range(v):
        cells = ["absent" if np.isnan(g) else repr(float(g)) for g in grid[s]]
        lines.append(labels[s] + "," + ",".join(cells))
    return "\n".join(lines) + "\n"


def grid_table(grid: np.ndarray, names=VIEW_NAMES) -> str:
    v = grid.shape[0]
    labels = [names[i] if i < len(names) else str(i) for i in range(v)]
    out = ["subset \\ unit " + "".join(f"{l:>9}" for l in labels)]
    for s in range(v):
        cells = "".join(f"{'absent':>9}" if np.isnan(g) else f"{100 * g:9.2f}" for g in grid[s])
        out.append(f"{labels[s]:<14}" + cells)
    return "\n".join(out) + "\n"


def evaluate_model(params: ModelParams, dataset, threshold: float = 0.5):
    """Full metrics report for ``params`` on ``dataset`` (no augmentation)."""
    out = predict(params, dataset.x)
    view_pred = None if out["view_conf"] is None else out["view_conf"].argmax(axis=1)
    has_views = np.any(np.asarray(dataset.views) >= 0)
    batch = PredictionBatch(
        out["scores"],
        dataset.attrs,
        view_pred=view_pred,
        view_true=dataset.views if has_views else None,
        threshold=threshold,
    )
    return evaluate(batch, params.config.view_count), batch
