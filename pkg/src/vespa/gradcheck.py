"""Central finite-difference check of every parameter gradient of the joint loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import (
    AttributePriors,
    ModelConfig,
    ModelParams,
    as_nodes,
    attribute_loss,
    forward,
    init_params,
    joint_loss,
    param_group,
    view_loss,
)
from .rng import CounterRNG

STEP = 1e-5
TOLERANCE = 1e-4
# Relative error denominator floor: entries whose true gradient is below this
# are compared in absolute terms.
DENOM_FLOOR = 1e-6


@dataclass
class GradcheckReport:
    max_rel_err: float
    per_group: dict[str, float]
    checked: int
    skipped_kinks: int
    worst: str
    failed_groups: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failed_groups

    def lines(self) -> list[str]:
        out = [f"{g}: max_rel_err={e:.3e} {'ok' if e < TOLERANCE else 'FAIL'}" for g, e in self.per_group.items()]
        out.append(f"checked={self.checked} skipped_kinks={self.skipped_kinks} worst={self.worst}")
        out.append(f"max_rel_err={self.max_rel_err:.3e} tolerance={TOLERANCE:.0e} {'PASS' if self.passed else 'FAIL'}")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOM_FLOOR)
    return np.abs(analytic - numeric) / denom


def random_problem(seed: int, batch: int = 4):
    """A small random model, batch, labels and priors for checking."""
    rng = CounterRNG(seed)
    u = rng.uniform("gradcheck/shape", np.arange(1), 6)[0]
    d = 4 + int(u[0] * 4)
    c = 2 + int(u[1] * 4)
    cfg = ModelConfig(
        input_dim=d,
        attribute_count=c,
        trunk_widths=(5 + int(u[2] * 4), 5 + int(u[3] * 4)),
        gate_tap=1,
        view_count=3,
        view_branch_widths=(4,),
        expert_widths=(3 + int(u[4] * 4),),
    )
    params = init_params(cfg, seed)
    # Nonzero biases so every parameter has a generic gradient.
    for k in params.arrays:
        if k.endswith(".b"):
            params.arrays[k] = 0.1 * rng.normal(f"gradcheck/{k}", np.arange(1), params.arrays[k].size)[0]
    x = 2.0 * rng.uniform("gradcheck/x", np.arange(batch), d) - 1.0
    x *= 2.0
    attrs = (rng.uniform("gradcheck/y", np.arange(batch), c) < 0.5).astype(np.uint8)
    views = np.floor(rng.uniform("gradcheck/v", np.arange(batch), 1)[:, 0] * 3).astype(np.int64)
    priors = AttributePriors(rng.uniform("gradcheck/a", np.arange(1), c)[0])
    return params, x, attrs, views, priors


def _relu_masks(root: ad.Node) -> list[np.ndarray]:
    return [n.value > 0 for n in ad.topological_order(root) if n.op == "relu"]


def _loss(params: ModelParams, x, attrs, views, priors, gate=None, loss_lambda=1.0):
    # With the gate pinned, this is the objective whose gradient backward()
    # computes: the stop-gradient edge treats the gate as a constant.
    pred = forward(params, x, gate_override=gate)
    total = joint_loss(attribute_loss(pred, attrs, priors), view_loss(pred, views)[0], loss_lambda)
    return total


def run_gradcheck(seed: int = 0, problem=None, corrupt: str | None = None) -> GradcheckReport:
    """Compare analytic and central-difference gradients entry by entry.

    ``corrupt`` names a parameter group whose analytic gradient is perturbed
    before comparison; it exists to prove the checker catches errors.
    Entries whose perturbation flips a relu on or off are skipped.

    The numeric side holds the attribute path's gate weights at their
    unperturbed values; the view loss still sees the live view confidences.
    """
    if problem is None:
        problem = random_problem(seed)
    params, x, attrs, views, priors = problem
    nodes = as_nodes(params)
    pred = forward(nodes, x, config=params.config)
    total = joint_loss(attribute_loss(pred, attrs, priors), view_loss(pred, views)[0])
    ad.backward(total)
    gate = pred.gate if params.config.gated else None
    base_masks = [m.copy() for m in _relu_masks(total)]
    analytic = {k: n.grad.copy() for k, n in nodes.items()}
    if corrupt is not None:
        hit = [k for k in analytic if param_group(k) == corrupt]
        if not hit:
            raise ValueError(f"no parameter group named {corrupt!r}")
        analytic[hit[-1]] = analytic[hit[-1]] + 1e-2 + 0.5 * np.abs(analytic[hit[-1]])

    per_group: dict[str, float] = {}
    checked = skipped = 0
    worst, worst_err = "", 0.0
    for name in params.config.param_names():
        arr = params.arrays[name]
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + STEP
            plus = _loss(params, x, attrs, views, priors, gate)
            kink = any(not np.array_equal(a, b) for a, b in zip(_relu_masks(plus), base_masks))
            arr[idx] = orig - STEP
            minus = _loss(params, x, attrs, views, priors, gate)
            kink = kink or any(not np.array_equal(a, b) for a, b in zip(_relu_masks(minus), base_masks))
            arr[idx] = orig
            if kink:
                skipped += 1
                continue
            numeric = (float(plus.value) - float(minus.value)) / (2 * STEP)
            err = float(relative_error(np.array(analytic[name][idx]), np.array(numeric)))
            checked += 1
            g = param_group(name)
            per_group[g] = max(per_group.get(g, 0.0), err)
            if err >= worst_err:
                worst, worst_err = f"{name}{list(idx)}", err
    failed = [g for g, e in per_group.items() if e >= TOLERANCE]
    return GradcheckReport(max(per_group.values()), per_group, checked, skipped, worst, failed)
