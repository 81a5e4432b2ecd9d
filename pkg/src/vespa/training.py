"""Mini-batch Adam training with per-group learning rates."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .model import (
    AttributePriors,
    ModelParams,
    attribute_loss,
    as_nodes,
    compute_priors,
    forward,
    joint_loss,
    param_group,
    view_loss,
)
from .rng import CounterRNG

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    lr: float = 0.0002
    view_branch_lr: float | None = None  # None: same as lr
    loss_lambda: float = 1.0
    augmentation_noise_sigma: float = 0.0
    shuffle: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.view_branch_lr is not None and self.view_branch_lr < 0:
            raise ConfigError("view_branch_lr must be >= 0")
        if self.augmentation_noise_sigma < 0:
            raise ConfigError("augmentation_noise_sigma must be >= 0")

    def group_lrs(self, groups) -> dict[str, float]:
        vlr = self.lr if self.view_branch_lr is None else self.view_branch_lr
        return {g: (vlr if g == "view" else self.lr) for g in groups}

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8) -> "OptimState":
        z = {k: np.zeros_like(a) for k, a in params.arrays.items()}
        return cls({k: a.copy() for k, a in z.items()}, z, 0, beta1, beta2, eps)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: OptimState, group_lrs: dict[str, float]) -> None:
    """Bias-corrected Adam, in place.  Groups with lr 0 are left untouched."""
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, theta in params.arrays.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ad.DimensionError(f"gradient for {name} has shape {g.shape}, parameter {theta.shape}")
        lr = group_lrs[param_group(name)]
        if lr == 0:
            continue
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        params.arrays[name] = theta - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def augment(x: np.ndarray, sigma: float, rng: CounterRNG, index) -> np.ndarray:
    """Additive Gaussian feature noise, keyed by sample index."""
    if sigma == 0:
        return x
    noise = rng.normal("augment", index, x.shape[-1])
    return x + sigma * noise


def loss_and_grads(params: ModelParams, x, attrs, views, priors: AttributePriors, loss_lambda: float = 1.0):
    nodes = as_nodes(params)
    pred = forward(nodes, x, config=params.config)
    la = attribute_loss(pred, attrs, priors)
    lv, _ = view_loss(pred, views)
    total = joint_loss(la, lv, loss_lambda)
    ad.backward(total)
    grads = {k: n.grad for k, n in nodes.items()}
    return float(total.value), float(la.value), float(lv.value), grads


@dataclass
class EpochSummary:
    epoch: int
    mean_joint: float
    mean_attr: float
    mean_view: float
    wall_ms: float = 0.0

    def record(self) -> str:
        return (
            f"epoch={self.epoch} mean_joint={self.mean_joint!r} "
            f"mean_attr={self.mean_attr!r} mean_view={self.mean_view!r}"
        )


def train_epoch(params: ModelParams, dataset, config: TrainConfig, state: OptimState, priors: AttributePriors, epoch: int) -> EpochSummary:
    """One pass over ``dataset`` in seeded shuffled order; updates in place.

    ``epoch`` keys the shuffle and augmentation streams, so a resumed run
    reproduces an uninterrupted one.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    t0 = time.perf_counter()
    rng = CounterRNG(config.seed)
    order = rng.permutation(f"shuffle/{epoch}", n) if config.shuffle else np.arange(n)
    lrs = config.group_lrs(params.group_names())
    totals = np.zeros(3)
    for s in range(0, n, config.batch_size):
        idx = order[s : s + config.batch_size]
        x = dataset.x[idx]
        x = augment(x, config.augmentation_noise_sigma, CounterRNG(config.seed + 7919 * (epoch + 1)), idx)
        joint, la, lv, grads = loss_and_grads(params, x, dataset.attrs[idx], dataset.views[idx], priors, config.loss_lambda)
        adam_step(params, grads, state, lrs)
        totals += np.array([joint, la, lv]) * len(idx)
    totals /= n
    return EpochSummary(epoch, *(float(t) for t in totals), wall_ms=(time.perf_counter() - t0) * 1e3)


def evaluate_losses(params: ModelParams, dataset, priors: AttributePriors, loss_lambda: float = 1.0) -> tuple[float, float, float]:
    pred = forward(params, dataset.x)
    la = attribute_loss(pred, dataset.attrs, priors)
    lv, _ = view_loss(pred, dataset.views)
    return float(joint_loss(la, lv, loss_lambda).value), float(la.value), float(lv.value)


@dataclass
class TrainResult:
    params: ModelParams
    state: OptimState
    priors: AttributePriors
    history: list[EpochSummary]


def fit(params: ModelParams, train_set, config: TrainConfig, state: OptimState | None = None, priors: AttributePriors | None = None, callback=None) -> TrainResult:
    """Train for ``config.epochs`` epochs.

    Priors default to the training split's own label ratios; the fingerprint
    of the labels they came from is kept on the priors object.
    """
    if len(train_set) == 0:
        raise ValueError("cannot train on an empty dataset")
    if priors is None:
        priors = compute_priors(train_set.attrs)
    if state is None:
        state = OptimState.for_params(params, config.beta1, config.beta2, config.eps)
    history = []
    for epoch in range(config.epochs):
        summary = train_epoch(params, train_set, config, state, priors, epoch)
        history.append(summary)
        log.info(summary.record())
        if callback is not None:
            callback(summary)
    return TrainResult(params, state, priors, history)


def transfer_train(params: ModelParams, train_set, config: TrainConfig, priors: AttributePriors | None = None, callback=None) -> TrainResult:
    """Fine-tune on data without view labels, view branch frozen.

    ``config.view_branch_lr`` must be exactly 0.  The optimizer state starts
    fresh; the pretrained weights are the only thing carried over.
    """
    if not params.config.gated:
        raise ConfigError("transfer training needs a gated model with a view branch")
    if config.view_branch_lr != 0:
        raise ConfigError(f"transfer mode requires view_branch_lr = 0, got {config.view_branch_lr}")
    return fit(params, train_set, config, priors=priors, callback=callback)


def check_priors(priors: AttributePriors, train_labels) -> None:
    """Raise if ``priors`` were not computed from ``train_labels``."""
    from .model import labels_fingerprint

    fp = labels_fingerprint(np.asarray(train_labels))
    if priors.fingerprint != fp:
        raise ValueError(f"priors fingerprint {priors.fingerprint!r} does not match training split {fp!r}")
