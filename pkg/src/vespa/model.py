"""View-gated mixture of attribute experts.

A fully connected relu trunk feeds two places: the output of an early layer
(the tap) drives a small view classifier whose softmax confidences gate V
view-specific expert heads, and the last trunk layer feeds those heads.  Each
expert emits sigmoid attribute probabilities; the final prediction is their
confidence-weighted sum.

The attribute loss sees the gate only through ``stop_gradient``, so the view
branch learns from the view loss alone, while each expert's gradient is still
scaled by its own gate weight.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .rng import CounterRNG

PROB_EPS = 1e-7
UNKNOWN_VIEW = -1
VIEW_NAMES = ("front", "back", "side")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    attribute_count: int
    trunk_widths: tuple[int, ...] = (64, 64)
    gate_tap: int = 1
    view_count: int = 3
    view_branch_widths: tuple[int, ...] = (16,)
    expert_widths: tuple[int, ...] = (32,)
    gated: bool = True

    def __post_init__(self):
        object.__setattr__(self, "trunk_widths", tuple(int(w) for w in self.trunk_widths))
        object.__setattr__(self, "view_branch_widths", tuple(int(w) for w in self.view_branch_widths))
        object.__setattr__(self, "expert_widths", tuple(int(w) for w in self.expert_widths))
        if self.input_dim < 1 or self.attribute_count < 1:
            raise ValueError("input_dim and attribute_count must be >= 1")
        if self.view_count < 2:
            raise ValueError("view_count must be >= 2")
        if not self.trunk_widths or min(self.trunk_widths) < 1:
            raise ValueError("trunk_widths must be non-empty positive sizes")
        if self.gated and not 1 <= self.gate_tap < len(self.trunk_widths):
            raise ValueError(
                f"gate_tap must satisfy 1 <= gate_tap < {len(self.trunk_widths)} "
                f"(number of trunk layers), got {self.gate_tap}"
            )

    @property
    def expert_count(self) -> int:
        return self.view_count if self.gated else 1

    def layer_shapes(self) -> dict[str, list[tuple[int, int]]]:
        """(fan_in, fan_out) per dense layer, keyed by parameter group."""

        def chain(d_in, widths):
            dims = [d_in, *widths]
            return list(zip(dims[:-1], dims[1:]))

        groups = {"trunk": chain(self.input_dim, self.trunk_widths)}
        if self.gated:
            tap_width = self.trunk_widths[self.gate_tap - 1]
            groups["view"] = chain(tap_width, (*self.view_branch_widths, self.view_count))
        for e in range(self.expert_count):
            groups[f"expert{e}"] = chain(self.trunk_widths[-1], (*self.expert_widths, self.attribute_count))
        return groups

    def param_names(self) -> list[str]:
        """Parameter names in their canonical (checkpoint) order."""
        names = []
        for group, layers in self.layer_shapes().items():
            for i in range(len(layers)):
                names += [f"{group}.{i}.W", f"{group}.{i}.b"]
        return names

    def param_count(self) -> int:
        return sum(i * o + o for layers in self.layer_shapes().values() for i, o in layers)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("trunk_widths", "view_branch_widths", "expert_widths"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_group(name: str) -> str:
    return name.split(".", 1)[0]


@dataclass
class ModelParams:
    config: ModelConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def group_names(self) -> list[str]:
        return list(self.config.layer_shapes())

    def group(self, group: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if param_group(k) == group}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def checksum(self, group: str | None = None) -> str:
        import hashlib

        h = hashlib.sha256()
        for k in self.config.param_names():
            if group is None or param_group(k) == group:
                h.update(k.encode())
                h.update(np.ascontiguousarray(self.arrays[k], dtype="<f8").tobytes())
        return h.hexdigest()


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases; a pure function of (config, seed)."""
    rng = CounterRNG(seed)
    arrays = {}
    for group, layers in config.layer_shapes().items():
        for i, (fan_in, fan_out) in enumerate(layers):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            u = rng.uniform(f"init/{group}.{i}", np.arange(fan_in), fan_out)
            arrays[f"{group}.{i}.W"] = (2.0 * u - 1.0) * bound
            arrays[f"{group}.{i}.b"] = np.zeros(fan_out)
    return ModelParams(config, arrays)


@dataclass
class AttributePriors:
    """Positive-label ratio per attribute and the derived loss weights."""

    ratios: np.ndarray
    fingerprint: str = ""

    @property
    def weights(self) -> np.ndarray:
        return np.exp(-self.ratios)


def labels_fingerprint(labels: np.ndarray) -> str:
    import hashlib

    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    h = hashlib.sha256(str(labels.shape).encode())
    h.update(labels.tobytes())
    return h.hexdigest()[:16]


def compute_priors(train_labels) -> AttributePriors:
    labels = np.asarray(train_labels)
    if labels.ndim != 2 or labels.shape[0] == 0:
        raise ValueError("priors need a non-empty N x C label matrix")
    _check_binary(labels)
    return AttributePriors(labels.mean(axis=0).astype(np.float64), labels_fingerprint(labels))


def _check_binary(labels: np.ndarray) -> None:
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("attribute labels must be 0 or 1")


@dataclass
class Prediction:
    view_conf: ad.Node | None  # N x V, un-stopped; None for the ungated baseline
    per_expert: list[ad.Node]  # each N x C, in (0, 1)
    aggregated: ad.Node  # N x C
    gate: np.ndarray  # N x V weights actually applied to the experts


def _dense(h: ad.Node, p: dict[str, ad.Node], prefix: str, n_layers: int, final_act=None) -> ad.Node:
    for i in range(n_layers):
        h = ad.add_bias(h @ p[f"{prefix}.{i}.W"], p[f"{prefix}.{i}.b"])
        if i < n_layers - 1:
            h = ad.relu(h)
    return final_act(h) if final_act else h


def as_nodes(params: ModelParams, requires_grad: bool = True) -> dict[str, ad.Node]:
    return {k: ad.leaf(v, requires_grad) for k, v in params.arrays.items()}


def forward(params: ModelParams | dict[str, ad.Node], x, gate_override=None, config: ModelConfig | None = None) -> Prediction:
    """Run the network on a batch ``x`` (N x D).

    ``params`` is either a :class:`ModelParams` (wrapped as fresh leaves) or an
    existing mapping of leaf nodes, so callers can read gradients afterwards.
    ``gate_override`` (N x V, or a single view index) replaces the learned
    gate weights on the attribute path; the view branch still runs.
    """
    if isinstance(params, ModelParams):
        config = params.config
        nodes = as_nodes(params)
    else:
        nodes = params
        if config is None:
            raise ValueError("config is required when passing raw nodes")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ad.DimensionError(f"input width {x.shape[-1]} does not match input_dim {config.input_dim}")
    n = x.shape[0]

    h = ad.constant(x)
    tap = None
    for i in range(len(config.trunk_widths)):
        h = ad.relu(ad.add_bias(h @ nodes[f"trunk.{i}.W"], nodes[f"trunk.{i}.b"]))
        if i + 1 == config.gate_tap:
            tap = h
    top = h

    experts = []
    for e in range(config.expert_count):
        experts.append(_dense(top, nodes, f"expert{e}", len(config.expert_widths) + 1, ad.sigmoid))

    if not config.gated:
        gate = np.ones((n, 1))
        return Prediction(None, experts, experts[0], gate)

    view_conf = _dense(tap, nodes, "view", len(config.view_branch_widths) + 1, ad.softmax)
    if gate_override is None:
        gate_node = ad.stop_gradient(view_conf)
    else:
        gate_node = ad.constant(_override_matrix(gate_override, n, config.view_count))
    return Prediction(view_conf, experts, aggregate(experts, gate_node), gate_node.value)


def aggregate(experts: list[ad.Node], gate: ad.Node) -> ad.Node:
    """Sum over v of expert v's output scaled row-wise by gate column v."""
    total = None
    for v, out in enumerate(experts):
        term = ad.row_scale(out, ad.column(gate, v))
        total = term if total is None else total + term
    return total


def _override_matrix(gate, n: int, v_count: int) -> np.ndarray:
    if np.isscalar(gate) or np.ndim(gate) == 0:
        g = np.zeros((n, v_count))
        g[:, int(gate)] = 1.0
        return g
    g = np.asarray(gate, dtype=np.float64)
    if g.ndim == 1:
        g = np.broadcast_to(g, (n, v_count))
    if g.shape != (n, v_count):
        raise ad.DimensionError(f"gate override shape {g.shape} != {(n, v_count)}")
    return g


def attribute_loss(pred: Prediction, labels, priors: AttributePriors) -> ad.Node:
    """Prevalence-weighted binary cross-entropy on the aggregated output.

    The weight exp(-a_c) multiplies only the positive-label term.
    """
    y = np.asarray(labels, dtype=np.float64)
    _check_binary(y)
    if y.shape != pred.aggregated.shape:
        raise ad.DimensionError(f"labels {y.shape} vs predictions {pred.aggregated.shape}")
    n = y.shape[0]
    w = np.broadcast_to(np.asarray(priors.weights, dtype=np.float64), y.shape)
    p = ad.clip(pred.aggregated, PROB_EPS, 1.0 - PROB_EPS)
    pos = ad.hadamard(ad.constant(w * y), ad.log(p))
    neg = ad.hadamard(ad.constant(1.0 - y), ad.log(1.0 - p))
    return ad.scale(ad.reduce_sum(pos + neg), -1.0 / n)


def view_loss(pred: Prediction, view_labels) -> tuple[ad.Node, bool]:
    """Mean negative log confidence of the true view over labeled samples.

    Returns ``(loss, has_labels)``; samples labeled ``UNKNOWN_VIEW`` are
    skipped, and a batch with no labeled sample gives a constant zero.
    """
    if pred.view_conf is None:
        return ad.constant(0.0), False
    views = np.asarray(view_labels, dtype=np.int64)
    n, v_count = pred.view_conf.shape
    if views.shape != (n,):
        raise ad.DimensionError(f"view labels {views.shape} vs batch size {n}")
    if np.any((views < UNKNOWN_VIEW) | (views >= v_count)):
        raise ValueError(f"view labels must lie in -1..{v_count - 1}")
    known = views != UNKNOWN_VIEW
    m = int(known.sum())
    if m == 0:
        return ad.constant(0.0), False
    onehot = np.zeros((n, v_count))
    onehot[np.flatnonzero(known), views[known]] = 1.0
    true_conf = ad.reduce_sum(ad.hadamard(pred.view_conf, ad.constant(onehot)), axis=1)
    # Unlabeled rows read a dummy 1.0 so their log is exactly 0.
    true_conf = true_conf + ad.constant((~known).astype(np.float64))
    true_conf = ad.clip(true_conf, PROB_EPS, 1.0)
    return ad.scale(ad.reduce_sum(ad.log(true_conf)), -1.0 / m), True


def joint_loss(attr: ad.Node, view: ad.Node, loss_lambda: float = 1.0) -> ad.Node:
    if loss_lambda == 1.0:
        return attr + view
    return attr + ad.scale(view, loss_lambda)


def predict(params: ModelParams, x, gate_override=None, batch_size: int = 4096) -> dict[str, np.ndarray]:
    """Plain-array inference: aggregated scores, per-expert scores and view confidences."""
    x = np.asarray(x, dtype=np.float64)
    scores, experts, views = [], [], []
    for s in range(0, len(x), batch_size):
        pred = forward(as_nodes(params, False), x[s : s + batch_size], gate_override, params.config)
        scores.append(pred.aggregated.value)
        experts.append(np.stack([e.value for e in pred.per_expert], axis=1))
        if pred.view_conf is not None:
            views.append(pred.view_conf.value)
    out = {
        "scores": np.concatenate(scores) if scores else np.zeros((0, params.config.attribute_count)),
        "experts": np.concatenate(experts) if experts else np.zeros((0, params.config.expert_count, params.config.attribute_count)),
    }
    out["view_conf"] = np.concatenate(views) if views else None
    return out
