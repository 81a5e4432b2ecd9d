"""Synthetic view-conditional multi-attribute datasets.

Each sample draws a view v, a latent z ~ N(0, I_Z) and observes

    x = A z + offset_v + noise,        attrs[c] ~ Bernoulli(sigmoid((W[v, c] . z + b[v, c]) / tau))

The observation map A has orthonormal columns and the view offsets lie along
further orthonormal directions, so the view is recoverable from x and the
latent from the projection onto A.  Attribute weights are a shared base plus
``coupling`` times a view-specific perturbation (renormalised so the logit
scale does not grow with the coupling).  At coupling 0 the labels do not
depend on the view at all.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .rng import CounterRNG

FORMAT = "vespa-dataset"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    sample_count: int = 12000
    latent_dim: int = 8
    feature_dim: int = 32
    attribute_count: int = 16
    view_count: int = 3
    view_mix: tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    coupling: float = 2.0
    obs_noise: float = 0.3
    label_temperature: float = 1.0
    view_separation: float = 1.0
    logit_scale: float = 5.0
    prevalence_range: tuple[float, float] = (0.04, 0.55)
    world_seed: int | None = None  # observation model; defaults to seed
    attribute_seed: int | None = None  # attribute weights; defaults to world seed

    def __post_init__(self):
        object.__setattr__(self, "view_mix", tuple(float(p) for p in self.view_mix))
        object.__setattr__(self, "prevalence_range", tuple(float(p) for p in self.prevalence_range))
        for name in ("sample_count", "latent_dim", "feature_dim", "attribute_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.view_count < 2:
            raise ValueError("view_count must be >= 2")
        if len(self.view_mix) != self.view_count:
            raise ValueError(f"view_mix needs {self.view_count} entries, got {len(self.view_mix)}")
        if min(self.view_mix) < 0 or abs(sum(self.view_mix) - 1.0) > 1e-9:
            raise ValueError("view_mix must be non-negative and sum to 1")
        if self.latent_dim + self.view_count > self.feature_dim:
            raise ValueError("feature_dim must be at least latent_dim + view_count")
        if self.coupling < 0 or self.obs_noise < 0 or self.label_temperature < 0:
            raise ValueError("coupling, obs_noise and label_temperature must be >= 0")
        lo, hi = self.prevalence_range
        if not 0 < lo <= hi < 1:
            raise ValueError("prevalence_range must satisfy 0 < lo <= hi < 1")

    @property
    def resolved_world_seed(self) -> int:
        return self.seed if self.world_seed is None else self.world_seed

    @property
    def resolved_attribute_seed(self) -> int:
        return self.resolved_world_seed if self.attribute_seed is None else self.attribute_seed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["view_mix"] = list(self.view_mix)
        d["prevalence_range"] = list(self.prevalence_range)
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Dataset:
    x: np.ndarray  # N x D float64
    attrs: np.ndarray  # N x C uint8
    views: np.ndarray  # N int64, -1 for unknown
    view_count: int = 3
    fingerprint: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.attrs = np.asarray(self.attrs, dtype=np.uint8)
        self.views = np.asarray(self.views, dtype=np.int64)
        if self.x.ndim != 2 or self.attrs.ndim != 2 or self.views.ndim != 1:
            raise ValueError("x and attrs must be matrices, views a vector")
        if not len(self.x) == len(self.attrs) == len(self.views):
            raise ValueError("x, attrs and views disagree on sample count")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def feature_dim(self) -> int:
        return self.x.shape[1]

    @property
    def attribute_count(self) -> int:
        return self.attrs.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.attrs[idx], self.views[idx], self.view_count, self.fingerprint)

    def without_views(self) -> "Dataset":
        return Dataset(self.x, self.attrs, np.full(len(self), -1), self.view_count, self.fingerprint)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.view_count == other.view_count
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.attrs, other.attrs)
            and np.array_equal(self.views, other.views)
        )


@dataclass
class GroundTruthModel:
    basis: np.ndarray  # D x Z observation map A
    offsets: np.ndarray  # V x D
    weights: np.ndarray  # V x C x Z
    biases: np.ndarray  # V x C
    view_mix: np.ndarray
    label_temperature: float
    target_prevalence: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthModel":
        d = dict(d)
        for k in ("basis", "offsets", "weights", "biases", "view_mix", "target_prevalence"):
            d[k] = np.asarray(d[k], dtype=np.float64)
        return cls(**d)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _orthonormal_columns(g: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt; elementwise numpy only, no LAPACK."""
    q = g.copy()
    for j in range(q.shape[1]):
        for i in range(j):
            q[:, j] -= np.sum(q[:, i] * q[:, j]) * q[:, i]
        q[:, j] /= np.sqrt(np.sum(q[:, j] * q[:, j]))
    return q


def _solve_bias(w_norm: float, target: float, tau: float) -> float:
    """Bias b with E_s[sigmoid((s + b) / tau)] = target for s ~ N(0, w_norm^2)."""
    nodes, wts = np.polynomial.hermite_e.hermegauss(80)
    wts = wts / wts.sum()

    def prevalence(b):
        s = w_norm * nodes + b
        if tau == 0:
            return float(np.sum(wts * (s > 0)))
        return float(np.sum(wts * _sigmoid(s / tau)))

    lo, hi = -50.0 * (w_norm + 1), 50.0 * (w_norm + 1)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if prevalence(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ground_truth(config: GenConfig) -> GroundTruthModel:
    d, z, v_count, c_count = config.feature_dim, config.latent_dim, config.view_count, config.attribute_count
    world = CounterRNG(config.resolved_world_seed)
    q = _orthonormal_columns(world.normal("gt/basis", np.arange(d), z + v_count))
    basis = q[:, :z]
    offsets = config.view_separation * q[:, z : z + v_count].T

    attr = CounterRNG(config.resolved_attribute_seed)
    base = attr.normal("gt/w_base", np.arange(c_count), z) / np.sqrt(z)
    delta = attr.normal("gt/w_view", np.arange(v_count * c_count), z).reshape(v_count, c_count, z) / np.sqrt(z)
    k = config.coupling
    weights = config.logit_scale * (base[None] + k * delta) / np.sqrt(1.0 + k * k)

    lo, hi = config.prevalence_range
    target = np.linspace(lo, hi, c_count)
    # Shuffle which attribute gets which prevalence so rarity is not tied to index.
    target = target[attr.permutation("gt/prevalence", c_count)]
    biases = np.empty((v_count, c_count))
    for v in range(v_count):
        for c in range(c_count):
            w_norm = float(np.sqrt(np.sum(weights[v, c] ** 2)))
            biases[v, c] = _solve_bias(w_norm, float(target[c]), config.label_temperature)
    return GroundTruthModel(basis, offsets, weights, biases, np.array(config.view_mix), config.label_temperature, target)


def _matvec_rows(mat: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Row-wise ``mat @ vec`` without BLAS, for reproducible sums."""
    return np.sum(mat[None, :, :] * vecs[:, None, :], axis=-1)


def _label_probs(gt: GroundTruthModel, z: np.ndarray, views: np.ndarray) -> np.ndarray:
    w = gt.weights[views]  # N x C x Z
    logits = np.sum(w * z[:, None, :], axis=-1) + gt.biases[views]
    if gt.label_temperature == 0:
        return (logits > 0).astype(np.float64)
    return _sigmoid(logits / gt.label_temperature)


def generate(config: GenConfig) -> tuple[Dataset, GroundTruthModel]:
    gt = ground_truth(config)
    rng = CounterRNG(config.seed)
    idx = np.arange(config.sample_count)
    u = rng.uniform("sample/view", idx, 1)[:, 0]
    cum = np.cumsum(config.view_mix)
    cum[-1] = 1.0
    views = np.searchsorted(cum, u, side="right")
    views = np.minimum(views, config.view_count - 1)
    # A zero-probability view can only be hit through floating-point edge cases.
    z = rng.normal("sample/latent", idx, config.latent_dim)
    noise = rng.normal("sample/noise", idx, config.feature_dim)
    x = _matvec_rows(gt.basis, z) + gt.offsets[views] + config.obs_noise * noise
    probs = _label_probs(gt, z, views)
    attrs = (rng.uniform("sample/labels", idx, config.attribute_count) < probs).astype(np.uint8)
    return Dataset(x, attrs, views, config.view_count, config.fingerprint()), gt


def _latent_estimate(gt: GroundTruthModel, x: np.ndarray, views: np.ndarray | None) -> np.ndarray:
    centred = x if views is None else x - gt.offsets[views]
    pinv = np.linalg.pinv(gt.basis)
    return centred @ pinv.T


def bayes_reference(gt: GroundTruthModel, dataset: Dataset, view_aware: bool = True) -> dict:
    """Score ``dataset`` with the generative model itself.

    The view-aware oracle uses the true view and its own weights; the
    view-blind oracle marginalises the label probability over the view prior.
    Returns the per-attribute mA vector, mean mA and the probabilities.
    """
    from .metrics import attribute_accuracies

    views = dataset.views
    if view_aware:
        if np.any(views < 0):
            raise ValueError("view-aware reference needs known views")
        z_hat = _latent_estimate(gt, dataset.x, views)
        probs = _label_probs(gt, z_hat, views)
    else:
        z_hat = _latent_estimate(gt, dataset.x, None)
        probs = np.zeros(dataset.attrs.shape)
        for v, pv in enumerate(gt.view_mix):
            if pv > 0:
                probs += pv * _label_probs(gt, z_hat, np.full(len(dataset), v))
    per_attr, ok = attribute_accuracies(probs >= 0.5, dataset.attrs)
    return {"per_attribute": per_attr, "mA": float(np.nanmean(per_attr[ok])), "probs": probs}


def _apportion(sizes_target: np.ndarray, n: int) -> np.ndarray:
    """Deal n positions into splits, each step to the split furthest behind its quota."""
    counts = np.zeros(len(sizes_target), dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    for j in range(n):
        k = int(np.argmax(sizes_target * (j + 1) / n - counts))
        out[j] = k
        counts[k] += 1
    return out


def split(dataset: Dataset, ratios, seed: int) -> list[Dataset]:
    """Seeded disjoint partition; stratified by view when views are known.

    Split sizes follow largest-remainder rounding of ``ratios * N``.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios <= 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError("split ratios must be positive and sum to 1")
    n = len(dataset)
    raw = ratios * n
    sizes = np.floor(raw).astype(np.int64)
    for k in np.argsort(-(raw - sizes), kind="stable")[: n - sizes.sum()]:
        sizes[k] += 1
    if np.any(sizes == 0):
        raise ValueError(f"split sizes {sizes.tolist()} leave a split empty")
    rng = CounterRNG(seed)
    keys = rng.uniform("split", np.arange(n), 1)[:, 0]
    # Group by view, random order within a view; dealing then keeps each view's
    # share close to the global ratios.
    order = np.lexsort((keys, dataset.views))
    assign = _apportion(sizes.astype(np.float64), n)
    parts = []
    for k in range(len(ratios)):
        idx = np.sort(order[assign == k])
        parts.append(dataset.subset(idx))
    return parts


# -- file I/O ---------------------------------------------------------------


def write_dataset(dataset: Dataset, path) -> None:
    header = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "D": dataset.feature_dim,
        "C": dataset.attribute_count,
        "V": dataset.view_count,
        "N": len(dataset),
        "fingerprint": dataset.fingerprint,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for x, a, v in zip(dataset.x, dataset.attrs, dataset.views):
        lines.append(json.dumps({"x": x.tolist(), "attrs": a.tolist(), "view": int(v)}, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path) -> Dataset:
    with open(path) as fh:
        text = fh.read().splitlines()
    if not text:
        raise DatasetFormatError("empty file", 1)
    try:
        header = json.loads(text[0])
        d, c, v_count, n = header["D"], header["C"], header["V"], header["N"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"bad header: {exc}", 1) from None
    if header.get("format") != FORMAT or header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError("unsupported format or version", 1)
    records = text[1:]
    if len(records) != n:
        raise DatasetFormatError(f"header says {n} records, file has {len(records)}", len(text))
    x = np.empty((n, d))
    attrs = np.empty((n, c), dtype=np.uint8)
    views = np.empty(n, dtype=np.int64)
    for i, line in enumerate(records):
        lineno = i + 2
        try:
            rec = json.loads(line)
            xi, ai, vi = rec["x"], rec["attrs"], rec["view"]
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetFormatError(f"malformed record: {exc}", lineno) from None
        if not isinstance(xi, list) or len(xi) != d:
            raise DatasetFormatError(f"x has {len(xi) if isinstance(xi, list) else '?'} values, expected D={d}", lineno)
        if not isinstance(ai, list) or len(ai) != c:
            raise DatasetFormatError(f"attrs has {len(ai) if isinstance(ai, list) else '?'} values, expected C={c}", lineno)
        if any(a not in (0, 1) or isinstance(a, bool) for a in ai):
            raise DatasetFormatError("attrs entries must be 0 or 1", lineno)
        if not isinstance(vi, int) or isinstance(vi, bool) or not -1 <= vi < v_count:
            raise DatasetFormatError(f"view must be an integer in -1..{v_count - 1}", lineno)
        if not all(isinstance(t, (int, float)) and not isinstance(t, bool) for t in xi):
            raise DatasetFormatError("x entries must be numbers", lineno)
        x[i] = xi
        attrs[i] = ai
        views[i] = vi
    return Dataset(x, attrs, views, v_count, header.get("fingerprint", ""))


def write_ground_truth(gt: GroundTruthModel, config: GenConfig, path) -> None:
    blob = {"gen_config": config.to_dict(), "ground_truth": gt.to_dict()}
    Path(path).write_text(json.dumps(blob, sort_keys=True) + "\n")


def read_ground_truth(path) -> tuple[GroundTruthModel, GenConfig]:
    blob = json.loads(Path(path).read_text())
    cfg = dict(blob["gen_config"])
    return GroundTruthModel.from_dict(blob["ground_truth"]), GenConfig(**cfg)


def default_benchmark(**overrides) -> GenConfig:
    return replace(GenConfig(), **overrides)
