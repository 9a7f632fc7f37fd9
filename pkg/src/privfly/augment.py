"""Rare-class augmentation in preprocessed feature space.

Two synthesizers: SMOTE interpolation toward nearest minority
neighbours, and a per-class mixture model (1-D Gaussian mixture per
numeric feature, empirical frequency table per one-hot block). Both run
after one-hot encoding; SMOTE leaves synthetic one-hot blocks as
fractional values on purpose, since the classifier consumes real-valued
features and rounding would distort the interpolation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import AugmentError, DataError, ShapeError
from .util import derive_rng


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    target_count: int = 500
    seed: int = 0
    # Test hook: pin the interpolation coefficient instead of drawing it.
    lambda_override: float | None = None

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ShapeError("k_neighbors must be >= 1")
        if self.target_count < 0:
            raise ShapeError("target_count must be non-negative")


@dataclass(frozen=True)
class SmoteProvenance:
    """Where one synthetic row came from: seed row, neighbour, coefficient."""

    seed_row: int
    neighbor_row: int
    lam: float


def smote(minority: np.ndarray, cfg: SmoteConfig) -> tuple[np.ndarray, list[SmoteProvenance]]:
    """Interpolate (target_count - current) synthetic rows.

    Each synthetic row is x_i + lam * (x_nn - x_i) with lam uniform in
    [0, 1] and x_nn one of the k nearest neighbours of x_i (Euclidean,
    self excluded, k clamped to rows - 1). Deterministic under seed.
    """
    X = np.asarray(minority, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("minority rows must form a 2-D matrix")
    n = len(X)
    if n < 2:
        raise AugmentError(
            "SMOTE needs at least 2 rows to interpolate; use the GMM synthesizer "
            "or enable the duplication fallback"
        )
    if cfg.target_count < n:
        raise ShapeError("target_count below the current class count")
    n_new = cfg.target_count - n
    k = min(cfg.k_neighbors, n - 1)

    # All-pairs distances; ties broken by row index via stable argsort.
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    np.fill_diagonal(dist, np.inf)
    neighbors = np.argsort(dist, axis=1, kind="stable")[:, :k]

    rng = derive_rng(cfg.seed, "smote")
    rows = np.empty((n_new, X.shape[1]))
    provenance = []
    for s in range(n_new):
        i = int(rng.integers(n))
        j = int(neighbors[i, rng.integers(k)])
        lam = float(rng.random()) if cfg.lambda_override is None else float(cfg.lambda_override)
        rows[s] = X[i] + lam * (X[j] - X[i])
        provenance.append(SmoteProvenance(i, j, lam))
    return rows, provenance


@dataclass(eq=False)
class GmmModel:
    """1-D Gaussian mixture: weights, means, stds, plus the EM loss trace."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    loglik_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stds = np.asarray(self.stds, dtype=np.float64)
        if not (len(self.weights) == len(self.means) == len(self.stds)) or len(self.weights) < 1:
            raise ShapeError("mixture parameter lengths disagree")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ShapeError("mixture weights must sum to 1")
        if np.any(self.stds <= 0):
            raise ShapeError("mixture stds must be positive")

    @property
    def n_components(self) -> int:
        return len(self.weights)


_STD_FLOOR = 1e-6
_LOG_2PI = float(np.log(2.0 * np.pi))


def _log_gauss(x: np.ndarray, mu: np.ndarray, std: np.ndarray) -> np.ndarray:
    z = (x[:, None] - mu[None, :]) / std[None, :]
    return -0.5 * (z * z) - np.log(std)[None, :] - 0.5 * _LOG_2PI


def fit_gmm(values, n_components: int, max_iter: int = 200, tol: float = 1e-8, seed: int = 0) -> GmmModel:
    """EM fit of a 1-D Gaussian mixture.

    Means start at evenly spaced quantiles, so the fit is deterministic;
    the seed only perturbs ties between identical quantiles. Stds are
    floored at 1e-6. If the sample has fewer distinct values than
    components, the component count is reduced with a warning.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if n_components < 1:
        raise ShapeError("n_components must be >= 1")
    if len(x) < n_components:
        raise DataError(f"need at least {n_components} values, got {len(x)}")
    distinct = np.unique(x)
    if len(distinct) < n_components:
        warnings.warn(
            f"only {len(distinct)} distinct values; reducing mixture to {len(distinct)} components",
            stacklevel=2,
        )
        n_components = len(distinct)

    k = n_components
    mu = np.quantile(x, (np.arange(k) + 0.5) / k)
    if len(np.unique(mu)) < k:
        mu = mu + derive_rng(seed, "gmm_init").normal(0.0, 1e-6, size=k)
    std = np.full(k, max(float(np.std(x)), _STD_FLOOR))
    w = np.full(k, 1.0 / k)

    history: list[float] = []
    for _ in range(max_iter):
        log_joint = np.log(w)[None, :] + _log_gauss(x, mu, std)
        log_norm = _logsumexp(log_joint)
        history.append(float(np.sum(log_norm)))
        resp = np.exp(log_joint - log_norm[:, None])
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        w = nk / nk.sum()
        mu = (resp * x[:, None]).sum(axis=0) / nk
        var = (resp * (x[:, None] - mu[None, :]) ** 2).sum(axis=0) / nk
        std = np.maximum(np.sqrt(var), _STD_FLOOR)
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol:
            break
    return GmmModel(w, mu, std, loglik_history=history)


def _logsumexp(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def gmm_density(model: GmmModel, x) -> np.ndarray | float:
    """Mixture density: sum_k w_k Normal(x | mu_k, std_k^2)."""
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    log_joint = np.log(model.weights)[None, :] + _log_gauss(arr, model.means, model.stds)
    dens = np.exp(_logsumexp(log_joint))
    return float(dens[0]) if np.isscalar(x) or np.asarray(x).ndim == 0 else dens


def sample_gmm(model: GmmModel, n: int, rng: np.random.Generator) -> np.ndarray:
    comp = rng.choice(model.n_components, size=n, p=model.weights)
    return rng.normal(model.means[comp], model.stds[comp])


@dataclass(eq=False)
class ClassSynthesizer:
    """Per-feature models for one class of the encoded matrix.

    ``layout`` is the preprocessor block structure: ("numeric", name,
    slice) entries get a GmmModel, ("categorical", name, slice) entries
    an empirical frequency table over the block's one-hot columns.
    """

    class_index: int
    layout: list[tuple[str, str, slice]]
    numeric_models: dict[int, GmmModel]
    categorical_tables: dict[int, np.ndarray]


def _default_layout(d: int) -> list[tuple[str, str, slice]]:
    return [("numeric", f"x{j}", slice(j, j + 1)) for j in range(d)]


def fit_class_synthesizer(
    rows: np.ndarray,
    class_index: int,
    layout=None,
    n_components: int = 5,
    seed: int = 0,
) -> ClassSynthesizer:
    """Fit a GMM per numeric feature and a frequency table per one-hot block."""
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or len(X) < 1:
        raise DataError("need at least one row to fit a synthesizer")
    layout = list(layout) if layout is not None else _default_layout(X.shape[1])
    numeric_models: dict[int, GmmModel] = {}
    tables: dict[int, np.ndarray] = {}
    for block_idx, (role, _name, sl) in enumerate(layout):
        if role == "numeric":
            k = min(n_components, len(X))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                numeric_models[block_idx] = fit_gmm(X[:, sl.start], k, seed=derive_seed_for(seed, block_idx))
        else:
            counts = X[:, sl].sum(axis=0)
            total = counts.sum()
            # Rows with an all-zero block (unseen category) contribute nothing.
            tables[block_idx] = counts / total if total > 0 else np.full(sl.stop - sl.start, 0.0)
    return ClassSynthesizer(class_index, layout, numeric_models, tables)


def derive_seed_for(seed: int, block_idx: int) -> int:
    from .util import derive_seed

    return derive_seed(seed, "synthesizer", block_idx)


def sample_synthesizer(s: ClassSynthesizer, n: int, seed: int = 0) -> np.ndarray:
    """Draw n rows: numerics component-then-normal clipped to [0, 1],
    categorical blocks as valid one-hot vectors."""
    if n < 0:
        raise ShapeError("n must be non-negative")
    d = max(sl.stop for _, _, sl in s.layout) if s.layout else 0
    out = np.zeros((n, d))
    if n == 0:
        return out
    rng = derive_rng(seed, "sample_synthesizer", s.class_index)
    for block_idx, (role, _name, sl) in enumerate(s.layout):
        if role == "numeric":
            out[:, sl.start] = np.clip(sample_gmm(s.numeric_models[block_idx], n, rng), 0.0, 1.0)
        else:
            probs = s.categorical_tables[block_idx]
            if probs.sum() <= 0:
                continue
            cols = rng.choice(sl.stop - sl.start, size=n, p=probs / probs.sum())
            out[np.arange(n), sl.start + cols] = 1.0
    return out


@dataclass(eq=False)
class AugmentResult:
    X: np.ndarray
    y: np.ndarray
    # Per synthetic row: dict with output_index, class, and for SMOTE the
    # seed/neighbour provenance (indices into the input matrix).
    provenance: list[dict]


def augment_dataset(
    X: np.ndarray,
    y: np.ndarray,
    method: str,
    target_count: int = 500,
    rare_class_threshold: int = 500,
    seed: int = 0,
    k_neighbors: int = 5,
    gmm_components: int = 5,
    layout=None,
    duplicate_fallback: bool = False,
) -> AugmentResult:
    """Raise every class below the threshold to target_count rows.

    Original rows are preserved unmodified; synthetic rows carry their
    source class label. The merged set is shuffled deterministically
    under the seed. ``method`` is "none", "smote", or "gmm".
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) != len(y) or len(X) == 0:
        raise DataError("features and labels must be non-empty and equal length")
    if method not in ("none", "smote", "gmm"):
        raise ShapeError(f"unknown augmentation method {method!r}")

    pieces = [X]
    labels = [y]
    provenance: list[dict] = []
    if method != "none":
        n_classes = int(y.max()) + 1
        for c in range(n_classes):
            idx = np.flatnonzero(y == c)
            count = len(idx)
            if count == 0 or count >= rare_class_threshold or count >= target_count:
                continue
            need = target_count - count
            if method == "smote":
                if count == 1:
                    if not duplicate_fallback:
                        raise AugmentError(
                            f"class {c} has a single row; SMOTE cannot interpolate "
                            "(use method='gmm' or duplicate_fallback=True)"
                        )
                    synth = np.repeat(X[idx], need, axis=0)
                    prov = [{"class": c, "seed_row": int(idx[0]), "neighbor_row": int(idx[0]), "lam": 0.0}
                            for _ in range(need)]
                else:
                    cfg = SmoteConfig(k_neighbors=k_neighbors, target_count=target_count,
                                      seed=derive_seed_local(seed, c))
                    synth, raw = smote(X[idx], cfg)
                    prov = [
                        {
                            "class": c,
                            "seed_row": int(idx[p.seed_row]),
                            "neighbor_row": int(idx[p.neighbor_row]),
                            "lam": p.lam,
                        }
                        for p in raw
                    ]
            else:
                synth_model = fit_class_synthesizer(
                    X[idx], c, layout=layout, n_components=gmm_components, seed=derive_seed_local(seed, c)
                )
                synth = sample_synthesizer(synth_model, need, seed=derive_seed_local(seed, c))
                prov = [{"class": c} for _ in range(need)]
            pieces.append(synth)
            labels.append(np.full(need, c, dtype=np.int64))
            provenance.extend(prov)

    X_all = np.concatenate(pieces, axis=0)
    y_all = np.concatenate(labels)
    rng = derive_rng(seed, "augment_shuffle")
    perm = rng.permutation(len(X_all))
    inverse = np.empty(len(perm), dtype=np.int64)
    inverse[perm] = np.arange(len(perm))
    for offset, p in enumerate(provenance):
        p["output_index"] = int(inverse[len(X) + offset])
    return AugmentResult(X_all[perm], y_all[perm], provenance)


def derive_seed_local(seed: int, class_index: int) -> int:
    from .util import derive_seed

    return derive_seed(seed, "augment_class", class_index)
