"""DP-SGD mechanics and a Renyi-DP accountant.

Per-sample gradients are clipped to an L2 threshold C, summed, perturbed
with Gaussian noise of std sigma*C per coordinate, and divided by the
batch size. The accountant tracks Renyi divergence of the subsampled
Gaussian mechanism over a grid of orders and converts to (epsilon,
delta). Accounting assumes Poisson sampling at rate q = B/N while the
data loader uses shuffled fixed-size batches; reports flag this
standard approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, TrainingError
from .neural import DenseNet, GradientSet, LossSpec, per_sample_grads_stacked, sgd_step

ACCOUNTING_METHOD = "rdp_poisson_subsampling_integer_orders"

# Orders 1.25 .. 64 in steps of 0.25; integer orders are computed exactly,
# fractional orders are bounded by interpolation between their integer
# neighbours.
DEFAULT_ORDERS = tuple(np.arange(5, 257) / 4.0)


@dataclass(frozen=True)
class DpConfig:
    clip_norm: float = 1.0
    noise_multiplier: float = 0.5
    batch_size: int = 256
    delta: float = 1e-5
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ShapeError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ShapeError("noise_multiplier must be non-negative")
        if not 0.0 < self.delta < 1.0:
            raise ShapeError("delta must be in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ShapeError("batch_size must be >= 1 and epochs >= 0")


def _log_add(x: float, y: float) -> float:
    a, b = min(x, y), max(x, y)
    if a == -math.inf:
        return b
    return b + math.log1p(math.exp(a - b))


def _log_binom(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _log_a_int(q: float, sigma: float, alpha: int) -> float:
    """log E[(P/Q)^alpha] of the subsampled Gaussian at integer order."""
    log_a = -math.inf
    for k in range(alpha + 1):
        term = (
            _log_binom(alpha, k)
            + k * math.log(q)
            + (alpha - k) * math.log1p(-q)
            + (k * k - k) / (2.0 * sigma * sigma)
        )
        log_a = _log_add(log_a, term)
    return log_a


def rdp_of_step(q: float, sigma: float, orders=DEFAULT_ORDERS) -> np.ndarray:
    """Per-order RDP of one noisy step at sampling rate q.

    q = 1 is the plain Gaussian mechanism, order/(2 sigma^2) exactly.
    For q < 1 integer orders use the binomial expansion; fractional
    orders interpolate log A between integer neighbours (log A is convex
    in the order, so the chord is an upper bound). sigma = 0 yields
    infinite RDP: no accounting is possible.
    """
    orders = np.asarray(orders, dtype=np.float64)
    if np.any(orders <= 1.0):
        raise ShapeError("RDP orders must be > 1")
    if not 0.0 < q <= 1.0:
        raise ShapeError("sampling rate must be in (0, 1]")
    if sigma < 0:
        raise ShapeError("sigma must be non-negative")
    if sigma == 0.0:
        return np.full(orders.shape, np.inf)
    if q == 1.0:
        return orders / (2.0 * sigma * sigma)

    log_a_cache: dict[int, float] = {1: 0.0}

    def log_a(alpha: int) -> float:
        if alpha not in log_a_cache:
            log_a_cache[alpha] = _log_a_int(q, sigma, alpha)
        return log_a_cache[alpha]

    out = np.empty(orders.shape)
    for i, lam in enumerate(orders):
        lo = int(math.floor(lam))
        if lam == lo:
            out[i] = log_a(lo) / (lam - 1.0)
        else:
            hi = lo + 1
            frac = lam - lo
            out[i] = ((1.0 - frac) * log_a(lo) + frac * log_a(hi)) / (lam - 1.0)
    return out


def epsilon_from_rdp(orders, rdp, delta: float) -> tuple[float, float]:
    """(epsilon, minimizing order) via eps = min_l rdp(l) + log(1/delta)/(l-1)."""
    orders = np.asarray(orders, dtype=np.float64)
    rdp = np.asarray(rdp, dtype=np.float64)
    if orders.shape != rdp.shape or orders.size == 0:
        raise ShapeError("orders and rdp must be equal-length, non-empty")
    if not 0.0 < delta < 1.0:
        raise ShapeError("delta must be in (0, 1)")
    candidates = rdp + math.log(1.0 / delta) / (orders - 1.0)
    best = int(np.argmin(candidates))
    return float(candidates[best]), float(orders[best])


class Accountant:
    """Accumulates RDP over identical noisy steps at fixed (q, sigma).

    The total per order is steps * single-step RDP, held exactly by
    storing the step count rather than a running float sum.
    """

    def __init__(self, q: float, sigma: float, orders=DEFAULT_ORDERS):
        self.orders = np.asarray(orders, dtype=np.float64)
        self.q = float(q)
        self.sigma = float(sigma)
        self.steps = 0
        self._step_rdp = rdp_of_step(self.q, self.sigma, self.orders)

    def step(self, n: int = 1) -> None:
        if n < 0:
            raise ShapeError("cannot take a negative number of steps")
        self.steps += n

    def total_rdp(self) -> np.ndarray:
        return self.steps * self._step_rdp

    def epsilon(self, delta: float) -> tuple[float, float]:
        if self.steps == 0:
            raise TrainingError("accountant has no accumulated steps")
        return epsilon_from_rdp(self.orders, self.total_rdp(), delta)


def clip_gradient(g: GradientSet, clip_norm: float) -> GradientSet:
    """Scale by min(1, C/||g||); zero gradients pass through unchanged."""
    if clip_norm <= 0:
        raise ShapeError("clip_norm must be positive")
    norm = g.l2_norm()
    if norm <= clip_norm:
        return g
    return g.scaled(clip_norm / norm)


def _aggregate_stacked(stacked_sums, n: int, clip_norm: float, sigma: float, rng) -> GradientSet:
    """(sum + N(0, sigma^2 C^2 I)) / n over already-summed per-layer arrays."""
    arrays = []
    for arr in stacked_sums:
        if sigma > 0.0:
            arr = arr + rng.normal(0.0, sigma * clip_norm, size=arr.shape)
        arrays.append(arr / n)
    return GradientSet(tuple(arrays))


def noisy_aggregate(
    clipped: list[GradientSet], clip_norm: float, sigma: float, rng: np.random.Generator
) -> GradientSet:
    """Noisy mean of clipped per-sample gradients.

    Inputs must already be clipped: a norm above C + 1e-6 is a contract
    violation. With sigma = 0 this is the exact mean in a fixed
    summation order.
    """
    if not clipped:
        raise ShapeError("cannot aggregate zero gradients")
    for i, g in enumerate(clipped):
        if g.l2_norm() > clip_norm + 1e-6:
            raise TrainingError(f"gradient {i} has norm above the clip threshold: unclipped input")
    sums = [
        np.sum(np.stack([g.arrays[j] for g in clipped]), axis=0)
        for j in range(len(clipped[0].arrays))
    ]
    return _aggregate_stacked(sums, len(clipped), clip_norm, sigma, rng)


def dp_sgd_step(
    net: DenseNet,
    batch,
    targets,
    spec: LossSpec,
    dp: DpConfig,
    accountant: Accountant,
    rng: np.random.Generator,
    lr: float,
) -> DenseNet:
    """One private update: per-sample grads -> clip -> noisy mean -> SGD.

    Advances the accountant by exactly one step. Clipping and the sum
    are vectorized across the batch; with sigma = 0 and no clipping
    active this is bitwise identical to a plain SGD step.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if len(batch) > dp.batch_size:
        raise ShapeError(f"batch of {len(batch)} exceeds configured batch size {dp.batch_size}")
    stacked = per_sample_grads_stacked(net, batch, targets, spec)
    sq = np.zeros(len(batch))
    for dw, db in stacked:
        sq += np.sum(dw * dw, axis=(1, 2)) + np.sum(db * db, axis=1)
    norms = np.sqrt(sq)
    with np.errstate(divide="ignore"):
        scale = np.minimum(1.0, dp.clip_norm / norms)
    scale[norms == 0.0] = 1.0
    sums = []
    for dw, db in stacked:
        sums.append(np.sum(dw * scale[:, None, None], axis=0))
        sums.append(np.sum(db * scale[:, None], axis=0))
    grad = _aggregate_stacked(sums, len(batch), dp.clip_norm, dp.noise_multiplier, rng)
    accountant.step()
    return sgd_step(net, grad, lr)


def privacy_report(acc: Accountant, dp: DpConfig, n_train: int) -> dict:
    """JSON-ready summary of the privacy guarantee for one training run."""
    eps, order = acc.epsilon(dp.delta)
    return {
        "C": dp.clip_norm,
        "sigma": dp.noise_multiplier,
        "B": dp.batch_size,
        "N": n_train,
        "q": acc.q,
        "steps": acc.steps,
        "delta": dp.delta,
        "epsilon": eps,
        "minimizing_order": order,
        "accounting_method": ACCOUNTING_METHOD,
    }
