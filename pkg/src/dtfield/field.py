"""Tensor fields on a 2-D pixel grid and the variational energies on them.

A field is a height x width grid of 3x3 SPD matrices stored as a
(height, width, 6) coefficient array, one pixel per grid point with unit
spacing.  This module evaluates the masked fidelity term, the metric
double-integral regularizer Phi (a discretized fractional Sobolev
semi-norm), the full functional F = fidelity + alpha * Phi, and the
comparison functional F_C = Frobenius fidelity + beta * Theta with Theta the
forward-difference Sobolev semi-norm.

The batched evaluators at the bottom accept arrays with arbitrary leading
axes in front of (height, width, 6) and return one energy per leading index;
gradients are with respect to the independent coefficients (so off-diagonal
partials carry the Frobenius factor 2).  All reductions run in a fixed index
order, so results are bit-deterministic and independent of any outer
parallel schedule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spd import (
    EPSILON_DEFAULT,
    LOG_BOUND_DEFAULT,
    EigenPair,
    SpdTensor,
    SymMat,
    coeff_weights,
    exp_coeffs,
    jacobi_eigh,
    coeffs_to_matrices,
    log_coeffs,
    project_log_coeffs,
    weighted_norm_sq,
)

_W3 = coeff_weights(3)

# absolute slack on per-pixel log-norms: reassembled float64 coefficients of
# a tensor on the ball boundary can overshoot the bound by rounding
_BOUND_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class TensorField:
    """A height x width grid of 3x3 SPD tensors with a common log-norm bound.

    coeffs has shape (height, width, 6) in the layout
    [a11, a22, a33, a12, a13, a23]; every pixel must be strictly positive
    definite with ||Log||_F <= log_bound (small absolute rounding slack).
    """

    coeffs: np.ndarray
    log_bound: float = LOG_BOUND_DEFAULT

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=np.float64)
        if coeffs.ndim != 3 or coeffs.shape[-1] != 6:
            raise ValueError(f"expected (height, width, 6) coefficients, got {coeffs.shape}")
        if coeffs.shape[0] < 1 or coeffs.shape[1] < 1:
            raise ValueError(f"empty grid {coeffs.shape[:2]}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("non-finite coefficients")
        bound = float(self.log_bound)
        if not np.isfinite(bound) or bound < 0.0:
            raise ValueError(f"log_bound must be finite and >= 0, got {bound}")
        vals, _ = jacobi_eigh(coeffs_to_matrices(coeffs, 3))
        if vals[..., -1].min() <= 0.0:
            bad = np.unravel_index(int(np.argmin(vals[..., -1])), coeffs.shape[:2])
            raise ValueError(
                f"pixel (row {bad[0]}, col {bad[1]}) is not positive definite "
                f"(min eigenvalue {vals[..., -1].min():g}); project the field first"
            )
        lognorms = np.sqrt((np.log(vals) ** 2).sum(axis=-1))
        if lognorms.max() > bound + _BOUND_SLACK:
            bad = np.unravel_index(int(np.argmax(lognorms)), coeffs.shape[:2])
            raise ValueError(
                f"pixel (row {bad[0]}, col {bad[1]}) has ||Log||_F = "
                f"{lognorms.max():.6g} > bound {bound:g}"
            )
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "log_bound", bound)

    @property
    def height(self) -> int:
        return self.coeffs.shape[0]

    @property
    def width(self) -> int:
        return self.coeffs.shape[1]

    @property
    def tensors(self) -> list[SpdTensor]:
        """Row-major list of per-pixel SpdTensor values."""
        return [self.tensor_at(r, c) for r in range(self.height) for c in range(self.width)]

    def tensor_at(self, row: int, col: int) -> SpdTensor:
        mat = SymMat(self.coeffs[row, col])
        vals, vecs = jacobi_eigh(mat.matrix)
        lognorm = float(np.sqrt((np.log(vals) ** 2).sum()))
        return SpdTensor(mat, max(self.log_bound, lognorm), eig=EigenPair(vals, vecs))

    @classmethod
    def from_tensors(cls, tensors, height: int, width: int,
                     log_bound: float | None = None) -> "TensorField":
        """Build a field from a row-major iterable of SpdTensor values."""
        tensors = list(tensors)
        if len(tensors) != height * width:
            raise ValueError(
                f"expected {height * width} tensors for a {height}x{width} grid, "
                f"got {len(tensors)}"
            )
        coeffs = np.stack([t.mat.coeffs for t in tensors]).reshape(height, width, 6)
        if log_bound is None:
            log_bound = max(t.certified_log_bound for t in tensors)
        return cls(coeffs, log_bound)


@dataclass(frozen=True, eq=False)
class Mask:
    """Boolean per-pixel indicator: true = data present at that pixel."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=bool)
        if values.ndim != 2:
            raise ValueError(f"expected a 2-D mask, got shape {values.shape}")
        if not values.any():
            raise ValueError("mask has no true pixels")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def full(cls, height: int, width: int) -> "Mask":
        return cls(np.ones((height, width), dtype=bool))


def _mask_values(mask, shape) -> np.ndarray:
    """Boolean (height, width) array from a Mask or a raw boolean array."""
    values = mask.values if isinstance(mask, Mask) else np.asarray(mask, dtype=bool)
    if values.shape != shape:
        raise ValueError(f"mask shape {values.shape} does not match field {shape}")
    return values


@dataclass(frozen=True, eq=False)
class Mollifier:
    """Nonnegative radial weights on integer offsets, summing to 1.

    weights[radius + dy, radius + dx] is the weight of offset (dx, dy); the
    support is exactly the discrete Euclidean disk dx^2 + dy^2 <= radius^2.
    """

    radius: int
    weights: np.ndarray

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")
        side = 2 * self.radius + 1
        weights = np.array(self.weights, dtype=np.float64)
        if weights.shape != (side, side):
            raise ValueError(f"expected {side}x{side} weights, got {weights.shape}")
        if (weights < 0.0).any():
            raise ValueError("negative mollifier weight")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {weights.sum():.17g}, expected 1")
        offs = np.arange(side) - self.radius
        rsq = offs[:, None] ** 2 + offs[None, :] ** 2
        inside = rsq <= self.radius ** 2
        if (weights[~inside] != 0.0).any() or (weights[inside] <= 0.0).any():
            raise ValueError("support must be exactly the discrete disk")
        for value in np.unique(rsq[inside]):
            group = weights[inside & (rsq == value)]
            if np.abs(group - group[0]).max() > 1e-12 * group[0]:
                raise ValueError("weights are not radially symmetric")
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)

    def weight(self, dx: int, dy: int) -> float:
        if abs(dx) > self.radius or abs(dy) > self.radius:
            return 0.0
        return float(self.weights[self.radius + dy, self.radius + dx])


def build_mollifier(n_rho: int) -> Mollifier:
    """Bump-profile mollifier on the discrete disk of radius n_rho.

    Weight of offset (dx, dy) is exp(-1/(1 - r^2)) with
    r = sqrt(dx^2 + dy^2)/(n_rho + 1/2) inside the disk dx^2 + dy^2 <= n_rho^2
    and 0 outside, normalized to total mass 1.  The half-pixel margin keeps
    every weight on the disk strictly positive.
    """
    n_rho = int(n_rho)
    if n_rho < 1:
        raise ValueError(f"n_rho must be >= 1, got {n_rho}")
    offs = np.arange(-n_rho, n_rho + 1)
    rsq = offs[:, None] ** 2 + offs[None, :] ** 2
    inside = rsq <= n_rho ** 2
    r2 = rsq / (n_rho + 0.5) ** 2
    with np.errstate(divide="ignore", over="ignore"):
        bump = np.exp(-1.0 / (1.0 - r2))
    weights = np.where(inside, bump, 0.0)
    return Mollifier(n_rho, weights / weights.sum())


@dataclass(frozen=True)
class FunctionalParams:
    """Weights and exponents of the variational functionals.

    p, s are the fidelity/regularity exponents; alpha weighs the metric
    double-integral regularizer Phi, beta the Sobolev comparison term Theta;
    l toggles the mollifier window in Phi (0 = all pixel pairs); n_rho is the
    mollifier radius in pixels; z and epsilon parametrize the SPD projection.
    """

    p: float = 1.1
    s: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    l: int = 1
    n_rho: int = 3
    z: float = LOG_BOUND_DEFAULT
    epsilon: float = EPSILON_DEFAULT

    def __post_init__(self):
        if not self.p > 1.0:
            raise ValueError(f"p must be > 1, got {self.p}")
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.l not in (0, 1):
            raise ValueError(f"l must be 0 or 1, got {self.l}")
        if int(self.n_rho) != self.n_rho or self.n_rho < 1:
            raise ValueError(f"n_rho must be an integer >= 1, got {self.n_rho}")
        if not self.z > 0.0:
            raise ValueError(f"z must be > 0, got {self.z}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


_METRICS = ("log-euclidean", "euclidean")


def _field_rep(w: TensorField, metric: str) -> np.ndarray:
    """Per-pixel coordinates in which the metric is the weighted 2-norm."""
    if metric not in _METRICS:
        raise ValueError(f"unknown metric {metric!r}, expected one of {_METRICS}")
    if metric == "log-euclidean":
        return log_coeffs(w.coeffs)
    return w.coeffs


def _power_p(norm_sq: np.ndarray, p: float) -> np.ndarray:
    """(norm^2)^(p/2), safe at 0 for p < 2."""
    return np.power(norm_sq, 0.5 * p)


def _power_grad_factor(norm_sq: np.ndarray, p: float) -> np.ndarray:
    """d/dnorm factor norm^(p-2), with the 0/0 limit resolved to 0."""
    safe = np.where(norm_sq > 0.0, norm_sq, 1.0)
    return np.where(norm_sq > 0.0, np.power(safe, 0.5 * p - 1.0), 0.0)


# ---- batched evaluators (leading axes allowed before (height, width, 6)) ----

def fidelity_energy(rep: np.ndarray, data_rep: np.ndarray, mask_values: np.ndarray,
                    p: float, need_grad: bool = False):
    """Masked p-th-power distance sum in coordinate space.

    rep may carry leading batch axes; data_rep and mask_values are broadcast.
    Returns energy with the leading batch shape, and optionally the gradient
    with respect to rep (independent coefficients, Frobenius-weighted).
    """
    diff = rep - data_rep
    nsq = weighted_norm_sq(diff)
    masked = np.where(mask_values, _power_p(nsq, p), 0.0)
    energy = masked.sum(axis=(-2, -1))
    if not need_grad:
        return energy
    h = _power_grad_factor(nsq, p)
    grad = (p * np.where(mask_values, h, 0.0))[..., None] * (_W3 * diff)
    return energy, grad


def phi_kernel_offsets(height: int, width: int, params: FunctionalParams,
                       mollifier: Mollifier | None = None) -> list[tuple[int, int, float]]:
    """Half-plane offset list [(di, dj, kernel)] for the pairwise regularizer.

    Each unordered pixel-pair offset appears once (di > 0, or di = 0 and
    dj > 0); evaluators double the contribution to account for both ordered
    pairs of the underlying double integral.  kernel is
    rho^l(offset) / |offset|^(n + p s) with n = 2 and unit pixel spacing.
    """
    exponent = 2.0 + params.p * params.s
    offsets = []
    if params.l == 1:
        moll = mollifier if mollifier is not None else build_mollifier(params.n_rho)
        radius = moll.radius
        for di in range(0, min(radius, height - 1) + 1):
            for dj in range(-min(radius, width - 1), min(radius, width - 1) + 1):
                if di == 0 and dj <= 0:
                    continue
                rho = moll.weight(dj, di)
                if rho == 0.0:
                    continue
                dist = math.sqrt(di * di + dj * dj)
                offsets.append((di, dj, rho / dist ** exponent))
    else:
        for di in range(0, height):
            for dj in range(-(width - 1), width):
                if di == 0 and dj <= 0:
                    continue
                dist = math.sqrt(di * di + dj * dj)
                offsets.append((di, dj, 1.0 / dist ** exponent))
    return offsets


def pairwise_energy(rep: np.ndarray, offsets: list[tuple[int, int, float]],
                    p: float, need_grad: bool = False):
    """Sum over ordered pixel pairs of kernel * distance^p in coordinate space.

    rep is (..., height, width, 6); offsets comes from phi_kernel_offsets.
    """
    height, width = rep.shape[-3], rep.shape[-2]
    energy = np.zeros(rep.shape[:-3])
    grad = np.zeros_like(rep) if need_grad else None
    for di, dj, kernel in offsets:
        if di >= height or abs(dj) >= width:
            continue
        rows_a = slice(0, height - di)
        rows_b = slice(di, height)
        if dj >= 0:
            cols_a = slice(0, width - dj)
            cols_b = slice(dj, width)
        else:
            cols_a = slice(-dj, width)
            cols_b = slice(0, width + dj)
        a = rep[..., rows_a, cols_a, :]
        b = rep[..., rows_b, cols_b, :]
        diff = a - b
        nsq = weighted_norm_sq(diff)
        energy = energy + 2.0 * kernel * _power_p(nsq, p).sum(axis=(-2, -1))
        if need_grad:
            h = _power_grad_factor(nsq, p)
            t = (2.0 * kernel * p * h)[..., None] * (_W3 * diff)
            grad[..., rows_a, cols_a, :] += t
            grad[..., rows_b, cols_b, :] -= t
    if need_grad:
        return energy, grad
    return energy


def theta_energy(coeffs: np.ndarray, p: float, need_grad: bool = False):
    """Forward-difference Sobolev energy sum_x ||grad w(x)||_F^p.

    The gradient norm at a pixel stacks the forward differences toward the
    right and bottom neighbors (full-matrix Frobenius); a difference is
    dropped where the neighbor does not exist.
    """
    height, width = coeffs.shape[-3], coeffs.shape[-2]
    gsq = np.zeros(coeffs.shape[:-1])
    dx = dy = None
    if width > 1:
        dx = coeffs[..., :, 1:, :] - coeffs[..., :, :-1, :]
        gsq[..., :, :-1] += weighted_norm_sq(dx)
    if height > 1:
        dy = coeffs[..., 1:, :, :] - coeffs[..., :-1, :, :]
        gsq[..., :-1, :] += weighted_norm_sq(dy)
    energy = _power_p(gsq, p).sum(axis=(-2, -1))
    if not need_grad:
        return energy
    h = _power_grad_factor(gsq, p)
    grad = np.zeros_like(coeffs)
    if dx is not None:
        t = (p * h[..., :, :-1])[..., None] * (_W3 * dx)
        grad[..., :, 1:, :] += t
        grad[..., :, :-1, :] -= t
    if dy is not None:
        t = (p * h[..., :-1, :])[..., None] * (_W3 * dy)
        grad[..., 1:, :, :] += t
        grad[..., :-1, :, :] -= t
    return energy, grad


# ---- public field-level operations ----

def fidelity(w: TensorField, data: TensorField, mask, p: float,
             metric: str = "log-euclidean") -> float:
    """Sum over masked pixels of d^p(w(x), data(x))."""
    if (w.height, w.width) != (data.height, data.width):
        raise ValueError(
            f"field {w.height}x{w.width} does not match data {data.height}x{data.width}"
        )
    mask_values = _mask_values(mask, (w.height, w.width))
    rep = _field_rep(w, metric)
    data_rep = _field_rep(data, metric)
    return float(fidelity_energy(rep, data_rep, mask_values, p))


def phi_regularizer(w: TensorField, params: FunctionalParams,
                    metric: str = "log-euclidean",
                    mollifier: Mollifier | None = None) -> float:
    """Metric double-integral regularizer over ordered pixel pairs.

    Phi(w) = sum over x != y of d^p(w(x), w(y)) / |x-y|^(2 + p s) weighted by
    the mollifier at offset x - y when l = 1 (all pairs when l = 0); both
    ordered pairs of the double integral are counted.
    """
    rep = _field_rep(w, metric)
    offsets = phi_kernel_offsets(w.height, w.width, params, mollifier)
    return float(pairwise_energy(rep, offsets, params.p))


def functional_F(w: TensorField, data: TensorField, mask, params: FunctionalParams,
                 metric: str = "log-euclidean") -> float:
    """Full variational objective: fidelity + alpha * Phi."""
    value = fidelity(w, data, mask, params.p, metric)
    if params.alpha > 0.0:
        value += params.alpha * phi_regularizer(w, params, metric)
    return float(value)


def theta_regularizer(w, p: float) -> float:
    """Sobolev comparison regularizer on a TensorField or raw coefficients."""
    coeffs = w.coeffs if isinstance(w, TensorField) else np.asarray(w, dtype=np.float64)
    if coeffs.ndim != 3 or coeffs.shape[-1] != 6:
        raise ValueError(f"expected (height, width, 6) coefficients, got {coeffs.shape}")
    return float(theta_energy(coeffs, p))


def functional_FC(w: TensorField, data: TensorField, mask,
                  params: FunctionalParams) -> float:
    """Comparison objective: Frobenius fidelity + beta * Theta."""
    value = fidelity(w, data, mask, params.p, metric="euclidean")
    if params.beta > 0.0:
        value += params.beta * theta_regularizer(w, params.p)
    return float(value)


def to_log_coords(w: TensorField) -> np.ndarray:
    """Per-pixel matrix-log coefficients, shape (height, width, 6)."""
    return log_coeffs(w.coeffs)


def from_log_coords(log_field: np.ndarray, z: float = LOG_BOUND_DEFAULT,
                    epsilon: float = EPSILON_DEFAULT) -> TensorField:
    """Field of project_full(Exp(L)) for a (height, width, 6) log array.

    Logs inside the radius-z ball map straight through Exp; the rest are
    projected (eigenvalue floor epsilon, then log-ball rescale) first, which
    keeps Exp finite for any finite input.
    """
    log_field = np.asarray(log_field, dtype=np.float64)
    if log_field.ndim != 3 or log_field.shape[-1] != 6:
        raise ValueError(f"expected (height, width, 6) log coefficients, got {log_field.shape}")
    projected = project_log_coeffs(log_field, epsilon, z)
    return TensorField(exp_coeffs(projected), z)
