"""Projected gradient descent for the tensor-field objectives.

The solver minimizes one of three objectives:

- "f-log-euclidean": fidelity + alpha * Phi with the log-Euclidean metric,
  optimized over per-pixel matrix-log coefficients.  In these coordinates
  the objective is convex and the feasible set is the Frobenius log-norm
  ball, so each iteration is a gradient step followed by the ball
  projection.
- "f-euclidean": the same functional with the Euclidean (Frobenius) metric,
  optimized over raw coefficients with the full SPD projection after each
  step.
- "fc": the Sobolev comparison functional (Frobenius fidelity +
  beta * Theta), also over raw coefficients.

Steps use Armijo backtracking: a trial point is accepted when it satisfies
the sufficient-decrease inequality f(trial) <= f(x) + c * <grad, trial - x>
and decreases the objective by at least rel_tol * max(1, |f(x)|).  Every
iteration's ladder starts at max(previous accepted step / backtracking
factor, init_step), so the run stops only once a fresh ladder cannot buy a
tolerance-sized decrease; re-solving from a returned solution therefore
changes the objective by less than the tolerance.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .field import (
    FunctionalParams,
    Mollifier,
    TensorField,
    _mask_values,
    fidelity_energy,
    from_log_coords,
    pairwise_energy,
    phi_kernel_offsets,
    theta_energy,
)
from .spd import (
    coeff_weights,
    log_coeffs,
    project_full,
    project_full_coeffs,
    project_log_coeffs,
    weighted_norm_sq,
)

_W3 = coeff_weights(3)

_OBJECTIVES = ("f-log-euclidean", "f-euclidean", "fc")
_GRAD_MODES = ("analytic", "finite-difference")
_MAX_BACKTRACKS = 60

# an unaccepted line search whose best trial does not ascend past this
# relative slack is a floating-point plateau, i.e. convergence
_PLATEAU_REL = 1e-12


class LineSearchError(RuntimeError):
    """Backtracking found no acceptable step (objective or alpha ill-scaled)."""


@dataclass(frozen=True)
class SolverConfig:
    """Projected-gradient solver knobs."""

    max_iters: int = 50
    grad_mode: str = "analytic"
    fd_step: float = 1e-6
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    init_step: float = 1.0
    rel_tol: float = 1e-8

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.grad_mode not in _GRAD_MODES:
            raise ValueError(f"grad_mode must be one of {_GRAD_MODES}, got {self.grad_mode!r}")
        for name in ("fd_step", "armijo_c", "init_step", "rel_tol"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError(
                f"backtrack_factor must lie in (0, 1), got {self.backtrack_factor}"
            )


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one solver run.

    objective_trajectory[0] is the objective at the initial point; one entry
    follows per accepted iteration, never increasing.
    """

    iterations: int
    objective_trajectory: list[float]
    final_objective: float
    converged: bool
    seconds: float

    def __post_init__(self):
        traj = [float(v) for v in self.objective_trajectory]
        if len(traj) != self.iterations + 1:
            raise ValueError(
                f"{self.iterations} iterations need {self.iterations + 1} trajectory "
                f"entries, got {len(traj)}"
            )
        if any(b > a for a, b in zip(traj, traj[1:])):
            raise ValueError("objective trajectory is not non-increasing")
        if traj[-1] != self.final_objective:
            raise ValueError("final_objective does not match the trajectory")
        object.__setattr__(self, "objective_trajectory", traj)

    def to_json_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "objective_trajectory": self.objective_trajectory,
            "final_objective": self.final_objective,
            "converged": self.converged,
            "seconds": self.seconds,
        }


class _Objective:
    """Value/gradient/projection bundle in the coordinates of one objective."""

    def __init__(self, objective: str, data: TensorField, mask_values: np.ndarray,
                 params: FunctionalParams, mollifier: Mollifier | None):
        if objective not in _OBJECTIVES:
            raise ValueError(f"objective must be one of {_OBJECTIVES}, got {objective!r}")
        self.kind = objective
        self.params = params
        self.log_mode = objective == "f-log-euclidean"
        self.mask_values = mask_values
        if self.log_mode:
            self.target = log_coeffs(data.coeffs)
        else:
            self.target = data.coeffs
        if objective == "fc":
            self.offsets = []
            self.reg_weight = params.beta
        else:
            self.reg_weight = params.alpha
            if params.alpha > 0.0:
                self.offsets = phi_kernel_offsets(data.height, data.width, params, mollifier)
            else:
                self.offsets = []

    def start(self, init: TensorField) -> np.ndarray:
        if self.log_mode:
            x = log_coeffs(init.coeffs)
            if (weighted_norm_sq(x) > self.params.z ** 2 * (1.0 + 1e-12)).any():
                x = project_log_coeffs(x, self.params.epsilon, self.params.z)
            return x
        return project_full_coeffs(init.coeffs, self.params.epsilon, self.params.z)

    def value(self, x: np.ndarray) -> np.ndarray:
        v = fidelity_energy(x, self.target, self.mask_values, self.params.p)
        if self.reg_weight > 0.0:
            if self.kind == "fc":
                v = v + self.reg_weight * theta_energy(x, self.params.p)
            else:
                v = v + self.reg_weight * pairwise_energy(x, self.offsets, self.params.p)
        return v

    def value_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        v, g = fidelity_energy(x, self.target, self.mask_values, self.params.p,
                               need_grad=True)
        if self.reg_weight > 0.0:
            if self.kind == "fc":
                vr, gr = theta_energy(x, self.params.p, need_grad=True)
            else:
                vr, gr = pairwise_energy(x, self.offsets, self.params.p, need_grad=True)
            v = v + self.reg_weight * vr
            g = g + self.reg_weight * gr
        return float(v), g

    def fd_grad(self, x: np.ndarray, step: float) -> np.ndarray:
        return _fd_gradient(self.value, x, step,
                            self.params.z if self.log_mode else None)

    def project(self, x: np.ndarray) -> np.ndarray:
        if self.log_mode:
            return project_log_coeffs(x, self.params.epsilon, self.params.z)
        return project_full_coeffs(x, self.params.epsilon, self.params.z)

    def finish(self, x: np.ndarray) -> TensorField:
        if self.log_mode:
            return from_log_coords(x, self.params.z, self.params.epsilon)
        return TensorField(x, self.params.z)


_FD_CHUNK = 512


def _fd_gradient(value, x: np.ndarray, step: float, ball_z: float | None) -> np.ndarray:
    """Componentwise finite differences of a batched objective evaluator.

    Central differences everywhere except where a perturbation would leave
    the per-pixel log-norm ball of radius ball_z; there the difference is
    one-sided toward the interior.  Perturbed evaluations run in batches of
    _FD_CHUNK coordinates to bound memory.
    """
    n = x.size
    flat = x.reshape(-1)
    f_plus = np.empty(n)
    f_minus = np.empty(n)
    for lo in range(0, n, _FD_CHUNK):
        hi = min(lo + _FD_CHUNK, n)
        rows = np.arange(hi - lo)
        block = np.repeat(flat[None, :], hi - lo, axis=0)
        block[rows, lo + rows] += step
        f_plus[lo:hi] = value(block.reshape((-1,) + x.shape))
        block[rows, lo + rows] -= 2.0 * step
        f_minus[lo:hi] = value(block.reshape((-1,) + x.shape))
    if ball_z is None:
        return ((f_plus - f_minus) / (2.0 * step)).reshape(x.shape)
    # closed-form perturbed norms: ||L +- h e_k||^2 = ||L||^2 +- 2 w_k L_k h + w_k h^2
    base = weighted_norm_sq(x)[..., None]            # (H, W, 1)
    cross = 2.0 * step * (_W3 * x)                   # (H, W, 6)
    wh2 = _W3 * step * step
    ok_plus = (base + cross + wh2 <= ball_z ** 2).reshape(-1)
    ok_minus = (base - cross + wh2 <= ball_z ** 2).reshape(-1)
    if (ok_plus & ok_minus).all():
        return ((f_plus - f_minus) / (2.0 * step)).reshape(x.shape)
    f_zero = float(value(x))
    central = (f_plus - f_minus) / (2.0 * step)
    forward = (f_plus - f_zero) / step
    backward = (f_zero - f_minus) / step
    grad = np.where(ok_plus & ok_minus, central,
                    np.where(ok_minus, backward, forward))
    return grad.reshape(x.shape)


def grad_F_log(log_field: np.ndarray, data, mask, params: FunctionalParams,
               mollifier: Mollifier | None = None) -> np.ndarray:
    """Exact gradient of the log-coordinate objective fidelity + alpha * Phi.

    log_field is a (height, width, 6) array of matrix-log coefficients; data
    is the observed TensorField (or its log coefficients).  The result holds
    the partial derivatives with respect to each independent coefficient, so
    off-diagonal entries carry the Frobenius chain-rule factor 2.
    """
    L = np.asarray(log_field, dtype=np.float64)
    target = log_coeffs(data.coeffs) if isinstance(data, TensorField) else np.asarray(data)
    mask_values = _mask_values(mask, L.shape[-3:-1])
    _, g = fidelity_energy(L, target, mask_values, params.p, need_grad=True)
    if params.alpha > 0.0:
        offsets = phi_kernel_offsets(L.shape[-3], L.shape[-2], params, mollifier)
        _, gr = pairwise_energy(L, offsets, params.p, need_grad=True)
        g = g + params.alpha * gr
    return g


def grad_F_fd(log_field: np.ndarray, data, mask, params: FunctionalParams,
              mollifier: Mollifier | None = None, fd_step: float = 1e-6) -> np.ndarray:
    """Finite-difference gradient of the same objective as grad_F_log.

    Uses only objective evaluations (an independent route from the analytic
    gradient): central differences of step fd_step, falling back to one-sided
    differences where a perturbation would leave the log-norm ball.
    """
    L = np.asarray(log_field, dtype=np.float64)
    target = log_coeffs(data.coeffs) if isinstance(data, TensorField) else np.asarray(data)
    mask_values = _mask_values(mask, L.shape[-3:-1])
    offsets = (phi_kernel_offsets(L.shape[-3], L.shape[-2], params, mollifier)
               if params.alpha > 0.0 else [])

    def value(x):
        v = fidelity_energy(x, target, mask_values, params.p)
        if params.alpha > 0.0:
            v = v + params.alpha * pairwise_energy(x, offsets, params.p)
        return v

    return _fd_gradient(value, L, fd_step, params.z)


def default_init(data: TensorField, mask, params: FunctionalParams) -> TensorField:
    """Observed data with every masked-out pixel replaced by project_full(0)."""
    mask_values = _mask_values(mask, (data.height, data.width))
    coeffs = data.coeffs.copy()
    seed = project_full(np.zeros((3, 3)), params.epsilon, params.z)
    coeffs[~mask_values] = seed.mat.coeffs
    return TensorField(coeffs, max(data.log_bound, params.z))


def solve(data: TensorField, mask, params: FunctionalParams,
          objective: str = "f-log-euclidean",
          config: SolverConfig | None = None,
          init: TensorField | None = None,
          mollifier: Mollifier | None = None) -> tuple[TensorField, SolveReport]:
    """Minimize the chosen objective by projected gradient descent.

    Runs until max_iters, or until an accepted step decreases the objective
    by less than rel_tol * max(1, |objective|), or until the line search
    plateaus at floating-point resolution.  The returned trajectory starts
    at the initial objective and is non-increasing.
    """
    config = config if config is not None else SolverConfig()
    mask_values = _mask_values(mask, (data.height, data.width))
    if init is None:
        init = default_init(data, mask_values, params)
    elif (init.height, init.width) != (data.height, data.width):
        raise ValueError(
            f"init {init.height}x{init.width} does not match data {data.height}x{data.width}"
        )
    started = time.perf_counter()
    pack = _Objective(objective, data, mask_values, params, mollifier)
    x = pack.start(init)
    current = float(pack.value(x))
    trajectory = [current]
    converged = False
    last_accepted_step = config.init_step
    for iteration in range(config.max_iters):
        if config.grad_mode == "analytic":
            _, grad = pack.value_grad(x)
        else:
            grad = pack.fd_grad(x, config.fd_step)
        direction = grad / _W3  # Frobenius-geometry descent direction
        if not np.abs(direction).max() > 0.0:
            converged = True  # exact stationary point of a convex objective
            break
        threshold = config.rel_tol * max(1.0, abs(current))
        step = max(last_accepted_step / config.backtrack_factor, config.init_step)
        accepted = None
        best_trial = np.inf
        best_candidate = None
        for _ in range(_MAX_BACKTRACKS + 1):
            candidate = pack.project(x - step * direction)
            trial = float(pack.value(candidate))
            if trial < best_trial:
                best_trial = trial
                best_candidate = candidate
            pairing = float((grad * (candidate - x)).sum())
            if current - trial >= threshold and trial <= current + config.armijo_c * pairing:
                accepted = (candidate, trial, step)
                break
            step *= config.backtrack_factor
        if accepted is None:
            # no step buys a tolerance-sized decrease: converged (keeping any
            # remaining sub-tolerance improvement), unless every trial ascended
            # beyond floating-point noise, which signals an ill-scaled weight
            if best_trial <= current:
                x = best_candidate
                current = best_trial
                trajectory.append(current)
                converged = True
                break
            if best_trial <= current + _PLATEAU_REL * max(1.0, abs(current)):
                converged = True
                break
            raise LineSearchError(
                f"no acceptable step after {_MAX_BACKTRACKS} backtracks at iteration "
                f"{iteration + 1} (objective {current:.6g}, best trial {best_trial:.6g}); "
                f"the regularization weight may be ill-scaled"
            )
        x, current, last_accepted_step = accepted
        trajectory.append(current)
    result = pack.finish(x)
    report = SolveReport(
        iterations=len(trajectory) - 1,
        objective_trajectory=trajectory,
        final_objective=trajectory[-1],
        converged=converged,
        seconds=time.perf_counter() - started,
    )
    return result, report
