"""Implicit Runge-Kutta and (linearly) implicit BDF steps for

    d/dt (M(t) alpha) + A(alpha; t) alpha = b(t).

Nonlinear stage systems are solved by Newton with the exact Jacobian
``A(alpha) + N(alpha)`` (sparse LU) or by Picard iteration.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, spsolve

from ..assembly import EsfemSystem
from ..linalg import SparseMatrixCSR, cg_solve
from .coefficients import (
    MAX_BDF_ORDER,
    ButcherTableau,
    bdf_coefficients,
    is_stiffly_accurate,
    radau_iia,
)

log = logging.getLogger(__name__)

__all__ = [
    "NonlinearSolveConfig",
    "NonlinearSolverError",
    "IntegrationError",
    "IntegratorSpec",
    "parse_integrator",
    "INTEGRATOR_GRAMMAR",
    "step_bdf_implicit",
    "step_bdf_linearly_implicit",
    "step_rk_implicit",
    "Trajectory",
    "integrate",
]

INTEGRATOR_GRAMMAR = '"be" | "bdf<k>" | "libdf<k>" (k = 1..5) | "radau<s>" (s = 1..3)'


@dataclass(frozen=True)
class NonlinearSolveConfig:
    strategy: str = "newton"
    rel_tol: float = 1e-10
    max_iter: int = 50

    def __post_init__(self):
        if self.strategy not in ("newton", "picard"):
            raise ValueError(f"unknown nonlinear strategy {self.strategy!r} (newton or picard)")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


class NonlinearSolverError(RuntimeError):
    def __init__(self, message: str, trace: Sequence[float] = ()):
        super().__init__(message)
        self.trace = list(trace)


class IntegrationError(RuntimeError):
    def __init__(self, message: str, step: int, time: float):
        super().__init__(f"step {step} (t = {time:.6g}): {message}")
        self.step = step
        self.time = time


@dataclass(frozen=True)
class IntegratorSpec:
    kind: str  # "bdf", "libdf" or "radau"
    order: int

    @property
    def name(self) -> str:
        return f"{self.kind}{self.order}"


def parse_integrator(text: str) -> IntegratorSpec:
    s = text.strip().lower()
    if s == "be":
        return IntegratorSpec("bdf", 1)
    m = re.fullmatch(r"(bdf|libdf|radau)(\d+)", s)
    if not m:
        raise ValueError(f"unknown integrator {text!r}; grammar: {INTEGRATOR_GRAMMAR}")
    kind, order = m.group(1), int(m.group(2))
    if kind in ("bdf", "libdf") and not 1 <= order <= MAX_BDF_ORDER:
        raise ValueError(f"order {order} not supported; BDF methods are covered for k <= {MAX_BDF_ORDER}")
    if kind == "radau" and not 1 <= order <= 3:
        raise ValueError(f"radau{order} not available; stages s = 1..3")
    return IntegratorSpec(kind, order)


def _lumped(M: SparseMatrixCSR) -> np.ndarray:
    return np.asarray(M.scipy.sum(axis=1)).ravel()


def _wnorm(v: np.ndarray, w: np.ndarray) -> float:
    # weighted by the inverse lumped mass, equivalent to the M^{-1} norm
    return float(np.sqrt(np.sum(v * v / w)))


def _linear_solve(J: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    """Solve a Newton system: a short Jacobi-preconditioned GMRES run, which
    suffices when the mass term dominates, with sparse LU as fallback."""
    J = sp.csr_matrix(J)
    d = J.diagonal()
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros_like(rhs)
    if np.all(d != 0):
        inv_d = 1.0 / d
        prec = LinearOperator(J.shape, matvec=lambda x: inv_d * x, dtype=float)
        x, info = gmres(J, rhs, rtol=1e-12, atol=0.0, M=prec, restart=30, maxiter=1)
        if info == 0 and np.linalg.norm(J @ x - rhs) <= 1e-11 * bnorm:
            return x
    return spsolve(J.tocsc(), rhs)


def _newton_loop(residual: Callable, jacobian: Callable, x0: np.ndarray, rhs_norm: float,
                 weights: np.ndarray, config: NonlinearSolveConfig, picard_solve: Callable | None = None):
    x = x0.copy()
    trace = []
    F = residual(x)
    for it in range(config.max_iter + 1):
        fn = _wnorm(F, weights)
        trace.append(fn)
        if fn <= config.rel_tol * rhs_norm or fn == 0.0:
            return x, it
        if it == config.max_iter:
            break
        if config.strategy == "picard" and picard_solve is not None:
            x_new = picard_solve(x)
            dx = x_new - x
        else:
            dx = _linear_solve(jacobian(x), -F)
            x_new = x + dx
        if not np.all(np.isfinite(x_new)):
            raise NonlinearSolverError("non-finite iterate", trace)
        x = x_new
        F = residual(x)
        # update below rounding level: no further progress possible
        if np.linalg.norm(dx) <= 1e-15 * max(np.linalg.norm(x), 1e-300):
            trace.append(_wnorm(F, weights))
            return x, it + 1
    raise NonlinearSolverError(
        f"{config.strategy} did not converge in {config.max_iter} iterations "
        f"(residual {trace[-1]:.3e}, target {config.rel_tol * rhs_norm:.3e})",
        trace,
    )


def _bdf_rhs(system: EsfemSystem, history, t_n: float, tau: float, delta: np.ndarray) -> np.ndarray:
    k = len(delta) - 1
    rhs = system.load(t_n).copy()
    for j in range(1, k + 1):
        rhs -= (delta[j] / tau) * (system.mass(t_n - j * tau) @ history[-j])
    return rhs


def _check_history(history, k: int, n: int):
    if len(history) < k:
        raise ValueError(f"BDF{k} needs {k} previous values, got {len(history)}")
    for a in history[-k:]:
        if np.shape(a) != (n,):
            raise ValueError("history vector has wrong length")


def step_bdf_implicit(system: EsfemSystem, history: Sequence[np.ndarray], t_n: float, tau: float,
                      k: int | None = None, config: NonlinearSolveConfig = NonlinearSolveConfig()) -> np.ndarray:
    """One fully implicit BDF step; ``history`` holds alpha_{n-k}, ..., alpha_{n-1}."""
    if tau <= 0:
        raise ValueError("step size must be positive")
    k = len(history) if k is None else k
    _check_history(history, k, system.n)
    coef = bdf_coefficients(k)
    delta = coef.delta
    M_n = system.mass(t_n)
    rhs = _bdf_rhs(system, history, t_n, tau, delta)
    weights = _lumped(M_n)
    D = (delta[0] / tau) * M_n

    def residual(x):
        return D @ x + system.nonlinear_stiffness(t_n, x) @ x - rhs

    def jacobian(x):
        J = D + system.nonlinear_stiffness(t_n, x) + system.newton_correction(t_n, x)
        return J.scipy

    def picard(x):
        return cg_solve(D + system.nonlinear_stiffness(t_n, x), rhs, tol=1e-14, x0=x)

    x0 = sum(g * a for g, a in zip(coef.gamma, reversed(history[-k:])))
    x, _ = _newton_loop(residual, jacobian, x0, _wnorm(rhs, weights), weights, config, picard)
    return x


def step_bdf_linearly_implicit(system: EsfemSystem, history: Sequence[np.ndarray], t_n: float, tau: float,
                               k: int | None = None, cg_tol: float = 1e-13) -> np.ndarray:
    """BDF step with the coefficient frozen at the order-k extrapolation."""
    if tau <= 0:
        raise ValueError("step size must be positive")
    k = len(history) if k is None else k
    _check_history(history, k, system.n)
    coef = bdf_coefficients(k)
    extrap = sum(g * a for g, a in zip(coef.gamma, reversed(history[-k:])))
    rhs = _bdf_rhs(system, history, t_n, tau, coef.delta)
    lhs = (coef.delta[0] / tau) * system.mass(t_n) + system.nonlinear_stiffness(t_n, extrap)
    return cg_solve(lhs, rhs, tol=cg_tol, x0=history[-1])


def step_rk_implicit(system: EsfemSystem, alpha_n: np.ndarray, t_n: float, tau: float,
                     tableau: ButcherTableau, config: NonlinearSolveConfig = NonlinearSolveConfig()) -> np.ndarray:
    """One step of a stiffly accurate implicit Runge-Kutta method.

    Stage equations, with W the inverse of the coefficient matrix:
        (1/tau) sum_j W_ij (M_nj Y_j - M_n alpha_n) + A(Y_i) Y_i = b(t_n + c_i tau)
    The step result is the last stage.
    """
    if tau <= 0:
        raise ValueError("step size must be positive")
    if not is_stiffly_accurate(tableau):
        raise ValueError(f"tableau {tableau.name} is not stiffly accurate")
    try:
        W = np.linalg.inv(tableau.A)
    except np.linalg.LinAlgError as exc:
        raise NonlinearSolverError("singular Runge-Kutta coefficient matrix") from exc
    s, n = tableau.s, system.n
    times = [t_n + c * tau for c in tableau.c]
    M_n = system.mass(t_n)
    Ms = [system.mass(ti) for ti in times]
    Ma = M_n @ alpha_n
    rhs = np.concatenate([system.load(times[i]) + (W[i].sum() / tau) * Ma for i in range(s)])
    weights = np.concatenate([_lumped(Mi) for Mi in Ms])

    def split(Y):
        return [Y[i * n:(i + 1) * n] for i in range(s)]

    def residual(Y):
        Ys = split(Y)
        MY = [Ms[j] @ Ys[j] for j in range(s)]
        out = [
            sum(W[i, j] * MY[j] for j in range(s)) / tau + system.nonlinear_stiffness(times[i], Ys[i]) @ Ys[i]
            for i in range(s)
        ]
        return np.concatenate(out) - rhs

    def block_matrix(Y, newton: bool):
        Ys = split(Y)
        blocks = [[None] * s for _ in range(s)]
        for i in range(s):
            for j in range(s):
                B = (W[i, j] / tau) * Ms[j]
                if i == j:
                    B = B + system.nonlinear_stiffness(times[i], Ys[i])
                    if newton:
                        B = B + system.newton_correction(times[i], Ys[i])
                blocks[i][j] = B.scipy
        return sp.bmat(blocks, format="csr")

    def picard(Y):
        # Picard step: freeze A(Y_i) and solve the linear stage system
        return _linear_solve(block_matrix(Y, newton=False), rhs)

    Y0 = np.tile(alpha_n, s)
    Y, _ = _newton_loop(residual, lambda Y: block_matrix(Y, True), Y0, _wnorm(rhs, weights), weights,
                        config, picard)
    return Y[(s - 1) * n:].copy()


@dataclass
class Trajectory:
    """Accepted steps of one integration run (possibly thinned by ``save_every``)."""

    times: list[float] = field(default_factory=list)
    alphas: list[np.ndarray] = field(default_factory=list)
    tau: float = 0.0
    integrator: str = ""

    def __len__(self):
        return len(self.times)

    def final(self) -> np.ndarray:
        return self.alphas[-1]


def integrate(
    system: EsfemSystem,
    integrator: str | IntegratorSpec,
    tau: float,
    T: float,
    alpha0: np.ndarray,
    config: NonlinearSolveConfig = NonlinearSolveConfig(),
    start: str = "radau2",
    save_every: int = 1,
    observer: Callable[[int, float, np.ndarray], None] | None = None,
) -> Trajectory:
    """Integrate from t = 0 to T with uniform steps.

    BDF methods with k > 1 take their first k - 1 values from Radau IIA (s=2)
    steps of the same size, or from the interpolated exact solution with
    ``start="exact"``. ``observer(n, t_n, alpha_n)`` sees every step, also
    the ones not stored.
    """
    spec = parse_integrator(integrator) if isinstance(integrator, str) else integrator
    if tau <= 0 or T <= 0:
        raise ValueError("tau and T must be positive")
    n_steps = int(round(T / tau))
    if n_steps < 1 or abs(n_steps * tau - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"tau = {tau} does not divide T = {T}")
    if start not in ("radau2", "exact"):
        raise ValueError("start must be 'radau2' or 'exact'")
    alpha0 = np.asarray(alpha0, dtype=float)
    if alpha0.shape != (system.n,):
        raise ValueError(f"initial data has shape {alpha0.shape}, expected ({system.n},)")

    traj = Trajectory(tau=tau, integrator=spec.name)
    traj.times.append(0.0)
    traj.alphas.append(alpha0.copy())
    if observer is not None:
        observer(0, 0.0, alpha0)

    k = spec.order if spec.kind in ("bdf", "libdf") else 0
    tableau = radau_iia(spec.order) if spec.kind == "radau" else None
    starter = radau_iia(2)
    history = [alpha0.copy()]
    for n in range(1, n_steps + 1):
        t_prev, t_n = (n - 1) * tau, n * tau
        try:
            if tableau is not None:
                alpha = step_rk_implicit(system, history[-1], t_prev, tau, tableau, config)
            elif n < k:
                if start == "exact":
                    alpha = system.exact_nodal(t_n)
                else:
                    alpha = step_rk_implicit(system, history[-1], t_prev, tau, starter, config)
            elif spec.kind == "bdf":
                alpha = step_bdf_implicit(system, history, t_n, tau, k, config)
            else:
                alpha = step_bdf_linearly_implicit(system, history, t_n, tau, k)
        except Exception as exc:
            raise IntegrationError(str(exc), n, t_n) from exc
        history.append(alpha)
        if len(history) > max(k, 1):
            history.pop(0)
        if observer is not None:
            observer(n, t_n, alpha)
        if n % save_every == 0 or n == n_steps:
            traj.times.append(t_n)
            traj.alphas.append(alpha)
    log.debug("integrated %s: %d steps of %.3g", spec.name, n_steps, tau)
    return traj

