"""Finite-dimensional and diagonal linear models: exponential-stability
constants, the two canonical Lyapunov constructions, and the exponential
ISS gain that comes with them.

Two constructions are provided.  The quadratic one integrates the squared
propagator, which for a dense generator reduces to the Lyapunov equation
A^T P + P A = -I; the sup construction V(x) = max_{s>=0} e^{gamma*s}
||e^{As} x|| defines an equivalent norm with dissipation rate gamma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DomainError, InfeasibleError, ModelError, ShapeError

__all__ = [
    "LinModel",
    "dense_model",
    "diagonal_model",
    "decay_pair",
    "QuadLyap",
    "quad_lyap",
    "SupLyap",
    "sup_lyap",
    "EissGain",
    "eiss_gain",
    "simulate_linear",
]


@dataclass(frozen=True)
class LinModel:
    """Dense generator or strictly negative diagonal spectrum, plus an
    input matrix (possibly None)."""

    a: np.ndarray | None
    spectrum: np.ndarray | None
    b: np.ndarray | None

    @property
    def diagonal(self) -> bool:
        return self.spectrum is not None

    @property
    def dim(self) -> int:
        return self.spectrum.size if self.diagonal else self.a.shape[0]

    def propagator(self, t: float) -> np.ndarray:
        if self.diagonal:
            return np.diag(np.exp(self.spectrum * t))
        return scipy.linalg.expm(self.a * t)


def dense_model(a, b=None) -> LinModel:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("generator must be a square matrix")
    if not np.all(np.isfinite(a)):
        raise DomainError("generator entries must be finite")
    if b is not None:
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if b.shape[0] != a.shape[0]:
            b = b.T
        if b.shape[0] != a.shape[0]:
            raise ShapeError("input matrix rows must match the state dimension")
    return LinModel(a, None, b)


def diagonal_model(spectrum, b=None) -> LinModel:
    lam = np.asarray(spectrum, dtype=float)
    if lam.ndim != 1 or np.any(lam >= 0):
        raise ModelError("diagonal spectrum must be strictly negative")
    if b is not None:
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if b.shape[0] != lam.size:
            b = b.T
        if b.shape[0] != lam.size:
            raise ShapeError("input matrix rows must match the state dimension")
    return LinModel(None, lam, b)


DECAY_GUARD = 1e-6


def decay_pair(model: LinModel, n_grid: int = 400) -> tuple[float, float]:
    """(M, lambda) with ||e^{At}|| <= M e^{-lambda t}.

    lambda is the spectral abscissa magnitude minus a fixed guard; M comes
    from sampling ||e^{At}|| e^{lambda t} on a log time grid (refined
    once), so it is an upper bound only up to grid density and is reported
    as sampled.  Diagonal models give M = 1 exactly.
    """
    if model.diagonal:
        lam = float(-np.max(model.spectrum)) - DECAY_GUARD
        return 1.0, lam
    eigs = np.linalg.eigvals(model.a)
    abscissa = float(np.max(eigs.real))
    if abscissa >= 0:
        raise ModelError(f"spectral abscissa {abscissa:.6g} >= 0: not "
                         "exponentially stable")
    lam = -abscissa - DECAY_GUARD

    def sample(ts):
        best = 1.0
        for t in ts:
            nrm = float(np.linalg.norm(model.propagator(t), 2))
            best = max(best, nrm * math.exp(lam * t))
        return best

    horizon = max(10.0 / max(lam, 1e-6), 1.0)
    grid = np.geomspace(1e-4, horizon, n_grid)
    m1 = sample(grid)
    fine = np.geomspace(1e-5, horizon * 1.5, 2 * n_grid)
    return max(m1, sample(fine)), lam


@dataclass(frozen=True)
class QuadLyap:
    """x -> x^T P x (dense) or the diagonal weights of the integrated
    squared propagator."""

    p: np.ndarray | None
    weights: np.ndarray | None
    residual: float

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.p is not None:
            return float(x @ self.p @ x)
        return float(np.sum(self.weights * x * x))


def quad_lyap(model: LinModel) -> QuadLyap:
    """Integrated-propagator quadratic form.

    Dense: P solves A^T P + P A = -I.  Diagonal: weights 1/(2|lambda_k|),
    which is the same integral-normalization in the decoupled coordinates.
    """
    if model.diagonal:
        w = 1.0 / (2.0 * np.abs(model.spectrum))
        return QuadLyap(None, w, 0.0)
    a = model.a
    eigs = np.linalg.eigvals(a)
    if np.max(eigs.real) >= 0:
        raise ModelError("not exponentially stable: Lyapunov solve refused")
    n = a.shape[0]
    p = scipy.linalg.solve_continuous_lyapunov(a.T, -np.eye(n))
    p = 0.5 * (p + p.T)
    residual = float(np.linalg.norm(a.T @ p + p @ a + np.eye(n), 2))
    return QuadLyap(p, None, residual)


@dataclass(frozen=True)
class SupLyap:
    """V(x) = max over a sampled horizon of e^{gamma*s} ||e^{As} x||."""

    model: LinModel
    gamma: float
    m_const: float
    s_grid: np.ndarray
    propagators: tuple

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        base = float(np.linalg.norm(x))
        best = base
        best_i = 0
        for i, (s, prop) in enumerate(zip(self.s_grid, self.propagators)):
            v = math.exp(self.gamma * s) * float(np.linalg.norm(prop @ x))
            if v > best:
                best, best_i = v, i
        # one golden refinement pass around the sampled argmax
        if 0 < best_i < self.s_grid.size - 1:
            lo, hi = self.s_grid[best_i - 1], self.s_grid[best_i + 1]

            def g(s):
                return math.exp(self.gamma * s) * float(
                    np.linalg.norm(self.model.propagator(s) @ x)
                )

            for _ in range(30):
                third = (hi - lo) / 3.0
                m1, m2 = lo + third, hi - third
                if g(m1) < g(m2):
                    lo = m1
                else:
                    hi = m2
            best = max(best, g(0.5 * (lo + hi)))
        if not (base - 1e-12 <= best <= self.m_const * base * (1 + 1e-9) + 1e-12):
            raise AssertionError("sup-Lyapunov sandwich violated")
        return best


def sup_lyap(model: LinModel, gamma: float, n_grid: int = 400) -> SupLyap:
    m_const, lam = decay_pair(model)
    if not (0 < gamma < lam):
        raise InfeasibleError(f"gamma must lie in (0, {lam:.6g})")
    s_max = math.log(2.0 * max(m_const, 1.0)) / (lam - gamma) + 1.0
    s_grid = np.linspace(0.0, s_max, n_grid)
    props = tuple(model.propagator(s) for s in s_grid)
    return SupLyap(model, gamma, m_const, s_grid, props)


@dataclass(frozen=True)
class EissGain:
    m_const: float
    lam: float
    gain: float
    validated: bool
    worst_margin: float


def simulate_linear(model: LinModel, x0, u_const, T: float,
                    n_samples: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Exact sampling of xdot = Ax + B*u for a constant input via the
    variation-of-constants formula (matrix-solve form)."""
    x0 = np.asarray(x0, dtype=float)
    times = np.linspace(0.0, T, n_samples)
    a = np.diag(model.spectrum) if model.diagonal else model.a
    if model.b is None or u_const is None:
        drive = None
    else:
        u = np.atleast_1d(np.asarray(u_const, dtype=float))
        drive = model.b @ u
    out = np.empty((n_samples, x0.size))
    for i, t in enumerate(times):
        prop = model.propagator(float(t))
        x = prop @ x0
        if drive is not None:
            # int_0^t e^{A(t-s)} ds * drive = A^{-1} (e^{At} - I) drive
            x = x + np.linalg.solve(a, (prop - np.eye(x0.size)) @ drive)
        out[i] = x
    return times, out


def eiss_gain(model: LinModel, T_check: float | None = None) -> EissGain:
    """Exponential ISS triple (M, lambda, G) with G = M ||B|| / lambda for
    bounded inputs, validated on the constant-ones input."""
    m_const, lam = decay_pair(model)
    if model.b is None:
        return EissGain(m_const, lam, 0.0, True, math.inf)
    b_norm = float(np.linalg.norm(model.b, 2))
    gain = m_const * b_norm / lam
    n = model.dim
    u = np.ones(model.b.shape[1])
    u_norm = float(np.linalg.norm(u))
    x0 = np.ones(n) / math.sqrt(n)
    horizon = T_check if T_check is not None else 10.0 / lam
    times, states = simulate_linear(model, x0, u, horizon)
    worst = math.inf
    ok = True
    for t, x in zip(times, states):
        bound = m_const * math.exp(-lam * t) * float(np.linalg.norm(x0)) \
            + gain * u_norm
        margin = bound - float(np.linalg.norm(x))
        worst = min(worst, margin)
        if margin < -1e-9 * (1 + bound):
            ok = False
    return EissGain(m_const, lam, gain, ok, float(worst))
