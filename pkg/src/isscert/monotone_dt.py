"""Discrete-time monotone systems x(k+1) <= A(x(k)) + u(k) on the
nonnegative orthant: exact simulation of the equality branch, exponential
ISS fitting, sampled falsification of monotone bounded invertibility, and
the Lyapunov construction for homogeneous subadditive operators.

The base operator may be a GainOperator, a nonnegative matrix (read as a
linear sum-form operator), or any callable on nonnegative vectors.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .compfun import KFun
from .errors import DomainError, InfeasibleError, ShapeError, UnsupportedFormError
from .gainops import GainOperator, apply as gain_apply, linear_gain_matrix, \
    spectral_radius

__all__ = [
    "DtTrajectory",
    "simulate",
    "EissFit",
    "eiss_fit",
    "MbiVerdict",
    "mbi_probe",
    "DtLyapunov",
    "build_lyapunov",
]


def _as_apply(op):
    """Normalize the operator argument to (apply_fn, dim_or_None, matrix)."""
    if isinstance(op, GainOperator):
        return (lambda s: gain_apply(op, s)), op.n, linear_gain_matrix(op)
    if isinstance(op, np.ndarray):
        a = np.asarray(op, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeError("matrix operator must be square")
        if np.any(a < 0):
            raise DomainError("matrix operator must be nonnegative")
        return (lambda s: a @ s), a.shape[0], a
    if callable(op):
        return op, None, None
    raise UnsupportedFormError(f"cannot interpret operator {op!r}")


@dataclass(frozen=True)
class DtTrajectory:
    """States x(0..K) and inputs u(0..K-1) of one run (equality branch)."""

    states: np.ndarray  # (K+1, n)
    inputs: np.ndarray  # (K, n)
    mode: str = "equality"

    @property
    def steps(self) -> int:
        return self.states.shape[0] - 1

    def sup_norms(self) -> np.ndarray:
        return np.max(self.states, axis=1)

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"] + [f"x_{i+1}" for i in range(n)]
                       + [f"u_{i+1}" for i in range(n)])
            for k in range(self.states.shape[0]):
                u = self.inputs[k] if k < self.inputs.shape[0] else np.zeros(n)
                w.writerow([k] + [repr(float(v)) for v in self.states[k]]
                           + [repr(float(v)) for v in u])


def _input_sequence(u, steps: int, n: int) -> np.ndarray:
    if u is None:
        return np.zeros((steps, n))
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        out = np.full((steps, n), float(u))
    elif u.ndim == 1 and u.shape[0] == n:
        out = np.tile(u, (steps, 1))
    elif u.ndim == 1 and n == 1:
        out = u[:steps, None]
    elif u.ndim == 2:
        out = u[:steps]
    else:
        raise ShapeError("cannot broadcast input sequence")
    if out.shape != (steps, n):
        raise ShapeError(f"need {steps} input samples of dimension {n}")
    if np.any(out < 0):
        raise DomainError("inputs must be componentwise nonnegative")
    return out


def simulate(op, x0, u, steps: int) -> DtTrajectory:
    """Exact iteration of x(k+1) = A(x(k)) + u(k)."""
    apply_fn, n, _ = _as_apply(op)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if n is not None and x0.shape != (n,):
        raise ShapeError(f"x0 must have length {n}")
    if np.any(x0 < 0):
        raise DomainError("x0 must be componentwise nonnegative")
    n = x0.shape[0]
    us = _input_sequence(u, steps, n)
    states = np.empty((steps + 1, n))
    states[0] = x0
    for k in range(steps):
        states[k + 1] = np.asarray(apply_fn(states[k])) + us[k]
    return DtTrajectory(states, us)


@dataclass(frozen=True)
class EissFit:
    ok: bool
    worst_margin: float
    worst_k: int
    bounds: np.ndarray


def eiss_fit(traj: DtTrajectory, m_const: float, a: float,
             gamma: KFun | float | None) -> EissFit:
    """Audit ||x(k)|| <= M ||x(0)|| a^k + gamma(||u||_inf) at every step."""
    if m_const < 1:
        raise DomainError("M must be at least 1")
    if not (0 < a < 1):
        raise DomainError("a must lie in (0, 1)")
    norms = traj.sup_norms()
    u_norm = float(np.max(traj.inputs)) if traj.inputs.size else 0.0
    if gamma is None:
        g = 0.0
    elif isinstance(gamma, KFun):
        g = gamma(u_norm)
    else:
        g = float(gamma) * u_norm
    ks = np.arange(norms.size)
    bounds = m_const * norms[0] * a ** ks + g
    margins = bounds - norms
    worst = int(np.argmin(margins))
    return EissFit(bool(margins[worst] >= -1e-12 * (1 + bounds[worst])),
                   float(margins[worst]), worst, bounds)


@dataclass(frozen=True)
class MbiVerdict:
    verdict: str  # "pass-sampled" | "fail"
    witness: tuple | None
    trials: int
    seed: int
    note: str = (
        "falsification probe only; samples can refute but never prove the "
        "monotone bounded invertibility property"
    )


def mbi_probe(op, trials: int, xi: KFun, seed: int = 0,
              amplitude: float = 10.0, dim: int | None = None) -> MbiVerdict:
    """Search for (v, w) with (id - A)(v) <= w but ||v|| > xi(||w||).

    Draws random v >= 0 and slack rho >= 0, sets w = clip((id - A)(v), 0)
    + rho so the premise holds by construction, then tests the bound.
    """
    if xi.cls != "Kinf":
        raise DomainError("xi must be a K-infinity function")
    apply_fn, n, _ = _as_apply(op)
    if n is None:
        if dim is None:
            raise ShapeError("dim is required for a bare callable operator")
        n = dim
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        v = rng.uniform(0.0, amplitude, n)
        rho = rng.uniform(0.0, amplitude, n) * rng.choice(
            [0.0, 1e-6, 1e-3, 1.0], p=[0.25, 0.25, 0.25, 0.25]
        )
        w = np.maximum(v - np.asarray(apply_fn(v)), 0.0) + rho
        if float(np.max(v)) > xi(float(np.max(w))) * (1 + 1e-12) + 1e-300:
            return MbiVerdict("fail", (v, w), t + 1, seed)
    return MbiVerdict("pass-sampled", None, trials, seed)


@dataclass(frozen=True)
class DtLyapunov:
    """V(x) = max_{n < depth} eta^n ||A^n(x)||_inf with the sandwich
    ||x|| <= V(x) <= psi ||x|| and dissipation
    V(A(x) + u) <= V(x)/eta + psi ||u||_inf."""

    op: object
    eta: float
    depth: int
    psi: float
    l1: float = 1.0

    @property
    def l2(self) -> float:
        return self.psi

    def value(self, x) -> float:
        apply_fn, _, _ = _as_apply(self.op)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x < 0):
            raise DomainError("state must be nonnegative")
        best = float(np.max(x))
        cur = x
        scale = 1.0
        for _ in range(1, self.depth):
            cur = np.asarray(apply_fn(cur))
            scale *= self.eta
            best = max(best, scale * float(np.max(cur)))
        return best


def _operator_radius(op) -> float:
    if isinstance(op, GainOperator):
        return spectral_radius(op)
    if isinstance(op, np.ndarray):
        return float(np.max(np.abs(np.linalg.eigvals(np.asarray(op, float)))))
    raise UnsupportedFormError(
        "build_lyapunov needs a GainOperator with linear gains or a matrix"
    )


def build_lyapunov(op, eta: float, max_depth: int = 64, seed: int = 0,
                   check_samples: int = 32) -> DtLyapunov:
    """Lyapunov function for a homogeneous subadditive monotone operator
    with eta * r(A) < 1.

    The truncation depth N is certified from the all-ones trajectory: once
    eta^n ||A^n(1)|| <= 1 on a full window [N, 2N), submultiplicativity
    pushes the bound to every n >= N, so the supremum over all powers is
    attained below N.  psi = max_{n<N} (eta*C)^n with C = ||A(1)||.
    """
    if eta <= 1.0:
        raise DomainError("eta must exceed 1")
    r = _operator_radius(op)
    if eta * r >= 1.0:
        raise InfeasibleError(f"eta * r = {eta * r:.6g} >= 1: construction infeasible")
    apply_fn, n, _ = _as_apply(op)
    ones = np.ones(n)
    m = [1.0]
    cur = ones
    for _ in range(max_depth):
        cur = np.asarray(apply_fn(cur))
        m.append(eta ** len(m) * float(np.max(cur)))
    big_c = float(np.max(np.asarray(apply_fn(ones))))
    depth = None
    for cand in range(1, max_depth // 2 + 1):
        if all(m[j] <= 1.0 for j in range(cand, 2 * cand)):
            depth = cand
            break
    if depth is None:
        raise InfeasibleError(
            f"eta^n ||A^n(1)|| did not drop below 1 within depth {max_depth}; "
            "increase max_depth or lower eta"
        )
    psi = max((eta * big_c) ** k for k in range(depth))
    lf = DtLyapunov(op, eta, depth, psi)
    # spot-check the dissipation inequality on seeded samples
    rng = np.random.default_rng(seed)
    for _ in range(check_samples):
        x = rng.uniform(0.0, 5.0, n)
        u = rng.uniform(0.0, 2.0, n)
        lhs = lf.value(np.asarray(apply_fn(x)) + u)
        rhs = lf.value(x) / eta + psi * float(np.max(u))
        if lhs > rhs * (1 + 1e-9) + 1e-12:
            raise AssertionError(
                f"dissipation check failed: {lhs:.12g} > {rhs:.12g}"
            )
    return lf
