"""Decay paths and composite Lyapunov functions for finite networks.

A decay path for a gain operator Gamma is a vector of K-infinity curves
sigma with Gamma(sigma(r)) <= sigma(r) for every level r; it is the
scaffold from which a network Lyapunov function V(x) = max_i
sigma_i^{-1}(V_i(x_i)) is assembled.  This module constructs such paths
(two-system geometric midpoint, rays through a point of strict decay),
validates candidates on grids, composes subsystem Lyapunov evaluators,
and audits the composite function along sampled trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compfun import KFun, compose, fmul, identity, inverse, linear, power
from .errors import ClassError, DomainError, InfeasibleError, ShapeError
from .gainops import GainOperator, apply as gain_apply, linear_gain_matrix
from .reports import DissipationReport, Violation

__all__ = [
    "OmegaPath",
    "PathVerdict",
    "two_system_path",
    "path_from_point",
    "validate_path",
    "CompositeLF",
    "compose_lyapunov",
    "dissipation_audit",
]

FEASIBILITY_GRID = np.geomspace(1e-9, 1e9, 64)


@dataclass
class OmegaPath:
    """Componentwise K-infinity path with a certified decay relation."""

    sigma: tuple  # tuple[KFun]
    mode: str = "non-strict"  # or "strict"
    grid: np.ndarray = field(default_factory=lambda: FEASIBILITY_GRID.copy())
    validated: bool = False
    worst_margin: float = math.nan
    lipschitz: tuple = ()  # per-component (c, C) estimates

    @property
    def n(self) -> int:
        return len(self.sigma)

    def at(self, r: float) -> np.ndarray:
        return np.array([s(r) for s in self.sigma])


@dataclass(frozen=True)
class PathVerdict:
    ok: bool
    worst_margin: float
    worst_r: float | None
    lipschitz: tuple


def _require_kinf(fs, what):
    for f in fs:
        if not isinstance(f, KFun) or f.cls != "Kinf":
            raise ClassError(f"{what} must be K-infinity functions")


def two_system_path(chi12: KFun, chi21: KFun,
                    grid=FEASIBILITY_GRID) -> OmegaPath:
    """Path for the 2-system operator (s1, s2) -> (chi12(s2), chi21(s1)).

    Requires chi12 o chi21 < id on the probe grid.  The second component
    is the geometric midpoint of the feasibility band [chi21, chi12^{-1}],
    which keeps symmetric margins on both constraints.
    """
    _require_kinf([chi12], "chi12")
    if chi21.cls not in ("K", "Kinf"):
        raise ClassError("chi21 must be class K")
    grid = np.asarray(grid, dtype=float)
    comp = chi12(chi21(grid))
    bad = comp >= grid
    if np.any(bad):
        r = float(grid[int(np.argmax(bad))])
        raise InfeasibleError(
            f"small-gain probe fails at r={r:.6g}: chi12(chi21(r)) >= r",
            witness=r,
        )
    sigma2 = compose(power(1.0, 0.5), fmul(chi21, inverse(chi12)))
    path = OmegaPath((identity(), sigma2))
    op = _two_system_operator(chi12, chi21)
    verdict = validate_path(op, path, grid)
    if not verdict.ok:
        raise InfeasibleError(
            f"constructed path failed validation (margin {verdict.worst_margin:.3g})"
        )
    return path


def _two_system_operator(chi12: KFun, chi21: KFun) -> GainOperator:
    from .gainops import gain_matrix, max_operator

    return max_operator(gain_matrix(2, {(0, 1): chi12, (1, 0): chi21}))


def path_from_point(op: GainOperator, s0, lam: float) -> OmegaPath:
    """Ray path t -> t*s0 from a point of strict decay Gamma(s0) <= lam*s0.

    Needs linear gains (homogeneity carries the pointwise inequality to
    the whole ray).
    """
    if linear_gain_matrix(op) is None:
        raise ClassError("path_from_point needs linear gains")
    if not (0 < lam < 1):
        raise DomainError("lam must lie in (0, 1)")
    s0 = np.asarray(s0, dtype=float)
    if s0.shape != (op.n,):
        raise ShapeError(f"s0 must have length {op.n}")
    if np.any(s0 <= 0):
        raise DomainError("s0 must be strictly positive")
    img = gain_apply(op, s0)
    viol = img > lam * s0
    if np.any(viol):
        i = int(np.argmax(viol))
        raise InfeasibleError(
            f"decay check fails at component {i}: "
            f"Gamma(s0)_{i} = {img[i]:.6g} > lam*s0_{i} = {lam * s0[i]:.6g}",
            witness=i,
        )
    sigma = tuple(linear(float(c)) for c in s0)
    margin = float((1.0 - lam) * s0.min())
    path = OmegaPath(sigma, mode="strict", validated=True, worst_margin=margin)
    path.lipschitz = tuple((1.0 / c, 1.0 / c) for c in s0)
    return path


def _lipschitz_estimates(sig_inv_vals: np.ndarray, grid: np.ndarray):
    """Divided-difference bounds for sigma_i^{-1} on dyadic subintervals."""
    diffs = np.abs(np.diff(sig_inv_vals)) / np.diff(grid)
    pos = diffs[diffs > 0]
    if pos.size == 0:
        return (0.0, 0.0)
    return (float(pos.min()), float(pos.max()))


def validate_path(op: GainOperator, path: OmegaPath,
                  r_grid=None) -> PathVerdict:
    """Check Gamma(sigma(r)) <= sigma(r) on the grid and estimate local
    two-sided Lipschitz bounds of the inverse components.  Marks the path
    validated when the decay relation holds everywhere."""
    _require_kinf(path.sigma, "path components")
    if path.n != op.n:
        raise ShapeError("path dimension must match the operator")
    grid = np.asarray(r_grid if r_grid is not None else path.grid, dtype=float)
    worst = math.inf
    worst_r = None
    for r in grid:
        s = path.at(float(r))
        img = gain_apply(op, s)
        margin = float(np.min(s - img))
        if margin < worst:
            worst, worst_r = margin, float(r)
    lip = []
    for s in path.sigma:
        inv = inverse(s)
        vals = np.array([inv(float(v)) for v in s(grid)])
        lip.append(_lipschitz_estimates(vals, s(grid)))
    ok = worst >= 0.0 if path.mode == "non-strict" else worst > 0.0
    path.validated = bool(ok)
    path.worst_margin = float(worst)
    path.lipschitz = tuple(lip)
    path.grid = grid
    return PathVerdict(bool(ok), float(worst), worst_r, tuple(lip))


@dataclass(frozen=True)
class CompositeLF:
    """V(x) = max_i sigma_i^{-1}(V_i(x_i)) with composite external gain
    chi(r) = max_i sigma_i^{-1}(chi_i(r))."""

    v_evals: tuple  # callables on subsystem state slices
    path: OmegaPath
    external_gains: tuple  # KFun | None per subsystem

    @property
    def n(self) -> int:
        return len(self.v_evals)

    def value(self, xs) -> float:
        if len(xs) != self.n:
            raise ShapeError(f"need {self.n} subsystem states")
        best = 0.0
        for ve, sig, x in zip(self.v_evals, self._inverses, xs):
            best = max(best, sig(float(ve(x))))
        return best

    def chi(self, r: float) -> float:
        if r < 0:
            raise DomainError("gain argument must be nonnegative")
        best = 0.0
        for g, sig in zip(self.external_gains, self._inverses):
            if g is not None:
                best = max(best, sig(g(r)))
        return best

    @property
    def _inverses(self):
        return tuple(inverse(s) for s in self.path.sigma)


def compose_lyapunov(v_evals, path: OmegaPath, external_gains=None) -> CompositeLF:
    """Assemble the composite Lyapunov evaluator from subsystem evaluators
    and a validated decay path."""
    if not path.validated:
        raise ClassError(
            "path has not been validated; run validate_path against the "
            "network's gain operator first"
        )
    v_evals = tuple(v_evals)
    if external_gains is None:
        external_gains = (None,) * len(v_evals)
    external_gains = tuple(external_gains)
    if len(external_gains) != len(v_evals):
        raise ShapeError("one external gain (or None) per subsystem")
    if len(v_evals) != path.n:
        raise ShapeError("one evaluator per path component")
    return CompositeLF(v_evals, path, external_gains)


def dissipation_audit(clf: CompositeLF, times, sub_states, u_norm=0.0,
                      margin: float = 0.0, truncated: bool = False,
                      warning: str = "") -> DissipationReport:
    """Forward-difference decrease audit of the composite function.

    At each sample with V(x(t)) >= chi(u_norm(t)), the Dini estimate
    (V(t+dt) - V(t))/dt must not exceed -margin, up to the discretization
    tolerance max(1e-8, 1e-2 |V|).
    """
    times = np.asarray(times, dtype=float)
    if times.size != len(sub_states):
        raise ShapeError("one state tuple per sample")
    if times.size < 2:
        raise ShapeError("need at least two samples")
    dts = np.diff(times)
    if np.any(np.abs(dts - dts[0]) > 1e-9 * max(abs(dts[0]), 1e-12)):
        raise DomainError("trajectory must be sampled at uniform dt")
    dt = float(dts[0])
    u_arr = np.broadcast_to(np.asarray(u_norm, dtype=float), times.shape)
    vals = np.array([clf.value(x) for x in sub_states])
    violations = []
    checked = 0
    worst = math.inf
    for k in range(times.size - 1):
        if vals[k] < clf.chi(float(u_arr[k])):
            continue  # below the input level set: implication is vacuous
        checked += 1
        rate = (vals[k + 1] - vals[k]) / dt
        tol = max(1e-8, 1e-2 * abs(vals[k]))
        gap = (-margin + tol) - rate
        worst = min(worst, gap)
        if rate > -margin + tol:
            violations.append(Violation(float(times[k]), float(vals[k]),
                                        float(-margin + tol)))
    if checked == 0:
        worst = math.inf
    return DissipationReport(
        samples=int(times.size),
        checked=checked,
        violations=tuple(violations),
        worst_margin=float(worst) if checked else math.inf,
        truncated=truncated,
        warning=warning,
    )
