"""Comparison-function algebra.

Class-K functions are represented as finite expression trees over a fixed
set of primitives, closed under composition, pointwise max/min, sum,
product, and inversion.  That makes the class tag (K, K-infinity, or
merely positive definite) decidable at construction time and lets every
invariant be probed on a grid.  All values are immutable.

Conventions: class tags are the strings "Kinf", "K", "PD".  A "K" tree is
continuous, zero at zero, strictly increasing; "Kinf" additionally
unbounded; "PD" only continuous, zero at zero and positive for r > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ClassError,
    ConfigError,
    DomainError,
    InfeasibleError,
    ModelError,
    NumericalFailure,
    RangeError,
    UnsupportedFormError,
)

__all__ = [
    "KFun",
    "KLFun",
    "identity",
    "linear",
    "power",
    "saturation",
    "log1p_fun",
    "affine_cap",
    "compose",
    "fmax",
    "fmin",
    "fadd",
    "fmul",
    "inverse",
    "kfun_to_dict",
    "kfun_from_dict",
    "validate_kfun",
    "kl_envelope",
    "comparison_with_inputs",
    "ComparisonAudit",
    "sontag_factor",
    "linear_slope",
]

_PRIMITIVES = ("identity", "linear", "power", "saturation", "log1p", "affine_cap")
_COMBINATORS = ("compose", "max", "min", "add", "mul", "inverse")

# Absolute bisection tolerance for inverse evaluation.
INVERSE_TOL = 1e-12
# Unboundedness is probed on a geometric grid up to this radius.
UNBOUNDED_PROBE = 1e12


@dataclass(frozen=True)
class KFun:
    """Node of a comparison-function expression tree."""

    kind: str
    params: tuple = ()
    children: tuple = ()
    cls: str = "K"

    def __call__(self, r):
        arr = np.asarray(r, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise DomainError("argument must be finite")
        if np.any(arr < 0):
            raise DomainError("comparison functions are defined on [0, inf)")
        out = _eval(self, arr)
        if np.ndim(r) == 0:
            return float(out)
        return out

    def inv(self) -> "KFun":
        return inverse(self)

    def __repr__(self):  # short, for reports
        if self.kind in _PRIMITIVES:
            ps = ",".join(f"{p:g}" for p in self.params)
            return f"{self.kind}({ps})"
        return f"{self.kind}({','.join(map(repr, self.children))})"


def identity() -> KFun:
    return KFun("identity", (), (), "Kinf")


def linear(a: float) -> KFun:
    if not (a > 0 and math.isfinite(a)):
        raise ClassError("linear slope must be positive and finite")
    return KFun("linear", (float(a),), (), "Kinf")


def power(a: float, p: float) -> KFun:
    if not (a > 0 and p > 0 and math.isfinite(a) and math.isfinite(p)):
        raise ClassError("power needs positive finite scale and exponent")
    return KFun("power", (float(a), float(p)), (), "Kinf")


def saturation(a: float) -> KFun:
    """r -> a*r/(1+r); strictly increasing, bounded by a (class K, not Kinf)."""
    if not (a > 0 and math.isfinite(a)):
        raise ClassError("saturation scale must be positive and finite")
    return KFun("saturation", (float(a),), (), "K")


def log1p_fun(a: float) -> KFun:
    if not (a > 0 and math.isfinite(a)):
        raise ClassError("log1p scale must be positive and finite")
    return KFun("log1p", (float(a),), (), "Kinf")


def affine_cap(a: float, cap: float) -> KFun:
    """r -> min(a*r, cap); nondecreasing but not strictly, hence only PD."""
    if not (a > 0 and cap > 0):
        raise ClassError("affine_cap needs positive slope and cap")
    return KFun("affine_cap", (float(a), float(cap)), (), "PD")


def _is_k(f: KFun) -> bool:
    return f.cls in ("K", "Kinf")


def compose(outer: KFun, inner: KFun) -> KFun:
    """outer(inner(r)); requires both factors to be class K at least."""
    if not (_is_k(outer) and _is_k(inner)):
        raise ClassError("compose requires class-K operands")
    cls = "Kinf" if (outer.cls == "Kinf" and inner.cls == "Kinf") else "K"
    return KFun("compose", (), (outer, inner), cls)


def _merge_cls_minmax(kind: str, f: KFun, g: KFun) -> str:
    if not (_is_k(f) and _is_k(g)):
        return "PD"
    if kind == "max":
        return "Kinf" if ("Kinf" in (f.cls, g.cls)) else "K"
    return "Kinf" if (f.cls == "Kinf" and g.cls == "Kinf") else "K"


def fmax(f: KFun, g: KFun) -> KFun:
    return KFun("max", (), (f, g), _merge_cls_minmax("max", f, g))


def fmin(f: KFun, g: KFun) -> KFun:
    return KFun("min", (), (f, g), _merge_cls_minmax("min", f, g))


def fadd(f: KFun, g: KFun) -> KFun:
    if _is_k(f) and _is_k(g):
        cls = "Kinf" if "Kinf" in (f.cls, g.cls) else "K"
    else:
        cls = "PD"
    return KFun("add", (), (f, g), cls)


def fmul(f: KFun, g: KFun) -> KFun:
    if _is_k(f) and _is_k(g):
        cls = "Kinf" if "Kinf" in (f.cls, g.cls) else "K"
    else:
        cls = "PD"
    return KFun("mul", (), (f, g), cls)


def inverse(f: KFun) -> KFun:
    if f.cls != "Kinf":
        raise ClassError("inverse requires a K-infinity tree")
    return KFun("inverse", (), (f,), "Kinf")


def _eval(f: KFun, r: np.ndarray) -> np.ndarray:
    k = f.kind
    if k == "identity":
        return np.array(r, dtype=float, copy=True)
    if k == "linear":
        return f.params[0] * r
    if k == "power":
        a, p = f.params
        return a * np.power(r, p)
    if k == "saturation":
        return f.params[0] * r / (1.0 + r)
    if k == "log1p":
        return f.params[0] * np.log1p(r)
    if k == "affine_cap":
        a, c = f.params
        return np.minimum(a * r, c)
    if k == "compose":
        return _eval(f.children[0], _eval(f.children[1], r))
    if k == "max":
        return np.maximum(_eval(f.children[0], r), _eval(f.children[1], r))
    if k == "min":
        return np.minimum(_eval(f.children[0], r), _eval(f.children[1], r))
    if k == "add":
        return _eval(f.children[0], r) + _eval(f.children[1], r)
    if k == "mul":
        return _eval(f.children[0], r) * _eval(f.children[1], r)
    if k == "inverse":
        flat = np.atleast_1d(r).astype(float)
        out = np.array([_invert_scalar(f.children[0], y) for y in flat])
        return out.reshape(np.shape(r))
    raise UnsupportedFormError(f"unknown node kind {k!r}")


def _invert_scalar(f: KFun, y: float) -> float:
    """Solve f(x) = y by bracketed bisection (f strictly increasing)."""
    if y == 0.0:
        return 0.0
    hi = 1.0
    while float(_eval(f, np.asarray(hi))) < y:
        hi *= 4.0
        if hi > 1e300:
            raise RangeError(f"value {y} above the range of {f!r}")
    lo = 0.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if float(_eval(f, np.asarray(mid))) < y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= INVERSE_TOL:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# serialization (field names fixed in SCHEMA.md)
# ---------------------------------------------------------------------------

def kfun_to_dict(f: KFun) -> dict:
    k = f.kind
    if k == "identity":
        return {"kind": "identity"}
    if k == "linear":
        return {"kind": "linear", "slope": f.params[0]}
    if k == "power":
        return {"kind": "power", "scale": f.params[0], "exponent": f.params[1]}
    if k == "saturation":
        return {"kind": "saturation", "scale": f.params[0]}
    if k == "log1p":
        return {"kind": "log1p", "scale": f.params[0]}
    if k == "affine_cap":
        return {"kind": "affine_cap", "slope": f.params[0], "cap": f.params[1]}
    if k == "compose":
        return {
            "kind": "compose",
            "outer": kfun_to_dict(f.children[0]),
            "inner": kfun_to_dict(f.children[1]),
        }
    if k in ("max", "min", "add", "mul"):
        return {
            "kind": k,
            "left": kfun_to_dict(f.children[0]),
            "right": kfun_to_dict(f.children[1]),
        }
    if k == "inverse":
        return {"kind": "inverse", "inner": kfun_to_dict(f.children[0])}
    raise UnsupportedFormError(f"unknown node kind {k!r}")


def kfun_from_dict(d: dict) -> KFun:
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError("function node must be an object with a 'kind' field")
    k = d["kind"]
    try:
        if k == "identity":
            return identity()
        if k == "linear":
            return linear(d["slope"])
        if k == "power":
            return power(d["scale"], d["exponent"])
        if k == "saturation":
            return saturation(d["scale"])
        if k == "log1p":
            return log1p_fun(d["scale"])
        if k == "affine_cap":
            return affine_cap(d["slope"], d["cap"])
        if k == "compose":
            return compose(kfun_from_dict(d["outer"]), kfun_from_dict(d["inner"]))
        if k == "max":
            return fmax(kfun_from_dict(d["left"]), kfun_from_dict(d["right"]))
        if k == "min":
            return fmin(kfun_from_dict(d["left"]), kfun_from_dict(d["right"]))
        if k == "add":
            return fadd(kfun_from_dict(d["left"]), kfun_from_dict(d["right"]))
        if k == "mul":
            return fmul(kfun_from_dict(d["left"]), kfun_from_dict(d["right"]))
        if k == "inverse":
            return inverse(kfun_from_dict(d["inner"]))
    except KeyError as exc:
        raise ConfigError(f"function node {k!r} missing field {exc}") from exc
    raise ConfigError(f"unknown function node kind {k!r}")


def linear_slope(f: KFun) -> float | None:
    """Slope if the tree is exactly a linear/identity primitive, else None."""
    if f.kind == "identity":
        return 1.0
    if f.kind == "linear":
        return f.params[0]
    return None


def validate_kfun(f: KFun, n_points: int = 128) -> dict:
    """Probe the class invariants on a geometric grid.

    Checks f(0) = 0 exactly and strict increase for K/Kinf tags on
    [1e-9, 1e6]; beyond that, bounded trees may saturate below one float
    ulp, so only nondecrease is required out to 1e12, plus strict tail
    growth for Kinf tags.  The unboundedness probe is a heuristic: a
    bounded function still climbing at 1e12 will pass it.
    """
    if float(f(0.0)) != 0.0:
        raise ClassError(f"{f!r}: value at 0 is {f(0.0)!r}, expected 0")
    grid = np.geomspace(1e-9, 1e6, n_points)
    vals = f(grid)
    tail_grid = np.geomspace(1e6, UNBOUNDED_PROBE, 32)
    tail = f(tail_grid)
    if np.any(vals < 0) or np.any(tail < 0):
        raise ClassError(f"{f!r}: negative value on probe grid")
    report = {"min_gap": None}
    if f.cls in ("K", "Kinf"):
        gaps = np.diff(vals)
        if np.any(gaps <= 0):
            i = int(np.argmin(gaps))
            raise ClassError(
                f"{f!r}: not strictly increasing near r={grid[i]:.3g}"
            )
        # saturated branches wiggle at the ulp level out here; only real
        # decreases count
        resolution = 8.0 * np.spacing(np.maximum(np.abs(tail[:-1]),
                                                 np.abs(tail[1:])))
        if np.any(np.diff(tail) < -resolution):
            raise ClassError(f"{f!r}: decreasing in the tail probe")
        report["min_gap"] = float(gaps.min())
    if f.cls == "Kinf":
        if tail[-1] <= tail[-2]:
            raise ClassError(f"{f!r}: growth stalls before r={UNBOUNDED_PROBE:g}")
    return report


# ---------------------------------------------------------------------------
# KL envelopes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KLFun:
    """Two-argument envelope beta(r, t).

    Either the closed form q(r)*exp(-rate*t), or a table on (r_grid x
    t_grid) evaluated by bilinear interpolation with clamping to the grid
    rectangle (so interpolation never breaks monotonicity).
    """

    form: str  # "exp" | "table"
    q: KFun | None = None
    rate: float | None = None
    r_grid: np.ndarray | None = field(default=None, repr=False)
    t_grid: np.ndarray | None = field(default=None, repr=False)
    values: np.ndarray | None = field(default=None, repr=False)

    def __call__(self, r: float, t: float) -> float:
        if r < 0 or t < 0:
            raise DomainError("beta(r, t) needs r, t >= 0")
        if self.form == "exp":
            return float(self.q(r) * math.exp(-self.rate * t))
        rg, tg, vals = self.r_grid, self.t_grid, self.values
        rc = min(max(r, rg[0]), rg[-1])
        tc = min(max(t, tg[0]), tg[-1])
        if rg.size == 1:
            i, fr = 0, 0.0
            row = slice(0, 1)
        else:
            i = max(min(int(np.searchsorted(rg, rc, side="right")) - 1,
                        len(rg) - 2), 0)
            fr = (rc - rg[i]) / (rg[i + 1] - rg[i])
            row = slice(i, i + 2)
        if tg.size == 1:
            ft = 0.0
            lo = vals[row, 0]
            hi = lo
        else:
            j = max(min(int(np.searchsorted(tg, tc, side="right")) - 1,
                        len(tg) - 2), 0)
            ft = (tc - tg[j]) / (tg[j + 1] - tg[j])
            lo = vals[row, j]
            hi = vals[row, j + 1]
        left = lo * (1 - ft) + hi * ft
        if rg.size == 1:
            return float(left[0])
        return float(left[0] * (1 - fr) + left[1] * fr)


def exp_klfun(q: KFun, rate: float) -> KLFun:
    if not (rate > 0 and math.isfinite(rate)):
        raise ClassError("decay rate must be positive")
    if not _is_k(q):
        raise ClassError("closed-form envelope needs a class-K amplitude")
    return KLFun("exp", q=q, rate=float(rate))


def _check_grid(g, name):
    g = np.asarray(g, dtype=float)
    if g.ndim != 1 or g.size < 1 or not np.all(np.isfinite(g)):
        raise DomainError(f"{name} must be a finite 1-D grid")
    if g.size > 1 and np.any(np.diff(g) <= 0):
        raise DomainError(f"{name} must be strictly increasing")
    return g


def _probe_pd(alpha: KFun, lo: float, hi: float):
    probe = np.geomspace(max(lo, 1e-12), max(hi, 1e-6), 64)
    vals = alpha(probe)
    if np.any(vals <= 0):
        i = int(np.argmin(vals))
        raise ModelError(
            f"decay rate not positive definite: alpha({probe[i]:.3g}) = {vals[i]:.3g}"
        )


def _integrate_flow(alpha: KFun, y0: np.ndarray, t_grid: np.ndarray,
                    forcing=None, rel_tol: float = 1e-8, max_refine: int = 18):
    """Solve y' = -alpha(y) (+ forcing(t)) from y(0) = y0, reporting values
    on t_grid.  Classic RK4 with uniform substeps per grid interval, halved
    until two consecutive refinements agree to rel_tol."""
    y0 = np.asarray(y0, dtype=float)
    tg = t_grid
    if tg[0] != 0.0:
        tg = np.concatenate([[0.0], tg])
        skip_first = True
    else:
        skip_first = False

    def rhs(t, y):
        v = -alpha(np.maximum(y, 0.0))
        if forcing is not None:
            v = v + forcing(t)
        return v

    prev = None
    n_sub = 4
    for _ in range(max_refine):
        out = np.empty((y0.size, tg.size))
        y = y0.copy()
        out[:, 0] = y
        for j in range(tg.size - 1):
            h = (tg[j + 1] - tg[j]) / n_sub
            t = tg[j]
            for _s in range(n_sub):
                k1 = rhs(t, y)
                k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
                k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
                k4 = rhs(t + h, y + h * k3)
                y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                y = np.maximum(y, 0.0)
                t += h
            out[:, j + 1] = y
        if prev is not None:
            err = np.max(np.abs(out - prev) / (1e-12 + np.abs(prev)))
            if err < rel_tol:
                prev = out
                break
        prev = out
        n_sub *= 2
    else:
        raise NumericalFailure("flow integration did not converge under refinement")
    return prev[:, 1:] if skip_first else prev


def kl_envelope(alpha: KFun, r_grid, t_grid, rel_tol: float = 1e-8) -> KLFun:
    """Tabulated KL envelope from a decay rate: beta(r, t) is the exact flow
    of y' = -alpha(y), y(0) = r.  Any continuous y with D+ y <= -alpha(y)
    satisfies y(t) <= beta(y(0), t)."""
    rg = _check_grid(r_grid, "r_grid")
    tg = _check_grid(t_grid, "t_grid")
    if np.any(rg < 0) or tg[0] < 0:
        raise DomainError("grids must be nonnegative")
    _probe_pd(alpha, rg[rg > 0].min() if np.any(rg > 0) else 1e-6, max(rg.max(), 1.0))
    vals = _integrate_flow(alpha, rg, tg, rel_tol=rel_tol)
    if tg[0] == 0.0:
        vals[:, 0] = rg
    return KLFun("table", r_grid=rg, t_grid=tg, values=vals)


@dataclass(frozen=True)
class ComparisonAudit:
    """Per-sample record of y(t) <= beta(y0, t) + 2*int_0^t v."""

    times: np.ndarray
    values: np.ndarray
    bounds: np.ndarray
    margins: np.ndarray
    worst_margin: float
    passed: bool


def comparison_with_inputs(alpha: KFun, y0: float, v, T: float,
                           rel_tol: float = 1e-8,
                           slack: float | None = None) -> ComparisonAudit:
    """Integrate y' = -alpha(y) + v(t) and audit the input comparison bound
    y(t) <= beta(y0, t) + 2*int_0^t v(s) ds, with beta the input-free flow."""
    if y0 < 0:
        raise DomainError("y0 must be nonnegative")
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise DomainError("v must be a 1-D array of at least two samples")
    if np.any(v < 0):
        raise DomainError("input samples must be nonnegative")
    times = np.linspace(0.0, float(T), v.size)
    _probe_pd(alpha, 1e-9, max(y0, 1.0))

    def forcing(t):
        return np.interp(t, times, v)

    y = _integrate_flow(alpha, np.array([y0]), times, forcing=forcing,
                        rel_tol=rel_tol)[0]
    beta = _integrate_flow(alpha, np.array([y0]), times, rel_tol=rel_tol)[0]
    running = np.concatenate(
        [[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(times))]
    )
    bounds = beta + 2.0 * running
    margins = bounds - y
    if slack is None:
        slack = 1e-7 * (1.0 + abs(y0) + float(bounds.max()))
    worst = float(margins.min())
    return ComparisonAudit(times, y, bounds, margins, worst, bool(worst >= -slack))


def sontag_factor(beta: KLFun, lam: float, n_probe: int = 24) -> tuple[KFun, KFun]:
    """Factor an exponential closed-form envelope: alpha1(beta(s, t)) <=
    alpha2(s)*exp(-lam*t) with alpha1 = id, alpha2 = the amplitude.  Only
    the closed form is supported; the general construction is not numeric.
    """
    if beta.form != "exp":
        raise UnsupportedFormError(
            "sontag_factor supports closed-form (amplitude, rate) envelopes only"
        )
    if not (0 < lam <= beta.rate):
        raise InfeasibleError(
            f"rate {lam} not in (0, {beta.rate}]: factorization infeasible"
        )
    a1, a2 = identity(), beta.q
    rs = np.geomspace(1e-6, 1e6, n_probe)
    ts = np.linspace(0.0, 20.0, n_probe)
    for r in rs:
        for t in ts:
            lhs = a1(beta(r, t))
            rhs = a2(float(r)) * math.exp(-lam * t)
            if lhs > rhs * (1 + 1e-12) + 1e-300:
                raise InfeasibleError(
                    f"certificate violated at (r={r:.3g}, t={t:.3g})",
                    witness=(float(r), float(t)),
                )
    return a1, a2
