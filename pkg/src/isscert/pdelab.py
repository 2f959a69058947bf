"""Discretized 1-D evolution models and their Lyapunov audits.

The catalog covers a transport equation with inflow boundary input, scalar
reaction-diffusion / viscous Burgers / Kuramoto-Sivashinsky equations with
distributed inputs, a Ginzburg-Landau equation with a Neumann boundary
input, two coupled reaction-diffusion pairs, periodic truncations of
spatially invariant infinite networks (linear and cubic), and a 2-D mode
ensemble whose peaks grow linearly in the mode index.

Discretization: uniform grid, 2nd-order central differences, 5-point
stencil for the fourth derivative with clamped boundary rows eliminated
through ghost nodes; time stepping is IMEX (backward Euler on the stiff
linear part via a prefactored sparse solve, explicit nonlinearity and
input).  The Burgers/KS advection term uses the skew-symmetric splitting
u*u_z = (u*D1u + D1(u^2))/3 so that the discrete energy production of the
advection vanishes exactly under homogeneous Dirichlet rows, mirroring
the integration-by-parts cancellation that the L2 dissipation laws rely
on.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .compfun import KFun, KLFun
from .errors import (
    ConfigError,
    DomainError,
    NumericalFailure,
    ShapeError,
    UnsupportedFormError,
)
from .reports import DissipationReport, Violation

__all__ = [
    "PdeModel",
    "Trajectory",
    "build_model",
    "simulate",
    "LyapFunctional",
    "lyap_functional",
    "lyap_eval",
    "dissipation_check",
    "EnvelopeVerdict",
    "iss_envelope_check",
    "ThresholdInfo",
    "stability_threshold",
    "ks_sigma",
    "EnsembleResult",
    "ensemble_s1",
    "trapz_quad",
    "grad_quad",
    "random_band_limited",
    "BLOWUP_THRESHOLD",
    "S1_BLOWUP_CONSTANT",
]

BLOWUP_THRESHOLD = 1e10
# Initial x so that xdot = -2x + x^2 blows up at exactly t = 1.
S1_BLOWUP_CONSTANT = 2.0 * math.e ** 2 / (math.e ** 2 - 1.0)

KINDS = (
    "transport",
    "heat-reaction",
    "burgers",
    "kuramoto-sivashinsky",
    "ginzburg-landau",
    "coupled-linear-rd",
    "coupled-nonlinear-rd",
    "iiss-rd",
    "infinite-linear",
    "infinite-cubic",
    "ensemble-s1",
)

_UNIT_LENGTH_KINDS = ("transport", "burgers", "heat-reaction",
                      "kuramoto-sivashinsky", "ginzburg-landau")


# ---------------------------------------------------------------------------
# quadrature helpers (trapezoid on the uniform grid)
# ---------------------------------------------------------------------------

def trapz_quad(values: np.ndarray, h: float) -> float:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    return float(h * (v.sum() - 0.5 * (v[0] + v[-1])))


def grad_quad(x: np.ndarray, h: float) -> float:
    """Midpoint quadrature of x_z^2 from forward differences."""
    d = np.diff(np.asarray(x, dtype=float)) / h
    return float(np.sum(d * d) * h)


def random_band_limited(n_nodes: int, length: float, n_modes: int,
                        rng: np.random.Generator,
                        boundary: str = "both") -> np.ndarray:
    """Random smooth grid sample: a few sine/cosine modes.

    boundary='both' vanishes at both ends, 'left' only at z=0, 'none' is
    unconstrained.
    """
    z = np.linspace(0.0, length, n_nodes)
    out = np.zeros(n_nodes)
    coeffs = rng.standard_normal(n_modes)
    for k, c in enumerate(coeffs, start=1):
        if boundary == "both":
            out += c * np.sin(k * math.pi * z / length)
        elif boundary == "left":
            out += c * np.sin((2 * k - 1) * math.pi * z / (2 * length))
        else:
            out += c * np.sin(k * math.pi * z / length + rng.uniform(0, 2 * math.pi))
    return out


# ---------------------------------------------------------------------------
# stencils
# ---------------------------------------------------------------------------

def _d2_interior(m: int, h: float) -> sp.csr_matrix:
    """Second derivative on interior nodes, homogeneous Dirichlet ends."""
    e = np.ones(m)
    return sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], format="csr") / h ** 2


def _d4_clamped(m: int, h: float) -> sp.csr_matrix:
    """Fourth derivative on interior nodes, clamped ends (x = x_z = 0).

    Ghost values x_{-1} = x_1 and x_{m+...} mirror across the boundary,
    which folds into +1 on the first/last diagonal entries.
    """
    e = np.ones(m)
    d4 = sp.diags(
        [e[:-2], -4 * e[:-1], 6 * e, -4 * e[:-1], e[:-2]],
        [-2, -1, 0, 1, 2],
        format="lil",
    )
    d4[0, 0] = 7.0
    d4[m - 1, m - 1] = 7.0
    return (d4 / h ** 4).tocsr()


def _d1_central_full(x_full: np.ndarray, h: float) -> np.ndarray:
    """Central first derivative at the interior nodes of a full profile."""
    return (x_full[2:] - x_full[:-2]) / (2.0 * h)


def _skew_advection(x_full: np.ndarray, h: float) -> np.ndarray:
    """Skew-symmetric form of x*x_z at the interior nodes."""
    d1x = _d1_central_full(x_full, h)
    d1x2 = _d1_central_full(x_full * x_full, h)
    xi = x_full[1:-1]
    return (xi * d1x + d1x2) / 3.0


# ---------------------------------------------------------------------------
# input signals and initial profiles
# ---------------------------------------------------------------------------

def resolve_signal(u):
    """Normalize an input spec to a callable t -> scalar or array.

    Accepts None/number (constant), {'kind': 'zero'|'const'|'sine'|'table'}
    dictionaries, or a callable (already t -> value)."""
    if u is None:
        return lambda t: 0.0
    if isinstance(u, (int, float)):
        val = float(u)
        return lambda t: val
    if callable(u):
        return u
    if isinstance(u, dict):
        kind = u.get("kind")
        if kind == "zero":
            return lambda t: 0.0
        if kind == "const":
            val = float(u["value"])
            return lambda t: val
        if kind == "sine":
            amp = float(u.get("amp", 1.0))
            freq = float(u.get("freq", 1.0))
            phase = float(u.get("phase", 0.0))
            return lambda t: amp * math.sin(2 * math.pi * freq * t + phase)
        if kind == "table":
            ts = np.asarray(u["times"], dtype=float)
            vs = np.asarray(u["values"], dtype=float)
            if ts.ndim != 1 or ts.shape != vs.shape:
                raise ConfigError("table signal needs matching 1-D times/values")
            return lambda t: float(np.interp(t, ts, vs))
        raise ConfigError(f"unknown signal kind {kind!r}")
    raise ConfigError(f"cannot interpret input signal {u!r}")


def _profile_on_grid(spec, z: np.ndarray, length: float) -> np.ndarray:
    if isinstance(spec, str):
        if spec == "zero":
            return np.zeros_like(z)
        if spec == "sine":
            return np.sin(math.pi * z / length)
        if spec == "sine2":
            return np.sin(2 * math.pi * z / length) + 0.5 * np.sin(math.pi * z / length)
        raise ConfigError(f"unknown profile name {spec!r}")
    if isinstance(spec, dict) and spec.get("name") == "noise":
        amp = float(spec.get("amp", 1e-3))
        seed = int(spec.get("seed", 0))
        modes = int(spec.get("modes", 8))
        rng = np.random.default_rng(seed)
        prof = random_band_limited(z.size, length, modes, rng, boundary="both")
        scale = np.max(np.abs(prof))
        return amp * prof / (scale if scale > 0 else 1.0)
    arr = np.asarray(spec, dtype=float)
    if arr.shape != z.shape:
        raise ShapeError(f"profile shape {arr.shape} does not match grid {z.shape}")
    return arr


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Time-sampled run of one model."""

    times: np.ndarray
    states: np.ndarray  # (n_samples, state_dim), full profiles
    inputs: np.ndarray  # (n_samples,) or (n_samples, m) evaluated signal
    blowup: bool = False
    blowup_time: float | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            dim = self.states.shape[1]
            w.writerow(["t"] + [f"x_{i+1}" for i in range(dim)])
            for t, row in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


class PdeModel:
    """Assembled stencils and stepping data for one catalog kind."""

    def __init__(self, kind: str, params: dict, n: int, length: float,
                 dt: float):
        self.kind = kind
        self.params = dict(params)
        self.n = n
        self.length = length
        self.dt_default = dt
        if kind in ("infinite-linear", "infinite-cubic", "ensemble-s1"):
            self.z = None
            self.h = None
        else:
            self.z = np.linspace(0.0, length, n + 1)
            self.h = length / n
        self._build()

    # -- construction ------------------------------------------------------

    def _build(self):
        k, p = self.kind, self.params
        if k == "transport":
            m = self.n  # nodes 1..N
            main = -np.ones(m) / self.h
            sub = np.ones(m - 1) / self.h
            self.lin = sp.diags([sub, main], [-1, 0], format="csr")
            self.state_dim = self.n + 1
            self.fields = 1
        elif k in ("heat-reaction", "burgers"):
            m = self.n - 1
            b = float(p.get("b", 0.0))
            self.lin = _d2_interior(m, self.h) + b * sp.identity(m, format="csr")
            self.state_dim = self.n + 1
            self.fields = 1
        elif k == "kuramoto-sivashinsky":
            m = self.n - 1
            lam = float(p["lam"])
            self.lin = -(_d4_clamped(m, self.h) + lam * _d2_interior(m, self.h))
            self.state_dim = self.n + 1
            self.fields = 1
        elif k == "ginzburg-landau":
            m = self.n - 1
            mu = float(p["mu"])
            a = float(p["a"])
            d2 = _d2_interior(m, self.h).tolil()
            # slave node 0 through the one-sided Neumann stencil
            # x_z(0) = (-3 x0 + 4 x1 - x2) / (2h) = u
            d2[0, 0] = -2.0 / 3.0 / self.h ** 2
            d2[0, 1] = 2.0 / 3.0 / self.h ** 2
            self.lin = mu * d2.tocsr() + a * sp.identity(m, format="csr")
            self.state_dim = self.n + 1
            self.fields = 1
        elif k in ("coupled-linear-rd", "coupled-nonlinear-rd"):
            m = self.n - 1
            if k == "coupled-linear-rd":
                c1, c2 = float(p["c1"]), float(p["c2"])
            else:
                c1, c2 = float(p["q1"]), float(p["q2"])
            self.lin = sp.block_diag(
                [c1 * _d2_interior(m, self.h), c2 * _d2_interior(m, self.h)],
                format="csr",
            )
            self.state_dim = 2 * (self.n + 1)
            self.fields = 2
        elif k == "iiss-rd":
            m = self.n - 1
            c = float(p["c"])
            self.lin = c * _d2_interior(m, self.h)
            self.state_dim = self.n + 1
            self.fields = 1
            self.iiss_weights = np.abs(self.z[1:-1] - 1.0)
        elif k == "infinite-linear":
            kk = int(p["K"])
            a, b = float(p["a"]), float(p["b"])
            rows = sp.lil_matrix((kk, kk))
            for i in range(kk):
                rows[i, i] = -1.0
                rows[i, (i - 1) % kk] = a
                rows[i, (i + 1) % kk] = b
            self.lin = rows.tocsr()
            self.state_dim = kk
            self.fields = 1
        elif k == "infinite-cubic":
            self.lin = None
            self.state_dim = int(p["K"])
            self.fields = 1
        elif k == "ensemble-s1":
            self.lin = None
            self.state_dim = 2 * int(p["K"])
            self.fields = 1
        else:
            raise ConfigError(f"unknown model kind {k!r}")
        self._lu_cache = {}

    # -- helpers -----------------------------------------------------------

    def field_slice(self, state: np.ndarray, idx: int) -> np.ndarray:
        if self.fields == 1:
            if idx != 0:
                raise ShapeError("model has a single field")
            return state
        w = self.n + 1
        return state[idx * w:(idx + 1) * w]

    def state_norm(self, state: np.ndarray) -> float:
        if self.kind in ("infinite-linear", "infinite-cubic"):
            return float(np.max(np.abs(state)))
        if self.kind == "ensemble-s1":
            return float(np.linalg.norm(state))
        acc = 0.0
        for f in range(self.fields):
            x = self.field_slice(state, f)
            acc += trapz_quad(x * x, self.h)
        return math.sqrt(acc)

    def initial_state(self, spec) -> np.ndarray:
        if self.kind == "ensemble-s1":
            kk = self.state_dim // 2
            st = np.empty(self.state_dim)
            st[0::2] = S1_BLOWUP_CONSTANT
            st[1::2] = math.e
            return st
        if self.kind in ("infinite-linear", "infinite-cubic"):
            if isinstance(spec, str):
                if spec == "zero":
                    return np.zeros(self.state_dim)
                if spec == "ones":
                    return np.ones(self.state_dim)
                raise ConfigError(f"unknown profile name {spec!r} for network kind")
            if isinstance(spec, dict) and spec.get("name") == "noise":
                rng = np.random.default_rng(int(spec.get("seed", 0)))
                return float(spec.get("amp", 1e-3)) * rng.uniform(
                    -1.0, 1.0, self.state_dim
                )
            arr = np.asarray(spec, dtype=float)
            if arr.shape != (self.state_dim,):
                raise ShapeError("profile length must match the truncation size")
            return arr
        if self.fields == 2:
            if isinstance(spec, (tuple, list)) and len(spec) == 2:
                parts = [_profile_on_grid(s, self.z, self.length) for s in spec]
            else:
                prof = _profile_on_grid(spec, self.z, self.length)
                parts = [prof, prof.copy()]
            for prt in parts:
                prt[0] = 0.0
                prt[-1] = 0.0
            return np.concatenate(parts)
        prof = _profile_on_grid(spec, self.z, self.length)
        if self.kind in ("heat-reaction", "burgers", "kuramoto-sivashinsky",
                         "iiss-rd"):
            prof = prof.copy()
            prof[0] = 0.0
            prof[-1] = 0.0
        elif self.kind == "ginzburg-landau":
            prof = prof.copy()
            prof[-1] = 0.0
        return prof

    def _lu(self, dt: float):
        key = round(dt, 15)
        if key not in self._lu_cache:
            m = self.lin.shape[0]
            mat = sp.identity(m, format="csc") - dt * self.lin.tocsc()
            self._lu_cache[key] = spla.splu(mat)
        return self._lu_cache[key]

    # -- stepping ----------------------------------------------------------

    def _explicit(self, state: np.ndarray, u_val, t: float) -> np.ndarray:
        """Nonlinear + input terms on the active nodes at time t."""
        k, p = self.kind, self.params
        if k == "transport":
            return np.zeros(self.n)
        if k in ("heat-reaction", "burgers"):
            x = state
            out = np.zeros(self.n - 1)
            a = float(p.get("a", 0.0))
            if k == "burgers" and a != 0.0:
                out -= a * _skew_advection(x, self.h)
            out += self._distributed(u_val)
            return out
        if k == "kuramoto-sivashinsky":
            out = np.zeros(self.n - 1)
            b = float(p.get("b", 0.0))
            if b != 0.0:
                out -= b * _skew_advection(state, self.h)
            out += self._distributed(u_val)
            return out
        if k == "ginzburg-landau":
            xi = state[1:-1]
            out = -xi ** 3
            mu = float(p["mu"])
            # Neumann input enters through the eliminated node 0
            out[0] += mu * (-2.0 * float(u_val) / (3.0 * self.h))
            return out
        if k == "coupled-linear-rd":
            x1 = state[1:self.n]
            x2 = state[self.n + 2:2 * self.n + 1]
            out = np.concatenate(
                [float(p["a12"]) * x2, float(p["a21"]) * x1]
            )
            return out + np.tile(self._distributed(u_val), 2)
        if k == "coupled-nonlinear-rd":
            x1 = state[1:self.n]
            x2 = state[self.n + 2:2 * self.n + 1]
            out = np.concatenate([x2 ** 2, np.sqrt(np.abs(x1))])
            return out + np.tile(self._distributed(u_val), 2)
        if k == "iiss-rd":
            xi = state[1:-1]
            v = self._distributed(u_val)
            return xi / (1.0 + self.iiss_weights * xi ** 2) * v
        if k == "infinite-linear":
            return np.full(self.state_dim, float(u_val))
        raise UnsupportedFormError(k)

    def _distributed(self, u_val) -> np.ndarray:
        m = self.n - 1
        arr = np.asarray(u_val, dtype=float)
        if arr.ndim == 0:
            return np.full(m, float(arr))
        if arr.shape == (m,):
            return arr
        if arr.shape == (self.n + 1,):
            return arr[1:-1]
        raise ShapeError("distributed input must be scalar or match the grid")

    def _step(self, state: np.ndarray, signal, t: float, dt: float) -> np.ndarray:
        k = self.kind
        if k == "infinite-cubic":
            p = self.params
            u_val = float(np.asarray(signal(t), dtype=float))
            left = np.roll(state, 1) ** 3
            right = np.roll(state, -1) ** 3
            drive = np.maximum(
                np.maximum(float(p["a"]) * left, float(p["b"]) * right), u_val
            )
            return state + dt * (-state ** 3 + drive)
        if k == "transport":
            u_new = float(np.asarray(signal(t + dt), dtype=float))
            rhs = state[1:].copy()
            rhs[0] += dt * u_new / self.h
            new = state.copy()
            new[1:] = self._lu(dt).solve(rhs)
            new[0] = u_new
            return new
        u_val = signal(t)
        if self.fields == 2:
            active = np.concatenate(
                [state[1:self.n], state[self.n + 2:2 * self.n + 1]]
            )
            rhs = active + dt * self._explicit(state, u_val, t)
            sol = self._lu(dt).solve(rhs)
            new = np.zeros_like(state)
            new[1:self.n] = sol[: self.n - 1]
            new[self.n + 2:2 * self.n + 1] = sol[self.n - 1:]
            return new
        if k == "infinite-linear":
            rhs = state + dt * self._explicit(state, u_val, t)
            return self._lu(dt).solve(rhs)
        # single-field PDE kinds with pinned boundary nodes
        active = state[1:-1]
        rhs = active + dt * self._explicit(state, u_val, t)
        sol = self._lu(dt).solve(rhs)
        new = np.zeros_like(state)
        new[1:-1] = sol
        if k == "ginzburg-landau":
            u_val = float(np.asarray(signal(t), dtype=float))
            new[0] = (4.0 * new[1] - new[2] - 2.0 * self.h * u_val) / 3.0
        return new


def build_model(spec: dict) -> PdeModel:
    """Assemble a model from a scenario mapping {kind, params, N, L, dt}."""
    if not isinstance(spec, dict):
        raise ConfigError("model spec must be a mapping")
    allowed = {"kind", "params", "N", "L", "dt"}
    unknown = set(spec) - allowed
    if unknown:
        raise ConfigError(f"unknown model spec keys {sorted(unknown)}")
    kind = spec.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    params = dict(spec.get("params", {}))
    for key, val in params.items():
        if not isinstance(val, (int, float)) or not math.isfinite(val):
            raise ConfigError(f"parameter {key!r} must be a finite number")
    n = int(spec.get("N", 256))
    grid_kinds = kind not in ("infinite-linear", "infinite-cubic", "ensemble-s1")
    if grid_kinds and n < 16:
        raise ConfigError("grid size N must be at least 16")
    if kind == "coupled-linear-rd":
        length = float(params["d"])
    elif kind == "coupled-nonlinear-rd":
        length = float(spec.get("L", math.pi))
    else:
        length = float(spec.get("L", 1.0))
    if kind in ("kuramoto-sivashinsky", "ginzburg-landau") and length != 1.0:
        raise ConfigError(f"{kind} is calibrated to the unit interval")
    dt = float(spec.get("dt", 1e-3))
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if kind == "infinite-cubic" and dt > 0.05:
        raise ConfigError(
            f"dt={dt:g} unstable for the explicit cubic network; try dt=1e-3"
        )
    required = {
        "heat-reaction": ("b",),
        "burgers": ("a", "b"),
        "kuramoto-sivashinsky": ("lam",),
        "ginzburg-landau": ("mu", "a"),
        "coupled-linear-rd": ("c1", "c2", "a12", "a21", "d"),
        "coupled-nonlinear-rd": ("q1", "q2"),
        "iiss-rd": ("c",),
        "infinite-linear": ("a", "b", "K"),
        "infinite-cubic": ("a", "b", "K"),
        "ensemble-s1": ("K",),
    }.get(kind, ())
    missing = [r for r in required if r not in params]
    if missing:
        raise ConfigError(f"{kind} needs parameters {missing}")
    return PdeModel(kind, params, n, length, dt)


def simulate(model: PdeModel, x0, u, T: float, dt: float | None = None,
             store_every: int = 1) -> Trajectory:
    """IMEX time stepping with blow-up detection at |x| > 1e10."""
    if model.kind == "ensemble-s1":
        return ensemble_s1(int(model.params["K"]), T).trajectory
    dt = float(dt if dt is not None else model.dt_default)
    if dt <= 0 or dt > T:
        raise ConfigError("need 0 < dt <= T")
    if model.kind == "infinite-cubic" and dt > 0.05:
        raise ConfigError(
            f"dt={dt:g} unstable for the explicit cubic network; try dt=1e-3"
        )
    signal = resolve_signal(u)
    state = model.initial_state(x0)
    # make the initial profile consistent with the boundary law at t = 0
    if model.kind == "transport":
        state[0] = float(np.asarray(signal(0.0), dtype=float))
    elif model.kind == "ginzburg-landau":
        u0 = float(np.asarray(signal(0.0), dtype=float))
        state[0] = (4.0 * state[1] - state[2] - 2.0 * model.h * u0) / 3.0
    n_steps = int(round(T / dt))
    times = [0.0]
    states = [state.copy()]
    inputs = [np.asarray(signal(0.0), dtype=float)]
    blowup = False
    blowup_time = None
    t = 0.0
    for k in range(n_steps):
        state = model._step(state, signal, t, dt)
        t = (k + 1) * dt
        if not np.all(np.isfinite(state)):
            raise NumericalFailure(
                f"non-finite state at t={t:.6g}", last_valid_time=times[-1]
            )
        if float(np.max(np.abs(state))) > BLOWUP_THRESHOLD:
            blowup = True
            blowup_time = t
            break
        if (k + 1) % store_every == 0 or k + 1 == n_steps:
            times.append(t)
            states.append(state.copy())
            inputs.append(np.asarray(signal(t), dtype=float))
    inp = np.array(inputs) if inputs[0].ndim else np.asarray(inputs, dtype=float)
    return Trajectory(np.asarray(times), np.asarray(states), inp,
                      blowup, blowup_time)


# ---------------------------------------------------------------------------
# Lyapunov functionals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LyapFunctional:
    name: str
    fn: object  # callable full_state -> float
    params: dict = field(default_factory=dict)

    def __call__(self, state) -> float:
        return float(self.fn(np.asarray(state, dtype=float)))


def lyap_functional(model: PdeModel, kind: str, field_idx: int = 0,
                    **params) -> LyapFunctional:
    """Quadrature-backed Lyapunov functional bound to the model grid.

    Kinds: l2, weighted-l2(mu), h10, l4, log1p-l2, rd-potential(antideriv),
    composite(fn).
    """
    h = model.h

    def pick(state):
        x = model.field_slice(state, field_idx)
        if x.size != model.n + 1:
            raise ShapeError("state does not match the model grid")
        return x

    if kind == "l2":
        return LyapFunctional("l2", lambda s: trapz_quad(pick(s) ** 2, h))
    if kind == "weighted-l2":
        mu = float(params["mu"])
        w = np.exp(-mu * model.z)
        return LyapFunctional(
            f"weighted-l2({mu:g})",
            lambda s: trapz_quad(w * pick(s) ** 2, h),
            {"mu": mu},
        )
    if kind == "h10":
        return LyapFunctional("h10", lambda s: grad_quad(pick(s), h))
    if kind == "l4":
        return LyapFunctional("l4", lambda s: trapz_quad(pick(s) ** 4, h))
    if kind == "log1p-l2":
        return LyapFunctional(
            "log1p-l2", lambda s: math.log1p(trapz_quad(pick(s) ** 2, h))
        )
    if kind == "rd-potential":
        anti = params["antideriv"]  # antiderivative F with F(0) = 0

        def value(s):
            x = pick(s)
            return 0.5 * grad_quad(x, h) + trapz_quad(
                np.asarray([anti(v) for v in x], dtype=float), h
            )

        return LyapFunctional("rd-potential", value)
    if kind == "composite":
        fn = params["fn"]
        return LyapFunctional("composite", fn)
    raise ConfigError(f"unknown functional kind {kind!r}")


def lyap_eval(func: LyapFunctional, state) -> float:
    return func(state)


# ---------------------------------------------------------------------------
# dissipation laws
# ---------------------------------------------------------------------------

def _input_field_sq_quad(model: PdeModel, u_val) -> float:
    """Quadrature of v^2 for a distributed input sample."""
    v = model._distributed(u_val)
    full = np.zeros(model.n + 1)
    full[1:-1] = v
    return trapz_quad(full * full, model.h)


def dissipation_check(model: PdeModel, func: LyapFunctional, traj: Trajectory,
                      law: str, eps: float | None = None,
                      a_gain: float | None = None, rtol: float = 0.02,
                      atol: float = 1e-10) -> DissipationReport:
    """Audit a per-kind dissipation law along a trajectory.

    Laws: burgers-l2, ks-l2, gl-l2, iiss-logl2, rd-h10, transport-weighted.
    The forward difference of the functional at each stored sample is
    compared with the law's right-hand side evaluated from the same
    snapshot.
    """
    times, states, inputs = traj.times, traj.states, traj.inputs
    warning = ""
    if traj.blowup:
        warning = (
            f"trajectory blew up at t={traj.blowup_time:.6g}; audit truncated"
        )
    vals = np.array([func(s) for s in states])

    if law == "burgers-l2":
        if eps is None:
            raise ConfigError("burgers-l2 law needs eps")
        b = float(model.params.get("b", 0.0))
        rate = 2.0 * b + eps - 2.0 * (math.pi / model.length) ** 2

        def rhs(k):
            return rate * vals[k] + _input_field_sq_quad(model, inputs[k]) / eps, True
    elif law == "ks-l2":
        if eps is None:
            raise ConfigError("ks-l2 law needs eps")
        sigma = ks_sigma(float(model.params["lam"]), n_grid=model.n)
        rate = eps - 2.0 * sigma

        def rhs(k):
            return rate * vals[k] + _input_field_sq_quad(model, inputs[k]) / eps, True
    elif law == "gl-l2":
        if eps is None:
            raise ConfigError("gl-l2 law needs eps")
        mu = float(model.params["mu"])
        a = float(model.params["a"])
        rate = (eps - 2.0 * mu) * math.pi ** 2 / 4.0 + eps + 2.0 * a

        def rhs(k):
            u0 = float(np.asarray(inputs[k]))
            return rate * vals[k] - 2.0 * vals[k] ** 2 + mu ** 2 / eps * u0 ** 2, True
    elif law == "iiss-logl2":
        c = float(model.params["c"])
        scale = 2.0 * c * (math.pi / model.length) ** 2

        def rhs(k):
            x = model.field_slice(states[k], 0)
            w = trapz_quad(x * x, model.h)
            sup_v = float(np.max(np.abs(model._distributed(inputs[k]))))
            return -scale * w / (1.0 + w) + 2.0 * sup_v, True
    elif law == "rd-h10":
        if a_gain is None or a_gain <= 1.0:
            raise ConfigError("rd-h10 law needs a gain constant a_gain > 1")
        b = float(model.params.get("b", 0.0))
        if b > 0:
            raise ConfigError("rd-h10 law needs a nonincreasing reaction (b <= 0)")

        def rhs(k):
            x = model.field_slice(states[k], 0)
            xzz = np.zeros_like(x)
            xzz[1:-1] = (x[2:] - 2 * x[1:-1] + x[:-2]) / model.h ** 2
            residue = xzz + b * x  # x_zz - f(x) with f(x) = -b x
            i_x = trapz_quad(residue[1:-1] ** 2, model.h)
            v = model._distributed(inputs[k])
            vfull = np.zeros_like(x)
            vfull[1:-1] = v
            v_norm = math.sqrt(trapz_quad(vfull * vfull, model.h))
            h10 = math.sqrt(grad_quad(x, model.h))
            applicable = a_gain * v_norm <= h10
            return (1.0 / a_gain - 1.0) * i_x, applicable
    elif law == "transport-weighted":
        mu = float(func.params.get("mu", 1.0))

        def rhs(k):
            u0 = float(np.asarray(inputs[k]))
            return -mu * vals[k] + u0 ** 2, True
    else:
        raise ConfigError(f"unknown dissipation law {law!r}")

    violations = []
    checked = 0
    worst = math.inf
    for k in range(times.size - 1):
        bound, applicable = rhs(k)
        if not applicable:
            continue
        checked += 1
        dt = times[k + 1] - times[k]
        rate_obs = (vals[k + 1] - vals[k]) / dt
        tol = rtol * (abs(vals[k]) + abs(bound)) + atol
        worst = min(worst, bound + tol - rate_obs)
        if rate_obs > bound + tol:
            violations.append(Violation(float(times[k]), float(rate_obs),
                                        float(bound)))
    return DissipationReport(int(times.size), checked, tuple(violations),
                             float(worst) if checked else math.inf,
                             truncated=traj.blowup, warning=warning)


@dataclass(frozen=True)
class EnvelopeVerdict:
    passed: bool
    worst_excess: float  # max over samples of (norm - bound)/max(bound, tiny)
    violations: tuple


def iss_envelope_check(model: PdeModel, traj: Trajectory, beta: KLFun,
                       gamma: KFun | None, u_norm: float,
                       rtol: float = 0.01) -> EnvelopeVerdict:
    """Per-sample check ||x(t)|| <= beta(||x0||, t) + gamma(u_norm)."""
    norms = np.array([model.state_norm(s) for s in traj.states])
    g = gamma(u_norm) if gamma is not None else 0.0
    worst = -math.inf
    violations = []
    for t, nv in zip(traj.times, norms):
        bound = beta(norms[0], float(t)) + g
        excess = (nv - bound) / max(bound, 1e-300)
        worst = max(worst, excess)
        if nv > bound * (1 + rtol) + 1e-12:
            violations.append(Violation(float(t), float(nv), float(bound)))
    return EnvelopeVerdict(not violations, float(worst), tuple(violations))


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdInfo:
    kind: str
    parameter: str
    critical: float
    stable_when: str  # "below" | "above"


def stability_threshold(kind: str, params: dict | None = None) -> ThresholdInfo:
    """Closed-form critical parameter values of the catalog models."""
    p = params or {}
    if kind == "burgers" or kind == "heat-reaction":
        return ThresholdInfo(kind, "b", math.pi ** 2, "below")
    if kind == "kuramoto-sivashinsky":
        return ThresholdInfo(kind, "lam", 4.0 * math.pi ** 2, "below")
    if kind == "ginzburg-landau":
        mu = float(p.get("mu", 1.0))
        return ThresholdInfo(kind, "a", mu * math.pi ** 2 / 4.0, "below")
    if kind == "coupled-linear-rd":
        c1, c2, d = float(p["c1"]), float(p["c2"]), float(p["d"])
        return ThresholdInfo(kind, "|a12*a21|", c1 * c2 * (math.pi / d) ** 4,
                             "below")
    if kind == "coupled-nonlinear-rd":
        return ThresholdInfo(kind, "q1^2*(3*q2/4)^4", 1.0, "above")
    if kind == "infinite-linear":
        return ThresholdInfo(kind, "a+b", 1.0, "below")
    if kind == "infinite-cubic":
        return ThresholdInfo(kind, "max(a,b)", 1.0, "below")
    if kind == "iiss-coupled":
        return ThresholdInfo(kind, "a+3*pi^2/b", 1.0, "below")
    raise ConfigError(f"no threshold registered for kind {kind!r}")


# ---------------------------------------------------------------------------
# the clamped fourth-order eigenvalue problem
# ---------------------------------------------------------------------------

_KS_SIGMA_CACHE: dict = {}


def ks_sigma(lam: float, n_grid: int = 512) -> float:
    """Smallest eigenvalue sigma of x_zzzz + lam*x_zz = sigma*x on (0, 1)
    with clamped ends, from the banded symmetric discretization.

    sigma is strictly decreasing in lam and crosses zero at lam = 4*pi^2.
    """
    key = (round(float(lam), 12), int(n_grid))
    if key in _KS_SIGMA_CACHE:
        return _KS_SIGMA_CACHE[key]
    m = n_grid - 1
    h = 1.0 / n_grid
    d4 = _d4_clamped(m, h).toarray()
    d2 = _d2_interior(m, h).toarray()
    a = d4 + lam * d2
    band = np.zeros((3, m))
    band[0] = np.diag(a)
    band[1, : m - 1] = np.diag(a, -1)
    band[2, : m - 2] = np.diag(a, -2)
    vals = scipy.linalg.eig_banded(band, lower=True, eigvals_only=True,
                                   select="i", select_range=(0, 0))
    out = float(vals[0])
    _KS_SIGMA_CACHE[key] = out
    return out


# ---------------------------------------------------------------------------
# the peak-growth ensemble
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleResult:
    trajectory: Trajectory
    peaks: np.ndarray
    peak_times: np.ndarray
    c: float


def _mode_rhs(k: int):
    kk2 = float(k * k)

    def rhs(_t, s):
        x, y = s
        return [-x + x * x * y - x ** 3 / kk2, -y]

    return rhs


def ensemble_s1(K: int, T: float = 3.0, rtol: float = 1e-8,
                atol: float = 1e-10, samples: int = 4001) -> EnsembleResult:
    """Simulate the K-mode spike ensemble from (c, e) per mode and record
    the peak of |x_k|; the peaks grow at least linearly in the mode index.

    Each mode is a planar system whose x-equation dominates xdot =
    -2x + x^2 while x stays below k and y at least 1; starting at the
    blow-up-in-one constant c, the comparison solution escapes before the
    y-component drops under 1, so x_k must cross level k.
    """
    if K < 1:
        raise DomainError("K must be at least 1")
    c = S1_BLOWUP_CONSTANT
    t_eval = np.linspace(0.0, T, samples)
    states = np.zeros((samples, 2 * K))
    peaks = np.zeros(K)
    peak_times = np.zeros(K)
    for k in range(1, K + 1):
        rhs = _mode_rhs(k)
        sol = solve_ivp(rhs, (0.0, T), [c, math.e], method="RK45",
                        rtol=rtol, atol=atol, dense_output=True)
        if not sol.success:
            sol = solve_ivp(rhs, (0.0, T), [c, math.e], method="Radau",
                            rtol=rtol, atol=atol, dense_output=True)
            if not sol.success:
                raise NumericalFailure(f"mode {k} integration failed: {sol.message}")
        vals = sol.sol(t_eval)
        states[:, 2 * (k - 1)] = vals[0]
        states[:, 2 * (k - 1) + 1] = vals[1]
        i = int(np.argmax(np.abs(vals[0])))
        lo = t_eval[max(i - 1, 0)]
        hi = t_eval[min(i + 1, samples - 1)]
        for _ in range(80):
            third = (hi - lo) / 3.0
            m1, m2 = lo + third, hi - third
            if abs(float(sol.sol(m1)[0])) < abs(float(sol.sol(m2)[0])):
                lo = m1
            else:
                hi = m2
        t_star = 0.5 * (lo + hi)
        peaks[k - 1] = abs(float(sol.sol(t_star)[0]))
        peak_times[k - 1] = t_star
    traj = Trajectory(t_eval, states, np.zeros(samples))
    return EnsembleResult(traj, peaks, peak_times, c)
