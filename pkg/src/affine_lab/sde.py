"""Strong-solution simulators for the jump stochastic systems.

All schemes are truncated Euler on the noise grid with exact jump
insertion.  Per step of width ``dt`` from the stored state at the step
start: the drift and diffusion increments use the step-start state; every
immigration event in the half-open step window adds its mark; every
candidate of the state-thinned stream is accepted when its uniform mark
lies below the step-start intensity; compensated terms subtract
``dt * intensity * (band moment)`` over exactly the retained jump band;
finally nonnegative components are clamped at zero.  Stored grid values
are therefore post-jump states.

Determinism: a path is a pure function of (coefficients, initial state,
NoiseSystem).  Batched simulation stacks many noise systems and performs
identical elementwise arithmetic, so the single-path wrappers run a batch
of one and an ensemble reproduces each scalar path bit for bit.

The first coordinate's update is shared verbatim by every system that
contains it, so the catalyst path is bitwise identical across the pair,
catalytic, and reactant simulators given the same noise.

Explicit-Euler stability is enforced: runs with ``dt * beta_bar > 0.1``
are refused rather than silently degraded.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .noise import NoiseSystem, generate_noise, refine, substream_seed_array
from .params import AdmissibleParams

__all__ = [
    "StepBound",
    "CoefficientBounds",
    "GeneralizedCbiSpec",
    "ParameterSplit",
    "PathBundle",
    "EnsembleResult",
    "simulate_generalized_cbi",
    "simulate_affine",
    "simulate_affine_voc",
    "simulate_catalytic",
    "simulate_reactant_pair",
    "run_ensemble",
    "write_paths_csv",
    "STABILITY_LIMIT",
]

STABILITY_LIMIT = 0.1
DEFAULT_CHUNK = 2048


def _stability_guard(dt: float, rate: float, label: str) -> None:
    if dt * abs(rate) > STABILITY_LIMIT:
        raise ValueError(
            f"explicit-Euler stability: dt*{label} = {dt * abs(rate):.3g} "
            f"exceeds {STABILITY_LIMIT}; refuse to run (shrink dt)")


# -- coefficient bounds and specs ------------------------------------------

@dataclass(frozen=True, eq=False)
class StepBound:
    """Nonnegative nondecreasing right-continuous step function of time."""

    times: np.ndarray
    values: np.ndarray

    def __init__(self, times, values=None):
        if values is None:                      # constant bound
            times, values = [0.0], [float(times)]
        t = np.asarray(times, dtype=float)
        v = np.asarray(values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise ValueError("times and values must be equal-length 1-d")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0.0):
            raise ValueError("times must start at 0 and increase")
        if np.any(v < 0.0) or np.any(np.diff(v) < 0.0):
            raise ValueError("bound values must be nonnegative nondecreasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float),
                              side="right") - 1
        return self.values[idx]


def _as_bound(value) -> StepBound:
    return value if isinstance(value, StepBound) else StepBound(value)


@dataclass(frozen=True, eq=False)
class CoefficientBounds:
    """Dominating bounds for the scalar equation's coefficient processes."""

    sigma_bar: StepBound
    b_bar: StepBound
    beta_bar: StepBound
    l_bar: StepBound

    def __init__(self, sigma_bar, b_bar, beta_bar, l_bar):
        object.__setattr__(self, "sigma_bar", _as_bound(sigma_bar))
        object.__setattr__(self, "b_bar", _as_bound(b_bar))
        object.__setattr__(self, "beta_bar", _as_bound(beta_bar))
        object.__setattr__(self, "l_bar", _as_bound(l_bar))


def _coeff_on_grid(value, tk):
    """Evaluate a constant / callable / recorded array on step-start times."""
    n = len(tk)
    if callable(value):
        out = np.asarray([value(t) for t in tk], dtype=float)
    else:
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            out = np.full(n, float(arr))
        elif arr.ndim == 1 and arr.shape[0] in (n, n + 1):
            out = arr[:n]                       # recorded path on the grid
        else:
            raise ValueError(f"coefficient shape {arr.shape} does not fit "
                             f"{n} grid steps")
    if out.shape != (n,):
        raise ValueError(f"coefficient evaluates to shape {out.shape}, "
                         f"expected ({n},)")
    return out


@dataclass(frozen=True, eq=False)
class GeneralizedCbiSpec:
    """Data of the scalar branching equation with time-dependent inputs.

    ``sigma`` maps time to an ``(r,)`` vector (or is a constant / recorded
    array); ``b``, ``beta``, ``l`` are scalar-valued.  ``mu`` is the
    candidate-jump measure, needed for the thinning compensator; the
    immigration jumps arrive pre-sampled inside the NoiseSystem.  Marks are
    read through their first coordinate.
    """

    theta0: float
    theta1: float
    r: int
    sigma: object
    b: object
    beta: object
    l: object
    bounds: CoefficientBounds
    mu: object = None

    def __post_init__(self):
        if self.theta0 < 0.0 or self.theta1 < 0.0:
            raise ValueError("theta0 and theta1 must be nonnegative")
        if self.r < 1:
            raise ValueError("r must be a positive integer")

    def _sigma_on_grid(self, tk):
        n, r = len(tk), self.r
        if callable(self.sigma):
            rows = [np.atleast_1d(np.asarray(self.sigma(t), dtype=float))
                    for t in tk]
            out = np.asarray(rows)
        else:
            arr = np.asarray(self.sigma, dtype=float)
            if arr.ndim == 0:
                out = np.full((n, r), float(arr)) if r == 1 else None
            elif arr.ndim == 1 and arr.shape[0] == r:
                out = np.tile(arr, (n, 1))      # per-component constants
            elif arr.ndim == 1 and r == 1 and arr.shape[0] in (n, n + 1):
                out = arr[:n].reshape(n, 1)     # recorded scalar path
            elif arr.ndim == 2 and arr.shape[0] in (n, n + 1) \
                    and arr.shape[1] == r:
                out = arr[:n]
            else:
                out = None
        if out is None or out.shape != (n, r):
            raise ValueError(f"sigma must evaluate to an ({r},) vector per "
                             f"grid step")
        return out

    def grid_coefficients(self, grid: np.ndarray) -> dict:
        """Evaluate all coefficients at step starts and check the bounds."""
        tk = grid[:-1]
        out = {
            "sigma": self._sigma_on_grid(tk),
            "b": _coeff_on_grid(self.b, tk),
            "beta": _coeff_on_grid(self.beta, tk),
            "l": _coeff_on_grid(self.l, tk),
        }
        checks = [
            ("b", out["b"] < 0.0, "b(t) must be nonnegative"),
            ("l", out["l"] < 0.0, "l(t) must be nonnegative"),
            ("sigma", np.abs(out["sigma"]).max(axis=1)
             > self.bounds.sigma_bar(tk), "|sigma(t)| exceeds sigma_bar"),
            ("b", out["b"] > self.bounds.b_bar(tk), "b(t) exceeds b_bar"),
            ("beta", np.abs(out["beta"]) > self.bounds.beta_bar(tk),
             "|beta(t)| exceeds beta_bar"),
            ("l", out["l"] > self.bounds.l_bar(tk), "l(t) exceeds l_bar"),
        ]
        for _, bad, msg in checks:
            if np.any(bad):
                k = int(np.argmax(bad))
                raise ValueError(f"{msg} at t = {tk[k]:g}")
        return out


def _positive_part(v):
    return (max(v, 0.0), max(-v, 0.0))


@dataclass(frozen=True)
class ParameterSplit:
    """Nonnegative decomposition of the sign-carrying pair coefficients.

    Each coefficient c is written c = c_pos - c_neg with both parts >= 0;
    the two reactant equations carry one part each.
    """

    sigma0_pos: float
    sigma0_neg: float
    sigma21_pos: float
    sigma21_neg: float
    sigma22_pos: float
    sigma22_neg: float
    b2_pos: float
    b2_neg: float
    beta21_pos: float
    beta21_neg: float

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) < 0.0:
                raise ValueError(f"split part {name} must be nonnegative")

    @classmethod
    def from_params(cls, params: AdmissibleParams) -> "ParameterSplit":
        """Canonical split: positive/negative parts of each coefficient."""
        s0 = _positive_part(params.sigma0)
        s21 = _positive_part(params.sigma[1, 0])
        s22 = _positive_part(params.sigma[1, 1])
        b2 = _positive_part(params.b[1])
        b21 = _positive_part(params.beta[1, 0])
        return cls(*s0, *s21, *s22, *b2, *b21)

    def check_against(self, params: AdmissibleParams) -> None:
        pairs = [
            ("sigma0", self.sigma0_pos - self.sigma0_neg, params.sigma0),
            ("sigma21", self.sigma21_pos - self.sigma21_neg,
             params.sigma[1, 0]),
            ("sigma22", self.sigma22_pos - self.sigma22_neg,
             params.sigma[1, 1]),
            ("b2", self.b2_pos - self.b2_neg, params.b[1]),
            ("beta21", self.beta21_pos - self.beta21_neg, params.beta[1, 0]),
        ]
        for name, got, want in pairs:
            if abs(got - want) > 1e-12 * max(1.0, abs(want)):
                raise ValueError(
                    f"split does not reassemble {name}: {got!r} != {want!r}")


# -- path containers -------------------------------------------------------

_NONNEG_COMPONENTS = frozenset({"x", "y", "y_plus", "y_minus"})


@dataclass(frozen=True, eq=False)
class PathBundle:
    """One simulated path: grid, named components, and its noise lineage.

    Stored values are post-jump states.  ``aborted_at`` is the grid time
    from which the scheme could not continue (thinning bound exceeded or
    numeric overflow); later entries are NaN.
    """

    grid: np.ndarray
    components: dict
    seed: int
    dt: float
    eps: float
    u_bound: float
    aborted_at: float = None
    clamp_count: int = 0

    def __post_init__(self):
        n = len(self.grid)
        for name, arr in self.components.items():
            if arr.shape != (n,):
                raise ValueError(f"component {name!r} does not match grid")
            if name in _NONNEG_COMPONENTS and np.any(arr < 0.0):
                raise ValueError(f"component {name!r} must be nonnegative")

    def component(self, name: str) -> np.ndarray:
        return self.components[name]


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Stacked per-path outputs of a batched run.

    ``components`` maps names to ``(n_paths, n_kept)`` arrays sampled at
    ``times``; per-path reductions (e.g. running suprema) have one column.
    """

    times: np.ndarray
    components: dict
    master_seed: int
    dt: float
    eps: float
    u_bound: float
    n_paths: int
    n_retried: int


# -- stacked event access --------------------------------------------------

class _EventTable:
    """Events of one stream flattened over a batch, grouped by grid step.

    Arrays are sorted by (step, path) with the stable order preserving each
    path's time order; ``offsets[k]:offsets[k+1]`` slices step ``k``.
    """

    __slots__ = ("path", "xi1", "xi2", "umark", "offsets", "size")

    def __init__(self, noises, which, n_steps):
        grid = noises[0].grid
        n_paths = len(noises)
        paths, times, m1, m2, um = [], [], [], [], []
        for i, ns in enumerate(noises):
            t = getattr(ns, which + "_times")
            if len(t) == 0:
                continue
            marks = getattr(ns, which + "_marks")
            paths.append(np.full(len(t), i, dtype=np.intp))
            times.append(t)
            m1.append(marks[:, 0])
            m2.append(marks[:, 1])
            if which == "n1":
                um.append(ns.n1_umarks)
        if not times:
            self.size = 0
            self.offsets = np.zeros(n_steps + 1, dtype=np.intp)
            self.path = np.empty(0, dtype=np.intp)
            self.xi1 = self.xi2 = self.umark = np.empty(0)
            return
        path = np.concatenate(paths)
        t = np.concatenate(times)
        step = np.searchsorted(grid, t, side="left") - 1
        order = np.argsort(step * n_paths + path, kind="stable")
        self.size = len(order)
        self.path = path[order]
        self.xi1 = np.concatenate(m1)[order]
        self.xi2 = np.concatenate(m2)[order]
        self.umark = np.concatenate(um)[order] if um else np.empty(0)
        counts = np.bincount(step, minlength=n_steps)
        self.offsets = np.concatenate(
            ([0], np.cumsum(counts))).astype(np.intp)


def _add_events(target, paths, weights, n_paths):
    if len(paths):
        target += np.bincount(paths, weights=weights, minlength=n_paths)
    return target


# -- shared first-coordinate step ------------------------------------------

def _advance_x(xk, dB1, dB2, dt, b1, b11, s11, s12, ev0, ev1, k, n_paths,
               mu_x1):
    """One Euler step of the catalyst equation; returns (next, went_negative).

    Kept as the single implementation used by all pair systems so that the
    catalyst path is bitwise identical across them for shared noise.
    """
    xn = xk + dt * (b1 + b11 * xk) + np.sqrt(2.0 * xk) * (s11 * dB1
                                                          + s12 * dB2)
    s, e = ev0.offsets[k], ev0.offsets[k + 1]
    if e > s:
        xn = _add_events(xn, ev0.path[s:e], ev0.xi1[s:e], n_paths)
    s, e = ev1.offsets[k], ev1.offsets[k + 1]
    if e > s:
        acc = ev1.umark[s:e] <= xk[ev1.path[s:e]]
        if acc.any():
            xn = _add_events(xn, ev1.path[s:e][acc], ev1.xi1[s:e][acc],
                             n_paths)
    if mu_x1 != 0.0:
        xn = xn - dt * xk * mu_x1
    neg = xn < 0.0
    return np.where(neg, 0.0, xn), neg


def _region_weights(xi2, region):
    """xi2 contribution per event under a jump-region restriction."""
    if region == "all":
        return xi2
    if region == "plus":
        return np.where(xi2 >= 0.0, xi2, 0.0)
    if region == "minus":
        return np.where(xi2 < 0.0, -xi2, 0.0)   # sign-flipped, nonnegative
    raise ValueError(f"unknown region {region!r}")


def _finalize_aborts(abort_step, grid, *arrays):
    """NaN-out everything strictly after each path's abort step."""
    aborted_at = np.full(len(abort_step), np.nan)
    for p in np.nonzero(abort_step >= 0)[0]:
        k = abort_step[p]
        aborted_at[p] = grid[k]
        for arr in arrays:
            arr[p, k + 1:] = np.nan
    return aborted_at


def _moment(measure, p1, p2, region, eps):
    if measure is None or measure.is_empty:
        return 0.0
    return measure.poly_moment(p1, p2, region=region, eps=eps)


def _batch_shapes(noises, min_components):
    ref = noises[0]
    if ref.n_components < min_components:
        raise ValueError(f"noise must carry at least {min_components} "
                         f"Brownian components, got {ref.n_components}")
    return len(noises), ref.n_steps, ref.dt, ref.eps, ref.u_bound


# -- batch cores -----------------------------------------------------------

def _affine_batch(params, x0, z0, noises, z_region="all"):
    """Euler paths of the pair system (first coordinate + linear partner).

    ``z_region`` restricts which jump marks feed the second coordinate:
    "all" is the two-sided pair equation, "plus" the one-sided limit
    equation.  The first coordinate always reads every mark.
    """
    n_paths, n_steps, dt, eps, u_bound = _batch_shapes(noises, 3)
    _stability_guard(dt, params.beta_bar, "max|beta|")
    grid = noises[0].grid
    brown = np.stack([ns.brownian for ns in noises])
    ev0 = _EventTable(noises, "n0", n_steps)
    ev1 = _EventTable(noises, "n1", n_steps)

    b1, b2 = params.b
    b11, b21, b22 = params.beta[0, 0], params.beta[1, 0], params.beta[1, 1]
    s11, s12 = params.sigma[0]
    s21, s22 = params.sigma[1]
    rt2s0 = math.sqrt(2.0) * params.sigma0
    mu_x1 = _moment(params.mu, 1, 0, "all", eps)
    m_z = _moment(params.m, 0, 1, z_region, eps)
    mu_z = _moment(params.mu, 0, 1, z_region, eps)
    thinning = params.mu is not None and not params.mu.is_empty
    z0_w0 = _region_weights(ev0.xi2, z_region)
    z1_w = _region_weights(ev1.xi2, z_region)

    x = np.empty((n_paths, n_steps + 1))
    z = np.empty((n_paths, n_steps + 1))
    x[:, 0] = x0
    z[:, 0] = z0
    abort_step = np.full(n_paths, -1, dtype=np.intp)
    clamps = np.zeros(n_paths, dtype=np.intp)
    alive = np.ones(n_paths, dtype=bool)

    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(n_steps):
            xk, zk = x[:, k], z[:, k]
            bad = ~(np.isfinite(xk) & np.isfinite(zk))
            if thinning:
                bad |= xk > u_bound
            newly = alive & bad
            if newly.any():
                abort_step[newly] = k
                alive &= ~newly

            dB0, dB1, dB2 = brown[:, 0, k], brown[:, 1, k], brown[:, 2, k]
            xn, neg = _advance_x(xk, dB1, dB2, dt, b1, b11, s11, s12,
                                 ev0, ev1, k, n_paths, mu_x1)
            clamps += neg & alive

            sq = np.sqrt(2.0 * xk)
            zn = zk + dt * (b2 + b21 * xk + b22 * zk) + rt2s0 * dB0 \
                + sq * (s21 * dB1 + s22 * dB2)
            s, e = ev0.offsets[k], ev0.offsets[k + 1]
            if e > s:
                zn = _add_events(zn, ev0.path[s:e], z0_w0[s:e], n_paths)
            if m_z != 0.0:
                zn = zn - dt * m_z
            s, e = ev1.offsets[k], ev1.offsets[k + 1]
            if e > s:
                acc = ev1.umark[s:e] <= xk[ev1.path[s:e]]
                if acc.any():
                    zn = _add_events(zn, ev1.path[s:e][acc],
                                     z1_w[s:e][acc], n_paths)
            if thinning and mu_z != 0.0:
                zn = zn - dt * xk * mu_z

            x[:, k + 1] = xn
            z[:, k + 1] = zn

    aborted_at = _finalize_aborts(abort_step, grid, x, z)
    return {"x": x, "z": z}, aborted_at, clamps


def _cbi_batch(spec, x0, noises):
    """Euler paths of the scalar equation with time-dependent coefficients."""
    n_paths, n_steps, dt, eps, u_bound = _batch_shapes(noises, spec.r + 1)
    grid = noises[0].grid
    coeffs = spec.grid_coefficients(grid)
    _stability_guard(dt, spec.bounds.beta_bar(grid[-1]), "beta_bar")
    brown = np.stack([ns.brownian for ns in noises])
    ev0 = _EventTable(noises, "n0", n_steps)
    ev1 = _EventTable(noises, "n1", n_steps)
    mu_x1 = _moment(spec.mu, 1, 0, "all", eps)
    thinning = spec.mu is not None and not spec.mu.is_empty

    x = np.empty((n_paths, n_steps + 1))
    x[:, 0] = x0
    abort_step = np.full(n_paths, -1, dtype=np.intp)
    clamps = np.zeros(n_paths, dtype=np.intp)
    alive = np.ones(n_paths, dtype=bool)

    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(n_steps):
            xk = x[:, k]
            lk = coeffs["l"][k]
            bad = ~np.isfinite(xk)
            if thinning:
                bad |= lk * xk > u_bound
            newly = alive & bad
            if newly.any():
                abort_step[newly] = k
                alive &= ~newly

            # B_j of the equation maps to noise component j, j = 1..r.
            diff = np.einsum("pj,j->p", brown[:, 1:spec.r + 1, k],
                             coeffs["sigma"][k])
            xn = xk + dt * (coeffs["b"][k] + coeffs["beta"][k] * xk) \
                + np.sqrt(2.0 * xk) * diff
            s, e = ev0.offsets[k], ev0.offsets[k + 1]
            if e > s:
                xn = _add_events(xn, ev0.path[s:e],
                                 spec.theta0 * ev0.xi1[s:e], n_paths)
            s, e = ev1.offsets[k], ev1.offsets[k + 1]
            if e > s:
                acc = ev1.umark[s:e] <= lk * xk[ev1.path[s:e]]
                if acc.any():
                    xn = _add_events(xn, ev1.path[s:e][acc],
                                     spec.theta1 * ev1.xi1[s:e][acc],
                                     n_paths)
            if thinning and mu_x1 != 0.0:
                xn = xn - dt * lk * xk * spec.theta1 * mu_x1
            neg = xn < 0.0
            clamps += neg & alive
            x[:, k + 1] = np.where(neg, 0.0, xn)

    aborted_at = _finalize_aborts(abort_step, grid, x)
    return {"x": x}, aborted_at, clamps


def _catalytic_batch(params, x0, y0, l, noises):
    """Euler paths of the catalyst/reactant system."""
    if params.b[1] < 0.0:
        raise ValueError(f"catalytic reactant requires b2 >= 0, "
                         f"got {params.b[1]!r}")
    if l < 0.0:
        raise ValueError("coupling constant l must be nonnegative")
    n_paths, n_steps, dt, eps, u_bound = _batch_shapes(noises, 3)
    _stability_guard(dt, params.beta_bar, "max|beta|")
    grid = noises[0].grid
    brown = np.stack([ns.brownian for ns in noises])
    ev0 = _EventTable(noises, "n0", n_steps)
    ev1 = _EventTable(noises, "n1", n_steps)

    b1, b2 = params.b
    b11, b21, b22 = params.beta[0, 0], params.beta[1, 0], params.beta[1, 1]
    s11, s12 = params.sigma[0]
    s21, s22 = params.sigma[1]
    s0 = params.sigma0
    mu_x1 = _moment(params.mu, 1, 0, "all", eps)
    mu_y = _moment(params.mu, 0, 1, "plus", eps)
    thinning = params.mu is not None and not params.mu.is_empty
    y0_w = _region_weights(ev0.xi2, "plus")
    y1_w = _region_weights(ev1.xi2, "plus")

    x = np.empty((n_paths, n_steps + 1))
    y = np.empty((n_paths, n_steps + 1))
    x[:, 0] = x0
    y[:, 0] = y0
    abort_step = np.full(n_paths, -1, dtype=np.intp)
    clamps = np.zeros(n_paths, dtype=np.intp)
    alive = np.ones(n_paths, dtype=bool)

    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(n_steps):
            xk, yk = x[:, k], y[:, k]
            inten = l * xk * yk
            bad = ~(np.isfinite(xk) & np.isfinite(yk))
            if thinning:
                bad |= (xk > u_bound) | (inten > u_bound)
            newly = alive & bad
            if newly.any():
                abort_step[newly] = k
                alive &= ~newly

            dB0, dB1, dB2 = brown[:, 0, k], brown[:, 1, k], brown[:, 2, k]
            xn, neg = _advance_x(xk, dB1, dB2, dt, b1, b11, s11, s12,
                                 ev0, ev1, k, n_paths, mu_x1)
            clamps += neg & alive

            sqxy = np.sqrt(2.0 * xk * yk)
            yn = yk + dt * (b2 + b21 * xk * yk + b22 * yk) \
                + s0 * np.sqrt(2.0 * yk) * dB0 \
                + sqxy * (s21 * dB1 + s22 * dB2)
            # Immigration marks in the positive quadrant, uncompensated.
            s, e = ev0.offsets[k], ev0.offsets[k + 1]
            if e > s:
                yn = _add_events(yn, ev0.path[s:e], y0_w[s:e], n_paths)
            s, e = ev1.offsets[k], ev1.offsets[k + 1]
            if e > s:
                acc = ev1.umark[s:e] <= inten[ev1.path[s:e]]
                if acc.any():
                    yn = _add_events(yn, ev1.path[s:e][acc],
                                     y1_w[s:e][acc], n_paths)
            if thinning and mu_y != 0.0:
                yn = yn - dt * inten * mu_y
            negy = yn < 0.0
            clamps += negy & alive
            x[:, k + 1] = xn
            y[:, k + 1] = np.where(negy, 0.0, yn)

    aborted_at = _finalize_aborts(abort_step, grid, x, y)
    return {"x": x, "y": y}, aborted_at, clamps


def _reactant_batch(params, theta, x0, y_plus0, y_minus0, noises, mode,
                    split, with_limit=False, z0=None):
    """Euler paths of the reactant system at scale theta.

    ``mode="single"`` runs one reactant carrying the undecomposed
    coefficients with positive-quadrant jumps; ``mode="pair"`` runs the
    nonnegative-split pair with the second reactant reading sign-flipped
    lower-quadrant marks.  With ``with_limit`` the matching limit equation
    is advanced on the same noise and the running supremum of
    ``|z_k - z|`` is tracked per path.
    """
    if params.beta[1, 1] >= 0.0:
        raise ValueError(f"reactant scaling requires beta22 < 0, "
                         f"got {params.beta[1, 1]!r}")
    if theta < 1.0:
        raise ValueError("theta must be >= 1")
    if mode not in ("single", "pair"):
        raise ValueError(f"unknown mode {mode!r}")
    pair = mode == "pair"
    n_paths, n_steps, dt, eps, u_bound = _batch_shapes(noises, 3)
    _stability_guard(dt, params.beta_bar, "max|beta|")
    grid = noises[0].grid
    brown = np.stack([ns.brownian for ns in noises])
    ev0 = _EventTable(noises, "n0", n_steps)
    ev1 = _EventTable(noises, "n1", n_steps)

    b1, b2 = params.b
    b11, b21, b22 = params.beta[0, 0], params.beta[1, 0], params.beta[1, 1]
    s11, s12 = params.sigma[0]
    s21, s22 = params.sigma[1]
    if pair:
        split = ParameterSplit.from_params(params) if split is None else split
        split.check_against(params)
        coef_p = (split.sigma0_pos, split.sigma21_pos, split.sigma22_pos,
                  split.b2_pos, split.beta21_pos)
        coef_m = (split.sigma0_neg, split.sigma21_neg, split.sigma22_neg,
                  split.b2_neg, split.beta21_neg)
    else:
        coef_p = (params.sigma0, s21, s22, b2, b21)

    mu_x1 = _moment(params.mu, 1, 0, "all", eps)
    m_pos = _moment(params.m, 0, 1, "plus", eps)
    mu_pos = _moment(params.mu, 0, 1, "plus", eps)
    m_neg = _moment(params.m, 0, 1, "minus", eps)     # <= 0
    mu_neg = _moment(params.mu, 0, 1, "minus", eps)
    thinning = params.mu is not None and not params.mu.is_empty
    w0_pos = _region_weights(ev0.xi2, "plus")
    w1_pos = _region_weights(ev1.xi2, "plus")
    w0_neg = _region_weights(ev0.xi2, "minus")        # already sign-flipped
    w1_neg = _region_weights(ev1.xi2, "minus")

    x = np.empty((n_paths, n_steps + 1))
    yp = np.empty((n_paths, n_steps + 1))
    x[:, 0] = x0
    yp[:, 0] = y_plus0
    ym = None
    if pair:
        ym = np.empty((n_paths, n_steps + 1))
        ym[:, 0] = y_minus0
    z = None
    if with_limit:
        z = np.empty((n_paths, n_steps + 1))
        z[:, 0] = z0
        rt2s0 = math.sqrt(2.0) * params.sigma0
        z_region = "all" if pair else "plus"
        wz0 = _region_weights(ev0.xi2, z_region)
        wz1 = _region_weights(ev1.xi2, z_region)
        m_z = _moment(params.m, 0, 1, z_region, eps)
        mu_z = _moment(params.mu, 0, 1, z_region, eps)
        gap = np.zeros(n_paths)

    abort_step = np.full(n_paths, -1, dtype=np.intp)
    clamps = np.zeros(n_paths, dtype=np.intp)
    alive = np.ones(n_paths, dtype=bool)

    def reactant_step(yk, xk, coefs, dB0, dB1, dB2, k, sign):
        """One Euler step of a reactant; sign picks the jump quadrant."""
        sg0, sg21, sg22, bb2, bb21 = coefs
        ty = yk / theta
        inten = xk * ty
        yn = yk + dt * (-theta * b22 + bb21 * xk * ty + bb2 * ty
                        + b22 * yk) \
            + sg0 * np.sqrt(2.0 * ty) * dB0 \
            + np.sqrt(2.0 * xk * ty) * (sg21 * dB1 + sg22 * dB2)
        if sign > 0:
            w0, w1, mm, mmu = w0_pos, w1_pos, m_pos, mu_pos
        else:
            w0, w1, mm, mmu = w0_neg, w1_neg, -m_neg, -mu_neg
        s, e = ev0.offsets[k], ev0.offsets[k + 1]
        if e > s:
            yn = _add_events(yn, ev0.path[s:e], w0[s:e], n_paths)
        if mm != 0.0:
            yn = yn - dt * mm                  # immigration marks compensated
        s, e = ev1.offsets[k], ev1.offsets[k + 1]
        if e > s:
            acc = ev1.umark[s:e] <= inten[ev1.path[s:e]]
            if acc.any():
                yn = _add_events(yn, ev1.path[s:e][acc], w1[s:e][acc],
                                 n_paths)
        if thinning and mmu != 0.0:
            yn = yn - dt * inten * mmu
        return yn, inten

    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(n_steps):
            xk = x[:, k]
            ypk = yp[:, k]
            dB0, dB1, dB2 = brown[:, 0, k], brown[:, 1, k], brown[:, 2, k]

            ypn, inten_p = reactant_step(ypk, xk, coef_p, dB0, dB1, dB2,
                                         k, +1)
            bad = ~(np.isfinite(xk) & np.isfinite(ypk))
            if thinning:
                bad |= (xk > u_bound) | (inten_p > u_bound)
            if pair:
                ymk = ym[:, k]
                ymn, inten_m = reactant_step(ymk, xk, coef_m, dB0, dB1,
                                             dB2, k, -1)
                bad |= ~np.isfinite(ymk)
                if thinning:
                    bad |= inten_m > u_bound
            newly = alive & bad
            if newly.any():
                abort_step[newly] = k
                alive &= ~newly

            xn, neg = _advance_x(xk, dB1, dB2, dt, b1, b11, s11, s12,
                                 ev0, ev1, k, n_paths, mu_x1)
            clamps += neg & alive
            negp = ypn < 0.0
            clamps += negp & alive
            yp[:, k + 1] = np.where(negp, 0.0, ypn)
            if pair:
                negm = ymn < 0.0
                clamps += negm & alive
                ym[:, k + 1] = np.where(negm, 0.0, ymn)
            x[:, k + 1] = xn

            if with_limit:
                zk = z[:, k]
                sq = np.sqrt(2.0 * xk)
                zn = zk + dt * (b2 + b21 * xk + b22 * zk) + rt2s0 * dB0 \
                    + sq * (s21 * dB1 + s22 * dB2)
                s, e = ev0.offsets[k], ev0.offsets[k + 1]
                if e > s:
                    zn = _add_events(zn, ev0.path[s:e], wz0[s:e], n_paths)
                if m_z != 0.0:
                    zn = zn - dt * m_z
                s, e = ev1.offsets[k], ev1.offsets[k + 1]
                if e > s:
                    acc = ev1.umark[s:e] <= xk[ev1.path[s:e]]
                    if acc.any():
                        zn = _add_events(zn, ev1.path[s:e][acc],
                                         wz1[s:e][acc], n_paths)
                if thinning and mu_z != 0.0:
                    zn = zn - dt * xk * mu_z
                z[:, k + 1] = zn
                zkn = (yp[:, k + 1] - ym[:, k + 1]) if pair \
                    else (yp[:, k + 1] - theta)
                gap = np.maximum(gap, np.abs(zkn - zn))

    if pair:
        z_k = yp - ym
        components = {"x": x, "y_plus": yp, "y_minus": ym, "z_k": z_k}
        arrays = (x, yp, ym, z_k)
    else:
        z_k = yp - theta
        components = {"x": x, "y": yp, "z_k": z_k}
        arrays = (x, yp, z_k)
    if with_limit:
        components["z_lim"] = z
        arrays = arrays + (z,)
    aborted_at = _finalize_aborts(abort_step, grid, *arrays)
    if with_limit:
        gap = np.where(np.isnan(aborted_at), gap, np.nan)
        components["gap"] = gap.reshape(-1, 1)
    return components, aborted_at, clamps


# -- single-path wrappers --------------------------------------------------

def _bundle_from_batch(noise, components, aborted_at, clamps):
    aborted = None if math.isnan(aborted_at[0]) else float(aborted_at[0])
    comps = {name: arr[0].copy() for name, arr in components.items()
             if arr.shape[1] > 1}
    return PathBundle(grid=noise.grid, components=comps, seed=noise.seed,
                      dt=noise.dt, eps=noise.eps, u_bound=noise.u_bound,
                      aborted_at=aborted, clamp_count=int(clamps[0]))


def _check_init(name, value):
    if value < 0.0:
        raise ValueError(f"{name} must be nonnegative, got {value!r}")
    return float(value)


def simulate_generalized_cbi(spec: GeneralizedCbiSpec, x0: float,
                             noise: NoiseSystem) -> PathBundle:
    """One path of the scalar branching equation driven by ``noise``."""
    comps, aborted, clamps = _cbi_batch(spec, _check_init("x0", x0), [noise])
    return _bundle_from_batch(noise, comps, aborted, clamps)


def simulate_affine(params: AdmissibleParams, x0: float, z0: float,
                    noise: NoiseSystem, z_region="all") -> PathBundle:
    """One path of the pair system; components ``x`` and ``z``."""
    comps, aborted, clamps = _affine_batch(
        params, _check_init("x0", x0), float(z0), [noise],
        z_region=z_region)
    return _bundle_from_batch(noise, comps, aborted, clamps)


def simulate_affine_voc(params: AdmissibleParams, x_path: np.ndarray,
                        z0: float, noise: NoiseSystem,
                        z_region="all") -> np.ndarray:
    """Second coordinate by the variation-of-constants representation.

    Discretizes the integrating-factor form on the same grid, consuming
    the identical Brownian increments, events, and acceptance decisions as
    the direct scheme (thinning against the supplied first-coordinate
    path), and serves as its cross-check; the direct scheme remains the
    primary simulator.
    """
    x_path = np.asarray(x_path, dtype=float)
    n_steps = noise.n_steps
    if x_path.shape != (n_steps + 1,):
        raise ValueError(f"x_path has shape {x_path.shape}, but the noise "
                         f"grid has {n_steps + 1} points")
    dt, eps = noise.dt, noise.eps
    b2 = params.b[1]
    b21, b22 = params.beta[1, 0], params.beta[1, 1]
    s21, s22 = params.sigma[1]
    rt2s0 = math.sqrt(2.0) * params.sigma0
    m_z = _moment(params.m, 0, 1, z_region, eps)
    mu_z = _moment(params.mu, 0, 1, z_region, eps)
    ev0 = _EventTable([noise], "n0", n_steps)
    ev1 = _EventTable([noise], "n1", n_steps)
    wz0 = _region_weights(ev0.xi2, z_region)
    wz1 = _region_weights(ev1.xi2, z_region)
    grid = noise.grid
    weight = np.exp(-b22 * grid[:-1])           # integrating factor at t_k

    z = np.empty(n_steps + 1)
    z[0] = z0
    acc_sum = 0.0
    for k in range(n_steps):
        xk = x_path[k]
        inc = dt * (b2 + b21 * xk) \
            + rt2s0 * noise.brownian[0, k] \
            + math.sqrt(2.0 * max(xk, 0.0)) * (s21 * noise.brownian[1, k]
                                               + s22 * noise.brownian[2, k])
        s, e = ev0.offsets[k], ev0.offsets[k + 1]
        if e > s:
            inc += wz0[s:e].sum()
        inc -= dt * m_z
        s, e = ev1.offsets[k], ev1.offsets[k + 1]
        if e > s:
            acc = ev1.umark[s:e] <= xk
            inc += wz1[s:e][acc].sum()
        inc -= dt * xk * mu_z
        acc_sum += weight[k] * inc
        z[k + 1] = math.exp(b22 * grid[k + 1]) * (z0 + acc_sum)
    return z


def simulate_catalytic(params: AdmissibleParams, x0: float, y0: float,
                       l: float, noise: NoiseSystem) -> PathBundle:
    """One path of the catalyst/reactant system; components ``x``, ``y``."""
    comps, aborted, clamps = _catalytic_batch(
        params, _check_init("x0", x0), _check_init("y0", y0), float(l),
        [noise])
    return _bundle_from_batch(noise, comps, aborted, clamps)


def simulate_reactant_pair(params: AdmissibleParams, theta: float,
                           x0: float, y_plus0: float, y_minus0: float,
                           noise: NoiseSystem, *, mode="pair",
                           split: ParameterSplit = None) -> PathBundle:
    """One path of the reactant system at scale ``theta``.

    Returns components ``x``, ``y_plus``, ``y_minus``, ``z_k`` in pair
    mode, or ``x``, ``y``, ``z_k`` in single mode with ``z_k = y - theta``.
    """
    comps, aborted, clamps = _reactant_batch(
        params, float(theta), _check_init("x0", x0),
        _check_init("y_plus0", y_plus0),
        _check_init("y_minus0", y_minus0), [noise], mode, split)
    return _bundle_from_batch(noise, comps, aborted, clamps)


# -- ensemble driver -------------------------------------------------------

def run_ensemble(model_fn, *, m, mu, n_paths, master_seed, t_max, dt,
                 u_bound, eps, n_components=3, refinements=0, keep_idx=None,
                 workers=1, chunk_size=DEFAULT_CHUNK,
                 max_doublings=6) -> EnsembleResult:
    """Fan a batch model over substream-seeded paths and stack the output.

    ``model_fn(noises) -> (components, aborted_at, clamps)`` must be a pure
    function of the noise list.  Paths whose thinning bound was exceeded
    are regenerated with the bound doubled (same per-path seed) up to
    ``max_doublings`` times; a path still aborted afterwards raises.
    Results are reduced in path-index order, so the worker count never
    changes the output.  ``refinements`` halves dt that many times via
    bridge refinement before simulating; ``keep_idx`` selects grid columns
    to retain (None keeps all).
    """
    seeds = substream_seed_array(master_seed, np.arange(n_paths))

    def build(seed, bound):
        ns = generate_noise(m, mu, t_max, dt, int(seed), bound, eps,
                            n_components=n_components)
        for _ in range(refinements):
            ns = refine(ns)
        return ns

    def run_chunk(lo, hi):
        noises = [build(s, u_bound) for s in seeds[lo:hi]]
        comps, aborted, _ = model_fn(noises)
        retry = np.nonzero(~np.isnan(aborted))[0]
        tries, bound, retried = 0, u_bound, 0
        while len(retry) and tries < max_doublings:
            tries += 1
            bound *= 2.0
            retried += len(retry)
            redo = [build(seeds[lo + p], bound) for p in retry]
            comps_r, aborted_r, _ = model_fn(redo)
            for name in comps:
                comps[name][retry] = comps_r[name]
            aborted[retry] = aborted_r
            retry = retry[~np.isnan(aborted_r)]
        if len(retry):
            raise RuntimeError(
                f"{len(retry)} paths still exceed the thinning bound after "
                f"{max_doublings} doublings of u_bound={u_bound!r}")
        if keep_idx is not None:
            full = noises[0].n_steps + 1
            comps = {name: (arr[:, keep_idx] if arr.shape[1] == full
                            else arr)
                     for name, arr in comps.items()}
        return comps, retried

    spans = [(lo, min(lo + chunk_size, n_paths))
             for lo in range(0, n_paths, chunk_size)]
    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda lh: run_chunk(*lh), spans))
    else:
        parts = [run_chunk(*span) for span in spans]

    n_retried = sum(r for _, r in parts)
    components = {name: np.concatenate([p[name] for p, _ in parts])
                  for name in parts[0][0]}
    eff_dt = dt / 2 ** refinements
    n_cols = round(t_max / eff_dt) + 1
    times = np.arange(n_cols) * eff_dt
    if keep_idx is not None:
        times = times[keep_idx]
    return EnsembleResult(times=times, components=components,
                          master_seed=int(master_seed), dt=eff_dt, eps=eps,
                          u_bound=u_bound, n_paths=n_paths,
                          n_retried=n_retried)


# -- CSV output ------------------------------------------------------------

def write_paths_csv(bundles, path, extra_metadata=None) -> None:
    """Dump one or more path bundles as a flat CSV table.

    ``extra_metadata`` is an optional mapping written as additional
    ``# key = value`` comment lines ahead of the standard header.
    """
    if isinstance(bundles, PathBundle):
        bundles = [bundles]
    names = list(bundles[0].components)
    ref = bundles[0]
    with open(path, "w", newline="\n") as fh:
        if extra_metadata:
            for key, value in extra_metadata.items():
                fh.write(f"# {key} = {value}\n")
        fh.write(f"# dt = {ref.dt!r}, eps = {ref.eps!r}, "
                 f"u_bound = {ref.u_bound!r}\n")
        fh.write("path_id,t," + ",".join(names) + "\n")
        for pid, bundle in enumerate(bundles):
            if list(bundle.components) != names:
                raise ValueError("bundles carry different components")
            cols = [bundle.components[n] for n in names]
            for i, t in enumerate(bundle.grid):
                row = ",".join("%.17g" % c[i] for c in cols)
                fh.write("%d,%.17g,%s\n" % (pid, t, row))
