"""Replayable driving noise: Brownian increments plus marked event streams.

Every path owns a ``NoiseSystem`` generated from a single 64-bit seed.  The
seed keys independent counter-based substreams (Philox4x64) per role:

    role 0  Brownian increments (all components)
    role 1  events of the immigration stream N0 (times, then marks)
    role 2  candidate events of the thinned stream N1
            (times, then uniform thinning marks on [0, u_bound], then marks)
    role 3+ Brownian-bridge midpoints for successive grid refinements

N1 is generated with the dominating intensity ``u_bound * mass`` and carries
uniform ``umarks``; simulators accept a candidate when its umark falls below
the state-dependent intensity, and must abort if that intensity ever exceeds
``u_bound`` (the stream above the bound was never generated).

Refining the grid halves ``dt``, splits each Brownian increment with a
bridge midpoint from the next dedicated role, and leaves both event lists
untouched, so schemes at dt and dt/2 are driven by the same underlying path.

``substream_seed`` derives per-path seeds from a master seed; it is exactly
injective in the path index for a fixed master seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from numpy.random import Generator, Philox

__all__ = [
    "NoiseSystem",
    "substream_seed",
    "generate_noise",
    "refine",
    "steps_for",
    "dump_noise",
    "load_noise",
]

RNG_ID = "philox4x64"

ROLE_BROWNIAN = 0
ROLE_N0 = 1
ROLE_N1 = 2
ROLE_BRIDGE_BASE = 3

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_MAGIC = b"AFLN"
_VERSION = 1


def substream_seed(master_seed: int, index: int) -> int:
    """Derive the seed of path ``index`` from ``master_seed``.

    SplitMix64 finalizer applied to ``master + GOLDEN * (index + 1)``; the
    odd multiplier makes the map injective in ``index`` (mod 2**64).
    """
    z = (int(master_seed) + _GOLDEN * (int(index) + 1)) & _MASK64
    z ^= z >> 30
    z = (z * _MIX1) & _MASK64
    z ^= z >> 27
    z = (z * _MIX2) & _MASK64
    z ^= z >> 31
    return z


def substream_seed_array(master_seed: int, indices) -> np.ndarray:
    """Vectorized twin of :func:`substream_seed` (uint64 in, uint64 out)."""
    with np.errstate(over="ignore"):
        z = np.uint64(master_seed) + np.uint64(_GOLDEN) * (
            np.asarray(indices, dtype=np.uint64) + np.uint64(1))
        z ^= z >> np.uint64(30)
        z *= np.uint64(_MIX1)
        z ^= z >> np.uint64(27)
        z *= np.uint64(_MIX2)
        z ^= z >> np.uint64(31)
    return z


def _stream(seed: int, role: int) -> Generator:
    return Generator(Philox(key=[seed, role]))


def steps_for(t_max: float, dt: float) -> int:
    """Number of grid steps; ``t_max`` must be an integer multiple of ``dt``."""
    if dt <= 0.0 or t_max <= 0.0:
        raise ValueError("t_max and dt must be positive")
    n = round(t_max / dt)
    if n < 1 or abs(n * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise ValueError(f"t_max={t_max!r} is not an integer multiple of dt={dt!r}")
    return n


@dataclass(frozen=True, eq=False)
class NoiseSystem:
    """One path's driving noise on a uniform grid.

    ``brownian[c, k]`` is the increment of component ``c`` over step ``k``.
    Event times are sorted in ``(0, t_max]``; marks are rows ``(xi1, xi2)``.
    """

    seed: int
    t_max: float
    dt: float
    u_bound: float
    eps: float
    refinement_level: int
    brownian: np.ndarray
    n0_times: np.ndarray
    n0_marks: np.ndarray
    n1_times: np.ndarray
    n1_umarks: np.ndarray
    n1_marks: np.ndarray
    rng_id: str = RNG_ID

    @property
    def n_steps(self) -> int:
        return self.brownian.shape[1]

    @property
    def n_components(self) -> int:
        return self.brownian.shape[0]

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


def _event_times(rng: Generator, rate: float, t_max: float) -> np.ndarray:
    if rate <= 0.0:
        return np.empty(0)
    chunks = []
    t0 = 0.0
    size = max(16, int(rate * t_max * 1.5) + 8)
    while True:
        gaps = rng.exponential(1.0 / rate, size=size)
        times = t0 + np.cumsum(gaps)
        if times[-1] > t_max:
            chunks.append(times[times <= t_max])
            break
        chunks.append(times)
        t0 = times[-1]
    return np.concatenate(chunks)


def generate_noise(m, mu, t_max: float, dt: float, seed: int,
                   u_bound: float, eps: float,
                   n_components: int = 3) -> NoiseSystem:
    """Generate a path's noise from its seed.

    Identical arguments always produce a bitwise-identical system.  ``m``
    feeds N0 at rate ``m.mass(eps=eps)``; ``mu`` feeds the candidate stream
    N1 at rate ``u_bound * mu.mass(eps=eps)``.  Empty (or fully truncated)
    measures produce empty event lists without consuming any randomness.
    """
    n_steps = steps_for(t_max, dt)
    if eps < 0.0:
        raise ValueError("eps must be nonnegative")
    if u_bound <= 0.0 and not mu.is_empty:
        raise ValueError("u_bound must be positive when mu is nonempty")

    brownian = _stream(seed, ROLE_BROWNIAN).normal(
        0.0, np.sqrt(dt), size=(n_components, n_steps))

    rate0 = m.mass(eps=eps) if m is not None else 0.0
    if rate0 > 0.0:
        rng0 = _stream(seed, ROLE_N0)
        n0_times = _event_times(rng0, rate0, t_max)
        n0_marks = m.sample(rng0, len(n0_times), eps=eps) \
            if len(n0_times) else np.empty((0, 2))
    else:
        n0_times, n0_marks = np.empty(0), np.empty((0, 2))

    rate1 = (u_bound * mu.mass(eps=eps)) if mu is not None else 0.0
    if rate1 > 0.0:
        rng1 = _stream(seed, ROLE_N1)
        n1_times = _event_times(rng1, rate1, t_max)
        n1_umarks = rng1.uniform(0.0, u_bound, size=len(n1_times))
        n1_marks = mu.sample(rng1, len(n1_times), eps=eps) \
            if len(n1_times) else np.empty((0, 2))
    else:
        n1_times = np.empty(0)
        n1_umarks = np.empty(0)
        n1_marks = np.empty((0, 2))

    return NoiseSystem(seed=int(seed), t_max=float(t_max), dt=float(dt),
                       u_bound=float(u_bound), eps=float(eps),
                       refinement_level=0, brownian=brownian,
                       n0_times=n0_times, n0_marks=n0_marks,
                       n1_times=n1_times, n1_umarks=n1_umarks,
                       n1_marks=n1_marks)


def refine(noise: NoiseSystem) -> NoiseSystem:
    """Halve ``dt``, splitting increments with Brownian-bridge midpoints.

    Component sums over the grid are preserved and event lists are reused
    unchanged.  Each refinement level draws from its own substream, so
    ``refine(refine(ns))`` is deterministic as well.
    """
    rng = _stream(noise.seed, ROLE_BRIDGE_BASE + noise.refinement_level)
    mid = rng.normal(0.0, np.sqrt(noise.dt) / 2.0, size=noise.brownian.shape)
    out = np.empty((noise.n_components, 2 * noise.n_steps))
    out[:, 0::2] = noise.brownian / 2.0 + mid
    out[:, 1::2] = noise.brownian / 2.0 - mid
    return replace(noise, dt=noise.dt / 2.0, brownian=out,
                   refinement_level=noise.refinement_level + 1)


# -- binary round trip -----------------------------------------------------

_HEADER = struct.Struct("<4sIQddddIIQQQ")


def dump_noise(noise: NoiseSystem, path) -> None:
    """Write the system to a self-describing little-endian binary file."""
    head = _HEADER.pack(
        _MAGIC, _VERSION, noise.seed, noise.t_max, noise.dt, noise.u_bound,
        noise.eps, noise.refinement_level, noise.n_components, noise.n_steps,
        len(noise.n0_times), len(noise.n1_times))
    with open(path, "wb") as fh:
        fh.write(head)
        for arr in (noise.brownian, noise.n0_times, noise.n0_marks,
                    noise.n1_times, noise.n1_umarks, noise.n1_marks):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_noise(path) -> NoiseSystem:
    """Read a system written by :func:`dump_noise`."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, seed, t_max, dt, u_bound, eps, level, n_comp, \
            n_steps, k0, k1 = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise ValueError("not a noise dump (bad magic)")
        if version != _VERSION:
            raise ValueError(f"unsupported noise dump version {version}")

        def read(shape):
            count = int(np.prod(shape))
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError("truncated noise dump")
            return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

        return NoiseSystem(
            seed=seed, t_max=t_max, dt=dt, u_bound=u_bound, eps=eps,
            refinement_level=level,
            brownian=read((n_comp, n_steps)),
            n0_times=read((k0,)), n0_marks=read((k0, 2)),
            n1_times=read((k1,)), n1_umarks=read((k1,)),
            n1_marks=read((k1, 2)))
