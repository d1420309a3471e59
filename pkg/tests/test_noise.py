"""Noise layer: determinism, stream laws, refinement, and round trips."""

import numpy as np
import pytest

from affine_lab.noise import (
    NoiseSystem,
    substream_seed,
    substream_seed_array,
    generate_noise,
    refine,
    steps_for,
    dump_noise,
    load_noise,
)
from affine_lab.params import FiniteAtomicMeasure, ProductExponentialMeasure

EMPTY = FiniteAtomicMeasure([])
ATOMIC = FiniteAtomicMeasure([(0.5, 0.3, 2.0), (1.0, -0.2, 1.0)])   # mass 3.0
PE = ProductExponentialMeasure(total_rate=1.5, rate1=2.0, rate2=3.0,
                               sign_mix=0.7)


def make(seed=7, *, m=ATOMIC, mu=ATOMIC, t_max=2.0, dt=0.25, u_bound=4.0,
         eps=0.0, n_components=3):
    return generate_noise(m, mu, t_max, dt, seed, u_bound, eps,
                          n_components=n_components)


# -- grid bookkeeping ------------------------------------------------------

def test_steps_for_exact_multiples():
    assert steps_for(1.0, 2.0 ** -10) == 1024
    assert steps_for(2.0, 0.25) == 8


def test_steps_for_rejects_non_multiples():
    with pytest.raises(ValueError):
        steps_for(1.0, 0.3)
    with pytest.raises(ValueError):
        steps_for(0.0, 0.1)
    with pytest.raises(ValueError):
        steps_for(1.0, -0.1)


def test_grid_and_shapes():
    ns = make(dt=0.5)
    assert ns.n_steps == 4
    assert ns.n_components == 3
    assert np.allclose(ns.grid, [0.0, 0.5, 1.0, 1.5, 2.0])
    assert ns.brownian.shape == (3, 4)
    assert ns.n0_marks.shape == (len(ns.n0_times), 2)
    assert ns.n1_umarks.shape == ns.n1_times.shape


# -- determinism -----------------------------------------------------------

def test_bitwise_determinism():
    a, b = make(seed=123), make(seed=123)
    assert np.array_equal(a.brownian, b.brownian)
    assert np.array_equal(a.n0_times, b.n0_times)
    assert np.array_equal(a.n0_marks, b.n0_marks)
    assert np.array_equal(a.n1_times, b.n1_times)
    assert np.array_equal(a.n1_umarks, b.n1_umarks)
    assert np.array_equal(a.n1_marks, b.n1_marks)


def test_seeds_differ():
    a, b = make(seed=1), make(seed=2)
    assert not np.array_equal(a.brownian, b.brownian)


def test_streams_are_independent_roles():
    # Emptying m must not perturb the N1 stream, and vice versa.
    full = make(seed=9)
    no_m = make(seed=9, m=EMPTY)
    no_mu = make(seed=9, mu=EMPTY)
    assert np.array_equal(no_m.n1_times, full.n1_times)
    assert np.array_equal(no_m.n1_umarks, full.n1_umarks)
    assert np.array_equal(no_mu.n0_times, full.n0_times)
    assert np.array_equal(no_mu.brownian, full.brownian)


def test_empty_measures_give_no_events():
    ns = make(m=EMPTY, mu=EMPTY)
    assert len(ns.n0_times) == 0
    assert len(ns.n1_times) == 0
    assert ns.brownian.shape == (3, 8)


def test_full_truncation_gives_no_events():
    # eps so large the band removes all atoms.
    ns = make(eps=5.0)
    assert len(ns.n0_times) == 0
    assert len(ns.n1_times) == 0


def test_u_bound_required_when_mu_nonempty():
    with pytest.raises(ValueError):
        make(u_bound=0.0)
    make(u_bound=0.0, mu=EMPTY)          # fine without candidates


# -- event stream laws -----------------------------------------------------

def test_event_times_sorted_in_window():
    for seed in range(20):
        ns = make(seed=seed, t_max=3.0, dt=0.5)
        for times in (ns.n0_times, ns.n1_times):
            assert np.all(np.diff(times) > 0)
            if len(times):
                assert times[0] > 0.0
                assert times[-1] <= 3.0


def test_n0_counts_match_poisson_mean():
    # N0 rate is m.mass = 3.0 on t_max = 2.0: counts ~ Poisson(6).
    n_seeds = 10_000
    counts = np.array([
        len(generate_noise(ATOMIC, EMPTY, 2.0, 0.5, s, 1.0, 0.0).n0_times)
        for s in range(n_seeds)
    ])
    assert abs(counts.mean() - 6.0) < 3.0 * np.sqrt(6.0 / n_seeds)
    assert abs(counts.var() - 6.0) < 4.0 * 6.0 * np.sqrt(3.0 / n_seeds)


def test_n1_rate_scales_with_u_bound():
    # Candidate intensity is u_bound * mass; doubling u_bound doubles counts.
    mean_at = {}
    for ub in (2.0, 4.0):
        counts = [
            len(generate_noise(EMPTY, ATOMIC, 2.0, 0.5, s, ub, 0.0).n1_times)
            for s in range(4000)
        ]
        mean_at[ub] = np.mean(counts)
    lam = 2.0 * 3.0 * 2.0                      # t_max * mass * u_bound=2
    assert abs(mean_at[2.0] - lam) < 3.0 * np.sqrt(lam / 4000)
    assert abs(mean_at[4.0] - 2 * lam) < 3.0 * np.sqrt(2 * lam / 4000)


def test_umarks_uniform_on_bound():
    samples = np.concatenate([
        make(seed=s, t_max=4.0, dt=1.0, u_bound=4.0).n1_umarks
        for s in range(300)
    ])
    assert len(samples) > 5000
    assert samples.min() >= 0.0
    assert samples.max() <= 4.0
    se = 4.0 / np.sqrt(12 * len(samples))
    assert abs(samples.mean() - 2.0) < 4.0 * se


def test_marks_live_on_atoms():
    ns = make(seed=3)
    atoms = {(0.5, 0.3), (1.0, -0.2)}
    for row in np.vstack([ns.n0_marks, ns.n1_marks]):
        assert tuple(row) in atoms


def test_pe_marks_respect_truncation_band():
    ns = make(seed=11, m=PE, mu=PE, eps=0.3, t_max=20.0, dt=1.0)
    marks = np.vstack([ns.n0_marks, ns.n1_marks])
    assert len(marks) > 10
    inside = (marks[:, 0] <= 0.3) & (np.abs(marks[:, 1]) <= 0.3)
    assert not inside.any()


def test_brownian_increment_law():
    ns = make(seed=5, m=EMPTY, mu=EMPTY, t_max=8.0, dt=2.0 ** -9)
    flat = ns.brownian.ravel()
    dt = ns.dt
    assert abs(flat.mean()) < 4.0 * np.sqrt(dt / flat.size)
    assert abs(flat.var() - dt) < 4.0 * dt * np.sqrt(2.0 / flat.size)


# -- substream derivation --------------------------------------------------

def test_substream_seed_injective_over_scan():
    seeds = substream_seed_array(987654321, np.arange(1_000_000))
    assert len(np.unique(seeds)) == 1_000_000


def test_substream_seed_vector_matches_scalar():
    idx = [0, 1, 2, 17, 12345, 2 ** 40]
    vec = substream_seed_array(42, idx)
    for i, v in zip(idx, vec):
        assert substream_seed(42, i) == int(v)


def test_substream_seed_master_sensitivity():
    a = substream_seed_array(1, np.arange(10_000))
    b = substream_seed_array(2, np.arange(10_000))
    assert not np.intersect1d(a, b).size


# -- refinement ------------------------------------------------------------

def test_refine_preserves_pair_sums():
    ns = make(seed=21, t_max=1.0, dt=2.0 ** -4)
    fine = refine(ns)
    assert fine.dt == ns.dt / 2
    assert fine.refinement_level == 1
    assert fine.n_steps == 2 * ns.n_steps
    recombined = fine.brownian[:, 0::2] + fine.brownian[:, 1::2]
    assert np.max(np.abs(recombined - ns.brownian)) < 1e-15


def test_refine_keeps_events():
    ns = make(seed=22)
    fine = refine(ns)
    assert np.array_equal(fine.n0_times, ns.n0_times)
    assert np.array_equal(fine.n0_marks, ns.n0_marks)
    assert np.array_equal(fine.n1_times, ns.n1_times)
    assert np.array_equal(fine.n1_umarks, ns.n1_umarks)
    assert np.array_equal(fine.n1_marks, ns.n1_marks)


def test_refine_is_deterministic_per_level():
    ns = make(seed=23)
    a, b = refine(refine(ns)), refine(refine(ns))
    assert np.array_equal(a.brownian, b.brownian)
    # Levels use distinct bridge substreams.
    once, twice = refine(ns), refine(refine(ns))
    assert once.brownian.shape[1] * 2 == twice.brownian.shape[1]


def test_refined_increments_have_correct_variance():
    ns = make(seed=24, m=EMPTY, mu=EMPTY, t_max=4.0, dt=2.0 ** -6)
    fine = refine(ns)
    flat = fine.brownian.ravel()
    assert abs(flat.var() - fine.dt) < 4.0 * fine.dt * np.sqrt(2.0 / flat.size)


# -- binary round trip -----------------------------------------------------

def test_dump_load_round_trip(tmp_path):
    ns = make(seed=77, m=PE, mu=ATOMIC, eps=0.1)
    fname = tmp_path / "noise.bin"
    dump_noise(ns, fname)
    back = load_noise(fname)
    assert isinstance(back, NoiseSystem)
    assert back.seed == ns.seed
    assert back.t_max == ns.t_max
    assert back.dt == ns.dt
    assert back.u_bound == ns.u_bound
    assert back.eps == ns.eps
    assert back.refinement_level == ns.refinement_level
    for name in ("brownian", "n0_times", "n0_marks", "n1_times",
                 "n1_umarks", "n1_marks"):
        assert np.array_equal(getattr(back, name), getattr(ns, name))


def test_dump_load_round_trip_after_refine(tmp_path):
    ns = refine(make(seed=78))
    fname = tmp_path / "noise.bin"
    dump_noise(ns, fname)
    back = load_noise(fname)
    assert back.refinement_level == 1
    assert np.array_equal(back.brownian, ns.brownian)


def test_load_rejects_bad_magic(tmp_path):
    fname = tmp_path / "junk.bin"
    fname.write_bytes(b"NOPE" + b"\x00" * 100)
    with pytest.raises(ValueError, match="magic"):
        load_noise(fname)


def test_load_rejects_truncated_file(tmp_path):
    ns = make(seed=79)
    fname = tmp_path / "noise.bin"
    dump_noise(ns, fname)
    data = fname.read_bytes()
    fname.write_bytes(data[:len(data) - 16])
    with pytest.raises(ValueError, match="truncated"):
        load_noise(fname)
