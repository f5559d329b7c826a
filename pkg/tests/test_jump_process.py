import math

import numpy as np
import pytest
from scipy import integrate

from spinboson.errors import EstimateUnreliableError
from spinboson.jump_process import (
    SpinPath,
    estimate_moment_mc,
    estimate_Z,
    interaction_action,
    moment_closed_form,
    sample_path,
)
from spinboson.rng import stream


def test_sample_path_deterministic():
    a = sample_path(5.0, stream(3, 1))
    b = sample_path(5.0, stream(3, 1))
    assert a.initial_sign == b.initial_sign
    np.testing.assert_array_equal(a.jump_times, b.jump_times)


def test_sample_path_statistics():
    rng = stream(11, 0)
    n = 60_000
    jumps = np.empty(n)
    signs = np.empty(n)
    for i in range(n):
        p = sample_path(5.0, rng)
        jumps[i] = len(p.jump_times)
        signs[i] = p.initial_sign
    # Poisson(5) jump count and symmetric initial sign
    assert abs(jumps.mean() - 5.0) < 3 * math.sqrt(5.0 / n)
    assert abs(np.mean(signs == 1) - 0.5) < 3 * math.sqrt(0.25 / n)


def test_spin_path_validation():
    with pytest.raises(ValueError):
        SpinPath(2, np.array([1.0]), 5.0)
    with pytest.raises(ValueError):
        SpinPath(1, np.array([3.0, 2.0]), 5.0)
    with pytest.raises(ValueError):
        SpinPath(1, np.array([6.0]), 5.0)


def test_sign_at_flips():
    p = SpinPath(1, np.array([1.0, 2.5]), 4.0)
    assert p.sign_at(0.5) == 1
    assert p.sign_at(1.5) == -1
    assert p.sign_at(3.0) == 1


def _action_by_quadrature(path, kernel):
    bounds = np.concatenate([[0.0], path.jump_times, [path.horizon]])
    total = 0.0
    for i in range(len(bounds) - 1):
        for j in range(len(bounds) - 1):
            si = path.initial_sign * (-1) ** i
            sj = path.initial_sign * (-1) ** j
            val, _ = integrate.dblquad(
                lambda s, t: kernel.h(t - s),
                bounds[i], bounds[i + 1], bounds[j], bounds[j + 1],
                epsabs=1e-10, epsrel=1e-8,
            )
            total += si * sj * val
    return total


def test_action_constant_path_is_rectangle_mass(indicator_kernel):
    p = SpinPath(1, np.array([]), 3.0)
    got = interaction_action(p, indicator_kernel)
    assert got == pytest.approx(indicator_kernel.rectangle_mass(0, 3, 0, 3), rel=1e-10)
    assert got > 0


def test_action_invariant_under_global_flip(indicator_kernel):
    jumps = np.array([0.4, 1.1, 1.7])
    up = SpinPath(1, jumps, 2.5)
    down = SpinPath(-1, jumps, 2.5)
    assert interaction_action(up, indicator_kernel) == pytest.approx(
        interaction_action(down, indicator_kernel), rel=1e-14
    )


def test_action_one_jump_against_quadrature(indicator_kernel):
    p = SpinPath(1, np.array([1.0]), 2.0)
    got = interaction_action(p, indicator_kernel)
    assert got == pytest.approx(_action_by_quadrature(p, indicator_kernel), rel=1e-7)


def test_action_random_paths_against_quadrature(indicator_kernel):
    rng = stream(17, 0)
    done = 0
    while done < 3:
        p = sample_path(3.0, rng)
        if len(p.jump_times) > 6:
            continue
        got = interaction_action(p, indicator_kernel)
        want = _action_by_quadrature(p, indicator_kernel)
        assert got == pytest.approx(want, rel=1e-6, abs=1e-9)
        done += 1


def test_estimate_Z_at_alpha_zero_is_exactly_one(indicator_kernel):
    est = estimate_Z(0.0, 5.0, indicator_kernel, samples=10, seed=1)
    assert est.value == 1.0
    assert est.std_error == 0.0


def test_estimate_Z_positive_alpha_jensen(indicator_kernel):
    est = estimate_Z(3e-4, 5.0, indicator_kernel, samples=20_000, seed=2)
    assert est.value > 1.0 - 3 * est.std_error


def test_estimate_Z_deterministic_and_worker_invariant(indicator_kernel):
    a = estimate_Z(2e-4, 4.0, indicator_kernel, samples=5_000, seed=9, workers=1)
    b = estimate_Z(2e-4, 4.0, indicator_kernel, samples=5_000, seed=9, workers=4)
    assert (a.value, a.std_error) == (b.value, b.std_error)


def test_estimate_Z_overflow_reported(indicator_kernel):
    with pytest.raises(EstimateUnreliableError):
        estimate_Z(1e6, 10.0, indicator_kernel, samples=200, seed=3)


def test_estimate_Z_agrees_with_naive_path_average(indicator_kernel):
    alpha, horizon = 5e-4, 3.0
    est = estimate_Z(alpha, horizon, indicator_kernel, samples=40_000, seed=21)
    # independent route: explicit paths + exact per-path action
    rng = stream(22, 0)
    n = 12_000
    vals = np.empty(n)
    for i in range(n):
        p = sample_path(horizon, rng)
        vals[i] = math.exp(0.5 * alpha * interaction_action(p, indicator_kernel))
    naive = vals.mean()
    se = math.sqrt(est.std_error**2 + vals.var(ddof=1) / n)
    assert abs(est.value - naive) < 3 * se


def test_moment_closed_form_examples():
    assert moment_closed_form([0.5, 1.5]) == pytest.approx(math.exp(-2), rel=1e-14)
    assert moment_closed_form([0.7]) == 0.0
    eps = 1e-6
    assert moment_closed_form([1, 1 + eps, 2, 2 + eps]) == pytest.approx(1.0, abs=1e-5)
    with pytest.raises(ValueError):
        moment_closed_form([1.0, 1.0])
    with pytest.raises(ValueError):
        moment_closed_form([2.0, 1.0])


def test_moment_mc_matches_closed_form():
    est = estimate_moment_mc([0.5, 1.5], samples=300_000, seed=4)
    assert abs(est.value - math.exp(-2)) < 3 * est.std_error
    est = estimate_moment_mc([0.7], samples=100_000, seed=5)
    assert abs(est.value) < 3 * est.std_error
    est = estimate_moment_mc([0.2, 0.4, 1.0, 1.3], samples=300_000, seed=6)
    assert abs(est.value - math.exp(-1)) < 3 * est.std_error


def test_moment_mc_random_tuples_lemma_equivalence():
    rng = stream(30, 0)
    for trial in range(5):
        q = int(rng.integers(1, 7))
        t = np.cumsum(0.05 + rng.exponential(0.4, size=q)) + rng.uniform(0, 0.5)
        est = estimate_moment_mc(t, samples=200_000, seed=100 + trial)
        want = moment_closed_form(t)
        assert abs(est.value - want) < 3 * max(est.std_error, 1e-12)


def test_moment_mc_deterministic_across_workers():
    a = estimate_moment_mc([0.3, 0.9], samples=30_000, seed=8, workers=1)
    b = estimate_moment_mc([0.3, 0.9], samples=30_000, seed=8, workers=8)
    assert (a.value, a.std_error) == (b.value, b.std_error)
