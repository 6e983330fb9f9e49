import math

import numpy as np
import pytest

from app.core.exceptions import DomainError
from app.models.channels import LinearChannel
from app.models.fisher import qfi
from app.models.probe_opt import (
    OptimizerOptions,
    count_components,
    entanglement_threshold,
    family_error_curves,
    menorah_scan,
    optimize_probe,
)
from app.models.schemas import ChannelKind, NoiseParams, ProbeFamily
from app.models.spin_core import make_probe


def test_noiseless_optimum_is_noon():
    result = optimize_probe(NoiseParams(), 4)
    assert result.qfi == pytest.approx(16.0, rel=1e-8)
    assert result.probe.n_qubits == 4


def test_optimum_beats_standard_families():
    noise = NoiseParams(Gamma0=0.05)
    result = optimize_probe(noise, 8, OptimizerOptions(restarts=4))
    channel = LinearChannel(noise, 8)
    for family in ("noon", "cosine", "spin_coherent", "phase_uniform"):
        value = qfi(channel.apply(make_probe(family, 8))).qfi
        assert result.qfi >= value - 1e-10


def test_reported_qfi_matches_probe():
    noise = NoiseParams(Gamma0=0.02)
    result = optimize_probe(noise, 6, OptimizerOptions(restarts=3))
    assert qfi(LinearChannel(noise, 6).apply(result.probe)).qfi == pytest.approx(result.qfi, rel=1e-10)
    assert np.sum(result.probe.amplitudes.real) > 0


def test_optimizer_is_reproducible():
    noise = NoiseParams(Gamma0=0.03)
    options = OptimizerOptions(restarts=5, seed=7)
    first = optimize_probe(noise, 6, options)
    second = optimize_probe(noise, 6, options)
    assert np.array_equal(first.probe.amplitudes, second.probe.amplitudes)
    threaded = optimize_probe(noise, 6, options.model_copy(update={"threads": 3}))
    assert np.allclose(threaded.probe.amplitudes, first.probe.amplitudes, rtol=0, atol=1e-12)


def test_symmetric_optimum_under_symmetric_noise():
    result = optimize_probe(NoiseParams(Gamma0=0.04), 7, OptimizerOptions(restarts=3, verify_symmetry=True))
    amplitudes = result.probe.amplitudes.real
    assert np.allclose(amplitudes, amplitudes[::-1], atol=1e-12)
    assert result.symmetry_gap is not None
    assert result.symmetry_gap < 1e-4


def test_asymmetric_noise_optimizes_full_vector():
    noise = NoiseParams(gamma_minus=0.1)
    result = optimize_probe(noise, 4, OptimizerOptions(restarts=3), kind=ChannelKind.INDIVIDUAL)
    assert result.qfi > 0
    assert result.qfi <= 16.0


def test_optimizer_size_limit():
    with pytest.raises(DomainError):
        optimize_probe(NoiseParams(Gamma0=0.01), 201)


@pytest.mark.parametrize(
    "profile, expected",
    [
        ([0.7, 0.0, 0.0, 0.0, 0.7], 2),
        ([0.5, 0.0, 0.7, 0.0, 0.5], 3),
        ([0.2, 0.5, 0.7, 0.5, 0.2], 1),
        ([0.6, 0.1, 0.5, 0.5, 0.1, 0.6], 3),
    ],
)
def test_count_components(profile, expected):
    assert count_components(np.array(profile)) == expected


def test_count_components_ignores_noise_below_threshold():
    profile = np.array([0.7, 1e-5, 0.0, 1e-5, 0.7])
    assert count_components(profile) == 2


def test_family_error_curves_layout():
    points = family_error_curves(
        [ProbeFamily.COSINE, ProbeFamily.NOON], 6, [0.01, 0.02], include_optimized=True,
        options=OptimizerOptions(restarts=2),
    )
    assert len(points) == 6
    assert [p.family for p in points[:3]] == ["cosine", "noon", "optimized"]
    for point in points:
        assert point.inverse_qfi == pytest.approx(1 / point.qfi)
        assert point.quantum_error == pytest.approx(36 * (1 / point.qfi - point.Gamma0))
    optimized = [p for p in points if p.family == "optimized"]
    others = [p for p in points if p.family != "optimized"]
    for best in optimized:
        assert all(best.qfi >= p.qfi - 1e-10 for p in others if p.Gamma0 == best.Gamma0)


def test_noon_quantum_error():
    """Для NOON N^2 (1/F - Gamma0) = exp(mu0) - mu0"""
    n, gamma = 10, 0.01
    point = family_error_curves([ProbeFamily.NOON], n, [gamma], include_optimized=False)[0]
    mu0 = gamma * n * n
    assert point.quantum_error == pytest.approx(math.exp(mu0) - mu0, rel=1e-8)


@pytest.mark.parametrize("k, expected", [(2, 0.251), (3, 0.081), (4, 0.041)])
def test_entanglement_thresholds(k, expected):
    assert entanglement_threshold(k, tolerance=1e-4) == pytest.approx(expected, abs=0.002)


def test_entanglement_threshold_domain():
    with pytest.raises(DomainError):
        entanglement_threshold(5)


def test_menorah_requires_sorted_grid():
    with pytest.raises(DomainError):
        menorah_scan(6, [0.1, 0.01])


@pytest.mark.slow
def test_menorah_bifurcations():
    """N = 40: от двух компонент (NOON) через 3 и 4 к одному горбу"""
    grid = [float(v) for v in np.geomspace(1e-4, 1e-1, 31)]
    scan = menorah_scan(40, grid, OptimizerOptions(restarts=4))
    counts = scan.component_counts
    assert counts[0] == 2
    assert 3 in counts and 4 in counts
    assert counts.index(3) < counts.index(4)
    assert counts[-1] == 1


@pytest.mark.slow
def test_individual_noise_depends_on_total_strength():
    """N = 40, gamma = 0.1: 1/F близко к (e^gamma - 1)/N + 2 sqrt(r)/N^2 при любом разбиении"""
    n, total = 40, 0.1
    r = n * math.expm1(total)
    expected = math.expm1(total) / n + 2 * math.sqrt(r) / n ** 2
    splits = [
        NoiseParams(gamma0=total),
        NoiseParams(gamma_minus=total / 2, gamma_plus=total / 2),
        NoiseParams(gamma0=total / 2, gamma_minus=total / 4, gamma_plus=total / 4),
    ]
    values = []
    for noise in splits:
        result = optimize_probe(noise, n, OptimizerOptions(restarts=3), kind=ChannelKind.INDIVIDUAL)
        values.append(1 / result.qfi)
        assert 1 / result.qfi == pytest.approx(expected, rel=0.15)
    assert (max(values) - min(values)) / min(values) < 0.03


def test_two_qubit_optimum_at_threshold():
    """В пороговой точке Gamma0 = 0.251 пара кубитов дает F ~ 2 exp(-Gamma0)"""
    result = optimize_probe(NoiseParams(Gamma0=0.251), 2, OptimizerOptions(restarts=3))
    assert result.qfi == pytest.approx(1.5565, abs=1e-3)
    assert result.qfi == pytest.approx(2 * math.exp(-0.251), abs=2e-3)


def test_value_grows_with_iteration_budget():
    noise = NoiseParams(Gamma0=0.02)
    start = make_probe("spin_coherent", 8)
    values = []
    for budget in (1, 2, 5, 20, 200):
        options = OptimizerOptions(restarts=1, max_iterations=budget)
        values.append(optimize_probe(noise, 8, options, initial=start).qfi)
    assert all(b >= a - 1e-10 for a, b in zip(values, values[1:]))
    assert values[-1] > qfi(LinearChannel(noise, 8).apply(start)).qfi


def test_warm_start_not_worse_than_cold_start():
    grid = [0.005, 0.01, 0.02, 0.04]
    options = OptimizerOptions(restarts=2)
    scan = menorah_scan(8, grid, options)
    for gamma, warm in zip(grid, scan.qfi):
        cold = optimize_probe(NoiseParams(Gamma0=gamma), 8, options).qfi
        assert warm >= cold - 1e-8


@pytest.mark.slow
def test_menorah_counts_grow_until_collapse():
    """Число компонент не убывает, пока профиль не сливается в один горб"""
    grid = [float(v) for v in np.geomspace(1e-4, 1e-1, 31)]
    counts = menorah_scan(40, grid, OptimizerOptions(restarts=4)).component_counts
    rising = counts[: counts.index(4) + 1]
    assert all(b >= a for a, b in zip(rising, rising[1:]))
    assert set(rising) >= {2, 3, 4}


@pytest.mark.slow
def test_strong_dephasing_optimum_is_cosine():
    n = 100
    result = optimize_probe(NoiseParams(Gamma0=0.05), n, OptimizerOptions(restarts=3))
    cosine = make_probe("cosine", n).amplitudes.real
    overlap = abs(float(np.dot(result.probe.amplitudes.real, cosine)))
    assert overlap >= 0.99
