import math

import numpy as np
import pytest

from app.core.exceptions import DomainError, InputValidationError
from app.models.probe_opt import OptimizerOptions, optimize_probe
from app.models.schemas import AlphaSource, ChannelKind, NoiseParams, PotentialKind
from app.models.semiclassical import (
    Potential,
    alpha_sweep,
    build_potential,
    cluster_optimize,
    gaussian_width,
    ground_state,
    is_sudden_death_regime,
    loss_dephasing_fraction,
    potential_kind_for,
    precision_bound,
    profile_center,
    profile_overlap,
    profile_parameters,
    qfi_functional,
    sinch,
    sudden_death_bound,
)


def test_box_ground_state():
    """Плоский потенциал: lambda = mu0 + pi^2, профиль - косинус"""
    pot = Potential(kind=PotentialKind.BOX, n_qubits=100, mu0=50.0)
    ground = ground_state(pot)
    assert ground.lambda_min == pytest.approx(50.0 + math.pi ** 2, rel=1e-6)
    expected = math.sqrt(2) * np.cos(math.pi * ground.x)
    assert np.allclose(ground.psi, expected, atol=1e-4)


def test_harmonic_ground_state():
    """mu0 + r (1 + 4x^2): lambda = mu0 + r + 2 sqrt(r)"""
    r = 1e4
    pot = Potential(kind=PotentialKind.HARMONIC, n_qubits=100, mu0=10.0, r=r)
    assert ground_state(pot).lambda_min == pytest.approx(10.0 + r + 2 * math.sqrt(r), rel=1e-4)


@pytest.mark.parametrize(
    "pot",
    [
        Potential(kind=PotentialKind.BOX, n_qubits=50, mu0=5.0),
        Potential(kind=PotentialKind.COLLECTIVE_GENERAL, n_qubits=50, mu0=5.0, mu1=30.0),
        Potential(kind=PotentialKind.COLLECTIVE_SINCH, n_qubits=50, mu0=5.0, mu1=30.0, s_star=-0.5),
        Potential(kind=PotentialKind.INDIVIDUAL, n_qubits=50, mu0=1.0, r=200.0),
        Potential(kind=PotentialKind.LOSS, n_qubits=50, mu0=2.0, r1=100.0, r2=10.0),
    ],
)
def test_eigenvalue_above_potential_minimum(pot):
    ground = ground_state(pot)
    assert ground.lambda_min >= float(np.min(pot(ground.x)))
    assert np.all(ground.psi >= -1e-12)


@pytest.mark.parametrize("r, lower, upper", [(1e2, 0.82, 0.90), (1e3, 0.93, 0.98), (1e4, 0.97, 1.0)])
def test_individual_profile_width(r, lower, upper):
    """Ширина профиля стремится к (2 r^(1/4))^-1 снизу, отставание ~ r^(-1/2)"""
    pot = Potential(kind=PotentialKind.INDIVIDUAL, n_qubits=1000, r=r)
    ground = ground_state(pot)
    ratio = gaussian_width(ground.x, ground.psi) * 2 * r ** 0.25
    assert lower < ratio < upper
    assert profile_center(ground.x, ground.psi) == pytest.approx(0.0, abs=1e-8)


def test_loss_profile_center_and_width():
    r1 = r2 = 400.0
    pot = Potential(kind=PotentialKind.LOSS, n_qubits=100, r1=r1, r2=r2)
    ground = ground_state(pot)
    params = profile_parameters(pot)
    assert params["center"] == 0.0
    assert profile_center(ground.x, ground.psi) == pytest.approx(0.0, abs=1e-8)
    assert gaussian_width(ground.x, ground.psi) == pytest.approx(params["width"], rel=0.15)


def test_loss_profile_shifts_away_from_lossy_arm():
    pot = Potential(kind=PotentialKind.LOSS, n_qubits=100, r1=1000.0, r2=100.0)
    ground = ground_state(pot)
    assert profile_parameters(pot)["center"] > 0
    assert profile_center(ground.x, ground.psi) > 0


def test_qfi_functional_for_box_profile():
    """F/N^2 = 1/mu0 - pi^2/mu0^2 для косинусного профиля"""
    mu0 = 1000.0
    pot = Potential(kind=PotentialKind.BOX, n_qubits=100, mu0=mu0)
    ground = ground_state(pot)
    value = qfi_functional(ground.x, ground.psi, pot)
    assert value == pytest.approx(1 / mu0 - math.pi ** 2 / mu0 ** 2, rel=1e-4)


def test_qfi_functional_requires_positive_potential():
    pot = Potential(kind=PotentialKind.BOX, n_qubits=10, mu0=0.0)
    x = np.linspace(-0.45, 0.45, 10)
    with pytest.raises(DomainError):
        qfi_functional(x, np.cos(np.pi * x), pot)


def test_potential_domain():
    pot = Potential(kind=PotentialKind.INDIVIDUAL, n_qubits=10, r=1.0)
    with pytest.raises(DomainError):
        pot(np.array([0.5]))


def test_grid_resolution_check():
    with pytest.raises(InputValidationError):
        ground_state(Potential(kind=PotentialKind.BOX, n_qubits=10, mu0=1.0), grid_points=100)


def test_build_potential_parameters():
    noise = NoiseParams(Gamma0=0.01, Gamma_minus=0.002, gamma0=0.05, gamma1=0.1)
    pot = build_potential(noise, PotentialKind.INDIVIDUAL, 20)
    assert pot.mu0 == pytest.approx(4.0)
    assert pot.mu1 == pytest.approx(0.8)
    assert pot.r == pytest.approx(20 * math.expm1(0.05))
    assert pot.r1 == pytest.approx(20 * math.expm1(0.1))
    assert pot.s_star == pytest.approx(-0.02)


def test_potential_kind_selection():
    assert potential_kind_for(NoiseParams(Gamma0=0.1), ChannelKind.COLLECTIVE) == PotentialKind.BOX
    assert potential_kind_for(NoiseParams(Gamma_minus=0.1), ChannelKind.COLLECTIVE) == PotentialKind.COLLECTIVE_SINCH
    assert potential_kind_for(NoiseParams(gamma0=0.1), ChannelKind.INDIVIDUAL) == PotentialKind.INDIVIDUAL
    assert potential_kind_for(NoiseParams(gamma1=0.1), ChannelKind.LOSS) == PotentialKind.LOSS


def test_sinch():
    assert float(sinch(0.0)) == 1.0
    assert float(sinch(1.0)) == pytest.approx(math.sinh(1.0))
    assert float(sinch(-2.0)) == pytest.approx(math.sinh(2.0) / 2.0)


def test_sudden_death_bound():
    assert sudden_death_bound(0.01, 0.01, 0.002, 50) == pytest.approx(0.002)
    assert sudden_death_bound(0.1, 0.0, 0.0, 40) > sudden_death_bound(0.1, 0.0, 0.0, 20)
    assert is_sudden_death_regime(0.1, 0.0, 20)
    assert not is_sudden_death_regime(0.01, 0.0, 20)
    with pytest.raises(DomainError):
        sudden_death_bound(-0.1, 0.0, 0.0, 10)


def test_loss_dephasing_fraction():
    assert loss_dephasing_fraction(1.0, 1.0) == pytest.approx(1.0)
    assert loss_dephasing_fraction(1.0, 0.0) == 0.0
    assert 0.0 < loss_dephasing_fraction(1.0, 0.5) < 1.0


def test_precision_bound_box():
    noise = NoiseParams(Gamma0=0.01)
    report = precision_bound(noise, PotentialKind.BOX, 100)
    assert report.closed_form_bound == pytest.approx(0.01 + math.pi ** 2 / 1e4)
    assert report.numeric_bound == pytest.approx(report.closed_form_bound, rel=1e-6)
    assert report.potential_minimum == pytest.approx(0.01)
    assert report.conditions_ok


def test_precision_bound_individual_warns_for_weak_noise():
    report = precision_bound(NoiseParams(gamma0=0.001), PotentialKind.INDIVIDUAL, 10)
    assert report.closed_form_bound == pytest.approx(math.expm1(0.001) / 10)
    assert not report.conditions_ok
    assert report.warnings


def test_precision_bound_loss_fraction():
    report = precision_bound(NoiseParams(gamma1=0.5, gamma2=0.5), PotentialKind.LOSS, 50)
    assert report.parameters["loss_dephasing_fraction"] == pytest.approx(1.0)
    assert report.parameters["profile_center"] == pytest.approx(0.0)


def test_cluster_with_table_alpha():
    """alpha = pi^2: минимум (mu0 + pi^2)/sqrt(mu0) в mu0 = pi^2, c = 2 pi"""
    analysis = cluster_optimize(0.01, 10000, AlphaSource.TABLE)
    assert analysis.mu0_star == pytest.approx(math.pi ** 2, rel=0.01)
    assert analysis.prefactor == pytest.approx(2 * math.pi, rel=1e-4)
    assert analysis.n_c == pytest.approx(math.sqrt(analysis.mu0_star / 0.01))
    assert analysis.variance_at_optimum == pytest.approx(analysis.prefactor * 0.1 / 10000)


def test_cluster_with_noon_like_samples():
    """alpha = e^mu0 - mu0 (NOON): mu0* = 1/2, c = sqrt(2e)"""
    mu0 = np.logspace(-1.2, 0.8, 81)
    alpha = np.minimum(np.exp(mu0) - mu0, math.pi ** 2)
    analysis = cluster_optimize(0.001, 1000, samples=(mu0, alpha))
    assert analysis.mu0_star == pytest.approx(0.5, abs=0.05)
    assert analysis.prefactor == pytest.approx(math.sqrt(2 * math.e), rel=2e-3)
    assert np.allclose(analysis.beta_samples, analysis.alpha_samples / np.sqrt(analysis.mu0_samples))


def test_cluster_validation():
    with pytest.raises(DomainError):
        cluster_optimize(0.01, 1000, AlphaSource.TABLE, channel=ChannelKind.INDIVIDUAL)
    with pytest.raises(DomainError):
        cluster_optimize(0.0, 1000, AlphaSource.TABLE)
    with pytest.raises(InputValidationError):
        cluster_optimize(0.01, 1000, samples=(np.array([0.5, 1.0, 2.0]), np.array([2.0, 2.0, 2.0])))


@pytest.mark.slow
@pytest.mark.parametrize("r1, r2", [(10.0, 0.0), (100.0, 0.0), (1000.0, 0.0), (100.0, 100.0)])
def test_loss_optimum_matches_semiclassical_profile(r1, r2):
    n = 30
    noise = NoiseParams(
        Gamma0=0.25, gamma1=math.log1p(r1 / n), gamma2=math.log1p(r2 / n)
    )
    result = optimize_probe(noise, n, OptimizerOptions(restarts=3), kind=ChannelKind.LOSS)
    ground = ground_state(build_potential(noise, PotentialKind.LOSS, n))
    assert profile_overlap(result.probe, ground) >= 0.98


@pytest.mark.parametrize(
    "pot",
    [
        Potential(kind=PotentialKind.BOX, n_qubits=60, mu0=3.0),
        Potential(kind=PotentialKind.INDIVIDUAL, n_qubits=60, r=500.0),
        Potential(kind=PotentialKind.LOSS, n_qubits=60, r1=50.0, r2=50.0),
        Potential(kind=PotentialKind.HARMONIC, n_qubits=60, mu0=1.0, r=100.0),
    ],
)
def test_ground_state_mirror_symmetry(pot):
    ground = ground_state(pot)
    assert np.max(np.abs(ground.psi - ground.psi[::-1])) < 1e-8


def test_eigenvalue_ladder_is_monotone():
    """Поточечно упорядоченные потенциалы дают упорядоченные lambda_min"""
    box = [ground_state(Potential(kind=PotentialKind.BOX, n_qubits=50, mu0=mu0)).lambda_min
           for mu0 in (0.0, 1.0, 10.0, 100.0)]
    individual = [ground_state(Potential(kind=PotentialKind.INDIVIDUAL, n_qubits=50, r=r)).lambda_min
                  for r in (10.0, 100.0, 1000.0, 1e4)]
    loss = [ground_state(Potential(kind=PotentialKind.LOSS, n_qubits=50, r1=r1, r2=10.0)).lambda_min
            for r1 in (10.0, 50.0, 200.0)]
    for ladder in (box, individual, loss):
        assert all(b > a for a, b in zip(ladder, ladder[1:]))


@pytest.mark.slow
def test_numeric_alpha_collapse_and_cluster_size():
    """alpha(mu0) не зависит от N; минимум при mu0 = 1/2, c = sqrt(2e)"""
    options = OptimizerOptions(restarts=3)
    mu0, alpha, ns = alpha_sweep((10, 20, 30), [0.5, 2.0, 5.0], options)
    for value in (0.5, 2.0, 5.0):
        points = alpha[np.isclose(mu0, value)]
        assert points.size == 3
        assert (points.max() - points.min()) / points.min() < 0.03

    analysis = cluster_optimize(0.01, 1000, AlphaSource.NUMERIC, n_values=(10, 20), options=options)
    assert analysis.mu0_star == pytest.approx(0.5, abs=0.05)
    assert analysis.prefactor == pytest.approx(math.sqrt(2 * math.e), rel=0.05)
