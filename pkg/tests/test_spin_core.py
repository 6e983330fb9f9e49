import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.exceptions import DomainError, InputValidationError
from app.models.spin_core import (
    BlockedDensityMatrix,
    DensityBlock,
    ProbeState,
    SymmetricDensityMatrix,
    m_values,
    make_probe,
    multiplicity,
    phase_shift,
    spin_values,
    to_density,
    var_sz,
    wigner_d_column,
    wigner_small_d,
)


def test_m_values_ascending():
    """Индекс i соответствует m = i - N/2"""
    assert list(m_values(4)) == [-2.0, -1.0, 0.0, 1.0, 2.0]
    assert list(m_values(3)) == [-1.5, -0.5, 0.5, 1.5]


@pytest.mark.parametrize("n", [1, 2, 5, 6, 9])
def test_multiplicities_fill_hilbert_space(n):
    """Сумма кратностей, умноженных на размерности блоков, равна 2^N"""
    total = sum(multiplicity(n, s) * int(round(2 * s + 1)) for s in spin_values(n))
    assert total == 2 ** n


def test_multiplicity_rejects_invalid_spin():
    with pytest.raises(DomainError):
        multiplicity(4, 1.5)


@pytest.mark.parametrize("beta", [0.0, 0.3, 1.2, math.pi / 2, 2.9])
def test_wigner_small_d_spin_one(beta):
    """Сверка с явными выражениями для S = 1 и S = 1/2"""
    assert wigner_small_d(1, 1, 1, beta) == pytest.approx((1 + math.cos(beta)) / 2, abs=1e-12)
    assert wigner_small_d(1, 0, 0, beta) == pytest.approx(math.cos(beta), abs=1e-12)
    assert wigner_small_d(1, 1, 0, beta) == pytest.approx(-math.sin(beta) / math.sqrt(2), abs=1e-12)
    assert wigner_small_d(1, 1, -1, beta) == pytest.approx((1 - math.cos(beta)) / 2, abs=1e-12)
    assert wigner_small_d(0.5, 0.5, -0.5, beta) == pytest.approx(-math.sin(beta / 2), abs=1e-12)


def test_wigner_matrix_is_orthogonal():
    spin = 3.0
    matrix = np.column_stack([wigner_d_column(spin, mp, 0.7) for mp in np.arange(-spin, spin + 1)])
    assert np.allclose(matrix.T @ matrix, np.eye(7), atol=1e-12)


def test_wigner_large_spin_stays_normalized():
    column = wigner_d_column(150.0, 0.0, math.pi / 2)
    assert np.linalg.norm(column) == pytest.approx(1.0, abs=1e-10)


def test_wigner_rejects_invalid_numbers():
    with pytest.raises(DomainError):
        wigner_small_d(1, 2, 0, 0.1)
    with pytest.raises(DomainError):
        wigner_small_d(0.7, 0.5, 0.5, 0.1)


def test_probe_state_requires_normalization():
    with pytest.raises(ValidationError):
        ProbeState(n_qubits=2, amplitudes=[1.0, 0.0, 0.5])


def test_from_vector_normalizes():
    probe = ProbeState.from_vector([1.0, 0.0, 1.0])
    assert probe.n_qubits == 2
    assert np.allclose(np.abs(probe.amplitudes), [1 / math.sqrt(2), 0.0, 1 / math.sqrt(2)])


def test_from_vector_checks_length():
    with pytest.raises(InputValidationError):
        ProbeState.from_vector([1.0, 1.0, 1.0], n_qubits=3)
    with pytest.raises(InputValidationError):
        ProbeState.from_vector([0.0, 0.0])


@pytest.mark.parametrize("n", [2, 5, 10])
def test_standard_family_variances(n):
    """Дисперсии S^z известных состояний"""
    assert var_sz(make_probe("noon", n)) == pytest.approx(n * n / 4.0)
    assert var_sz(make_probe("spin_coherent", n)) == pytest.approx(n / 4.0)
    assert var_sz(make_probe("phase_uniform", n)) == pytest.approx(((n + 1) ** 2 - 1) / 12.0)


def test_cosine_probe():
    probe = make_probe("cosine", 6)
    expected = np.cos(np.pi * m_values(6) / 7)
    expected /= np.linalg.norm(expected)
    assert np.allclose(probe.amplitudes.real, expected)


def test_holland_burnett():
    probe = make_probe("holland_burnett", 2)
    assert np.allclose(np.abs(probe.amplitudes), [1 / math.sqrt(2), 0.0, 1 / math.sqrt(2)], atol=1e-12)
    with pytest.raises(DomainError):
        make_probe("holland_burnett", 3)


def test_trident_and_quad():
    trident = make_probe("trident", 4, p=0.5)
    assert np.allclose(np.abs(trident.amplitudes) ** 2, [0.25, 0.0, 0.5, 0.0, 0.25])
    quad = make_probe("quad", 8, p=0.5, q=0.5)
    populations = np.abs(quad.amplitudes) ** 2
    assert populations[0] == pytest.approx(0.25)
    assert populations[2] == pytest.approx(0.25)
    assert populations[6] == pytest.approx(0.25)
    with pytest.raises(DomainError):
        make_probe("trident", 4)


def test_gaussian_probe_is_symmetric_and_peaked():
    probe = make_probe("gaussian", 20, K=50.0)
    amplitudes = probe.amplitudes.real
    assert np.allclose(amplitudes, amplitudes[::-1])
    assert int(np.argmax(amplitudes)) == 10


def test_unknown_family():
    with pytest.raises(InputValidationError):
        make_probe("squeezed", 4)


def test_custom_family_requires_vector():
    with pytest.raises(InputValidationError):
        make_probe("custom", 2)
    probe = make_probe("custom", 2, vector=[3.0, 0.0, 4.0])
    assert np.allclose(probe.amplitudes.real, [0.6, 0.0, 0.8])


def test_density_matrix_properties():
    rho = to_density(make_probe("cosine", 5))
    assert np.trace(rho.matrix).real == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        SymmetricDensityMatrix(n_qubits=1, matrix=np.diag([0.7, 0.7]))
    with pytest.raises(ValidationError):
        SymmetricDensityMatrix(n_qubits=1, matrix=np.diag([1.5, -0.5]))


def test_phase_shift_keeps_populations():
    rho = to_density(make_probe("spin_coherent", 4)).matrix
    shifted = phase_shift(rho, 0.4)
    assert np.allclose(np.diag(shifted), np.diag(rho))
    assert shifted[0, 4] == pytest.approx(rho[0, 4] * np.exp(1j * 0.4 * 4))


def test_blocked_density_total_trace():
    block = DensityBlock(spin=1.0, weight=0.5, matrix=np.eye(3) / 3)
    with pytest.raises(ValidationError):
        BlockedDensityMatrix(n_qubits=2, blocks=[block])
    state = BlockedDensityMatrix(
        n_qubits=2, blocks=[block, DensityBlock(spin=0.0, weight=0.5, matrix=np.eye(1))]
    )
    assert state.weight_by_spin() == {1.0: 0.5, 0.0: 0.5}


def test_block_dimension_must_match_spin():
    with pytest.raises(ValidationError):
        DensityBlock(spin=1.0, weight=1.0, matrix=np.eye(2) / 2)
