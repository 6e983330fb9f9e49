"""
Квантовая и классическая информация Фишера для фазового сдвига exp(-i theta S^z).
"""
import logging
import math
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np

from app.core.config import settings
from app.core.exceptions import DomainError, InputValidationError
from app.models.channels import merge_by_photon_number
from app.models.schemas import BlockContribution, FisherResult, PhaseDistribution
from app.models.spin_core import (
    BlockedDensityMatrix,
    ProbeState,
    SymmetricDensityMatrix,
    make_probe,
    phase_shift,
    spin_operators,
    to_density,
)

logger = logging.getLogger(__name__)

State = Union[BlockedDensityMatrix, SymmetricDensityMatrix, ProbeState, np.ndarray]


def _projections(dim: int) -> np.ndarray:
    return np.arange(dim) - (dim - 1) / 2.0


def _observable_blocks(state: State) -> List[Tuple[str, float, np.ndarray]]:
    """Приведение входа к списку (метка, вес, матрица)"""
    if isinstance(state, ProbeState):
        state = to_density(state)
    if isinstance(state, SymmetricDensityMatrix):
        return [(f"S={state.n_qubits / 2:g}", 1.0, state.matrix)]
    if isinstance(state, BlockedDensityMatrix):
        # ветви с одинаковым числом оставшихся фотонов неразличимы
        if any(block.lost is not None for block in state.blocks):
            state = merge_by_photon_number(state)
        return [(block.label, block.weight, block.matrix) for block in state.blocks]
    matrix = np.asarray(state, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InputValidationError(f"Ожидалась квадратная матрица, получено {matrix.shape}")
    deviation = float(np.max(np.abs(matrix - matrix.conj().T)))
    if deviation > settings.hermitian_tolerance * max(1.0, float(np.max(np.abs(matrix)))):
        raise InputValidationError(f"Матрица не эрмитова: отклонение {deviation:.3e}")
    return [("matrix", 1.0, matrix)]


def qfi_matrix(matrix: np.ndarray, with_sld: bool = False) -> Tuple[float, Optional[np.ndarray]]:
    """
    КФИ одного блока через спектральное разложение.
    Однородна первой степени по матрице, поэтому допускает ненормированный вход.
    """
    values, vectors = np.linalg.eigh(matrix)
    values = np.clip(values, 0.0, None)
    largest = float(values[-1]) if values.size else 0.0
    if largest <= 0.0:
        return 0.0, (np.zeros_like(matrix) if with_sld else None)

    m = _projections(matrix.shape[0])
    z = (vectors.conj().T * m) @ vectors
    sums = np.add.outer(values, values)
    diffs = np.subtract.outer(values, values)
    mask = sums > settings.sld_cutoff * largest
    ratio = np.zeros_like(sums)
    ratio[mask] = diffs[mask] ** 2 / sums[mask]
    qfi = float(2.0 * np.sum(ratio * np.abs(z) ** 2))

    sld = None
    if with_sld:
        # <i| d rho |j> = -i (lambda_j - lambda_i) Z_ij
        derivative = 1j * diffs * z
        eigen_sld = np.zeros_like(derivative)
        eigen_sld[mask] = 2.0 * derivative[mask] / sums[mask]
        sld = vectors @ eigen_sld @ vectors.conj().T
    return qfi, sld


def qfi_weighted(matrices: Iterable[np.ndarray]) -> float:
    """Сумма КФИ по блокам с весом, включенным в матрицу"""
    return float(sum(qfi_matrix(matrix)[0] for matrix in matrices))


def qfi(state: State, with_sld: bool = False) -> FisherResult:
    """F = sum_b w_b F_b, d rho = -i [S^z, rho]"""
    contributions = []
    slds = [] if with_sld else None
    total = 0.0
    for label, weight, matrix in _observable_blocks(state):
        value, sld = qfi_matrix(matrix, with_sld)
        contributions.append(BlockContribution(label=label, weight=weight, qfi=value))
        total += weight * value
        if with_sld:
            slds.append(sld)
    return FisherResult(qfi=max(total, 0.0), contributions=contributions, sld=slds)


def phase_coefficients(matrix: np.ndarray) -> np.ndarray:
    """c_k = сумма k-й диагонали, k = -(d-1)..(d-1)"""
    dim = matrix.shape[0]
    return np.array([np.trace(matrix, offset=-k) for k in range(-(dim - 1), dim)])


def canonical_phase_density(matrix: np.ndarray, phi: np.ndarray, theta: float = 0.0) -> np.ndarray:
    """Плотность исхода канонического фазового измерения после сдвига theta"""
    coefficients = phase_coefficients(matrix)
    dim = matrix.shape[0]
    k = np.arange(-(dim - 1), dim)
    phases = np.exp(1j * np.outer(phi - theta, k))
    return (phases @ coefficients).real / (2.0 * math.pi)


def _default_phase_grid(dim: int) -> int:
    return max(8 * dim, 512)


def _canonical_block_cfi(matrix: np.ndarray, grid_size: int) -> float:
    dim = matrix.shape[0]
    if dim == 1:
        return 0.0
    coefficients = phase_coefficients(matrix)
    k = np.arange(-(dim - 1), dim)
    phi = -math.pi + 2.0 * math.pi * np.arange(grid_size) / grid_size
    phases = np.exp(1j * np.outer(phi, k))
    density = (phases @ coefficients).real / (2.0 * math.pi)
    derivative = (phases @ (-1j * k * coefficients)).real / (2.0 * math.pi)
    peak = float(np.max(density))
    if peak <= 0.0:
        return 0.0
    mask = density > 1e-14 * peak
    integrand = np.empty(grid_size)
    integrand[mask] = derivative[mask] ** 2 / density[mask]
    if not np.all(mask):
        # в нуле плотности p'^2/p -> 2 p''
        curvature = (phases[~mask] @ (-(k ** 2) * coefficients)).real / (2.0 * math.pi)
        integrand[~mask] = 2.0 * np.clip(curvature, 0.0, None)
    return float(np.sum(integrand) * 2.0 * math.pi / grid_size)


def cfi_canonical_phase(state: State, grid_size: Optional[int] = None) -> float:
    """
    КФИ канонического фазового измерения |theta> = sum_m e^{-i m theta} |S, m>.
    Каждый блок измеряется в своем пространстве, исходы блоков различимы.
    """
    blocks = _observable_blocks(state)
    largest = max(matrix.shape[0] for _, _, matrix in blocks)
    if grid_size is None:
        grid_size = _default_phase_grid(largest)
    if grid_size < 8 * largest:
        raise InputValidationError(
            f"Сетка фаз {grid_size} слишком груба: требуется не менее {8 * largest} точек"
        )
    return float(sum(weight * _canonical_block_cfi(matrix, grid_size) for _, weight, matrix in blocks))


def sx_outcome_probabilities(matrix: np.ndarray, theta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Вероятности исходов измерения S^x после сдвига theta и их производные по theta"""
    dim = matrix.shape[0]
    spin = (dim - 1) / 2.0
    s_z, s_plus, s_minus = spin_operators(spin)
    _, basis = np.linalg.eigh(0.5 * (s_plus + s_minus))
    shifted = phase_shift(matrix, theta)
    derivative = -1j * (s_z @ shifted - shifted @ s_z)
    probabilities = np.einsum("ik,ij,jk->k", basis.conj(), shifted, basis).real
    derivatives = np.einsum("ik,ij,jk->k", basis.conj(), derivative, basis).real
    return probabilities, derivatives


def cfi_sx(state: State, theta: float) -> float:
    """КФИ проективного измерения S^x после дополнительного поворота exp(-i theta S^z)"""
    total = 0.0
    for _, weight, matrix in _observable_blocks(state):
        if matrix.shape[0] == 1:
            continue
        probabilities, derivatives = sx_outcome_probabilities(matrix, theta)
        mask = probabilities > 1e-15
        total += weight * float(np.sum(derivatives[mask] ** 2 / probabilities[mask]))
    return total


def probe_phase_distribution(
    matrix: np.ndarray, grid_size: int, Gamma0: float = 0.0
) -> PhaseDistribution:
    """Распределение канонической фазы, свернутое с намотанной гауссианой дисперсии Gamma0"""
    dim = matrix.shape[0]
    k = np.arange(-(dim - 1), dim)
    coefficients = phase_coefficients(matrix) * np.exp(-0.5 * Gamma0 * k ** 2)
    grid = -math.pi + 2.0 * math.pi * np.arange(grid_size) / grid_size
    density = (np.exp(1j * np.outer(grid, k)) @ coefficients).real / (2.0 * math.pi)
    return PhaseDistribution(grid=grid, density=np.clip(density, 0.0, None))


def convolve_gaussian(distribution: PhaseDistribution, Gamma0: float) -> PhaseDistribution:
    """Точная свертка с намотанной гауссианой через ряд Фурье на сетке"""
    size = len(distribution.grid)
    spectrum = np.fft.fft(distribution.density)
    k = np.fft.fftfreq(size, d=1.0 / size)
    filtered = np.fft.ifft(spectrum * np.exp(-0.5 * Gamma0 * k ** 2)).real
    return PhaseDistribution(grid=distribution.grid, density=np.clip(filtered, 0.0, None))


def cosine_phase_distribution(n_qubits: int, grid_size: Optional[int] = None) -> PhaseDistribution:
    """
    Распределение ошибки канонического фазового измерения для косинусного состояния:
    p(d) = 4/((N+1) pi) * [sin(pi/(2(N+1))) cos(d/2) cos((N+1)d/2) / (cos d - cos(pi/(N+1)))]^2
    Вблизи устранимой особенности используется прямая сумма.
    """
    if n_qubits < 1:
        raise InputValidationError(f"Число кубитов должно быть положительным, получено {n_qubits}")
    if grid_size is None:
        grid_size = _default_phase_grid(n_qubits + 1)
    if grid_size <= n_qubits + 1:
        raise InputValidationError(f"Сетка фаз {grid_size} слишком груба для N={n_qubits}")
    n1 = n_qubits + 1
    grid = -math.pi + 2.0 * math.pi * np.arange(grid_size) / grid_size
    denominator = np.cos(grid) - math.cos(math.pi / n1)
    regular = np.abs(denominator) > 1e-6
    density = np.empty(grid_size)
    numerator = math.sin(math.pi / (2 * n1)) * np.cos(grid / 2) * np.cos(n1 * grid / 2)
    density[regular] = 4.0 / (n1 * math.pi) * (numerator[regular] / denominator[regular]) ** 2
    if not np.all(regular):
        psi = make_probe("cosine", n_qubits).amplitudes.real
        m = np.arange(n1) - n_qubits / 2.0
        amplitude = np.exp(1j * np.outer(grid[~regular], m)) @ psi
        density[~regular] = np.abs(amplitude) ** 2 / (2.0 * math.pi)
    return PhaseDistribution(grid=grid, density=density)


def wrapped_tail_density(n_qubits: int, Gamma0: float) -> float:
    """p~(pi): плотность косинусного распределения, свернутого с гауссианой, в точке pi"""
    psi = make_probe("cosine", n_qubits).amplitudes
    coefficients = phase_coefficients(np.outer(psi, psi.conj()))
    k = np.arange(-n_qubits, n_qubits + 1)
    value = np.sum(coefficients * np.exp(-0.5 * Gamma0 * k ** 2) * np.where(k % 2, -1.0, 1.0))
    return float(value.real) / (2.0 * math.pi)


def dephasing_error_bounds(n_qubits: int, Gamma0: float) -> Tuple[float, float]:
    """Нижняя и верхняя границы минимальной ошибки при коллективной дефазировке"""
    if n_qubits < 2:
        raise DomainError(f"Требуется N >= 2, получено {n_qubits}")
    if Gamma0 < 0:
        raise DomainError(f"Gamma0 должна быть неотрицательной, получено {Gamma0}")
    n2 = float(n_qubits) ** 2
    lower = Gamma0 + 1.0 / n2
    tail = wrapped_tail_density(n_qubits, Gamma0)
    upper = (Gamma0 + math.pi ** 2 / n2) / (1.0 - math.pi * tail) ** 2
    return lower, upper
