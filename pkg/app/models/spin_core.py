"""
Симметричное подпространство N кубитов.

Соглашение об индексах: элемент массива i соответствует проекции m = i - N/2,
m возрастает от -N/2 до N/2.
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import eval_jacobi, gammaln

from app.core.config import settings
from app.core.exceptions import DomainError, InputValidationError
from app.models.schemas import ProbeFamily

logger = logging.getLogger(__name__)


def m_values(n_qubits: int) -> np.ndarray:
    return np.arange(n_qubits + 1) - n_qubits / 2.0


def spin_values(n_qubits: int) -> List[float]:
    """Допустимые значения полного спина S = N/2, N/2 - 1, ..."""
    return [n_qubits / 2.0 - k for k in range(n_qubits // 2 + 1)]


def multiplicity(n_qubits: int, spin: float) -> int:
    """Кратность |Pi_S^(N)| неприводимого представления со спином S"""
    k = n_qubits / 2.0 - spin
    if k < 0 or abs(k - round(k)) > 1e-9:
        raise DomainError(f"Спин S={spin} недопустим для N={n_qubits}")
    k = int(round(k))
    lower = math.comb(n_qubits, k - 1) if k >= 1 else 0
    return math.comb(n_qubits, k) - lower


def spin_operators(spin: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Матрицы S^z, S^+, S^- в базисе |S, m>"""
    dim = int(round(2 * spin)) + 1
    m = np.arange(dim) - spin
    s_z = np.diag(m)
    # S^+ |m> = f_m |m+1>, f_m = sqrt((S - m)(S + m + 1))
    f = np.sqrt(np.clip((spin - m[:-1]) * (spin + m[:-1] + 1.0), 0.0, None))
    s_plus = np.diag(f, k=-1)
    return s_z, s_plus, s_plus.T.copy()


def phase_shift(matrix: np.ndarray, theta: float) -> np.ndarray:
    """exp(-i theta S^z) rho exp(i theta S^z)"""
    dim = matrix.shape[0]
    m = np.arange(dim) - (dim - 1) / 2.0
    return matrix * np.exp(-1j * theta * np.subtract.outer(m, m))


def _is_half_integer(value: float) -> bool:
    return abs(2 * value - round(2 * value)) < 1e-9


def _log_binomial(n: float, k: float) -> float:
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def wigner_small_d(spin: float, m: float, mp: float, beta: float) -> float:
    """
    Элемент d^S_{m,mp}(beta) малой матрицы Вигнера.
    Используется представление через многочлены Якоби, биномиальные множители
    накапливаются в логарифмах, что позволяет работать при S до нескольких сотен.
    """
    if spin < 0 or not _is_half_integer(spin):
        raise DomainError(f"Спин должен быть неотрицательным полуцелым числом, получено {spin}")
    for value in (m, mp):
        if abs(value) > spin + 1e-9 or abs((spin - value) - round(spin - value)) > 1e-9:
            raise DomainError(f"Недопустимое квантовое число {value} для S={spin}")

    j = spin
    candidates = [(j + mp, "a"), (j - mp, "b"), (j + m, "c"), (j - m, "d")]
    k, case = min(candidates, key=lambda item: item[0])
    if case == "a":
        a, sign_power = m - mp, m - mp
    elif case == "b":
        a, sign_power = mp - m, 0.0
    elif case == "c":
        a, sign_power = mp - m, 0.0
    else:
        a, sign_power = m - mp, m - mp
    k = int(round(k))
    a = int(round(a))
    b = int(round(2 * j - 2 * k - a))

    half = beta / 2.0
    sin_half, cos_half = math.sin(half), math.cos(half)
    poly = float(eval_jacobi(k, a, b, math.cos(beta)))
    if poly == 0.0:
        return 0.0
    if (a > 0 and sin_half == 0.0) or (b > 0 and cos_half == 0.0):
        return 0.0

    log_value = 0.5 * (_log_binomial(2 * j - k, k + a) - _log_binomial(k + b, b))
    if a > 0:
        log_value += a * math.log(abs(sin_half))
    if b > 0:
        log_value += b * math.log(abs(cos_half))
    sign = -1.0 if int(round(sign_power)) % 2 else 1.0
    if a % 2 and sin_half < 0:
        sign = -sign
    if b % 2 and cos_half < 0:
        sign = -sign
    return sign * math.exp(log_value) * poly


def wigner_d_column(spin: float, mp: float, beta: float) -> np.ndarray:
    """Столбец d^S_{m,mp}(beta) для всех m по возрастанию"""
    dim = int(round(2 * spin)) + 1
    return np.array([wigner_small_d(spin, i - spin, mp, beta) for i in range(dim)])


class ProbeState(BaseModel):
    """Чистое симметричное состояние N кубитов"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    n_qubits: int = Field(..., ge=1)
    amplitudes: np.ndarray

    @field_validator("amplitudes", mode="before")
    def cast_amplitudes(cls, v):
        return np.asarray(v, dtype=complex)

    @model_validator(mode="after")
    def validate_state(self):
        if self.amplitudes.shape != (self.n_qubits + 1,):
            raise ValueError(
                f"Ожидалось {self.n_qubits + 1} амплитуд, получено {self.amplitudes.shape}"
            )
        norm = float(np.vdot(self.amplitudes, self.amplitudes).real)
        if abs(norm - 1.0) > settings.norm_tolerance:
            raise ValueError(f"Состояние не нормировано: сумма |psi_m|^2 = {norm}")
        return self

    @property
    def spin(self) -> float:
        return self.n_qubits / 2.0

    @property
    def m(self) -> np.ndarray:
        return m_values(self.n_qubits)

    @property
    def x(self) -> np.ndarray:
        return self.m / self.n_qubits

    @classmethod
    def from_vector(cls, vector: Sequence[complex], n_qubits: Optional[int] = None) -> "ProbeState":
        """Нормировка произвольного вектора амплитуд"""
        array = np.asarray(vector, dtype=complex)
        if array.ndim != 1 or array.size < 2:
            raise InputValidationError("Вектор амплитуд должен содержать не менее двух элементов")
        if n_qubits is not None and array.size != n_qubits + 1:
            raise InputValidationError(
                f"Для N={n_qubits} требуется {n_qubits + 1} амплитуд, получено {array.size}"
            )
        if not np.all(np.isfinite(array)):
            raise InputValidationError("Вектор амплитуд содержит нечисловые значения")
        norm = float(np.linalg.norm(array))
        if norm < 1e-300:
            raise InputValidationError("Нулевой вектор невозможно нормировать")
        return cls(n_qubits=array.size - 1, amplitudes=array / norm)


class SymmetricDensityMatrix(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    n_qubits: int = Field(..., ge=1)
    matrix: np.ndarray

    @field_validator("matrix", mode="before")
    def cast_matrix(cls, v):
        return np.asarray(v, dtype=complex)

    @model_validator(mode="after")
    def validate_matrix(self):
        dim = self.n_qubits + 1
        if self.matrix.shape != (dim, dim):
            raise ValueError(f"Ожидалась матрица {dim}x{dim}, получено {self.matrix.shape}")
        _check_density(self.matrix, settings.trace_tolerance, expected_trace=1.0)
        return self


class DensityBlock(BaseModel):
    """
    Блок смешанного состояния: нормированная матрица с вероятностью weight.
    Метка: полный спин S, ветвь потерь (l1, l2) или число потерянных фотонов.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    spin: float = Field(..., ge=0.0)
    weight: float = Field(..., ge=0.0)
    matrix: np.ndarray
    lost: Optional[Tuple[int, int]] = None
    lost_total: Optional[int] = None

    @field_validator("matrix", mode="before")
    def cast_matrix(cls, v):
        return np.asarray(v, dtype=complex)

    @model_validator(mode="after")
    def validate_block(self):
        dim = int(round(2 * self.spin)) + 1
        if self.matrix.shape != (dim, dim):
            raise ValueError(
                f"Размер блока {self.matrix.shape} не соответствует спину S={self.spin}"
            )
        deviation = float(np.max(np.abs(self.matrix - self.matrix.conj().T)))
        if deviation > settings.hermitian_tolerance * max(1.0, float(np.max(np.abs(self.matrix)))):
            raise ValueError(f"Блок не эрмитов: отклонение {deviation:.3e}")
        return self

    @property
    def label(self) -> str:
        if self.lost is not None:
            return f"l=({self.lost[0]},{self.lost[1]})"
        if self.lost_total is not None:
            return f"lost={self.lost_total}"
        return f"S={self.spin:g}"


class BlockedDensityMatrix(BaseModel):
    n_qubits: int = Field(..., ge=1)
    blocks: List[DensityBlock]

    @model_validator(mode="after")
    def validate_blocks(self):
        if not self.blocks:
            raise ValueError("Состояние должно содержать хотя бы один блок")
        total = sum(b.weight * float(np.trace(b.matrix).real) for b in self.blocks)
        if abs(total - 1.0) > settings.block_trace_tolerance:
            raise ValueError(f"Суммарный след блоков {total} отличается от 1")
        return self

    @classmethod
    def from_symmetric(cls, rho: SymmetricDensityMatrix) -> "BlockedDensityMatrix":
        block = DensityBlock(spin=rho.n_qubits / 2.0, weight=1.0, matrix=rho.matrix)
        return cls(n_qubits=rho.n_qubits, blocks=[block])

    def nonzero_blocks(self, cutoff: float = 0.0) -> List[DensityBlock]:
        return [b for b in self.blocks if b.weight > cutoff]

    def weight_by_spin(self) -> dict:
        weights: dict = {}
        for block in self.blocks:
            weights[block.spin] = weights.get(block.spin, 0.0) + block.weight
        return weights


def _check_density(matrix: np.ndarray, trace_tolerance: float, expected_trace: float) -> None:
    deviation = float(np.max(np.abs(matrix - matrix.conj().T)))
    if deviation > settings.hermitian_tolerance:
        raise ValueError(f"Матрица плотности не эрмитова: отклонение {deviation:.3e}")
    trace = float(np.trace(matrix).real)
    if abs(trace - expected_trace) > trace_tolerance:
        raise ValueError(f"След матрицы плотности равен {trace}")
    smallest = float(np.linalg.eigvalsh(matrix)[0])
    if smallest < -settings.positivity_tolerance:
        raise ValueError(f"Матрица плотности не положительна: lambda_min = {smallest:.3e}")


def hermitize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.conj().T)


def _cosine_amplitudes(n_qubits: int) -> np.ndarray:
    m = m_values(n_qubits)
    return np.sqrt(2.0 / (n_qubits + 1)) * np.cos(np.pi * m / (n_qubits + 1))


def make_probe(
    family,
    n_qubits: int,
    p: Optional[float] = None,
    q: Optional[float] = None,
    K: Optional[float] = None,
    vector: Optional[Sequence[complex]] = None,
) -> ProbeState:
    """
    Построение пробного состояния из стандартного семейства.
    family: значение ProbeFamily или его строковое имя.
    """
    try:
        family = ProbeFamily(family)
    except ValueError:
        raise InputValidationError(f"Неизвестное семейство пробных состояний: {family}")
    if n_qubits < 1:
        raise DomainError(f"Число кубитов должно быть положительным, получено {n_qubits}")
    for name, value in (("p", p), ("q", q)):
        if value is not None and not 0.0 <= value <= 1.0:
            raise DomainError(f"Параметр {name} должен лежать в [0, 1], получено {value}")

    n = n_qubits
    spin = n / 2.0
    amplitudes = np.zeros(n + 1)

    if family == ProbeFamily.NOON:
        amplitudes[0] = amplitudes[-1] = 1.0
    elif family == ProbeFamily.COSINE:
        amplitudes = _cosine_amplitudes(n)
    elif family == ProbeFamily.PHASE_UNIFORM:
        amplitudes[:] = 1.0
    elif family == ProbeFamily.HOLLAND_BURNETT:
        if n % 2:
            raise DomainError(f"Состояние Холланда-Бернетта определено только для четного N, получено N={n}")
        amplitudes = wigner_d_column(spin, 0.0, np.pi / 2)
    elif family == ProbeFamily.SPIN_COHERENT:
        # d^S_{m,S}(pi/2) = sqrt(C(2S, S+m)) / 2^S
        log_amp = 0.5 * (gammaln(n + 1) - gammaln(np.arange(n + 1) + 1) - gammaln(n - np.arange(n + 1) + 1))
        amplitudes = np.exp(log_amp - 0.5 * n * np.log(2.0))
    elif family == ProbeFamily.TRIDENT:
        if p is None:
            raise DomainError("Для семейства trident требуется параметр p")
        if n % 2:
            raise DomainError(f"Семейство trident требует компоненту m=0, т.е. четное N, получено N={n}")
        amplitudes[0] = amplitudes[-1] = math.sqrt(p / 2.0)
        amplitudes[n // 2] = math.sqrt(1.0 - p)
    elif family == ProbeFamily.QUAD:
        if p is None or q is None:
            raise DomainError("Для семейства quad требуются параметры p и q")
        inner = int(round(n * (1.0 + q) / 2.0))
        np.add.at(amplitudes, [0, n], math.sqrt(p / 2.0))
        np.add.at(amplitudes, [inner, n - inner], math.sqrt((1.0 - p) / 2.0))
    elif family == ProbeFamily.GAUSSIAN:
        if K is None or K <= 0:
            raise DomainError("Для гауссова семейства требуется K > 0")
        x = m_values(n) / n
        amplitudes = np.exp(-K * x ** 2 / 4.0)
    elif family == ProbeFamily.CUSTOM:
        if vector is None:
            raise InputValidationError("Для семейства custom необходимо задать вектор амплитуд")
        return ProbeState.from_vector(vector, n_qubits=n)

    return ProbeState.from_vector(amplitudes, n_qubits=n)


def var_sz(probe: ProbeState) -> float:
    """Дисперсия S^z; в отсутствие шума КФИ равна 4 var S^z"""
    populations = np.abs(probe.amplitudes) ** 2
    m = probe.m
    mean = float(np.dot(m, populations))
    return float(np.dot(m ** 2, populations) - mean ** 2)


def to_density(probe: ProbeState) -> SymmetricDensityMatrix:
    psi = probe.amplitudes
    return SymmetricDensityMatrix(n_qubits=probe.n_qubits, matrix=np.outer(psi, psi.conj()))
