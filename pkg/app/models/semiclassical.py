"""
Полуклассическое приближение: КФИ оптимального состояния при N >> 1 сводится
к основному состоянию уравнения -psi'' + mu(x) psi = lambda psi на x in (-1/2, 1/2),
1/F ~ lambda_min / N^2.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.integrate import trapezoid
from scipy.linalg import LinAlgError, eigh_tridiagonal

from app.core.config import settings
from app.core.exceptions import ConvergenceError, DomainError, InputValidationError
from app.models.schemas import (
    AlphaSource,
    ChannelKind,
    ClusterAnalysis,
    GroundState,
    NoiseParams,
    PotentialKind,
    PrecisionReport,
)
from app.models.spin_core import ProbeState

logger = logging.getLogger(__name__)

# сетка mu0 для численного alpha(mu0) по умолчанию
NUMERIC_MU0_GRID = np.logspace(math.log10(0.05), math.log10(6.0), 25)


def sinch(value):
    value = np.asarray(value, dtype=float)
    small = np.abs(value) < 1e-8
    safe = np.where(small, 1.0, value)
    return np.where(small, 1.0 + value ** 2 / 6.0, np.sinh(safe) / safe)


class Potential(BaseModel):
    """Потенциал mu(x) с универсальными параметрами"""
    kind: PotentialKind
    n_qubits: int = Field(..., ge=1)
    mu0: float = Field(0.0, ge=0.0)
    mu1: float = Field(0.0, ge=0.0)
    r: float = Field(0.0, ge=0.0)
    r1: float = Field(0.0, ge=0.0)
    r2: float = Field(0.0, ge=0.0)
    s_star: float = 0.0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) >= 0.5):
            raise DomainError("Потенциал определен только на интервале (-1/2, 1/2)")
        if self.kind == PotentialKind.BOX:
            return np.full_like(x, self.mu0)
        if self.kind == PotentialKind.COLLECTIVE_GENERAL:
            return self.mu0 + self.mu1 * x ** 2 / (0.25 - x ** 2)
        if self.kind == PotentialKind.COLLECTIVE_SINCH:
            s = 2.0 * np.arctanh(2.0 * x)
            return self.mu0 + 0.5 * self.mu1 * (sinch(self.s_star) * np.cosh(s - self.s_star) - 1.0)
        if self.kind == PotentialKind.INDIVIDUAL:
            return self.mu0 + self.r / (1.0 - 4.0 * x ** 2)
        if self.kind == PotentialKind.LOSS:
            return self.mu0 + 0.25 * (self.r1 / (0.5 + x) + self.r2 / (0.5 - x))
        # квадратичное разложение индивидуального потенциала
        return self.mu0 + self.r * (1.0 + 4.0 * x ** 2)

    @property
    def parameters(self) -> Dict[str, float]:
        return {"mu0": self.mu0, "mu1": self.mu1, "r": self.r, "r1": self.r1, "r2": self.r2, "s_star": self.s_star}


def build_potential(noise: NoiseParams, kind: PotentialKind, n_qubits: int) -> Potential:
    derived = noise.derived(n_qubits)
    return Potential(
        kind=kind,
        n_qubits=n_qubits,
        mu0=derived["mu0"],
        mu1=derived["mu1"],
        r=derived["r"],
        r1=derived["r1"],
        r2=derived["r2"],
        s_star=n_qubits * (noise.Gamma_plus - noise.Gamma_minus) / 2.0,
    )


def potential_kind_for(noise: NoiseParams, channel: ChannelKind) -> PotentialKind:
    if channel == ChannelKind.LOSS:
        return PotentialKind.LOSS
    if channel == ChannelKind.INDIVIDUAL:
        return PotentialKind.INDIVIDUAL
    if noise.has_collective_exchange:
        return PotentialKind.COLLECTIVE_SINCH
    return PotentialKind.BOX


def half_offset_grid(points: int) -> Tuple[np.ndarray, float]:
    h = 1.0 / points
    return -0.5 + (np.arange(points) + 0.5) * h, h


def _lowest_eigenpair(pot: Potential, points: int) -> Tuple[float, np.ndarray, np.ndarray, float]:
    x, h = half_offset_grid(points)
    diagonal = 2.0 / h ** 2 + pot(x)
    # фиктивные узлы: psi(-1/2) = psi(1/2) = 0
    diagonal[0] += 1.0 / h ** 2
    diagonal[-1] += 1.0 / h ** 2
    off = np.full(points - 1, -1.0 / h ** 2)
    try:
        values, vectors = eigh_tridiagonal(
            diagonal, off, select="i", select_range=(0, 0), lapack_driver="stebz"
        )
    except (LinAlgError, ValueError) as e:
        logger.error(f"Ошибка при решении задачи на собственные значения: {e}")
        raise ConvergenceError(f"Собственное значение не найдено: {e}")
    psi = vectors[:, 0]
    psi = psi / math.sqrt(float(np.sum(psi ** 2) * h))
    if np.sum(psi) < 0:
        psi = -psi
    return float(values[0]), psi, x, h


def ground_state(pot: Potential, grid_points: Optional[int] = None) -> GroundState:
    """
    Основное состояние трехдиагональной аппроксимации на сетке с полушаговым смещением.
    Проверка Ричардсона на удвоенной сетке; возвращается экстраполированное lambda.
    """
    points = grid_points or settings.ground_state_points
    if points < 501:
        raise InputValidationError(f"Требуется не менее 501 узла сетки, получено {points}")
    coarse, psi, x, h = _lowest_eigenpair(pot, points)
    fine, _, _, _ = _lowest_eigenpair(pot, 2 * points)
    disagreement = abs(fine - coarse) / max(abs(fine), 1e-300)
    if disagreement > settings.richardson_tolerance:
        raise ConvergenceError(
            f"Расхождение lambda на удвоенной сетке {disagreement:.3e} превышает допуск"
        )
    extrapolated = (4.0 * fine - coarse) / 3.0
    logger.debug(f"lambda_min = {extrapolated:.10g} ({pot.kind.value}, {points} узлов)")
    return GroundState(lambda_min=extrapolated, psi=psi, x=x, h=h, lambda_coarse=coarse, lambda_fine=fine)


def qfi_functional(x: np.ndarray, psi: np.ndarray, pot: Potential) -> float:
    """
    F/N^2 = int [psi^2/mu - psi'^2/mu^2] dx.
    Профиль дополняется нулями в точках +-1/2.
    """
    x = np.asarray(x, dtype=float)
    psi = np.asarray(psi, dtype=float)
    mu = pot(x)
    support = np.abs(psi) > 0
    if np.any(mu[support] <= 0):
        raise DomainError("Потенциал должен быть положителен на носителе профиля")
    xs = np.concatenate([[-0.5], x, [0.5]])
    values = np.concatenate([[0.0], psi, [0.0]])
    first = np.concatenate([[0.0], np.where(support, psi ** 2 / np.where(mu > 0, mu, 1.0), 0.0), [0.0]])
    widths = np.diff(xs)
    midpoints = 0.5 * (xs[1:] + xs[:-1])
    slopes = np.diff(values) / widths
    mu_mid = pot(midpoints)
    active = slopes != 0
    if np.any(mu_mid[active] <= 0):
        raise DomainError("Потенциал должен быть положителен на носителе профиля")
    second = np.where(active, slopes ** 2 / np.where(mu_mid > 0, mu_mid, 1.0) ** 2, 0.0)
    return float(trapezoid(first, xs) - np.sum(second * widths))


def gaussian_width(x: np.ndarray, psi: np.ndarray) -> float:
    """Стандартное отклонение распределения psi^2"""
    weights = np.asarray(psi) ** 2
    weights = weights / np.sum(weights)
    center = float(np.dot(weights, x))
    return math.sqrt(float(np.dot(weights, (np.asarray(x) - center) ** 2)))


def profile_center(x: np.ndarray, psi: np.ndarray) -> float:
    weights = np.asarray(psi) ** 2
    return float(np.dot(weights, x) / np.sum(weights))


def profile_parameters(pot: Potential) -> Dict[str, float]:
    """Центр и ширина оптимального профиля в переменной x = m/N (асимптотические формулы)"""
    if pot.kind == PotentialKind.BOX:
        return {"center": 0.0, "width": math.sqrt(1.0 / 12.0 - 1.0 / (2.0 * math.pi ** 2))}
    if pot.kind == PotentialKind.COLLECTIVE_GENERAL:
        return {"center": 0.0, "width": _quartic_width(pot.mu1)}
    if pot.kind == PotentialKind.COLLECTIVE_SINCH:
        return {"center": 0.5 * math.tanh(pot.s_star / 2.0), "width": _quartic_width(pot.mu1)}
    if pot.kind in (PotentialKind.INDIVIDUAL, PotentialKind.HARMONIC):
        return {"center": 0.0, "width": _quartic_width(pot.r)}
    a, b = math.sqrt(pot.r1), math.sqrt(pot.r2)
    if a + b == 0:
        return {"center": 0.0, "width": math.nan}
    return {"center": (a - b) / (2.0 * (a + b)), "width": (pot.r1 * pot.r2) ** 0.125 / (a + b)}


def _quartic_width(value: float) -> float:
    return 1.0 / (2.0 * value ** 0.25) if value > 0 else math.nan


def sample_profile(ground: GroundState, n_qubits: int) -> np.ndarray:
    """Профиль основного состояния в точках x = m/N, нормированный как вектор амплитуд"""
    xs = np.concatenate([[-0.5], ground.x, [0.5]])
    values = np.concatenate([[0.0], ground.psi, [0.0]])
    m = np.arange(n_qubits + 1) - n_qubits / 2.0
    sampled = np.interp(m / n_qubits, xs, values)
    return sampled / np.linalg.norm(sampled)


def profile_overlap(probe: ProbeState, ground: GroundState) -> float:
    sampled = sample_profile(ground, probe.n_qubits)
    return float(abs(np.dot(np.abs(probe.amplitudes), sampled)) ** 2)


def loss_dephasing_fraction(eps1: float, eps2: float) -> float:
    """Доля наведенной потерями дефазировки eps1 eps2 / (eps1^2 - eps1 eps2 + eps2^2)"""
    denominator = eps1 ** 2 - eps1 * eps2 + eps2 ** 2
    return eps1 * eps2 / denominator if denominator > 0 else 0.0


def sudden_death_bound(Gamma_minus: float, Gamma_plus: float, Gamma0: float, n_qubits: int) -> float:
    """1/F >= Gamma0 + (Gamma- + Gamma+)/2 [sinch(N (Gamma- - Gamma+)/2) - 1]"""
    for name, value in (("Gamma_minus", Gamma_minus), ("Gamma_plus", Gamma_plus), ("Gamma0", Gamma0)):
        if value < 0:
            raise DomainError(f"Показатель {name} должен быть неотрицательным")
    argument = n_qubits * (Gamma_minus - Gamma_plus) / 2.0
    if is_sudden_death_regime(Gamma_minus, Gamma_plus, n_qubits):
        logger.warning(f"Экспоненциальный режим: N(Gamma- - Gamma+) = {2 * argument:.3g}")
    return Gamma0 + 0.5 * (Gamma_minus + Gamma_plus) * (float(sinch(argument)) - 1.0)


def is_sudden_death_regime(Gamma_minus: float, Gamma_plus: float, n_qubits: int) -> bool:
    return abs(n_qubits * (Gamma_minus - Gamma_plus)) >= 1.0


def _closed_form(pot: Potential, noise: NoiseParams) -> Tuple[float, list]:
    n = float(pot.n_qubits)
    warnings = []
    if pot.kind == PotentialKind.BOX:
        if pot.mu0 < 1.0:
            warnings.append("mu0 >> 1 не выполнено")
        return noise.Gamma0 + math.pi ** 2 / n ** 2, warnings
    if pot.kind == PotentialKind.COLLECTIVE_GENERAL:
        if pot.mu0 <= math.sqrt(1.0 + pot.mu1 / max(pot.mu0, 1e-300)):
            warnings.append("mu0 >> sqrt(1 + mu1/mu0) не выполнено")
        if n * max(noise.Gamma_minus, noise.Gamma_plus) >= 1.0:
            warnings.append("N << 1/Gamma+- не выполнено")
        return noise.Gamma0 + math.sqrt(noise.collective_exchange) / n, warnings
    if pot.kind == PotentialKind.COLLECTIVE_SINCH:
        if is_sudden_death_regime(noise.Gamma_minus, noise.Gamma_plus, pot.n_qubits):
            warnings.append("экспоненциальный режим потери точности")
        return sudden_death_bound(noise.Gamma_minus, noise.Gamma_plus, noise.Gamma0, pot.n_qubits), warnings
    if pot.kind == PotentialKind.INDIVIDUAL:
        if pot.r < 1.0:
            warnings.append("r >> 1 не выполнено")
        return noise.Gamma0 + math.expm1(noise.gamma_total) / n, warnings
    if pot.kind == PotentialKind.LOSS:
        if min(pot.r1, pot.r2) < 1.0:
            warnings.append("r1, r2 >> 1 не выполнено")
        eps1, eps2 = math.sqrt(pot.r1 / (4 * n)), math.sqrt(pot.r2 / (4 * n))
        return noise.Gamma0 + (eps1 + eps2) ** 2 / (4 * n), warnings
    if pot.r < 1.0:
        warnings.append("r >> 1 не выполнено")
    return (pot.mu0 + pot.r + 2.0 * math.sqrt(pot.r)) / n ** 2, warnings


def precision_bound(
    noise: NoiseParams,
    kind: PotentialKind,
    n_qubits: int,
    grid_points: Optional[int] = None,
) -> PrecisionReport:
    """Асимптотическая нижняя граница ошибки и численная lambda_min/N^2 для сверки"""
    pot = build_potential(noise, kind, n_qubits)
    closed, warnings = _closed_form(pot, noise)
    ground = ground_state(pot, grid_points)
    n2 = float(n_qubits) ** 2
    minimum = float(np.min(pot(ground.x)))
    parameters = dict(pot.parameters)
    parameters.update({f"profile_{k}": v for k, v in profile_parameters(pot).items()})
    parameters["profile_width_numeric"] = gaussian_width(ground.x, ground.psi)
    parameters["profile_center_numeric"] = profile_center(ground.x, ground.psi)
    if kind == PotentialKind.LOSS:
        eps1, eps2 = math.sqrt(pot.r1 / (4 * n_qubits)), math.sqrt(pot.r2 / (4 * n_qubits))
        parameters["loss_dephasing_fraction"] = loss_dephasing_fraction(eps1, eps2)
    for message in warnings:
        logger.warning(f"Условие применимости ({kind.value}, N={n_qubits}): {message}")
    return PrecisionReport(
        kind=kind.value,
        n_qubits=n_qubits,
        parameters=parameters,
        alpha=ground.lambda_min - pot.mu0,
        closed_form_bound=closed,
        numeric_bound=ground.lambda_min / n2,
        potential_minimum=minimum / n2,
        lambda_min=ground.lambda_min,
        conditions_ok=not warnings,
        warnings=warnings,
    )


def alpha_sweep(
    n_values: Sequence[int],
    mu0_grid: Optional[Sequence[float]] = None,
    options=None,
    threads: int = 1,
    gamma_grid: Optional[Sequence[float]] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    alpha(mu0) = N^2 (1/F_opt - Gamma0) для Gamma0 = mu0 / N^2.
    Точки задаются либо сеткой mu0, либо сеткой Gamma0 (тогда mu0 = Gamma0 N^2).
    """
    from app.models.probe_opt import optimize_probe

    if gamma_grid is not None:
        tasks = [(n, gamma * n ** 2) for n in n_values for gamma in gamma_grid]
    elif mu0_grid is not None:
        tasks = [(n, mu0) for n in n_values for mu0 in mu0_grid]
    else:
        raise InputValidationError("Необходимо задать сетку mu0 или Gamma0")

    def evaluate(task):
        n, mu0 = task
        result = optimize_probe(NoiseParams(Gamma0=mu0 / n ** 2), n, options)
        if not result.converged:
            logger.warning(f"alpha(mu0={mu0:.4g}, N={n}) получено без сходимости")
        return n ** 2 / result.qfi - mu0

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            alphas = list(executor.map(evaluate, tasks))
    else:
        alphas = [evaluate(task) for task in tasks]
    mu0 = np.array([mu for _, mu in tasks], dtype=float)
    ns = np.array([n for n, _ in tasks], dtype=int)
    order = np.lexsort((ns, mu0))
    return mu0[order], np.array(alphas)[order], ns[order]


def validate_cluster_inputs(Gamma0: float, channel: ChannelKind) -> None:
    if channel == ChannelKind.INDIVIDUAL:
        raise DomainError("При индивидуальной декогеренции оптимального размера кластера нет")
    if channel == ChannelKind.LOSS:
        raise DomainError("Кластеризация реализована только для коллективной дефазировки")
    if Gamma0 <= 0:
        raise DomainError(f"Gamma0 должна быть положительной, получено {Gamma0}")
    if Gamma0 > 0.1:
        logger.warning(f"Gamma0 = {Gamma0} > 0.1: асимптотический закон может быть неточен")


def cluster_optimize(
    Gamma0: float,
    total_budget: int,
    alpha_source: AlphaSource = AlphaSource.NUMERIC,
    channel: ChannelKind = ChannelKind.COLLECTIVE,
    samples: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    n_values: Sequence[int] = (10, 14, 20, 28, 40),
    mu0_grid: Optional[Sequence[float]] = None,
    options=None,
    threads: int = 1,
) -> ClusterAnalysis:
    """
    Оптимальный размер кластера при фиксированном ресурсе nu*N:
    минимум h(mu0) = (mu0 + alpha(mu0)) / sqrt(mu0), эквивалентно beta'(sqrt(mu0)) = -1.
    """
    validate_cluster_inputs(Gamma0, channel)

    if samples is not None:
        mu0, alpha = (np.asarray(a, dtype=float) for a in samples)
    elif alpha_source == AlphaSource.TABLE:
        mu0 = np.array(mu0_grid if mu0_grid is not None else np.logspace(-1.5, 2.0, 141), dtype=float)
        alpha = np.full_like(mu0, math.pi ** 2)
    else:
        grid = mu0_grid if mu0_grid is not None else NUMERIC_MU0_GRID
        mu0, alpha, _ = alpha_sweep(n_values, grid, options, threads)

    if mu0.size == 0 or mu0.min() > 0.1 or mu0.max() < 5.0:
        raise InputValidationError("Выборка mu0 должна покрывать интервал [0.1, 5]")

    order = np.argsort(mu0, kind="stable")
    mu0, alpha = mu0[order], alpha[order]
    h = (mu0 + alpha) / np.sqrt(mu0)
    best = int(np.argmin(h))
    log_mu = np.log(mu0)
    window = np.abs(log_mu - log_mu[best]) <= 0.5
    mu0_star, prefactor = float(mu0[best]), float(h[best])
    if np.count_nonzero(window) >= 3 and np.unique(log_mu[window]).size >= 3:
        a, b, c = np.polyfit(log_mu[window], h[window], 2)
        if a > 0:
            vertex = -b / (2.0 * a)
            if log_mu[window].min() <= vertex <= log_mu[window].max():
                mu0_star = float(math.exp(vertex))
                prefactor = float(np.polyval([a, b, c], vertex))

    n_c = math.sqrt(mu0_star / Gamma0)
    logger.info(f"mu0* = {mu0_star:.4f}, N_c = {n_c:.3f}, c = {prefactor:.4f}")
    return ClusterAnalysis(
        alpha_source=alpha_source,
        mu0_samples=mu0,
        alpha_samples=alpha,
        sqrt_mu0_samples=np.sqrt(mu0),
        beta_samples=alpha / np.sqrt(mu0),
        mu0_star=mu0_star,
        n_c=max(n_c, 1.0),
        prefactor=prefactor,
        variance_at_optimum=prefactor * math.sqrt(Gamma0) / total_budget,
        nu_budget=total_budget,
        n_trials=total_budget / max(n_c, 1.0),
    )
