import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.signal import find_peaks

from app.core.config import settings
from app.core.exceptions import ConvergenceError, DomainError
from app.models.channels import LinearChannel
from app.models.fisher import qfi_weighted
from app.models.schemas import ChannelKind, NoiseParams, ProbeFamily
from app.models.spin_core import ProbeState, make_probe

logger = logging.getLogger(__name__)


class OptimizerOptions(BaseModel):
    restarts: int = Field(default_factory=lambda: settings.optimizer_restarts, ge=1)
    tolerance: float = Field(default_factory=lambda: settings.optimizer_tolerance, gt=0.0)
    max_iterations: int = Field(default_factory=lambda: settings.optimizer_max_iterations, ge=1)
    fd_step: float = Field(default_factory=lambda: settings.fd_step, gt=0.0)
    seed: int = Field(default_factory=lambda: settings.default_seed)
    symmetric: Optional[bool] = None
    verify_symmetry: bool = False
    threads: int = Field(1, ge=1)


class OptimizationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    probe: ProbeState
    qfi: float
    iterations: int
    converged: bool
    restarts_used: int
    start: str = ""
    symmetry_gap: Optional[float] = None


class MenorahScan(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    n_qubits: int
    gamma_grid: List[float]
    amplitudes: np.ndarray
    qfi: List[float]
    component_counts: List[int]
    bifurcations: List[float]
    converged: List[bool]


class FamilyCurvePoint(BaseModel):
    family: str
    n_qubits: int
    Gamma0: float
    qfi: float
    inverse_qfi: float
    quantum_error: float
    converged: bool = True


class _Ascent(BaseModel):
    vector: List[float]
    value: float
    iterations: int
    converged: bool


def _mirror_expand(half: np.ndarray, n_qubits: int) -> np.ndarray:
    """Полувектор (m <= 0) -> полный симметричный вектор psi_m = psi_-m"""
    tail = half[: (n_qubits + 1) // 2][::-1]
    return np.concatenate([half, tail])


def _mirror_half(full: np.ndarray) -> np.ndarray:
    n_half = full.size // 2 + full.size % 2
    return 0.5 * (full[:n_half] + full[::-1][:n_half])


def _normalize(vector: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise DomainError("Нулевой вектор амплитуд")
    return vector / norm


def _sphere_ascent(
    objective: Callable[[np.ndarray], float],
    start: np.ndarray,
    options: OptimizerOptions,
) -> _Ascent:
    """
    Проекционный градиентный подъем на единичной сфере.
    Градиент - центральные разности, шаг Барзилаи-Борвейна с возвратом по Армихо.
    """
    x = _normalize(start)
    value = objective(x)

    def gradient(point: np.ndarray) -> np.ndarray:
        g = np.empty_like(point)
        for i in range(point.size):
            shift = np.zeros_like(point)
            shift[i] = options.fd_step
            g[i] = (objective(_normalize(point + shift)) - objective(_normalize(point - shift))) / (2 * options.fd_step)
        return g - np.dot(g, point) * point

    g = gradient(x)
    step = 1.0 / max(float(np.linalg.norm(g)), 1e-12)
    stalled = 0
    converged = False
    iteration = 0
    for iteration in range(1, options.max_iterations + 1):
        g_norm2 = float(np.dot(g, g))
        if math.sqrt(g_norm2) <= options.tolerance * max(value, 1.0):
            converged = True
            break
        t = step
        while True:
            candidate = _normalize(x + t * g)
            candidate_value = objective(candidate)
            if candidate_value >= value + 1e-4 * t * g_norm2:
                break
            t *= 0.5
            if t < 1e-16:
                candidate, candidate_value = x, value
                break
        improvement = candidate_value - value
        if candidate is x:
            converged = True
            break

        new_g = gradient(candidate)
        s, y = candidate - x, new_g - g
        sy = float(np.dot(s, y))
        step = abs(float(np.dot(s, s)) / sy) if abs(sy) > 1e-300 else 2.0 * t
        x, value, g = candidate, candidate_value, new_g
        logger.debug(f"Итерация {iteration}: F = {value:.12g}")

        if improvement <= options.tolerance * max(value, 1.0):
            stalled += 1
            if stalled >= 3:
                converged = True
                break
        else:
            stalled = 0
    return _Ascent(vector=list(x), value=value, iterations=iteration, converged=converged)


def _standard_starts(n_qubits: int, count: int, seed: int) -> List[Tuple[str, np.ndarray]]:
    starts = []
    for family in (ProbeFamily.NOON, ProbeFamily.COSINE, ProbeFamily.SPIN_COHERENT):
        starts.append((family.value, make_probe(family, n_qubits).amplitudes.real))
    index = 0
    while len(starts) < count:
        rng = np.random.default_rng([seed, index])
        starts.append((f"random{index}", np.abs(rng.normal(size=n_qubits + 1))))
        index += 1
    return starts[:count]


def _channel_objective(channel: LinearChannel) -> Callable[[np.ndarray], float]:
    def objective(full: np.ndarray) -> float:
        return qfi_weighted(matrix for _, matrix in channel.output_matrices(full.astype(complex)))

    return objective


def optimize_probe(
    noise: NoiseParams,
    n_qubits: int,
    options: Optional[OptimizerOptions] = None,
    kind: Optional[ChannelKind] = None,
    initial: Optional[ProbeState] = None,
    channel: Optional[LinearChannel] = None,
) -> OptimizationResult:
    """
    Численный поиск пробного состояния с максимальной КФИ после канала.
    Несколько стартов, лучший результат по аргмаксу с приоритетом меньшего индекса.
    """
    options = options or OptimizerOptions()
    if n_qubits > settings.max_optimizer_qubits:
        raise DomainError(
            f"N={n_qubits} превышает допустимый для оптимизатора предел {settings.max_optimizer_qubits}"
        )
    channel = channel or LinearChannel(noise, n_qubits, kind)
    full_objective = _channel_objective(channel)
    symmetric = noise.is_mirror_symmetric if options.symmetric is None else options.symmetric

    starts = _standard_starts(n_qubits, options.restarts, options.seed)
    if initial is not None:
        starts.insert(0, ("warm", initial.amplitudes.real.copy()))

    if symmetric:
        def objective(half: np.ndarray) -> float:
            return full_objective(_normalize(_mirror_expand(half, n_qubits)))

        prepared = [(label, _mirror_half(vector)) for label, vector in starts]
    else:
        objective = full_objective
        prepared = starts

    def run(item):
        label, vector = item
        return label, _sphere_ascent(objective, vector, options)

    if options.threads > 1:
        with ThreadPoolExecutor(max_workers=options.threads) as executor:
            outcomes = list(executor.map(run, prepared))
    else:
        outcomes = [run(item) for item in prepared]

    best_index = 0
    for index, (_, ascent) in enumerate(outcomes):
        if ascent.value > outcomes[best_index][1].value:
            best_index = index
    label, best = outcomes[best_index]
    vector = np.asarray(best.vector)
    if symmetric:
        vector = _mirror_expand(vector, n_qubits)
    vector = _normalize(vector)
    # знак амплитуд не влияет на КФИ
    if np.sum(vector) < 0:
        vector = -vector
    value = full_objective(vector)

    symmetry_gap = None
    if symmetric and options.verify_symmetry:
        free = _sphere_ascent(full_objective, vector, options)
        symmetry_gap = (free.value - value) / max(value, 1e-300)
        if symmetry_gap > settings.symmetry_tolerance:
            logger.warning(
                f"Несимметричное решение лучше симметричного на {symmetry_gap:.3e} (отн.)"
            )

    if not best.converged:
        logger.warning(f"Оптимизатор не сошелся за {best.iterations} итераций (N={n_qubits})")
    logger.info(f"Лучший старт: {label}, F = {value:.10g}, N = {n_qubits}")
    return OptimizationResult(
        probe=ProbeState.from_vector(vector),
        qfi=value,
        iterations=best.iterations,
        converged=best.converged,
        restarts_used=len(prepared),
        start=label,
        symmetry_gap=symmetry_gap,
    )


def count_components(amplitudes: np.ndarray, threshold: Optional[float] = None) -> int:
    """Число локальных максимумов |psi_m| выше порога; края учитываются"""
    threshold = settings.bifurcation_threshold if threshold is None else threshold
    padded = np.concatenate([[0.0], np.abs(amplitudes), [0.0]])
    peaks, _ = find_peaks(padded, height=threshold, prominence=threshold)
    return int(len(peaks))


def menorah_scan(
    n_qubits: int,
    gamma_grid: Sequence[float],
    options: Optional[OptimizerOptions] = None,
    threshold: Optional[float] = None,
) -> MenorahScan:
    """Оптимальные профили по сетке Gamma0 с теплым стартом от предыдущей точки"""
    grid = list(gamma_grid)
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise DomainError("Сетка Gamma0 должна быть отсортирована по возрастанию")
    rows, values, counts, flags = [], [], [], []
    previous: Optional[ProbeState] = None
    for gamma in grid:
        result = optimize_probe(NoiseParams(Gamma0=gamma), n_qubits, options, initial=previous)
        previous = result.probe
        profile = np.abs(result.probe.amplitudes)
        rows.append(profile)
        values.append(result.qfi)
        counts.append(count_components(profile, threshold))
        flags.append(result.converged)
        logger.info(f"Gamma0={gamma:.5g}: компонент {counts[-1]}, F={result.qfi:.6g}")

    bifurcations = [grid[i] for i in range(1, len(grid)) if counts[i] > counts[i - 1]]
    return MenorahScan(
        n_qubits=n_qubits,
        gamma_grid=grid,
        amplitudes=np.array(rows),
        qfi=values,
        component_counts=counts,
        bifurcations=bifurcations,
        converged=flags,
    )


def family_error_curves(
    families: Sequence[ProbeFamily],
    n_qubits: int,
    gamma_grid: Sequence[float],
    include_optimized: bool = True,
    options: Optional[OptimizerOptions] = None,
    **family_params,
) -> List[FamilyCurvePoint]:
    """Точная 1/F и квантовая составляющая ошибки N^2 (1/F - Gamma0) по семействам"""
    points = []
    n2 = float(n_qubits) ** 2
    for gamma in gamma_grid:
        channel = LinearChannel(NoiseParams(Gamma0=gamma), n_qubits)
        objective = _channel_objective(channel)
        for family in families:
            probe = make_probe(family, n_qubits, **family_params)
            value = objective(probe.amplitudes)
            points.append(_curve_point(ProbeFamily(family).value, n_qubits, gamma, value, True))
        if include_optimized:
            result = optimize_probe(NoiseParams(Gamma0=gamma), n_qubits, options, channel=channel)
            points.append(_curve_point("optimized", n_qubits, gamma, result.qfi, result.converged))
    logger.info(f"Рассчитано {len(points)} точек кривых ошибки, N = {n_qubits}")
    return points


def _curve_point(family: str, n_qubits: int, gamma: float, value: float, converged: bool) -> FamilyCurvePoint:
    inverse = 1.0 / value if value > 0 else math.inf
    return FamilyCurvePoint(
        family=family,
        n_qubits=n_qubits,
        Gamma0=gamma,
        qfi=value,
        inverse_qfi=inverse,
        quantum_error=n_qubits ** 2 * (inverse - gamma),
        converged=converged,
    )


def optimal_qfi(k: int, gamma: float, options: Optional[OptimizerOptions] = None) -> float:
    """F_opt для кластера из k кубитов; один кубит: F = exp(-Gamma0)"""
    if k == 1:
        return math.exp(-gamma)
    return optimize_probe(NoiseParams(Gamma0=gamma), k, options).qfi


def entanglement_threshold(
    k: int,
    tolerance: float = 1e-4,
    bracket: Tuple[float, float] = (1e-3, 1.0),
    options: Optional[OptimizerOptions] = None,
) -> float:
    """
    Критическая дефазировка, ниже которой кластеры из k кубитов выгоднее кластеров
    из k - 1 кубитов при том же ресурсе: F_opt(k)/k = F_opt(k-1)/(k-1).
    """
    if k not in (2, 3, 4):
        raise DomainError(f"Порог определен для k = 2, 3, 4, получено {k}")

    def advantage(gamma: float) -> float:
        return optimal_qfi(k, gamma, options) / k - optimal_qfi(k - 1, gamma, options) / (k - 1)

    low, high = bracket
    f_low, f_high = advantage(low), advantage(high)
    if f_low <= 0 or f_high >= 0:
        raise ConvergenceError(
            f"Нет смены знака на [{low}, {high}]: {f_low:.3e}, {f_high:.3e}"
        )
    while high - low > tolerance:
        middle = 0.5 * (low + high)
        if advantage(middle) > 0:
            low = middle
        else:
            high = middle
    threshold = 0.5 * (low + high)
    logger.info(f"Порог запутанности k={k}: Gamma0_c = {threshold:.4f}")
    return threshold
