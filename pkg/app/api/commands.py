import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from app.core.exceptions import InputValidationError
from app.models.channels import LinearChannel, loss_rate_conversion
from app.models.fisher import cfi_canonical_phase, cfi_sx, qfi
from app.models.probe_opt import (
    OptimizerOptions,
    entanglement_threshold,
    family_error_curves,
    menorah_scan,
    optimize_probe,
)
from app.models.schemas import AlphaSource, ChannelKind, CommandName, ExperimentConfig, NoiseParams, PotentialKind
from app.models.semiclassical import (
    NUMERIC_MU0_GRID,
    alpha_sweep,
    build_potential,
    cluster_optimize,
    ground_state,
    loss_dephasing_fraction,
    potential_kind_for,
    precision_bound,
    profile_overlap,
    sample_profile,
    validate_cluster_inputs,
)
from app.models.spin_core import m_values, make_probe

logger = logging.getLogger(__name__)

NOISE_FIELDS = ["Gamma0", "Gamma_minus", "Gamma_plus", "gamma0", "gamma_minus", "gamma_plus", "gamma1", "gamma2"]
DERIVED_FIELDS = ["mu0", "mu1", "r", "r1", "r2"]
NOISE_COLUMNS = ["N"] + NOISE_FIELDS + DERIVED_FIELDS


class Table(BaseModel):
    columns: List[str]
    rows: List[List[Any]]


class CommandResult(BaseModel):
    """Результат команды: основная таблица, сводка, признак сходимости"""
    columns: List[str]
    rows: List[List[Any]]
    summary: Dict[str, Any] = {}
    converged: bool = True
    extra_tables: Dict[str, Table] = {}
    chart: Optional[Dict[str, Any]] = None


Handler = Callable[[ExperimentConfig], CommandResult]


class CommandRouter:
    """Реестр обработчиков команд"""

    def __init__(self):
        self._handlers: Dict[CommandName, Handler] = {}

    def command(self, name: CommandName):
        def decorator(handler: Handler) -> Handler:
            self._handlers[name] = handler
            return handler

        return decorator

    @property
    def names(self) -> List[str]:
        return sorted(name.value for name in self._handlers)

    def dispatch(self, config: ExperimentConfig) -> CommandResult:
        handler = self._handlers.get(config.command)
        if handler is None:
            raise InputValidationError(f"Неизвестная команда: {config.command}")
        logger.info(f"Выполнение команды {config.command.value}")
        return handler(config)


router = CommandRouter()


def noise_row(noise: NoiseParams, n_qubits: int) -> List[Any]:
    """N, все показатели шума и производные mu0, mu1, r, r1, r2"""
    derived = noise.derived(n_qubits)
    return [n_qubits] + [getattr(noise, f) for f in NOISE_FIELDS] + [derived[f] for f in DERIVED_FIELDS]


def noise_at(config: ExperimentConfig, gamma: Optional[float]) -> NoiseParams:
    """Точка сетки Gamma: коллективная дефазировка, для индивидуального канала gamma0"""
    if gamma is None:
        return config.noise
    field = "gamma0" if config.channel == ChannelKind.INDIVIDUAL else "Gamma0"
    return config.noise.model_copy(update={field: gamma})


def optimizer_options(config: ExperimentConfig) -> OptimizerOptions:
    return OptimizerOptions(restarts=config.restarts, seed=config.seed)


def sweep(tasks: Sequence[Any], worker: Callable[[Any], Any], threads: int) -> List[Any]:
    """Параллельный обход точек; порядок результатов совпадает с порядком сетки"""
    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(worker, tasks))
    return [worker(task) for task in tasks]


def _grid_points(config: ExperimentConfig) -> List[Tuple[int, Optional[float]]]:
    gammas: List[Optional[float]] = list(config.gamma_grid) if config.gamma_grid else [None]
    return [(n, gamma) for n in config.qubit_grid() for gamma in gammas]


def _family_probe(config: ExperimentConfig, n_qubits: int):
    return make_probe(
        config.family, n_qubits, p=config.family_p, q=config.family_q, K=config.family_K, vector=config.vector
    )


@router.command(CommandName.QFI)
def run_qfi(config: ExperimentConfig) -> CommandResult:
    """КФИ одного состояния после одного канала и КФИ двух измерений"""

    def worker(point):
        n, gamma = point
        noise = noise_at(config, gamma)
        converged = True
        if config.family == "optimize":
            result = optimize_probe(noise, n, optimizer_options(config), kind=config.channel)
            probe, converged = result.probe, result.converged
        else:
            probe = _family_probe(config, n)
        state = LinearChannel(noise, n, config.channel).apply(probe)
        value = qfi(state).qfi
        return noise_row(noise, n) + [
            config.family,
            value,
            1.0 / value if value > 0 else math.inf,
            cfi_canonical_phase(state, config.phase_grid),
            cfi_sx(state, config.theta),
            converged,
        ]

    rows = sweep(_grid_points(config), worker, config.threads)
    converged = all(row[-1] for row in rows)
    return CommandResult(
        columns=NOISE_COLUMNS + ["family", "qfi", "inverse_qfi", "cfi_canonical", "cfi_sx", "converged"],
        rows=rows,
        summary={"points": len(rows), "max_qfi": max(row[len(NOISE_COLUMNS) + 1] for row in rows)},
        converged=converged,
    )


@router.command(CommandName.OPTIMIZE)
def run_optimize(config: ExperimentConfig) -> CommandResult:
    """Оптимальные профили в длинном формате: одна строка на амплитуду"""
    options = optimizer_options(config)

    def worker(point):
        n, gamma = point
        noise = noise_at(config, gamma)
        return noise, n, optimize_probe(noise, n, options, kind=config.channel)

    rows, summary, converged = [], {}, True
    for noise, n, result in sweep(_grid_points(config), worker, config.threads):
        prefix = noise_row(noise, n)
        for m, amplitude in zip(m_values(n), result.probe.amplitudes.real):
            rows.append(prefix + [float(m), float(m) / n, float(amplitude), result.qfi, result.converged])
        summary[f"N={n},Gamma0={noise.Gamma0:g},gamma0={noise.gamma0:g}"] = {
            "qfi": result.qfi,
            "start": result.start,
            "iterations": result.iterations,
            "converged": result.converged,
        }
        converged = converged and result.converged
    return CommandResult(
        columns=NOISE_COLUMNS + ["m", "x", "amplitude", "qfi", "converged"],
        rows=rows,
        summary=summary,
        converged=converged,
    )


@router.command(CommandName.MENORAH)
def run_menorah(config: ExperimentConfig) -> CommandResult:
    """Диаграмма ветвления оптимальных профилей по Gamma0"""
    n = config.n_qubits or 40
    grid = config.gamma_grid or [float(v) for v in np.geomspace(1e-4, 1e-1, 31)]
    scan = menorah_scan(n, grid, optimizer_options(config))
    rows = []
    for index, gamma in enumerate(scan.gamma_grid):
        prefix = noise_row(NoiseParams(Gamma0=gamma), n)
        for m, amplitude in zip(m_values(n), scan.amplitudes[index]):
            rows.append(prefix + [float(m), float(m) / n, float(amplitude),
                                  scan.component_counts[index], scan.converged[index]])
    series = {
        "components": (scan.gamma_grid, scan.component_counts),
    }
    return CommandResult(
        columns=NOISE_COLUMNS + ["m", "x", "amplitude", "components", "converged"],
        rows=rows,
        summary={"component_counts": scan.component_counts, "bifurcations": scan.bifurcations, "qfi": scan.qfi},
        converged=all(scan.converged),
        chart={"series": series, "xlabel": "Gamma0", "ylabel": "components", "logx": True},
    )


@router.command(CommandName.FAMILIES)
def run_families(config: ExperimentConfig) -> CommandResult:
    """Кривые ошибки стандартных семейств и оптимального состояния"""
    grid = config.gamma_grid or [float(v) for v in np.geomspace(1e-4, 1e-1, 16)]
    options = optimizer_options(config)
    params = {"p": config.family_p, "q": config.family_q, "K": config.family_K}

    def worker(n):
        return family_error_curves(config.families, n, grid, True, options, **params)

    rows, series = [], {}
    converged = True
    for points in sweep(config.qubit_grid(), worker, config.threads):
        for point in points:
            noise = NoiseParams(Gamma0=point.Gamma0)
            rows.append(noise_row(noise, point.n_qubits) + [
                point.family, point.qfi, point.inverse_qfi, point.quantum_error, point.converged
            ])
            xs, ys = series.setdefault(f"{point.family} N={point.n_qubits}", ([], []))
            xs.append(point.Gamma0)
            ys.append(point.quantum_error)
            converged = converged and point.converged
    return CommandResult(
        columns=NOISE_COLUMNS + ["family", "qfi", "inverse_qfi", "quantum_error", "converged"],
        rows=rows,
        summary={"points": len(rows)},
        converged=converged,
        chart={"series": series, "xlabel": "Gamma0", "ylabel": "N^2 (1/F - Gamma0)", "logx": True},
    )


def _potential_kind(config: ExperimentConfig) -> PotentialKind:
    return config.potential or potential_kind_for(config.noise, config.channel)


@router.command(CommandName.SEMICLASSICAL)
def run_semiclassical(config: ExperimentConfig) -> CommandResult:
    """lambda_min, асимптотические границы и профиль основного состояния"""
    kind = _potential_kind(config)

    def worker(point):
        n, gamma = point
        noise = noise_at(config, gamma)
        report = precision_bound(noise, kind, n, config.grid_points)
        ground = ground_state(build_potential(noise, kind, n), config.grid_points)
        return noise, n, report, ground

    rows, profile_rows, summary = [], [], {}
    conditions = True
    for noise, n, report, ground in sweep(_grid_points(config), worker, config.threads):
        prefix = noise_row(noise, n)
        rows.append(prefix + [
            kind.value,
            report.lambda_min,
            report.numeric_bound,
            report.closed_form_bound,
            report.potential_minimum,
            report.parameters["profile_center"],
            report.parameters["profile_width"],
            report.parameters["profile_center_numeric"],
            report.parameters["profile_width_numeric"],
            report.conditions_ok,
        ])
        for x, psi in zip(ground.x, ground.psi):
            profile_rows.append(prefix + [float(x), float(psi)])
        conditions = conditions and report.conditions_ok
        if report.warnings:
            summary.setdefault("warnings", []).extend(f"N={n}: {w}" for w in report.warnings)
    summary["conditions_ok"] = conditions
    return CommandResult(
        columns=NOISE_COLUMNS + [
            "potential", "lambda_min", "numeric_bound", "closed_form_bound", "potential_minimum",
            "profile_center", "profile_width", "profile_center_numeric", "profile_width_numeric",
            "conditions_ok",
        ],
        rows=rows,
        summary=summary,
        extra_tables={"profile": Table(columns=NOISE_COLUMNS + ["x", "psi"], rows=profile_rows)},
    )


@router.command(CommandName.CLUSTER)
def run_cluster(config: ExperimentConfig) -> CommandResult:
    """Коллапс alpha(mu0) и оптимальный размер кластера"""
    n_values = config.n_grid or [10, 14, 20, 28, 40]
    options = optimizer_options(config)
    validate_cluster_inputs(config.noise.Gamma0, config.channel)
    samples, sizes = None, None
    if config.alpha_source == AlphaSource.NUMERIC:
        if config.gamma_grid:
            mu0, alpha, sizes = alpha_sweep(n_values, options=options, threads=config.threads,
                                            gamma_grid=config.gamma_grid)
        else:
            mu0, alpha, sizes = alpha_sweep(n_values, NUMERIC_MU0_GRID, options, config.threads)
        samples = (mu0, alpha)
    analysis = cluster_optimize(
        config.noise.Gamma0,
        config.budget,
        config.alpha_source,
        config.channel,
        samples=samples,
        n_values=n_values,
        options=options,
        threads=config.threads,
    )
    # N точки: размер кластера, на котором получена alpha; для табличной alpha - оптимальный N_c
    if sizes is None:
        sizes = np.full(analysis.mu0_samples.size, max(int(round(analysis.n_c)), 1))
    else:
        sizes = np.asarray(sizes)[np.argsort(samples[0], kind="stable")]
    noise = [getattr(config.noise, f) for f in NOISE_FIELDS]
    rows = [
        [int(n)] + noise + [analysis.n_c, float(mu), float(s), float(a), float(b)]
        for n, mu, s, a, b in zip(
            sizes, analysis.mu0_samples, analysis.sqrt_mu0_samples, analysis.alpha_samples, analysis.beta_samples
        )
    ]
    return CommandResult(
        columns=["N"] + NOISE_FIELDS + ["n_c", "mu0", "sqrt_mu0", "alpha", "beta"],
        rows=rows,
        summary={
            "Gamma0": config.noise.Gamma0,
            "alpha_source": analysis.alpha_source.value,
            "mu0_star": analysis.mu0_star,
            "n_c": analysis.n_c,
            "prefactor": analysis.prefactor,
            "variance_at_optimum": analysis.variance_at_optimum,
            "nu_budget": analysis.nu_budget,
            "n_trials": analysis.n_trials,
        },
        chart={
            "series": {"alpha": (analysis.mu0_samples.tolist(), analysis.alpha_samples.tolist())},
            "xlabel": "mu0",
            "ylabel": "alpha",
            "logx": True,
        },
    )


@router.command(CommandName.LOSS)
def run_loss(config: ExperimentConfig) -> CommandResult:
    """Оптимальный профиль при потерях и его сравнение с полуклассическим"""
    options = optimizer_options(config)

    def worker(n):
        noise = config.noise
        result = optimize_probe(noise, n, options, kind=ChannelKind.LOSS)
        ground = ground_state(build_potential(noise, PotentialKind.LOSS, n), config.grid_points)
        return n, result, ground

    rows, summary, converged = [], {}, True
    for n, result, ground in sweep(config.qubit_grid(), worker, config.threads):
        noise = config.noise
        semiclassical = sample_profile(ground, n)
        prefix = noise_row(noise, n)
        for m, optimized, reference in zip(m_values(n), result.probe.amplitudes.real, semiclassical):
            rows.append(prefix + [float(m), float(m) / n, float(optimized), float(reference), result.converged])
        derived = noise.derived(n)
        eps1, eps2 = math.sqrt(derived["r1"] / (4 * n)), math.sqrt(derived["r2"] / (4 * n))
        summary[f"N={n}"] = {
            "qfi": result.qfi,
            "overlap": profile_overlap(result.probe, ground),
            "transmittivity1": loss_rate_conversion(noise.gamma1, n)[1],
            "transmittivity2": loss_rate_conversion(noise.gamma2, n)[1],
            "loss_dephasing_fraction": loss_dephasing_fraction(eps1, eps2),
            "lambda_min": ground.lambda_min,
        }
        converged = converged and result.converged
    return CommandResult(
        columns=NOISE_COLUMNS + ["m", "x", "amplitude_optimized", "amplitude_semiclassical", "converged"],
        rows=rows,
        summary=summary,
        converged=converged,
    )


@router.command(CommandName.THRESHOLDS)
def run_thresholds(config: ExperimentConfig) -> CommandResult:
    """Критическая дефазировка для кластеров из k = 2, 3, 4 кубитов"""
    options = optimizer_options(config)
    values = sweep(config.ks, lambda k: entanglement_threshold(k, options=options), config.threads)
    rows = [[k, value, value * k * k] for k, value in zip(config.ks, values)]
    return CommandResult(
        columns=["k", "Gamma0_c", "mu0_c"],
        rows=rows,
        summary={str(k): value for k, value in zip(config.ks, values)},
    )
