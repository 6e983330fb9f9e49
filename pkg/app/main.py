import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from app.api.commands import CommandResult, router
from app.core.config import settings
from app.core.exceptions import ConvergenceError, DomainError, InputValidationError
from app.models.schemas import CommandName, ExperimentConfig
from app.utils.file_handler import FileHandler

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3

# флаг командной строки -> поле NoiseParams
NOISE_FLAGS = {
    "gamma0": "Gamma0",
    "gamma_minus": "Gamma_minus",
    "gamma_plus": "Gamma_plus",
    "igamma0": "gamma0",
    "igamma_minus": "gamma_minus",
    "igamma_plus": "gamma_plus",
    "loss1": "gamma1",
    "loss2": "gamma2",
}

# флаг командной строки -> поле ExperimentConfig
CONFIG_FLAGS = {
    "channel": "channel",
    "N": "n_qubits",
    "n_grid": "n_grid",
    "grid": "gamma_grid",
    "family": "family",
    "families": "families",
    "p": "family_p",
    "q": "family_q",
    "K": "family_K",
    "vector": "vector",
    "potential": "potential",
    "r1": "r1",
    "r2": "r2",
    "theta": "theta",
    "ks": "ks",
    "alpha_source": "alpha_source",
    "budget": "budget",
    "seed": "seed",
    "out": "output",
    "threads": "threads",
    "restarts": "restarts",
    "grid_points": "grid_points",
    "phase_grid": "phase_grid",
}


def _float_list(value: str) -> List[float]:
    try:
        return [float(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Ожидался список чисел через запятую: {value}")


def _int_list(value: str) -> List[int]:
    try:
        return [int(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Ожидался список целых через запятую: {value}")


def _str_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=settings.app_name,
        description="Пределы точности оценки фазы при декогеренции",
    )
    parser.add_argument("command", choices=[c.value for c in CommandName], help="Команда")
    parser.add_argument("--config", help="JSON файл конфигурации; флаги имеют приоритет")
    parser.add_argument("--channel", choices=["collective", "individual", "loss"])

    noise = parser.add_argument_group("шум")
    noise.add_argument("--gamma0", type=float, help="Коллективная дефазировка Gamma0")
    noise.add_argument("--gamma-minus", type=float, help="Коллективная релаксация")
    noise.add_argument("--gamma-plus", type=float, help="Коллективное возбуждение")
    noise.add_argument("--igamma0", type=float, help="Индивидуальная дефазировка")
    noise.add_argument("--igamma-minus", type=float, help="Индивидуальная релаксация")
    noise.add_argument("--igamma-plus", type=float, help="Индивидуальное возбуждение")
    noise.add_argument("--loss1", type=float, help="Потери в измерительном плече")
    noise.add_argument("--loss2", type=float, help="Потери в опорном плече")
    noise.add_argument("--r1", type=float, help="Параметр потерь r1 = N (e^gamma1 - 1)")
    noise.add_argument("--r2", type=float, help="Параметр потерь r2 = N (e^gamma2 - 1)")

    grid = parser.add_argument_group("сетки")
    grid.add_argument("--N", type=int, help="Число кубитов")
    grid.add_argument("--n-grid", type=_int_list, help="Сетка N через запятую")
    grid.add_argument("--grid", type=_float_list, help="Сетка Gamma через запятую")
    grid.add_argument("--grid-points", type=int, help="Узлы сетки полуклассического решателя")
    grid.add_argument("--phase-grid", type=int, help="Узлы сетки фаз")

    probe = parser.add_argument_group("пробное состояние")
    probe.add_argument("--family", help="Семейство или optimize")
    probe.add_argument("--families", type=_str_list, help="Семейства через запятую")
    probe.add_argument("--p", type=float)
    probe.add_argument("--q", type=float)
    probe.add_argument("--K", type=float)
    probe.add_argument("--vector", type=_float_list, help="Амплитуды для семейства custom")
    probe.add_argument("--theta", type=float, help="Поворот перед измерением S^x")

    extra = parser.add_argument_group("команды")
    extra.add_argument("--potential", help="Вид потенциала для semiclassical")
    extra.add_argument("--ks", type=_int_list, help="Размеры кластеров для thresholds")
    extra.add_argument("--alpha-source", choices=["numeric", "table"])
    extra.add_argument("--budget", type=int, help="Полный ресурс nu*N для cluster")

    run = parser.add_argument_group("запуск")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="Путь к CSV")
    run.add_argument("--threads", type=int)
    run.add_argument("--restarts", type=int)
    run.add_argument("--svg", action="store_true", help="Сохранить SVG график")
    run.add_argument("--log-level", default=settings.log_level)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Файл конфигурации, поверх него явно заданные флаги"""
    data: Dict[str, Any] = FileHandler.load_config_file(args.config) if args.config else {}
    data["command"] = args.command
    noise = dict(data.get("noise") or {})
    for flag, field in NOISE_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            noise[field] = value
    data["noise"] = noise
    for flag, field in CONFIG_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            data[field] = value
    if args.svg:
        data["svg"] = True
    data.setdefault("output", str(Path(settings.output_dir) / f"{args.command}.csv"))
    data.setdefault("seed", settings.default_seed)
    data.setdefault("threads", settings.threads)
    return ExperimentConfig(**data)


def write_outputs(config: ExperimentConfig, result: CommandResult) -> None:
    FileHandler.write_csv(config.output, result.columns, result.rows)
    tables = {}
    for name, table in result.extra_tables.items():
        path = FileHandler.write_csv(_table_path(config.output, name), table.columns, table.rows)
        tables[name] = path.name
    FileHandler.write_sidecar(
        config.output,
        {
            "command": config.command.value,
            "config": config.model_dump(mode="json"),
            "seed": config.seed,
            "version": settings.version,
            "summary": result.summary,
            "converged": result.converged,
            "tables": tables,
        },
    )
    if config.svg and result.chart:
        from app.utils.charts import line_chart

        line_chart(config.output, **result.chart)


def _table_path(output: str, name: str) -> str:
    if output.endswith(".csv"):
        return f"{output[:-4]}.{name}.csv"
    return f"{output}.{name}.csv"


def run(config: ExperimentConfig) -> int:
    """Выполнение команды; код возврата 0, 2 (конфигурация) или 3 (нет сходимости)"""
    try:
        result = router.dispatch(config)
    except ConvergenceError as e:
        logger.error(f"Численный метод не сошелся: {e}")
        return EXIT_CONVERGENCE
    except (ValidationError, InputValidationError, DomainError) as e:
        logger.error(f"Ошибка конфигурации: {e}")
        return EXIT_CONFIG

    write_outputs(config, result)
    if not result.converged:
        logger.error("Часть точек получена без сходимости; результаты помечены в столбце converged")
        return EXIT_CONVERGENCE
    logger.info(f"Команда {config.command.value} завершена, результаты в {config.output}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        config = config_from_args(args)
    except (ValidationError, InputValidationError) as e:
        logger.error(f"Ошибка конфигурации: {e}")
        return EXIT_CONFIG
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
