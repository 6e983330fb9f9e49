import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Sequence

from app.core.config import settings
from app.core.exceptions import InputValidationError

logger = logging.getLogger(__name__)


class FileHandler:
    """Класс для чтения конфигураций и записи результатов"""

    @staticmethod
    def validate_file_size(file_content: bytes, max_size_mb: int = None) -> bool:
        """Проверка размера файла"""
        max_size_mb = settings.max_config_size_mb if max_size_mb is None else max_size_mb
        return len(file_content) <= max_size_mb * 1024 * 1024

    @staticmethod
    def load_config_file(path: str) -> Dict[str, Any]:
        """
        Чтение JSON конфигурации эксперимента
        Возвращает словарь полей ExperimentConfig
        """
        try:
            file_content = Path(path).read_bytes()
        except OSError as e:
            logger.error(f"Ошибка при чтении файла конфигурации {path}: {e}")
            raise InputValidationError(f"Не удалось прочитать конфигурацию: {path}")

        if not FileHandler.validate_file_size(file_content):
            raise InputValidationError(
                f"Размер файла конфигурации превышает {settings.max_config_size_mb} МБ"
            )
        try:
            data = json.loads(file_content.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            logger.error(f"Ошибка при обработке JSON конфигурации: {e}")
            raise InputValidationError(f"Неверный формат JSON: {e}")

        if not isinstance(data, dict):
            raise InputValidationError("Конфигурация должна быть JSON объектом")
        return data

    @staticmethod
    def format_value(value: Any) -> str:
        """Число с 17 значащими цифрами, остальное как строка"""
        if isinstance(value, bool):
            return "1" if value else "0"
        if isinstance(value, int):
            return str(value)
        if isinstance(value, float):
            if math.isnan(value):
                return "nan"
            return format(value, f".{settings.csv_digits}g")
        return str(value)

    @staticmethod
    def write_csv(path: str, columns: Sequence[str], rows: List[Sequence[Any]]) -> Path:
        """Запись CSV: заголовок, запятая-разделитель, LF"""
        target = Path(path)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            for row in rows:
                if len(row) != len(columns):
                    raise InputValidationError(
                        f"Строка содержит {len(row)} значений, ожидалось {len(columns)}"
                    )
            with open(target, "w", encoding="utf-8", newline="") as handle:
                writer = csv.writer(handle, lineterminator="\n")
                writer.writerow(columns)
                writer.writerows([FileHandler.format_value(value) for value in row] for row in rows)
        except OSError as e:
            logger.error(f"Ошибка при записи CSV файла {target}: {e}")
            raise
        logger.info(f"Записано {len(rows)} строк в {target}")
        return target

    @staticmethod
    def sidecar_path(path: str) -> Path:
        target = Path(path)
        return target.with_name(target.name + ".json")

    @staticmethod
    def write_sidecar(path: str, payload: Dict[str, Any]) -> Path:
        """JSON описание запуска рядом с CSV; ключи отсортированы, без отметок времени"""
        target = FileHandler.sidecar_path(path)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, "w", encoding="utf-8", newline="\n") as handle:
                handle.write(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False, default=str))
                handle.write("\n")
        except OSError as e:
            logger.error(f"Ошибка при записи файла описания {target}: {e}")
            raise
        return target
