from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    app_name: str = "precision-limits"
    version: str = "1.0.0"
    log_level: str = "INFO"

    # Настройки запуска
    default_seed: int = 20140101
    threads: int = 1
    output_dir: str = "results"
    csv_digits: int = 17
    max_config_size_mb: int = 1

    # Допуски для состояний
    norm_tolerance: float = 1e-12
    hermitian_tolerance: float = 1e-12
    trace_tolerance: float = 1e-10
    block_trace_tolerance: float = 1e-8
    positivity_tolerance: float = 1e-10
    sld_cutoff: float = 1e-12

    # Интегратор каналов
    max_step_exponent: float = 1e-3
    rk4_richardson_tolerance: float = 1e-7

    # Оптимизатор пробных состояний
    optimizer_restarts: int = 8
    optimizer_tolerance: float = 1e-10
    optimizer_max_iterations: int = 5000
    fd_step: float = 1e-5
    max_optimizer_qubits: int = 200
    symmetry_tolerance: float = 1e-6
    bifurcation_threshold: float = 1e-3

    # Полуклассическое приближение
    ground_state_points: int = 1001
    richardson_tolerance: float = 1e-4

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


settings = Settings()
