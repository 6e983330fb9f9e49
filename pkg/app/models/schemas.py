import math
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.exceptions import InputValidationError


class ProbeFamily(str, Enum):
    NOON = "noon"
    COSINE = "cosine"
    PHASE_UNIFORM = "phase_uniform"
    HOLLAND_BURNETT = "holland_burnett"
    SPIN_COHERENT = "spin_coherent"
    TRIDENT = "trident"
    QUAD = "quad"
    GAUSSIAN = "gaussian"
    CUSTOM = "custom"


class ChannelKind(str, Enum):
    COLLECTIVE = "collective"
    INDIVIDUAL = "individual"
    LOSS = "loss"


class PotentialKind(str, Enum):
    BOX = "box"
    COLLECTIVE_GENERAL = "collective_general"
    COLLECTIVE_SINCH = "collective_sinch"
    INDIVIDUAL = "individual"
    LOSS = "loss"
    HARMONIC = "harmonic"


class AlphaSource(str, Enum):
    NUMERIC = "numeric"
    TABLE = "table"


class CommandName(str, Enum):
    QFI = "qfi"
    OPTIMIZE = "optimize"
    MENORAH = "menorah"
    FAMILIES = "families"
    SEMICLASSICAL = "semiclassical"
    CLUSTER = "cluster"
    LOSS = "loss"
    THRESHOLDS = "thresholds"


class NoiseParams(BaseModel):
    """
    Накопленные показатели декогеренции.
    Коллективные: Gamma0, Gamma_minus, Gamma_plus;
    индивидуальные: gamma0, gamma_minus, gamma_plus;
    потери в плечах интерферометра: gamma1, gamma2.
    """
    model_config = ConfigDict(frozen=True)

    Gamma0: float = Field(0.0, ge=0.0, description="Коллективная дефазировка")
    Gamma_minus: float = Field(0.0, ge=0.0, description="Коллективная релаксация")
    Gamma_plus: float = Field(0.0, ge=0.0, description="Коллективное возбуждение")
    gamma0: float = Field(0.0, ge=0.0, description="Индивидуальная дефазировка")
    gamma_minus: float = Field(0.0, ge=0.0, description="Индивидуальная релаксация")
    gamma_plus: float = Field(0.0, ge=0.0, description="Индивидуальное возбуждение")
    gamma1: float = Field(0.0, ge=0.0, description="Потери в измерительном плече")
    gamma2: float = Field(0.0, ge=0.0, description="Потери в опорном плече")

    @model_validator(mode="after")
    def validate_finite(self):
        for name, value in self.model_dump().items():
            if not math.isfinite(value):
                raise ValueError(f"Показатель {name} должен быть конечным")
        return self

    @property
    def gamma_total(self) -> float:
        return self.gamma0 + self.gamma_minus + self.gamma_plus

    @property
    def collective_exchange(self) -> float:
        return self.Gamma_minus + self.Gamma_plus

    @property
    def has_individual(self) -> bool:
        return self.gamma_total > 0.0

    @property
    def has_collective_exchange(self) -> bool:
        return self.collective_exchange > 0.0

    @property
    def has_loss(self) -> bool:
        return self.gamma1 > 0.0 or self.gamma2 > 0.0

    @property
    def is_mirror_symmetric(self) -> bool:
        # Отражение m -> -m меняет местами S^+ и S^-, а также плечи интерферометра
        return (
            self.Gamma_minus == self.Gamma_plus
            and self.gamma_minus == self.gamma_plus
            and self.gamma1 == self.gamma2
        )

    def derived(self, n_qubits: int) -> Dict[str, float]:
        """Универсальные параметры: mu0, mu1, r, r1, r2"""
        n = float(n_qubits)
        return {
            "mu0": n * n * self.Gamma0,
            "mu1": n * n * self.collective_exchange,
            "r": n * math.expm1(self.gamma_total),
            "r1": n * math.expm1(self.gamma1),
            "r2": n * math.expm1(self.gamma2),
        }


class DriftDiffusion(BaseModel):
    v_x: float
    v_y: float
    D_xx: float
    D_xy: float
    D_yy: float
    absorption: float = Field(..., ge=0.0)


class BlockContribution(BaseModel):
    label: str
    weight: float
    qfi: float


class FisherResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    qfi: float = Field(..., ge=0.0)
    contributions: List[BlockContribution]
    sld: Optional[List[np.ndarray]] = None


class PhaseDistribution(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: np.ndarray
    density: np.ndarray

    @model_validator(mode="after")
    def validate_density(self):
        if self.grid.shape != self.density.shape:
            raise ValueError("Сетка и плотность должны иметь одинаковую длину")
        if np.any(self.density < -1e-15):
            raise ValueError("Плотность вероятности не может быть отрицательной")
        total = float(np.sum(self.density) * self.step)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"Распределение не нормировано: {total}")
        return self

    @property
    def step(self) -> float:
        return 2.0 * math.pi / len(self.grid)

    @property
    def variance(self) -> float:
        return float(np.sum(self.grid ** 2 * self.density) * self.step)


class GroundState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    lambda_min: float
    psi: np.ndarray
    x: np.ndarray
    h: float = Field(..., gt=0.0)
    lambda_coarse: float
    lambda_fine: float

    @model_validator(mode="after")
    def validate_profile(self):
        norm = float(np.sum(self.psi ** 2) * self.h)
        if abs(norm - 1.0) > 1e-8:
            raise ValueError(f"Основное состояние не нормировано: {norm}")
        significant = self.psi[np.abs(self.psi) > 1e-12 * np.max(np.abs(self.psi))]
        if np.any(significant < 0.0) and np.any(significant > 0.0):
            raise ValueError("Основное состояние не может менять знак")
        return self


class PrecisionReport(BaseModel):
    """Сводка точности: КФИ, границы, параметры кластеризации"""
    kind: str
    n_qubits: int
    parameters: Dict[str, float] = {}
    qfi: Optional[float] = None
    inverse_qfi: Optional[float] = None
    cfi_canonical: Optional[float] = None
    cfi_sx: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    closed_form_bound: Optional[float] = None
    numeric_bound: Optional[float] = None
    potential_minimum: Optional[float] = None
    lambda_min: Optional[float] = None
    cluster_size: Optional[float] = None
    conditions_ok: bool = True
    warnings: List[str] = []


class ClusterAnalysis(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    alpha_source: AlphaSource
    mu0_samples: np.ndarray
    alpha_samples: np.ndarray
    sqrt_mu0_samples: np.ndarray
    beta_samples: np.ndarray
    mu0_star: float = Field(..., gt=0.0)
    n_c: float = Field(..., ge=1.0)
    prefactor: float
    variance_at_optimum: float
    nu_budget: int
    n_trials: float

    @model_validator(mode="after")
    def validate_alpha(self):
        delta = 0.05 * math.pi ** 2
        if np.any(self.alpha_samples < 1.0 - delta) or np.any(self.alpha_samples > math.pi ** 2 + delta):
            raise ValueError("Коэффициент alpha вне допустимого диапазона [1, pi^2]")
        return self


class ExperimentConfig(BaseModel):
    """Конфигурация запуска одной команды"""
    command: CommandName
    channel: ChannelKind = ChannelKind.COLLECTIVE
    noise: NoiseParams = NoiseParams()
    n_qubits: Optional[int] = Field(None, ge=1, description="Число кубитов N")
    n_grid: Optional[List[int]] = None
    gamma_grid: Optional[List[float]] = None
    family: str = Field("cosine", description="Семейство пробных состояний или optimize")
    families: List[ProbeFamily] = [
        ProbeFamily.COSINE,
        ProbeFamily.PHASE_UNIFORM,
        ProbeFamily.HOLLAND_BURNETT,
        ProbeFamily.NOON,
        ProbeFamily.SPIN_COHERENT,
    ]
    family_p: Optional[float] = Field(None, ge=0.0, le=1.0)
    family_q: Optional[float] = Field(None, ge=0.0, le=1.0)
    family_K: Optional[float] = Field(None, gt=0.0)
    vector: Optional[List[float]] = None
    potential: Optional[PotentialKind] = None
    r1: Optional[float] = Field(None, ge=0.0)
    r2: Optional[float] = Field(None, ge=0.0)
    theta: float = math.pi / 2
    ks: List[int] = [2, 3, 4]
    alpha_source: AlphaSource = AlphaSource.NUMERIC
    budget: int = Field(10000, ge=1, description="Полный ресурс nu*N")
    output: str = "results/output.csv"
    seed: int = 0
    grid_points: int = Field(1001, ge=501)
    phase_grid: Optional[int] = None
    threads: int = Field(1, ge=1)
    restarts: int = Field(8, ge=1)
    svg: bool = False

    @field_validator("family")
    def validate_family(cls, v):
        allowed = {f.value for f in ProbeFamily} | {"optimize"}
        if v not in allowed:
            raise ValueError(f"Неизвестное семейство '{v}'. Разрешены: {', '.join(sorted(allowed))}")
        return v

    @field_validator("n_grid", "gamma_grid")
    def validate_grid(cls, v):
        if v is None:
            return v
        if not v:
            raise ValueError("Сетка не может быть пустой")
        if any(b < a for a, b in zip(v, v[1:])):
            raise ValueError("Сетка должна быть отсортирована по возрастанию")
        return v

    @field_validator("ks")
    def validate_ks(cls, v):
        if not v or any(k not in (2, 3, 4) for k in v):
            raise ValueError("Порог запутанности определен только для k = 2, 3, 4")
        return v

    @model_validator(mode="after")
    def apply_loss_parameters(self):
        if self.r1 is None and self.r2 is None:
            return self
        if self.n_qubits is None:
            raise ValueError("Для пересчета r1/r2 необходимо задать N")
        n = float(self.n_qubits)
        updates = {}
        if self.r1 is not None:
            updates["gamma1"] = math.log1p(self.r1 / n)
        if self.r2 is not None:
            updates["gamma2"] = math.log1p(self.r2 / n)
        self.noise = self.noise.model_copy(update=updates)
        return self

    def qubit_grid(self) -> List[int]:
        if self.n_grid:
            return list(self.n_grid)
        if self.n_qubits is not None:
            return [self.n_qubits]
        raise InputValidationError("Не задано число кубитов N")
