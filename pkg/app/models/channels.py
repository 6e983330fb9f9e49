"""
Каналы декогеренции для симметричных и блочных состояний.

Все каналы параметризуются накопленными показателями (Gamma, gamma), а не
скоростями. Генераторы сохраняют разность m - m', поэтому коллективная
дефазировка применяется как точное ядро exp(-Gamma0 (m - m')^2 / 2) и
коммутирует с остальными процессами.
"""
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply
from scipy.sparse.linalg import norm as sparse_norm
from scipy.special import gammaln, xlogy

from app.core.config import settings
from app.core.exceptions import ConvergenceError, DomainError, InputValidationError
from app.models.schemas import ChannelKind, DriftDiffusion, NoiseParams
from app.models.spin_core import (
    BlockedDensityMatrix,
    DensityBlock,
    ProbeState,
    SymmetricDensityMatrix,
    hermitize,
    multiplicity,
    spin_operators,
    spin_values,
)

logger = logging.getLogger(__name__)

# Операторы одного кубита в порядке (-1/2, +1/2)
QUBIT_Z = np.diag([-0.5, 0.5])
QUBIT_MINUS = np.array([[0.0, 1.0], [0.0, 0.0]])
QUBIT_PLUS = np.array([[0.0, 0.0], [1.0, 0.0]])


def _check_rates(**rates: float) -> None:
    for name, value in rates.items():
        if value < 0 or not math.isfinite(value):
            raise DomainError(f"Показатель {name} должен быть неотрицательным и конечным, получено {value}")


def validate_noise(noise: NoiseParams, kind: Optional[ChannelKind] = None) -> None:
    """Проверка допустимости комбинации процессов"""
    if noise.has_loss and (noise.has_individual or noise.has_collective_exchange):
        raise InputValidationError(
            "Потери совместимы только с коллективной дефазировкой Gamma0"
        )
    if kind == ChannelKind.COLLECTIVE and (noise.has_individual or noise.has_loss):
        raise InputValidationError("Коллективный канал не допускает индивидуальных процессов и потерь")
    if kind == ChannelKind.INDIVIDUAL and noise.has_loss:
        raise InputValidationError("Индивидуальный канал не допускает потерь")
    if kind == ChannelKind.LOSS and (noise.has_individual or noise.has_collective_exchange):
        raise InputValidationError("Канал потерь допускает только дополнительную дефазировку Gamma0")


class BlockLayout:
    """Упаковка набора блоков по спину в один вектор (построчно)"""

    def __init__(self, spins: Sequence[float]):
        self.spins = list(spins)
        self.dims = [int(round(2 * s)) + 1 for s in self.spins]
        sizes = [d * d for d in self.dims]
        self.offsets = list(np.cumsum([0] + sizes)[:-1])
        self.size = int(sum(sizes))
        self._index = {self._key(s): i for i, s in enumerate(self.spins)}

    @staticmethod
    def _key(spin: float) -> int:
        return int(round(2 * spin))

    def position(self, spin: float) -> int:
        try:
            return self._index[self._key(spin)]
        except KeyError:
            raise InputValidationError(f"Блок со спином S={spin} отсутствует в разметке")

    def block_slice(self, spin: float) -> slice:
        i = self.position(spin)
        return slice(self.offsets[i], self.offsets[i] + self.dims[i] ** 2)

    def pack(self, matrices: Dict[float, np.ndarray]) -> np.ndarray:
        vector = np.zeros(self.size, dtype=complex)
        for spin, matrix in matrices.items():
            i = self.position(spin)
            if matrix.shape != (self.dims[i], self.dims[i]):
                raise InputValidationError(
                    f"Блок S={spin} имеет размер {matrix.shape}, ожидалось {self.dims[i]}x{self.dims[i]}"
                )
            vector[self.block_slice(spin)] += matrix.reshape(-1)
        return vector

    def unpack(self, vector: np.ndarray) -> Dict[float, np.ndarray]:
        return {
            spin: vector[self.block_slice(spin)].reshape(dim, dim)
            for spin, dim in zip(self.spins, self.dims)
        }

    def diagonal_indices(self, k: int) -> np.ndarray:
        """Позиции элементов с i - j = k во всех блоках, в порядке разметки"""
        positions = []
        for offset, dim in zip(self.offsets, self.dims):
            count = dim - abs(k)
            if count <= 0:
                continue
            c = np.arange(count)
            rows, cols = (c + k, c) if k >= 0 else (c, c - k)
            positions.append(offset + rows * dim + cols)
        if not positions:
            return np.zeros(0, dtype=int)
        return np.concatenate(positions)


def _dissipator(jump: np.ndarray) -> sparse.csr_matrix:
    """D[L]X = L X L^+ - {L^+ L, X}/2 для построчной векторизации"""
    jump = sparse.csr_matrix(jump)
    identity = sparse.identity(jump.shape[0], format="csr")
    product = (jump.conj().T @ jump).tocsr()
    return (
        sparse.kron(jump, jump.conj())
        - 0.5 * sparse.kron(product, identity)
        - 0.5 * sparse.kron(identity, product.T)
    ).tocsr()


def _assemble(layout: BlockLayout, pieces: Dict[Tuple[int, int], sparse.spmatrix]) -> sparse.csr_matrix:
    count = len(layout.spins)
    grid = [[None] * count for _ in range(count)]
    for (row, col), piece in pieces.items():
        grid[row][col] = piece
    for i, dim in enumerate(layout.dims):
        if grid[i][i] is None:
            grid[i][i] = sparse.csr_matrix((dim * dim, dim * dim))
    return sparse.bmat(grid, format="csr")


def _add_piece(pieces: dict, key: Tuple[int, int], piece) -> None:
    pieces[key] = piece if key not in pieces else pieces[key] + piece


def collective_exchange_generator(
    layout: BlockLayout, Gamma_minus: float, Gamma_plus: float
) -> sparse.csr_matrix:
    """Коллективные релаксация и возбуждение внутри каждого блока"""
    pieces: dict = {}
    for i, spin in enumerate(layout.spins):
        _, s_plus, s_minus = spin_operators(spin)
        piece = Gamma_minus * _dissipator(s_minus) + Gamma_plus * _dissipator(s_plus)
        _add_piece(pieces, (i, i), piece)
    return _assemble(layout, pieces)


def clebsch_gordan(total: float, projection: float, core: float, q: float) -> float:
    """<core, M - q; 1/2, q | total, M> в соглашении Кондона-Шортли"""
    if abs(projection) > total + 1e-9 or abs(projection - q) > core + 1e-9:
        return 0.0
    up = q > 0
    if abs(total - (core + 0.5)) < 1e-9:
        ratio = (total + projection) if up else (total - projection)
        return math.sqrt(ratio / (2.0 * total))
    if abs(total - (core - 0.5)) < 1e-9:
        if up:
            return -math.sqrt((total + 1.0 - projection) / (2.0 * (total + 1.0)))
        return math.sqrt((total + 1.0 + projection) / (2.0 * (total + 1.0)))
    return 0.0


def _coupled_jump(target: float, source: float, core: float, op: np.ndarray) -> np.ndarray:
    """Действие оператора одного кубита между копиями спинов source -> target, построенными на core"""
    dim_t, dim_s = int(round(2 * target)) + 1, int(round(2 * source)) + 1
    result = np.zeros((dim_t, dim_s))
    qubit = (-0.5, 0.5)
    for step in range(int(round(2 * core)) + 1):
        mu = -core + step
        for a, q_out in enumerate(qubit):
            for b, q_in in enumerate(qubit):
                if op[a, b] == 0.0:
                    continue
                m, m1 = mu + q_out, mu + q_in
                if abs(m) > target + 1e-9 or abs(m1) > source + 1e-9:
                    continue
                result[int(round(m + target)), int(round(m1 + source))] += (
                    clebsch_gordan(target, m, core, q_out)
                    * clebsch_gordan(source, m1, core, q_in)
                    * op[a, b]
                )
    return result


def _coupled_damping(target: float, core: float, op: np.ndarray) -> np.ndarray:
    dim = int(round(2 * target)) + 1
    weights = np.diag(op.T @ op)
    values = np.zeros(dim)
    for i in range(dim):
        m = i - target
        for b, q in enumerate((-0.5, 0.5)):
            values[i] += clebsch_gordan(target, m, core, q) ** 2 * weights[b]
    return values


def individual_generator(
    n_qubits: int,
    layout: BlockLayout,
    gamma0: float,
    gamma_minus: float,
    gamma_plus: float,
) -> sparse.csr_matrix:
    """
    Редуцированное уравнение для индивидуальных процессов на блоках Q_S,
    где Q_S - вклад сектора S с учетом его кратности (tr Q_S = вероятность сектора).
    Кубит отделяется от остальных N-1, спин которых S' связывается с ним в S = S' +- 1/2.
    """
    ops = [(rate, op) for rate, op in ((gamma0, QUBIT_Z), (gamma_minus, QUBIT_MINUS), (gamma_plus, QUBIT_PLUS)) if rate > 0]
    pieces: dict = {}
    if not ops:
        return _assemble(layout, pieces)
    top = n_qubits / 2.0
    for core in spin_values(n_qubits - 1):
        core_mult = multiplicity(n_qubits - 1, core)
        sectors = [s for s in (core + 0.5, core - 0.5) if -1e-9 < s <= top + 1e-9]
        for source in sectors:
            gain = n_qubits * core_mult / multiplicity(n_qubits, source)
            j = layout.position(source)
            for target in sectors:
                i = layout.position(target)
                for rate, op in ops:
                    jump = sparse.csr_matrix(_coupled_jump(target, source, core, op))
                    if jump.nnz:
                        _add_piece(pieces, (i, j), rate * gain * sparse.kron(jump, jump).tocsr())
        for target in sectors:
            i = layout.position(target)
            damping = n_qubits * core_mult / multiplicity(n_qubits, target)
            values = sum(rate * _coupled_damping(target, core, op) for rate, op in ops)
            diag = sparse.diags(values)
            identity = sparse.identity(len(values))
            piece = -0.5 * damping * (sparse.kron(diag, identity) + sparse.kron(identity, diag))
            _add_piece(pieces, (i, i), piece.tocsr())
    return _assemble(layout, pieces)


def loss_generator(n_qubits: int, gamma1: float, gamma2: float) -> Tuple[BlockLayout, sparse.csr_matrix]:
    """Уравнение для потерь в двух плечах; блоки нумеруются числом оставшихся фотонов 2S"""
    layout = BlockLayout([(n_qubits - k) / 2.0 for k in range(n_qubits + 1)])
    pieces: dict = {}
    for i, spin in enumerate(layout.spins):
        dim = layout.dims[i]
        idx = np.arange(dim)
        n1 = sparse.diags(idx.astype(float))
        n2 = sparse.diags((dim - 1 - idx).astype(float))
        identity = sparse.identity(dim)
        damping = -0.5 * (
            gamma1 * (sparse.kron(n1, identity) + sparse.kron(identity, n1))
            + gamma2 * (sparse.kron(n2, identity) + sparse.kron(identity, n2))
        )
        _add_piece(pieces, (i, i), damping.tocsr())
        if i == 0:
            continue
        # a1: |S+1/2, m+1/2> -> sqrt(S+m+1) |S, m>, a2: |S+1/2, m-1/2> -> sqrt(S-m+1) |S, m>
        j1 = sparse.csr_matrix((np.sqrt(idx + 1.0), (idx, idx + 1)), shape=(dim, dim + 1))
        j2 = sparse.csr_matrix((np.sqrt(dim - idx.astype(float)), (idx, idx)), shape=(dim, dim + 1))
        gain = gamma1 * sparse.kron(j1, j1) + gamma2 * sparse.kron(j2, j2)
        _add_piece(pieces, (i, i - 1), gain.tocsr())
    return layout, _assemble(layout, pieces)


def rk4_propagate(generator: sparse.spmatrix, vector: np.ndarray, steps: int) -> np.ndarray:
    h = 1.0 / steps
    y = vector.copy()
    for _ in range(steps):
        k1 = generator @ y
        k2 = generator @ (y + 0.5 * h * k1)
        k3 = generator @ (y + 0.5 * h * k2)
        k4 = generator @ (y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def integrate_generator(
    generator: sparse.spmatrix,
    vector: np.ndarray,
    exponent: float,
    steps: Optional[int] = None,
) -> np.ndarray:
    """
    Интегрирование d(rho)/dt = G rho на t in [0, 1] методом Рунге-Кутты 4-го порядка.
    Показатель на шаг exponent/steps не должен превышать settings.max_step_exponent.
    В конце выполняется проверка Ричардсона (steps против steps/2).
    """
    if exponent == 0.0:
        return vector.copy()
    if steps is None:
        by_exponent = math.ceil(exponent / settings.max_step_exponent)
        by_norm = math.ceil(float(sparse_norm(generator, 1)) / 0.1)
        steps = max(by_exponent, by_norm, 2)
    elif steps < 1 or exponent / steps > settings.max_step_exponent * (1 + 1e-12):
        raise InputValidationError(
            f"Показатель на шаг {exponent / max(steps, 1):.3e} превышает {settings.max_step_exponent:.1e}"
        )

    fine = rk4_propagate(generator, vector, steps)
    if steps >= 2:
        coarse = rk4_propagate(generator, vector, steps // 2)
        error = float(np.max(np.abs(fine - coarse))) / 15.0
        if error > settings.rk4_richardson_tolerance:
            raise ConvergenceError(f"Оценка погрешности интегратора {error:.3e} превышает допуск")
    logger.debug(f"Интегрирование завершено: {steps} шагов, размерность {vector.size}")
    return fine


def dephasing_kernel(dim: int, Gamma0: float) -> np.ndarray:
    idx = np.arange(dim)
    return np.exp(-0.5 * Gamma0 * np.subtract.outer(idx, idx) ** 2)


def collective_dephase(rho: SymmetricDensityMatrix, Gamma0: float) -> SymmetricDensityMatrix:
    """Точная коллективная дефазировка: rho_mm' * exp(-Gamma0 (m - m')^2 / 2)"""
    _check_rates(Gamma0=Gamma0)
    matrix = rho.matrix * dephasing_kernel(rho.n_qubits + 1, Gamma0)
    return SymmetricDensityMatrix(n_qubits=rho.n_qubits, matrix=matrix)


def dephase_blocks(state: BlockedDensityMatrix, Gamma0: float) -> BlockedDensityMatrix:
    _check_rates(Gamma0=Gamma0)
    blocks = [
        block.model_copy(update={"matrix": block.matrix * dephasing_kernel(block.matrix.shape[0], Gamma0)})
        for block in state.blocks
    ]
    return BlockedDensityMatrix(n_qubits=state.n_qubits, blocks=blocks)


def _blocks_from_vector(
    layout: BlockLayout, vector: np.ndarray, by_photons: bool = False, n_qubits: int = 0
) -> List[DensityBlock]:
    blocks = []
    for spin, matrix in layout.unpack(vector).items():
        matrix = hermitize(matrix)
        weight = float(np.trace(matrix).real)
        if weight <= 0.0:
            continue
        update = {}
        if by_photons:
            update["lost_total"] = int(round(n_qubits - 2 * spin))
        blocks.append(DensityBlock(spin=spin, weight=weight, matrix=matrix / weight, **update))
    return blocks


def evolve_collective_relax_excite(
    rho: SymmetricDensityMatrix,
    Gamma_minus: float,
    Gamma_plus: float,
    steps: Optional[int] = None,
) -> SymmetricDensityMatrix:
    """Коллективные релаксация (S^-) и возбуждение (S^+), опорный интегратор РК4"""
    _check_rates(Gamma_minus=Gamma_minus, Gamma_plus=Gamma_plus)
    exponent = Gamma_minus + Gamma_plus
    if exponent == 0.0:
        return rho
    layout = BlockLayout([rho.n_qubits / 2.0])
    generator = collective_exchange_generator(layout, Gamma_minus, Gamma_plus)
    vector = integrate_generator(generator, rho.matrix.reshape(-1).astype(complex), exponent, steps)
    matrix = hermitize(vector.reshape(rho.matrix.shape))
    return SymmetricDensityMatrix(n_qubits=rho.n_qubits, matrix=matrix)


def evolve_individual(
    state: BlockedDensityMatrix,
    gamma0: float,
    gamma_minus: float,
    gamma_plus: float,
    steps: Optional[int] = None,
    Gamma_minus: float = 0.0,
    Gamma_plus: float = 0.0,
) -> BlockedDensityMatrix:
    """
    Индивидуальные дефазировка, релаксация и возбуждение (опционально вместе
    с коллективным обменом) на блочном представлении, опорный интегратор РК4.
    """
    _check_rates(gamma0=gamma0, gamma_minus=gamma_minus, gamma_plus=gamma_plus,
                 Gamma_minus=Gamma_minus, Gamma_plus=Gamma_plus)
    n = state.n_qubits
    layout = BlockLayout(spin_values(n))
    matrices: Dict[float, np.ndarray] = {}
    for block in state.blocks:
        if block.lost is not None or block.lost_total is not None:
            raise InputValidationError("Индивидуальный канал применяется только к блокам по спину")
        if block.spin > n / 2.0 + 1e-9 or abs((n / 2.0 - block.spin) - round(n / 2.0 - block.spin)) > 1e-9:
            raise InputValidationError(f"Блок со спином S={block.spin} несовместим с N={n}")
        matrices[block.spin] = matrices.get(block.spin, 0) + block.weight * block.matrix
    vector = layout.pack(matrices)

    exponent = gamma0 + gamma_minus + gamma_plus + Gamma_minus + Gamma_plus
    generator = individual_generator(n, layout, gamma0, gamma_minus, gamma_plus)
    if Gamma_minus or Gamma_plus:
        generator = generator + collective_exchange_generator(layout, Gamma_minus, Gamma_plus)
    vector = integrate_generator(generator, vector, exponent, steps)
    return BlockedDensityMatrix(n_qubits=n, blocks=_blocks_from_vector(layout, vector))


def loss_branches(
    amplitudes: np.ndarray, gamma1: float, gamma2: float
) -> List[Tuple[int, int, float, np.ndarray]]:
    """
    Ветви Крауса (l1, l2): ненормированные чистые состояния оставшихся фотонов.
    n1 = S + m фотонов в измерительном плече, n2 = S - m в опорном.
    """
    n = amplitudes.size - 1
    eta1, eta2 = math.exp(-gamma1), math.exp(-gamma2)
    n1 = np.arange(n + 1)
    n2 = n - n1
    branches = []
    for l1 in range(n + 1):
        for l2 in range(n + 1 - l1):
            valid = (n1 >= l1) & (n2 >= l2)
            if not np.any(valid):
                continue
            k1, k2 = n1[valid], n2[valid]
            log_amp = 0.5 * (
                gammaln(k1 + 1) - gammaln(l1 + 1) - gammaln(k1 - l1 + 1)
                + xlogy(k1 - l1, eta1) + xlogy(l1, 1.0 - eta1)
                + gammaln(k2 + 1) - gammaln(l2 + 1) - gammaln(k2 - l2 + 1)
                + xlogy(k2 - l2, eta2) + xlogy(l2, 1.0 - eta2)
            )
            # индекс в оставшемся пространстве: n1 - l1
            phi = np.zeros(n - l1 - l2 + 1, dtype=complex)
            phi[k1 - l1] = amplitudes[valid] * np.exp(log_amp)
            weight = float(np.vdot(phi, phi).real)
            if weight > 0.0:
                branches.append((l1, l2, weight, phi))
    return branches


def apply_two_mode_loss(probe: ProbeState, gamma1: float, gamma2: float) -> BlockedDensityMatrix:
    """Разложение по ветвям (l1, l2) потерянных фотонов с биномиальными амплитудами Крауса"""
    _check_rates(gamma1=gamma1, gamma2=gamma2)
    blocks = []
    for l1, l2, weight, phi in loss_branches(probe.amplitudes, gamma1, gamma2):
        spin = (probe.n_qubits - l1 - l2) / 2.0
        blocks.append(
            DensityBlock(spin=spin, weight=weight, matrix=np.outer(phi, phi.conj()) / weight, lost=(l1, l2))
        )
    return BlockedDensityMatrix(n_qubits=probe.n_qubits, blocks=blocks)


def merge_by_photon_number(state: BlockedDensityMatrix) -> BlockedDensityMatrix:
    """Объединение ветвей с одинаковым числом оставшихся фотонов (наблюдаемо только N_d)"""
    merged: Dict[int, np.ndarray] = {}
    for block in state.blocks:
        key = int(round(2 * block.spin))
        merged[key] = merged.get(key, 0) + block.weight * block.matrix
    blocks = []
    for key in sorted(merged, reverse=True):
        matrix = hermitize(np.asarray(merged[key], dtype=complex))
        weight = float(np.trace(matrix).real)
        if weight > 0.0:
            blocks.append(
                DensityBlock(spin=key / 2.0, weight=weight, matrix=matrix / weight,
                             lost_total=state.n_qubits - key)
            )
    return BlockedDensityMatrix(n_qubits=state.n_qubits, blocks=blocks)


def integrate_loss_master_equation(
    probe: ProbeState, gamma1: float, gamma2: float, steps: Optional[int] = None
) -> BlockedDensityMatrix:
    """Прямое интегрирование уравнения потерь; используется для сверки с ветвями Крауса"""
    _check_rates(gamma1=gamma1, gamma2=gamma2)
    layout, generator = loss_generator(probe.n_qubits, gamma1, gamma2)
    psi = probe.amplitudes
    vector = layout.pack({probe.n_qubits / 2.0: np.outer(psi, psi.conj())})
    vector = integrate_generator(generator, vector, gamma1 + gamma2, steps)
    blocks = _blocks_from_vector(layout, vector, by_photons=True, n_qubits=probe.n_qubits)
    return BlockedDensityMatrix(n_qubits=probe.n_qubits, blocks=blocks)


def loss_rate_conversion(gamma: float, n_qubits: int) -> Tuple[float, float]:
    """r = N (e^gamma - 1), пропускание e^-gamma = N / (N + r)"""
    _check_rates(gamma=gamma)
    if n_qubits < 1:
        raise DomainError(f"Число кубитов должно быть положительным, получено {n_qubits}")
    return n_qubits * math.expm1(gamma), math.exp(-gamma)


def gamma_from_loss_parameter(r: float, n_qubits: int) -> float:
    _check_rates(r=r)
    return math.log1p(r / n_qubits)


class LinearChannel:
    """
    Точный канал для фиксированных N и показателей шума.
    Для каждого смещения k = m - m' заранее вычисляется отображение
    входной k-диагонали чистого состояния в выходные k-диагонали всех блоков.
    """

    def __init__(self, noise: NoiseParams, n_qubits: int, kind: Optional[ChannelKind] = None):
        validate_noise(noise, kind)
        self.noise = noise
        self.n_qubits = n_qubits
        self._transfers: List[np.ndarray] = []
        self._indices: List[Tuple[np.ndarray, np.ndarray]] = []
        self.layout: Optional[BlockLayout] = None

        if noise.has_loss:
            self.mode = "loss"
        elif noise.has_individual or noise.has_collective_exchange:
            self.mode = "generator"
            self._build_transfers()
        else:
            self.mode = "dephasing"
        logger.debug(f"Канал N={n_qubits} построен в режиме {self.mode}")

    def _build_transfers(self) -> None:
        n = self.n_qubits
        noise = self.noise
        spins = spin_values(n) if noise.has_individual else [n / 2.0]
        self.layout = BlockLayout(spins)
        generator = individual_generator(n, self.layout, noise.gamma0, noise.gamma_minus, noise.gamma_plus)
        generator = (generator + collective_exchange_generator(
            self.layout, noise.Gamma_minus, noise.Gamma_plus)).tocsr()
        for k in range(n + 1):
            idx = self.layout.diagonal_indices(k)
            sub = generator[idx][:, idx].tocsc()
            columns = np.eye(len(idx), n + 1 - k)
            transfer = expm_multiply(sub, columns) * math.exp(-0.5 * noise.Gamma0 * k * k)
            self._transfers.append(np.asarray(transfer))
            self._indices.append((idx, self.layout.diagonal_indices(-k)))

    def output_matrices(self, psi: np.ndarray) -> List[Tuple[float, np.ndarray]]:
        """Выходные блоки в виде (спин, Q), tr Q = вероятность блока"""
        n = self.n_qubits
        if self.mode == "dephasing":
            return [(n / 2.0, np.outer(psi, psi.conj()) * dephasing_kernel(n + 1, self.noise.Gamma0))]
        if self.mode == "loss":
            merged: Dict[int, np.ndarray] = {}
            for l1, l2, _, phi in loss_branches(psi, self.noise.gamma1, self.noise.gamma2):
                key = n - l1 - l2
                merged[key] = merged.get(key, 0) + np.outer(phi, phi.conj())
            return [
                (key / 2.0, merged[key] * dephasing_kernel(key + 1, self.noise.Gamma0))
                for key in sorted(merged, reverse=True)
            ]
        vector = np.zeros(self.layout.size, dtype=complex)
        for k, (transfer, (idx, idx_conj)) in enumerate(zip(self._transfers, self._indices)):
            diagonal = psi[k:] * psi[: n + 1 - k].conj()
            values = transfer @ diagonal
            vector[idx] = values
            if k:
                vector[idx_conj] = values.conj()
        return [(spin, hermitize(matrix)) for spin, matrix in self.layout.unpack(vector).items()]

    def apply(self, probe: ProbeState) -> BlockedDensityMatrix:
        if probe.n_qubits != self.n_qubits:
            raise InputValidationError(
                f"Канал построен для N={self.n_qubits}, получено состояние с N={probe.n_qubits}"
            )
        blocks = []
        for spin, matrix in self.output_matrices(probe.amplitudes):
            weight = float(np.trace(matrix).real)
            if weight <= 0.0:
                continue
            extra = {"lost_total": int(round(self.n_qubits - 2 * spin))} if self.mode == "loss" else {}
            blocks.append(DensityBlock(spin=spin, weight=weight, matrix=matrix / weight, **extra))
        return BlockedDensityMatrix(n_qubits=self.n_qubits, blocks=blocks)


def apply_channel(probe: ProbeState, noise: NoiseParams, kind: Optional[ChannelKind] = None) -> BlockedDensityMatrix:
    return LinearChannel(noise, probe.n_qubits, kind).apply(probe)


def drift_diffusion_at(x: float, y: float, rates: NoiseParams, n_qubits: int) -> DriftDiffusion:
    """
    Коэффициенты сноса, диффузии и поглощения в непрерывном пределе x = m/N, y = S/N.
    Поля rates трактуются как скорости по theta.
    """
    if not abs(x) < y <= 0.5 + 1e-12:
        raise DomainError(f"Требуется |x| < y <= 1/2, получено x={x}, y={y}")
    n = float(n_qubits)
    g0, gm, gp = rates.gamma0, rates.gamma_minus, rates.gamma_plus
    g1, g2 = rates.gamma1, rates.gamma2
    gap = y * y - x * x

    v_x = -(0.5 + x) * gm + (0.5 - x) * gp
    v_y = (
        -gap / (2 * y) * g0
        - (y * y + x * (1 + x)) / (2 * y) * gm
        - (y * y - x * (1 - x)) / (2 * y) * gp
    )
    # потери: d(y +- x)/dtheta = -gamma_{1,2} (y +- x)
    v_x += -0.5 * (g1 * (y + x) - g2 * (y - x))
    v_y += -0.5 * (g1 * (y + x) + g2 * (y - x))

    d_xx = ((0.5 + x) * gm + (0.5 - x) * gp) / n
    d_xy = ((y * y + x * (1 + x)) / (2 * y) * gm - (y * y - x * (1 - x)) / (2 * y) * gp) / n
    d_yy = (
        gap / (4 * y * y) * g0
        + ((y * y + x * x) / (4 * y * y) + x) * gm
        + ((y * y + x * x) / (4 * y * y) - x) * gp
    ) / n

    absorption = n * (g0 + gm + gp) / (4 * gap) + n / 4.0 * (g1 / (y + x) + g2 / (y - x))
    return DriftDiffusion(v_x=v_x, v_y=v_y, D_xx=d_xx, D_xy=d_xy, D_yy=d_yy, absorption=absorption)


def induced_potential(x: float, noise: NoiseParams, n_qubits: int, y: float = 0.5) -> float:
    """
    Наведенная дефазировка, проинтегрированная вдоль траектории сноса из точки (x, y).
    Показатели шума распределены равномерно по theta in [0, 1].
    """

    def rhs(_, state):
        coefficients = drift_diffusion_at(state[0], state[1], noise, n_qubits)
        return [coefficients.v_x, coefficients.v_y, coefficients.absorption]

    solution = solve_ivp(rhs, (0.0, 1.0), [x, y, 0.0], method="DOP853", rtol=1e-10, atol=1e-12)
    if not solution.success:
        raise ConvergenceError(f"Интегрирование траектории не удалось: {solution.message}")
    return float(solution.y[2, -1])
