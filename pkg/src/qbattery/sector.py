"""Dynamics of the general (disordered) model in a fixed-excitation sector.

Basis states are bit configurations with ``n_exc`` set bits, in ascending
integer order.  Bit m is qubit m, so the battery (sites 0 .. n_b-1) sits in
the low-order bits and a configuration splits as ``charger << n_b | battery``.
Positions in the basis come from the combinatorial number system
(rank = sum_i C(p_i, i+1) over set bit positions p_1 < p_2 < ...), which for
a fixed popcount coincides with ascending integer order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator

import numpy as np
import scipy.sparse as sp

from .errors import SectorTooLargeError
from .krylov import LanczosPropagator
from .model import CouplingTable, TimeGrid, make_initial_sector
from .results import DynamicsResult, average_power
from .trajectory import Trajectory

MAX_DIM = 2**24
MAX_NNZ = 2**26


@lru_cache(maxsize=None)
def binomial_table(n: int) -> np.ndarray:
    """C[a, b] = binomial(a, b) for 0 <= a, b <= n (int64)."""
    if n > 62:
        raise ValueError("bit configurations are limited to 62 sites")
    table = np.zeros((n + 2, n + 2), dtype=np.int64)
    for a in range(n + 2):
        for b in range(a + 1):
            table[a, b] = math.comb(a, b)
    table.setflags(write=False)
    return table


def rank_configs(configs, n: int) -> np.ndarray:
    """Position of each configuration among those with the same popcount."""
    configs = np.asarray(configs, dtype=np.int64)
    C = binomial_table(n)
    rank = np.zeros(configs.shape, dtype=np.int64)
    count = np.zeros(configs.shape, dtype=np.int64)
    for pos in range(n):
        bit = (configs >> pos) & 1
        count += bit
        rank += bit * C[pos, count]
    return rank


def unrank_configs(ranks, n: int, k: int) -> np.ndarray:
    """Inverse of :func:`rank_configs` for popcount ``k``."""
    C = binomial_table(n)
    r = np.array(ranks, dtype=np.int64)
    if np.any(r < 0) or np.any(r >= C[n, k]):
        raise ValueError("rank out of range")
    out = np.zeros(r.shape, dtype=np.int64)
    left = np.full(r.shape, k, dtype=np.int64)
    for pos in range(n - 1, -1, -1):
        c = C[pos, left]
        take = (left > 0) & (c <= r)
        out |= take.astype(np.int64) << pos
        r -= np.where(take, c, 0)
        left -= take
    return out


def popcount(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    count = np.zeros(x.shape, dtype=np.int64)
    while np.any(x):
        count += x & 1
        x = x >> 1
    return count


class SectorBasis:
    def __init__(self, n: int, n_exc: int):
        if not 0 <= n_exc <= n:
            raise ValueError(f"n_exc must lie in [0, {n}], got {n_exc}")
        self.n = int(n)
        self.n_exc = int(n_exc)
        self.dim = int(math.comb(n, n_exc))
        self._configs = None

    @property
    def configs(self) -> np.ndarray:
        if self._configs is None:
            c = unrank_configs(np.arange(self.dim), self.n, self.n_exc)
            c.setflags(write=False)
            self._configs = c
        return self._configs

    def index(self, config):
        cfg = np.asarray(config, dtype=np.int64)
        if np.any(popcount(cfg) != self.n_exc) or np.any(cfg >> self.n):
            raise KeyError(f"configuration not in the {self.n_exc}-excitation sector")
        r = rank_configs(cfg, self.n)
        return int(r) if r.ndim == 0 else r

    def __len__(self) -> int:
        return self.dim


@dataclass(frozen=True, eq=False)
class SectorState:
    basis: SectorBasis
    amps: np.ndarray

    def norm_squared(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)


class _Structure:
    """Coupling-independent part of a sector Hamiltonian.

    Holds the basis bits and, on first use, the CSR sparsity pattern of the
    hopping term with the unordered-pair id of every entry.  Cached per
    (n, n_exc) so noise realizations only redo the values.
    """

    def __init__(self, n: int, n_exc: int):
        self.basis = SectorBasis(n, n_exc)
        configs = self.basis.configs
        self.bits = ((configs[:, None] >> np.arange(n)) & 1).astype(np.float64)
        iu = np.triu_indices(n, k=1)
        pid = np.full((n, n), -1, dtype=np.int32)
        pid[iu] = np.arange(iu[0].size, dtype=np.int32)
        pid.T[iu] = pid[iu]
        self.pair_lookup = pid
        self.nnz = self.basis.dim * n_exc * (n - n_exc)
        self._pattern = None

    def pattern(self):
        """(indptr, indices, pair_id) of the hopping term in CSR order."""
        if self._pattern is not None:
            return self._pattern
        n, dim = self.basis.n, self.basis.dim
        configs = self.basis.configs
        rows, cols, ids = [], [], []
        for m in range(n):
            for q in range(n):
                if m == q:
                    continue
                src = np.nonzero((self.bits[:, m] == 1) & (self.bits[:, q] == 0))[0]
                tgt = rank_configs(configs[src] ^ ((1 << m) | (1 << q)), n)
                rows.append(tgt.astype(np.int32))
                cols.append(src.astype(np.int32))
                ids.append(np.full(src.size, self.pair_lookup[m, q], dtype=np.int32))
        rows = np.concatenate(rows) if rows else np.zeros(0, np.int32)
        cols = np.concatenate(cols) if cols else np.zeros(0, np.int32)
        ids = np.concatenate(ids) if ids else np.zeros(0, np.int32)
        # sorted column indices within each row make the matvec faster
        order = np.lexsort((cols, rows))
        index_type = np.int32 if self.nnz < 2**31 else np.int64
        indptr = np.zeros(dim + 1, dtype=index_type)
        np.cumsum(np.bincount(rows, minlength=dim), out=indptr[1:])
        self._pattern = (indptr, cols[order], ids[order])
        return self._pattern


@lru_cache(maxsize=4)
def _structure(n: int, n_exc: int) -> _Structure:
    return _Structure(n, n_exc)


def _part_hamiltonian(v: np.ndarray, j: np.ndarray, k: int) -> np.ndarray:
    """Dense H of an isolated part (potentials ``v``, couplings ``j``) with ``k`` excitations."""
    n = v.size
    basis = SectorBasis(n, k)
    configs = basis.configs
    bits = (configs[:, None] >> np.arange(n)) & 1
    h = np.diag(bits @ v).astype(float)
    for m in range(n):
        for q in range(m + 1, n):
            if j[m, q] == 0:
                continue
            src = np.nonzero((bits[:, m] == 1) & (bits[:, q] == 0))[0]
            tgt = rank_configs(configs[src] ^ ((1 << m) | (1 << q)), n)
            h[tgt, src] += j[m, q]
            h[src, tgt] += j[m, q]
    return h


def _lowering(j_row: np.ndarray, k: int) -> sp.csr_matrix:
    """sum_q j_row[q] sigma^-_q from k to k - 1 excitations on len(j_row) sites."""
    n = j_row.size
    configs = SectorBasis(n, k).configs
    rows, cols, data = [], [], []
    for q in range(n):
        if j_row[q] == 0:
            continue
        src = np.nonzero((configs >> q) & 1)[0]
        rows.append(rank_configs(configs[src] ^ (1 << q), n))
        cols.append(src)
        data.append(np.full(src.size, j_row[q]))
    shape = (math.comb(n, k - 1), configs.size)
    if not rows:
        return sp.csr_matrix(shape)
    return sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=shape)


class _BlockOperator:
    """H acting on the battery-count blocks of a sector vector.

    Block b is the matrix M[charger rank, battery rank] of amplitudes with b
    battery excitations.  Intra-part terms act as dense products,
    C M + M A; each battery site i couples block b to b + 1 through
    sigma^+_i (a column scatter) and a sparse charger lowering operator.
    """

    def __init__(self, table: CouplingTable, n_exc: int):
        n_b, n_c, n = table.n_b, table.n_c, table.n
        self.blocks = {}
        for b in range(max(0, n_exc - n_c), min(n_b, n_exc) + 1):
            c = n_exc - b
            bat = SectorBasis(n_b, b).configs
            chg = SectorBasis(n_c, c).configs
            perm = rank_configs((chg[:, None] << n_b) | bat[None, :], n)
            a = _part_hamiltonian(table.v[:n_b], table.j[:n_b, :n_b], b)
            ch = _part_hamiltonian(table.v[n_b:], table.j[n_b:, n_b:], c)
            self.blocks[b] = (perm, ch, a)
        self.cross = []
        for b in self.blocks:
            if b + 1 not in self.blocks:
                continue
            c = n_exc - b
            bat = SectorBasis(n_b, b).configs
            for i in range(n_b):
                low = _lowering(table.j[i, n_b:], c)
                if low.nnz == 0:
                    continue
                src = np.nonzero(((bat >> i) & 1) == 0)[0]
                tgt = rank_configs(bat[src] | (1 << i), n_b)
                self.cross.append((b, src, tgt, low, low.T.tocsr()))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        m = {b: x[perm] for b, (perm, _, _) in self.blocks.items()}
        out = {b: _left(ch, m[b]) + _left(a, m[b].T).T for b, (_, ch, a) in self.blocks.items()}
        for b, src, tgt, low, raise_ in self.cross:
            # sigma^+_i (x) L moves weight from block b to b + 1, and back
            out[b + 1][:, tgt] += _left(low, m[b][:, src])
            out[b][:, src] += _left(raise_, m[b + 1][:, tgt])
        y = np.empty_like(x)
        for b, (perm, _, _) in self.blocks.items():
            y[perm] = out[b]
        return y


def _left(op, mat: np.ndarray) -> np.ndarray:
    """Real ``op`` (dense or sparse) times complex ``mat`` as one real product."""
    mat = np.ascontiguousarray(mat)
    rows, cols = mat.shape
    res = op @ mat.view(np.float64).reshape(rows, 2 * cols)
    return np.ascontiguousarray(res).view(complex)


BLOCK_MIN_DIM = 2000
BLOCK_MAX_SIDE = 2048


def _block_side(table: CouplingTable, n_exc: int) -> int:
    return max(
        max(math.comb(table.n_b, b), math.comb(table.n_c, n_exc - b))
        for b in range(max(0, n_exc - table.n_c), min(table.n_b, n_exc) + 1)
    )


class SparseHamiltonian:
    """Diagonal potential energy plus the pair-hopping term of one table.

    ``mode`` picks the matvec: ``csr`` stores every hop, ``block`` uses the
    battery x charger block form, ``free`` regenerates hops on the fly.
    """

    def __init__(self, structure: _Structure, table: CouplingTable, mode: str = "csr"):
        if mode not in ("csr", "block", "free"):
            raise ValueError(f"unknown matvec mode {mode!r}")
        self._s = structure
        self.table = table
        self.basis = structure.basis
        self.mode = mode
        self.diagonal = structure.bits @ table.v
        iu = np.triu_indices(table.n, k=1)
        self._pair_j = table.j[iu]
        self._hopping = None
        self._block = _BlockOperator(table, self.basis.n_exc) if mode == "block" else None
        if mode == "csr":
            self._hopping = self._build_csr()

    def _build_csr(self) -> sp.csr_matrix:
        indptr, indices, pair_id = self._s.pattern()
        dim = self.basis.dim
        return sp.csr_matrix((self._pair_j[pair_id], indices, indptr), shape=(dim, dim))

    @property
    def hopping(self) -> sp.csr_matrix:
        """Hopping term as a CSR matrix (built on first use outside ``csr`` mode)."""
        if self._hopping is None:
            self._hopping = self._build_csr()
        return self._hopping

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def matrix_free(self) -> bool:
        return self.mode == "free"

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=complex)
        if self._block is not None:
            return self._block.matvec(x)
        y = self.diagonal * x
        if self.mode == "csr":
            # two real products beat one complex or two-column product
            y += self._hopping @ np.ascontiguousarray(x.real)
            y += 1j * (self._hopping @ np.ascontiguousarray(x.imag))
        else:
            self._matvec_free(x, y)
        return y

    def _matvec_free(self, x, y):
        s = self._s
        configs = self.basis.configs
        n = self.table.n
        for m in range(n):
            for q in range(n):
                if m == q:
                    continue
                jmq = self._pair_j[s.pair_lookup[m, q]]
                if jmq == 0.0:
                    continue
                src = np.nonzero((s.bits[:, m] == 1) & (s.bits[:, q] == 0))[0]
                tgt = rank_configs(configs[src] ^ ((1 << m) | (1 << q)), n)
                y[tgt] += jmq * x[src]

    def hop_list(self):
        """(source index, target index, amplitude) triples of the hopping term."""
        coo = self.hopping.tocoo()
        return coo.col, coo.row, coo.data

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diagonal) + self.hopping.toarray()


def _choose_mode(table: CouplingTable, n_exc: int, dim: int, max_nnz: int) -> str:
    if dim >= BLOCK_MIN_DIM and 0 < n_exc and _block_side(table, n_exc) <= BLOCK_MAX_SIDE:
        return "block"
    nnz = dim * n_exc * (table.n - n_exc)
    return "csr" if nnz <= max_nnz else "free"


def build_sector(
    table: CouplingTable,
    n_exc: int,
    max_dim: int = MAX_DIM,
    max_nnz: int = MAX_NNZ,
    mode: str = "auto",
) -> tuple[SectorBasis, SparseHamiltonian]:
    """Basis and Hamiltonian of the ``n_exc``-excitation sector.

    ``auto`` uses the block matvec for large sectors whose blocks fit in
    memory, stored hops up to ``max_nnz`` otherwise, and regenerated hops
    beyond that.  Above ``max_dim`` basis states it refuses.
    """
    if not 0 <= n_exc <= table.n:
        raise ValueError(f"n_exc must lie in [0, {table.n}]")
    dim = math.comb(table.n, n_exc)
    if dim > max_dim:
        raise SectorTooLargeError(f"sector dimension {dim} exceeds the cap {max_dim}")
    if mode == "auto":
        mode = _choose_mode(table, n_exc, dim, max_nnz)
    h = SparseHamiltonian(_structure(table.n, int(n_exc)), table, mode)
    return h.basis, h


def _times(grid) -> np.ndarray:
    return grid.times if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)


def iter_lanczos_propagate(
    state0: SectorState, h: SparseHamiltonian, grid, krylov_dim: int = 30, tol: float = 1e-10
) -> Iterator[SectorState]:
    prop = LanczosPropagator(h.matvec, krylov_dim=krylov_dim, tol=tol)
    for amps in prop.evolve(state0.amps, _times(grid)):
        yield SectorState(basis=state0.basis, amps=amps)


def lanczos_propagate(state0, h, grid, krylov_dim: int = 30, tol: float = 1e-10):
    if state0.amps.shape != (h.dim,):
        raise ValueError("state and Hamiltonian dimensions differ")
    return list(iter_lanczos_propagate(state0, h, grid, krylov_dim, tol))


class _Bipartition:
    """Index maps that cut a sector vector into battery x charger blocks."""

    def __init__(self, basis: SectorBasis, n_b: int):
        n_c = basis.n - n_b
        configs = basis.configs
        bat = configs & ((1 << n_b) - 1)
        chg = configs >> n_b
        nb_exc = popcount(bat)
        self.blocks = []
        for b in range(max(0, basis.n_exc - n_c), min(n_b, basis.n_exc) + 1):
            idx = np.nonzero(nb_exc == b)[0]
            rows = rank_configs(bat[idx], n_b)
            cols = rank_configs(chg[idx], n_c)
            shape = (math.comb(n_b, b), math.comb(n_c, basis.n_exc - b))
            self.blocks.append((idx, rows, cols, shape))
        self.max_rank = sum(min(shape) for *_, shape in self.blocks)

    def schmidt_weights(self, amps: np.ndarray) -> np.ndarray:
        out = []
        for idx, rows, cols, shape in self.blocks:
            if min(shape) == 1:
                out.append(np.array([np.vdot(amps[idx], amps[idx]).real]))
                continue
            m = np.zeros(shape, dtype=complex)
            m[rows, cols] = amps[idx]
            out.append(np.linalg.svd(m, compute_uv=False) ** 2)
        return np.concatenate(out)


@lru_cache(maxsize=4)
def _bipartition(n: int, n_exc: int, n_b: int) -> _Bipartition:
    return _Bipartition(SectorBasis(n, n_exc), n_b)


def entanglement_entropy(state: SectorState, n_b: int) -> float:
    """Von Neumann entropy of the first ``n_b`` sites."""
    lam = _bipartition(state.basis.n, state.basis.n_exc, n_b).schmidt_weights(state.amps)
    lam = lam[lam > 0]
    return max(0.0, float(-(lam @ np.log(lam))))


def sector_observables(
    states: Iterable,
    table: CouplingTable,
    grid,
    h: SparseHamiltonian | None = None,
    entropy: bool = True,
    energy: bool = True,
) -> DynamicsResult:
    """Observables of sector states; ``states`` may be SectorState or bare vectors.

    ``entropy=False`` and ``energy=False`` skip the Schmidt decomposition and
    the <H> matvec; the skipped columns are NaN.
    """
    times = _times(grid)
    n_exc = table.n_c
    if h is None:
        _, h = build_sector(table, n_exc)
    bits = h._s.bits
    n_b = table.n_b
    k_max = min(table.n_b, table.n_c)
    cut = _bipartition(table.n, n_exc, n_b) if entropy else None
    n = times.size
    e_b, n_bat, n_chg, norm, e_tot, s_vn = (np.empty(n) for _ in range(6))
    count = 0
    for i, st in enumerate(states):
        amps = st.amps if isinstance(st, SectorState) else st
        p = amps.real**2 + amps.imag**2
        occ = p @ bits
        norm[i] = p.sum()
        n_bat[i] = occ[:n_b].sum()
        n_chg[i] = occ[n_b:].sum()
        e_b[i] = occ[:n_b] @ table.v[:n_b]
        e_tot[i] = np.vdot(amps, h.matvec(amps)).real if energy else np.nan
        if cut is not None:
            lam = cut.schmidt_weights(amps)
            lam = lam[lam > 0]
            s_vn[i] = max(0.0, float(-(lam @ np.log(lam))))
        else:
            s_vn[i] = np.nan
        count += 1
    if count != n:
        raise ValueError(f"got {count} states for {n} sample times")
    s_norm_ref = float(np.log(k_max + 1))
    uniform = table.is_uniform()
    # off the symmetric subspace the Schmidt rank can exceed k_max + 1
    s_max = s_norm_ref if uniform else float(np.log(cut.max_rank)) if cut else None
    spread = np.sqrt(max(0.0, _energy_variance(table)))
    return DynamicsResult(
        t=np.array(times),
        e_b=e_b,
        p_b=average_power(times, e_b),
        eta_b=n_bat / k_max,
        s_vn=s_vn,
        s_vn_norm=s_vn / s_norm_ref,
        e_total=e_tot,
        norm=norm,
        n_battery=n_bat,
        n_charger=n_chg,
        n_exc=n_exc,
        s_max=s_max,
        energy_scale=spread,
        meta={"engine": "full", "n": table.n, "n_b": table.n_b, "uniform": uniform},
    )


def _energy_variance(table: CouplingTable) -> float:
    # the initial product state's energy variance is the summed squared
    # battery-charger couplings
    return float(np.sum(table.j[: table.n_b, table.n_b :] ** 2))


class SectorEngine:
    name = "full"

    def __init__(
        self,
        table: CouplingTable,
        krylov_dim: int = 30,
        tol: float = 1e-10,
        entropy: bool = True,
        max_dim: int = MAX_DIM,
        max_nnz: int = MAX_NNZ,
        mode: str = "auto",
    ):
        self.table = table
        self.krylov_dim = krylov_dim
        self.tol = tol
        self.entropy = entropy
        self.basis, self.h = build_sector(table, table.n_c, max_dim, max_nnz, mode)
        self.psi0 = make_initial_sector(table).amps
        self.n_matvec = 0

    def _advance(self, psi, t_from, times):
        prop = LanczosPropagator(self.h.matvec, krylov_dim=self.krylov_dim, tol=self.tol)
        try:
            yield from prop.evolve(psi, times, t0=t_from)
        finally:
            self.n_matvec += prop.n_matvec

    def _observe(self, states, times, light=False):
        res = sector_observables(
            states, self.table, times, h=self.h, entropy=self.entropy and not light, energy=not light
        )
        res.meta.update(method="lanczos", krylov_dim=self.krylov_dim, tol=self.tol)
        return res

    def run(self, grid) -> Trajectory:
        return Trajectory(self._advance, self._observe, self.psi0, _times(grid))
