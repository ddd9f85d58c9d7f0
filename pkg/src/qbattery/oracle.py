"""Brute-force reference built from Pauli matrices on the full 2^N space.

Nothing here shares code with the collective or sector engines: the
Hamiltonian is assembled from Kronecker products, the block reachable from
the initial product state is found by graph search, and that block is
diagonalised densely.  Site 0 is the leftmost tensor factor, so the battery
occupies the leading factors and a state reshapes to (2^n_b, 2^n_c).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from .model import CouplingTable
from .results import DynamicsResult, average_power

MAX_SITES = 16

_SP = sp.csr_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]))  # |1><0|
_SM = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))  # |0><1|
_N = sp.csr_matrix(np.array([[0.0, 0.0], [0.0, 1.0]]))
_I = sp.identity(2, format="csr")


def site_operator(op, site: int, n: int) -> sp.csr_matrix:
    out = sp.identity(1, format="csr")
    for k in range(n):
        out = sp.kron(out, op if k == site else _I, format="csr")
    return out


def pauli_hamiltonian(table: CouplingTable) -> sp.csr_matrix:
    n = table.n
    if n > MAX_SITES:
        raise ValueError(f"brute force is limited to {MAX_SITES} sites")
    dim = 2**n
    h = sp.csr_matrix((dim, dim))
    raise_ops = [site_operator(_SP, k, n) for k in range(n)]
    for m in range(n):
        if table.v[m]:
            h = h + table.v[m] * site_operator(_N, m, n)
        for q in range(m + 1, n):
            if table.j[m, q]:
                hop = raise_ops[m] @ raise_ops[q].T
                h = h + table.j[m, q] * (hop + hop.T)
    return h.tocsr()


def initial_state(table: CouplingTable) -> np.ndarray:
    down = np.array([1.0, 0.0])
    up = np.array([0.0, 1.0])
    psi = np.ones(1)
    for k in range(table.n):
        psi = np.kron(psi, down if k < table.n_b else up)
    return psi.astype(complex)


def brute_force_dynamics(table: CouplingTable, times) -> DynamicsResult:
    """Exact observables from dense diagonalisation of the reachable block."""
    times = np.asarray(times, dtype=float)
    h = pauli_hamiltonian(table)
    psi0 = initial_state(table)
    start = int(np.argmax(np.abs(psi0)))
    block = np.sort(breadth_first_order(h, start, directed=False, return_predecessors=False))
    hb = h[block][:, block].toarray()
    w, u = np.linalg.eigh(hb)
    coef = u.T @ psi0[block]
    occ_ops = [site_operator(_N, k, table.n).diagonal() for k in range(table.n)]
    n_b, n_c = table.n_b, table.n_c
    k_max = min(n_b, n_c)
    out = {k: np.empty(times.size) for k in ("e_b", "nb", "nc", "s", "e", "norm")}
    for i, t in enumerate(times):
        psi = np.zeros(2**table.n, dtype=complex)
        psi[block] = u @ (np.exp(-1j * w * t) * coef)
        p = np.abs(psi) ** 2
        occ = np.array([p @ d for d in occ_ops])
        out["e_b"][i] = occ[:n_b] @ table.v[:n_b]
        out["nb"][i] = occ[:n_b].sum()
        out["nc"][i] = occ[n_b:].sum()
        out["norm"][i] = p.sum()
        out["e"][i] = np.vdot(psi, h @ psi).real
        sv = np.linalg.svd(psi.reshape(2**n_b, 2**n_c), compute_uv=False) ** 2
        sv = sv[sv > 0]
        out["s"][i] = max(0.0, float(-(sv @ np.log(sv))))
    s_ref = float(np.log(k_max + 1))
    return DynamicsResult(
        t=times,
        e_b=out["e_b"],
        p_b=average_power(times, out["e_b"]),
        eta_b=out["nb"] / k_max,
        s_vn=out["s"],
        s_vn_norm=out["s"] / s_ref,
        e_total=out["e"],
        norm=out["norm"],
        n_battery=out["nb"],
        n_charger=out["nc"],
        n_exc=n_c,
        meta={"engine": "brute-force", "block_dim": int(block.size)},
    )
