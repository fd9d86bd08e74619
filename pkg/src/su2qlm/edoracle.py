"""Exact diagonalization of the constrained chain on small lattices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import (
    ModelParams,
    build_density_operators,
    build_meson_operator,
    build_two_site_gate,
    enumerate_site_basis,
    site_kind,
)

MAX_SITES = 8
DENSE_LIMIT = 2000


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class SectorBasis:
    """Product configurations (one site label per row) obeying every constraint."""

    L: int
    N_M: int
    configs: np.ndarray

    @property
    def dim(self):
        return len(self.configs)

    def index(self):
        return {tuple(c): i for i, c in enumerate(self.configs.tolist())}


def enumerate_sector_basis(L, N_M, cap=MAX_SITES) -> SectorBasis:
    """Depth-first enumeration in lexicographic label order."""
    if L > cap:
        raise OracleError(f"L={L} exceeds the exact-diagonalization cap {cap}")
    bases = [enumerate_site_basis(site_kind(j, L)) for j in range(L)]
    out = []

    def visit(j, ell, q, prefix):
        if q > N_M:
            return
        if j == L:
            if q == N_M:
                out.append(prefix)
            return
        b = bases[j]
        for p in range(b.dim):
            if b.n_R[p] != 2 - ell:
                continue
            visit(j + 1, int(b.n_L[p]), q + int(b.n_M[p]), prefix + [p])

    visit(0, 2, 0, [])
    configs = np.array(out, dtype=np.int64).reshape(len(out), L)
    return SectorBasis(L, N_M, configs)


def _encode(configs, dims):
    code = np.zeros(len(configs), dtype=np.int64)
    for j, d in enumerate(dims):
        code = code * d + configs[:, j]
    return code


def _two_site_operator(basis: SectorBasis, matrix, site, dims):
    """Embed an operator on sites ``(site, site+1)`` (indexed ``p1 * d2 + p2``)."""
    configs = basis.configs
    codes = _encode(configs, dims)
    order = np.argsort(codes)
    sorted_codes = codes[order]
    d2 = dims[site + 1]
    pair = configs[:, site] * d2 + configs[:, site + 1]
    M = sp.coo_matrix(matrix)
    rows, cols, vals = [], [], []
    for r, c, v in zip(M.row, M.col, M.data):
        src = np.nonzero(pair == c)[0]
        if len(src) == 0:
            continue
        new = configs[src].copy()
        new[:, site] = r // d2
        new[:, site + 1] = r % d2
        new_codes = _encode(new, dims)
        pos = np.searchsorted(sorted_codes, new_codes)
        pos = np.minimum(pos, len(sorted_codes) - 1)
        ok = sorted_codes[pos] == new_codes
        rows.append(order[pos[ok]])
        cols.append(src[ok])
        vals.append(np.full(ok.sum(), v))
    if not rows:
        return sp.csr_matrix((basis.dim, basis.dim))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(basis.dim, basis.dim),
    )


def product_operator(basis: SectorBasis, factors):
    """Embed ``prod_j factors[j]`` (single-site gauge-basis matrices keyed by site).

    Only products that stay inside the sector are meaningful; components
    leaving it are dropped.  Site operators are even, so no string signs arise.
    """
    L = basis.L
    dims = [enumerate_site_basis(site_kind(j, L)).dim for j in range(L)]
    src = np.arange(basis.dim)
    new = basis.configs.copy()
    val = np.ones(basis.dim)
    for site, op in sorted(factors.items()):
        M = sp.coo_matrix(np.asarray(op))
        parts = []
        for r, c, v in zip(M.row, M.col, M.data):
            hit = new[:, site] == c
            moved = new[hit].copy()
            moved[:, site] = r
            parts.append((src[hit], moved, val[hit] * v))
        if not parts:
            return sp.csr_matrix((basis.dim, basis.dim))
        src = np.concatenate([p[0] for p in parts])
        new = np.concatenate([p[1] for p in parts])
        val = np.concatenate([p[2] for p in parts])
    codes = _encode(basis.configs, dims)
    order = np.argsort(codes)
    sorted_codes = codes[order]
    new_codes = _encode(new, dims)
    pos = np.minimum(np.searchsorted(sorted_codes, new_codes), len(sorted_codes) - 1)
    ok = sorted_codes[pos] == new_codes
    return sp.csr_matrix((val[ok], (order[pos[ok]], src[ok])), shape=(basis.dim, basis.dim))


def build_hamiltonian(params: ModelParams, basis: SectorBasis):
    """Sparse symmetric Hamiltonian assembled from the model's bond gates."""
    if basis.dim == 0:
        raise OracleError("empty sector")
    dims = [enumerate_site_basis(site_kind(j, params.L)).dim for j in range(params.L)]
    H = sp.csr_matrix((basis.dim, basis.dim))
    for b in range(params.L - 1):
        H = H + _two_site_operator(basis, build_two_site_gate(params, b).matrix, b, dims)
    H = H.tocsr()
    H.sum_duplicates()
    H.eliminate_zeros()
    return H


def site_operator(basis: SectorBasis, op, site):
    """Embed a single-site operator given in the gauge basis of ``site``."""
    return product_operator(basis, {site: op})


def lowest_eigenpair(h, k=1):
    """The ``k`` lowest eigenpairs; dense below ``DENSE_LIMIT``, Lanczos above."""
    dim = h.shape[0]
    if dim < 1:
        raise OracleError("empty Hamiltonian")
    k = min(k, dim)
    if dim < DENSE_LIMIT:
        dense = h.toarray() if sp.issparse(h) else np.asarray(h, dtype=float)
        w, v = sla.eigh(dense, subset_by_index=[0, k - 1])
    else:
        w, v = spla.eigsh(h, k=k, which="SA", tol=0)
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    residual = np.linalg.norm(h @ v - v * w, axis=0)
    if np.any(residual > 1e-10 * max(1.0, np.abs(w).max())):
        raise OracleError(f"eigensolver residual too large: {residual.max():.3g}")
    return w, v


def ed_expectation(vector, observable):
    vector = np.asarray(vector)
    if observable.shape != (len(vector), len(vector)):
        raise ValueError("observable and vector shapes differ")
    return float(vector @ (observable @ vector))


def ground_state(params: ModelParams, k=1):
    basis = enumerate_sector_basis(params.L, params.N_M)
    H = build_hamiltonian(params, basis)
    w, v = lowest_eigenpair(H, k)
    return basis, H, w, v


def density_profile(basis: SectorBasis, vector):
    L = basis.L
    ops = [build_density_operators(site_kind(j, L))["M"] for j in range(L)]
    return np.array([ed_expectation(vector, site_operator(basis, ops[j], j)) for j in range(L)])


def meson_correlations(basis: SectorBasis, vector):
    """``<sigma^-_i sigma^+_j>`` matrix for ``i != j``."""
    L = basis.L
    ops = [build_meson_operator(site_kind(j, L)) for j in range(L)]
    out = np.zeros((L, L))
    for i in range(L):
        for j in range(L):
            if i != j:
                op = product_operator(basis, {i: ops[i][0], j: ops[j][1]})
                out[i, j] = ed_expectation(vector, op)
    return out


def density_correlations(basis: SectorBasis, vector):
    L = basis.L
    ops = [site_operator(basis, build_density_operators(site_kind(j, L))["M"], j) for j in range(L)]
    return np.array([[ed_expectation(vector, ops[i] @ ops[j]) for j in range(L)] for i in range(L)])


def entropy_profile(basis: SectorBasis, vector):
    """Bipartite entropies from the reduced density matrix of sites ``0..l``."""
    L = basis.L
    configs = basis.configs
    out = []
    for cut in range(1, L):
        left = {}
        right = {}
        rows, cols = [], []
        for c in configs.tolist():
            rows.append(left.setdefault(tuple(c[:cut]), len(left)))
            cols.append(right.setdefault(tuple(c[cut:]), len(right)))
        M = np.zeros((len(left), len(right)))
        M[rows, cols] = vector
        s = sla.svdvals(M)
        p = s**2
        p = p[p > 1e-300]
        out.append(float(-np.sum(p * np.log(p))))
    return np.array(out)
