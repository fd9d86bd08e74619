"""Gauge-invariant local basis and Hamiltonian terms of the SU(2) quantum link model.

Every composite site carries six fermionic modes in the fixed order
``(R_up, R_dn, M_up, M_dn, L_up, L_dn)``: the right rishon of the link to the
left, the matter field, and the left rishon of the link to the right.  Boundary
sites drop the uncoupled rishon pair (``R`` at the left end, ``L`` at the right
end), which is equivalent to fixing its occupation to zero.

All Hamiltonian matrix elements are obtained by projecting explicit fermionic
operators onto the singlet (Gauss law) subspace, so signs follow from the mode
order alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property, lru_cache
from itertools import product as iproduct

import numpy as np
import scipy.sparse as sp

from . import fock

MODES = ("R_up", "R_dn", "M_up", "M_dn", "L_up", "L_dn")
GROUPS = ("R", "M", "L")
INV_SQRT2 = 1.0 / math.sqrt(2.0)


class SiteKind(str, Enum):
    LEFT = "left"
    BULK = "bulk"
    RIGHT = "right"


ACTIVE_GROUPS = {
    SiteKind.LEFT: ("M", "L"),
    SiteKind.BULK: ("R", "M", "L"),
    SiteKind.RIGHT: ("R", "M"),
}


def site_kind(site, L):
    if site == 0:
        return SiteKind.LEFT
    if site == L - 1:
        return SiteKind.RIGHT
    return SiteKind.BULK


@dataclass(frozen=True)
class ModelParams:
    """Couplings and sector of one simulation.

    ``g1`` fixes the energy unit; ``eps`` is the determinant-breaking strength.
    """

    t: float
    L: int
    N_M: int
    g1: float = 1.0
    eps: float = 5.0

    def __post_init__(self):
        for name in ("t", "g1", "eps"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.g1 <= 0:
            raise ValueError("g1 must be positive")
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"L must be an integer >= 2, got {self.L}")
        if int(self.N_M) != self.N_M or not 0 <= self.N_M <= 2 * self.L:
            raise ValueError(f"N_M must be an integer in [0, 2L], got {self.N_M}")

    @property
    def f_M(self):
        return self.N_M / self.L


@dataclass(frozen=True)
class GaugeState:
    """A Gauss-law singlet of the site modes.

    ``amplitudes`` pairs six-entry occupation tuples (mode order as ``MODES``)
    with real coefficients.
    """

    label: int
    charges: tuple[int, int, int]
    amplitudes: tuple[tuple[tuple[int, ...], float], ...]

    @property
    def n_R(self):
        return self.charges[0]

    @property
    def n_M(self):
        return self.charges[1]

    @property
    def n_L(self):
        return self.charges[2]


@dataclass(frozen=True)
class GaugeSiteBasis:
    kind: SiteKind
    states: tuple[GaugeState, ...]

    @property
    def dim(self):
        return len(self.states)

    @cached_property
    def n_R(self):
        return np.array([s.n_R for s in self.states])

    @cached_property
    def n_M(self):
        return np.array([s.n_M for s in self.states])

    @cached_property
    def n_L(self):
        return np.array([s.n_L for s in self.states])

    @cached_property
    def active_modes(self):
        """Indices into ``MODES`` of the modes present on this site kind."""
        return tuple(i for i, m in enumerate(MODES) if m[0] in ACTIVE_GROUPS[self.kind])

    @property
    def n_active(self):
        return len(self.active_modes)

    @cached_property
    def embedding(self):
        """Dense ``(2**n_active, dim)`` isometry from the gauge basis into Fock space."""
        E = np.zeros((1 << self.n_active, self.dim))
        for col, state in enumerate(self.states):
            for config, amp in state.amplitudes:
                E[fock.config_index(config[m] for m in self.active_modes), col] = amp
        return E

    def index(self, charges):
        for s in self.states:
            if s.charges == tuple(charges):
                return s.label
        raise KeyError(charges)


def _group_occupation(n, spin_first):
    if n == 0:
        return (0, 0)
    if n == 2:
        return (1, 1)
    return (1, 0) if spin_first else (0, 1)


@lru_cache(maxsize=None)
def enumerate_site_basis(kind) -> GaugeSiteBasis:
    """All Gauss-law singlets of a site, ordered by ``(n_R, n_M, n_L)``.

    Each charge triple hosts at most one singlet: either no group is singly
    occupied, or exactly two are, and those two form ``(up,dn - dn,up)/sqrt2``.
    """
    kind = SiteKind(kind)
    active = ACTIVE_GROUPS[kind]
    states = []
    for charges in iproduct(range(3), repeat=3):
        if any(n and g not in active for n, g in zip(charges, GROUPS)):
            continue
        singles = [i for i, n in enumerate(charges) if n == 1]
        if len(singles) == 0:
            occ = sum((_group_occupation(n, True) for n in charges), ())
            amplitudes = ((occ, 1.0),)
        elif len(singles) == 2:
            a, b = singles
            terms = []
            for first_up, amp in ((True, INV_SQRT2), (False, -INV_SQRT2)):
                occ = []
                for i, n in enumerate(charges):
                    up = first_up if i == a else (not first_up)
                    occ.extend(_group_occupation(n, up))
                terms.append((tuple(occ), amp))
            amplitudes = tuple(sorted(terms, reverse=True))
        else:
            continue
        states.append(GaugeState(len(states), charges, amplitudes))
    return GaugeSiteBasis(kind, tuple(states))


def _site_operators(kind):
    """Annihilators of the active modes of one site, keyed by mode name."""
    basis = enumerate_site_basis(kind)
    cs = fock.annihilators(basis.n_active)
    return {MODES[m]: c for m, c in zip(basis.active_modes, cs)}


_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]]),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _spin_generators(ops, groups):
    """``sum_groups 1/2 sum_{ss'} sigma_{ss'} c^dag_s c_s'`` for each direction."""
    out = []
    for mu in "xyz":
        sigma = _PAULI[mu]
        J = None
        for g in groups:
            c = (ops[g + "_up"], ops[g + "_dn"])
            for s, sp_ in iproduct(range(2), repeat=2):
                if sigma[s, sp_] == 0:
                    continue
                term = 0.5 * sigma[s, sp_] * (c[s].T @ c[sp_])
                J = term if J is None else J + term
        out.append(sp.csr_matrix(J, dtype=complex))
    return tuple(out)


@lru_cache(maxsize=None)
def build_gauss_generators(kind):
    """``(J_x, J_y, J_z)`` of one site on its active-mode Fock space."""
    kind = SiteKind(kind)
    return _spin_generators(_site_operators(kind), ACTIVE_GROUPS[kind])


def _project(basis, op):
    E = basis.embedding
    return E.T @ (op @ E)


@lru_cache(maxsize=None)
def build_density_operators(kind):
    """Diagonal occupation operators in the gauge basis.

    Keys: ``"M"``, ``"R"``, ``"L"`` (totals) and spin-resolved ``"R_up"`` etc.
    Inactive rishons give identically zero diagonals.
    """
    kind = SiteKind(kind)
    basis = enumerate_site_basis(kind)
    ops = _site_operators(kind)
    out = {}
    for mode in MODES:
        if mode in ops:
            out[mode] = _project(basis, fock.number(ops[mode]))
        else:
            out[mode] = np.zeros((basis.dim, basis.dim))
    for g in GROUPS:
        out[g] = out[g + "_up"] + out[g + "_dn"]
    return out


@lru_cache(maxsize=None)
def build_meson_operator(kind):
    """Return ``(sigma_minus, sigma_plus)`` with ``sigma_minus = c_{M,dn} c_{M,up}``."""
    kind = SiteKind(kind)
    ops = _site_operators(kind)
    lower = _project(enumerate_site_basis(kind), fock.product(ops["M_dn"], ops["M_up"]))
    return lower, lower.T.copy()


def site_free_term(ops, g1):
    """``g1^2 sum_{tau in R,L} (n_up + n_dn - 2 n_up n_dn)`` over the active rishons."""
    dim = next(iter(ops.values())).shape[0]
    H = sp.csr_matrix((dim, dim))
    for g in ("R", "L"):
        if g + "_up" not in ops:
            continue
        nu = fock.number(ops[g + "_up"])
        nd = fock.number(ops[g + "_dn"])
        H = H + g1**2 * (nu + nd - 2 * (nu @ nd))
    return H.tocsr()


def pair_operators(left_kind, right_kind):
    """Annihilators on the joint Fock space of two neighbouring sites.

    Returns two dicts (left site, right site) keyed by mode name; the left
    site's modes precede the right site's in the Jordan-Wigner order.
    """
    lb = enumerate_site_basis(left_kind)
    rb = enumerate_site_basis(right_kind)
    cs = fock.annihilators(lb.n_active + rb.n_active)
    left = {MODES[m]: cs[i] for i, m in enumerate(lb.active_modes)}
    right = {MODES[m]: cs[lb.n_active + i] for i, m in enumerate(rb.active_modes)}
    return left, right


def bond_fock_hamiltonian(t, g1, eps, left_kind, right_kind, left_weight, right_weight):
    """Fermionic bond Hamiltonian on the two-site Fock space (sparse, real).

    Coupling and determinant-breaking terms of the link plus weighted on-site
    free-field terms of both sites.
    """
    cl, cr = pair_operators(left_kind, right_kind)
    H = left_weight * site_free_term(cl, g1) + right_weight * site_free_term(cr, g1)
    hop = None
    for s, s2 in iproduct(("up", "dn"), repeat=2):
        term = fock.product(cl["M_" + s].T, cl["L_" + s], cr["R_" + s2].T, cr["M_" + s2])
        hop = term if hop is None else hop + term
    H = H + t * (hop + hop.T)
    pair = fock.product(cl["L_up"].T, cl["L_dn"].T, cr["R_dn"], cr["R_up"])
    H = H + eps * (pair + pair.T)
    return H.tocsr()


def pair_gauss_generators(left_kind, right_kind):
    """Per-site ``(J_x, J_y, J_z)`` on the joint Fock space of two neighbours."""
    cl, cr = pair_operators(left_kind, right_kind)
    return (
        _spin_generators(cl, ACTIVE_GROUPS[SiteKind(left_kind)]),
        _spin_generators(cr, ACTIVE_GROUPS[SiteKind(right_kind)]),
    )


def site_weight(site, L):
    """Share of a site's free-field term carried by each adjacent bond."""
    return 1.0 if site in (0, L - 1) else 0.5


@dataclass(eq=False)
class TwoSiteGate:
    """Real operator on ``basis(j) x basis(j+1)``, supported on the link sector.

    ``matrix`` is indexed by ``p1 * right.dim + p2``.  Rows and columns that
    violate ``n_L(p1) + n_R(p2) = 2`` are zero.  The same container holds bond
    Hamiltonians and their imaginary-time propagators.
    """

    left: GaugeSiteBasis
    right: GaugeSiteBasis
    matrix: np.ndarray
    bond: int | None = None
    _blocks: dict | None = field(default=None, repr=False)

    @property
    def blocks(self):
        """``{(n_R(p1), n_L(p2), n_M(p1)+n_M(p2)): (pairs, submatrix)}``.

        ``pairs`` is an ``(n, 2)`` integer array of ``(p1, p2)`` in sorted order.
        """
        if self._blocks is None:
            self._blocks = _gate_blocks(self.left, self.right, self.matrix)
        return self._blocks

    def map_blocks(self, fn):
        """New gate with ``fn(key, submatrix)`` applied to every block."""
        matrix = np.zeros_like(self.matrix)
        blocks = {}
        d2 = self.right.dim
        for key, (pairs, sub) in self.blocks.items():
            new = fn(key, sub)
            flat = pairs[:, 0] * d2 + pairs[:, 1]
            matrix[np.ix_(flat, flat)] = new
            blocks[key] = (pairs, new)
        return TwoSiteGate(self.left, self.right, matrix, self.bond, blocks)


def link_pairs(left, right):
    return [
        (p1, p2)
        for p1 in range(left.dim)
        for p2 in range(right.dim)
        if left.n_L[p1] + right.n_R[p2] == 2
    ]


def _gate_blocks(left, right, matrix):
    groups = {}
    for p1, p2 in link_pairs(left, right):
        key = (int(left.n_R[p1]), int(right.n_L[p2]), int(left.n_M[p1] + right.n_M[p2]))
        groups.setdefault(key, []).append((p1, p2))
    out = {}
    for key in sorted(groups):
        pairs = np.array(groups[key], dtype=np.int64)
        flat = pairs[:, 0] * right.dim + pairs[:, 1]
        out[key] = (pairs, matrix[np.ix_(flat, flat)].copy())
    return out


@lru_cache(maxsize=256)
def _cached_gate(t, g1, eps, left_kind, right_kind, left_weight, right_weight):
    left = enumerate_site_basis(left_kind)
    right = enumerate_site_basis(right_kind)
    H = bond_fock_hamiltonian(t, g1, eps, left_kind, right_kind, left_weight, right_weight)
    E = np.kron(left.embedding, right.embedding)
    G = E.T @ (H @ E)
    mask = np.zeros(left.dim * right.dim, dtype=bool)
    for p1, p2 in link_pairs(left, right):
        mask[p1 * right.dim + p2] = True
    G[~mask, :] = 0.0
    G[:, ~mask] = 0.0
    G = 0.5 * (G + G.T)
    G[np.abs(G) < 1e-15] = 0.0
    G.setflags(write=False)
    return G


def build_two_site_gate(params: ModelParams, bond: int) -> TwoSiteGate:
    """Bond Hamiltonian between sites ``bond`` and ``bond + 1`` (0-based).

    Contains the hopping and determinant-breaking terms of the link and the
    free-field terms of both sites, each site's share weighted by
    :func:`site_weight` so that summing all bonds reproduces the full
    Hamiltonian.
    """
    L = params.L
    if not 0 <= bond <= L - 2:
        raise ValueError(f"bond must be in [0, {L - 2}], got {bond}")
    lk, rk = site_kind(bond, L), site_kind(bond + 1, L)
    G = _cached_gate(
        float(params.t),
        float(params.g1),
        float(params.eps),
        lk,
        rk,
        site_weight(bond, L),
        site_weight(bond + 1, L),
    )
    return TwoSiteGate(enumerate_site_basis(lk), enumerate_site_basis(rk), np.array(G), bond)


def chain_fock_space(L):
    """Annihilators for a whole chain, concatenating each site's active modes.

    Returns a list (one dict per site) of operators on the ``2**n`` chain space.
    Only practical for ``L <= 3``.
    """
    kinds = [site_kind(j, L) for j in range(L)]
    bases = [enumerate_site_basis(k) for k in kinds]
    n = sum(b.n_active for b in bases)
    cs = fock.annihilators(n)
    out, offset = [], 0
    for b in bases:
        out.append({MODES[m]: cs[offset + i] for i, m in enumerate(b.active_modes)})
        offset += b.n_active
    return out


def chain_fock_hamiltonian(params: ModelParams):
    """Full Hamiltonian on the chain Fock space, built from fermionic operators."""
    L = params.L
    sites = chain_fock_space(L)
    dim = next(iter(sites[0].values())).shape[0]
    H = sp.csr_matrix((dim, dim))
    for j in range(L):
        H = H + site_free_term(sites[j], params.g1)
    for j in range(L - 1):
        cl, cr = sites[j], sites[j + 1]
        hop = None
        for s, s2 in iproduct(("up", "dn"), repeat=2):
            term = fock.product(cl["M_" + s].T, cl["L_" + s], cr["R_" + s2].T, cr["M_" + s2])
            hop = term if hop is None else hop + term
        pair = fock.product(cl["L_up"].T, cl["L_dn"].T, cr["R_dn"], cr["R_up"])
        H = H + params.t * (hop + hop.T) + params.eps * (pair + pair.T)
    return H.tocsr()


def chain_gauss_generators(L):
    """Per-site ``(J_x, J_y, J_z)`` on the chain Fock space."""
    sites = chain_fock_space(L)
    return [
        _spin_generators(ops, ACTIVE_GROUPS[site_kind(j, L)]) for j, ops in enumerate(sites)
    ]


def chain_embedding(configs, L):
    """Sparse isometry from product gauge configurations into the chain Fock space.

    ``configs`` is an ``(n, L)`` array of basis labels.  Site amplitudes multiply
    without extra signs because every basis state has even fermion parity.
    """
    bases = [enumerate_site_basis(site_kind(j, L)) for j in range(L)]
    widths = [b.n_active for b in bases]
    n_modes = sum(widths)
    rows, cols, vals = [], [], []
    for col, config in enumerate(np.asarray(configs)):
        parts = []
        for b, p in zip(bases, config):
            parts.append(
                [(tuple(c[m] for m in b.active_modes), a) for c, a in b.states[p].amplitudes]
            )
        for combo in iproduct(*parts):
            occ = sum((c for c, _ in combo), ())
            rows.append(fock.config_index(occ))
            cols.append(col)
            vals.append(math.prod(a for _, a in combo))
    return sp.csr_matrix((vals, (rows, cols)), shape=(1 << n_modes, len(configs)))
