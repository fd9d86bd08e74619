"""Symmetric open-boundary MPS over gauge-invariant sites."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .model import (
    ModelParams,
    TwoSiteGate,
    build_density_operators,
    build_meson_operator,
    enumerate_site_basis,
    site_kind,
)
from .symtensor import (
    BlockTensor,
    TwoSiteBlock,
    absorb_left,
    absorb_right,
    contract_bond,
    isometrize,
    right_label,
    scale_left,
    scale_right,
    split_truncate,
)

SCHMIDT_FLOOR = 1e-14


class SectorError(ValueError):
    """Requested ``N_M`` sector holds no gauge-invariant state."""


def site_bases(L):
    return [enumerate_site_basis(site_kind(j, L)) for j in range(L)]


class SymmetricMPS:
    """Open-boundary MPS with ``(q, ell)`` bond labels and a tracked orthogonality center.

    Tensors left of ``center`` are left isometries, tensors right of it are right
    isometries.  The leftmost bond carries the single label ``(0, 2)`` and the
    rightmost ``(N_M, 0)``.
    """

    def __init__(self, params: ModelParams, tensors, center):
        self.params = params
        self.tensors = list(tensors)
        self.center = center

    @property
    def L(self):
        return self.params.L

    @property
    def N_M(self):
        return self.params.N_M

    @property
    def bases(self):
        return [t.basis for t in self.tensors]

    def copy(self):
        return SymmetricMPS(self.params, [t.copy() for t in self.tensors], self.center)

    def bond_dims(self):
        return [sum(t.right_space.values()) for t in self.tensors[:-1]]

    def move_center(self, site):
        if not 0 <= site < self.L:
            raise IndexError(site)
        while self.center < site:
            c = self.center
            A, R = isometrize(self.tensors[c], "left")
            self.tensors[c] = A
            self.tensors[c + 1] = absorb_left(R, self.tensors[c + 1])
            self.center += 1
        while self.center > site:
            c = self.center
            B, R = isometrize(self.tensors[c], "right")
            self.tensors[c] = B
            self.tensors[c - 1] = absorb_right(self.tensors[c - 1], R)
            self.center -= 1

    def canonicalize(self, center=0):
        """Re-establish the mixed canonical form around ``center``."""
        self.center = self.L - 1
        self.move_center(0)
        self.center = 0
        self.move_center(center)
        self.normalize()

    def norm(self):
        return self.tensors[self.center].norm()

    def normalize(self):
        n = self.norm()
        c = self.tensors[self.center]
        self.tensors[self.center] = BlockTensor(c.basis, {k: v / n for k, v in c.blocks.items()})
        return n

    def amplitude(self, config):
        """Coefficient of the product configuration ``config`` (one label per site)."""
        label = (0, 2)
        vec = np.ones((1, 1))
        for tensor, p in zip(self.tensors, config):
            r = right_label(tensor.basis, label, int(p))
            if r is None or (label, int(p), r) not in tensor.blocks:
                return 0.0
            vec = vec @ tensor.blocks[(label, int(p), r)]
            label = r
        if label != (self.N_M, 0):
            return 0.0
        return float(vec[0, 0])

    def to_vector(self, configs):
        return np.array([self.amplitude(c) for c in configs])

    def check_structure(self):
        for t in self.tensors:
            t.check_selection_rules()
        assert set(self.tensors[0].left_space) == {(0, 2)}
        assert set(self.tensors[-1].right_space) == {(self.N_M, 0)}


def product_state(params: ModelParams, config) -> SymmetricMPS:
    """Bond-dimension-one MPS of a single product configuration."""
    bases = site_bases(params.L)
    tensors = []
    label = (0, 2)
    for basis, p in zip(bases, config):
        r = right_label(basis, label, int(p))
        if r is None:
            raise SectorError(f"configuration {tuple(config)} violates the link constraint")
        tensors.append(BlockTensor(basis, {(label, int(p), r): np.ones((1, 1))}))
        label = r
    if label != (params.N_M, 0):
        raise SectorError(f"configuration {tuple(config)} is not in the N_M={params.N_M} sector")
    return SymmetricMPS(params, tensors, 0)


def from_amplitudes(params: ModelParams, configs, amplitudes) -> SymmetricMPS:
    """Exact MPS of ``sum_k amplitudes[k] |configs[k]>``, canonicalized and normalized.

    Every configuration gets its own index inside each bond label it passes
    through, so the construction is exact before compression.
    """
    configs = [tuple(int(p) for p in c) for c in configs]
    amplitudes = np.asarray(amplitudes, dtype=float)
    if len(configs) != len(amplitudes) or not np.any(amplitudes):
        raise ValueError("need matching configurations and a nonzero amplitude vector")
    bases = site_bases(params.L)
    paths = []
    for c in configs:
        labels = [(0, 2)]
        for basis, p in zip(bases, c):
            r = right_label(basis, labels[-1], p)
            if r is None:
                raise SectorError(f"configuration {c} violates the link constraint")
            labels.append(r)
        if labels[-1] != (params.N_M, 0):
            raise SectorError(f"configuration {c} is not in the N_M={params.N_M} sector")
        paths.append(labels)
    # slot of configuration k on each inner bond
    slots, degs = [], []
    for bond in range(1, params.L):
        count = defaultdict(int)
        row = []
        for labels in paths:
            row.append(count[labels[bond]])
            count[labels[bond]] += 1
        slots.append(row)
        degs.append(count)
    tensors = []
    for j, basis in enumerate(bases):
        blocks = {}
        for k, (c, labels) in enumerate(zip(configs, paths)):
            l, r = labels[j], labels[j + 1]
            dl = 1 if j == 0 else degs[j - 1][l]
            dr = 1 if j == params.L - 1 else degs[j][r]
            key = (l, c[j], r)
            b = blocks.setdefault(key, np.zeros((dl, dr)))
            a = 0 if j == 0 else slots[j - 1][k]
            z = 0 if j == params.L - 1 else slots[j][k]
            b[a, z] += amplitudes[k] if j == 0 else 1.0
        tensors.append(BlockTensor(basis, blocks))
    state = SymmetricMPS(params, tensors, 0)
    state.canonicalize(0)
    return state


def init_product_state(params: ModelParams, seed: int) -> SymmetricMPS:
    """Seeded random product state in the ``N_M`` sector.

    Mesons (``n_M = 2``) sit on ``N_M / 2`` random sites and every link holds
    its two rishons entirely on one side, chosen at random.  Odd ``N_M`` has no
    gauge-invariant states with these boundary conditions.
    """
    L, N = params.L, params.N_M
    if N % 2:
        raise SectorError(f"N_M={N} is odd; the constrained space of this sector is empty")
    rng = np.random.default_rng(seed)
    mesons = set(rng.choice(L, size=N // 2, replace=False).tolist())
    links = rng.integers(0, 2, size=L - 1) * 2
    bases = site_bases(L)
    config = []
    for j, basis in enumerate(bases):
        n_R = 0 if j == 0 else 2 - int(links[j - 1])
        n_L = 0 if j == L - 1 else int(links[j])
        config.append(basis.index((n_R, 2 if j in mesons else 0, n_L)))
    return product_state(params, config)


def _pair_lookup(gate: TwoSiteGate):
    lookup = getattr(gate, "_lookup", None)
    if lookup is None:
        lookup = {
            key: {(int(a), int(b)): i for i, (a, b) in enumerate(pairs)}
            for key, (pairs, _) in gate.blocks.items()
        }
        gate._lookup = lookup
    return lookup


def _group_outer(theta: TwoSiteBlock):
    groups = defaultdict(dict)
    for (l, p1, p2, r), b in theta.blocks.items():
        groups[(l, r)][(p1, p2)] = b
    return groups


def _gate_key(l, r):
    return (2 - l[1], r[1], r[0] - l[0])


def _check_gate(theta: TwoSiteBlock, gate: TwoSiteGate):
    if gate.left is not theta.left_basis and gate.left.kind != theta.left_basis.kind:
        raise ValueError("gate does not act on the site bases of this bond")
    if gate.right is not theta.right_basis and gate.right.kind != theta.right_basis.kind:
        raise ValueError("gate does not act on the site bases of this bond")


def apply_to_theta(theta: TwoSiteBlock, gate: TwoSiteGate) -> TwoSiteBlock:
    """Act with a two-site operator on a two-site block."""
    _check_gate(theta, gate)
    lookup = _pair_lookup(gate)
    out = {}
    for (l, r), members in sorted(_group_outer(theta).items()):
        key = _gate_key(l, r)
        pairs, M = gate.blocks[key]
        index = lookup[key]
        dl, dr = next(iter(members.values())).shape
        T = np.zeros((len(pairs), dl * dr))
        for pp, b in members.items():
            T[index[pp]] = b.ravel()
        T = M @ T
        for i, (p1, p2) in enumerate(pairs):
            if np.any(T[i]):
                out[(l, int(p1), int(p2), r)] = T[i].reshape(dl, dr)
    return TwoSiteBlock(theta.left_basis, theta.right_basis, out)


def theta_expectation(theta: TwoSiteBlock, gate: TwoSiteGate):
    """``(<theta|G|theta>, <theta|theta>)``."""
    _check_gate(theta, gate)
    lookup = _pair_lookup(gate)
    num = 0.0
    den = 0.0
    for (l, r), members in sorted(_group_outer(theta).items()):
        key = _gate_key(l, r)
        pairs, M = gate.blocks[key]
        index = lookup[key]
        dl, dr = next(iter(members.values())).shape
        T = np.zeros((len(pairs), dl * dr))
        for pp, b in members.items():
            T[index[pp]] = b.ravel()
        num += float(np.sum(T * (M @ T)))
        den += float(np.sum(T * T))
    return num, den


def apply_gate(state: SymmetricMPS, gate: TwoSiteGate, bond, chi_max, tol=1e-10, direction="right"):
    """Apply a two-site operator on ``bond`` and re-split with truncation.

    The center ends on ``bond + 1`` for ``direction="right"`` and on ``bond``
    otherwise.  The state is renormalized; returns the discarded weight.
    """
    if not 0 <= bond < state.L - 1:
        raise IndexError(bond)
    if state.center not in (bond, bond + 1):
        state.move_center(bond if state.center < bond else bond + 1)
    theta = contract_bond(state.tensors[bond], state.tensors[bond + 1])
    theta = apply_to_theta(theta, gate)
    A, S, B, weight = split_truncate(theta, chi_max, tol)
    if direction == "right":
        state.tensors[bond] = A
        state.tensors[bond + 1] = scale_left(S, B)
        state.center = bond + 1
    else:
        state.tensors[bond] = scale_right(A, S)
        state.tensors[bond + 1] = B
        state.center = bond
    _prune_outward(state, bond)
    return weight


def _prune_outward(state: SymmetricMPS, bond):
    """Drop neighbour blocks on bond labels that vanished from sites ``bond, bond+1``.

    Labels disappear when a gate maps their whole sector to zero or the
    truncation removes it; the pruned blocks carry no amplitude, and removing
    whole columns (rows) of an isometry keeps it isometric.
    """
    j = bond
    while j > 0:
        keep = state.tensors[j].left_space
        nb = state.tensors[j - 1]
        if nb.right_space.keys() == keep.keys():
            break
        state.tensors[j - 1] = BlockTensor(
            nb.basis, {k: b for k, b in nb.blocks.items() if k[2] in keep}
        )
        j -= 1
    j = bond + 1
    while j < state.L - 1:
        keep = state.tensors[j].right_space
        nb = state.tensors[j + 1]
        if nb.left_space.keys() == keep.keys():
            break
        state.tensors[j + 1] = BlockTensor(
            nb.basis, {k: b for k, b in nb.blocks.items() if k[0] in keep}
        )
        j += 1


@dataclass
class SchmidtData:
    bond: int
    spectrum: dict  # label -> descending singular values

    def values(self):
        return np.sort(np.concatenate([v for _, v in sorted(self.spectrum.items())]))[::-1]

    def entropy(self):
        p = self.values() ** 2
        p = p[p > 0]
        return float(-np.sum(p * np.log(p)))


def _identity_env(tensor: BlockTensor):
    return {(l, l): np.eye(d) for l, d in tensor.left_space.items()}


def _transfer(env, bra: BlockTensor, ket: BlockTensor, op=None):
    """Push a left environment through one site, optionally inserting ``op``."""
    out = {}
    bras = bra.by_left()
    kets = ket.by_left()
    for (lb, lk), E in sorted(env.items()):
        ket_blocks = kets.get(lk)
        bra_blocks = bras.get(lb)
        if not ket_blocks or not bra_blocks:
            continue
        for pk, rk, K in ket_blocks:
            EK = E @ K
            for pb, rb, Bb in bra_blocks:
                if op is None:
                    if pb != pk:
                        continue
                    coef = 1.0
                else:
                    coef = op[pb, pk]
                    if coef == 0.0:
                        continue
                val = coef * (Bb.T @ EK)
                key = (rb, rk)
                if key in out:
                    out[key] = out[key] + val
                else:
                    out[key] = val
    return out


def _close(env):
    return float(sum(np.trace(E) for (rb, rk), E in sorted(env.items()) if rb == rk))


class CanonicalView:
    """Frozen mixed-canonical data for measurements.

    Holds, for every site, the left isometry ``A``, right isometry ``B`` and the
    center tensor ``C`` such that ``A_0..A_{i-1} C_i B_{i+1}..B_{L-1}`` is the
    state, plus the bond residuals whose singular values are the Schmidt
    coefficients.
    """

    def __init__(self, state: SymmetricMPS):
        s = state.copy()
        s.move_center(0)
        L = s.L
        self.L = L
        self.bases = s.bases
        self.B = list(s.tensors)
        self.C, self.A, self.R = [], [], []
        for i in range(L):
            self.C.append(s.tensors[i])
            if i < L - 1:
                A, R = isometrize(s.tensors[i], "left")
                self.A.append(A)
                self.R.append(R)
                s.tensors[i + 1] = absorb_left(R, s.tensors[i + 1])
        self.norm2 = self.C[0].norm() ** 2

    def local(self, site, op):
        env = _transfer(_identity_env(self.C[site]), self.C[site], self.C[site], op)
        return _close(env) / self.norm2

    def correlator(self, op_a, site_a, op_b, site_b):
        if site_a == site_b:
            return self.local(site_a, op_a @ op_b)
        if site_a > site_b:
            op_a, site_a, op_b, site_b = op_b, site_b, op_a, site_a
        env = _transfer(_identity_env(self.C[site_a]), self.C[site_a], self.C[site_a], op_a)
        for j in range(site_a + 1, site_b):
            env = _transfer(env, self.B[j], self.B[j])
        return _close(_transfer(env, self.B[site_b], self.B[site_b], op_b)) / self.norm2

    def correlation_row(self, op_a, site_a, op_b):
        """``<op_a(site_a) op_b(j)>`` for every ``j > site_a`` in one pass."""
        ops_b = op_b if isinstance(op_b, (list, tuple)) else [op_b] * self.L
        out = {}
        env = _transfer(_identity_env(self.C[site_a]), self.C[site_a], self.C[site_a], op_a)
        for j in range(site_a + 1, self.L):
            out[j] = _close(_transfer(env, self.B[j], self.B[j], ops_b[j])) / self.norm2
            env = _transfer(env, self.B[j], self.B[j])
        return out

    def schmidt(self, bond):
        spectrum = {}
        norm = np.sqrt(self.norm2)
        for label, R in sorted(self.R[bond].items()):
            s = sla.svdvals(R) / norm
            s = s[s > SCHMIDT_FLOOR]
            if len(s):
                spectrum[label] = np.sort(s)[::-1]
        return SchmidtData(bond, spectrum)

    def bond_energy(self, bond, gate):
        theta = contract_bond(self.C[bond], self.B[bond + 1])
        num, den = theta_expectation(theta, gate)
        return num / den


def measure_local(state: SymmetricMPS, site, operator):
    if not 0 <= site < state.L:
        raise IndexError(site)
    return CanonicalView(state).local(site, np.asarray(operator))


def measure_correlator(state: SymmetricMPS, op_a, site_a, op_b, site_b):
    for s in (site_a, site_b):
        if not 0 <= s < state.L:
            raise IndexError(s)
    return CanonicalView(state).correlator(np.asarray(op_a), site_a, np.asarray(op_b), site_b)


def schmidt_spectrum(state: SymmetricMPS, bond) -> SchmidtData:
    if not 0 <= bond < state.L - 1:
        raise IndexError(bond)
    return CanonicalView(state).schmidt(bond)


def entropy_profile(state: SymmetricMPS, view: CanonicalView | None = None):
    """Von Neumann entropies (natural log) of the ``L - 1`` left blocks."""
    view = view or CanonicalView(state)
    return np.array([view.schmidt(b).entropy() for b in range(state.L - 1)])


def total_energy(state: SymmetricMPS, gates, view: CanonicalView | None = None):
    view = view or CanonicalView(state)
    return float(sum(view.bond_energy(b, g) for b, g in enumerate(gates)))


def density_profile(state: SymmetricMPS, view: CanonicalView | None = None):
    view = view or CanonicalView(state)
    return np.array(
        [view.local(j, build_density_operators(b.kind)["M"]) for j, b in enumerate(view.bases)]
    )


def density_correlations(state: SymmetricMPS, view: CanonicalView | None = None):
    """Matrix ``<n_M(i) n_M(j)>`` including the diagonal."""
    view = view or CanonicalView(state)
    ops = [build_density_operators(b.kind)["M"] for b in view.bases]
    L = state.L
    out = np.zeros((L, L))
    for i in range(L):
        out[i, i] = view.local(i, ops[i] @ ops[i])
        for j, v in view.correlation_row(ops[i], i, ops).items():
            out[i, j] = out[j, i] = v
    return out


def meson_correlations(state: SymmetricMPS, view: CanonicalView | None = None):
    """Matrix ``<sigma^-_i sigma^+_j>`` for all ``i != j`` (zero diagonal)."""
    view = view or CanonicalView(state)
    L = state.L
    lowers = [build_meson_operator(b.kind)[0] for b in view.bases]
    raises = [build_meson_operator(b.kind)[1] for b in view.bases]
    out = np.zeros((L, L))
    for i in range(L):
        for j, v in view.correlation_row(lowers[i], i, raises).items():
            out[i, j] = v
        for j, v in view.correlation_row(raises[i], i, lowers).items():
            # <sigma^+_i sigma^-_j> = <sigma^-_j sigma^+_i>
            out[j, i] = v
    return out
