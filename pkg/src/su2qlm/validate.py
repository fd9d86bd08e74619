"""Self-check suite: structural invariants, oracle agreement and fit round trips."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import analysis
from . import edoracle as ed
from .model import (
    ModelParams,
    SiteKind,
    bond_fock_hamiltonian,
    build_gauss_generators,
    build_two_site_gate,
    chain_embedding,
    chain_fock_hamiltonian,
    chain_gauss_generators,
    enumerate_site_basis,
    pair_gauss_generators,
)
from .perturbation import effective_coupling, heisenberg_ground_energy
from .tebd import AnnealSchedule, ground_state_search

logger = logging.getLogger(__name__)

KIND_PAIRS = (
    (SiteKind.LEFT, SiteKind.RIGHT),
    (SiteKind.LEFT, SiteKind.BULK),
    (SiteKind.BULK, SiteKind.BULK),
    (SiteKind.BULK, SiteKind.RIGHT),
)


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self):
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name:<34} value={self.value:.3e}  limit={self.threshold:.1e}  {self.detail}"


def corrupt_fock_hamiltonian(H, generators):
    """Negate the first off-diagonal pair of ``H`` whose row state carries spin.

    Elements between two spin-singlet Fock states are skipped because flipping
    them leaves the operator rotation-invariant.
    """
    jz = sum(g[2] for g in generators).diagonal().real
    coo = H.tocoo()
    cand = sorted((int(i), int(j)) for i, j in zip(coo.row, coo.col) if i < j and jz[i] != 0)
    i, j = cand[0]
    H = H.tolil()
    H[i, j] = -H[i, j]
    H[j, i] = -H[j, i]
    return H.tocsr()


def _commutator_norm(H, ops):
    worst = 0.0
    for J in ops:
        C = H @ J - J @ H
        if C.nnz:
            worst = max(worst, float(abs(C).max()))
    return worst


def check_basis():
    counts = {k.value: enumerate_site_basis(k).dim for k in SiteKind}
    ok = counts == {"left": 5, "bulk": 14, "right": 5}
    worst = 0.0
    for k in SiteKind:
        b = enumerate_site_basis(k)
        E = b.embedding
        worst = max(worst, float(np.abs(E.T @ E - np.eye(b.dim)).max()))
        J2 = sum((J @ J) for J in build_gauss_generators(k))
        worst = max(worst, float(np.abs(E.T @ (J2 @ E)).max()))
    return [
        Check("basis counts (left/bulk/right)", ok, counts["bulk"], 14,
              f"{counts['left']}/{counts['bulk']}/{counts['right']}"),
        Check("basis orthonormal singlets", worst < 1e-14, worst, 1e-14),
    ]


def check_gauss(corrupt=False, t=1.3):
    worst = 0.0
    for lk, rk in KIND_PAIRS:
        H = bond_fock_hamiltonian(t, 1.0, 5.0, lk, rk, 0.5, 0.5)
        gens = pair_gauss_generators(lk, rk)
        if corrupt:
            H = corrupt_fock_hamiltonian(H, gens)
        worst = max(worst, _commutator_norm(H, [J for site in gens for J in site]))
    for L in (2, 3):
        H = chain_fock_hamiltonian(ModelParams(t=t, L=L, N_M=2))
        worst = max(worst, _commutator_norm(H, [J for site in chain_gauss_generators(L) for J in site]))
    return [Check("Gauss law commutators", worst < 1e-12, worst, 1e-12, "bond pairs + L=2,3 chains")]


def check_gate_consistency():
    """ED Hamiltonian equals the projected chain Fock Hamiltonian at L=3."""
    worst = 0.0
    for N in (0, 2, 4, 6):
        p = ModelParams(t=0.7, L=3, N_M=N, g1=1.1, eps=4.0)
        basis = ed.enumerate_sector_basis(3, N)
        E = chain_embedding(basis.configs, 3)
        Hf = chain_fock_hamiltonian(p)
        proj = (E.T @ (Hf @ E)).toarray()
        worst = max(worst, float(np.abs(proj - ed.build_hamiltonian(p, basis).toarray()).max()))
    sym = max(
        float(np.abs(g.matrix - g.matrix.T).max())
        for g in (build_two_site_gate(ModelParams(t=2.0, L=4, N_M=4), b) for b in range(3))
    )
    return [
        Check("gates vs Fock Hamiltonian (L=3)", worst < 1e-12, worst, 1e-12),
        Check("gate symmetry", sym == 0.0, sym, 0.0),
    ]


def check_zero_coupling():
    worst = 0.0
    for L in range(2, 6):
        e = ed.ground_state(ModelParams(t=0.0, L=L, N_M=2 * (L // 2)))[2][0]
        worst = max(worst, abs(e + 5.0 * (L - 1)))
    return [Check("ED zero coupling E0=-(L-1)eps", worst < 1e-10, worst, 1e-10, "L=2..5")]


def check_perturbation():
    devs = []
    for t in (0.2, 0.1):
        p = ModelParams(t=t, L=4, N_M=4)
        e = ed.ground_state(p)[2][0]
        second = effective_coupling(t) * heisenberg_ground_energy(4, 2)
        devs.append((abs((e + 15.0) - second), abs(second)))
    rel = devs[1][0] / devs[1][1]
    ratio = devs[0][0] / devs[1][0]
    return [
        Check("PT relative deviation t=0.1", rel < 0.01, rel, 0.01),
        Check("PT deviation ratio t=0.2/0.1", ratio >= 8.0, ratio, 8.0, "expects O(t^4)"),
    ]


def check_particle_hole():
    worst = 0.0
    for N in (0, 2):
        a = np.linalg.eigvalsh(ed.build_hamiltonian(ModelParams(t=1.7, L=3, N_M=N),
                                                    ed.enumerate_sector_basis(3, N)).toarray())
        b = np.linalg.eigvalsh(ed.build_hamiltonian(ModelParams(t=1.7, L=3, N_M=6 - N),
                                                    ed.enumerate_sector_basis(3, 6 - N)).toarray())
        worst = max(worst, float(np.abs(a - b).max()) if len(a) == len(b) else np.inf)
    return [Check("particle-hole spectra (L=3)", worst < 1e-10, worst, 1e-10)]


def check_mps_vs_ed(t=5.0):
    p = ModelParams(t=t, L=4, N_M=4)
    _, _, w, _ = ed.ground_state(p)
    schedule = AnnealSchedule.from_steps((0.5, 0.1, 0.02, 0.005, 0.001), 2000, 1e-10)
    state, report = ground_state_search(p, 64, 1e-12, schedule, seeds=(0,))
    rel = abs(report.energy - w[0]) / abs(w[0])
    return [Check("TEBD vs ED energy (L=4,t=5)", rel < 1e-6, rel, 1e-6)]


def check_fits():
    L = 96
    ell = np.arange(1, L)
    truth = (1.0, 0.7, 0.05, 1.0, np.pi / 3)
    fit = analysis.fit_central_charge(analysis.entropy_model(ell, L, *truth), L)
    err_cc = max(abs(getattr(fit, n) - v) for n, v in zip(analysis.CC_PARAMS, truth))
    l = np.arange(-60, 61)
    l = l[l != 0]
    series = analysis.CorrelatorSeries(l, np.abs(l) ** -0.5 * np.exp(-np.abs(l) / 8.0), (0, 0))
    cf = analysis.correlation_length_fit(series)
    err_xi = max(abs(cf.a0 - 1), abs(cf.eta - 0.5), abs(cf.xi - 8))
    A, nu = analysis.fit_power_law([(d, 2 * d ** -0.8) for d in (0.1, 0.3, 1.0, 3.0)])
    err_pl = max(abs(A - 2), abs(nu - 0.8))
    th = analysis.extrapolate_thermo([(L, 3 + 5 / L) for L in (10, 20, 40)])
    err_th = max(abs(th.intercept - 3), abs(th.slope - 5))
    corr, dens = analysis.product_state_correlations([2, 0] * 4)
    zeta = analysis.cdw_order_parameter(corr, dens, np.pi, 1.0)
    return [
        Check("entropy fit round trip", err_cc < 1e-6, err_cc, 1e-6),
        Check("correlator fit round trip", err_xi < 1e-6, err_xi, 1e-6),
        Check("power-law fit round trip", err_pl < 1e-6, err_pl, 1e-6),
        Check("1/L extrapolation round trip", err_th < 1e-6, err_th, 1e-6),
        Check("Neel zeta_pi = 1", abs(zeta - 1) < 1e-12, abs(zeta - 1), 1e-12),
    ]


def run_checks(corrupt=False, quick=False):
    checks = []
    checks += check_basis()
    checks += check_gauss(corrupt)
    checks += check_gate_consistency()
    checks += check_zero_coupling()
    checks += check_perturbation()
    checks += check_particle_hole()
    if not quick:
        checks += check_mps_vs_ed()
    checks += check_fits()
    return checks


def basis_table():
    """Human-readable listing of the local gauge-invariant bases."""
    lines = []
    names = ("Ru", "Rd", "Mu", "Md", "Lu", "Ld")
    for kind in SiteKind:
        b = enumerate_site_basis(kind)
        lines.append(f"[{kind.value}] {b.dim} states")
        for s in b.states:
            terms = " ".join(
                f"{a:+.4f}|{''.join(names[m] for m in range(6) if c[m]) or 'vac'}>"
                for c, a in s.amplitudes
            )
            lines.append(f"  {s.label:2d}  (nR,nM,nL)={s.charges}  {terms}")
    return "\n".join(lines)


def report_text(checks):
    lines = [c.line() for c in checks]
    n_fail = sum(not c.passed for c in checks)
    lines.append(f"{len(checks) - n_fail}/{len(checks)} checks passed")
    return "\n".join(lines)
