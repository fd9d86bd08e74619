"""Ground-state search by imaginary-time TEBD annealing."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, build_two_site_gate
from .mps import SymmetricMPS, apply_gate, init_product_state, theta_expectation
from .symtensor import contract_bond

logger = logging.getLogger(__name__)

DEFAULT_DTAUS = (0.5, 0.1, 0.02, 0.005, 0.001)


@dataclass(frozen=True)
class Stage:
    dtau: float
    max_sweeps: int = 2000
    energy_tolerance: float = 1e-9


@dataclass(frozen=True)
class AnnealSchedule:
    stages: tuple[Stage, ...] = tuple(Stage(d) for d in DEFAULT_DTAUS)

    def __post_init__(self):
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        dtaus = [s.dtau for s in self.stages]
        if any(d <= 0 for d in dtaus) or any(b >= a for a, b in zip(dtaus, dtaus[1:])):
            raise ValueError(f"time steps must be positive and strictly decreasing: {dtaus}")

    @classmethod
    def from_steps(cls, dtaus=DEFAULT_DTAUS, max_sweeps=2000, energy_tolerance=1e-9):
        return cls(tuple(Stage(float(d), int(max_sweeps), float(energy_tolerance)) for d in dtaus))


@dataclass
class StageReport:
    dtau: float
    energy: float
    sweeps: int
    max_truncation: float
    wall_time: float
    converged: bool


@dataclass
class ConvergenceReport:
    seed: int
    stages: list[StageReport] = field(default_factory=list)
    energy: float = float("nan")
    converged: bool = False
    monotonic: bool = True

    @property
    def max_truncation(self):
        return max((s.max_truncation for s in self.stages), default=0.0)


def bond_hamiltonians(params: ModelParams):
    return [build_two_site_gate(params, b) for b in range(params.L - 1)]


def build_propagators(params: ModelParams, dtau, gates=None):
    """``exp(-dtau h)`` for every bond, computed block by block.

    Each gate is shifted by its own lowest eigenvalue before exponentiating so
    large ``dtau * t`` cannot overflow; the shift only rescales the state.
    """
    if dtau < 0:
        raise ValueError("dtau must be >= 0")
    gates = gates if gates is not None else bond_hamiltonians(params)
    out = []
    for gate in gates:
        eig = {k: np.linalg.eigh(m) for k, (_, m) in gate.blocks.items()}
        shift = min(w[0] for w, _ in eig.values())

        def expm(key, sub, eig=eig, shift=shift):
            if dtau == 0:
                return np.eye(len(sub))
            w, V = eig[key]
            return (V * np.exp(-dtau * (w - shift))) @ V.T

        out.append(gate.map_blocks(expm))
    return out


def _odd_even_odd(L):
    first = list(range(0, L - 1, 2))
    second = list(range(1, L - 1, 2))
    return [(first, "right"), (second[::-1], "left"), (first, "right")]


def trotter_sweep(state: SymmetricMPS, half, full, chi_max, tol):
    """One second-order step: half step on even-indexed bonds, full step on the
    odd-indexed ones, half step on the even-indexed ones again.

    Returns the largest discarded weight.
    """
    worst = 0.0
    layers = _odd_even_odd(state.L)
    for (bonds, direction), props in zip(layers, (half, full, half)):
        for b in bonds:
            w = apply_gate(state, props[b], b, chi_max, tol, direction)
            worst = max(worst, w)
    return worst


def sweep_energy(state: SymmetricMPS, gates):
    """Sum of bond expectations, moving the center from the right end to site 0."""
    state.move_center(state.L - 1)
    energy = 0.0
    for i in range(state.L - 1, 0, -1):
        theta = contract_bond(state.tensors[i - 1], state.tensors[i])
        num, den = theta_expectation(theta, gates[i - 1])
        energy += num / den
        state.move_center(i - 1)
    return energy


def anneal(state: SymmetricMPS, params, chi_max, tol, schedule: AnnealSchedule, seed=0):
    """Run the imaginary-time schedule on ``state`` in place."""
    gates = bond_hamiltonians(params)
    report = ConvergenceReport(seed=seed)
    state.move_center(0)
    state.normalize()
    previous_stage_energy = None
    all_converged = True
    for stage in schedule.stages:
        start = time.perf_counter()
        half = build_propagators(params, stage.dtau / 2, gates)
        full = build_propagators(params, stage.dtau, gates)
        energy = sweep_energy(state, gates)
        worst = 0.0
        converged = False
        sweeps = 0
        for sweeps in range(1, stage.max_sweeps + 1):
            worst = max(worst, trotter_sweep(state, half, full, chi_max, tol))
            new = sweep_energy(state, gates)
            delta = abs(new - energy)
            energy = new
            if delta < stage.energy_tolerance:
                converged = True
                break
        all_converged &= converged
        elapsed = time.perf_counter() - start
        if previous_stage_energy is not None and energy > previous_stage_energy + 10 * stage.energy_tolerance:
            report.monotonic = False
            logger.warning(
                "energy rose between stages: %.12g -> %.12g (dtau=%g)",
                previous_stage_energy,
                energy,
                stage.dtau,
            )
        previous_stage_energy = energy
        report.stages.append(StageReport(stage.dtau, energy, sweeps, worst, elapsed, converged))
        logger.info(
            "seed %d dtau %g: E=%.12f after %d sweeps (trunc %.2e, %.1fs)%s",
            seed,
            stage.dtau,
            energy,
            sweeps,
            worst,
            elapsed,
            "" if converged else " [not converged]",
        )
    report.energy = energy
    report.converged = all_converged
    return report


def ground_state_search(
    params: ModelParams,
    chi_max=64,
    tol=1e-10,
    schedule: AnnealSchedule | None = None,
    seeds=(0, 1, 2),
    initial: SymmetricMPS | None = None,
):
    """Anneal from each seed's random product state and keep the lowest energy.

    With ``initial`` given, a copy of that state is annealed instead and only
    the first seed is recorded.  Ties in energy go to the smaller seed.

    Returns ``(state, report)``; ``report.converged`` is ``False`` if any stage
    of the winning run exhausted its sweep budget.
    """
    schedule = schedule or AnnealSchedule()
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    best = None
    runs = [(seeds[0], initial.copy())] if initial is not None else [
        (seed, None) for seed in seeds
    ]
    for seed, state in runs:
        if state is None:
            state = init_product_state(params, seed)
        report = anneal(state, params, chi_max, tol, schedule, seed)
        if best is None or (report.energy, seed) < (best[1].energy, best[1].seed):
            best = (state, report)
    return best
