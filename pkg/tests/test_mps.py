"""Symmetric MPS: construction, gate application and measurements against ED."""

import numpy as np
import pytest
import scipy.linalg as sla

from su2qlm import edoracle as ed
from su2qlm.model import ModelParams, build_density_operators, build_meson_operator, site_kind
from su2qlm.mps import (
    CanonicalView,
    SectorError,
    apply_gate,
    density_correlations,
    density_profile,
    entropy_profile,
    from_amplitudes,
    init_product_state,
    measure_correlator,
    measure_local,
    meson_correlations,
    product_state,
    schmidt_spectrum,
    total_energy,
)
from su2qlm.tebd import AnnealSchedule, bond_hamiltonians, build_propagators, ground_state_search


def overlap(state, basis):
    return state.to_vector(basis.configs)


# ------------------------------------------------------------------ #
# Product states                                                       #
# ------------------------------------------------------------------ #


class TestProductState:
    def test_seeded_state_has_sector_density(self):
        params = ModelParams(t=0.0, L=4, N_M=4)
        state = init_product_state(params, seed=7)
        state.check_structure()
        n = density_profile(state)
        assert n.sum() == 4.0
        assert set(n.tolist()) <= {0.0, 2.0}

    @pytest.mark.parametrize("seed", range(5))
    def test_entropy_vanishes(self, seed):
        params = ModelParams(t=1.0, L=6, N_M=4)
        state = init_product_state(params, seed)
        np.testing.assert_array_equal(entropy_profile(state), np.zeros(5))
        n = density_profile(state)
        for bond in range(5):
            sch = schmidt_spectrum(state, bond)
            (label,) = sch.spectrum
            assert label[0] == n[: bond + 1].sum()
            np.testing.assert_allclose(sch.spectrum[label], [1.0])

    def test_seed_determinism(self):
        params = ModelParams(t=0.0, L=8, N_M=8)
        a = init_product_state(params, 3)
        b = init_product_state(params, 3)
        assert all(x.blocks.keys() == y.blocks.keys() for x, y in zip(a.tensors, b.tensors))

    def test_odd_sector_rejected(self):
        with pytest.raises(SectorError):
            init_product_state(ModelParams(t=0.0, L=4, N_M=3), 0)

    def test_product_state_rejects_wrong_sector(self):
        params = ModelParams(t=0.0, L=2, N_M=2)
        basis = ed.enumerate_sector_basis(2, 0)
        with pytest.raises(SectorError):
            product_state(params, basis.configs[0])

    def test_break_term_vanishes_on_single_link_config(self):
        # H_break only connects (2,0) and (0,2) link configurations
        L = 2
        with_break = bond_hamiltonians(ModelParams(t=0.0, L=L, N_M=2, eps=5.0))
        without = bond_hamiltonians(ModelParams(t=0.0, L=L, N_M=2, eps=0.0))
        basis = ed.enumerate_sector_basis(L, 2)
        for config in basis.configs:
            state = product_state(ModelParams(t=0.0, L=L, N_M=2), config)
            assert total_energy(state, with_break) - total_energy(state, without) == 0.0

    def test_from_amplitudes_matches_vector(self):
        params = ModelParams(t=0.0, L=4, N_M=4)
        basis = ed.enumerate_sector_basis(4, 4)
        rng = np.random.default_rng(1)
        vec = rng.standard_normal(basis.dim)
        vec /= np.linalg.norm(vec)
        state = from_amplitudes(params, basis.configs, vec)
        state.check_structure()
        np.testing.assert_allclose(overlap(state, basis), vec, atol=1e-13)


# ------------------------------------------------------------------ #
# Gate application                                                    #
# ------------------------------------------------------------------ #


def _random_state(L, N, seed):
    basis = ed.enumerate_sector_basis(L, N)
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(basis.dim)
    vec /= np.linalg.norm(vec)
    return basis, vec, from_amplitudes(ModelParams(t=1.0, L=L, N_M=N), basis.configs, vec)


class TestApplyGate:
    def test_identity_propagator(self):
        params = ModelParams(t=2.0, L=4, N_M=4)
        basis, vec, state = _random_state(4, 4, 0)
        props = build_propagators(params, 0.0)
        for bond in range(3):
            w = apply_gate(state, props[bond], bond, 500, 0.0)
            assert w == 0.0
        assert abs(overlap(state, basis) @ vec) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("N", [0, 2, 4])
    def test_two_site_dense_exponential(self, N):
        params = ModelParams(t=1.3, L=2, N_M=N, g1=0.9, eps=4.0)
        basis, vec, state = _random_state(2, N, N)
        dtau = 0.37
        prop = build_propagators(params, dtau)[0]
        apply_gate(state, prop, 0, 100, 0.0)
        H = ed.build_hamiltonian(params, basis).toarray()
        ref = sla.expm(-dtau * H) @ vec
        ref /= np.linalg.norm(ref)
        np.testing.assert_allclose(overlap(state, basis), ref, atol=1e-10)

    def test_two_site_space_has_nine_states(self):
        dims = [ed.enumerate_sector_basis(2, N).dim for N in range(5)]
        assert dims == [2, 0, 5, 0, 2]
        assert sum(dims) == 9

    def test_chain_dense_exponential(self):
        params = ModelParams(t=0.8, L=4, N_M=4)
        basis, vec, state = _random_state(4, 4, 3)
        dtau = 0.2
        for bond, prop in enumerate(build_propagators(params, dtau)):
            apply_gate(state, prop, bond, 500, 0.0)
            gate = ed._two_site_operator(
                basis, sla.expm(-dtau * bond_hamiltonians(params)[bond].matrix), bond,
                [state.bases[j].dim for j in range(4)],
            )
            vec = gate @ vec
            vec /= np.linalg.norm(vec)
        np.testing.assert_allclose(overlap(state, basis), vec, atol=1e-10)

    def test_norm_and_selection_rules_preserved(self):
        params = ModelParams(t=3.0, L=6, N_M=6)
        state = init_product_state(params, 2)
        props = build_propagators(params, 0.1)
        for sweep in range(3):
            for bond, prop in enumerate(props):
                apply_gate(state, prop, bond, 16, 1e-10)
                assert state.norm() == pytest.approx(1.0, abs=1e-10)
        state.check_structure()
        assert density_profile(state).sum() == pytest.approx(6.0, abs=1e-12)

    def test_bad_bond(self):
        params = ModelParams(t=1.0, L=3, N_M=2)
        state = init_product_state(params, 0)
        with pytest.raises(IndexError):
            apply_gate(state, build_propagators(params, 0.1)[0], 2, 8)


# ------------------------------------------------------------------ #
# Measurements                                                        #
# ------------------------------------------------------------------ #


class TestMeasure:
    def test_product_state_densities(self):
        params = ModelParams(t=0.0, L=4, N_M=4)
        basis = ed.enumerate_sector_basis(4, 4)
        for config in basis.configs[:10]:
            state = product_state(params, config)
            expected = [state.bases[j].n_M[p] for j, p in enumerate(config)]
            np.testing.assert_allclose(density_profile(state), expected, atol=1e-15)

    def test_hardcore_onsite(self):
        params = ModelParams(t=0.0, L=4, N_M=2)
        state = init_product_state(params, 1)
        n = density_profile(state)
        for j in range(4):
            lower, raise_ = build_meson_operator(site_kind(j, 4))
            v = measure_correlator(state, lower, j, raise_, j)
            assert v == (0.0 if n[j] == 2 else 1.0)

    def test_product_state_meson_correlator_vanishes(self):
        state = init_product_state(ModelParams(t=0.0, L=6, N_M=6), 4)
        m = meson_correlations(state)
        np.testing.assert_array_equal(m, np.zeros((6, 6)))

    def test_singlet_like_entropy(self):
        params = ModelParams(t=0.0, L=2, N_M=2)
        basis = ed.enumerate_sector_basis(2, 2)
        c = basis.configs
        # two configurations differing on both sites give a rank-two split
        i, j = next((i, j) for i in range(len(c)) for j in range(i + 1, len(c))
                    if c[i][0] != c[j][0] and c[i][1] != c[j][1])
        vec = np.zeros(basis.dim)
        vec[i] = vec[j] = 1 / np.sqrt(2)
        state = from_amplitudes(params, c, vec)
        s = schmidt_spectrum(state, 0)
        np.testing.assert_allclose(s.values(), [1 / np.sqrt(2)] * 2, atol=1e-14)
        assert entropy_profile(state)[0] == pytest.approx(np.log(2), abs=1e-14)

    def test_hand_built_meson_superposition(self):
        # equal-weight superposition of the two t=0 ground configurations at L=2
        params = ModelParams(t=0.0, L=2, N_M=2)
        basis, H, w, v = ed.ground_state(params, k=2)
        assert w == pytest.approx([-5.0, -5.0], abs=1e-12)
        lower, _ = build_meson_operator("left")
        _, raise_r = build_meson_operator("right")
        corr = ed.product_operator(basis, {0: lower, 1: raise_r})
        # rotate the degenerate pair to the two meson placements
        n0 = ed.site_operator(basis, build_density_operators("left")["M"], 0).toarray()
        P = v.T @ n0 @ v
        _, R = np.linalg.eigh(P)
        placements = v @ R
        psi = (placements[:, 0] + placements[:, 1]) / np.sqrt(2)
        sign = np.sign(ed.ed_expectation(psi, corr))
        psi = (placements[:, 0] + sign * placements[:, 1]) / np.sqrt(2)
        assert ed.ed_expectation(psi, corr) == pytest.approx(0.5, abs=1e-14)
        state = from_amplitudes(params, basis.configs, psi)
        assert meson_correlations(state)[0, 1] == pytest.approx(0.5, abs=1e-14)

    def test_index_errors(self):
        state = init_product_state(ModelParams(t=0.0, L=3, N_M=2), 0)
        op = build_density_operators("bulk")["M"]
        with pytest.raises(IndexError):
            measure_local(state, 3, op)
        with pytest.raises(IndexError):
            measure_correlator(state, op, 0, op, -1)
        with pytest.raises(IndexError):
            schmidt_spectrum(state, 2)


# ------------------------------------------------------------------ #
# Against the ED oracle                                               #
# ------------------------------------------------------------------ #


@pytest.fixture(scope="module")
def l4_ground():
    params = ModelParams(t=2.0, L=4, N_M=4)
    schedule = AnnealSchedule.from_steps((0.5, 0.1, 0.02, 0.005, 0.001), 2000, 1e-11)
    state, report = ground_state_search(params, 64, 1e-12, schedule, seeds=(0,))
    basis = ed.enumerate_sector_basis(4, 4)
    return params, state, report, basis


class TestAgainstED:
    def test_measurements_on_same_state(self, l4_ground):
        # ED observables evaluated on the MPS's own amplitude vector
        params, state, _, basis = l4_ground
        vec = overlap(state, basis)
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(density_profile(state), ed.density_profile(basis, vec), atol=1e-8)
        np.testing.assert_allclose(meson_correlations(state), ed.meson_correlations(basis, vec), atol=1e-8)
        np.testing.assert_allclose(density_correlations(state), ed.density_correlations(basis, vec), atol=1e-8)
        np.testing.assert_allclose(entropy_profile(state), ed.entropy_profile(basis, vec), atol=1e-8)
        H = ed.build_hamiltonian(params, basis)
        assert total_energy(state, bond_hamiltonians(params)) == pytest.approx(
            ed.ed_expectation(vec, H), abs=1e-10)

    def test_ground_state_close_to_ed(self, l4_ground):
        params, state, report, basis = l4_ground
        _, _, w, v = ed.ground_state(params)
        assert abs(report.energy - w[0]) / abs(w[0]) < 1e-6
        fidelity = abs(overlap(state, basis) @ v[:, 0])
        assert fidelity > 1 - 1e-6
        np.testing.assert_allclose(density_profile(state), ed.density_profile(basis, v[:, 0]), atol=1e-5)

    def test_energy_invariant_under_recanonicalization(self, l4_ground):
        params, state, _, _ = l4_ground
        gates = bond_hamiltonians(params)
        e0 = total_energy(state, gates)
        s = state.copy()
        s.move_center(3)
        s.canonicalize(2)
        assert total_energy(s, gates) == pytest.approx(e0, abs=1e-12)
        np.testing.assert_allclose(entropy_profile(s), entropy_profile(state), atol=1e-12)

    def test_zero_coupling_energy(self):
        params = ModelParams(t=0.0, L=4, N_M=4)
        state = init_product_state(params, 0)
        schedule = AnnealSchedule.from_steps((0.5, 0.1), 200, 1e-12)
        state, report = ground_state_search(params, 16, 1e-10, schedule, seeds=(0,))
        assert total_energy(state, bond_hamiltonians(params)) == pytest.approx(-15.0, abs=1e-8)

    def test_view_is_frozen(self, l4_ground):
        _, state, _, _ = l4_ground
        view = CanonicalView(state)
        center = state.center
        op = build_density_operators("bulk")["M"]
        assert view.local(1, op) == pytest.approx(measure_local(state, 1, op), abs=1e-14)
        assert state.center == center
