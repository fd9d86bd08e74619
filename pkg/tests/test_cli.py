"""Configuration, records, checkpoints and the command-line front end."""

import json
import os

import numpy as np
import pytest

from su2qlm import checkpoint, pipeline, validate
from su2qlm.cli import main
from su2qlm.config import OUTPUT_ENV, ConfigError, parse_config
from su2qlm.model import ModelParams
from su2qlm.mps import density_profile, entropy_profile, init_product_state, meson_correlations
from su2qlm.records import MeasurementRecord, read_jsonl, write_records
from su2qlm.tebd import AnnealSchedule, ground_state_search

BASE = """
[model]
t = {t}
[lattice]
L = {L}
N_M = {N}
[mps]
chi_max = 16
[tebd]
dtaus = 0.5, 0.1, 0.02
max_sweeps = 200
energy_tolerance = 1e-9
seeds = 0
"""

SWEEP = BASE + """
[sweep]
param = t
values = {values}
warm_start = {warm}
"""


def write_config(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ------------------------------------------------------------------ #
# Configuration                                                       #
# ------------------------------------------------------------------ #


class TestConfig:
    def test_defaults_and_schedule(self):
        cfg = parse_config(BASE.format(t=1.0, L=4, N=4))
        assert cfg.sizes == (4,)
        assert cfg.N_M == 4 and cfg.f_M is None
        assert [s.dtau for s in cfg.schedule().stages] == [0.5, 0.1, 0.02]
        assert cfg.lines() == [(4, 4)]

    def test_filling_and_ranges(self):
        cfg = parse_config("""
[lattice]
L = 4, 8
f_M = 0.5
[sweep]
param = t
start = 0
stop = 2
num = 5
""")
        assert cfg.lines() == [(4, 2), (8, 4)]
        assert cfg.sweep_values == (0.0, 0.5, 1.0, 1.5, 2.0)
        assert [len(line) for line in cfg.points()] == [5, 5]
        assert cfg.can_warm_start()

    @pytest.mark.parametrize("text", [
        "[bogus]\nx = 1\n",
        "[model]\nmu = 1\n",
        "[lattice]\nL = 4\nN_M = 10\nf_M = 1\n",
        "[lattice]\nL = 4\nN_M = 10\n",
        "[lattice]\nL = 4\nN_M = 3\n",
        "[lattice]\nL = 3\nf_M = 0.5\n",
        "[lattice]\nL = 1\n",
        "[model]\nt = abc\n",
        "[model]\nt = 1, 2\n",
        "[model]\ng1 = 0\n",
        "[mps]\nchi_max = 0\n",
        "[tebd]\ndtaus = 0.1, 0.5\n",
        "[tebd]\nseeds = \n",
        "[sweep]\nparam = t\n",
        "[sweep]\nparam = t\nvalues = 1\nstart = 0\n",
        "[sweep]\nparam = mass\nvalues = 1\n",
        "[output]\nformats = xml\n",
        "[sweep]\nparam = t\nvalues = 1\nwarm_start = maybe\n",
    ])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_overrides(self):
        cfg = parse_config(BASE.format(t=1.0, L=4, N=4)).with_overrides(seed=5, chi=32, out="x")
        assert cfg.seeds == (5,) and cfg.chi_max == 32 and cfg.directory == "x"
        with pytest.raises(ConfigError):
            cfg.with_overrides(chi=0)

    def test_output_precedence(self, monkeypatch):
        cfg = parse_config(BASE.format(t=1.0, L=4, N=4) + "[output]\ndirectory = fromcfg\n")
        monkeypatch.delenv(OUTPUT_ENV, raising=False)
        assert pipeline.output_directory(cfg) == "fromcfg"
        monkeypatch.setenv(OUTPUT_ENV, "fromenv")
        assert pipeline.output_directory(cfg) == "fromenv"
        assert pipeline.output_directory(cfg, "fromcli") == "fromcli"

    def test_non_warm_parameters(self):
        cfg = parse_config("[lattice]\nL = 4\nN_M = 2\n[sweep]\nparam = N_M\nvalues = 2, 4\n")
        assert not cfg.can_warm_start()
        assert [p.N_M for p in cfg.points()[0]] == [2, 4]


# ------------------------------------------------------------------ #
# Records                                                             #
# ------------------------------------------------------------------ #


def _record(**kw):
    L = kw.pop("L", 2)
    base = dict(L=L, N_M=2, t=1.0, chi=8, seed=0, energy=-5.0, entropy=[0.1] * (L - 1),
                density=[1.0] * L, density_corr=np.ones((L, L)).tolist(),
                meson_corr=np.zeros((L, L)).tolist())
    base.update(kw)
    return MeasurementRecord(**base)


class TestRecords:
    def test_json_round_trip(self):
        rec = _record(energy=-5.123456789012345)
        back = MeasurementRecord.from_json(rec.to_json())
        assert back == rec
        assert back.to_json() == rec.to_json()

    def test_validation(self):
        with pytest.raises(ValueError):
            _record(entropy=[]).validate()
        with pytest.raises(ValueError):
            _record(energy=float("nan")).validate()
        with pytest.raises(ValueError):
            _record(meson_corr=[[0.0]]).validate()
        _record(status="failed: x", entropy=[]).validate()
        with pytest.raises(ValueError):
            MeasurementRecord.from_json('{"L": 2, "bogus": 1}')

    def test_write_sorted_merged(self, tmp_path):
        a = _record(t=2.0)
        b = _record(t=1.0)
        write_records([a], tmp_path)
        recs, paths = write_records([b, _record(t=2.0, energy=-6.0)], tmp_path)
        assert [r.t for r in recs] == [1.0, 2.0]
        assert recs[1].energy == -6.0
        assert read_jsonl(tmp_path / "records.jsonl") == recs
        lines = (tmp_path / "records.csv").read_text().splitlines()
        assert lines[0].startswith("L,N_M,t,chi,seed")
        assert len(lines) == 3

    def test_idempotent_write(self, tmp_path):
        write_records([_record(t=1.0), _record(t=2.0)], tmp_path)
        first = (tmp_path / "records.csv").read_bytes()
        write_records([_record(t=2.0)], tmp_path)
        assert (tmp_path / "records.csv").read_bytes() == first

    def test_malformed_jsonl(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("{not json}\n")
        with pytest.raises(ValueError):
            read_jsonl(path)


# ------------------------------------------------------------------ #
# Checkpoints                                                         #
# ------------------------------------------------------------------ #


@pytest.fixture(scope="module")
def state():
    params = ModelParams(t=2.0, L=5, N_M=4)
    schedule = AnnealSchedule.from_steps((0.2, 0.05), 50, 1e-9)
    return ground_state_search(params, 16, 1e-10, schedule, seeds=(0,))[0]


class TestCheckpoint:
    def test_round_trip(self, state, tmp_path):
        path = tmp_path / "s.mps"
        checkpoint.save(state, path)
        back = checkpoint.load(path)
        assert back.params == state.params
        assert back.center == state.center
        for a, b in zip(state.tensors, back.tensors):
            assert a.blocks.keys() == b.blocks.keys()
            for k in a.blocks:
                np.testing.assert_array_equal(a.blocks[k], b.blocks[k])
        np.testing.assert_allclose(entropy_profile(back), entropy_profile(state), atol=1e-12)
        np.testing.assert_allclose(density_profile(back), density_profile(state), atol=1e-12)
        np.testing.assert_allclose(meson_correlations(back), meson_correlations(state), atol=1e-12)
        assert checkpoint.dumps(back) == checkpoint.dumps(state)

    def test_layout(self):
        state = init_product_state(ModelParams(t=0.5, L=2, N_M=2), 0)
        data = checkpoint.dumps(state)
        assert data[:9] == b"SU2QLMPS1"
        assert int.from_bytes(data[9:13], "little") == 1
        # header + center + 2 x (count + one 1x1 block)
        assert len(data) == 9 + 36 + 4 + 2 * (4 + 28 + 8)

    @pytest.mark.parametrize("mutate", [
        lambda d: b"XXXXXXXXX" + d[9:],
        lambda d: d[:9] + (2).to_bytes(4, "little") + d[13:],
        lambda d: d[:-3],
        lambda d: d + b"\0",
    ])
    def test_corrupt(self, state, mutate):
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.loads(mutate(checkpoint.dumps(state)))


# ------------------------------------------------------------------ #
# Command line                                                        #
# ------------------------------------------------------------------ #


class TestGround:
    def test_zero_coupling_record(self, tmp_path):
        cfg = write_config(tmp_path, BASE.format(t=0.0, L=4, N=4))
        out = tmp_path / "out"
        assert main(["ground", "--config", cfg, "--out", str(out)]) == 0
        (rec,) = read_jsonl(out / "records.jsonl")
        assert rec.energy == pytest.approx(-15.0, abs=1e-8)
        assert rec.status == "ok" and rec.seed == 0
        assert len(os.listdir(out / "checkpoints")) == 1

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, BASE.format(t=1.5, L=4, N=4))
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["ground", "--config", cfg, "--out", str(a), "--seed", "3"]) == 0
        assert main(["ground", "--config", cfg, "--out", str(b), "--seed", "3"]) == 0
        for name in ("records.jsonl", "records.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert read_jsonl(a / "records.jsonl")[0].seed == 3

    def test_invalid_config(self, tmp_path, capsys):
        cfg = write_config(tmp_path, BASE.format(t=1.0, L=4, N=10))
        out = tmp_path / "out"
        assert main(["ground", "--config", cfg, "--out", str(out)]) == 1
        assert not out.exists()
        assert "error" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["ground", "--config", str(tmp_path / "nope.ini")]) == 1

    def test_resume_from_checkpoint(self, tmp_path):
        cfg = write_config(tmp_path, BASE.format(t=1.0, L=4, N=4))
        out = tmp_path / "out"
        assert main(["ground", "--config", cfg, "--out", str(out)]) == 0
        (ck,) = os.listdir(out / "checkpoints")
        again = tmp_path / "again"
        assert main(["ground", "--config", cfg, "--out", str(again),
                     "--resume", str(out / "checkpoints" / ck)]) == 0
        e0 = read_jsonl(out / "records.jsonl")[0].energy
        assert read_jsonl(again / "records.jsonl")[0].energy == pytest.approx(e0, abs=1e-7)


class TestSweep:
    def test_three_points_sorted(self, tmp_path):
        cfg = write_config(tmp_path, SWEEP.format(t=0, L=4, N=4, values="2, 0.5, 1", warm="true"))
        out = tmp_path / "out"
        assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
        recs = read_jsonl(out / "records.jsonl")
        assert [r.t for r in recs] == [0.5, 1.0, 2.0]

    def test_warm_and_cold_agree(self, tmp_path):
        text = SWEEP.replace("0.5, 0.1, 0.02", "0.5, 0.1, 0.02, 0.005").replace("200", "2000")
        energies = {}
        for warm in ("true", "false"):
            cfg = write_config(tmp_path, text.format(t=0, L=4, N=4, values="1, 1.5, 2", warm=warm),
                               f"{warm}.ini")
            out = tmp_path / warm
            assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
            energies[warm] = [r.energy for r in read_jsonl(out / "records.jsonl")]
        np.testing.assert_allclose(energies["true"], energies["false"], atol=1e-5)

    def test_workers_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, SWEEP.format(t=0, L="2, 4", N=2, values="1, 2", warm="true"))
        one, two = tmp_path / "one", tmp_path / "two"
        assert main(["sweep", "--config", cfg, "--out", str(one), "--workers", "1"]) == 0
        assert main(["sweep", "--config", cfg, "--out", str(two), "--workers", "2"]) == 0
        for name in ("records.jsonl", "records.csv"):
            assert (one / name).read_bytes() == (two / name).read_bytes()

    def test_resume_skips_done_points(self, tmp_path):
        cfg = write_config(tmp_path, SWEEP.format(t=0, L=4, N=4, values="1, 2", warm="true"))
        out = tmp_path / "out"
        assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
        before = (out / "records.jsonl").read_bytes()
        cfg2 = write_config(tmp_path, SWEEP.format(t=0, L=4, N=4, values="1, 2, 3", warm="true"), "more.ini")
        assert main(["sweep", "--config", cfg2, "--out", str(out), "--resume", str(out)]) == 0
        recs = read_jsonl(out / "records.jsonl")
        assert [r.t for r in recs] == [1.0, 2.0, 3.0]
        assert before.splitlines()[0] == (out / "records.jsonl").read_bytes().splitlines()[0]

    def test_unconverged_exit_code(self, tmp_path):
        text = SWEEP.replace("max_sweeps = 200", "max_sweeps = 1").replace("1e-9", "1e-14")
        cfg = write_config(tmp_path, text.format(t=0, L=4, N=4, values="1, 2", warm="true"))
        out = tmp_path / "out"
        assert main(["sweep", "--config", cfg, "--out", str(out)]) == 2
        assert {r.status for r in read_jsonl(out / "records.jsonl")} == {"not-converged"}

    def test_empty_grid(self, tmp_path):
        cfg = write_config(tmp_path, BASE.format(t=1, L=4, N=4) + "[sweep]\nparam = t\nvalues =\n")
        assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == 1

    def test_bad_workers(self, tmp_path):
        cfg = write_config(tmp_path, SWEEP.format(t=0, L=4, N=4, values="1", warm="true"))
        assert main(["sweep", "--config", cfg, "--workers", "0"]) == 1


def _neel_record(path, L=6):
    occ = [2, 0] * (L // 2)
    n = np.array(occ, dtype=float)
    rec = MeasurementRecord(L=L, N_M=L, t=40.0, chi=8, seed=0, energy=-1.0,
                            entropy=[0.0] * (L - 1), density=occ, density_corr=np.outer(n, n).tolist(),
                            meson_corr=np.zeros((L, L)).tolist())
    path.write_text(rec.to_json() + "\n")
    return str(path)


class TestAnalyze:
    def test_cdw_neel(self, tmp_path):
        rec = _neel_record(tmp_path / "neel.jsonl")
        assert main(["analyze", rec, "--task", "cdw", "--out", str(tmp_path)]) == 0
        rows = (tmp_path / "analysis_cdw.csv").read_text().splitlines()
        header = rows[0].split(",")
        assert float(rows[1].split(",")[header.index("zeta")]) == 1.0

    def test_transition_synthetic(self, tmp_path):
        table = tmp_path / "curves.csv"
        lines = ["L,t,zeta"]
        t = np.arange(0, 30.5, 0.5)
        for L in (20, 30, 60):
            z = (1 + np.tanh((t - (12 - 60 / L)) / 2)) / 2
            lines += [f"{L},{float(a)!r},{float(b)!r}" for a, b in zip(t, z)]
        table.write_text("\n".join(lines) + "\n")
        assert main(["analyze", str(table), "--task", "transition", "--out", str(tmp_path)]) == 0
        rows = pipeline.analyze([str(table)], "transition")
        (final,) = [r for r in rows if r["L"] == "inf"]
        assert final["t_c"] == pytest.approx(12.0, abs=1e-10)

    def test_chi_error_identical(self, tmp_path):
        a = MeasurementRecord.from_json(open(_neel_record(tmp_path / "a.jsonl")).read())
        b = MeasurementRecord.from_json(a.to_json())
        b.chi = 16
        path = tmp_path / "pair.jsonl"
        path.write_text(a.to_json() + "\n" + b.to_json() + "\n")
        (row,) = pipeline.analyze([str(path)], "chi-error")
        assert row["d_energy"] == 0.0 and row["d_zeta"] == 0.0

    def test_extrapolate_table(self, tmp_path):
        table = tmp_path / "y.csv"
        table.write_text("L,y\n" + "".join(f"{L},{3 + 5 / L!r}\n" for L in (10, 20, 40)))
        (row,) = pipeline.analyze([str(table)], "extrapolate")
        assert row["intercept"] == pytest.approx(3.0, abs=1e-12)

    def test_central_charge_and_xi_on_real_record(self, tmp_path):
        cfg = write_config(tmp_path, BASE.format(t=3.0, L=10, N=10))
        out = tmp_path / "out"
        assert main(["ground", "--config", cfg, "--out", str(out)]) == 0
        path = str(out / "records.jsonl")
        (cc,) = pipeline.analyze([path], "central-charge")
        assert cc["status"] == "ok" and np.isfinite(cc["c"])
        (xi,) = pipeline.analyze([path], "xi")
        assert "stag_xi_moment" in xi
        assert main(["analyze", path, "--task", "xi", "--out", str(tmp_path)]) == 0

    def test_malformed_records(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("[1, 2]\n")
        assert main(["analyze", str(bad), "--task", "cdw", "--out", str(tmp_path)]) == 1

    def test_idempotent(self, tmp_path):
        rec = _neel_record(tmp_path / "neel.jsonl")
        main(["analyze", rec, "--task", "cdw", "--out", str(tmp_path)])
        first = (tmp_path / "analysis_cdw.csv").read_bytes()
        main(["analyze", rec, "--task", "cdw", "--out", str(tmp_path)])
        assert (tmp_path / "analysis_cdw.csv").read_bytes() == first


class TestEdAndValidate:
    def test_ed_command(self, tmp_path, capsys):
        cfg = write_config(tmp_path, BASE.format(t=0.0, L=2, N=2))
        assert main(["ed", "--config", cfg, "--out", str(tmp_path), "--levels", "3"]) == 0
        assert "level 0: -5.000000000000" in capsys.readouterr().out
        assert (tmp_path / "ed_spectrum.csv").exists()

    def test_validate_quick(self, tmp_path, capsys):
        assert main(["validate", "--quick", "--show-basis", "--out", str(tmp_path)]) == 0
        text = capsys.readouterr().out
        assert "[bulk] 14 states" in text
        assert "FAIL" not in text
        assert (tmp_path / "validate.txt").exists()

    def test_corrupted_gate_fails_gauss_check(self, capsys):
        assert main(["validate", "--quick", "--corrupt-gate"]) == 2
        lines = capsys.readouterr().out.splitlines()
        (gauss,) = [ln for ln in lines if "Gauss" in ln]
        assert gauss.startswith("FAIL")
        assert sum(ln.startswith("FAIL") for ln in lines) == 1

    def test_full_suite_passes(self):
        checks = validate.run_checks()
        assert all(c.passed for c in checks), validate.report_text(checks)
        assert any(c.name.startswith("basis counts") and c.value == 14 for c in checks)

    def test_corrupt_hook_breaks_symmetry(self):
        from su2qlm.model import bond_fock_hamiltonian, pair_gauss_generators

        H = bond_fock_hamiltonian(1.0, 1.0, 5.0, "bulk", "bulk", 0.5, 0.5)
        bad = validate.corrupt_fock_hamiltonian(H, pair_gauss_generators("bulk", "bulk"))
        assert abs(bad - H).max() > 0
        assert abs(bad - bad.T).max() == 0


def test_json_records_are_compact(tmp_path):
    line = _record().to_json()
    assert " " not in line
    assert list(json.loads(line)) == sorted(json.loads(line))
