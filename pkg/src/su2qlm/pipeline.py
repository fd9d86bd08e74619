"""Run orchestration behind the command-line interface."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor

from threadpoolctl import threadpool_limits

from . import analysis, checkpoint
from . import edoracle as ed
from . import mps
from .config import OUTPUT_ENV, RunConfig
from .model import ModelParams
from .records import (
    MeasurementRecord,
    csv_text,
    merge_records,
    read_jsonl,
    schmidt_to_json,
    write_records,
)
from .tebd import ground_state_search

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_INVALID, EXIT_INCOMPLETE = 0, 1, 2
ANALYSIS_TASKS = ("central-charge", "cdw", "xi", "transition", "extrapolate", "chi-error")


def output_directory(cfg: RunConfig, cli_out=None):
    """``--out`` wins, then the environment override, then the config file."""
    if cli_out:
        return str(cli_out)
    return os.environ.get(OUTPUT_ENV) or cfg.directory


def checkpoint_name(params: ModelParams, chi, seed):
    return f"L{params.L}_N{params.N_M}_t{params.t!r}_g{params.g1!r}_e{params.eps!r}_chi{chi}_s{seed}.mps"


def measure(state, params: ModelParams, report, chi, status="ok"):
    view = mps.CanonicalView(state)
    return MeasurementRecord(
        L=params.L,
        N_M=params.N_M,
        t=float(params.t),
        chi=int(chi),
        seed=int(report.seed),
        g1=float(params.g1),
        eps=float(params.eps),
        status=status,
        converged=bool(report.converged),
        energy=float(report.energy),
        max_truncation=float(report.max_truncation),
        entropy=mps.entropy_profile(state, view).tolist(),
        density=mps.density_profile(state, view).tolist(),
        density_corr=mps.density_correlations(state, view).tolist(),
        meson_corr=mps.meson_correlations(state, view).tolist(),
        schmidt=[schmidt_to_json(view.schmidt(b)) for b in range(params.L - 1)],
    ).validate()


def solve_point(params: ModelParams, cfg: RunConfig, initial=None):
    """Ground-state search plus measurements; returns ``(record, checkpoint bytes)``."""
    start = time.perf_counter()
    state, report = ground_state_search(
        params, cfg.chi_max, cfg.trunc_tol, cfg.schedule(), cfg.seeds, initial=initial
    )
    status = "ok" if report.converged else "not-converged"
    record = measure(state, params, report, cfg.chi_max, status)
    logger.info(
        "L=%d N_M=%d t=%g chi=%d: E=%.12f (%s, %.1fs)",
        params.L, params.N_M, params.t, cfg.chi_max, report.energy, status,
        time.perf_counter() - start,
    )
    return record, checkpoint.dumps(state)


def _failed_record(params, cfg, exc):
    return MeasurementRecord(
        L=params.L, N_M=params.N_M, t=float(params.t), chi=cfg.chi_max, seed=cfg.seeds[0],
        g1=float(params.g1), eps=float(params.eps), status=f"failed: {type(exc).__name__}: {exc}",
        converged=False,
    )


def _run_chain(task):
    """Worker entry point: a list of points, warm-started in order when asked."""
    points, cfg, warm, done, initial_bytes = task
    out = []
    with threadpool_limits(1):
        previous = checkpoint.loads(initial_bytes) if initial_bytes else None
        for params in points:
            key = (params.L, params.N_M, float(params.t), cfg.chi_max)
            if key in done:
                blob = done[key]
                previous = checkpoint.loads(blob) if (warm and blob) else previous
                continue
            try:
                initial = _retarget(previous, params) if warm and previous is not None else None
                record, blob = solve_point(params, cfg, initial)
            except Exception as exc:  # noqa: BLE001 - recorded as per-point status
                logger.error("point %s failed: %s", params, exc)
                out.append((_failed_record(params, cfg, exc), None))
                continue
            out.append((record, blob))
            if warm:
                previous = checkpoint.loads(blob)
    return out


def _retarget(state, params):
    if (state.L, state.N_M) != (params.L, params.N_M):
        return None
    s = state.copy()
    s.params = params
    return s


def _write_checkpoints(results, directory):
    cdir = os.path.join(directory, "checkpoints")
    os.makedirs(cdir, exist_ok=True)
    for record, blob in results:
        if blob is None:
            continue
        params = ModelParams(t=record.t, L=record.L, N_M=record.N_M, g1=record.g1, eps=record.eps)
        path = os.path.join(cdir, checkpoint_name(params, record.chi, record.seed))
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)


def run_ground(cfg: RunConfig, out=None, resume=None):
    """Single point per configured size; returns ``(records, exit code)``."""
    directory = output_directory(cfg, out)
    initial = checkpoint.load(resume) if resume else None
    results = []
    with threadpool_limits(1):
        for line in cfg.points():
            params = line[0]
            try:
                results.append(solve_point(params, cfg, _retarget(initial, params) if initial else None))
            except Exception as exc:  # noqa: BLE001
                logger.error("ground search failed: %s", exc)
                results.append((_failed_record(params, cfg, exc), None))
    _write_checkpoints(results, directory)
    records, paths = write_records([r for r, _ in results], directory, formats=cfg.formats)
    logger.info("wrote %s", ", ".join(paths))
    ok = all(r.status == "ok" for r, _ in results)
    return [r for r, _ in results], EXIT_OK if ok else EXIT_INCOMPLETE


def run_sweep(cfg: RunConfig, workers=1, out=None, resume=None):
    """All grid points, one worker task per warm-started line (or per point)."""
    if cfg.sweep_param is None:
        raise ValueError("configuration has no [sweep] section")
    directory = output_directory(cfg, out)
    warm = cfg.can_warm_start()
    if cfg.warm_start and not warm:
        logger.info("warm start needs a t/g1/eps sweep; running points independently")
    done = _completed_points(resume, directory, cfg) if resume else {}
    tasks = []
    for line in cfg.points():
        if warm:
            tasks.append((line, cfg, True, done, None))
        else:
            tasks.extend(([p], cfg, False, done, None) for p in line)
    if workers <= 1 or len(tasks) <= 1:
        chunks = [_run_chain(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_chain, tasks))
    results = [item for chunk in chunks for item in chunk]
    _write_checkpoints(results, directory)
    records, paths = write_records([r for r, _ in results], directory, formats=cfg.formats)
    logger.info("wrote %d records to %s", len(records), ", ".join(paths))
    ok = all(r.status == "ok" for r, _ in results)
    return records, EXIT_OK if ok else EXIT_INCOMPLETE


def _completed_points(resume, directory, cfg):
    """Keys already finished in a previous run, mapped to their checkpoint bytes."""
    path = resume if os.path.isfile(resume) else os.path.join(resume, "records.jsonl")
    done = {}
    for rec in read_jsonl(path):
        if rec.status != "ok":
            continue
        params = ModelParams(t=rec.t, L=rec.L, N_M=rec.N_M, g1=rec.g1, eps=rec.eps)
        ck = os.path.join(os.path.dirname(path) or directory, "checkpoints",
                          checkpoint_name(params, rec.chi, rec.seed))
        blob = open(ck, "rb").read() if os.path.exists(ck) else b""
        done[(rec.L, rec.N_M, float(rec.t), rec.chi)] = blob
    logger.info("resuming: %d points already done", len(done))
    return done


# ---------------------------------------------------------------------------
# analysis driver


def load_records(paths):
    recs = []
    for p in paths:
        recs.extend(read_jsonl(p))
    return merge_records(recs)


def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _key_row(rec):
    return {"L": rec.L, "N_M": rec.N_M, "f_M": rec.f_M, "t": rec.t, "chi": rec.chi, "seed": rec.seed}


def _ok(records):
    return [r for r in records if r.status == "ok"]


def analyze(paths, task, k=math.pi, discard_fraction=0.10, window=0.5):
    """Rows of the requested analysis; records are JSON-lines files unless the
    task accepts a plain table (``transition``: L,t,zeta; ``extrapolate``: L,y)."""
    if task not in ANALYSIS_TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {ANALYSIS_TASKS}")
    tables = [p for p in paths if p.endswith(".csv")]
    records = load_records([p for p in paths if not p.endswith(".csv")])
    rows = []
    if task == "central-charge":
        for rec in _ok(records):
            row = _key_row(rec)
            try:
                fit = analysis.fit_central_charge(rec.entropy, rec.L, discard_fraction)
                row.update(fit.as_dict())
                row["k_F_trend"] = float(analysis.fermi_trend_value(rec.f_M))
                row["status"] = "ok"
            except (analysis.DegenerateFitError, analysis.FitError) as exc:
                row["status"] = f"failed: {exc}"
            rows.append(row)
    elif task == "cdw":
        for rec in _ok(records):
            row = _key_row(rec)
            row["k"] = k
            try:
                row["zeta"] = analysis.cdw_order_parameter(rec.density_corr, rec.density, k)
                row["status"] = "ok"
            except ValueError as exc:
                row["status"] = f"failed: {exc}"
            rows.append(row)
    elif task == "xi":
        for rec in _ok(records):
            row = _key_row(rec)
            for prefix, stag in (("", False), ("stag_", True)):
                series = analysis.meson_correlator(rec.meson_corr, window, staggered=stag)
                try:
                    row[prefix + "xi_moment"] = analysis.correlation_length_moment(series)
                except ValueError:
                    row[prefix + "xi_moment"] = float("nan")
                try:
                    fit = analysis.correlation_length_fit(series)
                    row.update({prefix + "a0": fit.a0, prefix + "eta": fit.eta,
                                prefix + "xi_fit": fit.xi, prefix + "xi_lower_bound": fit.lower_bound})
                except analysis.DegenerateFitError:
                    row.update({prefix + "a0": float("nan"), prefix + "eta": float("nan"),
                                prefix + "xi_fit": float("nan"), prefix + "xi_lower_bound": False})
            rows.append(row)
    elif task == "transition":
        rows = _transition_rows(records, tables, k, discard_fraction)
    elif task == "extrapolate":
        rows = _extrapolate_rows(records, tables)
    elif task == "chi-error":
        groups = defaultdict(list)
        for rec in _ok(records):
            groups[(rec.L, rec.N_M, rec.t)].append(rec)
        for (L, N, t), recs in sorted(groups.items()):
            recs.sort(key=lambda r: (r.chi, r.seed))
            if len(recs) < 2:
                continue
            lo, hi = recs[0], recs[-1]
            diff = analysis.chi_discrepancy(lo, hi, k)
            rows.append({"L": L, "N_M": N, "t": t, "chi_a": lo.chi, "chi_b": hi.chi,
                         "d_energy": diff["energy"], "d_zeta": diff["zeta"]})
    return rows


def _transition_rows(records, tables, k, discard_fraction):
    groups = defaultdict(lambda: defaultdict(list))
    for path in tables:
        for row in _read_table(path):
            try:
                groups[row.get("group", "table")][int(row["L"])].append(
                    (float(row["t"]), float(row["zeta"])))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}: transition tables need L,t,zeta columns") from exc
    cpeak = defaultdict(lambda: defaultdict(list))
    for rec in _ok(records):
        group = f"f_M={rec.f_M!r}"
        groups[group][rec.L].append((rec.t, analysis.cdw_order_parameter(rec.density_corr, rec.density, k)))
        try:
            c = analysis.fit_central_charge(rec.entropy, rec.L, discard_fraction).c
            cpeak[group][rec.L].append((rec.t, c))
        except (analysis.DegenerateFitError, analysis.FitError, ValueError):
            pass
    rows = []
    for method, data in (("steepest-slope", groups), ("c-peak", cpeak)):
        for group in sorted(data):
            curves = {L: tuple(zip(*sorted(pts))) for L, pts in data[group].items() if len(pts) >= 3}
            if not curves:
                continue
            est = analysis.locate_transition(curves, method)
            for L, t_star in sorted(est.per_size.items()):
                rows.append({"group": group, "method": method, "L": L, "t_star": t_star,
                             "t_c": "", "uncertainty": ""})
            rows.append({"group": group, "method": method, "L": "inf", "t_star": "",
                         "t_c": est.t_c, "uncertainty": est.uncertainty})
    return rows


def _extrapolate_rows(records, tables):
    groups = defaultdict(list)
    for path in tables:
        for row in _read_table(path):
            groups[row.get("group", "table")].append((float(row["L"]), float(row["y"])))
    for rec in _ok(records):
        groups[f"f_M={rec.f_M!r},t={rec.t!r}"].append((rec.L, rec.energy / rec.L))
    rows = []
    for group, pts in sorted(groups.items()):
        if len({L for L, _ in pts}) < 2:
            continue
        fit = analysis.extrapolate_thermo(sorted(pts))
        rows.append({"group": group, "n": len(pts), "intercept": fit.intercept,
                     "slope": fit.slope, "stderr": fit.stderr})
    return rows


def write_table(rows, path):
    columns = []
    for row in rows:
        for c in row:
            if c not in columns:
                columns.append(c)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(rows, columns))
    os.replace(tmp, path)
    return path


# ---------------------------------------------------------------------------
# exact diagonalization


def run_ed(cfg: RunConfig, levels=4, out=None):
    directory = output_directory(cfg, out)
    spectrum, observables = [], []
    for line in cfg.points():
        for params in line:
            basis, H, w, v = ed.ground_state(params, levels)
            gs = v[:, 0]
            for n, e in enumerate(w):
                spectrum.append({"L": params.L, "N_M": params.N_M, "t": params.t, "g1": params.g1,
                                 "eps": params.eps, "level": n, "energy": float(e)})
            dens = ed.density_profile(basis, gs)
            ent = ed.entropy_profile(basis, gs)
            for j in range(params.L):
                observables.append({"L": params.L, "N_M": params.N_M, "t": params.t, "site": j,
                                    "density": float(dens[j]),
                                    "entropy": float(ent[j]) if j < params.L - 1 else ""})
    paths = [write_table(spectrum, os.path.join(directory, "ed_spectrum.csv")),
             write_table(observables, os.path.join(directory, "ed_observables.csv"))]
    return spectrum, paths

