"""Measurement records and their CSV / JSON-lines serialization."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .analysis import cdw_order_parameter

KEY_FIELDS = ("L", "N_M", "t", "chi", "seed")
CSV_FIELDS = (
    "L", "N_M", "t", "chi", "seed", "g1", "eps", "f_M", "status", "converged",
    "energy", "max_truncation", "entropy_mid", "zeta_pi",
)


@dataclass
class MeasurementRecord:
    """Observables of one ground-state run, keyed by ``(L, N_M, t, chi, seed)``."""

    L: int
    N_M: int
    t: float
    chi: int
    seed: int
    g1: float = 1.0
    eps: float = 5.0
    status: str = "ok"
    converged: bool = True
    energy: float = float("nan")
    max_truncation: float = 0.0
    entropy: list = field(default_factory=list)
    density: list = field(default_factory=list)
    density_corr: list = field(default_factory=list)
    meson_corr: list = field(default_factory=list)
    schmidt: list = field(default_factory=list)

    @property
    def key(self):
        return (self.L, self.N_M, self.t, self.chi, self.seed)

    @property
    def f_M(self):
        return self.N_M / self.L

    def validate(self):
        L = self.L
        if self.status != "ok":
            return self
        if len(self.entropy) != L - 1 or len(self.density) != L:
            raise ValueError(f"profile lengths inconsistent with L={L}")
        for name in ("density_corr", "meson_corr"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (L, L):
                raise ValueError(f"{name} has shape {m.shape}, expected {(L, L)}")
        values = [self.energy, self.max_truncation, *self.entropy, *self.density]
        values += list(np.ravel(self.density_corr)) + list(np.ravel(self.meson_corr))
        if not all(math.isfinite(v) for v in values):
            raise ValueError("record contains non-finite values")
        return self

    def to_json(self):
        return json.dumps(_plain(asdict(self)), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line):
        data = json.loads(line)
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown record fields {sorted(unknown)}")
        return cls(**data)

    def summary(self):
        row = {name: getattr(self, name) for name in CSV_FIELDS if hasattr(self, name)}
        row["f_M"] = self.f_M
        row["entropy_mid"] = self.entropy[(self.L - 1) // 2] if self.entropy else float("nan")
        try:
            row["zeta_pi"] = cdw_order_parameter(self.density_corr, self.density, math.pi)
        except (ValueError, IndexError):
            row["zeta_pi"] = float("nan")
        return row


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def schmidt_to_json(data):
    """``[(label, values)]`` with labels as ``[q, ell]`` lists."""
    return [[list(label), list(map(float, values))] for label, values in sorted(data.spectrum.items())]


def merge_records(*groups):
    """Union of record lists, later entries replacing earlier ones with the same key."""
    merged = {}
    for group in groups:
        for rec in group:
            merged[rec.key] = rec
    return [merged[k] for k in sorted(merged)]


def read_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(MeasurementRecord.from_json(line))
            except (ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from exc
    return out


def _atomic_write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(rows, columns):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(c, "")) for c in columns])
    return buf.getvalue()


def write_records(records, directory, stem="records", formats=("csv", "jsonl"), merge=True):
    """Write (merging with existing files when ``merge``) sorted, de-duplicated records."""
    os.makedirs(directory, exist_ok=True)
    jsonl = os.path.join(directory, f"{stem}.jsonl")
    existing = read_jsonl(jsonl) if merge and os.path.exists(jsonl) else []
    records = merge_records(existing, records)
    paths = []
    if "jsonl" in formats:
        _atomic_write(jsonl, "".join(r.to_json() + "\n" for r in records))
        paths.append(jsonl)
    if "csv" in formats:
        path = os.path.join(directory, f"{stem}.csv")
        _atomic_write(path, csv_text([r.summary() for r in records], CSV_FIELDS))
        paths.append(path)
    return records, paths
