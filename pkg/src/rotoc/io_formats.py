"""Serialization of run configurations, trajectories, and sweep manifests.

CSV is the plotting interchange format (columns t, echo_mantissa,
echo_log10, mean_weight, rotoc, dressed_otoc, optionally b_1..b_N); JSON is
the full-precision archival format and additionally carries the natural-log
mass offsets of the per-weight profiles.  All floats are written with 17
significant digits so values round-trip exactly.

Config files are flat JSON objects keyed like the CLI flags.  Parsing is
strict: unknown keys are rejected, every value is validated with its bound
named, and all defaults are materialized on write-back so a stored config
fully describes its run.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .params import ModelParams, DiluteParams, ObservableRecord, Trajectory, WeightProfile
from .integrate import IntegrationConfig
from .oracle import CircuitConfig

__all__ = [
    "SCHEMA_VERSION",
    "RunConfig",
    "read_config",
    "expand_sweep",
    "config_hash",
    "write_trajectory",
    "read_trajectory",
    "write_manifest",
]

SCHEMA_VERSION = "1.0"

_MODES = ("full", "dilute", "oracle", "metastable", "crossover", "collapse", "sweep")


def _bounded_float(lo=None, hi=None, lo_open=False):
    def check(key, val):
        val = float(val)
        if lo is not None and (val <= lo if lo_open else val < lo):
            op = ">" if lo_open else ">="
            raise ValueError(f"config field '{key}' must be {op} {lo}, got {val}")
        if hi is not None and val > hi:
            raise ValueError(f"config field '{key}' must be <= {hi}, got {val}")
        return val
    return check


def _bounded_int(lo=None, hi=None):
    def check(key, val):
        if isinstance(val, bool) or int(val) != val:
            raise ValueError(f"config field '{key}' must be an integer, got {val!r}")
        val = int(val)
        if lo is not None and val < lo:
            raise ValueError(f"config field '{key}' must be >= {lo}, got {val}")
        if hi is not None and val > hi:
            raise ValueError(f"config field '{key}' must be <= {hi}, got {val}")
        return val
    return check


def _choice(*options):
    def check(key, val):
        if val not in options:
            raise ValueError(f"config field '{key}' must be one of {options}, got {val!r}")
        return val
    return check


def _bool(key, val):
    if not isinstance(val, bool):
        raise ValueError(f"config field '{key}' must be a boolean, got {val!r}")
    return val


def _string(key, val):
    if not isinstance(val, str):
        raise ValueError(f"config field '{key}' must be a string, got {val!r}")
    return val


def _float_list(lo=None, hi=None):
    item = _bounded_float(lo, hi)
    def check(key, val):
        if not isinstance(val, (list, tuple)) or not val:
            raise ValueError(f"config field '{key}' must be a non-empty list")
        return [item(key, v) for v in val]
    return check


_REQUIRED = object()

_COMMON = {
    "format": ("csv", _choice("csv", "json")),
    "out": (None, _string),
    "jobs": (1, _bounded_int(lo=1)),
    "include_profiles": (False, _bool),
}

_INTEGRATION = {
    "tmax": (10.0, _bounded_float(lo=0.0, lo_open=True)),
    "points": (101, _bounded_int(lo=2)),
    "rel_tol": (1e-8, _bounded_float(lo=0.0, lo_open=True)),
    "abs_tol": (1e-12, _bounded_float(lo=0.0, lo_open=True)),
}

_R_P = {
    "r": (None, _bounded_float(lo=0.0, hi=1.0)),
    "p": (None, _bounded_float(lo=0.0, hi=1.0)),
}

_SCHEMAS: dict[str, dict] = {
    "full": {
        **_COMMON, **_INTEGRATION, **_R_P,
        "N": (_REQUIRED, _bounded_int(lo=2)),
        "kappa": (0.0, _bounded_float(lo=0.0)),
        "w0": (1, _bounded_int(lo=1)),
        "gamma": (1.0, _bounded_float(lo=0.0, lo_open=True)),
    },
    "dilute": {
        **_COMMON, **_INTEGRATION, **_R_P,
        "N": (None, _bounded_int(lo=2)),
        "Ncut": (None, _bounded_int(lo=2)),
        "kappa": (0.0, _bounded_float(lo=0.0)),
        "w0": (1, _bounded_int(lo=1)),
        "gamma": (1.0, _bounded_float(lo=0.0, lo_open=True)),
    },
    "oracle": {
        **_COMMON, **_R_P,
        "N": (5, _bounded_int(lo=2, hi=6)),
        "kappa": (0.0, _bounded_float(lo=0.0)),
        "tmax": (3.0, _bounded_float(lo=0.0, lo_open=True)),
        "dt": (0.01, _bounded_float(lo=0.0, hi=0.05, lo_open=True)),
        "samples": (500, _bounded_int(lo=100)),
        "seed": (0, _bounded_int(lo=0)),
        "points": (10, _bounded_int(lo=1)),
    },
    "metastable": {
        **_COMMON, **_INTEGRATION,
        "Ncut": (_REQUIRED, _bounded_int(lo=2)),
        "Neff": (_REQUIRED, _float_list(lo=2.0)),
        "r": (0.8, _bounded_float(lo=0.0, hi=1.0)),
        "w0": (10, _bounded_int(lo=1)),
        "tol": (0.02, _bounded_float(lo=0.0, hi=1.0, lo_open=True)),
        "tmax": (25.0, _bounded_float(lo=0.0, lo_open=True)),
    },
    "crossover": {
        **_COMMON,
        "T": (None, _bounded_float(lo=0.0, lo_open=True)),
        "wmax": (None, _bounded_float(lo=1.0, lo_open=True)),
        "N": (None, _bounded_int(lo=2)),
        "solver": ("both", _choice("exact", "asymptotic", "both")),
    },
    "collapse": {
        **_COMMON,
        "r_values": (_REQUIRED, _float_list(lo=0.0, hi=1.0)),
        "r_crit": (_REQUIRED, _bounded_float(lo=0.0, hi=1.0, lo_open=True)),
        "T": (5.0, _bounded_float(lo=0.0, lo_open=True)),
        "points": (101, _bounded_int(lo=2)),
    },
    "sweep": {
        **_COMMON, **_INTEGRATION,
        "base": ("dilute", _choice("dilute", "full")),
        "r_values": (_REQUIRED, _float_list(lo=0.0, hi=1.0)),
        "kappa_values": ([0.0], _float_list(lo=0.0)),
        "N": (None, _bounded_int(lo=2)),
        "Ncut": (None, _bounded_int(lo=2)),
        "w0": (1, _bounded_int(lo=1)),
        "gamma": (1.0, _bounded_float(lo=0.0, lo_open=True)),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """A validated, fully materialized run description."""

    mode: str
    values: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if "mode" not in raw:
            raise ValueError("config is missing required field 'mode'")
        mode = raw["mode"]
        if mode not in _MODES:
            raise ValueError(f"config field 'mode' must be one of {_MODES}, got {mode!r}")
        schema = _SCHEMAS[mode]
        unknown = set(raw) - set(schema) - {"mode", "schema_version"}
        if unknown:
            raise ValueError(f"unknown config field(s) for mode '{mode}': "
                             + ", ".join(sorted(unknown)))
        values = {}
        for key, (default, check) in schema.items():
            if key in raw and raw[key] is not None:
                values[key] = check(key, raw[key])
            elif default is _REQUIRED:
                raise ValueError(f"mode '{mode}' requires config field '{key}'")
            else:
                values[key] = default
        if "r" in schema and values.get("r") is not None and values.get("p") is not None:
            raise ValueError("config fields 'r' and 'p' are mutually exclusive")
        return cls(mode, values)

    def get(self, key):
        return self.values[key]

    def correlation(self) -> float:
        """Resolve r from either the r field or the p field (default 1)."""
        from .params import correlation_from_perturbation
        if self.values.get("r") is not None:
            return self.values["r"]
        if self.values.get("p") is not None:
            return correlation_from_perturbation(self.values["p"])
        return 1.0

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION, "mode": self.mode}
        out.update(self.values)
        return out

    def model_params(self) -> ModelParams:
        if self.mode not in ("full", "sweep"):
            raise ValueError(f"mode '{self.mode}' has no full-model parameters")
        return ModelParams(n_qubits=self.get("N"), correlation=self.correlation(),
                           noise_rate=self.get("kappa"), gamma=self.get("gamma"))

    def dilute_params(self) -> DiluteParams:
        return DiluteParams(correlation=self.correlation(),
                            noise_rate=self.get("kappa"),
                            initial_weight=self.get("w0"))

    def integration_config(self) -> IntegrationConfig:
        tmax = self.get("tmax")
        samples = np.linspace(0.0, tmax, self.get("points"))
        return IntegrationConfig(rel_tol=self.get("rel_tol"), abs_tol=self.get("abs_tol"),
                                 t_max=tmax, sample_times=samples)

    def circuit_config(self) -> CircuitConfig:
        if self.mode != "oracle":
            raise ValueError(f"mode '{self.mode}' has no circuit parameters")
        kw = dict(n_qubits=self.get("N"), total_time=self.get("tmax"), dt=self.get("dt"),
                  noise_rate=self.get("kappa"), n_samples=self.get("samples"),
                  seed=self.get("seed"))
        if self.values.get("p") is not None:
            kw["perturbation"] = self.values["p"]
        else:
            kw["correlation"] = self.correlation()
        return CircuitConfig(**kw)


def read_config(path: str) -> RunConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON at line {exc.lineno}, "
                             f"column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(raw)


def expand_sweep(cfg: RunConfig) -> list[RunConfig]:
    """Cartesian product of the r and kappa grids, in the given order
    (r outer, kappa inner)."""
    if cfg.mode != "sweep":
        raise ValueError("expand_sweep requires a sweep-mode config")
    base = cfg.get("base")
    runs = []
    for r in cfg.get("r_values"):
        for kappa in cfg.get("kappa_values"):
            raw = {"mode": base, "r": r, "kappa": kappa}
            for key in ("N", "Ncut", "w0", "gamma", "tmax", "points",
                        "rel_tol", "abs_tol", "format", "jobs", "include_profiles"):
                if key in _SCHEMAS[base] and cfg.values.get(key) is not None:
                    raw[key] = cfg.values[key]
            runs.append(RunConfig.from_dict(raw))
    return runs


def config_hash(cfg: RunConfig) -> str:
    """Deterministic short hash of a materialized config (used to name
    sweep output files)."""
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


_CSV_COLUMNS = ("t", "echo_mantissa", "echo_log10", "mean_weight", "rotoc", "dressed_otoc")


def write_trajectory(traj: Trajectory, path: str, fmt: str = "csv",
                     include_profiles: bool = False,
                     extra_columns: dict[str, np.ndarray] | None = None) -> None:
    """Write a trajectory as CSV or JSON (schema above).

    ``include_profiles`` adds the per-weight columns b_1..b_N (mantissas;
    combine with the echo_log10 offset for absolute values).  Gated because
    wide profiles at many sample times dominate file size.
    ``extra_columns`` appends named per-time columns (e.g. a closed-form
    prediction next to the integrated curve).
    """
    if include_profiles and traj.profiles is None:
        raise ValueError("trajectory carries no profiles to write")
    extra = extra_columns or {}
    for name, col in extra.items():
        if name.startswith("b_"):
            raise ValueError("extra column names must not collide with b_w columns")
        if len(col) != len(traj):
            raise ValueError(f"extra column {name!r} has wrong length")
    if fmt == "csv":
        _write_csv(traj, path, include_profiles, extra)
    elif fmt == "json":
        _write_json(traj, path, include_profiles, extra)
    else:
        raise ValueError(f"unknown trajectory format {fmt!r}")


def _write_csv(traj, path, include_profiles, extra):
    header = list(_CSV_COLUMNS) + list(extra)
    if include_profiles:
        header += [f"b_{w}" for w in range(1, traj.profiles[0].n + 1)]
    lines = [",".join(header)]
    for i, (t, o) in enumerate(zip(traj.times, traj.observables)):
        row = [_fmt(t), _fmt(o.echo_mantissa), _fmt(o.echo_log10),
               _fmt(o.mean_weight), _fmt(o.rotoc), _fmt(o.dressed_otoc)]
        row += [_fmt(col[i]) for col in extra.values()]
        if include_profiles:
            row += [_fmt(v) for v in traj.profiles[i].values]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_json(traj, path, include_profiles, extra):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "times": [float(t) for t in traj.times],
        "observables": [
            {"echo_mantissa": o.echo_mantissa, "echo_log10": o.echo_log10,
             "mean_weight": o.mean_weight, "rotoc": o.rotoc,
             "dressed_otoc": o.dressed_otoc}
            for o in traj.observables
        ],
    }
    if extra:
        doc["extra_columns"] = {name: [float(v) for v in col] for name, col in extra.items()}
    if include_profiles:
        doc["profiles"] = {
            "values": [[float(v) for v in p.values] for p in traj.profiles],
            "log_mass_offset": [p.log_mass_offset for p in traj.profiles],
        }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _major(version: str) -> int:
    return int(str(version).split(".")[0])


def read_trajectory(path: str) -> Trajectory:
    """Read back a trajectory written by :func:`write_trajectory`.

    CSV files without b_w columns (and JSON without a profiles section)
    yield ``profiles=None``.
    """
    if path.endswith(".json"):
        with open(path) as fh:
            doc = json.load(fh)
        if _major(doc.get("schema_version", SCHEMA_VERSION)) > _major(SCHEMA_VERSION):
            raise ValueError(f"{path}: schema version {doc['schema_version']} "
                             f"is newer than supported {SCHEMA_VERSION}")
        times = np.array(doc["times"])
        records = tuple(ObservableRecord(**o) for o in doc["observables"])
        profiles = None
        if "profiles" in doc:
            profiles = tuple(
                WeightProfile(np.array(vals), off)
                for vals, off in zip(doc["profiles"]["values"],
                                     doc["profiles"]["log_mass_offset"]))
        return Trajectory(times, profiles, records)

    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    header = lines[0].split(",")
    if header[:len(_CSV_COLUMNS)] != list(_CSV_COLUMNS):
        raise ValueError(f"{path}: unrecognized CSV header")
    b_cols = [i for i, name in enumerate(header) if name.startswith("b_")]
    b_start = b_cols[0] if b_cols else None
    times, records, profiles = [], [], []
    ln10 = math.log(10.0)
    for ln in lines[1:]:
        vals = [float(x) for x in ln.split(",")]
        times.append(vals[0])
        records.append(ObservableRecord(*vals[1:6]))
        if b_start is not None:
            profiles.append(WeightProfile(np.array(vals[b_start:]), vals[2] * ln10))
    return Trajectory(np.array(times), tuple(profiles) if b_start is not None else None,
                      tuple(records))


def write_manifest(path: str, entries: list[dict]) -> None:
    """Write a sweep manifest: one record per produced file with its exact
    materialized config."""
    doc = {"schema_version": SCHEMA_VERSION, "runs": entries}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
