"""Experiment specification, presets, sweep execution and artifact writing."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy
import yaml

from . import __version__
from .airlink import (
    PRECODERS,
    BerReport,
    LinkConfig,
    check_precoders,
    complex_normal,
    measure_ber,
    substream,
)
from .errors import InvalidInputError
from .fabric import (
    ClusterPartition,
    LatencyModel,
    MessageLedger,
    WorkloadShape,
    ledger_summary,
    message_volumes,
    run_fd_wf,
    run_pd_wf,
)
from .precoding import DEFAULT_TAU, PrecoderConfig

log = logging.getLogger(__name__)

BER_COLUMNS = ("precoder", "snr_db", "trials", "bit_errors", "bits_total", "ber")
SCHEMAS = {"ber.csv": "ber/1", "ledger_*.csv": "ledger/1", "manifest.json": "manifest/1"}
SNR_DEFINITION = "SNR = rho^2 / N0 (total transmit power over per-entry complex noise variance)"
DECENTRALIZED = ("pd-wf", "fd-wf")


@dataclass(frozen=True)
class ExperimentSpec:
    precoders: tuple[str, ...] = ("central-wf", "pd-wf", "fd-wf", "mrt")
    bs_antennas: int = 256
    users: int = 16
    clusters: int = 8
    cluster_sizes: tuple[int, ...] | None = None
    snr_start: float = 0.0
    snr_stop: float = 20.0
    snr_step: float = 2.0
    trials: int = 1000
    tau: float = DEFAULT_TAU
    order: int = 64
    nsc: int = 1200
    slots: int = 7
    ber_subcarriers: int = 1
    seed: int = 0
    out_dir: str = "results"
    workers: int = 1
    fabric_mode: str = "serial"
    tree_broadcast: bool = False
    latency_alpha: float | None = None
    latency_per_byte: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "precoders", tuple(self.precoders))
        if self.cluster_sizes is not None:
            object.__setattr__(self, "cluster_sizes", tuple(int(b) for b in self.cluster_sizes))

    @property
    def sizes(self) -> tuple[int, ...]:
        if self.cluster_sizes is not None:
            return self.cluster_sizes
        return ClusterPartition.equal(self.bs_antennas, self.clusters).sizes

    @property
    def snr_grid(self) -> list[float]:
        if self.snr_step <= 0:
            raise InvalidInputError(f"snr step must be > 0, got {self.snr_step}")
        grid = np.arange(self.snr_start, self.snr_stop + self.snr_step / 2, self.snr_step)
        return [round(float(v), 9) for v in grid]

    def validate(self) -> "ExperimentSpec":
        if not self.precoders:
            raise InvalidInputError("no precoders selected; pass --precoder at least once")
        if self.cluster_sizes is not None:
            if len(self.cluster_sizes) != self.clusters:
                raise InvalidInputError(
                    f"{len(self.cluster_sizes)} cluster sizes given for C={self.clusters}"
                )
            if sum(self.cluster_sizes) != self.bs_antennas:
                raise InvalidInputError(
                    f"cluster sizes sum to {sum(self.cluster_sizes)}, B={self.bs_antennas}"
                )
        ClusterPartition(self.sizes)
        check_precoders(self.precoders, self.users, self.sizes)
        if self.trials < 1:
            raise InvalidInputError("trials must be >= 1")
        if self.snr_stop < self.snr_start:
            raise InvalidInputError("snr stop is below snr start")
        if self.workers < 1:
            raise InvalidInputError("workers must be >= 1")
        if self.fabric_mode not in ("serial", "threaded"):
            raise InvalidInputError(f"unknown fabric mode {self.fabric_mode!r}")
        WorkloadShape(self.nsc, self.slots)
        self.link()
        return self

    def link(self) -> LinkConfig:
        return LinkConfig(
            users=self.users,
            cluster_sizes=self.sizes,
            order=self.order,
            tau=self.tau,
            n_subcarriers=self.ber_subcarriers,
            n_slots=self.slots,
            seed=self.seed,
            fabric_mode=self.fabric_mode,
        )

    def latency_model(self) -> LatencyModel | None:
        if self.latency_alpha is None and self.latency_per_byte is None:
            return None
        return LatencyModel(self.latency_alpha or 0.0, self.latency_per_byte or 0.0)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["precoders"] = list(self.precoders)
        d["cluster_sizes"] = list(self.sizes)
        return d

    def spec_hash(self) -> str:
        """Hash of everything that affects results (output location and worker count excluded)."""
        d = self.to_dict()
        for key in ("out_dir", "workers", "fabric_mode"):
            d.pop(key)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _preset(B: int, C: int) -> dict:
    return {"bs_antennas": B, "clusters": C, "users": 16, "order": 64, "trials": 1000,
            "precoders": ("central-wf", "pd-wf", "fd-wf", "mrt")}


PRESETS: dict[str, dict] = {
    "fig2a": _preset(256, 2),
    "fig2b": _preset(256, 4),
    "fig2c": _preset(256, 8),
    "fig2d": _preset(64, 2),
    "fig2e": _preset(128, 4),
    "fig2f": _preset(256, 8),
}

FIELD_NAMES = {f.name for f in dataclasses.fields(ExperimentSpec)}
_SECTIONS = ("system", "run", "workload", "output", "fabric")


def flatten_config(data: dict) -> dict:
    """Map a nested config mapping onto ``ExperimentSpec`` field names.

    Sections ``system``/``run``/``workload``/``output``/``fabric`` are pure
    namespaces; ``snr: {start, stop, step}`` and ``latency: {alpha, per_byte}``
    become ``snr_start`` etc.
    """
    flat: dict[str, Any] = {}
    for key, value in (data or {}).items():
        if key in _SECTIONS and isinstance(value, dict):
            flat.update(flatten_config(value))
        elif key in ("snr", "latency") and isinstance(value, dict):
            flat.update({f"{key}_{k}": v for k, v in value.items()})
        else:
            flat[key] = value
    unknown = set(flat) - FIELD_NAMES
    if unknown:
        raise InvalidInputError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return flat


def load_config(path: str | Path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise InvalidInputError(f"config {path} must be a mapping")
    return flatten_config(data or {})


def build_spec(preset: str | None = None, config: dict | None = None, **overrides) -> ExperimentSpec:
    """Preset, then config file values, then explicit overrides (``None`` means unset)."""
    values: dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise InvalidInputError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        values.update(PRESETS[preset])
    explicit = dict(config or {})
    explicit.update({k: v for k, v in overrides.items() if v is not None})
    values.update(explicit)
    if values.get("cluster_sizes") and "clusters" not in explicit:
        values["clusters"] = len(values["cluster_sizes"])
    try:
        return ExperimentSpec(**values).validate()
    except TypeError as exc:
        raise InvalidInputError(str(exc)) from exc


# -- ledgers ----------------------------------------------------------------


def ledger_runs(spec: ExperimentSpec) -> dict[str, MessageLedger]:
    """Run each decentralized precoder of ``spec`` on one random frame and return its ledger."""
    part = ClusterPartition(spec.sizes)
    shape = WorkloadShape(spec.nsc, spec.slots)
    link = spec.link()
    rng = substream(spec.seed, 2**31 - 1)
    H = complex_normal((shape.n_subcarriers, spec.users, spec.bs_antennas), rng)
    idx = rng.integers(0, link.constellation.order, size=(shape.n_subcarriers, shape.n_slots, spec.users))
    symbols = link.constellation.points[idx]
    # message sizes do not depend on the noise level
    cfg = PrecoderConfig(spec.users, spec.bs_antennas, noise_var=0.1, tau=spec.tau)
    runs = {"pd-wf": run_pd_wf, "fd-wf": run_fd_wf}
    ledgers = {}
    for p in spec.precoders:
        if p in runs:
            ledger = MessageLedger()
            runs[p](H, part, cfg, symbols, ledger, mode=spec.fabric_mode,
                    tree_broadcast=spec.tree_broadcast)
            ledgers[p] = ledger
    return ledgers


def compare_ledgers(spec: ExperimentSpec, ledgers: dict[str, MessageLedger] | None = None) -> list[dict]:
    """Measured vs closed-form inter-cluster message volume, one row per (precoder, kind)."""
    if not any(p in DECENTRALIZED for p in spec.precoders):
        raise InvalidInputError("ledger comparison needs pd-wf or fd-wf among the precoders")
    ledgers = ledger_runs(spec) if ledgers is None else ledgers
    closed = message_volumes(WorkloadShape(spec.nsc, spec.slots), spec.users,
                             ClusterPartition(spec.sizes))
    rows = []
    for p, ledger in ledgers.items():
        for kind, expected in closed[p].items():
            measured = ledger.total() if kind == "total" else ledger.total(kind)
            rows.append({"precoder": p, "payload_kind": kind, "measured": measured,
                         "closed_form": expected, "match": measured == expected})
    return rows


def format_table(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in cols}
    lines = ["  ".join(c.ljust(widths[c]) for c in cols)]
    lines += ["  ".join(str(r[c]).ljust(widths[c]) for c in cols) for r in rows]
    return "\n".join(lines)


# -- experiment -------------------------------------------------------------


def ber_csv(reports: list[BerReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BER_COLUMNS)
    for r in reports:
        if r.error is not None:
            continue
        writer.writerow([r.precoder, repr(r.snr_db), r.trials, r.bit_errors, r.bits_total,
                         repr(r.ber)])
    return buf.getvalue()


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    reports: list[BerReport]
    ledger_rows: list[dict]
    failures: list[dict]
    paths: dict[str, Path] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def run_experiment(spec: ExperimentSpec, write: bool = True) -> ExperimentResult:
    """Run the BER sweep and ledger comparison; write CSV/JSON artifacts.

    Numerical failures at individual (precoder, SNR) points are recorded in
    the manifest and the row is left out of ``ber.csv``; the sweep carries on.
    """
    spec.validate()
    log.info("BER sweep: %s, B=%d U=%d C=%d, %d trials", ",".join(spec.precoders),
             spec.bs_antennas, spec.users, len(spec.sizes), spec.trials)
    reports = measure_ber(spec.precoders, spec.link(), spec.snr_grid, spec.trials,
                          workers=spec.workers)
    failures = [{"precoder": r.precoder, "snr_db": r.snr_db, "error": r.error}
                for r in reports if r.error is not None]

    ledgers: dict[str, MessageLedger] = {}
    ledger_rows: list[dict] = []
    if any(p in DECENTRALIZED for p in spec.precoders):
        ledgers = ledger_runs(spec)
        ledger_rows = compare_ledgers(spec, ledgers)

    result = ExperimentResult(spec, reports, ledger_rows, failures)
    if write:
        _write_artifacts(result, ledgers)
    return result


def _write_artifacts(result: ExperimentResult, ledgers: dict[str, MessageLedger]):
    spec = result.spec
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"ber": out / "ber.csv"}
    paths["ber"].write_text(ber_csv(result.reports))
    latency = spec.latency_model()
    ledger_info = {}
    for p, ledger in ledgers.items():
        paths[f"ledger_{p}_csv"] = out / f"ledger_{p}.csv"
        paths[f"ledger_{p}_json"] = out / f"ledger_{p}.json"
        paths[f"ledger_{p}_csv"].write_text(ledger.to_csv())
        paths[f"ledger_{p}_json"].write_text(ledger.to_json() + "\n")
        ledger_info[p] = {"summary": ledger_summary(ledger)}
        if latency is not None:
            ledger_info[p]["critical_path_latency_s"] = ledger.critical_path_latency(latency)
    manifest = {
        "schema": SCHEMAS["manifest.json"],
        "schemas": SCHEMAS,
        "spec": spec.to_dict(),
        "spec_hash": spec.spec_hash(),
        "seed": spec.seed,
        "snr_definition": SNR_DEFINITION,
        "versions": {
            "ffprecode": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "ber_columns": list(BER_COLUMNS),
        "failures": result.failures,
        "ledgers": ledger_info,
        "ledger_check": result.ledger_rows,
    }
    paths["manifest"] = out / "manifest.json"
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    result.paths = paths


__all__ = [
    "ExperimentResult",
    "ExperimentSpec",
    "PRECODERS",
    "PRESETS",
    "build_spec",
    "compare_ledgers",
    "load_config",
    "run_experiment",
]
