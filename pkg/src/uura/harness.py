"""Monte Carlo experiment runner, metrics, configuration and CSV output."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import rng as rngmod
from .baselines import build_profile, coupled_decode, tree_encode, uura_sd_decode
from .decoder import PenaltyConfig, decode_session
from .errors import ConfigError
from .ml_detector import DetectionConfig
from .system import Message, SystemConfig, Trial, simulate_trial

__all__ = [
    "SCHEMES",
    "CSV_COLUMNS",
    "ExperimentSpec",
    "TrialRecord",
    "MetricsReport",
    "ExperimentResult",
    "TraceRow",
    "TraceResult",
    "compute_pmd_pfa",
    "compute_der",
    "resolve_field",
    "spec_from_dict",
    "load_spec",
    "run_trial",
    "run_trials",
    "write_csv",
    "mse_trace_experiment",
]

log = logging.getLogger(__name__)

SCHEMES = ("integrated", "separate", "coupled")
CSV_COLUMNS = ("sweep_value", "trial", "p_md", "p_fa", "der", "iterations", "wall_clock")

_SECTIONS = {
    "system": SystemConfig,
    "penalties": PenaltyConfig,
    "detection": DetectionConfig,
}
_ALIASES = {
    "n0": "codeword_length",
    "m": "antennas",
    "j": "subblock_bits",
    "l": "subslots",
    "k_a": "active_users",
    "k_tot": "total_users",
    "b": "message_bits",
    "sub_block_bits": "subblock_bits",
    "sub_slots": "subslots",
    "first_sub_slot_snr_db": "first_subslot_snr_db",
    "snr_db": "target_snr_db",
    "sigma2": "noise_variance",
    "convergence_tol": "tolerance",
    "eta": "step_size",
    "t_iter": "max_iterations",
}


def _snake(name: str) -> str:
    s = re.sub(r"(?<=[a-z0-9])([A-Z])", r"_\1", name).lower()
    return _ALIASES.get(s, s)


def resolve_field(name: str) -> tuple[str, str]:
    """Map a (snake_case or camelCase) parameter name to ``(section, field)``."""
    key = _snake(name)
    for section, cls in _SECTIONS.items():
        if key in {f.name for f in dataclasses.fields(cls)}:
            return section, key
    raise ConfigError(f"unknown config field {name!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one experiment.

    ``sweep`` is ``(field, values)``; every value reuses the same trial
    indices, so sweep points are compared on matched random draws.
    ``coupled_subslots`` is the tree code's sub-slot count (default ``4 L``).
    The CSV ``wall_clock`` column stays empty unless ``record_wall_clock`` is
    set, which keeps the CSV byte-identical across runs.
    """

    system: SystemConfig = field(default_factory=SystemConfig)
    penalties: PenaltyConfig = field(default_factory=PenaltyConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    scheme: str = "integrated"
    trials: int = 10
    sweep: tuple[str, tuple[float, ...]] | None = None
    output_path: str | None = None
    report_path: str | None = None
    workers: int = 1
    coupled_subslots: int | None = None
    record_wall_clock: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.sweep is not None:
            name, values = self.sweep
            resolve_field(name)
            if len(values) == 0:
                raise ConfigError("sweep needs at least one value")
            # build every swept config now so bad values fail before any trial runs
            for v in values:
                self.configured(v)

    @property
    def sweep_values(self) -> tuple:
        return tuple(self.sweep[1]) if self.sweep else (None,)

    def configured(self, value=None) -> "ExperimentSpec":
        """Copy with the sweep field set to ``value`` and the sweep removed."""
        if self.sweep is None or value is None:
            return self
        section, name = resolve_field(self.sweep[0])
        cfg = getattr(self, section)
        ftype = {f.name: f.type for f in dataclasses.fields(cfg)}[name]
        if "int" in str(ftype) and "float" not in str(ftype):
            if float(value) != int(value):
                raise ConfigError(f"{name} needs an integer, got {value}")
            value = int(value)
        changes = {name: value}
        if section == "system" and name in ("subslots", "subblock_bits"):
            l = value if name == "subslots" else cfg.subslots
            j = value if name == "subblock_bits" else cfg.subblock_bits
            changes["message_bits"] = l * j
        try:
            new = dataclasses.replace(cfg, **changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return dataclasses.replace(self, **{section: new, "sweep": None})

    @property
    def threshold(self) -> float:
        return self.detection.resolve_threshold(self.system.reference_gain)


@dataclass
class TrialRecord:
    sweep_value: Any
    trial: int
    p_md: float
    p_fa: float
    der: float
    iterations: float
    wall_clock: float
    misses: int = 0
    false_alarms: int = 0
    recovered: int = 0
    k_hat: int = 0
    mse_traces: list[list[float]] | None = None


@dataclass
class MetricsReport:
    p_md: float
    p_fa: float
    der_first_subslot: float
    mean_iterations: float
    wall_clock: float
    trials: int
    mse_traces: list | None = None

    @property
    def error_probability(self) -> float:
        return self.p_md + self.p_fa

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["error_probability"] = self.error_probability
        if d["mse_traces"] is None:
            del d["mse_traces"]
        return d


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    records: list[TrialRecord]
    reports: dict[Any, MetricsReport]

    def report(self, value=None) -> MetricsReport:
        return self.reports[value]


def compute_pmd_pfa(truth: Sequence[Message], recovered: Iterable[Message]) -> tuple[float, float]:
    """Per-user misdetection and false-alarm fractions (exact message match)."""
    truth_set = set(truth)
    if not truth_set:
        raise ConfigError("at least one transmitted message is required")
    rec = set(recovered)
    p_md = len(truth_set - rec) / len(truth_set)
    p_fa = len(rec - truth_set) / len(rec) if rec else 0.0
    return p_md, p_fa


def _first_slot_errors(true_active, detected) -> tuple[int, int]:
    t, d = set(map(int, true_active)), set(map(int, detected))
    return len(t - d), len(d - t)


def compute_der(active_users: int, errors: Sequence[tuple[int, int]]) -> float:
    """Sub-slot 1 detection error rate: ``sum(misses + false) / (trials * K_a)``.

    ``errors`` holds one ``(misses, false_alarms)`` pair per trial.
    """
    if not errors:
        raise ConfigError("at least one trial is required")
    total = sum(m + f for m, f in errors)
    return total / (len(errors) * active_users)


def _profile(spec: ExperimentSpec):
    s = spec.system
    lc = spec.coupled_subslots or 4 * s.subslots
    return build_profile(s.message_bits, s.subblock_bits, lc, seed=s.seed)


def _simulate(spec: ExperimentSpec, trial: int, antennas: int | None = None) -> Trial:
    encoder = None
    if spec.scheme == "coupled":
        profile = _profile(spec)
        encoder = lambda bits: tree_encode(bits, profile)  # noqa: E731
    return simulate_trial(spec.system, trial, encoder=encoder, antennas=antennas)


def _decode(spec: ExperimentSpec, tr: Trial, truths=None):
    s = spec.system
    c = tr.codebook
    if spec.scheme == "integrated":
        res = decode_session(tr.signals, c, s.noise_variance, spec.penalties, spec.detection,
                             threshold=spec.threshold, subblock_bits=s.subblock_bits,
                             first_subslot_boost=s.first_subslot_boost, truths=truths,
                             rng=rngmod.stream(s.seed, "decoder", tr.trial_index))
        iters = float(np.mean(res.iterations)) if res.iterations else 0.0
        traces = [r.truth_mse_trace for r in res.subslots[1:]] if truths is not None else None
        return res.messages, res.first_active, iters, traces
    if spec.scheme == "separate":
        res = uura_sd_decode(tr.signals, c, s.noise_variance, spec.detection,
                             threshold=spec.threshold, subblock_bits=s.subblock_bits,
                             first_subslot_boost=s.first_subslot_boost,
                             rng=rngmod.stream(s.seed, "kmeans", tr.trial_index))
        iters = float(np.mean([r.iterations for r in res.subslots]))
        return res.messages, res.first_active, iters, None
    messages, detected, _ = coupled_decode(tr.signals, c, _profile(spec), s.active_users)
    return messages, detected[0], 0.0, None


def run_trial(spec: ExperimentSpec, value, trial: int) -> TrialRecord:
    """Simulate and decode trial ``trial`` at sweep point ``value``."""
    sp = spec.configured(value)
    start = time.monotonic()
    if spec.sweep is not None and resolve_field(spec.sweep[0]) == ("system", "antennas"):
        # draw at the largest array and keep the first M antennas: matched channels across M
        big = int(max(spec.sweep[1]))
        tr = _simulate(sp, trial, antennas=big)
        m = sp.system.antennas
        tr = dataclasses.replace(tr, signals=[y[:, :m] for y in tr.signals])
    else:
        tr = _simulate(sp, trial)
    messages, first, iters, traces = _decode(sp, tr)
    elapsed = time.monotonic() - start
    p_md, p_fa = compute_pmd_pfa(tr.truth.messages, messages)
    misses, fas = _first_slot_errors(tr.truth.active[0], first)
    der = (misses + fas) / sp.system.active_users
    recovered = len(set(messages) & set(tr.truth.messages))
    return TrialRecord(value, trial, p_md, p_fa, der, iters, elapsed, misses, fas,
                       recovered, len(first), traces)


def _run_one(args):
    spec, value, trial = args
    return run_trial(spec, value, trial)


def _aggregate(spec: ExperimentSpec, records: list[TrialRecord]) -> MetricsReport:
    k = spec.system.active_users
    return MetricsReport(
        p_md=math.fsum(r.p_md for r in records) / len(records),
        p_fa=math.fsum(r.p_fa for r in records) / len(records),
        der_first_subslot=compute_der(k, [(r.misses, r.false_alarms) for r in records]),
        mean_iterations=math.fsum(r.iterations for r in records) / len(records),
        wall_clock=math.fsum(r.wall_clock for r in records),
        trials=len(records),
    )


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(records: Sequence[TrialRecord], dest, *, wall_clock: bool = False) -> str:
    """Write the per-trial CSV (RFC 4180, CRLF line ends) and return its text.

    ``dest`` may be a path, a text stream or ``None``.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([_fmt(r.sweep_value), str(r.trial), _fmt(r.p_md), _fmt(r.p_fa), _fmt(r.der),
                    _fmt(r.iterations), _fmt(r.wall_clock) if wall_clock else ""])
    text = buf.getvalue()
    if isinstance(dest, (str, Path)):
        Path(dest).parent.mkdir(parents=True, exist_ok=True)
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    elif dest is not None:
        dest.write(text)
    return text


def run_trials(spec: ExperimentSpec) -> ExperimentResult:
    """Run every (sweep value, trial) pair and aggregate per sweep value.

    Work is spread over ``spec.workers`` processes; records are sorted back
    into (sweep value, trial) order before aggregation, so results do not
    depend on scheduling.
    """
    jobs = [(spec, v, t) for v in spec.sweep_values for t in range(spec.trials)]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            records = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * spec.workers))))
    else:
        records = [_run_one(j) for j in jobs]
    order = {v: i for i, v in enumerate(spec.sweep_values)}
    records.sort(key=lambda r: (order[r.sweep_value], r.trial))
    reports = {}
    for v in spec.sweep_values:
        recs = [r for r in records if r.sweep_value == v]
        reports[v] = _aggregate(spec, recs)
        log.info("%s=%s: P_md=%.4f P_fa=%.4f DER=%.4f", spec.sweep[0] if spec.sweep else "-",
                 v, reports[v].p_md, reports[v].p_fa, reports[v].der_first_subslot)
    if spec.output_path:
        write_csv(records, spec.output_path, wall_clock=spec.record_wall_clock)
    if spec.report_path:
        payload = {
            "scheme": spec.scheme,
            "sweep_field": spec.sweep[0] if spec.sweep else None,
            "points": [dict(sweep_value=v, **reports[v].to_dict()) for v in spec.sweep_values],
        }
        Path(spec.report_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return ExperimentResult(spec, records, reports)


@dataclass
class TraceRow:
    antennas: int
    mean_iterations: float
    final_mse: float


@dataclass
class TraceResult:
    rows: list[TraceRow]
    iterations: np.ndarray
    """``(trials, len(antennas))`` mean proximal iterations per trial."""
    final_mse: np.ndarray
    traces: list[list[list[list[float]]]]
    """``traces[trial][m][subslot]`` is the MSE-vs-truth trace."""

    def ordered_fraction(self) -> float:
        """Share of trials whose iterations do not increase with the antenna count."""
        it = self.iterations
        ok = np.all(np.diff(it, axis=1) <= 0, axis=1)
        return float(ok.mean())


def mse_trace_experiment(spec: ExperimentSpec, antennas: Sequence[int], *,
                         trials: int | None = None, start: str = "zero") -> TraceResult:
    """Convergence of the proximal iterations for several antenna counts.

    Each trial is drawn once at the largest array and decoded with the first
    ``M`` antennas for every ``M`` in ``antennas``. Iterations run from
    ``start`` (``"zero"`` by default) until the iterate change drops below
    the tolerance.
    """
    antennas = [int(m) for m in antennas]
    if not antennas:
        raise ConfigError("antennas list is empty")
    trials = trials or spec.trials
    sp = dataclasses.replace(spec, scheme="integrated", sweep=None,
                             penalties=dataclasses.replace(spec.penalties, start=start))
    big = max(antennas)
    its = np.zeros((trials, len(antennas)))
    mse = np.zeros((trials, len(antennas)))
    traces = []
    for t in range(trials):
        tr = _simulate(sp, t, antennas=big)
        per_m = []
        for i, m in enumerate(antennas):
            sub = dataclasses.replace(tr, signals=[y[:, :m] for y in tr.signals])
            _, _, iters, tr_m = _decode(sp, sub, truths=list(tr.truth.gains))
            its[t, i] = iters
            mse[t, i] = np.mean([x[-1] for x in tr_m]) if tr_m else float("nan")
            per_m.append(tr_m or [])
        traces.append(per_m)
    rows = [TraceRow(m, float(its[:, i].mean()), float(np.nanmean(mse[:, i])))
            for i, m in enumerate(antennas)]
    return TraceResult(rows, its, mse, traces)


def _parse_sweep(value) -> tuple[str, tuple[float, ...]]:
    if isinstance(value, dict):
        name, vals = value.get("field"), value.get("values")
    elif isinstance(value, str):
        if "=" not in value:
            raise ConfigError(f"sweep must look like field=v1,v2,...; got {value!r}")
        name, raw = value.split("=", 1)
        try:
            vals = [float(v) for v in raw.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad sweep values in {value!r}") from exc
    else:
        raise ConfigError("sweep must be a string or an object with 'field' and 'values'")
    if not name or not vals:
        raise ConfigError("sweep needs a field name and at least one value")
    return name.strip(), tuple(vals)


_TOP_LEVEL = {
    "scheme": "scheme",
    "trials": "trials",
    "sweep": "sweep",
    "out": "output_path",
    "output": "output_path",
    "output_path": "output_path",
    "report": "report_path",
    "report_path": "report_path",
    "workers": "workers",
    "coupled_subslots": "coupled_subslots",
    "record_wall_clock": "record_wall_clock",
}


def spec_from_dict(data: dict, overrides: dict | None = None) -> ExperimentSpec:
    """Build an :class:`ExperimentSpec` from a flat mapping; ``overrides`` win over ``data``.

    Keys are experiment options (``scheme``, ``trials``, ``sweep``, ``out``,
    ``report``, ``workers``, ...) or any system, penalty or detection field
    in snake_case or camelCase.
    """
    merged = dict(data)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    top, sections = {}, {s: {} for s in _SECTIONS}
    for key, value in merged.items():
        snake = _snake(key)
        if snake in _TOP_LEVEL:
            top[_TOP_LEVEL[snake]] = value
            continue
        section, name = resolve_field(key)
        sections[section][name] = value
    system = sections["system"]
    if "message_bits" not in system and ({"subslots", "subblock_bits"} & system.keys()):
        base = SystemConfig()
        system["message_bits"] = (system.get("subslots", base.subslots)
                                  * system.get("subblock_bits", base.subblock_bits))
    if "sweep" in top and top["sweep"] is not None:
        top["sweep"] = _parse_sweep(top["sweep"])
    try:
        return ExperimentSpec(
            system=SystemConfig(**system),
            penalties=PenaltyConfig(**sections["penalties"]),
            detection=DetectionConfig(**sections["detection"]),
            **top,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_spec(path, overrides: dict | None = None) -> ExperimentSpec:
    """Read a flat JSON config file; see :func:`spec_from_dict`."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return spec_from_dict(data, overrides)
