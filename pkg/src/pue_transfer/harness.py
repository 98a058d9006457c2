"""Per-frame detection pipeline, experiment sweeps and report files."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .akd import AKD, AkdParams, Suggestion, suggest_labels
from .core import ConfigError, DistanceMetric, Labeling, TimeFrame, labeling_from_ids, seeded_rng
from .igmm import GibbsConfig, Hyperparameters, gibbs_cluster
from .metrics import TrialOutcome, attack_detected, hit_rate, transfer_recovery, upper_bound_labeling
from .synthgen import ScenarioConfig, gen_devices, gen_frame, seed_akd
from .transfer import DecisionPolicy, merge_decisions, update_akd

log = logging.getLogger(__name__)

OUT_DIR_ENV = "PUE_TRANSFER_OUT"

CSV_COLUMNS = ("sweep_value", "hit_static_mean", "hit_static_se", "hit_tl_mean", "hit_tl_se",
               "hit_ub_mean", "hit_ub_se", "efficiency_mean", "efficiency_se", "recovery_mean")

# substream purposes within one trial
_DEVICES, _FRAMES, _SEEDING, _GIBBS = range(4)

_SECTIONS = {
    "scenario": ScenarioConfig,
    "hyper": Hyperparameters,
    "gibbs": GibbsConfig,
    "akd_params": AkdParams,
    "policy": DecisionPolicy,
}
_TOP_LEVEL = ("trials", "frames", "min_support")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str = "scenario.n_fingerprints"
    values: tuple = (100,)

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ConfigError("sweep values must be non-empty")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    akd_params: AkdParams = field(default_factory=AkdParams)
    policy: DecisionPolicy = field(default_factory=DecisionPolicy)
    trials: int = 500
    sweep: SweepSpec = field(default_factory=SweepSpec)
    frames: int = 1
    min_support: int = 2

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.frames < 1:
            raise ConfigError("frames must be at least 1")
        if self.min_support < 1:
            raise ConfigError("min_support must be at least 1")
        if self.sweep.parameter not in sweepable_parameters():
            raise ConfigError(f"unknown sweep parameter {self.sweep.parameter!r}; "
                              f"valid names: {', '.join(sweepable_parameters())}")

    @property
    def seed(self) -> int:
        return self.scenario.seed

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def at(self, parameter: str, value) -> "ExperimentConfig":
        """Copy with one dotted parameter replaced."""
        return apply_overrides(self, {parameter: value})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, DistanceMetric):
        return obj.value
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def sweepable_parameters() -> list[str]:
    names = [f"{sec}.{f.name}" for sec, cls in _SECTIONS.items() for f in dataclasses.fields(cls)]
    return names + list(_TOP_LEVEL)


def _coerce(cls, data: dict):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - valid
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} field(s) {sorted(unknown)}; valid: {sorted(valid)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Copy of ``cfg`` with dotted ``section.field`` (or top-level) values replaced.

    ``sweep.parameter`` and ``sweep.values`` are accepted as well.
    """
    doc = cfg.to_dict()
    for key, value in overrides.items():
        if key in ("sweep.parameter", "sweep.values"):
            doc["sweep"][key.split(".")[1]] = value
            continue
        if key not in sweepable_parameters():
            raise ConfigError(f"unknown parameter {key!r}; valid names: {', '.join(sweepable_parameters())}")
        if "." in key:
            sec, name = key.split(".", 1)
            doc[sec][name] = value
        else:
            doc[key] = value
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build a config from a mapping whose keys mirror :class:`ExperimentConfig`.

    A report sidecar is accepted as well (its ``config`` member is used), and
    ``preset`` names a starting point that the remaining keys override.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    if "config" in doc and isinstance(doc["config"], dict):
        doc = doc["config"]
    doc = dict(doc)
    base = PRESETS[_preset_name(doc.pop("preset"))]().to_dict() if "preset" in doc else ExperimentConfig().to_dict()
    allowed = set(_SECTIONS) | set(_TOP_LEVEL) | {"sweep"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)}; valid: {sorted(allowed)}")
    for sec in _SECTIONS:
        base[sec].update(doc.get(sec, {}))
    for key in _TOP_LEVEL:
        if key in doc:
            base[key] = doc[key]
    if "sweep" in doc:
        base["sweep"] = {**base["sweep"], **doc["sweep"]}
    kwargs = {sec: _coerce(cls, base[sec]) for sec, cls in _SECTIONS.items()}
    kwargs["sweep"] = _coerce(SweepSpec, base["sweep"])
    try:
        return ExperimentConfig(**kwargs, **{k: base[k] for k in _TOP_LEVEL})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return config_from_dict(doc)


# --- presets -------------------------------------------------------------------

def _fig2(values) -> ExperimentConfig:
    return ExperimentConfig(
        scenario=ScenarioConfig(n_devices=8, transfer_fraction=0.1),
        trials=500,
        sweep=SweepSpec("scenario.n_fingerprints", tuple(values)),
    )


PRESETS = {
    "fig2a": lambda: _fig2(range(100, 1001, 100)),
    "fig2b": lambda: _fig2((100, 400, 700, 1000)),
    "fig2c": lambda: _fig2((100, 400, 700, 1000)),
    "fig4": lambda: ExperimentConfig(
        scenario=ScenarioConfig(fingerprints_per_device=25, transfer_fraction=0.1),
        trials=500,
        sweep=SweepSpec("scenario.n_devices", (10, 20, 30, 40, 50)),
    ),
    "smoke": lambda: replace(_fig2((100,)), trials=1),
}


def _preset_name(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return name


def preset(name: str) -> ExperimentConfig:
    return PRESETS[_preset_name(name)]()


# --- one frame -----------------------------------------------------------------

@dataclass(frozen=True)
class FrameResult:
    bayes: Labeling
    final: Labeling
    suggestions: tuple[Suggestion, ...]
    akd: AKD
    outcome: TrialOutcome


def attack_present(frame: TimeFrame, min_support: int = 2) -> bool:
    """Whether two real devices with enough fingerprints share a claimed identifier."""
    if frame.truth_ids is None:
        raise ValueError("attack presence needs ground truth")
    counts: dict[str, dict[str, int]] = {}
    for cid, tid in zip(frame.claimed_ids, frame.truth_ids):
        counts.setdefault(cid, {}).setdefault(tid, 0)
        counts[cid][tid] += 1
    return any(sum(n >= min_support for n in per.values()) >= 2 for per in counts.values())


def alignment_votes(akd: AKD, frame: TimeFrame, params: AkdParams, policy: DecisionPolicy):
    """Nearest-entry labels within the policy's alignment radius."""
    wide = replace(params, epsilon=params.require_epsilon() * policy.align_radius)
    return tuple(suggest_labels(akd, frame, wide))


def run_frame(frame: TimeFrame, akd: AKD, cfg: ExperimentConfig, params: AkdParams,
              seeded_indices, rng: np.random.Generator) -> FrameResult:
    """Cluster, consult the AKD, fuse, score and update for one frame.

    The static, transfer and upper-bound labelings all derive from the same
    Gibbs run, so their differences isolate the effect of the AKD.
    """
    observed = frame.stripped()
    hp = cfg.hyper.resolve(observed.features)
    bayes = gibbs_cluster(observed, hp, cfg.gibbs, rng)
    suggestions = tuple(suggest_labels(akd, observed, params))
    votes = alignment_votes(akd, observed, params, cfg.policy)
    final = merge_decisions(bayes, suggestions, cfg.policy, votes)
    new_akd = update_akd(akd, observed, final, suggestions, params, alignment=votes)

    truth = labeling_from_ids(frame.truth_ids)
    upper = upper_bound_labeling(bayes, seeded_indices, truth)
    present = attack_present(frame, cfg.min_support)
    outcome = TrialOutcome(
        hit_rate_static=hit_rate(bayes, truth),
        hit_rate_transfer=hit_rate(final, truth),
        hit_rate_upper=hit_rate(upper, truth),
        attack_present=present,
        attack_detected_static=present and attack_detected(bayes, observed, cfg.min_support),
        attack_detected_transfer=present and attack_detected(final, observed, cfg.min_support),
    )
    return FrameResult(bayes, final, suggestions, new_akd, outcome)


def trial_frame(cfg: ExperimentConfig, trial: int) -> TimeFrame:
    """The first frame of ``trial``, exactly as :func:`run_trial` sees it."""
    devices = gen_devices(cfg.scenario, seeded_rng(cfg.seed, trial, _DEVICES))
    return gen_frame(devices, cfg.scenario, seeded_rng(cfg.seed, trial, _FRAMES), 0)


def run_trial(cfg: ExperimentConfig, trial: int) -> TrialOutcome:
    """One independent repetition: fresh devices, frame(s) and seeded AKD.

    Every random draw comes from a substream keyed by ``(seed, trial, purpose)``
    so results do not depend on which worker runs the trial or in what order.
    With several frames the outcome of the last one is reported; frames after
    the first score their upper bound against the AKD-matched fingerprints.
    """
    sc = cfg.scenario
    devices = gen_devices(sc, seeded_rng(cfg.seed, trial, _DEVICES))
    frame_rng = seeded_rng(cfg.seed, trial, _FRAMES)
    gibbs_rng = seeded_rng(cfg.seed, trial, _GIBBS)
    frame = gen_frame(devices, sc, frame_rng, 0)
    params = cfg.akd_params.resolved(frame.features)
    akd, seeded = seed_akd(frame, sc.transfer_fraction, params, seeded_rng(cfg.seed, trial, _SEEDING))
    result = run_frame(frame, akd, cfg, params, seeded, gibbs_rng)
    for t in range(1, cfg.frames):
        frame = gen_frame(devices, sc, frame_rng, t)
        matched = [i for i, s in enumerate(suggest_labels(result.akd, frame.stripped(), params)) if s.matched]
        result = run_frame(frame, result.akd, cfg, params, matched, gibbs_rng)
    return result.outcome


# --- sweeps --------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    value: Any
    outcomes: tuple[TrialOutcome, ...]

    def _series(self, attr: str) -> np.ndarray:
        return np.array([getattr(o, attr) for o in self.outcomes], dtype=np.float64)

    def mean_se(self, attr: str) -> tuple[float, float]:
        x = self._series(attr)
        mean = math.fsum(x) / x.size
        if x.size < 2:
            return mean, 0.0
        var = math.fsum((x - mean) ** 2) / (x.size - 1)
        return mean, math.sqrt(var / x.size)

    def aggregates(self) -> dict:
        row = {"sweep_value": self.value}
        for key, attr in (("hit_static", "hit_rate_static"), ("hit_tl", "hit_rate_transfer"),
                          ("hit_ub", "hit_rate_upper"), ("efficiency", "efficiency")):
            row[f"{key}_mean"], row[f"{key}_se"] = self.mean_se(attr)
        rec = transfer_recovery(self.outcomes)
        row["recovery_mean"] = rec.rate
        row["static_missed"] = rec.missed
        row["recovered"] = rec.recovered
        row["attacks_present"] = sum(o.attack_present for o in self.outcomes)
        return row


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    points: tuple[SweepPoint, ...]
    wall_time: float = 0.0
    workers: int = 1

    def rows(self) -> list[dict]:
        return [p.aggregates() for p in self.points]

    def point(self, value) -> SweepPoint:
        for p in self.points:
            if p.value == value:
                return p
        raise KeyError(value)


def _run_task(args):
    cfg, trial = args
    return run_trial(cfg, trial)


def _warm_up() -> None:
    gibbs_cluster(np.zeros((2, 1)), Hyperparameters(), GibbsConfig(max_iterations=1), 0)


def run_sweep(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """Run ``cfg.trials`` trials at every sweep value and collect the outcomes."""
    start = time.perf_counter()
    point_cfgs = [cfg.at(cfg.sweep.parameter, v) for v in cfg.sweep.values]
    tasks = [(pc, t) for pc in point_cfgs for t in range(cfg.trials)]
    _warm_up()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    else:
        results = [_run_task(t) for t in tasks]
    points = []
    for k, v in enumerate(cfg.sweep.values):
        outcomes = tuple(results[k * cfg.trials:(k + 1) * cfg.trials])
        points.append(SweepPoint(v, outcomes))
        log.info("sweep %s=%s done", cfg.sweep.parameter, v)
    return ExperimentReport(cfg, tuple(points), time.perf_counter() - start, workers)


def report_csv(report: ExperimentReport) -> str:
    if not report.points:
        raise ValueError("refusing to emit a report with zero sweep points")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in report.rows():
        w.writerow([row["sweep_value"]] + [repr(float(row[c])) for c in CSV_COLUMNS[1:]])
    return buf.getvalue()


def emit_report(report: ExperimentReport, out_dir=None, stem: str = "report") -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and the ``<stem>.json`` sidecar; returns both paths."""
    text = report_csv(report)
    out = Path(out_dir or os.environ.get(OUT_DIR_ENV, "."))
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    sidecar = {
        "config": report.config.to_dict(),
        "config_hash": report.config.config_hash(),
        "seed": report.config.seed,
        "wall_time_s": report.wall_time,
        "workers": report.workers,
        "points": _jsonable(report.rows()),
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path.write_text(text, encoding="utf-8")
        json_path.write_text(json.dumps(sidecar, indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return csv_path, json_path
