"""Multi-trial experiment runner.

Every trial draws its ground truth and measurements from streams keyed by
``(base_seed, trial)`` and runs each configured filter on the same data with
its own stream keyed by the filter name and seed, so adding or removing filters
never changes the truth or another filter's randomness.
"""

import csv
import io
import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .filters import DegenerateWeightsError, FilterConfig, run_filter
from .flow import FlowError
from .kalman import InnovationCovarianceError
from .metrics import omat, target_positions
from .scenarios import initial_state_sampler

log = logging.getLogger(__name__)

CSV_COLUMNS = ("filter", "trial", "step", "metric", "ess", "duration_s", "resampled", "repeat")


def stream(base_seed, *keys):
    """Independent counter-based generator for a tuple of integer/string keys."""
    words = [int(base_seed) & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            words.append(zlib.crc32(key.encode()))
        else:
            words.append(int(key) & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


@dataclass
class FilterSpec:
    name: str
    config: FilterConfig = field(default_factory=FilterConfig)
    label: str = ""

    def __post_init__(self):
        if not self.label:
            self.label = self.name


@dataclass
class ExperimentSpec:
    scenario: object
    filters: list
    n_trials: int = 10
    n_steps: int = 10
    base_seed: int = 0
    n_repeats: int = 1
    lost_track: bool | None = None
    timing: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.n_trials < 1 or self.n_steps < 1 or self.n_repeats < 1:
            raise ValueError("n_trials, n_steps and n_repeats must be >= 1")
        labels = [f.label for f in self.filters]
        if len(set(labels)) != len(labels):
            raise ValueError(f"filter labels must be unique: {labels}")
        if self.lost_track is None:
            self.lost_track = self.scenario.lost_track


@dataclass
class TrialSummary:
    filter: str
    trial: int
    repeat: int
    metric: float = float("nan")
    mean_error_norm: float = float("nan")
    ess: float = float("nan")
    duration: float = float("nan")
    lost: bool = False
    aborted: bool = False
    message: str = ""
    max_eps_rho: float = 0.0
    halvings: int = 0


@dataclass
class ExperimentResult:
    steps: list
    trials: list
    aggregates: dict
    n_particles: dict = field(default_factory=dict)

    @property
    def any_aborted(self):
        return any(t.aborted for t in self.trials)

    def recompute_aggregates(self, lost_track):
        return _aggregate(self.trials, self.steps, list(self.aggregates), lost_track)

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.steps:
            writer.writerow([format_cell(row[c]) for c in CSV_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self):
        return {
            "aggregates": [{"filter": k, **v} for k, v in self.aggregates.items()],
            "trials": [t.__dict__ for t in self.trials],
        }

    def summary_table(self, metric_name="metric"):
        head = f"{'filter':<22}{'particles':>10}{'avg ' + metric_name:>12}{'avg ESS':>10}"
        head += f"{'time/step s':>13}{'lost':>6}{'aborted':>9}"
        lines = [head, "-" * len(head)]
        for label, agg in self.aggregates.items():
            lines.append(
                f"{label:<22}{self.n_particles.get(label, '-')!s:>10}"
                f"{_num(agg['avg_metric'], 4):>12}{_num(agg['avg_ess'], 1):>10}"
                f"{_num(agg['avg_time'], 4):>13}{agg['lost_tracks']:>6}{agg['aborted']:>9}"
            )
        return "\n".join(lines)


def _num(v, digits):
    return "N/A" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.{digits}f}"


def format_cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return str(v)


def clean_json(obj):
    """Replace NaN by None and numpy scalars by Python ones so output is strict JSON."""
    if isinstance(obj, dict):
        return {k: clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps(obj):
    return json.dumps(clean_json(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _step_metric(scenario, truth, estimate):
    if scenario.metric == "omat":
        n = scenario.num_targets
        return omat(target_positions(truth, n), target_positions(estimate, n), p=1.0)
    return float(np.mean((truth - estimate) ** 2))


def run_trial(spec, trial):
    """Run every configured filter on one simulated trajectory."""
    scenario = spec.scenario
    truth = scenario.simulate_truth(spec.n_steps, stream(spec.base_seed, trial, "truth"))
    zs = scenario.measure(truth, stream(spec.base_seed, trial, "measurement"))
    d = scenario.dim
    steps, summaries = [], []
    for repeat in range(spec.n_repeats):
        belief0 = initial_state_sampler(scenario, stream(spec.base_seed, trial, "init", repeat))
        for fs in spec.filters:
            rng = stream(spec.base_seed, trial, "filter", fs.name, repeat, fs.config.seed)
            summary = TrialSummary(fs.label, trial, repeat)
            try:
                result = run_filter(fs.name, scenario.filter_model, belief0, zs, fs.config, rng,
                                    timing=spec.timing)
            except (DegenerateWeightsError, FlowError, InnovationCovarianceError,
                    np.linalg.LinAlgError) as exc:
                log.warning("trial %d filter %s aborted: %s", trial, fs.label, exc)
                summary.aborted = True
                summary.message = f"{type(exc).__name__}: {exc}"
                summaries.append(summary)
                continue
            metrics, errs = [], []
            for k, rec in enumerate(result.records):
                m = _step_metric(scenario, truth[k], rec.estimate)
                metrics.append(m)
                errs.append(float(np.linalg.norm(truth[k] - rec.estimate)))
                steps.append(dict(filter=fs.label, trial=trial, step=k + 1, metric=m,
                                  ess=float(rec.ess), duration_s=float(rec.duration),
                                  resampled=bool(rec.resampled), repeat=repeat))
            summary.metric = float(np.mean(metrics))
            summary.mean_error_norm = float(np.mean(errs))
            summary.lost = scenario.metric == "mse" and summary.mean_error_norm > math.sqrt(d)
            summary.ess = float(np.mean(result.ess))
            summary.duration = float(np.mean([r.duration for r in result.records]))
            summary.max_eps_rho = float(max(r.max_eps_rho for r in result.records))
            summary.halvings = int(sum(r.halvings for r in result.records))
            summaries.append(summary)
    return steps, summaries


def _aggregate(trials, steps, labels, lost_track):
    out = {}
    for label in labels:
        mine = [t for t in trials if t.filter == label]
        finished = [t for t in mine if not t.aborted]
        used = [t for t in finished if not (lost_track and t.lost)]
        keys = {(t.trial, t.repeat) for t in used}
        rows = [r for r in steps if r["filter"] == label and (r["trial"], r["repeat"]) in keys]
        ess = [r["ess"] for r in rows if not math.isnan(r["ess"])]
        dur = [r["duration_s"] for r in rows if not math.isnan(r["duration_s"])]
        out[label] = dict(
            avg_metric=float(np.mean([t.metric for t in used])) if used else float("nan"),
            avg_metric_all=float(np.mean([t.metric for t in finished])) if finished else float("nan"),
            avg_ess=float(np.mean(ess)) if ess else float("nan"),
            avg_time=float(np.mean(dur)) if dur else float("nan"),
            lost_tracks=sum(1 for t in mine if t.lost and not t.aborted),
            aborted=sum(1 for t in mine if t.aborted),
            n_used=len(used),
            halvings=sum(t.halvings for t in mine),
            max_eps_rho=max((t.max_eps_rho for t in mine), default=0.0),
        )
    return out


def _trial_job(args):
    return run_trial(*args)


def run_experiment(spec):
    """Run all trials (in parallel when ``spec.workers > 1``) and aggregate."""
    jobs = [(spec, t) for t in range(spec.n_trials)]
    if spec.workers > 1 and spec.n_trials > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_trial_job, jobs))
    else:
        results = [_trial_job(j) for j in jobs]
    steps, trials = [], []
    for s, t in results:
        steps.extend(s)
        trials.extend(t)
    order = {fs.label: i for i, fs in enumerate(spec.filters)}
    steps.sort(key=lambda r: (order[r["filter"]], r["trial"], r["repeat"], r["step"]))
    trials.sort(key=lambda t: (order[t.filter], t.trial, t.repeat))
    labels = [fs.label for fs in spec.filters]
    aggregates = _aggregate(trials, steps, labels, spec.lost_track)
    n_particles = {
        fs.label: ("N/A" if fs.name in ("ekf", "ukf") else fs.config.n_particles)
        for fs in spec.filters
    }
    return ExperimentResult(steps, trials, aggregates, n_particles)
