"""Desk-scale benchmark suites and the published numbers they are compared with.

Each suite is a set of named run configurations (plain dicts in the
:mod:`flowpf.config` schema) plus a list of checks. A check reads the
aggregates of one or more runs and reports a measured value next to the
published one; checks with a ``passes`` predicate gate the suite, the rest
are printed for context only.
"""

import math
from dataclasses import dataclass, field
from typing import Callable


def _f(name, label=None, **kw):
    return dict(name=name, label=label or name, **kw)


def _lg(sweep_values, filters, trials, steps=10):
    return dict(
        scenario=dict(preset="linear-gaussian", params=dict(d=64)),
        filters=filters, trials=trials, steps=steps,
        sweep=dict(parameter="sigma_z", values=list(sweep_values)),
    )


SUITE_RUNS = {
    "linear-gaussian": {
        "sigma_z": _lg(
            [2.0, 1.0, 0.5],
            [
                _f("ekf", "KF"),
                _f("edh", "EDH-200", n_particles=200),
                _f("pfpf-edh", "PF-PF(EDH)-200", n_particles=200),
                _f("pfpf-edh", "PF-PF(EDH)-10000", n_particles=10_000),
                _f("bpf", "BPF-200", n_particles=200),
            ],
            trials=20,
        ),
    },
    "acoustic": {
        "table": dict(
            scenario=dict(preset="acoustic"),
            filters=[
                _f("pfpf-ledh", "PF-PF(LEDH)", n_particles=500),
                _f("pfpf-edh", "PF-PF(EDH)", n_particles=500),
                _f("ledh", "LEDH", n_particles=500),
                _f("edh", "EDH", n_particles=500),
                _f("ekf", "EKF"),
                _f("ukf", "UKF"),
            ],
            trials=10, steps=40,
        ),
    },
    "skewt": {
        "table": dict(
            scenario=dict(preset="skewt-poisson", params=dict(d=144)),
            filters=[
                _f("edh", "EDH-200", n_particles=200),
                _f("pfpf-edh", "PF-PF(EDH)-10000", n_particles=10_000),
                _f("bpf", "BPF-10000", n_particles=10_000),
            ],
            trials=10, steps=10,
        ),
    },
    "sensitivity": {
        "sigma_p": dict(
            scenario=dict(preset="linear-gaussian", params=dict(d=64, sigma_z=1.0)),
            filters=[_f("pfpf-edh", "PF-PF(EDH)-10000", n_particles=10_000)],
            trials=10, steps=10,
            sweep=dict(parameter="sigma_p", values=[0.0, 0.2, 1.0]),
        ),
    },
}


@dataclass(frozen=True)
class Check:
    """One row of a comparison table.

    ``measure`` maps the suite results ``{run: {sweep_value: aggregates}}``
    to a number; ``passes`` (optional) turns that number into a verdict.
    """

    label: str
    published: str
    measure: Callable
    passes: Callable | None = None
    tolerance: str = ""


def agg(results, run, label, key, value=None):
    return results[run][value][label][key]


def _lg_val(label, key, sigma):
    return lambda r: agg(r, "sigma_z", label, key, sigma)


def _all_flow_aggregates(results):
    for runs in results.values():
        for aggregates in runs.values():
            for label, a in aggregates.items():
                yield label, a


def guard_summary(results):
    """(total halvings, largest eps * rho) over every flow-based filter."""
    halvings, worst = 0, 0.0
    for _, a in _all_flow_aggregates(results):
        halvings += a["halvings"]
        worst = max(worst, a["max_eps_rho"])
    return halvings, worst


def _guard_checks(tag):
    return [
        Check(f"{tag}: halving events", "0", lambda r: guard_summary(r)[0],
              lambda v: v == 0, "== 0"),
        Check(f"{tag}: max eps*rho(A)", "< 1", lambda r: guard_summary(r)[1],
              lambda v: v < 1.0, "< 1"),
    ]


def _lg_checks():
    kf = _lg_val("KF", "avg_metric", 1.0)
    edh = _lg_val("EDH-200", "avg_metric", 1.0)
    big = _lg_val("PF-PF(EDH)-10000", "avg_metric", 1.0)
    ess_pf = _lg_val("PF-PF(EDH)-200", "avg_ess", 0.5)
    ess_bpf = _lg_val("BPF-200", "avg_ess", 0.5)
    checks = [
        Check("KF MSE, sigma_z=1", "0.18", kf, lambda v: abs(v - 0.18) <= 0.03, "+/- 0.03"),
        Check("|EDH-200 - KF| MSE, sigma_z=1", "0.01", lambda r: abs(edh(r) - kf(r)),
              lambda v: v <= 0.03, "<= 0.03"),
        Check("PF-PF(EDH)-10000 - KF MSE, sigma_z=1", "0.04", lambda r: big(r) - kf(r),
              lambda v: v <= 0.08, "<= 0.08"),
        Check("ESS PF-PF(EDH)-200 / ESS BPF-200, sigma_z=0.5", "19",
              lambda r: ess_pf(r) / ess_bpf(r), lambda v: v >= 10.0, ">= 10"),
        Check("BPF-200 ESS non-increasing as sigma_z shrinks", "1.9, 1.2, 1.0",
              lambda r: [agg(r, "sigma_z", "BPF-200", "avg_ess", s) for s in (2.0, 1.0, 0.5)],
              lambda v: v[0] >= v[1] >= v[2], "monotone"),
    ]
    published = {
        2.0: {"KF": 0.49, "EDH-200": 0.49, "PF-PF(EDH)-200": 0.62, "PF-PF(EDH)-10000": 0.53, "BPF-200": 1.20},
        1.0: {"KF": 0.18, "EDH-200": 0.19, "PF-PF(EDH)-200": 0.26, "PF-PF(EDH)-10000": 0.22, "BPF-200": 1.1},
        0.5: {"KF": 0.07, "EDH-200": 0.07, "PF-PF(EDH)-200": 0.11, "PF-PF(EDH)-10000": 0.09, "BPF-200": 1.1},
    }
    published_ess = {
        2.0: {"PF-PF(EDH)-200": 28, "PF-PF(EDH)-10000": 1118, "BPF-200": 1.9},
        1.0: {"PF-PF(EDH)-200": 23, "PF-PF(EDH)-10000": 973, "BPF-200": 1.2},
        0.5: {"PF-PF(EDH)-200": 19, "PF-PF(EDH)-10000": 830, "BPF-200": 1.0},
    }
    for s, rows in published.items():
        for label, v in rows.items():
            checks.append(Check(f"{label} MSE, sigma_z={s:g}", f"{v}", _lg_val(label, "avg_metric", s)))
    for s, rows in published_ess.items():
        for label, v in rows.items():
            checks.append(Check(f"{label} ESS, sigma_z={s:g}", f"{v}", _lg_val(label, "avg_ess", s)))
    return checks + _guard_checks("all flows")


def _ac(label, key):
    return lambda r: agg(r, "table", label, key)


def _acoustic_checks():
    ledh_pf = _ac("PF-PF(LEDH)", "avg_metric")
    ledh = _ac("LEDH", "avg_metric")
    checks = [
        Check("PF-PF(LEDH) OMAT < LEDH OMAT < 3.0 m", "0.79 < 2.19",
              lambda r: (ledh_pf(r), ledh(r)), lambda v: v[0] < v[1] < 3.0, "strict order"),
        Check("PF-PF(LEDH) OMAT (m)", "0.79", ledh_pf, lambda v: v <= 1.3, "<= 1.3"),
        Check("PF-PF(LEDH) ESS", "45", _ac("PF-PF(LEDH)", "avg_ess"), lambda v: v >= 20.0, ">= 20"),
    ]
    for label, published in [("PF-PF(EDH)", "2.71"), ("EDH", "2.81"), ("EKF", "5.74"), ("UKF", "4.91")]:
        checks.append(Check(f"{label} OMAT (m)", published, _ac(label, "avg_metric")))
    checks.append(Check("PF-PF(EDH) ESS", "34", _ac("PF-PF(EDH)", "avg_ess")))
    return checks + _guard_checks("all flows")


def _sk(label, key="avg_metric"):
    return lambda r: agg(r, "table", label, key)


def _skewt_checks():
    edh, pf = _sk("EDH-200"), _sk("PF-PF(EDH)-10000")
    # lost trials count here: a filter that loses every track is still worse
    order = [_sk(k, "avg_metric_all") for k in ("EDH-200", "PF-PF(EDH)-10000", "BPF-10000")]
    return [
        Check("EDH-200 <= PF-PF(EDH)-10000 < BPF-10000 MSE, all trials", "0.69 <= 0.82 < 1.8",
              lambda r: tuple(f(r) for f in order), lambda v: v[0] <= v[1] < v[2], "order"),
        Check("EDH-200 MSE", "0.69", edh, lambda v: abs(v - 0.69) <= 0.2, "+/- 0.2"),
        Check("PF-PF(EDH)-10000 MSE", "0.82", pf, lambda v: abs(v - 0.82) <= 0.25, "+/- 0.25"),
        Check("PF-PF(EDH)-10000 ESS", "81", _sk("PF-PF(EDH)-10000", "avg_ess")),
        Check("BPF-10000 MSE, tracked trials only", "1.8", _sk("BPF-10000")),
        Check("BPF-10000 lost tracks", "n/a", _sk("BPF-10000", "lost_tracks")),
    ] + _guard_checks("all flows")


def _sens(key, sigma):
    return lambda r: agg(r, "sigma_p", "PF-PF(EDH)-10000", key, sigma)


def _sensitivity_checks():
    return [
        Check("ESS(sigma_p=1) / ESS(sigma_p=0)", "0.033",
              lambda r: _sens("avg_ess", 1.0)(r) / _sens("avg_ess", 0.0)(r),
              lambda v: v < 0.1, "< 0.1"),
        Check("MSE non-decreasing over sigma_p 0, 0.2, 1", "0.22, 0.35, 0.51",
              lambda r: [_sens("avg_metric", s)(r) for s in (0.0, 0.2, 1.0)],
              lambda v: v[0] <= v[1] <= v[2], "monotone"),
        Check("ESS, sigma_p=0", "973", _sens("avg_ess", 0.0)),
        Check("ESS, sigma_p=0.2", "894", _sens("avg_ess", 0.2)),
        Check("ESS, sigma_p=1", "32", _sens("avg_ess", 1.0)),
    ] + _guard_checks("all flows")


SUITE_CHECKS = {
    "linear-gaussian": _lg_checks(),
    "acoustic": _acoustic_checks(),
    "skewt": _skewt_checks(),
    "sensitivity": _sensitivity_checks(),
}

SUITES = tuple(SUITE_RUNS)


@dataclass
class CheckOutcome:
    label: str
    published: str
    measured: object
    tolerance: str
    verdict: str  # "PASS", "FAIL" or "info"


@dataclass
class SuiteReport:
    suite: str
    outcomes: list = field(default_factory=list)

    @property
    def passed(self):
        return all(o.verdict != "FAIL" for o in self.outcomes)

    def table(self):
        head = f"{'check':<60}{'published':>16}{'measured':>26}{'tolerance':>14}  verdict"
        lines = [f"suite {self.suite}", head, "-" * len(head)]
        for o in self.outcomes:
            lines.append(f"{o.label:<60}{o.published:>16}{_show(o.measured):>26}{o.tolerance:>14}  {o.verdict}")
        return "\n".join(lines)


def _show(v):
    if isinstance(v, (list, tuple)):
        return ", ".join(_show(x) for x in v)
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.4g}"
    return str(v)


def _has_nan(v):
    if isinstance(v, (list, tuple)):
        return any(_has_nan(x) for x in v)
    return isinstance(v, float) and math.isnan(v)


def evaluate(suite, results):
    """Compare suite results ``{run: {sweep_value: aggregates}}`` with the published values."""
    report = SuiteReport(suite)
    for check in SUITE_CHECKS[suite]:
        try:
            value = check.measure(results)
        except (KeyError, ZeroDivisionError):
            value = float("nan")
        if check.passes is None:
            verdict = "info"
        else:
            verdict = "FAIL" if _has_nan(value) or not check.passes(value) else "PASS"
        report.outcomes.append(CheckOutcome(check.label, check.published, value, check.tolerance, verdict))
    return report
