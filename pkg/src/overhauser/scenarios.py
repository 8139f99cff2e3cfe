"""Named run presets (one per figure), sweeps, and their checked expectations.

A scenario is a set of config overrides plus one or more cases (each case
adds its own overrides, e.g. a different B0). ``kind`` is ``"dfield"``
(build D only) or ``"decay"`` (build D, evolve, record h_z(t)).

Precedence, lowest first: built-in defaults, scenario overrides, user
config file, command-line overrides, case overrides.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import output
from .config import ResolvedConfig, _flatten, derived_quantities, make_manifest, merge_layers, resolve
from .dfield import DiffusionField, background_D, build_field
from .observables import (DecayCurve, FitError, FitResult, HorizonError, analytic_decay,
                          fit_deff, half_decay_time, hyperfine_weights, overhauser)
from .solver import (InstabilityError, PolarizationField, adi_schedule, evolve_iter,
                     make_initial, stability_dt)

log = logging.getLogger(__name__)

SCENARIO_VERSION = 1
PAPER_DEFF = 0.7  # nm^2/s at 2 T


@dataclass(frozen=True)
class Case:
    label: str
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Expectation:
    name: str
    description: str
    check: Callable[["ScenarioResult"], tuple[bool, str]]


@dataclass(frozen=True)
class Scenario:
    id: str
    kind: str
    description: str
    overrides: dict
    cases: tuple[Case, ...] = (Case("main"),)
    expected: tuple[Expectation, ...] = ()
    fit: bool = False
    version: int = SCENARIO_VERSION

    def describe(self) -> dict:
        return {
            "id": self.id,
            "version": self.version,
            "kind": self.kind,
            "description": self.description,
            "overrides": _flatten(self.overrides),
            "cases": {c.label: _flatten(c.overrides) for c in self.cases},
            "fit": self.fit,
            "expected": [{"name": e.name, "description": e.description} for e in self.expected],
        }


@dataclass
class CaseResult:
    label: str
    config: ResolvedConfig
    field: DiffusionField
    curve: DecayCurve | None = None
    t_half: float | None = None
    fit: FitResult | None = None
    snapshots: list[PolarizationField] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class ScenarioResult:
    scenario: Scenario
    config: ResolvedConfig
    cases: dict[str, CaseResult]
    background: float
    assertions: list[dict] = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    files: list[Path] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)

    def t_half(self, label: str) -> float | None:
        return self.cases[label].t_half


# -- expectations ------------------------------------------------------------


def _need(res: ScenarioResult, labels) -> list[float]:
    out = []
    for lab in labels:
        th = res.cases[lab].t_half
        if th is None:
            raise ValueError(f"{lab}: no half-decay time ({res.cases[lab].error})")
        out.append(th)
    return out


def _ordered(labels) -> Callable:
    def check(res):
        th = _need(res, labels)
        ok = all(a < b for a, b in zip(th, th[1:]))
        return ok, " < ".join(f"t_half({lab}) = {t:.4g} s" for lab, t in zip(labels, th))
    return check


def _t_half_range(labels, lo, hi) -> Callable:
    def check(res):
        th = _need(res, labels)
        ok = all(lo <= t <= hi for t in th)
        return ok, ", ".join(f"{lab}: {t:.4g} s" for lab, t in zip(labels, th)) + f" in [{lo}, {hi}]"
    return check


def _bounded_monotone(tol: float = 1e-6) -> Callable:
    def check(res):
        worst = 0.0
        lo, hi = math.inf, -math.inf
        for c in res.cases.values():
            h = c.curve.h
            worst = max(worst, float(np.max(np.diff(h), initial=0.0)))
            lo, hi = min(lo, float(h.min())), max(hi, float(h.max()))
        ok = worst <= tol and lo >= 0.0 and hi <= 1.0 + tol
        return ok, f"h in [{lo:.4g}, {hi:.6g}], largest increase {worst:.3g} (tol {tol:g})"
    return check


def _center_vs_background(above: bool) -> Callable:
    def check(res):
        d0 = res.cases["main"].field.at(0.0, 0.0)
        ok = d0 > res.background if above else d0 < res.background
        rel = ">" if above else "<"
        return ok, f"D(0,0) = {d0:.5g} {rel} background {res.background:.5g} nm^2/s"
    return check


def _central_peak(res):
    f = res.cases["main"].field
    d0 = f.at(0.0, 0.0)
    return d0 >= f.max, f"D(0,0) = {d0:.5g}, field max {f.max:.5g} nm^2/s"


def _suppressed_core(frac: float) -> Callable:
    def check(res):
        f = res.cases["main"].field
        X, Y = f.mesh.grid()
        l0 = res.config.dot.l0
        dmin = float(f.values[X**2 + Y**2 < l0**2].min())
        ratio = dmin / res.background
        return ratio < frac, f"min D within r < l0 = {dmin:.4g} nm^2/s, {ratio:.3g} x background (< {frac})"
    return check


def _deff_near(label: str, target: float, factor: float) -> Callable:
    def check(res):
        fr = res.cases[label].fit
        if fr is None:
            raise ValueError(f"{label}: no fit ({res.cases[label].error})")
        ok = target / factor <= fr.D_eff <= target * factor
        return ok, f"D_eff = {fr.D_eff:.4g} nm^2/s, target {target} within x{factor}"
    return check


def _deff_over_background(label: str, lo: float, hi: float) -> Callable:
    def check(res):
        fr = res.cases[label].fit
        if fr is None:
            raise ValueError(f"{label}: no fit ({res.cases[label].error})")
        r = fr.D_eff / res.background
        return lo <= r <= hi, f"D_eff / background = {fr.D_eff:.4g} / {res.background:.4g} = {r:.3g} in [{lo}, {hi}]"
    return check


def _deff_ratio(num: str, den: str, hi: float) -> Callable:
    def check(res):
        a, b = res.cases[num].fit, res.cases[den].fit
        if a is None or b is None:
            raise ValueError("missing fit")
        r = a.D_eff / b.D_eff
        return r < hi, f"D_eff({num}) / D_eff({den}) = {r:.3g} < {hi}"
    return check


def _deff_matches_background(label: str, rel: float) -> Callable:
    def check(res):
        fr = res.cases[label].fit
        if fr is None:
            raise ValueError(f"{label}: no fit ({res.cases[label].error})")
        d = abs(fr.D_eff / res.background - 1)
        return d <= rel, f"D_eff({label}) = {fr.D_eff:.4g} vs background {res.background:.4g} ({d:.2%}, tol {rel:.0%})"
    return check


# -- presets -----------------------------------------------------------------

_DECAY = {"solver.scheme": "adi"}
FIG5_R0 = (0.5, 0.625, 0.75, 0.875, 1.0)


def _fig5_label(r: float) -> str:
    return f"r0_{r:g}"


SCENARIOS: dict[str, Scenario] = {
    s.id: s
    for s in (
        Scenario(
            "fig1", "dfield", "D(x, y) at B0 = 0.2 T: narrow peak at the dot centre",
            {"dot.B0_T": 0.2},
            expected=(
                Expectation("center_above_background", "D(0,0) > background", _center_vs_background(True)),
                Expectation("central_peak", "field maximum at the centre", _central_peak),
            ),
        ),
        Scenario(
            "fig2", "dfield", "D(x, y) at B0 = 2 T: diffusion suppressed inside the dot",
            {"dot.B0_T": 2.0},
            expected=(
                Expectation("center_below_background", "D(0,0) < background", _center_vs_background(False)),
                Expectation("suppressed_core", "min D within r < l0 below 0.3 x background",
                            _suppressed_core(0.3)),
            ),
        ),
        Scenario(
            "fig3", "decay", "h_z decay at 10 mT, 20 mT and with the electron removed",
            {**_DECAY, "solver.t_end_s": 600.0},
            cases=(
                Case("B0_0.01", {"dot.B0_T": 0.01}),
                Case("B0_0.02", {"dot.B0_T": 0.02}),
                Case("absent", {"dot.electron": "absent"}),
            ),
            expected=(
                Expectation("ordering", "t_half(10 mT) < t_half(20 mT) < t_half(absent)",
                            _ordered(["B0_0.01", "B0_0.02", "absent"])),
                Expectation("t_half_range", "each t_half in [1, 600] s",
                            _t_half_range(["B0_0.01", "B0_0.02", "absent"], 1.0, 600.0)),
                Expectation("bounded_monotone", "curves in [0, 1] and non-increasing",
                            _bounded_monotone()),
            ),
        ),
        Scenario(
            "fig4", "decay", "h_z decay at 2 T with a constant-D fit; electron-removed reference",
            {**_DECAY, "solver.t_end_s": 3000.0, "dot.B0_T": 2.0,
             "solver.snapshot_times_s": (0.0, 600.0, 3000.0)},
            cases=(Case("main"), Case("absent", {"dot.electron": "absent"})),
            fit=True,
            expected=(
                Expectation("deff_near_quoted", "D_eff within a factor 3 of 0.7 nm^2/s",
                            _deff_near("main", PAPER_DEFF, 3.0)),
                Expectation("deff_over_background", "D_eff / background in [0.03, 0.3]",
                            _deff_over_background("main", 0.03, 0.3)),
                Expectation("suppression_ratio", "D_eff(2 T) / D_eff(absent) < 0.35",
                            _deff_ratio("main", "absent", 0.35)),
                Expectation("absent_matches_background", "D_eff(absent) within 15% of background",
                            _deff_matches_background("absent", 0.15)),
                Expectation("bounded_monotone", "curves in [0, 1] and non-increasing",
                            _bounded_monotone()),
            ),
        ),
        Scenario(
            "fig5", "decay", "h_z decay at 0.2 T for narrower initial polarization",
            {**_DECAY, "solver.t_end_s": 600.0, "dot.B0_T": 0.2},
            cases=tuple(Case(_fig5_label(r), {"initial.r0_l0": r}) for r in FIG5_R0),
            expected=(
                Expectation("r0_ordering", "t_half strictly increasing in r0",
                            _ordered([_fig5_label(r) for r in FIG5_R0])),
                Expectation("bounded_monotone", "curves in [0, 1] and non-increasing",
                            _bounded_monotone()),
            ),
        ),
    )
}


def get_scenario(scenario_id: str) -> Scenario:
    try:
        return SCENARIOS[scenario_id]
    except KeyError:
        raise KeyError(f"unknown scenario {scenario_id!r}; known: {', '.join(SCENARIOS)}") from None


# -- running -----------------------------------------------------------------


def sample_times(t_end: float, samples: int, extra=()) -> np.ndarray:
    """Linear grid plus a log grid (resolves fast early decay), plus ``extra``."""
    t = np.concatenate([np.linspace(0.0, t_end, samples + 1),
                        np.geomspace(t_end * 1e-5, t_end, samples // 3 + 1),
                        np.asarray(extra, dtype=float)])
    return np.unique(t)


def run_case(cfg: ResolvedConfig, label: str = "main", kind: str = "decay",
             fit: bool = False) -> CaseResult:
    dot, p, mesh = cfg.dot, cfg.rates, cfg.mesh
    m = cfg.values["mesh"]
    D = build_field(mesh, dot, p, m["z_eval_nm"], m["layer_average"])
    res = CaseResult(label, cfg, D)
    if kind == "dfield":
        return res
    scfg = cfg.solver
    snaps = set(scfg.snapshot_times)
    ts = sample_times(scfg.t_end, cfg.values["solver"]["samples"], scfg.snapshot_times)
    init = make_initial(mesh, dot, cfg.r0)
    w = hyperfine_weights(mesh, dot)
    hz = [overhauser(init, dot, w)]
    total0 = float(init.values.sum())
    vmin, vmax_increase, prev_max = 0.0, 0.0, float(init.values.max())
    drift = 0.0
    if 0.0 in snaps:
        res.snapshots.append(init)
    try:
        for s in evolve_iter(init, D, scfg, ts[1:]):
            hz.append(overhauser(s, dot, w))
            vmin = min(vmin, float(s.values.min()))
            cur = float(s.values.max())
            vmax_increase = max(vmax_increase, cur - prev_max)
            prev_max = cur
            drift = (float(s.values.sum()) - total0) / total0
            if s.time in snaps:
                res.snapshots.append(s)
    except InstabilityError as exc:
        res.error = str(exc)
        ts = ts[: len(hz)]
    res.curve = DecayCurve.from_raw(ts, hz, {"label": label})
    if scfg.scheme == "adi":
        dt0, growth, cap = adi_schedule(D, scfg)
    else:
        dt0 = scfg.dt if scfg.dt is not None else stability_dt(D, mesh, scfg.t_end)
        growth, cap = 1.0, dt0
    res.diagnostics = {
        "scheme": scfg.scheme, "form": scfg.form, "dt_initial_s": dt0, "dt_growth": growth,
        "dt_max_s": cap, "stability_dt_s": stability_dt(D, mesh, scfg.t_end),
        "D_min": float(D.values.min()), "D_max": D.max,
        "min_value": vmin, "max_value_increase": vmax_increase,
        "sum_drift_final": drift,
    }
    if res.error:
        return res
    try:
        res.t_half = half_decay_time(res.curve)
    except HorizonError as exc:
        res.error = str(exc)
    if fit:
        try:
            model = lambda t, d: analytic_decay(t, d, dot.l0, cfg.r0)  # noqa: E731
            res.fit = fit_deff(res.curve, dot, model)
        except FitError as exc:
            res.error = f"fit failed: {exc}"
    return res


def base_config(scenario: Scenario, config_raw: dict | None = None,
                cli_overrides: dict | None = None, strict: bool = True) -> ResolvedConfig:
    return resolve(merge_layers(scenario.overrides, config_raw, cli_overrides), strict=strict)


def evaluate(result: ScenarioResult) -> list[dict]:
    out = []
    for e in result.scenario.expected:
        try:
            ok, detail = e.check(result)
        except (ValueError, KeyError, AttributeError) as exc:
            ok, detail = False, f"not evaluable: {exc}"
        out.append({"name": e.name, "description": e.description, "passed": bool(ok), "detail": detail})
    return out


def run_scenario(scenario_id: str | Scenario, out=None, config_raw: dict | None = None,
                 cli_overrides: dict | None = None, strict: bool = True) -> ScenarioResult:
    """Run every case, check the expectations and (with ``out``) write the bundle."""
    sc = scenario_id if isinstance(scenario_id, Scenario) else get_scenario(scenario_id)
    t0 = time.perf_counter()
    base = base_config(sc, config_raw, cli_overrides, strict)
    cases = {}
    for c in sc.cases:
        cfg = base.with_overrides(c.overrides) if c.overrides else base
        log.info("%s/%s: running", sc.id, c.label)
        cases[c.label] = run_case(cfg, c.label, sc.kind, sc.fit)
    res = ScenarioResult(sc, base, cases, background_D(base.dot, base.rates))
    res.assertions = evaluate(res)
    res.timing = {"wall_s": time.perf_counter() - t0}
    if out is not None:
        res.files = write_bundle(res, out)
    return res


def write_bundle(res: ScenarioResult, out) -> list[Path]:
    out = Path(out)
    sc = res.scenario
    single = len(res.cases) == 1
    files = []
    rows = []
    for lab, c in res.cases.items():
        suffix = "" if single else f"_{lab}"
        if sc.kind == "dfield":
            files.append(output.write_dfield(out / f"dfield{suffix}.csv", c.field))
            continue
        files.append(output.write_decay(out / f"decay{suffix}.csv", c.curve))
        for s in c.snapshots:
            files.append(output.write_snapshot(out / output.snapshot_name(lab, s.time, single), s))
        rows.append((lab, c.t_half, c.fit.D_eff if c.fit else None, c.error or ""))
    if rows:
        files.append(output.write_csv(out / "summary.csv", ["label", "t_half_s", "D_eff_nm2_per_s", "error"],
                                      [list(col) for col in zip(*rows)]))
    if sc.fit:
        fits = {lab: (c.fit.as_dict() if c.fit else None) for lab, c in res.cases.items()}
        files.append(output.write_json(out / "fit.json", fits["main"] if single else fits))
    files.append(output.write_json(out / "assertions.json",
                                   {"scenario": sc.id, "passed": res.passed, "assertions": res.assertions}))
    derived = derived_quantities(res.config)
    derived["background_D_nm2_per_s"] = res.background
    manifest = make_manifest(
        res.config, derived, res.timing,
        extra={
            "scenario": sc.describe(),
            "cases": {lab: {"overrides": _flatten(next(x.overrides for x in sc.cases if x.label == lab)),
                            "diagnostics": c.diagnostics, "error": c.error}
                      for lab, c in res.cases.items()},
        },
    )
    files.append(output.write_json(out / "manifest.json", manifest))
    return files


# -- sweeps ------------------------------------------------------------------

SWEEP_KEYS = {"B0": "dot.B0_T", "r0": "initial.r0_l0", "electron": "dot.electron", "A0": "dot.A0_ueV"}


@dataclass(frozen=True)
class SweepRow:
    value: object
    t_half: float | None
    D_eff: float | None
    error: str = ""


def parse_values(parameter: str, text: str) -> list:
    items = [v.strip() for v in text.split(",") if v.strip()]
    if parameter == "electron":
        return items
    return [float(v) for v in items]


def sweep(parameter: str, values, base: str = "fig3", config_raw: dict | None = None,
          cli_overrides: dict | None = None, strict: bool = True) -> list[SweepRow]:
    """One decay run per value on top of ``base`` (its overrides plus first case).

    A failing value records its error and the sweep continues.
    """
    if parameter not in SWEEP_KEYS:
        raise ValueError(f"sweep parameter must be one of {sorted(SWEEP_KEYS)}")
    sc = get_scenario(base)
    if sc.kind != "decay":
        raise ValueError(f"sweep base {base!r} is not a decay scenario")
    cfg0 = base_config(sc, config_raw, merge_layers(sc.cases[0].overrides, cli_overrides), strict)
    rows = []
    for v in values:
        try:
            cfg = cfg0.with_overrides({SWEEP_KEYS[parameter]: v})
            r = run_case(cfg, f"{parameter}={v}", "decay", fit=True)
            rows.append(SweepRow(v, r.t_half, r.fit.D_eff if r.fit else None, r.error or ""))
        except Exception as exc:  # noqa: BLE001 - a bad row must not stop the sweep
            log.warning("sweep %s=%s failed: %s", parameter, v, exc)
            rows.append(SweepRow(v, None, None, f"{type(exc).__name__}: {exc}"))
    return rows


def write_sweep(path, parameter: str, rows: list[SweepRow]) -> Path:
    return output.write_csv(path, [parameter, "t_half_s", "D_eff_nm2_per_s", "error"],
                            [[r.value for r in rows], [r.t_half for r in rows],
                             [r.D_eff for r in rows], [r.error for r in rows]])
