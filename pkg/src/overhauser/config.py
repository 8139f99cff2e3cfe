"""Config files, validation, unit conversion and the run manifest.

Config files are INI-style with flat sections::

    [dot]
    l0_nm = 30
    A0_ueV = 0.001
    B0_T = 2
    electron = present_up

Energies are given in ueV and converted to rad/s with hbar; every other
quantity is already in nm / s / T. Unknown keys are rejected in strict mode.
"""

from __future__ import annotations

import configparser
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .dfield import Mesh2D
from .model import DotModel, ElectronConfig, PhysicalConstants
from .rates import RateParams
from .solver import FORMS, SCHEMES, SolverConfig

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


def _num(v) -> float:
    return float(v)


def _opt_num(v):
    if v is None or (isinstance(v, str) and v.strip().lower() in ("", "none", "auto")):
        return None
    return float(v)


def _opt_int(v):
    if v is None or (isinstance(v, str) and v.strip().lower() in ("", "none", "all")):
        return None
    return int(v)


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _str(v) -> str:
    return str(v).strip().strip('"').strip("'")


def _times(v):
    if v is None:
        return ()
    if isinstance(v, (list, tuple)):
        return tuple(float(x) for x in v)
    s = _str(v)
    return tuple(float(x) for x in s.split(",") if x.strip()) if s else ()


_C = PhysicalConstants()

# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "dot": {
        "l0_nm": (_num, 30.0),
        "z0_nm": (_num, 10.0),
        "a0_nm": (_num, 0.563),
        "A0_ueV": (_num, 1e-3),
        "B0_T": (_num, 2.0),
        "electron": (_str, "present_up"),
        "target_sum_A_ueV": (_opt_num, None),
    },
    "constants": {
        "mu0": (_num, _C.mu0),
        "muB": (_num, _C.muB),
        "muN": (_num, _C.muN),
        "hbar": (_num, _C.hbar),
        "g_e": (_num, _C.g_e),
        "g_n": (_num, _C.g_n),
    },
    "rates": {
        "pair_cutoff_a0": (_num, 3.0),
        "broadening_cutoff_a0": (_num, 6.0),
        "max_layer": (_opt_int, None),
    },
    "mesh": {
        "half_width_nm": (_num, 300.0),
        "nodes": (int, 201),
        "z_eval_nm": (_num, 0.0),
        "layer_average": (_bool, False),
    },
    "solver": {
        "scheme": (_str, "explicit"),
        "form": (_str, "nondivergence"),
        "dt_s": (_opt_num, None),
        "t_end_s": (_num, 600.0),
        "dt_growth": (_opt_num, None),
        "dt_max_s": (_opt_num, None),
        "snapshot_times_s": (_times, ()),
        "samples": (int, 600),
    },
    "initial": {
        "r0_l0": (_num, 1.0),
    },
    "run": {
        "threads": (_opt_int, None),
        "seed": (_opt_int, None),
    },
}


@dataclass(frozen=True)
class ResolvedConfig:
    """Every setting of a run with defaults materialized (config-file units)."""

    values: dict
    warnings: tuple[str, ...] = ()

    def get(self, section: str, key: str):
        return self.values[section][key]

    def with_overrides(self, overrides: dict) -> "ResolvedConfig":
        """``overrides`` maps "section.key" (or nested dicts) to new values."""
        raw = {s: dict(v) for s, v in self.values.items()}
        for name, v in _flatten(overrides).items():
            s, k = name.split(".", 1)
            raw.setdefault(s, {})[k] = v
        return resolve(raw, strict=True)

    # -- physics objects -------------------------------------------------
    @property
    def constants(self) -> PhysicalConstants:
        return PhysicalConstants(**self.values["constants"])

    @property
    def dot(self) -> DotModel:
        d = self.values["dot"]
        c = self.constants
        return DotModel(l0=d["l0_nm"], z0=d["z0_nm"], A0=c.ueV_to_rate(d["A0_ueV"]),
                        a0=d["a0_nm"], B0=d["B0_T"],
                        electron=ElectronConfig.parse(d["electron"]), constants=c)

    @property
    def rates(self) -> RateParams:
        r = self.values["rates"]
        a0 = self.values["dot"]["a0_nm"]
        return RateParams(r["pair_cutoff_a0"] * a0, r["broadening_cutoff_a0"] * a0, r["max_layer"])

    @property
    def mesh(self) -> Mesh2D:
        m = self.values["mesh"]
        return Mesh2D.square(m["half_width_nm"], m["nodes"])

    @property
    def solver(self) -> SolverConfig:
        s = self.values["solver"]
        return SolverConfig(t_end=s["t_end_s"], scheme=s["scheme"], dt=s["dt_s"],
                            snapshot_times=s["snapshot_times_s"], form=s["form"],
                            dt_growth=s["dt_growth"], dt_max=s["dt_max_s"])

    @property
    def r0(self) -> float:
        return self.values["initial"]["r0_l0"] * self.values["dot"]["l0_nm"]

    def as_dict(self) -> dict:
        out = {}
        for s, kv in self.values.items():
            out[s] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in kv.items()}
        return out


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        name = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, name + "."))
        else:
            out[name] = v
    return out


def merge_layers(*layers) -> dict:
    """Combine {section: {key: v}} or {"section.key": v} layers, later wins."""
    raw: dict = {}
    for layer in layers:
        for name, v in _flatten(layer or {}).items():
            s, k = name.split(".", 1)
            raw.setdefault(s, {})[k] = v
    return raw


def resolve(raw: dict, strict: bool = True) -> ResolvedConfig:
    """Validate a {section: {key: value}} mapping and fill in defaults.

    Collects every problem before raising :class:`ConfigError`.
    """
    errors: list[str] = []
    warnings: list[str] = []
    values: dict[str, dict] = {}
    for section, kv in raw.items():
        if section not in SCHEMA:
            msg = f"unknown section [{section}]"
            (errors if strict else warnings).append(msg)
            continue
        for key in kv:
            if key not in SCHEMA[section]:
                msg = f"unknown key {section}.{key}"
                (errors if strict else warnings).append(msg)
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        values[section] = {}
        for key, (parse, default) in keys.items():
            if key in given:
                try:
                    values[section][key] = parse(given[key])
                except (TypeError, ValueError) as exc:
                    errors.append(f"{section}.{key}: {exc}")
                    values[section][key] = default
            else:
                values[section][key] = default
    errors.extend(_semantic_errors(values))  # failed parses fall back to defaults here
    if errors:
        raise ConfigError(errors)
    cfg = ResolvedConfig(values)
    warnings.extend(_consistency_warnings(cfg))
    for w in warnings:
        log.warning(w)
    return replace(cfg, warnings=tuple(warnings))


def _semantic_errors(v: dict) -> list[str]:
    errs = []
    d = v["dot"]
    try:
        ElectronConfig.parse(d["electron"])
    except ValueError as exc:
        errs.append(f"dot.electron: {exc}")
    try:
        PhysicalConstants(**v["constants"])
    except ValueError as exc:
        errs.append(f"constants: {exc}")
    for k in ("l0_nm", "z0_nm", "a0_nm"):
        if not d[k] > 0:
            errs.append(f"dot.{k} must be > 0")
    if not d["B0_T"] > 0:
        errs.append("dot.B0_T must be > 0 (secular approximation invalid)")
    if not d["A0_ueV"] >= 0:
        errs.append("dot.A0_ueV must be >= 0")
    r = v["rates"]
    if r["pair_cutoff_a0"] < 2:
        errs.append("rates.pair_cutoff_a0 must be >= 2")
    if r["broadening_cutoff_a0"] < 2:
        errs.append("rates.broadening_cutoff_a0 must be >= 2")
    if r["max_layer"] is not None and r["max_layer"] < 0:
        errs.append("rates.max_layer must be >= 0")
    m = v["mesh"]
    if m["nodes"] < 3:
        errs.append("mesh.nodes must be >= 3")
    if not m["half_width_nm"] > 0:
        errs.append("mesh.half_width_nm must be > 0")
    s = v["solver"]
    if s["scheme"] not in SCHEMES:
        errs.append(f"solver.scheme must be one of {SCHEMES}")
    if s["form"] not in FORMS:
        errs.append(f"solver.form must be one of {FORMS}")
    if not s["t_end_s"] > 0:
        errs.append("solver.t_end_s must be > 0")
    if s["dt_s"] is not None and not s["dt_s"] > 0:
        errs.append("solver.dt_s must be > 0")
    if s["samples"] < 10:
        errs.append("solver.samples must be >= 10")
    if any(t < 0 or t > s["t_end_s"] for t in s["snapshot_times_s"]):
        errs.append("solver.snapshot_times_s must lie in [0, t_end_s]")
    if not v["initial"]["r0_l0"] > 0:
        errs.append("initial.r0_l0 must be > 0")
    return errs


def _consistency_warnings(cfg: ResolvedConfig) -> list[str]:
    target = cfg.values["dot"]["target_sum_A_ueV"]
    if target is None:
        return []
    dot = cfg.dot
    got = dot.constants.rate_to_ueV(dot.hyperfine_sum())
    if not math.isclose(got, target, rel_tol=0.1):
        return [f"sum of A_k is {got:.4g} ueV for A0 = {dot.A0_ueV:g} ueV, "
                f"target {target:g} ueV (A0 not rescaled)"]
    return []


def read_ini(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError([f"config file not found: {p}"])
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    try:
        parser.read(p)
    except configparser.Error as exc:
        raise ConfigError([f"{p}: {exc}"]) from exc
    return {s: dict(parser[s]) for s in parser.sections()}


def load_config(path=None, strict: bool = True, overrides: dict | None = None) -> ResolvedConfig:
    """Read ``path`` (or nothing, for the defaults), apply overrides, validate."""
    raw = read_ini(path) if path is not None else {}
    for name, v in _flatten(overrides or {}).items():
        s, k = name.split(".", 1)
        raw.setdefault(s, {})[k] = v
    return resolve(raw, strict=strict)


def default_config() -> ResolvedConfig:
    return resolve({})


# -- manifest ---------------------------------------------------------------


def make_manifest(cfg: ResolvedConfig, derived: dict | None = None,
                  timing: dict | None = None, extra: dict | None = None) -> dict:
    m = {
        "tool": "overhauser",
        "version": __version__,
        "config": cfg.as_dict(),
        "warnings": list(cfg.warnings),
        "derived": derived or {},
        "timing": timing or {},
    }
    if extra:
        m.update(extra)
    return m


def derived_quantities(cfg: ResolvedConfig) -> dict:
    dot = cfg.dot
    c = dot.constants
    return {
        "A0_rad_per_s": dot.A0,
        "sum_A_ueV": c.rate_to_ueV(dot.hyperfine_sum()),
        "electron_zeeman_rad_per_s": dot.electron_zeeman,
        "dipolar_nn_rad_per_s": c.dipolar_prefactor / dot.a0**3,
        "lattice_layers": 2 * dot.max_layer + 1,
        "mesh_h_nm": cfg.mesh.h,
    }


def load_manifest(path) -> ResolvedConfig:
    """Rebuild the resolved config recorded in a manifest.json."""
    data = json.loads(Path(path).read_text())
    return resolve(data["config"], strict=True)
