"""Time integration of dI/dt = D(x, y) (d2/dx2 + d2/dy2) I on a square mesh.

Second-order central differences, Dirichlet-zero outer boundary. Two
schemes:

``explicit``
    forward Euler, stable (and monotone) for dt <= h^2 / (4 max D).
``adi``
    alternating-direction implicit splitting with a backward-Euler solve
    per direction. Unconditionally stable and monotone, first order in dt;
    peaked fields make the Peaceman-Rachford variant ring at the peak, this
    one damps those modes instead.

``form="divergence"`` switches to div(D grad I) with face-averaged D for
sensitivity runs; the default is the non-divergence form.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from numba import njit

from .dfield import DiffusionField, Mesh2D
from .model import DotModel

log = logging.getLogger(__name__)

SCHEMES = ("explicit", "adi")
FORMS = ("nondivergence", "divergence")


class InstabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolarizationField:
    mesh: Mesh2D
    values: np.ndarray  # (ny, nx)
    time: float = 0.0


@dataclass(frozen=True)
class InitialCondition:
    r0: float
    shape: str = "gaussian"
    amplitude: float = 1.0


@dataclass(frozen=True)
class SolverConfig:
    t_end: float
    scheme: str = "explicit"
    dt: float | None = None  # None: automatic
    snapshot_times: tuple[float, ...] = ()
    boundary: str = "dirichlet-zero"
    form: str = "nondivergence"
    dt_growth: float | None = None  # per-step multiplier, adi only; None: auto
    dt_max: float | None = None

    def __post_init__(self):
        errs = []
        if not self.t_end > 0:
            errs.append("t_end must be > 0")
        if self.scheme not in SCHEMES:
            errs.append(f"scheme must be one of {SCHEMES}")
        if self.form not in FORMS:
            errs.append(f"form must be one of {FORMS}")
        if self.boundary != "dirichlet-zero":
            errs.append("only dirichlet-zero boundaries are supported")
        if self.dt is not None and not self.dt > 0:
            errs.append("dt must be > 0")
        if self.dt_growth is not None and self.dt_growth < 1.0:
            errs.append("dt_growth must be >= 1")
        if any(t < 0 or t > self.t_end * (1 + 1e-12) for t in self.snapshot_times):
            errs.append("snapshot times must lie in [0, t_end]")
        if errs:
            raise ValueError("; ".join(errs))


def make_initial(mesh: Mesh2D, dot: DotModel | None, r0: float) -> PolarizationField:
    """Gaussian exp(-(x^2+y^2)/r0^2) with zero boundary nodes."""
    if not r0 > 0:
        raise ValueError("r0 must be > 0")
    half = min(mesh.nx - 1, mesh.ny - 1) * mesh.h / 2
    if r0 > half / 2:
        log.warning("r0 = %g nm exceeds a quarter of the domain; boundary truncation", r0)
    X, Y = mesh.grid()
    u = np.exp(-(X**2 + Y**2) / r0**2)
    _zero_boundary(u)
    return PolarizationField(mesh, u, 0.0)


def stability_dt(D: DiffusionField, mesh: Mesh2D | None = None, t_end: float | None = None,
                 safety: float = 0.9) -> float:
    mesh = mesh or D.mesh
    dmax = float(np.max(D.values))
    if dmax <= 0:
        return t_end if t_end is not None else math.inf
    return safety * mesh.h**2 / (4 * dmax)


def _zero_boundary(u: np.ndarray) -> None:
    u[0, :] = u[-1, :] = 0.0
    u[:, 0] = u[:, -1] = 0.0


def _laplacian(u: np.ndarray, h: float) -> np.ndarray:
    lap = np.zeros_like(u)
    c = u[1:-1, 1:-1]
    lap[1:-1, 1:-1] = (u[:-2, 1:-1] + u[2:, 1:-1] + u[1:-1, :-2] + u[1:-1, 2:] - 4 * c) / h**2
    return lap


def _faces(D: np.ndarray):
    """Arithmetic face averages along x (axis 1) and y (axis 0)."""
    return 0.5 * (D[:, 1:] + D[:, :-1]), 0.5 * (D[1:, :] + D[:-1, :])


def _div_flux(u: np.ndarray, fx: np.ndarray, fy: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(u)
    gx = fx * np.diff(u, axis=1)
    gy = fy * np.diff(u, axis=0)
    out[1:-1, 1:-1] = (gx[1:-1, 1:] - gx[1:-1, :-1] + gy[1:, 1:-1] - gy[:-1, 1:-1]) / h**2
    return out


@njit(cache=True)
def _thomas_factor(lo, diag, up):
    n_lines, m = diag.shape
    cp = np.empty_like(diag)
    inv = np.empty_like(diag)
    for j in range(n_lines):
        den = diag[j, 0]
        inv[j, 0] = 1.0 / den
        cp[j, 0] = up[j, 0] / den
        for i in range(1, m):
            den = diag[j, i] - lo[j, i] * cp[j, i - 1]
            inv[j, i] = 1.0 / den
            cp[j, i] = up[j, i] / den
    return lo, cp, inv


@njit(cache=True)
def _thomas_solve(lo, cp, inv, b):
    n_lines, m = b.shape
    x = np.empty_like(b)
    for j in range(n_lines):
        x[j, 0] = b[j, 0] * inv[j, 0]
        for i in range(1, m):
            x[j, i] = (b[j, i] - lo[j, i] * x[j, i - 1]) * inv[j, i]
        for i in range(m - 2, -1, -1):
            x[j, i] -= cp[j, i] * x[j, i + 1]
    return x


class _Stepper:
    def __init__(self, D: np.ndarray, h: float, form: str):
        self.D = D
        self.h = h
        self.form = form
        self._cache = {}
        if form == "divergence":
            self.fx, self.fy = _faces(D)

    def rhs(self, u):
        if self.form == "divergence":
            return _div_flux(u, self.fx, self.fy, self.h)
        return self.D * _laplacian(u, self.h)

    def explicit(self, u, dt):
        u = u + dt * self.rhs(u)
        _zero_boundary(u)
        return u

    def _factor(self, dt, axis):
        """Thomas factors of (I - dt L_axis) for every interior line."""
        dt = float(f"{dt:.10e}")  # equal sub-steps differ in the last bits only
        key = (dt, axis)
        if key not in self._cache:
            if len(self._cache) > 64:
                self._cache.clear()
            D = self.D if axis == 1 else self.D.T
            r = dt / self.h**2
            if self.form == "divergence":
                f = self.fx if axis == 1 else self.fy.T
                lo = -r * f[1:-1, :-1]  # coefficient of v[i-1]
                up = -r * f[1:-1, 1:]  # coefficient of v[i+1]
                diag = 1 - lo - up
            else:
                a = r * D[1:-1, 1:-1]
                lo = up = -a
                diag = 1 + 2 * a
            self._cache[key] = _thomas_factor(np.ascontiguousarray(lo),
                                              np.ascontiguousarray(diag),
                                              np.ascontiguousarray(up))
        return self._cache[key]

    def _sweep(self, u, dt, axis):
        """Solve (I - dt L_axis) v = u on the interior lines along ``axis``."""
        lo, cp, inv = self._factor(dt, axis)
        v = u if axis == 1 else u.T
        out = np.zeros_like(v)
        out[1:-1, 1:-1] = _thomas_solve(lo, cp, inv, np.ascontiguousarray(v[1:-1, 1:-1]))
        return out if axis == 1 else out.T

    def adi(self, u, dt):
        return self._sweep(self._sweep(u, dt, 1), dt, 0)


def evolve_iter(init: PolarizationField, D: DiffusionField, cfg: SolverConfig,
                sample_times: Sequence[float] | None = None) -> Iterator[PolarizationField]:
    """Yield the field at each of ``sample_times`` (default: cfg.snapshot_times).

    Steps are shortened to land exactly on every requested time.
    """
    if init.mesh != D.mesh:
        raise ValueError("polarization and diffusion meshes differ")
    times = sorted(set(float(t) for t in (sample_times if sample_times is not None
                                          else cfg.snapshot_times)))
    mesh = init.mesh
    dvals = np.asarray(D.values, dtype=float)
    if cfg.scheme == "explicit":
        limit_dt = mesh.h**2 / (4 * max(float(dvals.max()), 1e-300))
        if cfg.dt is not None and cfg.dt > limit_dt * (1 + 1e-12):
            raise ValueError(
                f"dt = {cfg.dt} exceeds the explicit stability limit h^2/(4 max D) = {limit_dt:g}"
            )
        dt0 = cfg.dt if cfg.dt is not None else stability_dt(D, mesh, cfg.t_end)
        growth, dt_cap = 1.0, dt0
    else:
        dt0, growth, dt_cap = adi_schedule(D, cfg)

    stepper = _Stepper(dvals, mesh.h, cfg.form)
    u = np.array(init.values, dtype=float)
    _zero_boundary(u)
    limit = 1.01 * max(float(np.max(np.abs(u))), 1e-300)
    t = init.time
    dt = dt0
    nstep = 0
    for target in times:
        while t < target - 1e-12 * max(1.0, target):
            rem = target - t
            n = max(1, math.ceil(rem / dt - 1e-9))
            step = rem / n  # equal sub-steps, no sliver step before a sample
            u = stepper.explicit(u, step) if cfg.scheme == "explicit" else stepper.adi(u, step)
            t = target if n == 1 else t + step
            nstep += 1
            if growth != 1.0 and nstep % 10 == 0:  # grow in blocks so factors get reused
                dt = min(dt * growth**10, dt_cap)
            peak = float(np.max(np.abs(u)))
            if not np.isfinite(peak) or peak > limit:
                raise InstabilityError(
                    f"instability at t = {t:g} s: max |I| = {peak:g} exceeds {limit:g}"
                    f" (scheme {cfg.scheme}, dt {step:g}, h {mesh.h:g})"
                )
        yield PolarizationField(mesh, u.copy(), t)


def adi_schedule(D: DiffusionField, cfg: SolverConfig) -> tuple[float, float, float]:
    """(first dt, growth per step, dt cap) for the implicit scheme.

    Automatic steps start at the explicit limit (clamped to [1e-7, 2e-4] t_end)
    so the fast core is resolved, then grow by 1 % per step up to t_end/5000.
    """
    if cfg.dt is not None:
        growth = 1.0 if cfg.dt_growth is None else cfg.dt_growth
        cap = cfg.dt_max if cfg.dt_max is not None else (cfg.dt if growth == 1.0 else math.inf)
        return cfg.dt, growth, cap
    cap = cfg.dt_max if cfg.dt_max is not None else cfg.t_end / 5000.0
    dt0 = min(cap, max(stability_dt(D, t_end=cfg.t_end), cfg.t_end * 1e-7))
    return dt0, (1.01 if cfg.dt_growth is None else cfg.dt_growth), cap


def evolve(init: PolarizationField, D: DiffusionField, cfg: SolverConfig) -> list[PolarizationField]:
    return list(evolve_iter(init, D, cfg))
