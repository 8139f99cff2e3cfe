"""Overhauser-field observable, half-decay times and constant-D fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .model import DotModel, hyperfine_profile


class FitError(ValueError):
    pass


class HorizonError(ValueError):
    pass


@dataclass(frozen=True)
class DecayCurve:
    t: np.ndarray
    h: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or len(t) != len(self.h):
            raise ValueError("t and h must be 1-D and of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("sample times must be strictly increasing")

    @classmethod
    def from_raw(cls, t, hz, metadata=None) -> "DecayCurve":
        """Normalize by the first sample (taken at t = 0)."""
        hz = np.asarray(hz, dtype=float)
        if hz[0] == 0:
            raise ValueError("cannot normalize a curve starting at zero")
        return cls(np.asarray(t, dtype=float), hz / hz[0], dict(metadata or {}))


@dataclass(frozen=True)
class FitResult:
    D_eff: float  # nm^2/s
    residual: float  # rms, dimensionless
    window: tuple[float, float]

    def as_dict(self) -> dict:
        return {"D_eff_nm2_per_s": self.D_eff, "residual": self.residual,
                "window": list(self.window)}


def hyperfine_weights(mesh, dot: DotModel) -> np.ndarray:
    """A(x, y, 0) / A0 times the number of lattice sites per mesh cell in one layer.

    A0 is factored out so the observable stays defined (and normalizable)
    when A0 = 0.
    """
    X, Y = mesh.grid()
    pts = np.stack([X, Y, np.zeros_like(X)], axis=-1)
    return hyperfine_profile(pts, dot) * (mesh.h / dot.a0) ** 2


def overhauser(field, dot: DotModel, weights: np.ndarray | None = None) -> float:
    """h_z / A0 = sum_k (A_k / A0) <I_k^z> as a mesh quadrature (dimensionless)."""
    w = hyperfine_weights(field.mesh, dot) if weights is None else weights
    return float(np.sum(w * field.values))


def analytic_decay(t, D: float, l0: float, r0: float | None = None):
    """h(t)/h(0) for constant D, Gaussian initial width r0 and weight width l0.

    Free-space heat kernel:  (r0^2 + l0^2) / (r0^2 + l0^2 + 4 D t); for r0 = l0
    this is 1 / (1 + 2 D t / l0^2).
    """
    r0 = l0 if r0 is None else r0
    s = r0 * r0 + l0 * l0
    return s / (s + 4.0 * D * np.asarray(t, dtype=float))


def half_decay_time(curve: DecayCurve) -> float:
    """First time the normalized curve reaches 0.5 (linear interpolation)."""
    h = np.asarray(curve.h)
    t = np.asarray(curve.t)
    hit = np.nonzero(h <= 0.5)[0]
    if len(hit) == 0:
        raise HorizonError(
            f"insufficient horizon: curve ends at h = {h[-1]:.4g} at t = {t[-1]:g} s"
        )
    i = hit[0]
    if i == 0 or h[i] == 0.5:
        return float(t[i])
    t0, t1, h0, h1 = t[i - 1], t[i], h[i - 1], h[i]
    return float(t0 + (h0 - 0.5) * (t1 - t0) / (h0 - h1))


def _check_decaying(curve: DecayCurve) -> None:
    h = np.asarray(curve.h)
    if len(h) < 10:
        raise FitError("need at least 10 samples to fit")
    if not h[-1] < h[0]:
        raise FitError("curve does not decay")
    if np.any(np.diff(h) > 1e-9 * max(1.0, abs(h[0]))):
        raise FitError("curve is not monotone non-increasing")


def fit_deff(curve: DecayCurve, dot: DotModel, model=None, t_max: float | None = None,
             bounds=(1e-3, 1e3)) -> FitResult:
    """Least-squares constant D reproducing the curve.

    ``model(t, D)`` defaults to the closed-form r0 = l0 decay; pass a
    PDE-backed model for other initial widths. The search runs over log10 D
    (bounded Brent / golden-section).
    """
    _check_decaying(curve)
    t = np.asarray(curve.t, dtype=float)
    h = np.asarray(curve.h, dtype=float)
    if t_max is not None:
        keep = t <= t_max * (1 + 1e-12)
        t, h = t[keep], h[keep]
    model = model or (lambda tt, D: analytic_decay(tt, D, dot.l0))

    def cost(logd):
        return float(np.mean((model(t, 10.0**logd) - h) ** 2))

    lo, hi = (math.log10(b) for b in bounds)
    res = minimize_scalar(cost, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    D = 10.0**res.x
    return FitResult(float(D), math.sqrt(cost(res.x)), (float(t[0]), float(t[-1])))
