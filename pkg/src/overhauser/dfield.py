"""Coarse-grained diffusion coefficient D(x, y) from the pairwise rates.

A mesh node at (x, y) is represented by the lattice site nearest to
(x, y, z_eval); D sums W_ik [(dx)^2 + (dy)^2] / 4 over its neighbours within
the pair cutoff. Rates in rad/s are used directly as rate constants in 1/s,
so with lengths in nm the result is in nm^2/s (the only unit conversion).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DotModel, ElectronConfig
from .rates import RateParams, pair_offsets, pair_rate_table

RATE_TO_PER_SECOND = 1.0


class FieldError(RuntimeError):
    pass


@dataclass(frozen=True)
class Mesh2D:
    nx: int
    ny: int
    h: float
    origin: tuple[float, float]  # coordinates of node (0, 0), nm

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError("mesh needs at least 3 nodes per axis")
        if not self.h > 0:
            raise ValueError("mesh spacing must be > 0")

    @classmethod
    def square(cls, half_width: float = 300.0, n: int = 201) -> "Mesh2D":
        h = 2 * half_width / (n - 1)
        return cls(n, n, h, (-half_width, -half_width))

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        """X, Y arrays of shape (ny, nx)."""
        return np.meshgrid(self.x, self.y, indexing="xy")

    def as_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "h": self.h, "origin": list(self.origin)}


@dataclass(frozen=True)
class DiffusionField:
    mesh: Mesh2D
    values: np.ndarray  # (ny, nx), nm^2/s
    metadata: dict = field(default_factory=dict)

    @property
    def max(self) -> float:
        return float(self.values.max())

    def at(self, x: float, y: float) -> float:
        """Value at the node nearest to (x, y)."""
        m = self.mesh
        i = int(round((x - m.origin[0]) / m.h))
        j = int(round((y - m.origin[1]) / m.h))
        return float(self.values[j, i])


def _probe_index(points, dot: DotModel, z_eval: float) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k = np.empty((len(pts), 3), dtype=int)
    k[:, 0] = np.rint(pts[:, 0] / dot.a0)
    k[:, 1] = np.rint(pts[:, 1] / dot.a0)
    k[:, 2] = int(round(z_eval / dot.a0))
    return k


def diffusion_values(points, dot: DotModel, p: RateParams, z_eval: float = 0.0) -> np.ndarray:
    """D (nm^2/s) at each (x, y) in ``points``."""
    offs = pair_offsets(p.pair_cutoff_radius / dot.a0, in_plane_only=True)
    tab = pair_rate_table(_probe_index(points, dot, z_eval), dot, p, offs)
    w2 = ((offs[:, 0] ** 2 + offs[:, 1] ** 2) * dot.a0**2) / 4.0
    return RATE_TO_PER_SECOND * (tab.W @ w2)


def diffusion_coefficient_at(point, dot: DotModel, p: RateParams, z_eval: float = 0.0) -> float:
    return float(diffusion_values([point], dot, p, z_eval)[0])


def diffusion_tensor_at(point, dot: DotModel, p: RateParams, z_eval: float = 0.0) -> np.ndarray:
    """D^{ab} = sum_i W_ik (x_k^a - x_i^a)(x_k^b - x_i^b) / 2 as a 3x3 array."""
    tab = pair_rate_table(_probe_index([point], dot, z_eval), dot, p)
    d = tab.offsets * dot.a0
    w = tab.W[0]
    # sum over offsets in a fixed order; +o and -o pairs cancel in off-diagonals
    return RATE_TO_PER_SECOND * np.einsum("m,ma,mb->ab", w, d, d) / 2.0


def background_D(dot: DotModel, p: RateParams) -> float:
    """Bulk value: same lattice and cutoffs with the electron removed."""
    from dataclasses import replace

    bulk = replace(dot, electron=ElectronConfig.absent())
    return diffusion_coefficient_at((0.0, 0.0), bulk, p)


def field_metadata(dot: DotModel, p: RateParams, z_eval: float, layer_average: bool) -> dict:
    return {
        "B0_T": dot.B0,
        "electron": dot.electron.name,
        "A0_ueV": dot.A0_ueV,
        "pair_cutoff_nm": p.pair_cutoff_radius,
        "broadening_cutoff_nm": p.broadening_cutoff_radius,
        "max_layer": p.layer_limit(dot),
        "z_eval_nm": z_eval,
        "layer_average": layer_average,
    }


def build_field(mesh: Mesh2D, dot: DotModel, p: RateParams, z_eval: float = 0.0,
                layer_average: bool = False) -> DiffusionField:
    """Evaluate D on every mesh node.

    ``layer_average`` averages D over every lattice layer instead of using
    the single layer at ``z_eval``.
    """
    X, Y = mesh.grid()
    pts = np.column_stack([X.ravel(), Y.ravel()])
    if layer_average:
        L = p.layer_limit(dot)
        vals = np.mean(
            [diffusion_values(pts, dot, p, kz * dot.a0) for kz in range(-L, L + 1)], axis=0
        )
    else:
        vals = diffusion_values(pts, dot, p, z_eval)
    bad = ~np.isfinite(vals) | (vals < 0)
    if bad.any():
        where = ", ".join(f"({x:g}, {y:g})" for x, y in pts[bad][:5])
        raise FieldError(f"{bad.sum()} invalid D values, e.g. at nodes {where}")
    return DiffusionField(mesh, vals.reshape(mesh.ny, mesh.nx),
                          field_metadata(dot, p, z_eval, layer_average))


def constant_field(mesh: Mesh2D, D: float) -> DiffusionField:
    return DiffusionField(mesh, np.full((mesh.ny, mesh.nx), float(D)), {"constant_D": float(D)})
