"""Physical constants, dot geometry, lattice enumeration and the two
microscopic couplings (hyperfine envelope and nuclear dipole-dipole).

Units used throughout the package: lengths in nm, times in s, couplings as
angular frequencies in rad/s (energies divided by hbar).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EV = 1.602176634e-19  # J per eV (exact, SI 2019)
UEV = 1e-6 * EV
NM = 1e-9


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA 2018 values; nuclear g-factor of 75As, GaAs electron g-factor.

    ``g_e`` enters the electron-mediated coupling exactly as written in the
    Zeeman term ``-g_e muB B0 S^z``. The default -0.44 is the GaAs
    conduction-band value used as-is.
    """

    mu0: float = 1.25663706212e-6  # T m / A
    muB: float = 9.2740100783e-24  # J / T
    muN: float = 5.0507837461e-27  # J / T
    hbar: float = 1.054571817e-34  # J s
    g_e: float = -0.44
    g_n: float = 0.95965  # 75As: mu = 1.43948 muN, I = 3/2

    def __post_init__(self):
        bad = [n for n in ("mu0", "muB", "muN", "hbar") if not getattr(self, n) > 0]
        if self.g_e == 0:
            bad.append("g_e")
        if bad:
            raise ValueError(f"constants must be nonzero/positive: {', '.join(bad)}")

    def energy_to_rate(self, joules: float) -> float:
        """Energy in J -> angular frequency in rad/s."""
        return joules / self.hbar

    def ueV_to_rate(self, ueV: float) -> float:
        return ueV * UEV / self.hbar

    def rate_to_ueV(self, rate: float) -> float:
        return rate * self.hbar / UEV

    @property
    def dipolar_prefactor(self) -> float:
        """(mu0/4pi)(g_n muN)^2 / hbar expressed in rad/s * nm^3."""
        return self.mu0 / (4 * math.pi) * (self.g_n * self.muN) ** 2 / self.hbar / NM**3


@dataclass(frozen=True)
class ElectronConfig:
    """Dot electron state: present with S_z = +-1/2, or absent (S_z == 0)."""

    present: bool = True
    sz: float = 0.5

    def __post_init__(self):
        if self.present and self.sz not in (0.5, -0.5):
            raise ValueError(f"sz must be +1/2 or -1/2, got {self.sz}")

    @classmethod
    def up(cls) -> "ElectronConfig":
        return cls(True, 0.5)

    @classmethod
    def down(cls) -> "ElectronConfig":
        return cls(True, -0.5)

    @classmethod
    def absent(cls) -> "ElectronConfig":
        return cls(False, 0.0)

    @classmethod
    def parse(cls, name: str) -> "ElectronConfig":
        try:
            return {"present_up": cls.up, "present_down": cls.down, "absent": cls.absent}[name]()
        except KeyError:
            raise ValueError(
                f"electron must be present_up, present_down or absent, got {name!r}"
            ) from None

    @property
    def name(self) -> str:
        if not self.present:
            return "absent"
        return "present_up" if self.sz > 0 else "present_down"

    @property
    def spin_sign(self) -> float:
        """2*S_z: +1, -1, or 0 when absent."""
        return 2.0 * self.sz if self.present else 0.0


@dataclass(frozen=True)
class DotModel:
    """All physical parameters of a run. ``A0`` is in rad/s."""

    l0: float = 30.0
    z0: float = 10.0
    A0: float = field(default_factory=lambda: PhysicalConstants().ueV_to_rate(1e-3))
    a0: float = 0.563
    B0: float = 2.0
    spinI: float = 1.5
    electron: ElectronConfig = field(default_factory=ElectronConfig.up)
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)

    def __post_init__(self):
        errors = dot_errors(self)
        if errors:
            raise ValueError("; ".join(errors))

    @classmethod
    def from_ueV(cls, A0_ueV: float = 1e-3, **kw) -> "DotModel":
        consts = kw.get("constants", PhysicalConstants())
        return cls(A0=consts.ueV_to_rate(A0_ueV), **kw)

    @property
    def A0_ueV(self) -> float:
        return self.constants.rate_to_ueV(self.A0)

    @property
    def max_layer(self) -> int:
        """Largest |k| such that layer z = k*a0 lies inside [-z0/2, z0/2]."""
        return int(math.floor(self.z0 / (2 * self.a0) + 1e-9))

    @property
    def electron_zeeman(self) -> float:
        """g_e muB B0 / hbar in rad/s (signed)."""
        c = self.constants
        return c.g_e * c.muB * self.B0 / c.hbar

    @property
    def mediated_factor(self) -> float:
        """Multiplier m with C_ik = B_ik + m A_i A_k; zero without electron."""
        s = self.electron.spin_sign
        if s == 0.0:
            return 0.0
        return s / (4.0 * self.electron_zeeman)

    def hyperfine_sum(self, max_radius_l0: float = 8.0) -> float:
        """Sum of A_k over the lattice slab (rad/s), truncated at max_radius_l0*l0."""
        n = int(math.ceil(max_radius_l0 * self.l0 / self.a0))
        ks = np.arange(-n, n + 1) * self.a0
        ex = np.exp(-(ks**2) / self.l0**2).sum()
        L = self.max_layer
        zs = np.arange(-L, L + 1) * self.a0
        cz = np.cos(np.pi * zs / self.z0) ** 2
        return float(self.A0 * ex * ex * cz.sum())


def dot_errors(dot: DotModel) -> list[str]:
    errors = []
    for name in ("l0", "z0", "a0"):
        if not getattr(dot, name) > 0:
            errors.append(f"{name} must be > 0")
    if not dot.B0 > 0:
        errors.append("B0 must be > 0 (secular approximation invalid)")
    if not dot.A0 >= 0:
        errors.append("A0 must be >= 0")
    if dot.spinI != 1.5:
        errors.append(f"unsupported spin {dot.spinI}: rate constants are for I = 3/2")
    return errors


@dataclass(frozen=True)
class Site:
    index: int
    x: float
    y: float
    z: float

    @property
    def pos(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class LatticeSpec:
    """Simple-cubic lattice of spacing ``a0`` centred on the origin.

    ``half_extent`` gives the number of sites on each side of the origin per
    axis, so an axis holds ``2*h + 1`` sites.
    """

    a0: float
    half_extent: tuple[int, int, int]
    max_sites: int = 10_000_000

    def __post_init__(self):
        if not self.a0 > 0:
            raise ValueError("lattice spacing must be > 0")
        if any(h < 0 for h in self.half_extent):
            raise ValueError("half extents must be >= 0")

    @classmethod
    def box(cls, width: float, height: float, dot: DotModel, **kw) -> "LatticeSpec":
        """Lattice filling a width x height box in-plane and the dot slab in z."""
        hx = int(math.floor(width / (2 * dot.a0) + 1e-9))
        hy = int(math.floor(height / (2 * dot.a0) + 1e-9))
        return cls(dot.a0, (hx, hy, dot.max_layer), **kw)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(2 * h + 1 for h in self.half_extent)

    @property
    def n_sites(self) -> int:
        nx, ny, nz = self.shape
        return nx * ny * nz


def lattice_indices(spec: LatticeSpec) -> np.ndarray:
    """Integer coordinates (N, 3), row-major with x fastest, then y, then z."""
    if spec.n_sites > spec.max_sites:
        raise ValueError(
            f"lattice has {spec.n_sites} sites, above the cap of {spec.max_sites}"
        )
    hx, hy, hz = spec.half_extent
    z, y, x = np.meshgrid(
        np.arange(-hz, hz + 1), np.arange(-hy, hy + 1), np.arange(-hx, hx + 1),
        indexing="ij",
    )
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def build_lattice(spec: LatticeSpec) -> list[Site]:
    idx = lattice_indices(spec)
    pos = idx * spec.a0
    return [Site(n, float(p[0]), float(p[1]), float(p[2])) for n, p in enumerate(pos)]


def hyperfine_profile(pos, dot: DotModel):
    """cos^2(pi z/z0) exp(-(x^2+y^2)/l0^2), zero outside |z| <= z0/2.

    Accepts a single point or an (..., 3) array of points.
    """
    p = np.asarray(pos, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    inside = np.abs(z) <= dot.z0 / 2 * (1 + 1e-12)
    a = np.cos(np.pi * z / dot.z0) ** 2 * np.exp(-(x * x + y * y) / dot.l0**2)
    a = np.where(inside, a, 0.0)
    return float(a) if a.ndim == 0 else a


def hyperfine_coupling(pos, dot: DotModel):
    """A_k = A0 times :func:`hyperfine_profile` (rad/s)."""
    return dot.A0 * hyperfine_profile(pos, dot)


def dipolar_from_vector(d, c: PhysicalConstants):
    """Secular dipolar coupling for separation vector(s) ``d`` in nm (rad/s)."""
    d = np.asarray(d, dtype=float)
    r2 = np.sum(d * d, axis=-1)
    if np.any(r2 == 0):
        raise ValueError("degenerate pair: coincident sites")
    cos2 = d[..., 2] ** 2 / r2
    return c.dipolar_prefactor * (1.0 - 3.0 * cos2) / (r2 * np.sqrt(r2))


def dipolar_coupling(i: Site, j: Site, c: PhysicalConstants) -> float:
    """B_ij = (mu0/4pi)(g_n muN)^2 (1 - 3cos^2 theta) / (R^3 hbar)."""
    d = (i.x - j.x, i.y - j.y, i.z - j.z)
    # squares make the value exactly symmetric in (i, j)
    return float(dipolar_from_vector(d, c))
