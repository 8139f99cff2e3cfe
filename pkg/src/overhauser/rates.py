"""Pairwise nuclear flip-flop rates for spin-3/2 nuclei.

Per-pair reference functions (``knight_detuning``, ``c_coefficient``,
``broadening``, ``flipflop_rate``) work on :class:`Site` objects and sum the
broadening term site by site. :func:`pair_rate_table` evaluates the same
quantities for many probe sites at once and is what the field builder and the
rate network use; the two paths are checked against each other in the tests.

Sites live on a simple-cubic lattice of spacing ``a0`` filling the slab
``|z| <= z0/2`` (optionally restricted to fewer layers via
``RateParams.max_layer``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import DotModel, Site, dipolar_from_vector, hyperfine_coupling

SQRT_2PI = math.sqrt(2 * math.pi)
W1 = 17 * SQRT_2PI / 5
W2 = 12 * SQRT_2PI / 5
W3 = 9 * SQRT_2PI / 10
G_FACTOR = 80.0


@dataclass(frozen=True)
class RateParams:
    """Truncation radii (nm) for the pair sum and for the broadening j-sum.

    ``max_layer`` restricts the lattice to layers ``|k| <= max_layer``
    (``None``: every layer inside the dot slab).
    """

    pair_cutoff_radius: float
    broadening_cutoff_radius: float
    max_layer: int | None = None

    @classmethod
    def for_dot(cls, dot: DotModel, pair: float = 3.0, broadening: float = 6.0,
                max_layer: int | None = None) -> "RateParams":
        """Cutoffs given in units of the lattice constant."""
        return cls(pair * dot.a0, broadening * dot.a0, max_layer)

    def errors(self, dot: DotModel) -> list[str]:
        errs = []
        lim = 2 * dot.a0 * (1 - 1e-9)
        if self.pair_cutoff_radius < lim:
            errs.append("pair_cutoff_radius must be >= 2*a0")
        if self.broadening_cutoff_radius < lim:
            errs.append("broadening_cutoff_radius must be >= 2*a0")
        if self.max_layer is not None and self.max_layer < 0:
            errs.append("max_layer must be >= 0")
        return errs

    def check(self, dot: DotModel) -> None:
        errs = self.errors(dot)
        if errs:
            raise ValueError("; ".join(errs))

    def layer_limit(self, dot: DotModel) -> int:
        L = dot.max_layer
        return L if self.max_layer is None else min(L, self.max_layer)


@dataclass(frozen=True)
class PairRate:
    i: int
    k: int
    W: float


def check_spin(dot: DotModel) -> None:
    if dot.spinI != 1.5:
        raise ValueError(f"unsupported spin {dot.spinI}")


def w_closed_form(C, Aik, g):
    """Three-term flip-flop rate from coupling C, detuning Aik and broadening g.

    Works elementwise on arrays; returns 0 where C == 0.
    """
    C = np.asarray(C, dtype=float)
    C2 = C * C
    base = np.asarray(Aik, dtype=float) ** 2 + np.asarray(g, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = C2 * (W1 / np.sqrt(base) + W2 / np.sqrt(base + 64 * C2)
                  + W3 / np.sqrt(base + 256 * C2))
    w = np.where(C2 > 0, w, 0.0)
    return float(w) if w.ndim == 0 else w


# ---------------------------------------------------------------------------
# lattice helpers


def lattice_index(s: Site, a0: float) -> tuple[int, int, int]:
    return (round(s.x / a0), round(s.y / a0), round(s.z / a0))


def _sorted_ball(radius: float, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Integer points within ``radius`` of ``center``, ordered z, then y, then x."""
    c = np.asarray(center, dtype=float)
    lo = np.floor(c - radius).astype(int)
    hi = np.ceil(c + radius).astype(int)
    z, y, x = np.meshgrid(*(np.arange(lo[a], hi[a] + 1) for a in (2, 1, 0)), indexing="ij")
    pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    d2 = np.sum((pts - c) ** 2, axis=1)
    return pts[d2 <= radius * radius * (1 + 1e-12)]


@lru_cache(maxsize=64)
def pair_offsets(radius_l: float, in_plane_only: bool = False) -> np.ndarray:
    """Nonzero integer offsets within ``radius_l`` lattice units.

    ``in_plane_only`` drops offsets with no x/y component (they carry no
    weight in the 2D diffusion coefficient).
    """
    pts = _sorted_ball(radius_l)
    keep = np.any(pts != 0, axis=1)
    if in_plane_only:
        keep &= np.any(pts[:, :2] != 0, axis=1)
    out = pts[keep]
    out.setflags(write=False)
    return out


@lru_cache(maxsize=4096)
def _window(o: tuple[int, int, int], radius_l: float) -> np.ndarray:
    """j offsets (relative to k) within ``radius_l`` of the pair midpoint, j != 0, o."""
    o_arr = np.asarray(o)
    pts = _sorted_ball(radius_l, o_arr / 2.0)
    keep = np.any(pts != 0, axis=1) & np.any(pts != o_arr, axis=1)
    out = pts[keep]
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# per-pair reference functions


def knight_detuning(i: Site, k: Site, dot: DotModel) -> float:
    """A_ik = 2 S_z (A_i - A_k); zero when the electron is absent."""
    s = dot.electron.spin_sign
    if s == 0.0:
        return 0.0
    return s * (hyperfine_coupling((i.x, i.y, i.z), dot) - hyperfine_coupling((k.x, k.y, k.z), dot))


def c_coefficient(i: Site, k: Site, dot: DotModel) -> float:
    """C_ik = B_ik + 2 S_z A_i A_k / (4 g_e muB B0 / hbar)."""
    if not dot.B0 > 0:
        raise ValueError("secular approximation invalid: B0 must be > 0")
    d = (i.x - k.x, i.y - k.y, i.z - k.z)
    b = float(dipolar_from_vector(d, dot.constants))
    m = dot.mediated_factor
    if m == 0.0:
        return b
    ai = hyperfine_coupling((i.x, i.y, i.z), dot)
    ak = hyperfine_coupling((k.x, k.y, k.z), dot)
    return b + m * (ai * ak)


def broadening_sites(i: Site, k: Site, dot: DotModel, p: RateParams) -> np.ndarray:
    """Lattice positions (nm) of the j-sites entering the broadening of (i, k)."""
    a0 = dot.a0
    ii = np.array(lattice_index(i, a0))
    kk = np.array(lattice_index(k, a0))
    center = (ii + kk) / 2.0
    pts = _sorted_ball(p.broadening_cutoff_radius / a0, center)
    keep = np.any(pts != ii, axis=1) & np.any(pts != kk, axis=1)
    keep &= np.abs(pts[:, 2]) <= p.layer_limit(dot)
    return pts[keep] * a0


def broadening(i: Site, k: Site, dot: DotModel, p: RateParams) -> float:
    """g_ik = 80 sum_{j != i,k} (C_ij - C_kj)^2 over j near the pair."""
    p.check(dot)
    pj = broadening_sites(i, k, dot, p)
    if len(pj) == 0:
        return 0.0
    pi, pk = i.pos, k.pos
    c = dot.constants
    diff = dipolar_from_vector(pj - pi, c) - dipolar_from_vector(pj - pk, c)
    m = dot.mediated_factor
    if m != 0.0:
        aj = hyperfine_coupling(pj, dot)
        ai = hyperfine_coupling(pi, dot)
        ak = hyperfine_coupling(pk, dot)
        diff = diff + m * (ai * aj - ak * aj)
    sq = diff * diff
    total = 0.0
    for v in sq:  # fixed ascending-index order
        total += v
    return G_FACTOR * total


def flipflop_rate(i: Site, k: Site, dot: DotModel, p: RateParams) -> float:
    """W_ik in rad/s (used as a rate constant in 1/s); 0 beyond the pair cutoff."""
    check_spin(dot)
    d2 = (i.x - k.x) ** 2 + (i.y - k.y) ** 2 + (i.z - k.z) ** 2
    if d2 > p.pair_cutoff_radius**2 * (1 + 1e-12):
        return 0.0
    C = c_coefficient(i, k, dot)
    A = knight_detuning(i, k, dot)
    g = broadening(i, k, dot, p)
    return w_closed_form(C, A, g)


def pair_report(i: Site, k: Site, dot: DotModel, p: RateParams) -> dict:
    return {
        "i": i.index, "k": k.index,
        "R_nm": math.dist((i.x, i.y, i.z), (k.x, k.y, k.z)),
        "A_ik": knight_detuning(i, k, dot),
        "C_ik": c_coefficient(i, k, dot),
        "g_ik": broadening(i, k, dot, p),
        "W_ik": flipflop_rate(i, k, dot, p),
    }


# ---------------------------------------------------------------------------
# batched evaluation


@dataclass(frozen=True)
class RateTable:
    """Rates for probe sites k (rows) and neighbour offsets o (columns)."""

    offsets: np.ndarray  # (M, 3) integer, i = k + o
    C: np.ndarray
    Aik: np.ndarray
    g: np.ndarray
    W: np.ndarray


def _axis_gauss(k: np.ndarray, R: int, a0: float, l0: float) -> np.ndarray:
    d = np.arange(-R, R + 1)
    x = (k[:, None] + d[None, :]) * a0
    return np.exp(-(x * x) / l0**2)


def pair_rate_table(kidx, dot: DotModel, p: RateParams, offsets=None,
                    chunk: int = 2048) -> RateTable:
    """Evaluate C, A_ik, g and W for every probe in ``kidx`` and every offset.

    ``kidx`` holds integer lattice coordinates (N, 3). Offsets default to all
    pair offsets inside the pair cutoff. Pairs whose partner layer lies
    outside the lattice get W = 0.

    The j-sum of the broadening is expanded as
    ``sum (dB_j + m d A_j)^2 = S0 + 2 m d S1 + m^2 d^2 S2`` with
    ``d = A_i - A_k``; S1 and S2 are contractions of fixed per-offset kernels
    with the separable hyperfine envelope, so no per-j work is done per probe.
    """
    check_spin(dot)
    p.check(dot)
    kidx = np.asarray(kidx, dtype=int).reshape(-1, 3)
    if offsets is None:
        offsets = pair_offsets(p.pair_cutoff_radius / dot.a0)
    offsets = np.asarray(offsets, dtype=int).reshape(-1, 3)
    N, M = len(kidx), len(offsets)
    out = {name: np.zeros((N, M)) for name in ("C", "Aik", "g", "W")}
    if N == 0 or M == 0:
        return RateTable(offsets, **out)

    a0, l0 = dot.a0, dot.l0
    L = p.layer_limit(dot)
    bc_l = p.broadening_cutoff_radius / a0
    windows = [_window(tuple(int(v) for v in o), bc_l) for o in offsets]
    R = int(max(np.abs(offsets).max(), max(np.abs(w).max() for w in windows if len(w))))
    width = 2 * R + 1
    c = dot.constants
    B_pair = dipolar_from_vector(offsets * a0, c)
    m = dot.mediated_factor
    s = dot.electron.spin_sign

    for kz in np.unique(kidx[:, 2]):
        rows = np.nonzero(kidx[:, 2] == kz)[0]
        if abs(kz) > L:
            raise ValueError(f"probe layer {kz} outside the lattice (|k| <= {L})")
        layers = kz + np.arange(-R, R + 1)
        exists = np.abs(layers) <= L
        cz = np.where(exists, np.cos(np.pi * layers * a0 / dot.z0) ** 2, 0.0)

        T1 = np.zeros((M, width, width, width))
        T2 = np.zeros((M, width, width, width))
        S0 = np.zeros(M)
        for mi, (o, win) in enumerate(zip(offsets, windows)):
            if len(win) == 0:
                continue
            ok = exists[win[:, 2] + R]
            win = win[ok]
            dB = dipolar_from_vector((win - o) * a0, c) - dipolar_from_vector(win * a0, c)
            S0[mi] = np.sum(dB * dB)
            ix = tuple((win + R).T)
            T1[(mi,) + ix] = dB
            T2[(mi,) + ix] = 1.0
        # fold the z axis against the layer envelope: (M, X, Y)
        Q1 = np.tensordot(T1, cz, axes=([3], [0]))
        Q2 = np.tensordot(T2, cz * cz, axes=([3], [0]))
        Q1t = Q1.transpose(1, 0, 2).reshape(width, M * width)
        Q2t = Q2.transpose(1, 0, 2).reshape(width, M * width)

        oz_ok = exists[offsets[:, 2] + R]
        cz_i = cz[offsets[:, 2] + R]
        cz_k = cz[R]
        for start in range(0, len(rows), chunk):
            r = rows[start:start + chunk]
            ex = _axis_gauss(kidx[r, 0], R, a0, l0)
            ey = _axis_gauss(kidx[r, 1], R, a0, l0)
            Ai = dot.A0 * cz_i[None, :] * ex[:, offsets[:, 0] + R] * ey[:, offsets[:, 1] + R]
            Ak = (dot.A0 * cz_k * ex[:, R] * ey[:, R])[:, None]
            d = Ai - Ak
            C = B_pair[None, :] + m * (Ai * Ak)
            g = np.broadcast_to(S0, d.shape).copy()
            if m != 0.0:
                n = len(r)
                S1 = np.einsum("nmy,ny->nm", (ex @ Q1t).reshape(n, M, width), ey)
                S2 = np.einsum("nmy,ny->nm", ((ex * ex) @ Q2t).reshape(n, M, width), ey * ey)
                S1 *= dot.A0
                S2 *= dot.A0**2
                g += 2 * m * d * S1 + (m * d) ** 2 * S2
                np.maximum(g, 0.0, out=g)
            Aik = s * d
            W = w_closed_form(C, Aik, G_FACTOR * g)
            W = np.where(oz_ok[None, :], W, 0.0)
            out["C"][r] = C
            out["Aik"][r] = Aik
            out["g"][r] = G_FACTOR * g
            out["W"][r] = W
    return RateTable(offsets, **out)
