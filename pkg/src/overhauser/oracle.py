"""Direct integration of the discrete rate equation on small lattices.

    dI_k/dt = sum_{i != k} W_ik (I_i - I_k)

This is the microscopic reference for the coarse-grained PDE. Networks are
built from the same batched rate evaluation the diffusion field uses, so a
disagreement isolates the continuum approximation rather than the rates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.integrate import solve_ivp

from .model import DotModel, Site, hyperfine_profile
from .rates import RateParams, pair_offsets, pair_rate_table

DEFAULT_SITE_CAP = 50_000


class NetworkError(RuntimeError):
    pass


@dataclass(frozen=True)
class RateNetwork:
    sites: list[Site]
    rates: sp.csr_matrix  # symmetric, zero diagonal, 1/s
    state: np.ndarray

    @property
    def generator(self) -> sp.csr_matrix:
        """L with dI/dt = L I (rows sum to zero)."""
        return (self.rates - sp.diags(np.asarray(self.rates.sum(axis=1)).ravel())).tocsr()

    @property
    def positions(self) -> np.ndarray:
        return np.array([[s.x, s.y, s.z] for s in self.sites])

    def with_state(self, state) -> "RateNetwork":
        state = np.asarray(state, dtype=float)
        if state.shape != (len(self.sites),):
            raise ValueError("state must have one value per site")
        return RateNetwork(self.sites, self.rates, state)


def _half_offsets(offsets: np.ndarray) -> np.ndarray:
    """Keep one of each +-o pair (lexicographically positive on (z, y, x))."""
    keep = []
    for o in offsets:
        z, y, x = o[2], o[1], o[0]
        keep.append(z > 0 or (z == 0 and (y > 0 or (y == 0 and x > 0))))
    return offsets[np.array(keep)]


def build_network(sites: list[Site], dot: DotModel, p: RateParams,
                  cap: int = DEFAULT_SITE_CAP) -> RateNetwork:
    """All pairs within the pair cutoff; each pair is evaluated once."""
    if len(sites) > cap:
        raise NetworkError(f"{len(sites)} sites exceed the network cap of {cap}")
    a0 = dot.a0
    idx = np.array([[round(s.x / a0), round(s.y / a0), round(s.z / a0)] for s in sites],
                   dtype=int).reshape(-1, 3)
    lookup = {tuple(v): n for n, v in enumerate(idx)}
    if len(lookup) != len(sites):
        raise NetworkError("duplicate sites")
    offs = _half_offsets(np.asarray(pair_offsets(p.pair_cutoff_radius / a0)))
    tab = pair_rate_table(idx, dot, p, offs)
    rows, cols, vals = [], [], []
    for m, o in enumerate(offs):
        for n in np.nonzero(tab.W[:, m] > 0)[0]:
            j = lookup.get((idx[n, 0] + o[0], idx[n, 1] + o[1], idx[n, 2] + o[2]))
            if j is not None:
                rows.append(n)
                cols.append(j)
                vals.append(tab.W[n, m])
    n = len(sites)
    upper = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
    W = (upper + upper.T).tocsr()
    W.sum_duplicates()
    return RateNetwork(list(sites), W, np.zeros(n))


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    states: np.ndarray  # (len(t), n_sites)
    nfev: int

    def conservation_drift(self) -> float:
        tot = self.states.sum(axis=1)
        return float(np.max(np.abs(tot - tot[0])) / max(abs(tot[0]), 1e-300))


@njit(cache=True)
def _pair_flow(indptr, cols, w, y):
    """sum_i W_ki (y_i - y_k) per row; exactly zero for uniform y."""
    n = len(indptr) - 1
    out = np.zeros(n)
    for k in range(n):
        acc = 0.0
        yk = y[k]
        for m in range(indptr[k], indptr[k + 1]):
            acc += w[m] * (y[cols[m]] - yk)
        out[k] = acc
    return out


def integrate_network(net: RateNetwork, t_end: float, tol: float = 1e-9,
                      t_eval=None, method: str = "RK45") -> Trajectory:
    """Adaptive embedded Runge-Kutta integration of the linear rate system."""
    if not tol > 0:
        raise ValueError("tol must be > 0")
    W = net.rates.tocsr()
    n = W.shape[0]
    indptr, cols, w = W.indptr, W.indices, W.data

    def rhs(t, y):
        return _pair_flow(indptr, cols, w, y)

    t_eval = np.linspace(0.0, t_end, 101) if t_eval is None else np.asarray(t_eval, dtype=float)
    sol = solve_ivp(rhs, (0.0, t_end), net.state, method=method,
                    t_eval=t_eval, rtol=tol, atol=tol * max(float(np.max(np.abs(net.state))), 1e-300))
    if sol.status != 0:
        raise NetworkError(f"integration aborted: {sol.message}")
    return Trajectory(sol.t, sol.y.T, sol.nfev)


def square_patch(half_width: int, dot: DotModel, layer: int = 0) -> list[Site]:
    """Single-layer (2n+1)^2 patch of lattice sites, row-major."""
    r = np.arange(-half_width, half_width + 1)
    a0 = dot.a0
    out = []
    for iy in r:
        for ix in r:
            out.append(Site(len(out), ix * a0, iy * a0, layer * a0))
    return out


def network_overhauser(net: RateNetwork, states: np.ndarray, dot: DotModel) -> np.ndarray:
    """h_z(t) / A0 = sum_k (A_k / A0) I_k(t) for each row of ``states``."""
    A = hyperfine_profile(net.positions, dot)
    return np.asarray(states) @ A


# -- network vs PDE comparison ----------------------------------------------


def scaled_dot(dot: DotModel, l0_sites: float = 8.0) -> DotModel:
    """Shrink the dot to l0 = l0_sites * a0 keeping the rate landscape similar.

    With s = l0'/l0, A0 -> s A0 keeps the Knight detuning per lattice step
    and B0 -> s^2 B0 keeps the mediated coupling A_i A_k / B0, so the
    Knight-suppressed and mediated regions land at the same r / l0.
    """
    s = l0_sites * dot.a0 / dot.l0
    return replace(dot, l0=dot.l0 * s, z0=dot.z0 * s, A0=dot.A0 * s, B0=dot.B0 * s * s)


@dataclass(frozen=True)
class OracleComparison:
    label: str
    t: np.ndarray
    h_network: np.ndarray
    h_pde: np.ndarray
    t_half_network: float
    t_half_pde: float | None
    max_rel_error: float  # over t <= t_half_network
    drift: float
    n_sites: int
    tolerance: float
    drift_tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance and self.drift <= self.drift_tolerance

    def summary(self) -> dict:
        return {
            "label": self.label,
            "n_sites": self.n_sites,
            "t_half_network_s": self.t_half_network,
            "t_half_pde_s": self.t_half_pde,
            "max_rel_error": self.max_rel_error,
            "tolerance": self.tolerance,
            "conservation_drift": self.drift,
            "drift_tolerance": self.drift_tolerance,
            "passed": self.passed,
        }


def compare_network_pde(dot: DotModel, p: RateParams, half_width: int = 80, r0: float | None = None,
                        form: str = "nondivergence", tol: float = 1e-9, samples: int = 400,
                        tolerance: float = 0.05, drift_tolerance: float = 1e-9,
                        label: str = "") -> OracleComparison:
    """Integrate the single-layer network and the PDE on a matching mesh.

    The PDE mesh has one node per lattice site (h = a0). The horizon is
    doubled until the network curve passes 0.5.
    """
    from .dfield import Mesh2D, build_field
    from .observables import DecayCurve, half_decay_time, hyperfine_weights, overhauser
    from .solver import SolverConfig, evolve_iter, make_initial

    p = replace(p, max_layer=0)
    r0 = dot.l0 if r0 is None else r0
    sites = square_patch(half_width, dot)
    net = build_network(sites, dot, p)
    X = net.positions
    I0 = np.exp(-(X[:, 0] ** 2 + X[:, 1] ** 2) / r0**2)
    A = hyperfine_profile(X, dot)
    n = 2 * half_width + 1
    mesh = Mesh2D(n, n, dot.a0, (-half_width * dot.a0, -half_width * dot.a0))
    field = build_field(mesh, dot, p)

    h0 = float(I0 @ A)
    horizon = dot.l0**2 / max(2.0 * float(np.median(field.values)), 1e-300)
    states, ts, nfev = [I0[None, :]], [np.zeros(1)], 0
    t0, y = 0.0, I0
    while True:
        t_eval = np.linspace(t0, horizon, samples + 1)[1:]
        tr = integrate_network(net.with_state(y), horizon - t0, tol, t_eval - t0)
        states.append(tr.states)
        ts.append(t_eval)
        nfev += tr.nfev
        y = tr.states[-1]
        if (y @ A) / h0 <= 0.5 or len(ts) > 12:
            break
        t0, horizon = horizon, 2 * horizon
    t = np.concatenate(ts)
    S = np.vstack(states)
    hn = (S @ A) / h0
    drift = Trajectory(t, S, nfev).conservation_drift()
    th_net = half_decay_time(DecayCurve(t, hn))

    cfg = SolverConfig(t_end=float(t[-1]), scheme="adi", form=form, dt=float(t[-1]) * 1e-6,
                       dt_growth=1.01, dt_max=float(t[-1]) / 3000)
    w = hyperfine_weights(mesh, dot)
    init = make_initial(mesh, dot, r0)
    hp = np.array([overhauser(s, dot, w) for s in evolve_iter(init, field, cfg, t)])
    hp /= hp[0]
    try:
        th_pde = half_decay_time(DecayCurve(t, hp))
    except ValueError:
        th_pde = None
    m = t <= th_net
    err = float(np.max(np.abs(hp[m] - hn[m]) / hn[m]))
    return OracleComparison(label, t, hn, hp, th_net, th_pde, err, drift, len(sites),
                            tolerance, drift_tolerance)
