"""The Ornstein-Uhlenbeck field (Y, Z) on an atomic grid.

Per mean-reversion speed x the pair solves

    dY^x = -x Y^x dt + dW,      dZ^x = (-x Z^x + Y^x) dt,

driven by one shared Brownian motion.  Over a step of length dt the
conditional law is Gaussian with

    Y^x_{t+dt} = e^{-dt x} Y^x_t + xi_x,
    Z^x_{t+dt} = e^{-dt x} Z^x_t + dt e^{-dt x} Y^x_t + zeta_x,

where xi_x = int_0^dt e^{-(dt-s)x} dW_s and zeta_x =
int_0^dt (dt-s) e^{-(dt-s)x} dW_s.  All covariances among the xi, the
zeta, and the raw increment dW = int_0^dt dW_s are the elementary
integrals int_0^dt s^k e^{-(x+y)s} ds, evaluated in closed form, so the
sampler is exact in law at any step size.  The increment dW is drawn
jointly with the update so that other drivers (the price leg of the
Stein model, the semimartingale residual check) can correlate with it.

Z coordinates must sit on atoms where Y is simulated (the Z drift
couples to Y at the same speed); grids are extended to the atom union
with zero weights where a measure has no mass.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError
from .measures import GridMeasure
from .numerics import exp_moment, psd_factor


def _resolve_atoms(
    gm_mu: Optional[GridMeasure], gm_nu: Optional[GridMeasure]
) -> tuple[np.ndarray, np.ndarray]:
    """(Y atoms, Z atoms): Y on the union of both grids, Z on the nu grid."""
    if gm_mu is None and gm_nu is None:
        raise ValueError("at least one grid measure is required")
    if gm_nu is None:
        return gm_mu.x.copy(), np.empty(0)
    if gm_mu is None:
        return gm_nu.x.copy(), gm_nu.x.copy()
    y_atoms = np.union1d(gm_mu.x, gm_nu.x)
    return y_atoms, gm_nu.x.copy()


def _locate(haystack: np.ndarray, needles: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(haystack, needles)
    if np.any(idx >= haystack.size) or np.any(haystack[idx] != needles):
        raise ValueError("atoms not found in the simulation grid")
    return idx


@dataclass
class OUState:
    """Field values at one time: Y on y_atoms, Z on z_atoms.

    Carries its grid measures so that pairings know the weights.
    """

    t: float
    y: np.ndarray
    z: np.ndarray
    y_atoms: np.ndarray
    z_atoms: np.ndarray
    gm_mu: Optional[GridMeasure] = None
    gm_nu: Optional[GridMeasure] = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        self.y_atoms = np.asarray(self.y_atoms, dtype=float)
        self.z_atoms = np.asarray(self.z_atoms, dtype=float)
        if self.y.shape != self.y_atoms.shape or self.z.shape != self.z_atoms.shape:
            raise ValueError("state lengths must match their atom grids")
        if self.t < 0:
            raise ValueError("time must be nonnegative")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.z))):
            raise ValueError("state entries must be finite")


class TransitionKernel:
    """Exact joint-Gaussian transition over a fixed step.

    Holds the decay factors, the Y->Z drift coupling, the covariance of
    the stacked update (xi, zeta), the loading of each coordinate on
    the step's Brownian increment, and a sampling factor of the full
    (xi, zeta, dW) covariance.  Immutable once built; shareable across
    paths and threads.
    """

    def __init__(self, y_atoms: np.ndarray, z_atoms: np.ndarray, dt: float):
        if dt <= 0:
            raise ValueError("step size must be positive")
        self.dt = float(dt)
        self.y_atoms = np.asarray(y_atoms, dtype=float)
        self.z_atoms = np.asarray(z_atoms, dtype=float)
        self.z_in_y = _locate(self.y_atoms, self.z_atoms)
        self.decay_y = np.exp(-dt * self.y_atoms)
        self.decay_z = np.exp(-dt * self.z_atoms)
        self.drift_coupling = dt * self.decay_z  # multiplies Y at the z atoms

        n, m = self.y_atoms.size, self.z_atoms.size
        ax = self.y_atoms
        az = self.z_atoms
        cov = np.empty((n + m + 1, n + m + 1))
        cov[:n, :n] = exp_moment(ax[:, None] + ax[None, :], dt, 0)
        if m:
            cov[:n, n : n + m] = exp_moment(ax[:, None] + az[None, :], dt, 1)
            cov[n : n + m, :n] = cov[:n, n : n + m].T
            cov[n : n + m, n : n + m] = exp_moment(az[:, None] + az[None, :], dt, 2)
        # loadings on the raw increment: int_0^dt s^k e^{-x s} ds
        cov[:n, n + m] = exp_moment(ax, dt, 0)
        cov[n + m, :n] = cov[:n, n + m]
        if m:
            cov[n : n + m, n + m] = exp_moment(az, dt, 1)
            cov[n + m, n : n + m] = cov[n : n + m, n + m]
        cov[n + m, n + m] = dt

        self.cov_yz = cov[: n + m, : n + m].copy()
        self.bm_loading = cov[: n + m, n + m].copy()
        self.full_cov = cov
        self.factor = psd_factor(cov)

    @property
    def n_y(self) -> int:
        return self.y_atoms.size

    @property
    def n_z(self) -> int:
        return self.z_atoms.size

    @property
    def sample_dim(self) -> int:
        """Standard normals consumed per step."""
        return self.factor.shape[1]

    def draw(self, eps: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Map standard normals (paths, sample_dim) to (xi, zeta, dW)."""
        upd = eps @ self.factor.T
        n, m = self.n_y, self.n_z
        return upd[..., :n], upd[..., n : n + m], upd[..., n + m]

    def step_arrays(
        self, y: np.ndarray, z: np.ndarray, eps: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Advance (paths, n_y) x (paths, n_z) blocks by one step."""
        xi, zeta, dw = self.draw(eps)
        y_new = y * self.decay_y + xi
        z_new = z * self.decay_z + y[..., self.z_in_y] * self.drift_coupling + zeta
        return y_new, z_new, dw


def make_kernel(
    gm_mu: Optional[GridMeasure], gm_nu: Optional[GridMeasure], dt: float
) -> TransitionKernel:
    y_atoms, z_atoms = _resolve_atoms(gm_mu, gm_nu)
    return TransitionKernel(y_atoms, z_atoms, dt)


def stationary_cov(y_atoms: np.ndarray, z_atoms: np.ndarray) -> np.ndarray:
    """Joint covariance of the stationary field (the dt -> infinity
    limits of the transition covariances):

        Cov(Y_i, Y_j) = 1/(x_i + x_j),
        Cov(Y_i, Z_j) = 1/(x_i + x_j)^2,
        Cov(Z_i, Z_j) = 2/(x_i + x_j)^3.
    """
    n, m = y_atoms.size, z_atoms.size
    cov = np.empty((n + m, n + m))
    s_yy = y_atoms[:, None] + y_atoms[None, :]
    cov[:n, :n] = 1.0 / s_yy
    if m:
        s_yz = y_atoms[:, None] + z_atoms[None, :]
        s_zz = z_atoms[:, None] + z_atoms[None, :]
        cov[:n, n:] = 1.0 / s_yz**2
        cov[n:, :n] = cov[:n, n:].T
        cov[n:, n:] = 2.0 / s_zz**3
    return cov


def init_state(
    gm_mu: Optional[GridMeasure],
    gm_nu: Optional[GridMeasure],
    mode: str = "zero",
    rng: Optional[np.random.Generator] = None,
    y0: Optional[np.ndarray] = None,
    z0: Optional[np.ndarray] = None,
) -> OUState:
    """Initial field: zeros, one stationary draw, or explicit values.

    Stationary mode draws (Y, Z) jointly from the Gaussian law with the
    covariances of :func:`stationary_cov`; all variances are finite on
    an atomic grid with positive atoms.
    """
    y_atoms, z_atoms = _resolve_atoms(gm_mu, gm_nu)
    n, m = y_atoms.size, z_atoms.size
    if mode == "zero":
        y = np.zeros(n)
        z = np.zeros(m)
    elif mode == "stationary":
        if rng is None:
            raise ValueError("stationary initialization needs an rng")
        fac = psd_factor(stationary_cov(y_atoms, z_atoms))
        draw = fac @ rng.standard_normal(fac.shape[1])
        y, z = draw[:n], draw[n:]
    elif mode == "explicit":
        y = np.asarray(y0, dtype=float)
        z = np.asarray(z0, dtype=float) if z0 is not None else np.zeros(m)
        if y.shape != (n,) or z.shape != (m,):
            raise ValueError(
                f"explicit state must have lengths {n} (Y) and {m} (Z), "
                f"got {y.shape} and {z.shape}"
            )
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    return OUState(
        t=0.0, y=y, z=z, y_atoms=y_atoms, z_atoms=z_atoms, gm_mu=gm_mu, gm_nu=gm_nu
    )


def stationary_init_block(
    y_atoms: np.ndarray,
    z_atoms: np.ndarray,
    eps: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Map standard normals (paths, k) to stationary (Y, Z) blocks."""
    fac = psd_factor(stationary_cov(y_atoms, z_atoms))
    draw = eps[:, : fac.shape[1]] @ fac.T
    n = y_atoms.size
    return draw[:, :n], draw[:, n:]


def stationary_sample_dim(y_atoms: np.ndarray, z_atoms: np.ndarray) -> int:
    return psd_factor(stationary_cov(y_atoms, z_atoms)).shape[1]


def step(
    state: OUState, kernel: TransitionKernel, rng: np.random.Generator
) -> tuple[OUState, float]:
    """One exact transition; returns the new state and the Brownian
    increment of the step (drawn jointly with the update)."""
    if state.y_atoms.shape != kernel.y_atoms.shape or np.any(
        state.y_atoms != kernel.y_atoms
    ):
        raise ValueError("kernel was built for a different Y grid")
    if state.z_atoms.shape != kernel.z_atoms.shape or np.any(
        state.z_atoms != kernel.z_atoms
    ):
        raise ValueError("kernel was built for a different Z grid")
    eps = rng.standard_normal((1, kernel.sample_dim))
    y, z, dw = kernel.step_arrays(state.y[None, :], state.z[None, :], eps)
    new = replace(state, t=state.t + kernel.dt, y=y[0], z=z[0])
    return new, float(dw[0])


def pair(
    state: OUState, u: Optional[np.ndarray], v: Optional[np.ndarray]
) -> tuple[float, float]:
    """(<Y, u>_mu, <Z, v>_nu) at the current state.

    u lives on the mu atoms, v on the nu atoms; either may be None.
    """
    yu = 0.0
    zv = 0.0
    if u is not None:
        if state.gm_mu is None:
            raise ValueError("state carries no mu grid")
        u = np.asarray(u, dtype=float)
        if u.shape != state.gm_mu.x.shape:
            raise ValueError("u must match the mu atoms")
        idx = _locate(state.y_atoms, state.gm_mu.x)
        yu = float(np.sum(state.gm_mu.w * u * state.y[idx]))
    if v is not None:
        if state.gm_nu is None:
            raise ValueError("state carries no nu grid")
        v = np.asarray(v, dtype=float)
        if v.shape != state.gm_nu.x.shape:
            raise ValueError("v must match the nu atoms")
        zv = float(np.sum(state.gm_nu.w * v * state.z))
    return yu, zv


def cov_operator(gm: GridMeasure, tau: float, which: str = "P") -> np.ndarray:
    """Unweighted covariance kernel matrix over the grid atoms.

    P entries (1 - e^{-tau(x_i+x_j)})/(x_i+x_j); Q entries
    (2 - e^{-tau(x_i+x_j)}(2 + 2 tau (x_i+x_j) + tau^2 (x_i+x_j)^2))
    / (x_i+x_j)^3.  Callers apply the measure weights.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    s = gm.x[:, None] + gm.x[None, :]
    if which == "P":
        return np.asarray(exp_moment(s, tau, 0))
    if which == "Q":
        return np.asarray(exp_moment(s, tau, 2))
    raise ValueError(f"unknown covariance operator {which!r}")


@dataclass
class OUPath:
    """A simulated trajectory on a uniform time grid, with the
    per-step Brownian increments recorded."""

    states: list[OUState]
    bm_increments: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])


def simulate_path(
    gm_mu: Optional[GridMeasure],
    gm_nu: Optional[GridMeasure],
    times: Sequence[float],
    rng: np.random.Generator,
    init: str = "zero",
) -> OUPath:
    """Exact path sampled at the given increasing times (t[0] = the
    initial time 0)."""
    times = np.asarray(times, dtype=float)
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must increase from 0")
    state = init_state(gm_mu, gm_nu, mode=init, rng=rng)
    states = [state]
    increments = np.empty(times.size - 1)
    kernels: dict[float, TransitionKernel] = {}
    for k, dt in enumerate(np.diff(times)):
        kern = kernels.get(dt)
        if kern is None:
            kern = TransitionKernel(state.y_atoms, state.z_atoms, dt)
            kernels[dt] = kern
        state, dw = step(state, kern, rng)
        states.append(state)
        increments[k] = dw
    return OUPath(states=states, bm_increments=increments)


def semimartingale_residual(
    path: OUPath,
    f: Optional[Callable[[float], np.ndarray]] = None,
    df_dt: Optional[Callable[[float], np.ndarray]] = None,
    g: Optional[Callable[[float], np.ndarray]] = None,
    dg_dt: Optional[Callable[[float], np.ndarray]] = None,
) -> tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    """Per-step residuals of the semimartingale decompositions

        d<Y_t, f_t>_mu = <(d_t f - x f), Y_t>_mu dt + <f_t, 1>_mu dW_t,
        d<Z_t, g_t>_nu = <(d_t g - x g), Z_t>_nu dt + <g_t Y_t, 1>_nu dt,

    with left-endpoint quadrature of the dt terms and the recorded
    per-step Brownian increments for the dW term.  Residuals shrink at
    order >= 1 in the step size on an exact path.
    """
    if path.bm_increments is None or len(path.bm_increments) != len(path.states) - 1:
        raise ValueError("path is missing its Brownian increment record")
    n_steps = len(path.states) - 1
    res_y = np.empty(n_steps) if f is not None else None
    res_z = np.empty(n_steps) if g is not None else None
    if f is not None and df_dt is None:
        raise ValueError("f requires its time derivative df_dt")
    if g is not None and dg_dt is None:
        raise ValueError("g requires its time derivative dg_dt")
    for k in range(n_steps):
        s0, s1 = path.states[k], path.states[k + 1]
        dt = s1.t - s0.t
        if f is not None:
            gm = s0.gm_mu
            idx = _locate(s0.y_atoms, gm.x)
            f0, f1 = f(s0.t), f(s1.t)
            dpair = np.sum(gm.w * f1 * s1.y[idx]) - np.sum(gm.w * f0 * s0.y[idx])
            drift = np.sum(gm.w * (df_dt(s0.t) - gm.x * f0) * s0.y[idx]) * dt
            mart = np.sum(gm.w * f0) * path.bm_increments[k]
            res_y[k] = dpair - drift - mart
        if g is not None:
            gm = s0.gm_nu
            idx = _locate(s0.y_atoms, gm.x)
            g0, g1 = g(s0.t), g(s1.t)
            dpair = np.sum(gm.w * g1 * s1.z) - np.sum(gm.w * g0 * s0.z)
            drift = np.sum(gm.w * (dg_dt(s0.t) - gm.x * g0) * s0.z) * dt
            coupling = np.sum(gm.w * g0 * s0.y[idx]) * dt
            res_z[k] = dpair - drift - coupling
    return res_y, res_z


def spatial_consistency(path: OUPath) -> float:
    """Max deviation from the pathwise identity

        Z^x_t + d_x Y^x_t = (d_x Y^x_0 + Z^x_0) e^{-t x}

    with central differences in x on a uniform atom grid carrying both
    Y and Z at identical atoms.  Exact at t = 0; decays at second
    order in the atom spacing for t > 0.
    """
    s0 = path.states[0]
    if s0.y_atoms.size < 3:
        raise ValueError("need at least 3 atoms for central differences")
    if s0.z_atoms.size != s0.y_atoms.size or np.any(s0.z_atoms != s0.y_atoms):
        raise DomainError("spatial consistency needs Y and Z on identical atoms")
    hs = np.diff(s0.y_atoms)
    if not np.allclose(hs, hs[0], rtol=1e-12, atol=0.0):
        raise DomainError("spatial consistency needs a uniform x grid")
    h = hs[0]
    x_in = s0.y_atoms[1:-1]

    def dx(values):
        return (values[2:] - values[:-2]) / (2.0 * h)

    base = dx(s0.y) + s0.z[1:-1]
    worst = 0.0
    for st in path.states:
        resid = st.z[1:-1] + dx(st.y) - base * np.exp(-st.t * x_in)
        worst = max(worst, float(np.max(np.abs(resid))))
    return worst
