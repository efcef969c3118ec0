"""Fractional Brownian motion synthesized from the OU field.

With the Hurst-index measures of :mod:`fracaffine.measures` and the
field started in its stationary law,

    W^H_t = w0 + sum_i w_i (Y_i(t) - Y_i(0)),   H < 1/2 (mu grid),
    W^H_t = w0 + sum_j w_j (Z_j(t) - Z_j(0)),   H > 1/2 (nu grid),

and H = 1/2 is standard Brownian motion accumulated from the step
increments directly (the Dirac reading of the representation).

The validation oracle is the exact fBM covariance

    Cov(W^H_s, W^H_t) = V_H (t^{2H} + s^{2H} - |t-s|^{2H}) / 2,

with the variance scale V_H = Var(W^H_1) obtained by adaptive
quadrature of the squared moving-average kernel
((1-r)^{H-1/2} - (-r)_+^{H-1/2}) / Gamma(H+1/2) over (-inf, 1] rather
than from a hard-coded constant.  V_H is cached per H behind a lock.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.special import gamma as gamma_fn

from .errors import QuadratureError
from .measures import DEFAULT_GRID, GridConfig, GridMeasure, MeasureSpec, discretize
from .ou import TransitionKernel, stationary_init_block, stationary_sample_dim

_VH_CACHE: dict[float, float] = {}
_VH_LOCK = threading.Lock()


@dataclass
class FbmConfig:
    """Simulation request: Hurst index, initial value, grid, sample times."""

    H: float
    w0: float = 0.0
    grid_cfg: GridConfig = field(default_factory=lambda: DEFAULT_GRID)
    times: Sequence[float] = (0.0, 1.0)

    def __post_init__(self):
        if not 0.0 < self.H < 1.0:
            raise ValueError("H must lie in (0, 1)")
        t = np.asarray(self.times, dtype=float)
        if t.size < 1 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must increase from 0")
        self.times = t


def fbm_measure_spec(H: float) -> MeasureSpec:
    """The measure family realizing Hurst index H (mu below 1/2, nu above)."""
    if H == 0.5:
        raise ValueError("H = 1/2 has no density; it is the Dirac case")
    return MeasureSpec(family="fbm_mu" if H < 0.5 else "fbm_nu", H=H)


def fbm_grid(cfg: FbmConfig) -> Optional[GridMeasure]:
    if cfg.H == 0.5:
        return None
    return discretize(fbm_measure_spec(cfg.H), cfg.grid_cfg)


def _variance_scale(H: float) -> float:
    """V_H = Var(W^H_1) under the 1/Gamma(H+1/2) normalization."""
    if H == 0.5:
        return 1.0

    def tail(s):
        return ((1.0 + s) ** (H - 0.5) - s ** (H - 0.5)) ** 2

    # ask quad for more than needed and gate on its error estimates
    # ourselves below, ignoring its cannot-reach-tolerance chatter
    tight = dict(limit=400, epsabs=1e-12, epsrel=1e-11)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        recent, err1 = quad(lambda r: (1.0 - r) ** (2.0 * H - 1.0), 0.0, 1.0, **tight)
        past_a, err2 = quad(tail, 0.0, 1.0, **tight)
        past_b, err3 = quad(tail, 1.0, np.inf, **tight)
    total = recent + past_a + past_b
    worst = max(err1, err2, err3)
    if total <= 0 or worst > 1e-8 * total:
        raise QuadratureError(
            f"variance-scale quadrature did not converge for H={H}",
            achieved=worst / max(total, 1e-300),
        )
    return total / gamma_fn(H + 0.5) ** 2


def fbm_variance_scale(H: float) -> float:
    with _VH_LOCK:
        if H not in _VH_CACHE:
            _VH_CACHE[H] = _variance_scale(H)
        return _VH_CACHE[H]


def fbm_cov_oracle(H: float, s: float, t: float) -> float:
    """Exact covariance Cov(W^H_s, W^H_t) for s, t >= 0."""
    if s < 0 or t < 0:
        raise ValueError("times must be nonnegative")
    vh = fbm_variance_scale(H)
    return 0.5 * vh * (t ** (2 * H) + s ** (2 * H) - abs(t - s) ** (2 * H))


def noise_layout(cfg: FbmConfig) -> list[int]:
    """Maximal normals-per-slot layout: one slot for the stationary
    initial draw, then one per step (field update plus the shared
    Brownian increment)."""
    n_steps = len(cfg.times) - 1
    if cfg.H == 0.5:
        return [0] + [1] * n_steps
    gm = fbm_grid(cfg)
    n = gm.n
    d = n if cfg.H < 0.5 else 2 * n
    return [d] + [d + 1] * n_steps


def simulate_fbm(
    cfg: FbmConfig,
    rng: Optional[np.random.Generator] = None,
    n_paths: int = 1,
    eps_provider=None,
) -> np.ndarray:
    """Paths of W^H at cfg.times, shape (n_paths, len(times)).

    The grid field is drawn in its stationary law and stepped exactly,
    so the only approximation relative to fBM is the atomic grid
    itself (measured by the Laplace-transform error of the grid).
    ``eps_provider(slot, shape)`` overrides the noise source per the
    :func:`noise_layout` slots (slot 0 is the initial draw).
    """
    times = np.asarray(cfg.times, dtype=float)
    n_steps = times.size - 1
    out = np.empty((n_paths, times.size))
    out[:, 0] = cfg.w0

    def draws(slot, shape):
        if eps_provider is not None:
            return eps_provider(slot, shape)
        return rng.standard_normal(shape)

    if cfg.H == 0.5:
        level = np.full(n_paths, cfg.w0)
        for j, dt in enumerate(np.diff(times)):
            level = level + np.sqrt(dt) * draws(1 + j, (n_paths, 1))[:, 0]
            out[:, j + 1] = level
        return out

    gm = fbm_grid(cfg)
    if cfg.H < 0.5:
        y_atoms, z_atoms = gm.x, np.empty(0)
    else:
        y_atoms, z_atoms = gm.x, gm.x
    k0 = stationary_sample_dim(y_atoms, z_atoms)
    y, z = stationary_init_block(y_atoms, z_atoms, draws(0, (n_paths, k0)))
    base = y @ gm.w if cfg.H < 0.5 else z @ gm.w
    kernels = {}
    for j, dt in enumerate(np.diff(times)):
        kern = kernels.get(dt)
        if kern is None:
            kern = TransitionKernel(y_atoms, z_atoms, dt)
            kernels[dt] = kern
        eps = draws(1 + j, (n_paths, kern.sample_dim))
        y, z, _ = kern.step_arrays(y, z, eps)
        level = y @ gm.w if cfg.H < 0.5 else z @ gm.w
        out[:, j + 1] = cfg.w0 + (level - base)
    return out
