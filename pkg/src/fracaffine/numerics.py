"""Numerical kernels shared by the model modules.

Three scaled exponential integrals appear everywhere in the OU
covariance algebra.  With z = a*dt,

    em1(z) = (1/z)   * int_0^z e^{-s} ds      = (1 - e^{-z}) / z
    h1(z)  = (1/z^2) * int_0^z s e^{-s} ds    = (1 - (1+z) e^{-z}) / z^2
    h2(z)  = (1/z^3) * int_0^z s^2 e^{-s} ds  = (2 - (2+2z+z^2) e^{-z}) / z^3

so that int_0^dt s^k e^{-a s} ds equals dt^{k+1} * {em1,h1,h2}(a*dt).
The closed forms cancel catastrophically for small z (the h2 form
loses ~z^{-3} digits); below Z_SWITCH a truncated Taylor series is
used instead (term k of em1/h1/h2 is (-z)^k / (k! (k+1+j)) for
j = 0,1,2, so fourteen terms at z = 0.25 are accurate to well below
1e-15 relative).
"""

from __future__ import annotations

import numpy as np

from .errors import FactorizationError, QuadratureError

_Z_SWITCH = 0.25
_N_SERIES = 14


def _series(z: np.ndarray, shift: int) -> np.ndarray:
    out = np.zeros_like(z)
    term = np.ones_like(z)
    fact = 1.0
    for k in range(_N_SERIES):
        if k > 0:
            fact *= k
            term = term * (-z)
        out = out + term / (fact * (k + 1 + shift))
    return out


def _exp_integral(z, shift: int):
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _Z_SWITCH
    zs = np.where(small, 1.0, z)  # avoid 0/0 in the closed form
    e = np.exp(-zs)
    if shift == 0:
        closed = (1.0 - e) / zs
    elif shift == 1:
        closed = (1.0 - (1.0 + zs) * e) / zs**2
    else:
        closed = (2.0 - (2.0 + 2.0 * zs + zs**2) * e) / zs**3
    out = np.where(small, _series(np.where(small, z, 0.0), shift), closed)
    return out if out.ndim else float(out)


def em1(z):
    """(1 - e^{-z}) / z, stable near zero (limit 1)."""
    return _exp_integral(z, 0)


def h1(z):
    """(1 - (1+z) e^{-z}) / z^2, stable near zero (limit 1/2)."""
    return _exp_integral(z, 1)


def h2(z):
    """(2 - (2+2z+z^2) e^{-z}) / z^3, stable near zero (limit 1/3)."""
    return _exp_integral(z, 2)


def exp_moment(a, dt: float, order: int):
    """int_0^dt s^order e^{-a s} ds for order in {0, 1, 2}."""
    if order == 0:
        return dt * em1(np.asarray(a) * dt)
    if order == 1:
        return dt**2 * h1(np.asarray(a) * dt)
    if order == 2:
        return dt**3 * h2(np.asarray(a) * dt)
    raise ValueError(f"unsupported moment order {order}")


def gauss_legendre_panels(
    f,
    a: float,
    b: float,
    rel_tol: float = 1e-10,
    nodes_per_panel: int = 16,
    max_doublings: int = 14,
):
    """Composite Gauss-Legendre quadrature of a vectorized integrand.

    Starts with one panel and doubles the panel count until two
    successive estimates agree to ``rel_tol`` (relative to the current
    estimate, with an absolute floor of 1e-300).  Raises
    QuadratureError with the achieved tolerance when the budget runs
    out.  ``f`` must accept an ndarray of abscissae.
    """
    if b < a:
        raise ValueError("integration bounds must satisfy a <= b")
    if b == a:
        return 0.0
    xs, ws = np.polynomial.legendre.leggauss(nodes_per_panel)
    prev = None
    panels = 1
    for _ in range(max_doublings + 1):
        edges = np.linspace(a, b, panels + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 * (edges[1:] - edges[:-1])
        pts = (mid[:, None] + half[:, None] * xs[None, :]).ravel()
        wts = (half[:, None] * ws[None, :]).ravel()
        val = np.sum(f(pts) * wts)
        if prev is not None:
            err = abs(val - prev)
            if err <= rel_tol * max(abs(val), 1e-300):
                return val
        prev = val
        panels *= 2
    achieved = abs(val - prev) / max(abs(val), 1e-300)
    raise QuadratureError(
        f"Gauss-Legendre panels did not converge to rel_tol={rel_tol:g} "
        f"on [{a:g}, {b:g}] (achieved {achieved:.3e})",
        achieved=achieved,
    )


def psd_factor(cov: np.ndarray, rel_clip: float = 1e-12) -> np.ndarray:
    """Sampling factor L with cov ~= L @ L.T for an analytically PSD matrix.

    The matrix is symmetrized and rescaled to unit diagonal before the
    eigendecomposition (the raw covariances span many orders of
    magnitude on wide geometric grids, which would otherwise let the
    largest eigenvalue swallow the small coordinates).  Eigenvalues
    below rel_clip times the largest are clipped to zero; an
    eigenvalue more negative than sqrt(rel_clip) times the largest
    means the matrix was not PSD to begin with and raises.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("cov must be a square matrix")
    d = cov.shape[0]
    if d == 0:
        return np.zeros((0, 0))
    sym = 0.5 * (cov + cov.T)
    diag = np.diag(sym).copy()
    if np.any(diag < 0):
        raise FactorizationError(
            "negative variance on the diagonal", smallest_eigenvalue=float(diag.min())
        )
    scale = np.sqrt(np.where(diag > 0.0, diag, 1.0))
    normed = sym / np.outer(scale, scale)
    ev, vec = np.linalg.eigh(normed)
    top = float(ev.max(initial=0.0))
    if top <= 0.0:
        return np.zeros((d, 0))
    if ev.min() < -np.sqrt(rel_clip) * top:
        raise FactorizationError(
            f"covariance not PSD after regularization; smallest eigenvalue "
            f"{ev.min():.6e} vs largest {top:.6e}",
            smallest_eigenvalue=float(ev.min()),
        )
    keep = ev > rel_clip * top
    factor = vec[:, keep] * np.sqrt(ev[keep])[None, :]
    return scale[:, None] * factor
