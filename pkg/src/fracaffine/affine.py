"""Affine transform coefficients of the OU field.

Three coefficient families, all in closed form on atomic grids:

* phi:  E[e^{<Y_T,u> + <Z_T,v>} | F_t] = e^{phi0 + <Y_t,phi1> + <Z_t,phi2>}
  with phi1(tau)(x) = e^{-tau x} (u(x) + tau p(x) v(x)),
  phi2(tau)(x) = e^{-tau x} v(x), and
  phi0(tau) = 1/2 int_0^tau <phi1(s), 1>_mu^2 ds.

* Phi:  the time-integral analogue driving bond prices,
  Phi1(tau)(x) = (e^{-tau x}-1)/x u(x)
               + ((e^{-tau x}-1)/x^2 + tau e^{-tau x}/x) p(x) v(x),
  Phi2(tau)(x) = (e^{-tau x}-1)/x v(x),
  Phi0(tau) = 1/2 int_0^tau <Phi1(s), 1>_mu^2 ds,
  with d/dtau Phi1 = -phi1 and d/dtau Phi2 = -phi2.

* psi:  the transform of the squared field Pi = Y (x) Y, obtained from
  a sum-of-squares decomposition of the test tensor with respect to
  the covariance operator P_tau:
  psi0 = -1/2 sum_k log(1 - 2 theta_k),
  psi1 = sum_k theta_k/(1-2 theta_k) (e^{-tau .} v_k) (x) (e^{-tau .} v_k).

phi0 is evaluated by the elementary antiderivatives of s^k e^{-a s}
(the integrand is a finite double sum over atom pairs); Phi0 by
panel-doubling Gauss-Legendre to 1e-10 relative.  All divisions
(e^{-tau x}-1)/x etc. go through series-stabilized forms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, FactorizationError
from .measures import GridMeasure
from .numerics import em1, exp_moment, gauss_legendre_panels, h1
from .ou import OUState, cov_operator, _locate

RANK_DEFICIENCY_CLIP = 1e-12
EXP_OVERFLOW = 700.0


@dataclass
class AffineCoeffs:
    """Value of one coefficient triple at a single tau: a scalar part
    plus grid functions on the mu atoms (c1) and nu atoms (c2)."""

    c0: complex
    c1: np.ndarray
    c2: Optional[np.ndarray] = None


def _density_ratio(gm_mu: GridMeasure, gm_nu: Optional[GridMeasure], v) -> np.ndarray:
    """p * v mapped onto the mu atoms; zero when there is no v leg."""
    n = gm_mu.n
    if v is None or gm_nu is None:
        return np.zeros(n)
    v = np.asarray(v)
    if np.all(v == 0):
        return np.zeros(n)
    if gm_nu.x.shape != gm_mu.x.shape or np.any(gm_nu.x != gm_mu.x):
        raise DomainError(
            "a nonzero v leg requires nu on the same atoms as mu "
            "(discretize the pair on a shared grid)"
        )
    if gm_mu.p is None:
        raise DomainError("gm_mu carries no density ratio p but v is nonzero")
    return gm_mu.p * v


def phi(
    tau: float,
    u,
    v,
    gm_mu: GridMeasure,
    gm_nu: Optional[GridMeasure] = None,
) -> AffineCoeffs:
    """Coefficients (phi0, phi1, phi2) at time-to-horizon tau."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    x = gm_mu.x
    u = np.zeros(gm_mu.n) if u is None else np.asarray(u)
    pv = _density_ratio(gm_mu, gm_nu, v)
    decay = np.exp(-tau * x)
    c1 = decay * (u + tau * pv)
    c2 = None
    if gm_nu is not None and v is not None:
        c2 = np.exp(-tau * gm_nu.x) * np.asarray(v)

    # phi0 = 1/2 int_0^tau (A(s) + s B(s))^2 ds with
    # A(s) = sum_i a_i e^{-s x_i}, B(s) = sum_i b_i e^{-s x_i}.
    a = gm_mu.w * u
    b = gm_mu.w * pv
    s_ij = x[:, None] + x[None, :]
    i0 = exp_moment(s_ij, tau, 0)
    c0 = np.sum(np.outer(a, a) * i0)
    if np.any(b != 0):
        i1 = exp_moment(s_ij, tau, 1)
        i2 = exp_moment(s_ij, tau, 2)
        ab = np.outer(a, b)
        c0 = c0 + np.sum((ab + ab.T) * i1) + np.sum(np.outer(b, b) * i2)
    return AffineCoeffs(c0=0.5 * c0, c1=c1, c2=c2)


def phi_tau_derivative(
    tau: float, u, v, gm_mu: GridMeasure, gm_nu: Optional[GridMeasure] = None
) -> AffineCoeffs:
    """(d/dtau phi0, d/dtau phi1, d/dtau phi2) via the Riccati right-hand
    side: dphi0 = 1/2 <phi1,1>^2, dphi1 = -x phi1 + p phi2, dphi2 = -x phi2."""
    co = phi(tau, u, v, gm_mu, gm_nu)
    p2_on_mu = _density_ratio(gm_mu, gm_nu, None if co.c2 is None else co.c2)
    d1 = -gm_mu.x * co.c1 + p2_on_mu
    d2 = None if co.c2 is None else -gm_nu.x * co.c2
    d0 = 0.5 * np.sum(gm_mu.w * co.c1) ** 2
    return AffineCoeffs(c0=d0, c1=d1, c2=d2)


def mgf(
    state: OUState,
    tau: float,
    u,
    v,
    gm_mu: Optional[GridMeasure] = None,
    gm_nu: Optional[GridMeasure] = None,
):
    """Conditional exponential moment E[e^{<Y,u> + <Z,v>} | state]."""
    gm_mu = gm_mu if gm_mu is not None else state.gm_mu
    gm_nu = gm_nu if gm_nu is not None else state.gm_nu
    co = phi(tau, u, v, gm_mu, gm_nu)
    idx = _locate(state.y_atoms, gm_mu.x)
    expo = co.c0 + np.sum(gm_mu.w * co.c1 * state.y[idx])
    if co.c2 is not None:
        expo = expo + np.sum(gm_nu.w * co.c2 * state.z)
    if np.real(expo) > EXP_OVERFLOW:
        raise DomainError(f"mgf exponent {np.real(expo):.3f} overflows")
    return np.exp(expo)


def Phi(
    tau: float,
    u,
    v,
    gm_mu: GridMeasure,
    gm_nu: Optional[GridMeasure] = None,
    derivative: bool = False,
    rel_tol: float = 1e-10,
):
    """Integrated coefficients (Phi0, Phi1, Phi2); optionally also their
    tau derivatives (as a second AffineCoeffs)."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    x = gm_mu.x
    u = np.zeros(gm_mu.n) if u is None else np.asarray(u)
    pv = _density_ratio(gm_mu, gm_nu, v)

    def phi1_bar(s):
        """<Phi1(s), 1>_mu for an array of s values."""
        s = np.asarray(s, dtype=float)
        sx = s[:, None] * x[None, :]
        vals = -s[:, None] * em1(sx) * u[None, :] - (s[:, None] ** 2) * h1(sx) * pv[
            None, :
        ]
        return vals @ gm_mu.w

    c1 = -tau * em1(tau * x) * u - tau**2 * h1(tau * x) * pv
    c2 = None
    if gm_nu is not None and v is not None:
        c2 = -tau * em1(tau * gm_nu.x) * np.asarray(v)
    if tau == 0.0:
        c0 = 0.0
    else:
        c0 = 0.5 * gauss_legendre_panels(
            lambda s: phi1_bar(s) ** 2, 0.0, tau, rel_tol=rel_tol
        )
    coeffs = AffineCoeffs(c0=c0, c1=c1, c2=c2)
    if not derivative:
        return coeffs
    dphi = phi(tau, u, v, gm_mu, gm_nu)
    d = AffineCoeffs(
        c0=0.5 * np.sum(gm_mu.w * c1) ** 2,
        c1=-dphi.c1,
        c2=None if dphi.c2 is None else -dphi.c2,
    )
    return coeffs, d


@dataclass
class SumOfSquares:
    """Finite-rank symmetric tensor sum_k theta_k v_k (x) v_k on a grid.

    When produced by :func:`diagonalize` the vectors satisfy
    <P_tau v_k, v_l>_mu = delta_kl at the reference tau.
    """

    terms: tuple[tuple[complex, np.ndarray], ...]
    tau: float
    gm: Optional[GridMeasure] = None

    def matrix(self) -> np.ndarray:
        """Dense tensor values w(x_i, x_j) (unweighted)."""
        n = self.terms[0][1].size
        out = np.zeros((n, n), dtype=complex)
        for theta, vec in self.terms:
            out += theta * np.outer(vec, vec)
        return out.real if np.all(out.imag == 0) else out

    def orthonormality_defect(self, gm: GridMeasure) -> float:
        pw = gm.w[:, None] * cov_operator(gm, self.tau, "P") * gm.w[None, :]
        vs = np.stack([vec for _, vec in self.terms])
        gram = vs @ pw @ vs.T
        return float(np.max(np.abs(gram - np.eye(len(self.terms)))))


def diagonalize(
    w_terms: Sequence[tuple[complex, np.ndarray]],
    gm_mu: GridMeasure,
    tau: float,
) -> SumOfSquares:
    """Rewrite sum_l c_l u_l (x) u_l as sum_k theta_k v_k (x) v_k with the
    v_k orthonormal under the weighted P_tau kernel.

    Coefficients must be all real or all purely imaginary (the two
    cases the transforms use).  A numerically singular Gram matrix of
    the input directions (eigenvalue below 1e-12 of the largest)
    raises a rank-deficiency error naming the offending direction.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if len(w_terms) < 1:
        raise ValueError("need at least one rank-1 term")
    coeffs = np.array([c for c, _ in w_terms])
    basis = np.stack([np.asarray(vec, dtype=float) for _, vec in w_terms])
    if np.all(coeffs.imag == 0):
        cvals, unit = coeffs.real, 1.0
    elif np.all(coeffs.real == 0):
        cvals, unit = coeffs.imag, 1.0j
    else:
        raise DomainError("tensor coefficients must be all real or all imaginary")

    pw = gm_mu.w[:, None] * cov_operator(gm_mu, tau, "P") * gm_mu.w[None, :]
    gram = basis @ pw @ basis.T
    ev, vec = np.linalg.eigh(0.5 * (gram + gram.T))
    if ev.min() < RANK_DEFICIENCY_CLIP * max(ev.max(), 0.0):
        worst = int(np.argmin(ev))
        raise FactorizationError(
            f"P_tau Gram matrix is numerically singular along input "
            f"direction {worst} (eigenvalue {ev.min():.3e} vs {ev.max():.3e})",
            smallest_eigenvalue=float(ev.min()),
        )
    root = np.sqrt(ev)[:, None] * vec.T  # gram = root.T @ root
    m = root @ np.diag(cvals) @ root.T
    theta, gamma = np.linalg.eigh(0.5 * (m + m.T))
    beta = np.linalg.solve(root, gamma)
    vs = beta.T @ basis
    terms = tuple(
        (unit * complex(theta[k]), vs[k]) for k in range(theta.size)
    )
    return SumOfSquares(terms=terms, tau=tau, gm=gm_mu)


def stein_psi(
    tau: float,
    w,
    gm_mu: GridMeasure,
) -> tuple[complex, tuple[tuple[complex, np.ndarray], ...]]:
    """(psi0, rank-1 terms of psi1) for a symmetric test tensor.

    ``w`` is a SumOfSquares (general case) or a pair ``(scale, vec)``
    for a pure scale * vec (x) vec tensor, in which case the rank-1
    closed form psi0 = -1/2 log(1 - 4 phi0(tau, vec_scaled, 0)) is used
    with 2 phi0(tau, vec, 0) = <P_tau vec, vec>_mu.  Uses the principal
    branch of the complex logarithm and refuses arguments on the cut.
    """
    if isinstance(w, SumOfSquares):
        terms = w.terms
    else:
        scale, vec = w
        vec = np.asarray(vec, dtype=float)
        pw = gm_mu.w[:, None] * cov_operator(gm_mu, tau, "P") * gm_mu.w[None, :]
        a = float(vec @ pw @ vec)  # <P_tau vec, vec>_mu = 2 phi0(tau, vec, 0)
        theta = complex(scale) * a
        if a > 0:
            terms = ((theta, vec / np.sqrt(a)),)
        else:
            terms = ((0.0j, vec),)

    psi0 = 0.0j
    out_terms = []
    flagged = False
    for theta, vec in terms:
        arg = 1.0 - 2.0 * theta
        if arg.imag == 0 and arg.real <= 0.0:
            raise DomainError(
                f"1 - 2 theta = {arg.real:.6g} lies on the branch cut of log"
            )
        if theta.imag == 0 and abs(2.0 * theta.real) >= 1.0:
            flagged = True
        psi0 += -0.5 * np.log(arg)
        out_terms.append((theta / arg, np.exp(-tau * gm_mu.x) * np.asarray(vec)))
    if flagged:
        warnings.warn(
            "a real tensor coefficient has |2 theta| >= 1; the transform "
            "is outside its convergence strip",
            RuntimeWarning,
            stacklevel=2,
        )
    if psi0.imag == 0:
        psi0 = psi0.real
    return psi0, tuple(out_terms)


def riccati_residual(
    kind: str,
    tau: float,
    gm_mu: GridMeasure,
    gm_nu: Optional[GridMeasure] = None,
    u=None,
    v=None,
    w_terms: Optional[Sequence[tuple[complex, np.ndarray]]] = None,
    h: float = 1e-4,
) -> float:
    """Max-norm residual of the central finite difference d/dtau of a
    coefficient family against its analytic Riccati right-hand side.

    phi:  (R0, R1, R2) with R0 = 1/2 <u,1>_mu^2, R1 = -x u + p v,
          R2 = -x v.
    Phi:  the same R minus the constant forcings (u, v).
    psi:  F0(w) = sum_ij w(x_i,x_j) w_i w_j and
          F1(w)(x,y) = -(x+y) w(x,y) + 2 g(x) g(y),
          g(x) = sum_j w(x, x_j) w_j.

    Residuals are normalized by max(1, |rhs|) and should sit at the
    stencil's truncation level (<= 1e-6 relative for h = 1e-4).
    """
    if tau <= 2 * h:
        raise ValueError("tau too small for the difference stencil")

    if kind in ("phi", "Phi"):
        fn = phi if kind == "phi" else (lambda *a: Phi(*a))
        lo = fn(tau - h, u, v, gm_mu, gm_nu)
        hi_ = fn(tau + h, u, v, gm_mu, gm_nu)
        mid = fn(tau, u, v, gm_mu, gm_nu)
        pv2 = _density_ratio(gm_mu, gm_nu, None if mid.c2 is None else mid.c2)
        r0 = 0.5 * np.sum(gm_mu.w * mid.c1) ** 2
        r1 = -gm_mu.x * mid.c1 + pv2
        r2 = None if mid.c2 is None else -gm_nu.x * mid.c2
        if kind == "Phi":
            r1 = r1 - (np.zeros(gm_mu.n) if u is None else np.asarray(u))
            if r2 is not None:
                r2 = r2 - np.asarray(v)
        fd0 = (hi_.c0 - lo.c0) / (2 * h)
        fd1 = (hi_.c1 - lo.c1) / (2 * h)
        num = max(abs(fd0 - r0), np.max(np.abs(fd1 - r1)))
        den = max(1.0, abs(r0), np.max(np.abs(r1)))
        if r2 is not None:
            fd2 = (hi_.c2 - lo.c2) / (2 * h)
            num = max(num, np.max(np.abs(fd2 - r2)))
            den = max(den, np.max(np.abs(r2)))
        return float(num / den)

    if kind == "psi":
        if w_terms is None:
            raise ValueError("psi residual needs the tensor's rank-1 terms")

        def psi_matrix(t):
            sos = diagonalize(w_terms, gm_mu, t)
            psi0, terms = stein_psi(t, sos, gm_mu)
            mat = np.zeros((gm_mu.n, gm_mu.n), dtype=complex)
            for c, vec in terms:
                mat += c * np.outer(vec, vec)
            return psi0, (mat.real if np.all(mat.imag == 0) else mat)

        p0_lo, m_lo = psi_matrix(tau - h)
        p0_hi, m_hi = psi_matrix(tau + h)
        p0, m = psi_matrix(tau)
        f0 = gm_mu.w @ m @ gm_mu.w
        g = m @ gm_mu.w
        f1 = -(gm_mu.x[:, None] + gm_mu.x[None, :]) * m + 2.0 * np.outer(g, g)
        fd0 = (p0_hi - p0_lo) / (2 * h)
        fd1 = (m_hi - m_lo) / (2 * h)
        num = max(abs(fd0 - f0), float(np.max(np.abs(fd1 - f1))))
        den = max(1.0, abs(f0), float(np.max(np.abs(f1))))
        return float(num / den)

    raise ValueError(f"unknown Riccati family {kind!r}")
