"""Fractional interest-rate models: short rate and bank account.

Short-rate model:   r_t = ell + <Y_t, u>_mu + <Z_t, v>_nu and
B_t = exp(int_0^t r_s ds).  Zero-coupon bonds price in closed form,

    P(t, T) = exp(-ell tau + Phi0(tau,u,v) + <Y_t, Phi1>_mu + <Z_t, Phi2>_nu),

with the integrated coefficients of :func:`fracaffine.affine.Phi` and
tau = T - t.

Bank-account model: B_t = exp(ell t + <Y_t, u>_mu + <Z_t, v>_nu), and

    P(t, T) = exp(-ell tau + phi0(tau,-u,-v)
                  + <Y_t, phi1(tau,-u,-v) + u>_mu
                  + <Z_t, phi2(tau,-u,-v) + v>_nu).

Forward rates are minus the log-derivative of the bond curve; the
forward-measure density has deterministic volatility

    v(t, T) = <Phi1(T-t, u, v), 1>_mu        (short rate)
    v(t, T) = <phi1(T-t, -u, -v), 1>_mu      (bank account)

which drives the Black bond-option formula and cap/floor prices.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.stats import norm

from .affine import Phi, phi, phi_tau_derivative
from .errors import DomainError
from .measures import GridMeasure, MeasureSpec, validate_integrability
from .numerics import em1, gauss_legendre_panels, h1
from .ou import OUState, TransitionKernel, _locate, init_state

KINDS = ("short_rate", "bank_account")


@dataclass
class RateModel:
    kind: str
    ell: float
    u: np.ndarray
    v: Optional[np.ndarray]
    gm_mu: GridMeasure
    gm_nu: Optional[GridMeasure] = None
    state: OUState = None
    mu_spec: Optional[MeasureSpec] = field(default=None, repr=False)
    nu_spec: Optional[MeasureSpec] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        self.u = np.broadcast_to(
            np.asarray(self.u, dtype=float), self.gm_mu.x.shape
        ).copy()
        if self.v is not None and self.gm_nu is None:
            raise ValueError("a v loading needs a nu grid")
        if self.v is not None:
            self.v = np.broadcast_to(
                np.asarray(self.v, dtype=float), self.gm_nu.x.shape
            ).copy()
            if np.all(self.v == 0):
                self.v = None
        if self.v is None:
            self.gm_nu = None
        if self.state is None:
            self.state = init_state(self.gm_mu, self.gm_nu, mode="zero")
        if self.kind == "short_rate" and self.v is not None and self.mu_spec:
            report = validate_integrability(self.mu_spec, "A_shortrate", self.nu_spec)
            if not report.passed:
                warnings.warn(
                    "the measure pair violates the short-rate density-growth "
                    "assumption in the continuum limit (harmless on an atomic "
                    "grid but the model loses its continuous interpretation)",
                    RuntimeWarning,
                    stacklevel=2,
                )

    @property
    def t(self) -> float:
        return self.state.t

    def _signed_args(self):
        """(u, v) fed to the coefficient functions for this kind."""
        if self.kind == "short_rate":
            return self.u, self.v
        return -self.u, None if self.v is None else -self.v

    def with_state(self, state: OUState) -> "RateModel":
        return replace(self, state=state)


def rate_value(model: RateModel) -> float:
    """Current short rate ell + <Y,u>_mu + <Z,v>_nu."""
    if model.kind != "short_rate":
        raise ValueError("rate_value is defined for the short_rate kind only")
    return model.ell + _pair_terms(model, model.u, model.v)


def _pair_terms(model: RateModel, u, v) -> float:
    st = model.state
    idx = _locate(st.y_atoms, model.gm_mu.x)
    total = float(np.sum(model.gm_mu.w * u * st.y[idx]))
    if v is not None:
        total += float(np.sum(model.gm_nu.w * v * st.z))
    return total


def zcb_exponent_terms(
    model: RateModel, tau: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """(const, y-coefficients, z-coefficients) such that
    log P = const + y . yc + z . zc for a state at time T - tau.

    The y-coefficients are aligned to the state's Y atoms (weights
    folded in), so the expression vectorizes across simulated paths.
    """
    if tau < 0:
        raise ValueError("maturity precedes the state time")
    su, sv = model._signed_args()
    n_y = model.state.y_atoms.size
    n_z = model.state.z_atoms.size
    idx = _locate(model.state.y_atoms, model.gm_mu.x)
    yc = np.zeros(n_y)
    zc = np.zeros(n_z)
    if model.kind == "short_rate":
        co = Phi(tau, su, sv, model.gm_mu, model.gm_nu)
        const = -model.ell * tau + float(co.c0)
        yc[idx] = model.gm_mu.w * co.c1
        if co.c2 is not None:
            zc[:] = model.gm_nu.w * co.c2
    else:
        co = phi(tau, su, sv, model.gm_mu, model.gm_nu)
        const = -model.ell * tau + float(co.c0)
        yc[idx] = model.gm_mu.w * (co.c1 + model.u)
        if co.c2 is not None:
            zc[:] = model.gm_nu.w * (co.c2 + model.v)
    return const, yc, zc


def zcb_price(model: RateModel, T: float) -> float:
    """Closed-form price of the zero-coupon bond maturing at T."""
    if T < model.t:
        raise ValueError("maturity precedes the state time")
    const, yc, zc = zcb_exponent_terms(model, T - model.t)
    return float(np.exp(const + model.state.y @ yc + model.state.z @ zc))


def forward_terms(model: RateModel, tau: float) -> tuple[float, np.ndarray, np.ndarray]:
    """(const, y-coefficients, z-coefficients) of the instantaneous
    forward rate h(t)(tau), aligned like :func:`zcb_exponent_terms`."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    su, sv = model._signed_args()
    if model.kind == "short_rate":
        _, d = Phi(tau, su, sv, model.gm_mu, model.gm_nu, derivative=True)
    else:
        d = phi_tau_derivative(tau, su, sv, model.gm_mu, model.gm_nu)
    n_y = model.state.y_atoms.size
    n_z = model.state.z_atoms.size
    idx = _locate(model.state.y_atoms, model.gm_mu.x)
    yc = np.zeros(n_y)
    zc = np.zeros(n_z)
    const = model.ell - float(d.c0)
    yc[idx] = -model.gm_mu.w * d.c1
    if d.c2 is not None:
        zc[:] = -model.gm_nu.w * d.c2
    return const, yc, zc


def forward_curve(model: RateModel, taus) -> np.ndarray:
    """Forward rates h(t)(tau) at the current state for each tau > 0."""
    out = np.empty(len(taus))
    for k, tau in enumerate(taus):
        const, yc, zc = forward_terms(model, float(tau))
        out[k] = const + model.state.y @ yc + model.state.z @ zc
    return out


def _dc1_bar(model: RateModel, taus: np.ndarray) -> np.ndarray:
    """<d_tau C1(tau), 1>_mu for an array of taus (cf. _c1_bar)."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    x = model.gm_mu.x
    su, sv = model._signed_args()
    pv = np.zeros_like(x)
    if sv is not None:
        pv = model.gm_mu.p * sv
    decay = np.exp(-taus[:, None] * x[None, :])
    if model.kind == "short_rate":
        # d_tau Phi1 = -phi1(tau, u, v)
        vals = -decay * (su[None, :] + taus[:, None] * pv[None, :])
    else:
        # d_tau phi1 = -x phi1 + p phi2
        vals = decay * (
            pv[None, :] - x[None, :] * (su[None, :] + taus[:, None] * pv[None, :])
        )
    return vals @ model.gm_mu.w


def hjm_coefficients(model: RateModel, tau: float) -> tuple[float, float]:
    """(drift, vol) of the forward-rate evolution at time-to-maturity tau:

        drift(tau) = d^2/dtau^2 of the scalar coefficient
                   = <d_tau C1(tau), 1>_mu <C1(tau), 1>_mu,
        vol(tau)   = -<d_tau C1(tau), 1>_mu,

    with C1 = Phi1(., u, v) for the short-rate kind and
    C1 = phi1(., -u, -v) for the bank-account kind.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    c1bar = float(_c1_bar(model, np.array([tau]))[0])
    dbar = float(_dc1_bar(model, np.array([tau]))[0])
    return dbar * c1bar, -dbar


def model_covariation(model: RateModel, tau1: float, tau2: float) -> float:
    """Instantaneous covariation rate of h(.)(tau1) and h(.)(tau2)."""
    _, s1 = hjm_coefficients(model, tau1)
    _, s2 = hjm_coefficients(model, tau2)
    return s1 * s2


def _c1_bar(model: RateModel, taus: np.ndarray) -> np.ndarray:
    """<C1(tau), 1>_mu for an array of taus, where C1 is Phi1(., u, v)
    for the short-rate kind and phi1(., -u, -v) for the bank-account
    kind.  This is the forward-measure volatility loading."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    x = model.gm_mu.x
    su, sv = model._signed_args()
    pv = np.zeros_like(x)
    if sv is not None:
        if model.gm_mu.p is None:
            raise DomainError("gm_mu carries no density ratio p but v is nonzero")
        pv = model.gm_mu.p * sv
    tx = taus[:, None] * x[None, :]
    if model.kind == "short_rate":
        vals = -taus[:, None] * em1(tx) * su[None, :] - (
            taus[:, None] ** 2
        ) * h1(tx) * pv[None, :]
    else:
        vals = np.exp(-tx) * (su[None, :] + taus[:, None] * pv[None, :])
    return vals @ model.gm_mu.w


def forward_vol(model: RateModel, t: float, T: float) -> float:
    """Deterministic volatility loading v(t, T) of the T-forward
    measure density."""
    if T < t:
        raise ValueError("need t <= T")
    return float(_c1_bar(model, np.array([T - t]))[0])


def _black_variance(model: RateModel, t: float, T: float, S: float) -> float:
    """Sigma^2 = int_t^T (v(s,S) - v(s,T))^2 ds by Gauss-Legendre."""

    def integrand(s):
        return (_c1_bar(model, S - s) - _c1_bar(model, T - s)) ** 2

    return float(gauss_legendre_panels(integrand, t, T, rel_tol=1e-10))


def black_option(
    model: RateModel, t: float, T: float, S: float, K: float, kind: str = "call"
) -> float:
    """Black price of a European option, expiry T, on the ZCB maturing
    at S, struck at K, valued at the model's current state (time t).

    Degenerates to the discounted intrinsic value when the integrated
    forward-vol spread vanishes.
    """
    if kind not in ("call", "put"):
        raise ValueError("kind must be 'call' or 'put'")
    if not t <= T < S:
        raise ValueError("need t <= T < S")
    if K <= 0:
        raise ValueError("strike must be positive")
    if abs(t - model.t) > 1e-12:
        raise ValueError("model state is not at the valuation time t")
    p_s = zcb_price(model, S)
    p_t = zcb_price(model, T)
    var = _black_variance(model, t, T, S)
    if var < 1e-24:
        intrinsic = p_s - K * p_t
        return max(intrinsic, 0.0) if kind == "call" else max(-intrinsic, 0.0)
    sig = np.sqrt(var)
    d1 = (np.log(p_s / (K * p_t)) + 0.5 * var) / sig
    d2 = d1 - sig
    if kind == "call":
        return float(p_s * norm.cdf(d1) - K * p_t * norm.cdf(d2))
    return float(K * p_t * norm.cdf(-d2) - p_s * norm.cdf(-d1))


@dataclass(frozen=True)
class CapSchedule:
    """Payment schedule T0, T0 + delta, ..., T0 + n*delta at strike kappa."""

    T0: float
    delta: float
    n: int
    kappa: float

    def __post_init__(self):
        if self.T0 <= 0 or self.delta <= 0 or self.n < 1:
            raise ValueError("need T0 > 0, delta > 0, n >= 1")

    @property
    def dates(self) -> np.ndarray:
        return self.T0 + self.delta * np.arange(self.n + 1)


def cap_floor(
    model: RateModel, sched: CapSchedule, kind: str = "cap"
) -> tuple[float, np.ndarray]:
    """Cap/floor price and the individual leg prices.

    Each leg is (1 + delta kappa) options on the period bond struck at
    (1 + delta kappa)^{-1}: puts for caps, calls for floors.
    """
    if kind not in ("cap", "floor"):
        raise ValueError("kind must be 'cap' or 'floor'")
    if model.t >= sched.T0:
        raise ValueError("schedule must start after the valuation time")
    scale = 1.0 + sched.delta * sched.kappa
    strike = 1.0 / scale
    opt = "put" if kind == "cap" else "call"
    dates = sched.dates
    legs = np.array(
        [
            scale * black_option(model, model.t, dates[k], dates[k + 1], strike, opt)
            for k in range(sched.n)
        ]
    )
    return float(legs.sum()), legs


def simulate_rate_paths(
    model: RateModel,
    times,
    eps_provider,
    n_paths: int,
    sub_steps: int = 8,
) -> dict:
    """Vectorized path engine shared by the Monte Carlo validators.

    ``times`` are the reporting knots (starting at the model's current
    time).  The state is stepped exactly; for the short-rate kind the
    bank account integrates r by the trapezoid rule on ``sub_steps``
    exact sub-steps per knot interval, for the bank-account kind B is
    a function of the state and sub-steps are not needed.

    ``eps_provider(j, shape)`` must return the standard normals of
    global step j as an array of the given (n_paths, dim) shape; the
    Monte Carlo engine uses it to impose per-path substreams.

    Returns arrays: "B" (n_paths, len(times)), "y", "z" (terminal
    state), and "rate" at the knots for the short-rate kind.
    """
    times = np.asarray(times, dtype=float)
    if times[0] != model.t or np.any(np.diff(times) <= 0):
        raise ValueError("times must increase from the model's current time")
    sub = 1 if model.kind == "bank_account" else max(1, int(sub_steps))
    st = model.state
    n_y, n_z = st.y_atoms.size, st.z_atoms.size
    y = np.tile(st.y, (n_paths, 1))
    z = np.tile(st.z, (n_paths, 1))

    idx = _locate(st.y_atoms, model.gm_mu.x)
    u_w = model.gm_mu.w * model.u
    v_w = None if model.v is None else model.gm_nu.w * model.v

    def short_rate(yb, zb):
        r = model.ell + yb[:, idx] @ u_w
        if v_w is not None:
            r = r + zb @ v_w
        return r

    def log_bank(yb, zb, t):
        lb = model.ell * t + yb[:, idx] @ (model.gm_mu.w * model.u)
        if v_w is not None:
            lb = lb + zb @ v_w
        return lb

    n_knots = times.size
    bank = np.empty((n_paths, n_knots))
    rate = np.empty((n_paths, n_knots)) if model.kind == "short_rate" else None
    if model.kind == "short_rate":
        integral = np.zeros(n_paths)
        r_prev = short_rate(y, z)
        rate[:, 0] = r_prev
        bank[:, 0] = 1.0
    else:
        lb0 = log_bank(y, z, times[0])
        bank[:, 0] = 1.0  # normalized so that B at the start is 1

    kernels: dict[float, TransitionKernel] = {}
    j_global = 0
    for k in range(n_knots - 1):
        dt = (times[k + 1] - times[k]) / sub
        kern = kernels.get(dt)
        if kern is None:
            kern = TransitionKernel(st.y_atoms, st.z_atoms, dt)
            kernels[dt] = kern
        for _ in range(sub):
            eps = eps_provider(j_global, (n_paths, kern.sample_dim))
            y, z, _ = kern.step_arrays(y, z, eps)
            if model.kind == "short_rate":
                r_new = short_rate(y, z)
                integral += 0.5 * dt * (r_prev + r_new)
                r_prev = r_new
            j_global += 1
        if model.kind == "short_rate":
            bank[:, k + 1] = np.exp(integral)
            rate[:, k + 1] = r_prev
        else:
            bank[:, k + 1] = np.exp(log_bank(y, z, times[k + 1]) - lb0)
    out = {"times": times, "B": bank, "y": y, "z": z}
    if rate is not None:
        out["rate"] = rate
    return out


def steps_per_path(model: RateModel, times, sub_steps: int = 8) -> int:
    sub = 1 if model.kind == "bank_account" else max(1, int(sub_steps))
    return (len(times) - 1) * sub


def bank_account_path(
    model: RateModel,
    times,
    rng: np.random.Generator,
    n_paths: int = 1,
    sub_steps: int = 8,
) -> dict:
    """Paths of the bank account B (and discount factors 1/B) at the
    given times, normalized to B = 1 at the start.

    For the bank-account kind B is an exact function of the state (no
    time-integration error); for the short-rate kind the rate integral
    is accumulated by the trapezoid rule on ``sub_steps`` exact
    sub-steps per interval.
    """

    def provider(_slot, shape):
        return rng.standard_normal(shape)

    out = simulate_rate_paths(model, times, provider, n_paths, sub_steps)
    out["discount"] = 1.0 / out["B"]
    return out
