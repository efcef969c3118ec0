"""Batch front door: JSON config in, CSV/JSON results out.

One config file describes one run:

    {"command": "price-zcb",
     "model": {"kind": "short_rate", "ell": 0.02, "u": 1.0, "v": 0.0,
               "measure": {"family": "fbm_mu", "H": 0.3}},
     "grid": {"x_min": 1e-6, "x_max": 1e6, "n": 100},
     "maturities": [1, 5],
     "output": "prices.csv", "format": "csv"}

Flags: --config PATH, --seed N, --out PATH, --format csv|json,
--paths N, --quiet, plus free-form dotted overrides (mc.workers=8).
Exit codes: 0 success, 2 config error, 3 numerical-domain error,
4 validation-suite failure.  Tabular output uses a header row, '.'
decimals, and 17-significant-digit floats so that reruns are
byte-comparable.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from typing import Any, Optional

import numpy as np

from .affine import Phi, phi, riccati_residual
from .errors import ConfigError, DomainError, FactorizationError, QuadratureError
from .fbm import FbmConfig
from .measures import (
    GridConfig,
    GridMeasure,
    MeasureSpec,
    discretize,
    discretize_pair,
    fbm_laplace_error,
)
from .mc import McConfig, run_ensemble
from .numerics import gauss_legendre_panels
from .ou import init_state
from .rates import (
    CapSchedule,
    RateModel,
    cap_floor,
    forward_curve,
    hjm_coefficients,
    zcb_price,
)
from .stein import SteinModel, SteinState, iv_moments, logprice_cdf_uncorrelated

COMMANDS = (
    "simulate-fbm",
    "price-zcb",
    "price-cap",
    "fwd-curve",
    "stein-sim",
    "stein-iv",
    "stein-cdf",
    "affine-eval",
    "validate",
)

_REQUIRED_BLOCKS = {
    "simulate-fbm": ("fbm",),
    "price-zcb": ("model", "maturities"),
    "price-cap": ("model", "schedule"),
    "fwd-curve": ("model", "taus"),
    "stein-sim": ("stein",),
    "stein-iv": ("stein",),
    "stein-cdf": ("stein",),
    "affine-eval": ("affine",),
    "validate": (),
}


class ValidationFailure(RuntimeError):
    pass


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _need(block: dict, key: str, where: str) -> Any:
    if key not in block:
        raise ConfigError(f"missing field {key!r} in {where}")
    return block[key]


def parse_config(raw: dict) -> dict:
    """Validate and normalize a raw config dictionary."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    command = _need(raw, "command", "config")
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    for block in _REQUIRED_BLOCKS[command]:
        if block not in raw:
            raise ConfigError(f"command {command!r} requires a {block!r} block")
    fmt = raw.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"format must be 'csv' or 'json', got {fmt!r}")
    cfg = dict(raw)
    cfg["format"] = fmt
    return cfg


def _grid_config(cfg: dict) -> GridConfig:
    block = cfg.get("grid", {})
    try:
        return GridConfig(
            x_min=float(block.get("x_min", 1e-6)),
            x_max=float(block.get("x_max", 1e6)),
            n=int(block.get("n", 100)),
            scheme=block.get("scheme", "geometric"),
        )
    except ValueError as exc:
        raise ConfigError(f"bad grid block: {exc}") from exc


def _measure_spec(block: dict, where: str) -> MeasureSpec:
    family = _need(block, "family", where)
    try:
        return MeasureSpec(
            family=family,
            H=block.get("H"),
            c=block.get("c"),
            alpha=block.get("alpha"),
        )
    except (ValueError, DomainError) as exc:
        raise ConfigError(f"bad measure in {where}: {exc}") from exc


def _mc_config(cfg: dict) -> McConfig:
    block = cfg.get("mc", {})
    try:
        return McConfig(
            n_paths=int(block.get("n_paths", 2)),
            seed=int(block.get("seed", 0)),
            antithetic=bool(block.get("antithetic", False)),
            sub_steps=int(block.get("sub_steps", 8)),
            workers=int(block.get("workers", 1)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad mc block: {exc}") from exc


def _build_rate_model(cfg: dict) -> RateModel:
    block = cfg["model"]
    kind = _need(block, "kind", "model")
    grid = _grid_config(cfg)
    mu_spec = _measure_spec(_need(block, "measure", "model"), "model.measure")
    v_raw = block.get("v", 0.0)
    has_v = np.any(np.asarray(v_raw, dtype=float) != 0)
    nu_spec = None
    if has_v:
        if "nu_measure" not in block:
            raise ConfigError("model.v is nonzero but model.nu_measure is missing")
        nu_spec = _measure_spec(block["nu_measure"], "model.nu_measure")
        gm_mu, gm_nu = discretize_pair(mu_spec, nu_spec, grid)
    else:
        gm_mu, gm_nu = discretize(mu_spec, grid), None
    try:
        model = RateModel(
            kind=kind,
            ell=float(block.get("ell", 0.0)),
            u=np.asarray(block.get("u", 0.0), dtype=float),
            v=np.asarray(v_raw, dtype=float) if has_v else None,
            gm_mu=gm_mu,
            gm_nu=gm_nu,
            mu_spec=mu_spec,
            nu_spec=nu_spec,
        )
    except ValueError as exc:
        raise ConfigError(f"bad model block: {exc}") from exc
    init = block.get("init", "zero")
    if init != "zero":
        rng = np.random.default_rng(_mc_config(cfg).seed)
        model = model.with_state(init_state(gm_mu, gm_nu, mode=init, rng=rng))
    return model


def _build_stein_model(cfg: dict) -> SteinModel:
    block = cfg["stein"]
    grid = _grid_config(cfg)
    spec = _measure_spec(_need(block, "measure", "stein"), "stein.measure")
    gm = discretize(spec, grid)
    try:
        return SteinModel(
            gm_mu=gm,
            v=np.asarray(block.get("v", 1.0), dtype=float),
            rho=float(block.get("rho", 0.0)),
            s0=float(block.get("s0", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad stein block: {exc}") from exc


def _write_table(cfg: dict, columns: list[str], rows: list[list[float]]) -> int:
    path = cfg.get("output")
    if cfg["format"] == "csv":
        text = ",".join(columns) + "\n"
        for row in rows:
            text += ",".join(_fmt(v) for v in row) + "\n"
    else:
        text = json.dumps(
            {"columns": columns, "rows": rows, "config_echo": cfg},
            indent=2,
            default=float,
        )
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return len(rows)


def _write_json(cfg: dict, payload: dict) -> int:
    payload = dict(payload)
    payload["config_echo"] = cfg
    text = json.dumps(payload, indent=2, default=float)
    path = cfg.get("output")
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 1


def _cmd_simulate_fbm(cfg: dict) -> int:
    block = cfg["fbm"]
    fbm_cfg = FbmConfig(
        H=float(_need(block, "H", "fbm")),
        w0=float(block.get("w0", 0.0)),
        grid_cfg=_grid_config(cfg),
        times=np.asarray(_need(block, "times", "fbm"), dtype=float),
    )
    mc = _mc_config(cfg)
    ens = run_ensemble(fbm_cfg, fbm_cfg.times, mc)
    rows = [
        [pid, t, ens.data["W"][pid, j]]
        for pid in range(mc.n_paths)
        for j, t in enumerate(fbm_cfg.times)
    ]
    return _write_table(cfg, ["path_id", "t", "value"], rows)


def _cmd_price_zcb(cfg: dict) -> int:
    model = _build_rate_model(cfg)
    rows = [[T, zcb_price(model, float(T))] for T in cfg["maturities"]]
    return _write_table(cfg, ["maturity", "price"], rows)


def _cmd_fwd_curve(cfg: dict) -> int:
    model = _build_rate_model(cfg)
    taus = np.asarray(cfg["taus"], dtype=float)
    curve = forward_curve(model, taus)
    return _write_table(cfg, ["tau", "forward"], [[t, f] for t, f in zip(taus, curve)])


def _cmd_price_cap(cfg: dict) -> int:
    model = _build_rate_model(cfg)
    sched_block = cfg["schedule"]
    sched = CapSchedule(
        T0=float(_need(sched_block, "T0", "schedule")),
        delta=float(_need(sched_block, "delta", "schedule")),
        n=int(_need(sched_block, "n", "schedule")),
        kappa=float(_need(sched_block, "kappa", "schedule")),
    )
    kind = sched_block.get("kind", "cap")
    total, legs = cap_floor(model, sched, kind)
    dates = sched.dates
    rows = [[k + 1, dates[k], dates[k + 1], legs[k]] for k in range(sched.n)]
    rows.append([0, dates[0], dates[-1], total])
    return _write_table(cfg, ["leg", "reset", "payment", "price"], rows)


def _cmd_stein_sim(cfg: dict) -> int:
    model = _build_stein_model(cfg)
    times = np.asarray(_need(cfg["stein"], "times", "stein"), dtype=float)
    mc = _mc_config(cfg)
    ens = run_ensemble(model, times, mc)
    rows = [
        [pid, t, ens.data["X"][pid, j], ens.data["sigma"][pid, j]]
        for pid in range(mc.n_paths)
        for j, t in enumerate(times)
    ]
    return _write_table(cfg, ["path_id", "t", "log_price", "vol"], rows)


def _cmd_stein_iv(cfg: dict) -> int:
    model = _build_stein_model(cfg)
    T = float(_need(cfg["stein"], "T", "stein"))
    state = SteinState(t=0.0, x=model.x0, y=model.y0)
    mom = iv_moments(model, state, T)
    return _write_json(
        cfg,
        {
            "horizon": mom.horizon,
            "mass_mean": mom.mass_mean,
            "mass_second_moment": mom.mass_second,
            "mean": mom.mean,
            "second_moment": mom.second,
        },
    )


def _cmd_stein_cdf(cfg: dict) -> int:
    model = _build_stein_model(cfg)
    block = cfg["stein"]
    T = float(_need(block, "T", "stein"))
    x_grid = np.asarray(_need(block, "x_grid", "stein"), dtype=float)
    mc = _mc_config(cfg)
    state = SteinState(t=0.0, x=model.x0, y=model.y0)
    rng = np.random.default_rng(mc.seed)
    values = logprice_cdf_uncorrelated(
        model, state, T, x_grid, rng, n_paths=mc.n_paths
    )
    return _write_table(cfg, ["x", "cdf"], [[x, F] for x, F in zip(x_grid, values)])


def _cmd_affine_eval(cfg: dict) -> int:
    block = cfg["affine"]
    tau = float(_need(block, "tau", "affine"))
    grid = _grid_config(cfg)
    mu_spec = _measure_spec(_need(block, "measure", "affine"), "affine.measure")
    v_raw = np.asarray(block.get("v", 0.0), dtype=float)
    if np.any(v_raw != 0):
        nu_spec = _measure_spec(_need(block, "nu_measure", "affine"), "affine")
        gm_mu, gm_nu = discretize_pair(mu_spec, nu_spec, grid)
        v = np.broadcast_to(v_raw, gm_nu.x.shape)
    else:
        gm_mu, gm_nu, v = discretize(mu_spec, grid), None, None
    u = np.broadcast_to(np.asarray(block.get("u", 0.0), dtype=float), gm_mu.x.shape)
    small = phi(tau, u, v, gm_mu, gm_nu)
    big = Phi(tau, u, v, gm_mu, gm_nu)
    payload = {
        "tau": tau,
        "atoms": gm_mu.x.tolist(),
        "phi0": small.c0,
        "phi1": np.asarray(small.c1).tolist(),
        "phi2": None if small.c2 is None else np.asarray(small.c2).tolist(),
        "Phi0": big.c0,
        "Phi1": np.asarray(big.c1).tolist(),
        "Phi2": None if big.c2 is None else np.asarray(big.c2).tolist(),
    }
    return _write_json(cfg, payload)


def _cmd_validate(cfg: dict) -> int:
    checks: list[dict] = []

    def record(name, value, tol):
        checks.append(
            {"check": name, "value": float(value), "tol": tol, "passed": bool(value <= tol)}
        )

    h_val = float(cfg.get("fbm", {}).get("H", 0.3))
    grid = _grid_config(cfg) if "grid" in cfg else GridConfig(1e-6, 1e6, 200)
    spec = MeasureSpec(family="fbm_mu" if h_val < 0.5 else "fbm_nu", H=h_val)
    gm = discretize(spec, grid)
    worst = max(fbm_laplace_error(gm, h_val, t) for t in (0.1, 0.5, 1.0, 5.0, 10.0))
    record("laplace_relative_error", worst, 1e-3)

    mu_spec = MeasureSpec(family="custom_power_law", c=1.0, alpha=0.8)
    nu_spec = MeasureSpec(family="custom_power_law", c=1.0, alpha=0.3)
    gm_mu, gm_nu = discretize_pair(mu_spec, nu_spec, GridConfig(1e-2, 1e2, 8))
    u = np.full(gm_mu.n, 1.0)
    v = np.full(gm_nu.n, 1.0)
    for fam in ("phi", "Phi"):
        worst = max(
            riccati_residual(fam, t, gm_mu, gm_nu, u=u, v=v) for t in (0.1, 1.0, 5.0)
        )
        record(f"riccati_{fam}_residual", worst, 1e-6)
    rng = np.random.default_rng(0)
    w_terms = [
        (1e-3, rng.standard_normal(gm_mu.n)),
        (-5e-4, rng.standard_normal(gm_mu.n)),
    ]
    worst = max(
        riccati_residual("psi", t, gm_mu, w_terms=w_terms) for t in (0.1, 1.0, 5.0)
    )
    record("riccati_psi_residual", worst, 1e-6)

    short = RateModel(
        kind="short_rate", ell=0.02, u=0.4 * u, v=0.2 * v, gm_mu=gm_mu, gm_nu=gm_nu
    )
    bank = RateModel(kind="bank_account", ell=0.02, u=0.0 * u, v=v, gm_mu=gm_mu,
                     gm_nu=gm_nu)
    for label, model in (("short_rate", short), ("bank_account", bank)):
        worst_drift = 0.0
        worst_fwd = 0.0
        for tau in (0.25, 1.0, 5.0):
            drift, vol = hjm_coefficients(model, tau)
            integral = gauss_legendre_panels(
                lambda s: np.array([hjm_coefficients(model, float(si))[1] for si in s]),
                0.0,
                tau,
                rel_tol=1e-10,
            )
            worst_drift = max(
                worst_drift,
                abs(drift - vol * integral) / (abs(drift) + 1e-12),
            )
            h = 1e-4
            lp = np.log(zcb_price(model, tau + h)) - np.log(zcb_price(model, tau - h))
            fwd = forward_curve(model, [tau])[0]
            worst_fwd = max(worst_fwd, abs(-lp / (2 * h) - fwd) / max(abs(fwd), 1.0))
        record(f"hjm_drift_identity_{label}", worst_drift, 1e-6)
        record(f"forward_logderiv_{label}", worst_fwd, 1e-6)

    passed = all(c["passed"] for c in checks)
    _write_json(cfg, {"passed": passed, "checks": checks})
    if not passed:
        raise ValidationFailure("validation suite failed")
    return len(checks)


_HANDLERS = {
    "simulate-fbm": _cmd_simulate_fbm,
    "price-zcb": _cmd_price_zcb,
    "price-cap": _cmd_price_cap,
    "fwd-curve": _cmd_fwd_curve,
    "stein-sim": _cmd_stein_sim,
    "stein-iv": _cmd_stein_iv,
    "stein-cdf": _cmd_stein_cdf,
    "affine-eval": _cmd_affine_eval,
    "validate": _cmd_validate,
}


def _apply_override(cfg: dict, dotted: str, value: str) -> None:
    keys = dotted.split(".")
    node = cfg
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r} descends into a non-object")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    node[keys[-1]] = parsed


def run(config_path: str, overrides: Optional[list[str]] = None, quiet: bool = False) -> int:
    """Execute one config file; returns the process exit code."""
    start = time.perf_counter()
    try:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not KEY=VALUE")
            key, value = item.split("=", 1)
            _apply_override(raw, key, value)
        cfg = parse_config(raw)
        n = _HANDLERS[cfg["command"]](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, QuadratureError, FactorizationError) as exc:
        print(f"numerical domain error: {exc}", file=sys.stderr)
        return 3
    except ValidationFailure as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return 4
    if not quiet:
        wall = time.perf_counter() - start
        print(f"{cfg['command']}: n={n} wall={wall:.3f}s", file=sys.stderr)
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fracaffine",
        description="batch runner for fractional affine models",
    )
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--seed", type=int, help="override mc.seed")
    parser.add_argument("--out", help="override the output path")
    parser.add_argument("--format", choices=("csv", "json"), help="override the format")
    parser.add_argument("--paths", type=int, help="override mc.n_paths")
    parser.add_argument("--quiet", action="store_true", help="suppress the summary line")
    parser.add_argument(
        "overrides", nargs="*", metavar="KEY=VALUE", help="dotted config overrides"
    )
    args = parser.parse_args(argv)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"mc.seed={args.seed}")
    if args.paths is not None:
        overrides.append(f"mc.n_paths={args.paths}")
    if args.out is not None:
        overrides.append(f"output={args.out}")
    if args.format is not None:
        overrides.append(f"format={args.format}")
    return run(args.config, overrides, quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
