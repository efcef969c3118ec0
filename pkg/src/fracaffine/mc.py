"""Reproducible parallel Monte Carlo.

Every path owns a counter-based substream: a Philox generator keyed by
(seed, stream id), so the ensemble is a pure function of the seed and
is bitwise independent of worker count and scheduling.  Paths are
processed in fixed-size chunks whose boundaries depend only on the
path count; workers merely pick chunks up.  Antithetic pairs share a
stream (the odd member negates every normal), which exactly centers
pairwise averages of linear functionals.

Each simulator consumes noise through slot-indexed providers; the slot
widths (the maximal normals a step can use) are known upfront, so a
path's entire noise block is drawn in one call regardless of how many
of the slot's normals the factorized kernel actually uses.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import fbm as fbm_mod
from . import rates as rates_mod
from . import stein as stein_mod
from .fbm import FbmConfig
from .measures import GridMeasure
from .ou import TransitionKernel, _resolve_atoms
from .rates import RateModel
from .stein import SteinModel

CHUNK = 4096


@dataclass(frozen=True)
class McConfig:
    n_paths: int
    seed: int = 0
    antithetic: bool = False
    sub_steps: int = 8
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("need at least 2 paths")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even path count")
        if self.workers < 1:
            raise ValueError("workers must be positive")


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float
    ci_low: float
    ci_high: float
    n_effective: int

    @classmethod
    def from_samples(cls, values: np.ndarray) -> "Estimate":
        n = values.size
        mean = float(values.mean())
        se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls(mean, se, mean - 2.576 * se, mean + 2.576 * se, n)


@dataclass
class PathEnsemble:
    kind: str
    times: np.ndarray
    data: dict[str, np.ndarray]
    mc: McConfig

    @property
    def n_paths(self) -> int:
        return self.mc.n_paths


def _path_block(seed: int, stream: int, total: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=[seed, stream]))
    return gen.standard_normal(total)


def _chunk_eps(mc: McConfig, path_ids: np.ndarray, total: int) -> np.ndarray:
    eps = np.empty((path_ids.size, total))
    for row, pid in enumerate(path_ids):
        stream = int(pid) // 2 if mc.antithetic else int(pid)
        block = _path_block(mc.seed, stream, total)
        if mc.antithetic and pid % 2 == 1:
            block = -block
        eps[row] = block
    return eps


def _make_provider(eps: np.ndarray, widths: list[int]) -> Callable:
    offsets = np.concatenate(([0], np.cumsum(widths)))

    def provider(slot: int, shape):
        n_rows, dim = shape
        if dim > widths[slot]:
            raise ValueError(f"slot {slot} holds {widths[slot]} normals, need {dim}")
        return eps[:n_rows, offsets[slot] : offsets[slot] + dim]

    return provider


def _run_chunks(mc: McConfig, widths: list[int], simulate_chunk) -> list:
    """simulate_chunk(path_ids, provider) -> dict of per-path arrays."""
    total = int(np.sum(widths))
    bounds = list(range(0, mc.n_paths, CHUNK)) + [mc.n_paths]
    chunks = [np.arange(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]

    def work(path_ids):
        eps = _chunk_eps(mc, path_ids, total)
        return simulate_chunk(path_ids, _make_provider(eps, widths))

    if mc.workers == 1 or len(chunks) == 1:
        return [work(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=mc.workers) as pool:
        return list(pool.map(work, chunks))


def _assemble(results: list, n_paths: int) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for key in results[0]:
        parts = [r[key] for r in results]
        out[key] = np.concatenate(parts, axis=0)
        assert out[key].shape[0] == n_paths
    return out


def run_ensemble(model, times, mc: McConfig) -> PathEnsemble:
    """Simulate a reproducible path ensemble of a rate model, a Stein
    model, or an fBM configuration, reported at the given times."""
    times = np.asarray(times, dtype=float)

    if isinstance(model, RateModel):
        d_max = model.state.y_atoms.size + model.state.z_atoms.size + 1
        n_steps = rates_mod.steps_per_path(model, times, mc.sub_steps)
        widths = [d_max] * n_steps

        def simulate_chunk(path_ids, provider):
            res = rates_mod.simulate_rate_paths(
                model, times, provider, path_ids.size, mc.sub_steps
            )
            return {k: v for k, v in res.items() if k != "times"}

        data = _assemble(_run_chunks(mc, widths, simulate_chunk), mc.n_paths)
        return PathEnsemble("rate", times, data, mc)

    if isinstance(model, SteinModel):
        widths = [model.gm_mu.n + 2] * stein_mod.stein_steps_per_path(
            times, mc.sub_steps
        )

        def simulate_chunk(path_ids, provider):
            res = stein_mod.simulate_stein(
                model,
                times,
                n_paths=path_ids.size,
                sub_steps=mc.sub_steps,
                eps_provider=provider,
            )
            return {k: v for k, v in res.items() if k != "times"}

        data = _assemble(_run_chunks(mc, widths, simulate_chunk), mc.n_paths)
        return PathEnsemble("stein", times, data, mc)

    if isinstance(model, FbmConfig):
        if np.any(times != np.asarray(model.times)):
            raise ValueError("fBM ensembles report at the config's own times")
        widths = fbm_mod.noise_layout(model)

        def simulate_chunk(path_ids, provider):
            w = fbm_mod.simulate_fbm(
                model, n_paths=path_ids.size, eps_provider=provider
            )
            return {"W": w}

        data = _assemble(_run_chunks(mc, widths, simulate_chunk), mc.n_paths)
        return PathEnsemble("fbm", times, data, mc)

    raise TypeError(f"cannot simulate ensembles of {type(model).__name__}")


def estimate(payoff, ensemble: PathEnsemble) -> Estimate:
    """Mean, standard error, and 99% CI of a path functional.

    ``payoff(ensemble)`` must return one finite value per path.  Under
    antithetic sampling the estimator works on pair averages.
    """
    values = np.asarray(payoff(ensemble), dtype=float)
    if values.shape != (ensemble.n_paths,):
        raise ValueError("payoff must return one value per path")
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ValueError(f"payoff is not finite on path id {bad[0]}")
    if ensemble.mc.antithetic:
        values = values.reshape(-1, 2).mean(axis=1)
    return Estimate.from_samples(values)


@dataclass(frozen=True)
class CoordinateReport:
    atom: float
    label: str
    mean_z: float
    var_z: float
    var_target: float
    var_sample: float


@dataclass(frozen=True)
class StationarityReport:
    horizon: float
    coordinates: tuple[CoordinateReport, ...]

    @property
    def max_abs_z(self) -> float:
        return max(max(abs(c.mean_z), abs(c.var_z)) for c in self.coordinates)

    def within(self, threshold: float = 3.0) -> bool:
        return self.max_abs_z <= threshold


def stationarity_report(
    gm_mu: Optional[GridMeasure],
    gm_nu: Optional[GridMeasure],
    horizon: float,
    mc: McConfig,
) -> StationarityReport:
    """Z-scores of the field at the horizon (zero start) against the
    stationary targets: mean 0, Var(Y_i) = 1/(2 x_i), Var(Z_i) =
    1/(4 x_i^3).  One exact transition covers the whole horizon."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    y_atoms, z_atoms = _resolve_atoms(gm_mu, gm_nu)
    kern = TransitionKernel(y_atoms, z_atoms, horizon)
    widths = [kern.sample_dim]

    def simulate_chunk(path_ids, provider):
        n = path_ids.size
        y0 = np.zeros((n, y_atoms.size))
        z0 = np.zeros((n, z_atoms.size))
        eps = provider(0, (n, kern.sample_dim))
        y, z, _ = kern.step_arrays(y0, z0, eps)
        return {"y": y, "z": z}

    data = _assemble(_run_chunks(mc, widths, simulate_chunk), mc.n_paths)
    n = mc.n_paths
    coords = []
    for label, atoms, block in (("Y", y_atoms, data["y"]), ("Z", z_atoms, data["z"])):
        for j, atom in enumerate(atoms):
            target = 1.0 / (2.0 * atom) if label == "Y" else 1.0 / (4.0 * atom**3)
            samples = block[:, j]
            s2 = samples.var(ddof=1)
            mean_z = samples.mean() / np.sqrt(s2 / n)
            var_z = (s2 - target) / (s2 * np.sqrt(2.0 / (n - 1)))
            coords.append(
                CoordinateReport(float(atom), label, float(mean_z), float(var_z),
                                 target, float(s2))
            )
    return StationarityReport(horizon=horizon, coordinates=tuple(coords))
