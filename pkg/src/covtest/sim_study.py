"""Monte Carlo size/power study for the four lack-of-fit tests.

Generates partially linear datasets with a tunable smooth departure from
linearity, applies the configured tests to each replicate, and tabulates
empirical rejection rates per (test, sample size, noise level, departure,
nominal level). Per-replicate random streams are keyed by (master seed,
replicate, variate role), so the generated data do not depend on which tests
are enabled, on the execution order, or on the worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .data_io import Dataset
from .errors import ConfigError, CovtestError, StudyError
from .exact_lrt import (
    LambdaGrid,
    NullDistribution,
    ProfileSolver,
    default_lambda_grid,
    p_value,
    simulate_null_cached,
    spectral_decompose,
)
from .null_fit import fit_ols, reml_projection
from .score_test import score_statistic
from .cusum_test import cumulative_process, multiplier_null, sup_test
from .spline_basis import NATURAL_SPLINE, build_design, place_knots, smoother_kernel

__all__ = [
    "nonlinear_effect",
    "generate_dataset",
    "SimConfig",
    "SimCell",
    "SimReport",
    "run_study",
    "KNOWN_TESTS",
]

# (statistic kind, spline degree, dropped top coefficients) per LRT variant.
_LRT_VARIANTS = {
    "lrt1": ("lrt", 1, 0),
    "lrt2": ("lrt", 2, 1),
    "rlrt": ("rlrt", 1, 0),
}
KNOWN_TESTS = ("lrt1", "lrt2", "rlrt", "score", "cusum")

_TRUE_COEF = (1.3, 0.45)
_S_VARIANCES = (0.3, 0.4)


def nonlinear_effect(t, c: float):
    """Smooth covariate effect of the simulation design.

    Linear in t at c = 0; the bump term grows with c, pulling the curve
    further from any straight line.
    """
    t = np.asarray(t, dtype=float)
    out = 0.25 * c * t * np.exp(2.0 - 2.0 * t) - t + 0.5
    return out if out.ndim else float(out)


def generate_dataset(
    m: int,
    sigma: float,
    c: float,
    seed: rngmod.SeedLike,
    s_scale_as_sd: bool = False,
) -> Dataset:
    """One simulated dataset: two Gaussian covariates, a fixed t grid on
    [0, 1], and Gaussian noise of standard deviation sigma.

    The second argument of the covariate law is a variance by default
    (``s_scale_as_sd=True`` reads it as a standard deviation instead). The
    covariate and noise draws come from per-role streams under ``seed``, so
    datasets with the same seed share draws across c and sigma.
    """
    if m < 2:
        raise ConfigError(f"need m >= 2, got {m}")
    if sigma <= 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    scale = (lambda v: v) if s_scale_as_sd else math.sqrt
    s1 = rngmod.stream(seed, 0).normal(0.0, scale(_S_VARIANCES[0]), m)
    s2 = rngmod.stream(seed, 1).normal(0.0, scale(_S_VARIANCES[1]), m)
    noise = rngmod.stream(seed, 2).standard_normal(m)
    t = np.arange(m) / (m - 1)
    y = _TRUE_COEF[0] * s1 + _TRUE_COEF[1] * s2 + nonlinear_effect(t, c) + sigma * noise
    return Dataset(y=y, S=np.column_stack([s1, s2]), t=t)


@dataclass(frozen=True)
class SimConfig:
    """Full description of one study; every field feeds the provenance echo."""

    m_values: tuple[int, ...] = (50, 100)
    sigma_values: tuple[float, ...] = (0.25, 0.5)
    c_values: tuple[int, ...] = (0, 1, 2, 3, 4)
    levels: tuple[float, ...] = (0.05, 0.1)
    tests: tuple[str, ...] = ("lrt1", "lrt2", "rlrt", "score")
    n_runs: int = 1000
    n_knots: int = 20
    n_sims_null: int = 10000
    cusum_resamples: int = 1000
    seed: int = 0
    threads: int = 1
    s_scale_as_sd: bool = False
    cache_dir: str | None = None

    def __post_init__(self):
        if self.n_runs < 1:
            raise ConfigError(f"n_runs must be >= 1, got {self.n_runs}")
        if any(s <= 0 for s in self.sigma_values):
            raise ConfigError("all sigma values must be > 0")
        unknown = [t for t in self.tests if t not in KNOWN_TESTS]
        if unknown:
            raise ConfigError(f"unknown tests {unknown}; known: {list(KNOWN_TESTS)}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")

    def lines(self) -> list[str]:
        """Flat key = value echo of the effective configuration."""
        out = []
        for key in (
            "m_values sigma_values c_values levels tests n_runs n_knots "
            "n_sims_null cusum_resamples seed threads s_scale_as_sd cache_dir"
        ).split():
            value = getattr(self, key)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            out.append(f"{key} = {value}")
        return out


@dataclass(frozen=True)
class SimCell:
    test: str
    m: int
    sigma: float
    c: int
    level: float
    n_runs: int
    failures: int
    rejections: int

    @property
    def fraction(self) -> float:
        valid = self.n_runs - self.failures
        return self.rejections / valid if valid else float("nan")

    @property
    def se(self) -> float:
        valid = self.n_runs - self.failures
        if not valid:
            return float("nan")
        f = self.fraction
        return math.sqrt(f * (1.0 - f) / valid)


@dataclass
class SimReport:
    cells: list[SimCell]
    config: SimConfig
    failure_messages: list[str] = field(default_factory=list)
    runtime_s: float = 0.0

    def get(self, test: str, m: int, sigma: float, c: int, level: float) -> SimCell:
        for cell in self.cells:
            if (
                cell.test == test
                and cell.m == m
                and cell.sigma == sigma
                and cell.c == c
                and cell.level == level
            ):
                return cell
        raise KeyError((test, m, sigma, c, level))

    def to_csv(self) -> str:
        """Machine-readable report; deterministic given the same counts."""
        lines = ["test,m,sigma,c,level,n_runs,failures,rejections,fraction,se"]
        for cell in self.cells:
            lines.append(
                f"{cell.test},{cell.m},{cell.sigma:g},{cell.c},{cell.level:g},"
                f"{cell.n_runs},{cell.failures},{cell.rejections},"
                f"{cell.fraction:.6f},{cell.se:.6f}"
            )
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        """Aligned text table: one block per m, rows test within sigma within
        level, one column per departure level c (c = 0 is the empirical size)."""
        cfg = self.config
        out = []
        for m in cfg.m_values:
            out.append(f"empirical rejection rates, m = {m}, {cfg.n_runs} runs")
            header = f"{'level':>6} {'sigma':>6} {'test':<6}" + "".join(
                f"{f'c={c}':>8}" for c in cfg.c_values
            )
            out.append(header)
            out.append("-" * len(header))
            for level in cfg.levels:
                for sigma in cfg.sigma_values:
                    for test in cfg.tests:
                        row = f"{level:>6g} {sigma:>6g} {test:<6}"
                        for c in cfg.c_values:
                            row += f"{self.get(test, m, sigma, c, level).fraction:>8.3f}"
                        out.append(row)
                out.append("")
            out.append("")
        return "\n".join(out)


def _study_fixtures(config: SimConfig, m: int):
    """Design pieces that are constant across the replicates of one m.

    LRT variants sharing a spline degree are grouped so each replicate pays
    for a single profiled-likelihood sweep per degree.
    """
    base = generate_dataset(m, config.sigma_values[0], 0, (config.seed, 0), config.s_scale_as_sd)
    fixtures: dict = {"t": base.t}
    degrees = {1} | {_LRT_VARIANTS[n][1] for n in config.tests if n in _LRT_VARIANTS}
    for d in sorted(degrees):
        fixtures[("knots", d)] = place_knots(base.t, config.n_knots, d)
    groups: dict[int, list[tuple[int, str, str, int]]] = {}
    for vi, name in enumerate(config.tests):
        if name not in _LRT_VARIANTS:
            continue
        kind, d, h = _LRT_VARIANTS[name]
        design0 = build_design(base, fixtures[("knots", d)])
        if ("solver", d) not in fixtures:
            cache = spectral_decompose(design0)
            fixtures[("solver", d)] = ProfileSolver(design0.B)
            fixtures[("grid", d)] = default_lambda_grid(cache)
            fixtures[("cache", d)] = cache
        fixtures[("null", name)] = simulate_null_cached(
            fixtures[("cache", d)],
            kind,
            h,
            fixtures[("grid", d)],
            config.n_sims_null,
            seed=(config.seed, 9000 + vi),
            cache_dir=config.cache_dir,
        )
        groups.setdefault(d, []).append((vi, name, kind, h))
    fixtures["lrt_groups"] = groups
    if "score" in config.tests:
        fixtures["kernel"] = smoother_kernel(base.t, 1, NATURAL_SPLINE)
    return fixtures


def _run_replicate(config: SimConfig, m: int, sigma: float, fixtures: dict, rep: int):
    """Rejection indicators for one replicate: (test, c, level) booleans."""
    n_tests = len(config.tests)
    out = np.zeros((n_tests, len(config.c_values), len(config.levels)), dtype=bool)
    fail = np.zeros((n_tests, len(config.c_values)), dtype=bool)
    messages: list[str] = []
    levels = np.asarray(config.levels)
    groups = fixtures["lrt_groups"]
    need_fit = "score" in config.tests or "cusum" in config.tests
    for ci, c in enumerate(config.c_values):
        dataset = generate_dataset(m, sigma, c, (config.seed, rep), config.s_scale_as_sd)
        need_degrees = set(groups) | ({1} if need_fit else set())
        designs = {d: build_design(dataset, fixtures[("knots", d)]) for d in sorted(need_degrees)}

        def record_failure(ti, name, exc):
            fail[ti, ci] = True
            messages.append(f"{name} m={m} sigma={sigma:g} c={c} rep={rep}: {exc}")

        for d, members in groups.items():
            try:
                solver: ProfileSolver = fixtures[("solver", d)]
                grid: LambdaGrid = fixtures[("grid", d)]
                specs = [(kind, h) for _, _, kind, h in members]
                results = solver.statistics(dataset.y, designs[d].X, grid, specs)
            except CovtestError as exc:
                for ti, name, _, _ in members:
                    record_failure(ti, name, exc)
                continue
            for (ti, name, _, _), result in zip(members, results):
                null: NullDistribution = fixtures[("null", name)]
                out[ti, ci, :] = p_value(result.statistic, null) < levels
        if need_fit:
            try:
                fit = fit_ols(dataset, designs[1])
                proj = reml_projection(fit, designs[1].X)
            except CovtestError as exc:
                for ti, name in enumerate(config.tests):
                    if name in ("score", "cusum"):
                        record_failure(ti, name, exc)
                continue
            for ti, name in enumerate(config.tests):
                try:
                    if name == "score":
                        p = score_statistic(fit, proj, fixtures["kernel"]).p_value
                    elif name == "cusum":
                        sups = multiplier_null(
                            fit, proj, dataset.t, config.cusum_resamples, seed=(config.seed, rep, 3)
                        )
                        p = sup_test(cumulative_process(fit, dataset.t), sups).p_value
                    else:
                        continue
                    out[ti, ci, :] = p < levels
                except CovtestError as exc:
                    record_failure(ti, name, exc)
    return out, fail, messages


def run_study(config: SimConfig) -> SimReport:
    """Run the full study described by ``config``.

    Every configured test sees the same generated dataset within a replicate.
    Null distributions for the LRT variants are simulated once per (m, design)
    and reused across replicates and departure levels. Replicates may run on a
    thread pool; identical output is guaranteed for any worker count.
    """
    started = time.perf_counter()
    cells: list[SimCell] = []
    all_messages: list[str] = []
    total_fail = 0
    total_apps = 0
    for m in config.m_values:
        fixtures = _study_fixtures(config, m)
        for sigma in config.sigma_values:
            shape = (len(config.tests), len(config.c_values), len(config.levels))
            counts = np.zeros(shape, dtype=np.int64)
            fails = np.zeros(shape[:2], dtype=np.int64)

            def job(rep: int):
                return _run_replicate(config, m, sigma, fixtures, rep)

            if config.threads > 1:
                with ThreadPoolExecutor(max_workers=config.threads) as pool:
                    results = list(pool.map(job, range(config.n_runs)))
            else:
                results = [job(rep) for rep in range(config.n_runs)]
            for out, fail, messages in results:
                counts += out
                fails += fail
                all_messages.extend(messages)
            for ti, test in enumerate(config.tests):
                for ci, c in enumerate(config.c_values):
                    for li, level in enumerate(config.levels):
                        cells.append(
                            SimCell(
                                test=test,
                                m=m,
                                sigma=sigma,
                                c=c,
                                level=level,
                                n_runs=config.n_runs,
                                failures=int(fails[ti, ci]),
                                rejections=int(counts[ti, ci, li]),
                            )
                        )
            total_fail += int(fails.sum())
            total_apps += len(config.tests) * len(config.c_values) * config.n_runs
    if total_apps and total_fail > 0.01 * total_apps:
        preview = "; ".join(all_messages[:5])
        raise StudyError(
            f"{total_fail} of {total_apps} test applications failed (> 1%): {preview}"
        )
    return SimReport(
        cells=cells,
        config=config,
        failure_messages=all_messages,
        runtime_s=time.perf_counter() - started,
    )
