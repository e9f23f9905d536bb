"""Insider wealth model on an interval: reaction-diffusion wealth dynamics,
logarithmic utility of terminal wealth, the closed-form optimal insider
control, and the martingale-matching identity used to validate it.

Wealth follows dY = [half Y_xx + pi a0 Y] dt + pi b0 Y dB with Dirichlet
boundary data and positive initial profile; the optimal x-independent control
is pi_hat = Phi1/b0 + a0/b0^2 when the utility weight is deterministic.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import donsker
from .donsker import FirstOrderChaosSpec, HistorySnapshot, KFunctional
from .errors import DegenerateVolatility, WealthNonpositive
from .forward import CoefficientSet, ControlPolicy, OperatorSpec, SpatialGrid
from .maxprinciple import PerformanceEstimate, PerformanceSpec, run_ensemble
from .noise import PathBundle, TimeGrid

__all__ = [
    "MarketSpec",
    "UtilitySpec",
    "PortfolioResult",
    "wealth_dynamics",
    "log_utility_performance",
    "optimal_pi",
    "optimal_policy",
    "constant_policy",
    "shifted_policy",
    "run_portfolio_experiment",
    "portfolio_table_csv",
    "martingale_match_check",
    "benchmark_market",
]

_EPS_VOL = 1e-8


@dataclass(frozen=True)
class MarketSpec:
    """Drift a0(t,z), volatility b0(t,z) with |b0| >= eps_vol, positive initial
    wealth profile alpha_init(x), and the spatial domain D."""

    a0: object
    b0: object
    alpha_init: object
    D: SpatialGrid
    eps_vol: float = _EPS_VOL

    def vol(self, t, z) -> float:
        v = self.b0(t, z)
        if abs(v) < self.eps_vol:
            raise DegenerateVolatility(f"|b0({t}, {z})| = {abs(v):.3e} below {self.eps_vol}")
        return v


@dataclass(frozen=True)
class UtilitySpec:
    """Nonnegative terminal utility weight k(x,z); utility k(x,z) ln(y)."""

    k_weight: object = None  # None means k identically 1

    def weight(self, x, z):
        return np.ones_like(np.asarray(x, dtype=float)) if self.k_weight is None \
            else np.asarray(self.k_weight(x, z), dtype=float)

    def k_total(self, grid: SpatialGrid, z) -> float:
        """Integral of the weight over D, interior trapezoid rule."""
        w = np.broadcast_to(self.weight(grid.nodes(), z), (grid.n_nodes,))
        if np.any(w < 0):
            raise ValueError("utility weight must be nonnegative")
        total = float(np.trapezoid(w, dx=grid.dx))
        if not total > 0:
            raise ValueError("utility weight must have positive total mass")
        return total


@dataclass(frozen=True)
class PortfolioResult:
    name: str
    estimate: PerformanceEstimate
    n_rejected: int
    n_paths: int
    samples: np.ndarray | None = None  # per-path performance, nan where rejected

    @property
    def rejection_rate(self) -> float:
        return self.n_rejected / self.n_paths


def wealth_dynamics(market: MarketSpec):
    """Coefficient set and operator of the wealth equation.

    The diffusion operator does not depend on the control, so implicit solves
    can be shared across an ensemble.
    """
    coeffs = CoefficientSet(
        a=lambda t, x, y, u, z: u * market.a0(t, z) * y,
        b=lambda t, x, y, u, z: u * market.b0(t, z) * y,
        xi=lambda x, z: market.alpha_init(x),
        theta=None,
    )
    op = OperatorSpec(
        second_coeff=lambda t, x, u, z: 0.5,
        first_coeff=lambda t, x, u, z: 0.0,
        time_invariant=True,
        control_dependent=False,
    )
    return coeffs, op


def log_utility_performance(market: MarketSpec, utility: UtilitySpec) -> PerformanceSpec:
    """Terminal log-utility integrated over the open interval.

    Boundary nodes carry zero weight: wealth vanishes there under homogeneous
    Dirichlet data while ln(y) stays integrable in the continuum limit.
    """
    lo, hi = market.D.x_left, market.D.x_right

    def k(x, y, z):
        x = np.asarray(x, dtype=float)
        interior = (x > lo) & (x < hi)
        safe = np.where(y > 0, y, 1.0)
        return np.where(interior, utility.weight(x, z) * np.log(safe), 0.0)

    return PerformanceSpec(h=lambda t, x, y, u, z: 0.0, k=k)


def optimal_pi(
    market: MarketSpec,
    utility: UtilitySpec,
    spec: FirstOrderChaosSpec,
    z,
    hist: HistorySnapshot,
    *,
    k_model: KFunctional | None = None,
    horizon=None,
) -> float:
    """Closed-form optimal insider proportion at the snapshot time.

    With a deterministic utility weight the generalized drift ratio collapses
    to the plain information drift and the weight cancels entirely.
    """
    vol = market.vol(hist.t, z)
    if k_model is None or k_model.deterministic:
        drift_ratio = donsker.phi1(spec, z, hist)
    else:
        drift_ratio = donsker.phi_k(spec, k_model, z, hist, horizon=horizon)
    return drift_ratio / vol + market.a0(hist.t, z) / vol**2


def optimal_policy(market: MarketSpec, spec: FirstOrderChaosSpec) -> ControlPolicy:
    """x-independent policy evaluating the optimal proportion from the running
    compensated mean; vectorizes over ensemble paths."""

    def rule(k, t, x, z, hist):
        vol = market.vol(t, z)
        phi = donsker.phi1_from_mean(spec, z, t, hist.m)
        return phi / vol + market.a0(t, z) / vol**2

    return ControlPolicy(rule=rule, mode="x-independent")


def constant_policy(value: float) -> ControlPolicy:
    return ControlPolicy(rule=lambda k, t, x, z, hist: value, mode="x-independent")


def shifted_policy(base: ControlPolicy, shift: float) -> ControlPolicy:
    return ControlPolicy(
        rule=lambda k, t, x, z, hist: np.asarray(base.rule(k, t, x, z, hist)) + shift,
        mode=base.mode,
        bounds=base.bounds,
    )


def run_portfolio_experiment(
    market: MarketSpec,
    utility: UtilitySpec,
    spec: FirstOrderChaosSpec,
    z,
    candidates: dict,
    tgrid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    threads: int = 1,
    raise_on_all_rejected: bool = True,
    keep_samples: bool = False,
) -> list:
    """Monte Carlo log-utility performance for each named candidate control.

    Every candidate sees the identical noise (same seed and path indices), so
    differences between estimates are low-variance.  Paths whose wealth hits a
    nonpositive interior value are rejected and counted.
    """
    if tgrid.t_end > spec.T0 - tgrid.dt + 1e-12:
        raise ValueError("horizon must stay at least one step before T0")
    coeffs, op = wealth_dynamics(market)
    grid = market.D
    xs = grid.nodes()
    if np.any(np.asarray(market.alpha_init(xs[1:-1]), dtype=float) <= 0):
        raise ValueError("initial wealth profile must be positive on interior nodes")
    kw = np.broadcast_to(utility.weight(xs, z), (grid.n_nodes,))
    utility.k_total(grid, z)  # validates sign and mass

    results = []
    for name, policy in candidates.items():
        res = run_ensemble(
            coeffs, op, policy, z, grid, tgrid,
            chaos=spec, n_paths=n_paths, seed=seed, threads=threads,
        )
        accepted = res.min_interior > 0.0
        n_rej = int(n_paths - np.count_nonzero(accepted))
        if n_rej == n_paths:
            if raise_on_all_rejected:
                raise WealthNonpositive(f"every path rejected for control {name!r}")
            results.append(
                PortfolioResult(name, PerformanceEstimate(math.nan, math.nan, 2), n_rej, n_paths)
            )
            continue
        yt = res.y_terminal[accepted]
        util = grid.dx * np.sum(kw[1:-1] * np.log(yt[:, 1:-1]), axis=1)
        samples = res.w_terminal[accepted] * util
        n_acc = len(samples)
        est = PerformanceEstimate(
            mean=float(np.mean(samples)),
            stderr=float(np.std(samples, ddof=1) / math.sqrt(n_acc)) if n_acc > 1 else math.inf,
            n_paths=max(n_acc, 2),
        )
        full = None
        if keep_samples:
            full = np.full(n_paths, math.nan)
            full[accepted] = samples
        results.append(PortfolioResult(name, est, n_rej, n_paths, full))
    return results


def portfolio_table_csv(results, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["control-name", "j-mean", "stderr", "n_paths", "rejection-rate"])
        for r in results:
            w.writerow(
                [r.name, repr(float(r.estimate.mean)), repr(float(r.estimate.stderr)),
                 r.n_paths, repr(float(r.rejection_rate))]
            )


def martingale_match_check(
    market: MarketSpec,
    utility: UtilitySpec,
    spec: FirstOrderChaosSpec,
    z,
    control: ControlPolicy,
    bundle: PathBundle,
) -> float:
    """Relative defect of the terminal martingale identity on one path.

    Left side: total utility weight times the conditional density at the
    horizon.  Right side: the same quantity at time zero propagated by the
    stochastic exponential of (b0 pi - a0/b0) dB.  The two sides are computed
    from independent discretizations; at the optimal control the defect is
    O(sqrt(dt)).
    """
    if not spec.is_gaussian:
        raise ValueError("martingale check requires a Gaussian specification")
    tgrid = bundle.grid
    dt = tgrid.dt
    K_total = utility.k_total(market.D, z)

    m = 0.0
    expo = 0.0
    from .forward import PathHistory

    for k in range(tgrid.n_steps):
        t = tgrid.time(k)
        pik = float(np.asarray(control.values(k, t, None, z, PathHistory(t=t, m=m))))
        vol = market.vol(t, z)
        theta = vol * pik - market.a0(t, z) / vol
        expo += theta * bundle.brownian_increments[k] - 0.5 * theta**2 * dt
        m += spec.beta(t) * bundle.brownian_increments[k]

    T = tgrid.t_end
    lhs = K_total * donsker.gaussian_weight(spec, z, T, m)
    rhs = K_total * donsker.gaussian_weight(spec, z, tgrid.t_start, 0.0) * math.exp(expo)
    return abs(lhs - rhs) / (abs(lhs) + 1e-300)


def benchmark_market(n_cells: int = 32):
    """Shipped benchmark instance: unit interval, smooth positive initial
    profile, constant market coefficients, Gaussian insider variable B(T0)."""
    market = MarketSpec(
        a0=lambda t, z: 0.1,
        b0=lambda t, z: 0.3,
        alpha_init=lambda x: 1.0 + np.sin(math.pi * np.asarray(x, dtype=float)),
        D=SpatialGrid(0.0, 1.0, n_cells),
    )
    utility = UtilitySpec(k_weight=None)
    spec = FirstOrderChaosSpec(beta=lambda s: 1.0, T0=1.0)
    return market, utility, spec
