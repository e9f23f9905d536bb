"""Partially observed signal machinery: signal/observation simulation,
Girsanov reweighting to the reference measure, a splitting-up solver for the
unnormalized conditional density, independent oracles (Kalman-Bucy, bootstrap
particle filter), the discrete coercivity identity, and the feedback-form
control evaluator.

The signal state space is truncated to a bounded interval; the transport
half-step uses the exact transpose of the generator stencil, so total mass is
conserved exactly and any probability reaching the artificial boundary is
visible as boundary-node mass.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import (
    BoundaryViolation,
    DegenerateCurvature,
    LinearSolveFailure,
    MassCollapse,
    WeightDegeneracy,
)
from .forward import ControlPolicy, PathHistory, SpatialGrid
from .maxprinciple import PerformanceEstimate
from .noise import LevySpec, PathBundle, TimeGrid, _rng

__all__ = [
    "SignalModel",
    "ObservationPath",
    "GirsanovWeight",
    "UnnormalizedDensity",
    "ZakaiSolution",
    "sample_initial_states",
    "simulate_signal_observation",
    "girsanov_weight",
    "transport_bands",
    "transport_matrix",
    "zakai_step",
    "solve_zakai",
    "normalize",
    "particle_filter_oracle",
    "kalman_bucy_oracle",
    "transformed_performance",
    "direct_performance",
    "coercivity_check",
    "feedback_pi",
    "filter_snapshots_csv",
]

_EPS_MASS = 1e-12
_EPS_CURV = 1e-10


@dataclass(frozen=True)
class SignalModel:
    """Signal drift/volatility/jump coefficients, observation function, and
    initial density on the truncated state space."""

    alpha: object  # (x, r, u) -> real
    beta: object  # (x, r, u) -> real
    h_obs: object  # x -> real
    F_init: object  # (x, z) -> density value >= 0
    gamma: object = None  # (x, r, u, mark) -> real
    levy: LevySpec = field(default_factory=LevySpec)
    # coefficients ignore (r, u): transport bands can be assembled once
    autonomous: bool = True

    def check_initial_mass(self, sgrid: SpatialGrid, z, tol: float = 1e-8) -> float:
        xs = sgrid.nodes()
        f = np.asarray(self.F_init(xs, z), dtype=float)
        if np.any(f < 0):
            raise ValueError("initial density must be nonnegative")
        mass = float(np.trapezoid(f, dx=sgrid.dx))
        if abs(mass - 1.0) > tol:
            raise ValueError(f"initial density mass {mass} differs from 1 beyond {tol}")
        return mass


@dataclass(frozen=True)
class ObservationPath:
    """Observation increments on a time grid; values() gives R(t_k), R(0)=0."""

    grid: TimeGrid
    increments: np.ndarray

    def values(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.increments)))


@dataclass(frozen=True)
class GirsanovWeight:
    """Change-of-measure weights K(t_k) along one path; K(0)=1, K>0."""

    times: np.ndarray
    values: np.ndarray


@dataclass
class UnnormalizedDensity:
    """Grid values of the unnormalized conditional density at one time."""

    grid: SpatialGrid
    values: np.ndarray

    def mass(self) -> float:
        return float(self.grid.dx * np.sum(self.values))

    def boundary_mass(self) -> float:
        return float(self.grid.dx * (self.values[0] + self.values[-1]))

    def posterior_mean(self) -> float:
        m = self.mass()
        if m < _EPS_MASS:
            raise MassCollapse(f"density mass {m:.3e} below {_EPS_MASS}")
        return float(self.grid.dx * np.sum(self.grid.nodes() * self.values) / m)


@dataclass
class ZakaiSolution:
    """Densities at every grid time plus positivity/truncation telemetry."""

    grid: SpatialGrid
    tgrid: TimeGrid
    values: np.ndarray  # (n_steps + 1, n_nodes)
    clamp_defect: float  # total mass removed by nonnegativity clamping
    boundary_mass: np.ndarray  # escaped-mass telemetry per time node

    def density(self, k: int) -> UnnormalizedDensity:
        return UnnormalizedDensity(self.grid, self.values[k])


def sample_initial_states(
    model: SignalModel, sgrid: SpatialGrid, n: int, seed: int, channel: int = 3
) -> np.ndarray:
    """Draw initial signal states from F_init by inverse transform on the grid."""
    xs = sgrid.nodes()
    f = np.asarray(model.F_init(xs, 0.0), dtype=float)
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * sgrid.dx)))
    cdf /= cdf[-1]
    u = _rng(seed, 0, channel, 0).uniform(size=n)
    return np.interp(u, cdf, xs)


def _control_value(control, k, t, z):
    if control is None:
        return 0.0
    return float(np.asarray(control.values(k, t, None, z, PathHistory(t=t, m=0.0))))


def simulate_signal_observation(
    model: SignalModel,
    control: ControlPolicy | None,
    z,
    bundle_v: PathBundle,
    bundle_w: PathBundle,
    x0: float,
) -> tuple:
    """Euler-Maruyama signal path plus its observation increments.

    bundle_v drives the signal, bundle_w the observation noise; they must live
    on the same time grid and come from independent channels.
    """
    if bundle_v.grid != bundle_w.grid:
        raise ValueError("signal and observation bundles must share a time grid")
    tgrid = bundle_v.grid
    dt = tgrid.dt
    n = tgrid.n_steps
    X = np.empty(n + 1)
    X[0] = x0
    dR = np.empty(n)
    r = 0.0
    for k in range(n):
        t = tgrid.time(k)
        u = _control_value(control, k, t, z)
        x = X[k]
        dR[k] = model.h_obs(x) * dt + bundle_w.brownian_increments[k]
        step = model.alpha(x, r, u) * dt + model.beta(x, r, u) * bundle_v.brownian_increments[k]
        if model.gamma is not None:
            for mark in bundle_v.jump_events[k]:
                step += model.gamma(x, r, u, mark)
            for mark, lam in model.levy.atoms:
                step -= dt * lam * model.gamma(x, r, u, mark)
        X[k + 1] = x + step
        r += dR[k]
    return X, ObservationPath(grid=tgrid, increments=dR)


def girsanov_weight(model: SignalModel, signal: np.ndarray, obs: ObservationPath) -> GirsanovWeight:
    """K(t) = exp(int h(X) dR - half int h(X)^2 ds), left-endpoint sums."""
    tgrid = obs.grid
    h = np.array([model.h_obs(x) for x in signal[:-1]])
    expo = np.concatenate(([0.0], np.cumsum(h * obs.increments - 0.5 * h**2 * tgrid.dt)))
    return GirsanovWeight(times=tgrid.times(), values=np.exp(expo))


def transport_bands(model: SignalModel, sgrid: SpatialGrid, r, u):
    """Tridiagonal bands (lower, diag, upper) of the signal generator L on the
    grid; boundary rows are zero.  Interior row sums vanish exactly, so the
    transpose-transport conserves total mass to machine precision."""
    xs = sgrid.nodes()
    n = sgrid.n_nodes
    dx = sgrid.dx
    adv = np.array([model.alpha(x, r, u) for x in xs]) / (2.0 * dx)
    dif = 0.5 * np.array([model.beta(x, r, u) for x in xs]) ** 2 / dx**2
    lower = np.zeros(n)
    diag = np.zeros(n)
    upper = np.zeros(n)
    lower[1:-1] = dif[1:-1] - adv[1:-1]
    diag[1:-1] = -2.0 * dif[1:-1]
    upper[1:-1] = dif[1:-1] + adv[1:-1]
    return lower, diag, upper


def transport_matrix(model: SignalModel, sgrid: SpatialGrid, r, u) -> np.ndarray:
    """Dense matrix of the signal generator L, assembled from the bands."""
    lower, diag, upper = transport_bands(model, sgrid, r, u)
    return np.diag(diag) + np.diag(lower[1:], -1) + np.diag(upper[:-1], 1)


def _solve_transposed_transport(bands, dt, rhs):
    """Solve (I - dt L^T) y = rhs with L given by its bands."""
    lower, diag, upper = bands
    n = len(diag)
    ab = np.zeros((3, n))
    # (L^T)[i, i+1] = L[i+1, i] = lower[i+1]; (L^T)[i, i-1] = L[i-1, i] = upper[i-1]
    ab[0, 1:] = -dt * lower[1:]
    ab[1] = 1.0 - dt * diag
    ab[2, :-1] = -dt * upper[:-1]
    try:
        return solve_banded((1, 1), ab, rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise LinearSolveFailure(str(exc)) from exc


def zakai_step(
    density: UnnormalizedDensity,
    model: SignalModel,
    u,
    r,
    dR: float,
    dt: float,
    *,
    bands=None,
    h_vals=None,
) -> tuple:
    """One splitting-up step: implicit transpose-transport, then the
    multiplicative observation update.  Returns (density, clamp defect)."""
    sgrid = density.grid
    if bands is None:
        bands = transport_bands(model, sgrid, r, u)
    y = _solve_transposed_transport(bands, dt, density.values)
    defect = float(-sgrid.dx * np.sum(y[y < 0.0]))
    y = np.maximum(y, 0.0)
    if h_vals is None:
        h_vals = np.array([model.h_obs(x) for x in sgrid.nodes()])
    y = y * np.exp(h_vals * dR - 0.5 * h_vals**2 * dt)
    return UnnormalizedDensity(sgrid, y), defect


def solve_zakai(
    model: SignalModel,
    control: ControlPolicy | None,
    z,
    obs: ObservationPath,
    sgrid: SpatialGrid,
) -> ZakaiSolution:
    """Splitting-up sweep over a whole observation path."""
    tgrid = obs.grid
    xs = sgrid.nodes()
    values = np.empty((tgrid.n_steps + 1, sgrid.n_nodes))
    values[0] = np.maximum(np.asarray(model.F_init(xs, z), dtype=float), 0.0)
    dens = UnnormalizedDensity(sgrid, values[0])
    bmass = np.empty(tgrid.n_steps + 1)
    bmass[0] = dens.boundary_mass()
    clamp = 0.0
    r_vals = obs.values()
    h_vals = np.array([model.h_obs(x) for x in xs])
    bands = transport_bands(model, sgrid, 0.0, 0.0) if model.autonomous else None
    for k in range(tgrid.n_steps):
        t = tgrid.time(k)
        u = _control_value(control, k, t, z)
        dens, defect = zakai_step(
            dens, model, u, r_vals[k], obs.increments[k], tgrid.dt,
            bands=bands, h_vals=h_vals,
        )
        clamp += defect
        values[k + 1] = dens.values
        bmass[k + 1] = dens.boundary_mass()
    return ZakaiSolution(grid=sgrid, tgrid=tgrid, values=values, clamp_defect=clamp, boundary_mass=bmass)


def normalize(density: UnnormalizedDensity, eps: float = _EPS_MASS) -> tuple:
    """Bayes normalization: (unit-mass density, normalizing mass)."""
    mass = density.mass()
    if mass < eps:
        raise MassCollapse(f"density mass {mass:.3e} below {eps}")
    return UnnormalizedDensity(density.grid, density.values / mass), mass


def particle_filter_oracle(
    model: SignalModel,
    obs: ObservationPath,
    n_particles: int,
    seed: int,
    *,
    sgrid: SpatialGrid,
    control: ControlPolicy | None = None,
    z=0.0,
    channel: int = 5,
) -> dict:
    """Bootstrap particle filter with systematic resampling every step.

    Independent of the grid solver in both discretization and randomness;
    serves as a cross-check oracle for the posterior mean path.
    """
    if n_particles < 100:
        raise ValueError("n_particles must be >= 100")
    tgrid = obs.grid
    dt = tgrid.dt
    rng = _rng(seed, 0, channel, 0)
    x = sample_initial_states(model, sgrid, n_particles, seed, channel=channel + 1)
    means = np.empty(tgrid.n_steps + 1)
    means[0] = float(np.mean(x))
    r = 0.0
    for k in range(tgrid.n_steps):
        t = tgrid.time(k)
        u = _control_value(control, k, t, z)
        drift = np.array([model.alpha(xi, r, u) for xi in x])
        vol = np.array([model.beta(xi, r, u) for xi in x])
        x = x + drift * dt + vol * math.sqrt(dt) * rng.standard_normal(n_particles)
        h = np.array([model.h_obs(xi) for xi in x])
        logw = h * obs.increments[k] - 0.5 * h**2 * dt
        w = np.exp(logw - logw.max())
        w /= w.sum()
        ess = 1.0 / np.sum(w**2)
        if ess < 2.0:
            raise WeightDegeneracy(f"effective sample size {ess:.2f} below 2")
        # systematic resampling
        positions = (np.arange(n_particles) + rng.uniform()) / n_particles
        x = x[np.searchsorted(np.cumsum(w), positions)]
        means[k + 1] = float(np.mean(x))
        r += obs.increments[k]
    return {"times": tgrid.times(), "means": means, "final_particles": x}


def kalman_bucy_oracle(a: float, b: float, c: float, m0: float, P0: float, obs: ObservationPath) -> tuple:
    """Continuous-time Kalman filter for dX = aX dt + b dv, dR = cX dt + dw.

    Variance by RK4 on the Riccati equation, mean by the innovation recursion
    driven by the same observation increments.
    """
    tgrid = obs.grid
    dt = tgrid.dt
    n = tgrid.n_steps
    m = np.empty(n + 1)
    P = np.empty(n + 1)
    m[0], P[0] = m0, P0
    ric = lambda p: 2.0 * a * p + b * b - c * c * p * p
    for k in range(n):
        p = P[k]
        k1 = ric(p)
        k2 = ric(p + 0.5 * dt * k1)
        k3 = ric(p + 0.5 * dt * k2)
        k4 = ric(p + dt * k3)
        P[k + 1] = p + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        m[k + 1] = m[k] + a * m[k] * dt + P[k] * c * (obs.increments[k] - c * m[k] * dt)
    return m, P


def transformed_performance(
    model: SignalModel,
    control: ControlPolicy | None,
    f,
    g,
    z,
    sgrid: SpatialGrid,
    tgrid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    channel: int = 9,
) -> PerformanceEstimate:
    """Reference-measure performance: observations are simulated as Brownian
    motion and the profit/bequest densities are integrated against the
    unnormalized filter density.

    f: (t, x) -> rate density; g: x -> terminal density.
    """
    from .noise import brownian_increment_matrix

    xs = sgrid.nodes()
    wq = np.full(sgrid.n_nodes, sgrid.dx)
    g_vals = np.asarray(g(xs), dtype=float) * wq
    db = brownian_increment_matrix(tgrid, seed, range(n_paths), channel)
    samples = np.empty(n_paths)
    for p in range(n_paths):
        obs = ObservationPath(grid=tgrid, increments=db[p])
        sol = solve_zakai(model, control, z, obs, sgrid)
        acc = 0.0
        if f is not None:
            for k in range(tgrid.n_steps):
                fv = np.asarray(f(tgrid.time(k), xs), dtype=float)
                acc += tgrid.dt * float(np.sum(fv * wq * sol.values[k]))
        samples[p] = acc + float(np.sum(g_vals * sol.values[-1]))
    return PerformanceEstimate(
        mean=float(np.mean(samples)),
        stderr=float(np.std(samples, ddof=1) / math.sqrt(n_paths)),
        n_paths=n_paths,
    )


def direct_performance(
    model: SignalModel,
    control: ControlPolicy | None,
    f,
    g,
    z,
    sgrid: SpatialGrid,
    tgrid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    channel: int = 11,
) -> PerformanceEstimate:
    """Physical-measure Monte Carlo of the same performance functional,
    evaluated directly on simulated signal paths."""
    from .noise import sample_bundle

    x0s = sample_initial_states(model, sgrid, n_paths, seed, channel=channel + 2)
    samples = np.empty(n_paths)
    for p in range(n_paths):
        bv = sample_bundle(tgrid, model.levy, seed, p, channel)
        bw = sample_bundle(tgrid, LevySpec(), seed, p, channel + 1)
        X, _ = simulate_signal_observation(model, control, z, bv, bw, x0s[p])
        acc = 0.0
        if f is not None:
            for k in range(tgrid.n_steps):
                acc += tgrid.dt * float(f(tgrid.time(k), X[k]))
        samples[p] = acc + float(g(X[-1]))
    return PerformanceEstimate(
        mean=float(np.mean(samples)),
        stderr=float(np.std(samples, ddof=1) / math.sqrt(n_paths)),
        n_paths=n_paths,
    )


def coercivity_check(y, pi: float, beta_vol, sgrid: SpatialGrid, alpha_drift: float = 0.0) -> tuple:
    """Discrete energy identity for the filtering generator.

    Returns (lhs, rhs) with lhs = 2 <-A y, y> for the flux-form operator
    A y = pi alpha y' + half pi^2 (beta^2 y')' and rhs the gradient energy
    pi^2 int beta^2 (y')^2 dx with midpoint volatility and forward
    differences.  Summation by parts makes the two sides agree to rounding
    for any volatility profile; the advection part telescopes to zero.
    """
    y = np.asarray(y, dtype=float)
    if y[0] != 0.0 or y[-1] != 0.0:
        raise BoundaryViolation("test function must vanish at the boundary nodes")
    xs = sgrid.nodes()
    dx = sgrid.dx
    bfun = beta_vol if callable(beta_vol) else (lambda x: beta_vol)
    xm = 0.5 * (xs[1:] + xs[:-1])
    beta_m = np.array([float(bfun(x)) for x in xm])
    flux = beta_m**2 * np.diff(y) / dx
    Ay = np.zeros_like(y)
    Ay[1:-1] = 0.5 * pi**2 * np.diff(flux) / dx
    Ay[1:-1] += pi * alpha_drift * (y[2:] - y[:-2]) / (2.0 * dx)
    lhs = float(-2.0 * dx * y @ Ay)
    dy = np.diff(y) / dx
    rhs = float(pi**2 * dx * np.sum(beta_m**2 * dy**2))
    return lhs, rhs


def feedback_pi(
    p_prime,
    p_double_prime,
    posterior: UnnormalizedDensity,
    *,
    alpha_drift: float,
    beta_vol: float,
    eps: float = _EPS_CURV,
) -> float:
    """Feedback control from a supplied adjoint field: minus drift times the
    posterior mean of p' over volatility-squared times the posterior mean of
    p''."""
    dens, _ = normalize(posterior)
    xs = dens.grid.nodes()
    wq = dens.grid.dx * dens.values
    e_p1 = float(np.sum(np.asarray(p_prime(xs), dtype=float) * wq))
    e_p2 = float(np.sum(np.asarray(p_double_prime(xs), dtype=float) * wq))
    den = beta_vol**2 * e_p2
    if abs(den) < eps:
        raise DegenerateCurvature(f"curvature moment {den:.3e} below {eps}")
    return -alpha_drift * e_p1 / den


def filter_snapshots_csv(solution: ZakaiSolution, path):
    """Per-(t,x) CSV of the unnormalized and normalized filter densities."""
    xs = solution.grid.nodes()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "unnormalized", "normalized"])
        for k, t in enumerate(solution.tgrid.times()):
            row = solution.values[k]
            mass = solution.grid.dx * float(np.sum(row))
            for i, x in enumerate(xs):
                norm = row[i] / mass if mass > _EPS_MASS else math.nan
                w.writerow([repr(float(t)), repr(float(x)), repr(float(row[i])), repr(float(norm))])
