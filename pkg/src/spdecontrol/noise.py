"""Driving-noise generation: Brownian increments, finite-atom Poisson random
measures, and elementary Ito integrals on a shared uniform time grid.

Streams are counter-based: every (seed, path_index, channel) triple owns an
independent substream, so paths can be generated in any order, or in parallel,
with bit-identical results.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimeGrid",
    "LevySpec",
    "PathBundle",
    "sample_bundle",
    "brownian_value",
    "ito_integral",
    "compensated_jump_sum",
]

# substream roles within a channel pair
_SUB_BROWNIAN = 0
_SUB_POISSON = 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t_start, t_end] with n_steps steps."""

    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    def time(self, k: int) -> float:
        # node k computed directly from k, never by accumulation
        return self.t_start + k * self.dt

    def times(self) -> np.ndarray:
        return self.t_start + np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class LevySpec:
    """Finite-atom approximation of a Levy measure: atoms = [(mark, rate), ...]."""

    atoms: tuple = ()

    def __post_init__(self):
        atoms = tuple((float(z), float(lam)) for z, lam in self.atoms)
        if any(lam < 0 for _, lam in atoms):
            raise ValueError("atom rates must be nonnegative")
        object.__setattr__(self, "atoms", atoms)

    @property
    def marks(self) -> np.ndarray:
        return np.array([z for z, _ in self.atoms])

    @property
    def rates(self) -> np.ndarray:
        return np.array([lam for _, lam in self.atoms])

    @property
    def total_rate(self) -> float:
        return float(sum(lam for _, lam in self.atoms))


@dataclass(frozen=True)
class PathBundle:
    """One realization of the driving noise on a time grid.

    jump_events[k] is the tuple of realized marks during step k.
    """

    grid: TimeGrid
    brownian_increments: np.ndarray
    jump_events: tuple
    seed: int
    path_index: int
    levy: LevySpec = field(default_factory=LevySpec)


def _rng(seed: int, path_index: int, channel: int, sub: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(path_index, 2 * channel + sub))
    return np.random.Generator(np.random.PCG64(ss))


def brownian_increment_matrix(
    grid: TimeGrid, seed: int, path_indices, channel: int = 0
) -> np.ndarray:
    """Brownian increments for several paths at once, row i = path_indices[i].

    Row i is bit-identical to sample_bundle(..., path_index=path_indices[i],
    channel=channel).brownian_increments.
    """
    sd = np.sqrt(grid.dt)
    out = np.empty((len(path_indices), grid.n_steps))
    for i, p in enumerate(path_indices):
        out[i] = _rng(seed, int(p), channel, _SUB_BROWNIAN).standard_normal(grid.n_steps) * sd
    return out


def jump_count_matrices(
    grid: TimeGrid, levy: LevySpec, seed: int, path_indices, channel: int = 0
) -> list:
    """Per-atom Poisson event counts, one (n_paths, n_steps) matrix per atom."""
    if not levy.atoms:
        return []
    counts = [np.empty((len(path_indices), grid.n_steps), dtype=np.int64) for _ in levy.atoms]
    for i, p in enumerate(path_indices):
        rng = _rng(seed, int(p), channel, _SUB_POISSON)
        for a, (_, lam) in enumerate(levy.atoms):
            counts[a][i] = rng.poisson(lam * grid.dt, grid.n_steps)
    return counts


def sample_bundle(
    grid: TimeGrid,
    levy: LevySpec,
    seed: int,
    path_index: int,
    channel: int = 0,
) -> PathBundle:
    """Draw one reproducible noise bundle.

    Brownian and Poisson streams use separate substreams of the
    (seed, path_index, channel) key and are statistically independent.
    """
    db = brownian_increment_matrix(grid, seed, [path_index], channel)[0]
    events: list
    if levy.atoms:
        counts = jump_count_matrices(grid, levy, seed, [path_index], channel)
        events = []
        for k in range(grid.n_steps):
            step_marks = []
            for a, (mark, _) in enumerate(levy.atoms):
                step_marks.extend([mark] * int(counts[a][0, k]))
            events.append(tuple(step_marks))
    else:
        events = [() for _ in range(grid.n_steps)]
    return PathBundle(
        grid=grid,
        brownian_increments=db,
        jump_events=tuple(events),
        seed=seed,
        path_index=path_index,
        levy=levy,
    )


def brownian_value(bundle: PathBundle, k: int) -> float:
    """B(t_k) = sum of the first k increments; B(t_0) = 0."""
    n = bundle.grid.n_steps
    if not 0 <= k <= n:
        raise IndexError(f"step index {k} outside [0, {n}]")
    return float(np.sum(bundle.brownian_increments[:k]))


def ito_integral(integrand, bundle: PathBundle) -> float:
    """Left-endpoint (Ito) integral sum_k f_k dB_k for a per-step integrand."""
    f = np.asarray(integrand, dtype=float)
    if f.shape != (bundle.grid.n_steps,):
        raise ValueError(
            f"integrand length {f.shape} does not match n_steps={bundle.grid.n_steps}"
        )
    return float(f @ bundle.brownian_increments)


def compensated_jump_sum(bundle: PathBundle, psi=None) -> float:
    """Compensated jump integral of psi(t, zeta) over the whole bundle.

    psi defaults to the identity in the mark, psi(t, z) = z.  Events are
    evaluated at the left endpoint of their step; the compensator uses the
    same left-endpoint rule.
    """
    if psi is None:
        psi = lambda t, z: z
    grid = bundle.grid
    total = 0.0
    for k, marks in enumerate(bundle.jump_events):
        t = grid.time(k)
        for z in marks:
            total += psi(t, z)
        for mark, lam in bundle.levy.atoms:
            total -= grid.dt * lam * psi(t, mark)
    return total
