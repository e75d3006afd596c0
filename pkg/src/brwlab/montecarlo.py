"""Exact event-driven simulation of the branching random walk on Z^d.

Events are drawn with the Gillespie direct method: the waiting time is
exponential with the aggregate rate, and the firing particle is chosen in
proportion to its own rate (``|a(0)|`` off the source, ``|a(0)| + |b_1|`` at
the source). Every replica owns a PCG64 stream spawned from
``(seed, replica index)``, so results do not depend on how replicas are
distributed over worker processes.
"""
from __future__ import annotations

import math
import os
from bisect import bisect_right
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, EmptySystemError, ParticleCapExceeded
from .model import BrwModel

DEFAULT_CAP = 10**6
#: fraction of capped replicas above which a batch is aborted
CAP_ABORT_FRACTION = 0.01

_RADIX = 1 << 21
_BIAS = 1 << 20


class _Codec:
    """Packs lattice points into Python ints so that jumps are integer additions."""

    def __init__(self, dimension: int):
        self.dimension = dimension
        self.weights = [_RADIX**i for i in range(dimension)]
        self.origin = self.encode((0,) * dimension)

    def encode(self, point) -> int:
        return sum((int(c) + _BIAS) * w for c, w in zip(point, self.weights))

    def shift(self, offset) -> int:
        return sum(int(c) * w for c, w in zip(offset, self.weights))

    def decode(self, code: int) -> tuple[int, ...]:
        out = []
        for _ in range(self.dimension):
            code, r = divmod(code, _RADIX)
            out.append(r - _BIAS)
        return tuple(out)


@dataclass(frozen=True)
class InitialCondition:
    """One particle at ``start``, or one particle per site of ``[-window, window]^d``."""

    kind: str
    dimension: int
    start: tuple[int, ...] | None = None
    window: int | None = None

    @classmethod
    def single(cls, start) -> "InitialCondition":
        start = tuple(int(c) for c in start)
        return cls("single", len(start), start=start)

    @classmethod
    def windowed(cls, window: int, dimension: int) -> "InitialCondition":
        if window < 0:
            raise ConfigError("window half-width must be nonnegative")
        return cls("window", int(dimension), window=int(window))

    def positions(self) -> list[tuple[int, ...]]:
        if self.kind == "single":
            return [self.start]
        W = self.window
        grid = np.indices((2 * W + 1,) * self.dimension).reshape(self.dimension, -1).T - W
        return [tuple(int(c) for c in row) for row in grid]

    @property
    def label(self) -> str:
        if self.kind == "single":
            return "single:" + ",".join(map(str, self.start))
        return f"window:{self.window}"


class EventRecord(NamedTuple):
    time: float
    kind: str  # "jump" or "branch"
    particle: int
    before: tuple[int, ...]
    after: tuple[int, ...] | None
    offspring: int | None


class ParticleSystem:
    """Particle positions, ancestor labels and the event clock of one replica.

    Ancestor labels index :attr:`ancestor_sites`, the initial positions.
    """

    def __init__(
        self,
        model: BrwModel,
        positions: Sequence,
        rng: np.random.Generator | None = None,
        cap: int = DEFAULT_CAP,
        time: float = 0.0,
        buffer: int = 256,
    ):
        self.model = model
        self.cap = int(cap)
        self.time = float(time)
        self.events = 0
        self.rng = rng if rng is not None else np.random.default_rng()
        self._buffer = int(buffer)
        self._uniforms: list[float] = []
        self._u = 0

        codec = self._codec = _Codec(model.dimension)
        self._origin = codec.origin
        self.ancestor_sites = [tuple(int(c) for c in p) for p in positions]
        if len(self.ancestor_sites) > self.cap:
            raise ParticleCapExceeded(f"initial condition exceeds the cap of {self.cap} particles")
        self._pos = [codec.encode(p) for p in self.ancestor_sites]
        self._anc = list(range(len(self._pos)))
        self._src: list[int] = []
        self._slot = [-1] * len(self._pos)
        for i, code in enumerate(self._pos):
            if code == self._origin:
                self._slot[i] = len(self._src)
                self._src.append(i)

        kernel = model.kernel
        self._walk_rate = kernel.total_rate
        self._shifts = [codec.shift(z) for z in kernel.offsets]
        self._walk_cum = list(np.cumsum(kernel.rates))
        law = model.law
        branch = [(n, b) for n, b in enumerate(law.coefficients) if n != 1 and b > 0]
        self._branch_n = [n for n, _ in branch]
        self._branch_cum = list(np.cumsum([b for _, b in branch]))
        self._branch_rate = self._branch_cum[-1] if branch else 0.0

    @classmethod
    def from_initial_condition(cls, model, ic: InitialCondition, rng=None, cap=DEFAULT_CAP):
        if ic.dimension != model.dimension:
            raise ConfigError("initial condition and model dimensions differ")
        return cls(model, ic.positions(), rng=rng, cap=cap)

    # -- queries ---------------------------------------------------------

    @property
    def size(self) -> int:
        return len(self._pos)

    @property
    def at_source(self) -> int:
        return len(self._src)

    def positions(self) -> list[tuple[int, ...]]:
        return [self._codec.decode(c) for c in self._pos]

    def ancestors(self) -> list[int]:
        return list(self._anc)

    def particle_rate(self, i: int) -> float:
        return self._walk_rate + (self._branch_rate if self._slot[i] >= 0 else 0.0)

    def total_rate(self) -> float:
        return len(self._pos) * self._walk_rate + len(self._src) * self._branch_rate

    def count_at(self, site) -> int:
        """``eta_t(y)``."""
        code = self._codec.encode(site)
        return sum(1 for c in self._pos if c == code)

    def counts_at(self, sites: Sequence) -> np.ndarray:
        tally = Counter(self._pos)
        return np.array([tally.get(self._codec.encode(s), 0) for s in sites], dtype=np.int64)

    def subpopulation_sizes(self) -> np.ndarray:
        """``eta_{x,t}`` for every initial particle ``x``."""
        return np.bincount(np.asarray(self._anc, dtype=np.int64), minlength=len(self.ancestor_sites))

    def ancestor_site_counts(self, sites: Sequence) -> np.ndarray:
        """``eta_{x,t}(y)``: rows are ancestors, columns are ``sites``."""
        out = np.zeros((len(self.ancestor_sites), len(sites)), dtype=np.int64)
        col = {self._codec.encode(s): j for j, s in enumerate(sites)}
        for a, c in zip(self._anc, self._pos):
            j = col.get(c)
            if j is not None:
                out[a, j] += 1
        return out

    # -- dynamics --------------------------------------------------------

    def _uniform(self) -> float:
        if self._u >= len(self._uniforms):
            self._uniforms = self.rng.random(self._buffer).tolist()
            self._u = 0
        u = self._uniforms[self._u]
        self._u += 1
        return u

    def waiting_time(self) -> float:
        rate = self.total_rate()
        if rate <= 0.0:
            raise EmptySystemError("no particle can move")
        return -math.log1p(-self._uniform()) / rate

    def _add_to_source(self, i: int) -> None:
        self._slot[i] = len(self._src)
        self._src.append(i)

    def _remove_from_source(self, i: int) -> None:
        s = self._slot[i]
        last = self._src.pop()
        if last != i:
            self._src[s] = last
            self._slot[last] = s
        self._slot[i] = -1

    def _remove(self, i: int) -> None:
        if self._slot[i] >= 0:
            self._remove_from_source(i)
        last = len(self._pos) - 1
        if i != last:
            self._pos[i] = self._pos[last]
            self._anc[i] = self._anc[last]
            self._slot[i] = self._slot[last]
            if self._slot[i] >= 0:
                self._src[self._slot[i]] = i
        self._pos.pop()
        self._anc.pop()
        self._slot.pop()

    def fire(self):
        """Apply one event chosen by the direct method (the clock is not advanced)."""
        n_walk = len(self._pos) * self._walk_rate
        u = self._uniform() * (n_walk + len(self._src) * self._branch_rate)
        self.events += 1
        if u < n_walk:
            i = min(int(u / self._walk_rate), len(self._pos) - 1)
            k = min(bisect_right(self._walk_cum, self._uniform() * self._walk_rate), len(self._shifts) - 1)
            before = self._pos[i]
            after = before + self._shifts[k]
            self._pos[i] = after
            if before == self._origin:
                self._remove_from_source(i)
            elif after == self._origin:
                self._add_to_source(i)
            return "jump", i, before, after, None
        j = min(int((u - n_walk) / self._branch_rate), len(self._src) - 1)
        i = self._src[j]
        k = min(bisect_right(self._branch_cum, self._uniform() * self._branch_rate), len(self._branch_n) - 1)
        n = self._branch_n[k]
        if n == 0:
            self._remove(i)
        else:
            if len(self._pos) + n - 1 > self.cap:
                raise ParticleCapExceeded(f"particle cap {self.cap} exceeded at t={self.time}")
            anc = self._anc[i]
            for _ in range(n - 1):
                self._pos.append(self._origin)
                self._anc.append(anc)
                self._slot.append(-1)
                self._add_to_source(len(self._pos) - 1)
        return "branch", i, self._origin, None, n

    def step(self) -> EventRecord:
        """Advance the clock by one exponential waiting time and fire one event."""
        if not self._pos:
            raise EmptySystemError("the particle system is empty")
        self.time += self.waiting_time()
        kind, i, before, after, n = self.fire()
        decode = self._codec.decode
        return EventRecord(
            self.time, kind, i, decode(before), None if after is None else decode(after), n
        )


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(replica),))))


@dataclass(frozen=True)
class TrajectoryStats:
    """Fixed-time observations of a batch of replicas.

    ``population[r, k]`` is the total particle count of replica ``r`` at
    ``times[k]``, ``site_counts[r, k, s]`` the count at ``sites[s]``.
    ``subpopulations[r, k, a]`` is the size of the progeny of initial particle
    ``a`` and ``ancestor_site_counts[r, k, a, s]`` its count at ``sites[s]``
    (both only when ancestors are tracked). Capped replicas keep the counts
    observed before they hit the cap and are flagged in ``capped``.
    """

    ic: InitialCondition
    times: np.ndarray
    sites: np.ndarray
    population: np.ndarray
    site_counts: np.ndarray
    subpopulations: np.ndarray | None
    ancestor_site_counts: np.ndarray | None
    capped: np.ndarray
    events: np.ndarray
    seed: int

    @property
    def replicas(self) -> int:
        return self.population.shape[0]


def _simulate_chunk(model, ic, times, sites, cap, seed, start, stop, track):
    K, S = len(times), len(sites)
    ancestors = ic.positions()
    A = len(ancestors)
    R = stop - start
    population = np.zeros((R, K), dtype=np.int64)
    site_counts = np.zeros((R, K, S), dtype=np.int64)
    subpops = np.zeros((R, K, A), dtype=np.int64) if track else None
    anc_sites = np.zeros((R, K, A, S), dtype=np.int64) if track else None
    capped = np.zeros(R, dtype=bool)
    events = np.zeros(R, dtype=np.int64)
    horizon = times[-1]
    for r in range(R):
        system = ParticleSystem(model, ancestors, rng=replica_rng(seed, start + r), cap=cap)
        k = 0
        try:
            while k < K:
                if system.size == 0:
                    # extinct: all remaining observations are zero
                    break
                t_next = system.time + system.waiting_time()
                while k < K and times[k] < t_next:
                    population[r, k] = system.size
                    site_counts[r, k] = system.counts_at(sites)
                    if track:
                        subpops[r, k] = system.subpopulation_sizes()
                        anc_sites[r, k] = system.ancestor_site_counts(sites)
                    k += 1
                if t_next > horizon:
                    break
                system.time = t_next
                system.fire()
        except ParticleCapExceeded:
            capped[r] = True
        events[r] = system.events
    return population, site_counts, subpops, anc_sites, capped, events


def run(
    model: BrwModel,
    ic: InitialCondition,
    horizon: float,
    replicas: int,
    seed: int,
    checkpoints: Sequence[float] | None = None,
    sites: Sequence | None = None,
    cap: int = DEFAULT_CAP,
    workers: int = 1,
    track_ancestors: bool | None = None,
) -> TrajectoryStats:
    """Simulate ``replicas`` independent copies up to ``horizon``.

    ``checkpoints`` default to ``[horizon]`` and ``sites`` to the origin.
    Raises :class:`ParticleCapExceeded` when more than 1% of the replicas hit
    the cap. ``track_ancestors`` defaults to on for at most 256 initial
    particles.
    """
    if not horizon >= 0:
        raise ConfigError("horizon must be nonnegative")
    if replicas < 1:
        raise ConfigError("need at least one replica")
    if ic.dimension != model.dimension:
        raise ConfigError("initial condition and model dimensions differ")
    times = np.asarray([horizon] if checkpoints is None else checkpoints, dtype=float)
    if times.size == 0 or np.any(np.diff(times) <= 0) or times[0] < 0 or times[-1] > horizon:
        raise ConfigError("checkpoints must be increasing and lie in [0, horizon]")
    sites = [(0,) * model.dimension] if sites is None else [tuple(int(c) for c in s) for s in sites]
    n_anc = len(ic.positions())
    track = n_anc <= 256 if track_ancestors is None else bool(track_ancestors)

    workers = max(1, int(workers))
    if workers == 1 or replicas < 2 * workers:
        parts = [_simulate_chunk(model, ic, times, sites, cap, seed, 0, replicas, track)]
    else:
        n_chunks = min(replicas, 4 * workers)
        bounds = np.linspace(0, replicas, n_chunks + 1).astype(int)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_simulate_chunk, model, ic, times, sites, cap, seed, a, b, track)
                for a, b in zip(bounds, bounds[1:])
                if b > a
            ]
            parts = [f.result() for f in futures]

    def cat(i):
        return None if parts[0][i] is None else np.concatenate([p[i] for p in parts])

    stats = TrajectoryStats(
        ic, times, np.array(sites, dtype=np.int64).reshape(len(sites), model.dimension),
        cat(0), cat(1), cat(2), cat(3), cat(4), cat(5), int(seed),
    )
    n_capped = int(stats.capped.sum())
    if n_capped > CAP_ABORT_FRACTION * replicas:
        raise ParticleCapExceeded(
            f"{n_capped} of {replicas} replicas exceeded the cap of {cap} particles",
            capped=n_capped,
            replicas=replicas,
        )
    return stats


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def jackknife_mean(samples: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and its delete-one jackknife standard error along ``axis``.

    A single sample has an undefined error, reported as NaN.
    """
    x = np.moveaxis(np.asarray(samples, dtype=float), axis, 0)
    R = x.shape[0]
    if R == 0:
        raise ConfigError("no samples to average")
    if R == 1:
        return x[0].copy(), np.full(x.shape[1:], np.nan)
    loo = (x.sum(axis=0) - x) / (R - 1)
    dev = loo - loo.mean(axis=0)
    se = np.sqrt((R - 1) / R * np.sum(dev * dev, axis=0))
    return x.mean(axis=0), se


@dataclass(frozen=True)
class MomentEstimates:
    """Empirical moments; leading axis indexes ``orders``."""

    orders: tuple[int, ...]
    times: np.ndarray
    sites: np.ndarray
    population: np.ndarray
    population_se: np.ndarray
    site: np.ndarray
    site_se: np.ndarray
    subpopulation: np.ndarray | None
    subpopulation_se: np.ndarray | None
    replicas: int

    def order_index(self, n: int) -> int:
        return self.orders.index(n)


def estimate_moments(stats: TrajectoryStats, orders: Sequence[int] = (1, 2, 3, 4)) -> MomentEstimates:
    """Sample means of ``count**n`` with jackknife standard errors, capped replicas excluded."""
    orders = tuple(int(n) for n in orders)
    if any(n < 1 or n > 4 for n in orders):
        raise ConfigError("moment orders must lie in 1..4")
    keep = ~stats.capped
    pop = stats.population[keep].astype(float)
    site = stats.site_counts[keep].astype(float)
    sub = None if stats.subpopulations is None else stats.subpopulations[keep].astype(float)
    results = {"pop": [], "site": [], "sub": []}
    for n in orders:
        results["pop"].append(jackknife_mean(pop**n))
        results["site"].append(jackknife_mean(site**n))
        if sub is not None:
            results["sub"].append(jackknife_mean(sub**n))

    def stack(key, i):
        return np.stack([pair[i] for pair in results[key]]) if results[key] else None

    return MomentEstimates(
        orders, stats.times, stats.sites,
        stack("pop", 0), stack("pop", 1), stack("site", 0), stack("site", 1),
        stack("sub", 0), stack("sub", 1), int(keep.sum()),
    )
