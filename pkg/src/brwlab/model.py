"""Walk kernels, offspring laws and the single-source branching random walk model.

All objects are immutable. Constructors only check structure (types, shapes,
nonzero offsets); admissibility of the rates is reported by
:func:`validate_model` rather than enforced, so that deliberately broken
models can be built for negative controls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError

Offset = tuple[int, ...]

#: absolute tolerance on rate closure identities
CLOSURE_ATOL = 1e-12


def _as_offset(z, dimension: int) -> Offset:
    z = tuple(int(c) for c in np.atleast_1d(z))
    if len(z) != dimension:
        raise ConfigError(f"offset {z} does not have dimension {dimension}")
    return z


@dataclass(frozen=True)
class WalkKernel:
    """Jump intensities ``a(z)`` of a spatially homogeneous random walk on Z^d.

    ``intensities`` maps each nonzero offset to its rate; the diagonal
    ``a(0)`` is derived as minus the total rate.
    """

    dimension: int
    intensities: Mapping[Offset, float]

    def __post_init__(self):
        if int(self.dimension) < 1:
            raise ConfigError("dimension must be a positive integer")
        clean = {}
        for z, rate in self.intensities.items():
            z = _as_offset(z, self.dimension)
            if not any(z):
                raise ConfigError("the zero offset is derived, not user supplied")
            if not math.isfinite(rate):
                raise ConfigError(f"rate for offset {z} is not finite")
            if rate != 0.0:
                clean[z] = clean.get(z, 0.0) + float(rate)
        if not clean:
            raise ConfigError("kernel has no jumps")
        ordered = dict(sorted(clean.items()))
        object.__setattr__(self, "dimension", int(self.dimension))
        object.__setattr__(self, "intensities", MappingProxyType(ordered))

    def __reduce__(self):
        # mapping proxies do not pickle; rebuild from a plain dict in worker processes
        return (WalkKernel, (self.dimension, dict(self.intensities)))

    @property
    def offsets(self) -> list[Offset]:
        return list(self.intensities)

    @property
    def rates(self) -> np.ndarray:
        return np.array(list(self.intensities.values()))

    @property
    def total_rate(self) -> float:
        """``|a(0)|``, the rate at which a particle leaves its site."""
        return math.fsum(self.intensities.values())

    @property
    def diagonal(self) -> float:
        return -self.total_rate

    @property
    def radius(self) -> int:
        """Largest sup-norm among support offsets."""
        return max(max(abs(c) for c in z) for z in self.intensities)

    def rate(self, z) -> float:
        z = _as_offset(z, self.dimension)
        if not any(z):
            return self.diagonal
        return self.intensities.get(z, 0.0)

    def second_moment(self) -> float:
        return float(sum(r * sum(c * c for c in z) for z, r in self.intensities.items()))


@dataclass(frozen=True)
class OffspringLaw:
    """Branching intensities ``b_0, b_1, ..., b_N`` at the source.

    Use :meth:`from_rates` to build a law from ``b_n`` with ``n != 1``; it
    derives ``b_1 = -sum_{n != 1} b_n``. The raw constructor takes the full
    coefficient vector and is meant for tests and deliberate violations.
    """

    coefficients: tuple[float, ...]

    def __post_init__(self):
        coeffs = tuple(float(b) for b in self.coefficients)
        if len(coeffs) < 2:
            coeffs = coeffs + (0.0,) * (2 - len(coeffs))
        if not all(math.isfinite(b) for b in coeffs):
            raise ConfigError("offspring rates must be finite")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def from_rates(cls, rates: Mapping[int, float]) -> "OffspringLaw":
        if 1 in rates:
            raise ConfigError("b1 is derived from the other rates and cannot be supplied")
        if any(int(n) < 0 for n in rates):
            raise ConfigError("offspring numbers must be nonnegative")
        top = max([int(n) for n in rates] + [1])
        b = [0.0] * (top + 1)
        for n, rate in rates.items():
            b[int(n)] = float(rate)
        b[1] = -math.fsum(b[n] for n in range(top + 1) if n != 1)
        return cls(tuple(b))

    @classmethod
    def binary(cls, b0: float, b2: float) -> "OffspringLaw":
        return cls.from_rates({0: b0, 2: b2})

    @property
    def b(self) -> np.ndarray:
        return np.array(self.coefficients)

    @property
    def max_offspring(self) -> int:
        nz = [n for n, b in enumerate(self.coefficients) if b != 0.0]
        return max(nz) if nz else 0

    @property
    def b1(self) -> float:
        return self.coefficients[1]

    def rates(self) -> dict[int, float]:
        """The ``b_n`` with ``n != 1`` (nonzero entries only)."""
        return {n: b for n, b in enumerate(self.coefficients) if n != 1 and b != 0.0}

    def factorial_moment(self, r: int) -> float:
        """``beta_r = f^{(r)}(1) = sum_{n >= r} n!/(n-r)! b_n``."""
        if r < 0:
            raise ValueError("r must be nonnegative")
        return math.fsum(
            math.perm(n, r) * b for n, b in enumerate(self.coefficients) if n >= r
        )

    @property
    def beta(self) -> float:
        return self.factorial_moment(1)

    def factorial_moments(self, upto: int) -> list[float]:
        """``[beta_0, beta_1, ..., beta_upto]``."""
        return [self.factorial_moment(r) for r in range(upto + 1)]

    def __call__(self, u):
        return eval_generating_function(self, u)


@dataclass(frozen=True)
class BrwModel:
    """Branching random walk with a single branching source at the origin."""

    kernel: WalkKernel
    law: OffspringLaw
    source: Offset = field(default=None)

    def __post_init__(self):
        origin = (0,) * self.kernel.dimension
        if self.source is not None and tuple(self.source) != origin:
            raise ConfigError("the branching source is fixed at the origin")
        object.__setattr__(self, "source", origin)

    @property
    def dimension(self) -> int:
        return self.kernel.dimension

    @property
    def beta(self) -> float:
        return self.law.beta

    @property
    def source_holding_rate(self) -> float:
        """``-(a(0) + b_1)``: exit rate of a particle sitting at the source."""
        return -(self.kernel.diagonal + self.law.b1)

    def with_law(self, law: OffspringLaw) -> "BrwModel":
        return BrwModel(self.kernel, law)


@dataclass(frozen=True)
class Violation:
    invariant: str
    detail: str

    def __str__(self):
        return f"{self.invariant}: {self.detail}"


def build_simple_kernel(d: int, total_rate: float) -> WalkKernel:
    """Nearest-neighbour kernel with ``a(±e_i) = total_rate / (2d)``."""
    if int(d) != d or d < 1:
        raise ConfigError(f"dimension must be a positive integer, got {d}")
    if not total_rate > 0:
        raise ConfigError(f"total rate must be positive, got {total_rate}")
    d = int(d)
    rate = total_rate / (2 * d)
    intensities = {}
    for i in range(d):
        for sign in (1, -1):
            z = [0] * d
            z[i] = sign
            intensities[tuple(z)] = rate
    return WalkKernel(d, intensities)


def lattice_rank_and_index(vectors: Sequence[Sequence[int]], dimension: int) -> tuple[int, int]:
    """Rank and index of the integer lattice spanned by ``vectors`` in Z^d.

    Integer row reduction to echelon form; the index is the absolute product of
    the pivots and equals 1 iff the span is all of Z^d (when full rank).
    """
    rows = [list(map(int, v)) for v in vectors if any(v)]
    rank = 0
    pivots = []
    for col in range(dimension):
        # Euclid on column ``col`` among the rows not yet used as pivots
        while True:
            live = [i for i in range(rank, len(rows)) if rows[i][col] != 0]
            if len(live) <= 1:
                break
            live.sort(key=lambda i: abs(rows[i][col]))
            p = live[0]
            for i in live[1:]:
                q = rows[i][col] // rows[p][col]
                rows[i] = [a - q * b for a, b in zip(rows[i], rows[p])]
        live = [i for i in range(rank, len(rows)) if rows[i][col] != 0]
        if live:
            p = live[0]
            rows[rank], rows[p] = rows[p], rows[rank]
            pivots.append(abs(rows[rank][col]))
            rank += 1
    index = math.prod(pivots) if rank == dimension else 0
    return rank, index


def validate_model(model: BrwModel) -> list[Violation]:
    """List every violated admissibility condition; empty iff admissible."""
    report = []
    kernel, law = model.kernel, model.law

    for z, rate in kernel.intensities.items():
        if rate < 0:
            report.append(Violation("kernel-sign", f"a{z} = {rate} < 0"))
    seen = set()
    for z, rate in kernel.intensities.items():
        mz = tuple(-c for c in z)
        if z in seen:
            continue
        seen.update({z, mz})
        other = kernel.intensities.get(mz, 0.0)
        if abs(rate - other) > CLOSURE_ATOL:
            report.append(Violation("symmetry", f"a{z} = {rate} but a{mz} = {other}"))
    support = [z for z, r in kernel.intensities.items() if r > 0]
    rank, index = lattice_rank_and_index(support, kernel.dimension)
    if index != 1:
        report.append(
            Violation(
                "irreducibility",
                f"support offsets span a sublattice of rank {rank}"
                + (f" and index {index}" if rank == kernel.dimension else ""),
            )
        )

    b = law.coefficients
    for n, rate in enumerate(b):
        if n != 1 and rate < 0:
            report.append(Violation("law-sign", f"b{n} = {rate} < 0"))
    if any(rate != 0 for n, rate in enumerate(b) if n != 1) and not b[1] < 0:
        report.append(Violation("law-sign", f"b1 = {b[1]} must be negative"))
    total = math.fsum(b)
    if abs(total) > CLOSURE_ATOL:
        report.append(Violation("conservation", f"sum of b_n = {total} != 0"))
    return report


def is_admissible(model: BrwModel) -> bool:
    return not validate_model(model)


def require_admissible(model: BrwModel) -> None:
    report = validate_model(model)
    if report:
        raise ConfigError("inadmissible model: " + "; ".join(map(str, report)))


def eval_generating_function(law: OffspringLaw, u):
    """``f(u) = sum_n b_n u^n`` for ``u`` in [0, 1] (scalar or array)."""
    arr = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("u must lie in [0, 1]")
    value = np.polynomial.polynomial.polyval(arr, law.coefficients)
    return float(value) if np.ndim(u) == 0 else value

