"""Moment equations and generating-function dynamics on a truncated box.

Three flavours of first-order quantities are supported:

``total``
    ``M_n(t, x) = E eta_{x,t}^n``, the subpopulation size of one initial
    particle at ``x``; initial value 1 everywhere.
``local``
    ``M_n(t, x, y) = E eta_{x,t}(y)^n`` for a fixed target site ``y``;
    initial value ``delta_x(y)``.
``forward``
    ``M_{inf,1}(t, y) = E eta_t(y)`` under one initial particle per site,
    driven by the adjoint walk generator; first order only.

The backward equations for ``M_n`` are the linear cascade
``dM_n/dt = H M_n + delta_0 g_n(M_1, ..., M_{n-1})`` with
``H = A + beta Delta_0``. The ``r = 1`` term of the Faa di Bruno sum equals
``beta M_n`` and already lives inside ``H``, so :func:`g_n` starts at ``r = 2``.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .errors import ConfigError, IntegrationError
from .model import BrwModel, OffspringLaw
from .operators import LatticeBox, build_operator

FLAVORS = ("total", "local", "forward")
RTOL = 1e-10
ATOL = 1e-10
#: values of F may leave [0, 1] by at most this much before it is treated as a bug
RANGE_TOL = 1e-10


@dataclass(frozen=True)
class MomentField:
    """Moments of one order on a time grid; ``values[k, i]`` is at ``times[k]``, site ``i``."""

    order: int
    flavor: str
    times: np.ndarray
    values: np.ndarray
    box: LatticeBox
    target: tuple[int, ...] | None = None

    def at(self, site) -> np.ndarray:
        """Time series at ``site`` (the starting point x for backward flavours)."""
        return self.values[:, self.box.index(site)]


@dataclass(frozen=True)
class GeneratingFunctionField:
    """Laplace generating function ``F_1(z; t, .)``; ``z_infinite`` marks ``z = +inf``."""

    z: float
    z_infinite: bool
    flavor: str
    times: np.ndarray
    values: np.ndarray
    box: LatticeBox
    target: tuple[int, ...] | None = None

    def at(self, site) -> np.ndarray:
        return self.values[:, self.box.index(site)]


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=float).ravel()
    if times.size == 0 or times[0] != 0.0:
        raise ConfigError("time grid must start at t = 0")
    if np.any(np.diff(times) <= 0):
        raise ConfigError("time grid must be strictly increasing")
    return times


def _check_flavor(flavor: str, box: LatticeBox, target) -> tuple[int, ...] | None:
    if flavor not in FLAVORS:
        raise ConfigError(f"unknown flavor {flavor!r}; expected one of {FLAVORS}")
    if flavor != "local":
        return None
    target = (0,) * box.dimension if target is None else tuple(int(c) for c in target)
    box.index(target)
    return target


def _integrate(rhs, y0: np.ndarray, times: np.ndarray, rtol: float, atol: float) -> np.ndarray:
    """Adaptive Dormand-Prince 8(5,3) integration; returns states at ``times``."""
    y0 = np.asarray(y0, dtype=float)
    if times.size == 1:
        return y0[None, ...].copy()
    shape = y0.shape
    sol = solve_ivp(
        lambda t, y: rhs(t, y.reshape(shape)).ravel(),
        (times[0], times[-1]),
        y0.ravel(),
        method="DOP853",
        t_eval=times,
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise IntegrationError(f"ODE integration failed: {sol.message}")
    if not np.all(np.isfinite(sol.y)):
        raise IntegrationError("ODE solution overflowed")
    return sol.y.T.reshape((times.size,) + shape)


def _initial_moment(flavor: str, box: LatticeBox, target) -> np.ndarray:
    if flavor == "local":
        return box.indicator(target)
    return np.ones(box.size)


def evolve_first_moment(
    model: BrwModel,
    box: LatticeBox,
    flavor: str,
    times,
    target=None,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> MomentField:
    """Integrate ``dM/dt = H M`` with the flavour's initial condition."""
    if flavor == "forward":
        return evolve_forward_first_moment(model, box, times, rtol=rtol, atol=atol)
    times = _check_times(times)
    target = _check_flavor(flavor, box, target)
    H = build_operator(model, box, include_branching=True).matrix
    values = _integrate(lambda t, y: H @ y, _initial_moment(flavor, box, target), times, rtol, atol)
    return MomentField(1, flavor, times, values, box, target)


def evolve_forward_first_moment(
    model: BrwModel, box: LatticeBox, times, rtol: float = RTOL, atol: float = ATOL
) -> MomentField:
    """Integrate the forward equation ``dM/dt = A* M + beta Delta_0 M`` from ``M = 1``.

    ``A*`` is assembled from incoming rates ``a(y', y)``; it coincides with
    ``A`` only for a symmetric kernel.
    """
    times = _check_times(times)
    H_adj = build_operator(model, box, include_branching=True, adjoint=True).matrix
    values = _integrate(lambda t, y: H_adj @ y, np.ones(box.size), times, rtol, atol)
    return MomentField(1, "forward", times, values, box, None)


# --- combinatorics -------------------------------------------------------


def compositions(n: int, r: int):
    """All ordered tuples of ``r`` positive integers summing to ``n``."""
    if r == 0:
        if n == 0:
            yield ()
        return
    for cut in itertools.combinations(range(1, n), r - 1):
        bounds = (0,) + cut + (n,)
        yield tuple(b - a for a, b in zip(bounds, bounds[1:]))


def partition_multiplicities(n: int, r: int):
    """Tuples ``(i_1, ..., i_n)`` with ``sum i_j = r`` and ``sum j i_j = n``."""

    def rec(j, remaining_n, remaining_r):
        if j > n:
            if remaining_n == 0 and remaining_r == 0:
                yield ()
            return
        for i in range(min(remaining_r, remaining_n // j) + 1):
            for rest in rec(j + 1, remaining_n - j * i, remaining_r - i):
                yield (i,) + rest

    yield from rec(1, n, r)


def composition_sum(xs: Sequence, n: int, r: int):
    """``sum over compositions (i_1..i_r) of n of x_{i_1} ... x_{i_r}`` (``xs[0]`` is ``x_1``)."""
    return sum((math.prod(xs[i - 1] for i in comp) for comp in compositions(n, r)), 0)


def partition_sum(xs: Sequence, n: int, r: int):
    """Coefficient of ``t^n`` in ``(x_1 t + ... + x_n t^n)^r`` via the multinomial formula.

    Equals :func:`composition_sum`; the multinomial prefactor is
    ``r! / (i_1! ... i_n!)``.
    """
    total = 0
    for mult in partition_multiplicities(n, r):
        coef = math.factorial(r) // math.prod(math.factorial(i) for i in mult)
        total += coef * math.prod(x**i for x, i in zip(xs, mult))
    return total


@lru_cache(maxsize=None)
def _g_terms(n: int) -> tuple[tuple[int, int, tuple[int, ...]], ...]:
    """Grouped terms of ``g_n``: ``(r, weight, exponents)`` with ``weight = count * n!/prod(i!)``."""
    terms = []
    for r in range(2, n + 1):
        grouped = Counter()
        for comp in compositions(n, r):
            grouped[tuple(sorted(comp))] += math.factorial(n) // math.prod(math.factorial(i) for i in comp)
        for parts, weight in sorted(grouped.items()):
            exps = [0] * (n - 1)
            for i in parts:
                exps[i - 1] += 1
            terms.append((r, weight, tuple(exps)))
    return tuple(terms)


def g_n(law: OffspringLaw, lower: Sequence, n: int | None = None):
    """Source forcing of the order-``n`` moment equation.

    ``lower`` holds ``M_1, ..., M_{n-1}`` (scalars or equally shaped arrays);
    ``n`` defaults to ``len(lower) + 1``. Returns
    ``sum_{r=2}^n beta_r / r! * sum_{compositions} n!/(i_1!...i_r!) M_{i_1}...M_{i_r}``.
    """
    n = len(lower) + 1 if n is None else int(n)
    if n < 2:
        raise ValueError("g_n is defined for n >= 2")
    if len(lower) < n - 1:
        raise ValueError(f"g_{n} needs M_1..M_{n - 1}")
    betas = law.factorial_moments(n)
    lower = [np.asarray(m, dtype=float) for m in lower[: n - 1]]
    total = np.zeros(np.broadcast(*lower).shape) if lower else 0.0
    for r, weight, exps in _g_terms(n):
        coef = betas[r] / math.factorial(r) * weight
        if coef == 0.0:
            continue
        term = coef
        for m, e in zip(lower, exps):
            if e:
                term = term * m**e
        total = total + term
    return float(total) if np.ndim(total) == 0 else total


# --- higher moments ------------------------------------------------------


def evolve_higher_moments(
    model: BrwModel,
    box: LatticeBox,
    flavor: str,
    max_order: int,
    times,
    target=None,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> list[MomentField]:
    """Solve the moment cascade of orders ``1..max_order`` jointly on one grid."""
    if max_order < 1:
        raise ConfigError("max_order must be at least 1")
    if flavor == "forward":
        if max_order != 1:
            raise ConfigError("forward moments are available for order 1 only")
        return [evolve_forward_first_moment(model, box, times, rtol=rtol, atol=atol)]
    times = _check_times(times)
    target = _check_flavor(flavor, box, target)
    H = build_operator(model, box, include_branching=True).matrix
    law = model.law
    o = box.origin
    y0 = np.tile(_initial_moment(flavor, box, target), (max_order, 1))

    def rhs(t, y):
        dy = (H @ y.T).T
        at_source = y[:, o]
        for k in range(2, max_order + 1):
            dy[k - 1, o] += g_n(law, at_source[: k - 1], k)
        return dy

    values = _integrate(rhs, y0, times, rtol, atol)
    return [
        MomentField(k + 1, flavor, times, values[:, k, :], box, target) for k in range(max_order)
    ]


def _uniform_step(times: np.ndarray) -> float:
    if times.size < 3:
        raise ConfigError("Simpson quadrature needs at least 3 grid points")
    steps = np.diff(times)
    h = float(steps.mean())
    if np.max(np.abs(steps - h)) > 1e-9 * max(h, 1.0):
        raise ConfigError("Simpson quadrature needs a uniform time grid")
    return h


@lru_cache(maxsize=4096)
def _simpson_weights(k: int) -> np.ndarray:
    """Composite Simpson weights for ``k`` intervals of unit width.

    Odd ``k >= 3`` closes the last three intervals with Simpson's 3/8 rule,
    ``k = 1`` falls back to the trapezoid rule.
    """
    w = np.zeros(k + 1)
    if k == 0:
        return w
    if k == 1:
        w[:] = 0.5
        return w
    even = k if k % 2 == 0 else k - 3
    if even:
        w[0:even + 1:2] += 2.0 / 3.0
        w[1:even:2] += 4.0 / 3.0
        w[0] -= 1.0 / 3.0
        w[even] -= 1.0 / 3.0
    if k % 2:
        w[even:even + 4] += np.array([3.0, 9.0, 9.0, 3.0]) / 8.0
    return w


def semigroup_columns(model: BrwModel, box: LatticeBox, start: np.ndarray, times: np.ndarray) -> np.ndarray:
    """``exp(t H) start`` on a uniform grid via the truncated-Taylor action of the exponential."""
    H = build_operator(model, box, include_branching=True).matrix.tocsc()
    if times.size == 1:
        return start[None, :].copy()
    return spla.expm_multiply(H, start, start=times[0], stop=times[-1], num=times.size, endpoint=True)


def integral_moment_oracle(
    model: BrwModel,
    box: LatticeBox,
    flavor: str,
    order: int,
    times,
    target=None,
    first_moment: np.ndarray | None = None,
    source_column: np.ndarray | None = None,
) -> MomentField:
    """Moments from the variation-of-constants integral equations.

    ``M_n(t, .) = M_1(t, .) + int_0^t M_1(t-q, ., 0) g_n(M_1(q, 0), ..., M_{n-1}(q, 0)) dq``

    with the integral kept for every starting site (no ``delta_0(x)``
    prefactor). The equation restricted to the source is closed, so lower
    orders at the source are produced recursively by the same quadrature.
    ``first_moment`` (``M_1`` of the flavour) and ``source_column``
    (``M_1(t, x, 0)``) default to semigroup actions computed independently
    of the ODE solver.
    """
    if flavor == "forward":
        raise ConfigError("the integral equations are stated for backward flavours")
    times = _check_times(times)
    target = _check_flavor(flavor, box, target)
    h = _uniform_step(times)
    o = box.origin
    if first_moment is None:
        first_moment = semigroup_columns(model, box, _initial_moment(flavor, box, target), times)
    if source_column is None:
        source_column = semigroup_columns(model, box, box.indicator((0,) * box.dimension), times)
    first_moment = np.asarray(first_moment)
    source_column = np.asarray(source_column)
    if order == 1:
        return MomentField(1, flavor, times, first_moment.copy(), box, target)

    kernel_at_source = source_column[:, o]
    at_source = [first_moment[:, o]]
    K = times.size

    def duhamel(forcing: np.ndarray, kernel: np.ndarray) -> np.ndarray:
        # out[k] = h * sum_j w^(k)_j kernel[k - j] forcing[j]
        out = np.zeros((K,) + kernel.shape[1:])
        for k in range(1, K):
            w = _simpson_weights(k) * forcing[: k + 1]
            out[k] = h * np.tensordot(w, kernel[k::-1], axes=(0, 0))
        return out

    for m in range(2, order):
        forcing = g_n(model.law, at_source, m)
        at_source.append(first_moment[:, o] + duhamel(forcing, kernel_at_source))
    forcing = g_n(model.law, at_source, order)
    values = first_moment + duhamel(forcing, source_column)
    return MomentField(order, flavor, times, values, box, target)


# --- generating functions ------------------------------------------------


def _solve_deficit(model: BrwModel, box: LatticeBox, q0: np.ndarray, times: np.ndarray, rtol, atol):
    """Integrate ``Q = 1 - F``: ``dQ/dt = A Q - delta_0 f(1 - Q)``.

    Writing the equation for ``1 - F`` makes the Dirichlet truncation mean
    that particles leaving the box are killed (they contribute ``F = 1``).
    """
    A = build_operator(model, box).matrix
    o = box.origin
    coeffs = model.law.coefficients

    def rhs(t, q):
        dq = A @ q
        dq[o] -= np.polynomial.polynomial.polyval(1.0 - q[o], coeffs)
        return dq

    return _integrate(rhs, q0, times, rtol, atol)


def _initial_deficit(box: LatticeBox, z: float, flavor: str, target) -> np.ndarray:
    jump = 1.0 if math.isinf(z) else -math.expm1(-z)
    if flavor == "local":
        return jump * box.indicator(target)
    return np.full(box.size, jump)


def solve_generating_function(
    model: BrwModel,
    box: LatticeBox,
    z: float,
    flavor: str,
    times,
    target=None,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> GeneratingFunctionField:
    """Solve ``dF/dt = A F + Delta_0 f(F)`` for ``F_1(z; t, .)``.

    ``z = math.inf`` selects the extinction-type initial data (``0`` for the
    total flavour, ``1 - delta_x(y)`` for the local one).
    """
    if flavor == "forward":
        raise ConfigError("generating functions are available for backward flavours only")
    z = float(z)
    if not z >= 0:
        raise ValueError("z must be nonnegative")
    times = _check_times(times)
    target = _check_flavor(flavor, box, target)
    q = _solve_deficit(model, box, _initial_deficit(box, z, flavor, target), times, rtol, atol)
    values = 1.0 - q
    if values.min() < -RANGE_TOL or values.max() > 1.0 + RANGE_TOL:
        raise IntegrationError(
            f"generating function left [0, 1]: range [{values.min()}, {values.max()}]"
        )
    return GeneratingFunctionField(z, math.isinf(z), flavor, times, values, box, target)


def first_moment_from_generating_function(
    model: BrwModel,
    box: LatticeBox,
    flavor: str,
    times,
    h: float = 1e-4,
    target=None,
    rtol: float = 1e-11,
    atol: float = 1e-14,
) -> MomentField:
    """``-dF/dz`` at ``z = 0`` by a central difference of step ``h``.

    The ``z = -h`` leg uses the same equation with ``E exp(h eta)`` as
    initial data, which is finite on a truncated box over finite times.
    """
    times = _check_times(times)
    target = _check_flavor(flavor, box, target)
    q_plus = _solve_deficit(model, box, _initial_deficit(box, h, flavor, target), times, rtol, atol)
    q_minus = _solve_deficit(model, box, _initial_deficit(box, -h, flavor, target), times, rtol, atol)
    return MomentField(1, flavor, times, (q_plus - q_minus) / (2 * h), box, target)


def time_grid(t_max: float, steps: int) -> np.ndarray:
    """Uniform grid ``0 = t_0 < ... < t_steps = t_max`` (a single point when ``t_max = 0``)."""
    if t_max < 0:
        raise ConfigError("t_max must be nonnegative")
    if t_max == 0:
        return np.zeros(1)
    if steps < 1:
        raise ConfigError("steps must be positive")
    return np.linspace(0.0, float(t_max), int(steps) + 1)
