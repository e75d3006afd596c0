"""Finite-box truncations of the walk generator and of ``H = A + beta * Delta_0``.

Truncation is Dirichlet: couplings to sites outside the box are dropped while
the diagonal keeps the full ``a(0)``, so a particle leaving the box is killed.
The pure-walk matrix is then symmetric negative definite, and the principal
eigenvalue of ``H`` is nondecreasing in both ``beta`` and the box size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    BracketError,
    ConfigError,
    EigenConvergenceError,
    SingularSolveError,
)
from .model import BrwModel, WalkKernel, require_admissible

#: eigenvalues above this threshold are declared positive
EPS_POS = 1e-9
#: tolerance of the bisection on beta
BETA_TOL = 1e-6
DEFAULT_SCHEDULE = (10, 20, 40)

_DENSE_LIMIT = 2000


@dataclass(frozen=True)
class LatticeBox:
    """The cube ``{-L..L}^d`` with a row-major site enumeration."""

    dimension: int
    half_width: int

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError("box dimension must be positive")
        if self.half_width < 1:
            raise ConfigError("box half-width must be a positive integer")

    @property
    def side(self) -> int:
        return 2 * self.half_width + 1

    @property
    def size(self) -> int:
        return self.side**self.dimension

    @cached_property
    def sites(self) -> np.ndarray:
        grid = np.indices((self.side,) * self.dimension).reshape(self.dimension, -1)
        return grid.T - self.half_width

    @property
    def origin(self) -> int:
        return (self.size - 1) // 2

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all(np.abs(pts) <= self.half_width, axis=-1)

    def index(self, point) -> int:
        pt = tuple(int(c) for c in np.atleast_1d(point))
        if len(pt) != self.dimension or not self.contains(pt)[0]:
            raise IndexError(f"{pt} is not in the box of half-width {self.half_width}")
        return int(self.indices(np.array([pt]))[0])

    def indices(self, points) -> np.ndarray:
        pts = np.atleast_2d(points) + self.half_width
        weights = self.side ** np.arange(self.dimension - 1, -1, -1)
        return pts @ weights

    def indicator(self, point) -> np.ndarray:
        e = np.zeros(self.size)
        e[self.index(point)] = 1.0
        return e


@dataclass(frozen=True)
class TruncatedOperator:
    box: LatticeBox
    matrix: sp.csr_matrix
    beta: float | None = None
    adjoint: bool = False

    @property
    def size(self) -> int:
        return self.box.size

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def is_symmetric(self, atol: float = 1e-14) -> bool:
        diff = self.matrix - self.matrix.T
        return diff.nnz == 0 or float(abs(diff).max()) <= atol

    def with_branching(self, beta: float) -> "TruncatedOperator":
        """``A + beta * Delta_0`` built from a pure-walk operator."""
        if self.beta is not None:
            raise ValueError("operator already carries a branching term")
        o = self.box.origin
        bump = sp.csr_matrix(([float(beta)], ([o], [o])), shape=self.matrix.shape)
        return TruncatedOperator(self.box, (self.matrix + bump).tocsr(), float(beta), self.adjoint)

    def without_branching(self) -> "TruncatedOperator":
        if self.beta is None:
            return self
        o = self.box.origin
        bump = sp.csr_matrix(([-self.beta], ([o], [o])), shape=self.matrix.shape)
        return TruncatedOperator(self.box, (self.matrix + bump).tocsr(), None, self.adjoint)


def walk_matrix(kernel: WalkKernel, box: LatticeBox, adjoint: bool = False) -> sp.csr_matrix:
    """Dirichlet truncation of the walk generator.

    Entry ``(i, j)`` is ``a(x_j - x_i)``, the rate of a jump from ``x_i`` to
    ``x_j``; with ``adjoint`` it is ``a(x_i - x_j)``.
    """
    if kernel.dimension != box.dimension:
        raise ConfigError("kernel and box dimensions differ")
    if box.half_width < kernel.radius:
        raise ConfigError(
            f"box half-width {box.half_width} is smaller than the kernel radius {kernel.radius}"
        )
    sites = box.sites
    n = box.size
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.full(n, kernel.diagonal)]
    for z, rate in kernel.intensities.items():
        target = sites + np.asarray(z)
        inside = box.contains(target)
        src = np.flatnonzero(inside)
        dst = box.indices(target[inside])
        if adjoint:
            src, dst = dst, src
        rows.append(src)
        cols.append(dst)
        vals.append(np.full(src.size, rate))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return mat.tocsr()


def build_operator(
    model: BrwModel,
    box: LatticeBox,
    include_branching: bool = False,
    adjoint: bool = False,
) -> TruncatedOperator:
    op = TruncatedOperator(box, walk_matrix(model.kernel, box, adjoint=adjoint), None, adjoint)
    if include_branching:
        op = op.with_branching(model.beta)
    return op


def transition_probabilities(op: TruncatedOperator, t: float) -> np.ndarray:
    """Dense ``p(t, x, y) = exp(t A)`` on the box (rows: x, columns: y)."""
    if op.beta is not None:
        raise ValueError("transition probabilities need the pure-walk operator")
    if not t >= 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return np.eye(op.size)
    return scipy.linalg.expm(t * op.dense())


def principal_eigenpair(
    op: TruncatedOperator, rtol: float = 1e-10, maxiter: int | None = None
) -> tuple[float, np.ndarray]:
    """Largest eigenvalue of a symmetric truncated operator and its eigenvector.

    The eigenvector is normalised and oriented to be positive at the source.
    Small boxes use a dense solver, large ones implicitly restarted Lanczos
    started from the source indicator.
    """
    n = op.size
    if n <= _DENSE_LIMIT:
        w, v = scipy.linalg.eigh(op.dense(), subset_by_index=[n - 1, n - 1])
        lam, vec = float(w[0]), v[:, 0]
    else:
        maxiter = maxiter or 50 * n
        v0 = np.full(n, 1e-3)
        v0[op.box.origin] = 1.0
        try:
            w, v = spla.eigsh(op.matrix, k=1, which="LA", tol=rtol * 1e-2, v0=v0, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise EigenConvergenceError("Lanczos iteration for lambda0 did not converge", maxiter) from exc
        lam, vec = float(w[0]), v[:, 0]
    if vec[op.box.origin] < 0:
        vec = -vec
    return lam, vec


def principal_eigenvalue(op: TruncatedOperator, rtol: float = 1e-10, maxiter: int | None = None) -> float:
    return principal_eigenpair(op, rtol=rtol, maxiter=maxiter)[0]


def green_function_at_origin(op: TruncatedOperator, lam: float = 0.0) -> float:
    """``G_lam(0, 0)``: origin entry of ``(lam I - A)^{-1}`` applied to the origin indicator."""
    if op.beta is not None:
        raise ValueError("the Green's function needs the pure-walk operator")
    if not lam >= 0:
        raise ValueError("lam must be nonnegative")
    n = op.size
    o = op.box.origin
    rhs = np.zeros(n)
    rhs[o] = 1.0
    mat = (lam * sp.identity(n, format="csr") - op.matrix).tocsr()
    if n <= 20000 or not op.is_symmetric():
        try:
            x = spla.spsolve(mat.tocsc(), rhs)
        except RuntimeError as exc:
            raise SingularSolveError(f"resolvent solve failed at lam={lam}") from exc
    else:
        x, info = spla.cg(mat, rhs, rtol=1e-13, atol=0.0, maxiter=20 * n)
        if info != 0:
            raise SingularSolveError(f"conjugate gradients did not converge (info={info})")
    value = float(x[o])
    if not np.all(np.isfinite(x)):
        raise SingularSolveError(f"resolvent at lam={lam} is singular")
    return value


class SourceLanczos:
    """Lanczos recursion for the pure walk started at the source indicator.

    Because ``H = A + beta e_0 e_0^T`` and the first Lanczos vector is
    ``e_0``, the tridiagonal matrix produced for ``H`` equals the one for
    ``A`` plus ``beta`` in its top-left entry. One recursion therefore serves
    every ``beta``. No reorthogonalisation: the extremal Ritz values of the
    updated tridiagonal are insensitive to spurious copies.
    """

    def __init__(self, op: TruncatedOperator, max_steps: int | None = None):
        if op.beta is not None:
            raise ValueError("SourceLanczos needs the pure-walk operator")
        if not op.is_symmetric():
            raise ValueError("SourceLanczos needs a symmetric operator")
        self.op = op
        self.max_steps = max_steps or min(op.size, 20000)
        self._alpha: list[float] = []
        self._beta: list[float] = []
        self._q_prev = np.zeros(op.size)
        self._q = op.box.indicator((0,) * op.box.dimension)
        self._b_prev = 0.0
        self.exhausted = False

    @property
    def steps(self) -> int:
        return len(self._alpha)

    def extend(self, steps: int) -> None:
        mat = self.op.matrix
        scale = float(abs(mat).sum(axis=1).max())
        for _ in range(steps):
            if self.exhausted or self.steps >= self.max_steps:
                return
            w = mat @ self._q - self._b_prev * self._q_prev
            a = float(self._q @ w)
            w -= a * self._q
            b = float(np.linalg.norm(w))
            self._alpha.append(a)
            if b <= 1e-13 * scale:
                # invariant subspace reached: the tridiagonal is exact
                self.exhausted = True
                return
            self._beta.append(b)
            self._q_prev, self._q, self._b_prev = self._q, w / b, b

    def tridiagonal(self, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        k = self.steps if k is None else min(k, self.steps)
        return np.array(self._alpha[:k]), np.array(self._beta[: k - 1])

    def ritz_top(self, beta: float, k: int | None = None) -> float:
        """Largest eigenvalue of the ``k``-step tridiagonal of ``A + beta Delta_0``."""
        diag, off = self.tridiagonal(k)
        diag = diag.copy()
        diag[0] += beta
        if diag.size == 1:
            return float(diag[0])
        return float(
            scipy.linalg.eigvalsh_tridiagonal(
                diag, off, select="i", select_range=(diag.size - 1, diag.size - 1)
            )[0]
        )

    def _converge(self, target, block: int, tol):
        """Extend the recursion until ``target(k)`` agrees with ``target(2k/3)`` to ``tol(value)``.

        Comparing against a shorter prefix of the same recursion keeps the
        test meaningful when earlier calls already ran it to ``max_steps``.
        """
        while True:
            k = self.steps
            if k >= block or self.exhausted:
                value = target(k)
                if self.exhausted or abs(value - target((2 * k) // 3)) <= tol(value):
                    return value
            if k >= self.max_steps:
                raise EigenConvergenceError("source Lanczos recursion did not converge", k)
            self.extend(max(block - k, k // 2, 1))

    def top_eigenvalue(self, beta: float, rtol: float = 1e-10, atol: float = 1e-13) -> float:
        return self._converge(lambda k: self.ritz_top(beta, k), 50, lambda v: max(atol, rtol * abs(v)))

    def critical_beta(self, eps: float = EPS_POS, tol: float = BETA_TOL) -> float:
        """Smallest ``beta`` with top eigenvalue above ``eps``, by bisection."""
        return self._converge(lambda k: self._bisect(eps, tol, k), 50, lambda v: tol / 10)

    def _bisect(self, eps: float, tol: float, k: int | None = None) -> float:
        lo, hi = 0.0, 2.0 * float(abs(self.op.matrix.diagonal()).max()) + 1.0
        if self.ritz_top(lo, k) > eps or self.ritz_top(hi, k) <= eps:
            raise BracketError(f"[{lo}, {hi}] does not bracket the critical intensity")
        while hi - lo > tol / 4:
            mid = 0.5 * (lo + hi)
            if self.ritz_top(mid, k) > eps:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)


def extrapolation_variable(half_width: int, dimension: int) -> float:
    """Leading finite-box behaviour of the origin Green's function ``G_box``.

    Measured in the distance ``L + 1`` to the killing boundary, ``G_box`` is
    affine in ``L + 1`` for ``d = 1``, in ``ln(L + 1)`` for ``d = 2`` and in
    ``(L + 1)^{2-d}`` for ``d >= 3``.
    """
    r = half_width + 1
    if dimension == 1:
        return float(r)
    if dimension == 2:
        return math.log(r)
    return float(r) ** (2 - dimension)


def extrapolate_critical(values: Sequence[float], half_widths: Sequence[int], dimension: int) -> float:
    """Two-point Richardson extrapolation of per-box critical intensities.

    Extrapolates the reciprocal ``1 / beta_c(L)``, which behaves like
    ``G_box(0, 0)``, affinely in :func:`extrapolation_variable` using the last
    two boxes. For ``d <= 2`` the variable diverges, so a growing reciprocal
    extrapolates to ``beta_c = 0``. The result is clipped at zero.
    """
    values = [float(v) for v in values]
    if len(values) == 1:
        return max(0.0, values[0])
    h1 = extrapolation_variable(half_widths[-2], dimension)
    h2 = extrapolation_variable(half_widths[-1], dimension)
    g1, g2 = 1.0 / values[-2], 1.0 / values[-1]
    slope = (g2 - g1) / (h2 - h1)
    if dimension <= 2:
        return 0.0 if slope > 0 else max(0.0, values[-1])
    limit = g2 - slope * h2
    return 1.0 / limit if limit > 0 else 0.0


@dataclass(frozen=True)
class BoxCriticality:
    half_width: int
    beta_c: float
    green_beta_c: float
    lanczos_steps: int


@dataclass(frozen=True)
class CriticalIntensityReport:
    dimension: int
    boxes: tuple[BoxCriticality, ...]
    extrapolated: float
    green_extrapolated: float
    tol: float = BETA_TOL
    eps: float = EPS_POS

    @property
    def half_widths(self) -> list[int]:
        return [b.half_width for b in self.boxes]

    @property
    def per_box(self) -> list[float]:
        return [b.beta_c for b in self.boxes]

    def relative_disagreement(self) -> float:
        last = self.boxes[-1]
        return abs(last.beta_c - last.green_beta_c) / last.green_beta_c


def critical_intensity(
    model: BrwModel,
    schedule: Sequence[int] = DEFAULT_SCHEDULE,
    eps: float = EPS_POS,
    tol: float = BETA_TOL,
) -> CriticalIntensityReport:
    """Estimate ``beta_c`` on each box of ``schedule`` and extrapolate.

    The primary estimate bisects on the sign of the principal eigenvalue of
    ``A + beta Delta_0``; the cross-check is ``1 / G_0(0, 0)`` from a linear
    solve. See :func:`extrapolate_critical` for the extrapolation.
    """
    require_admissible(model)
    schedule = sorted(int(L) for L in schedule)
    boxes = []
    for L in schedule:
        box = LatticeBox(model.dimension, L)
        op = build_operator(model, box)
        lanczos = SourceLanczos(op)
        beta_c = lanczos.critical_beta(eps, tol)
        green = green_function_at_origin(op, 0.0)
        boxes.append(BoxCriticality(L, beta_c, 1.0 / green, lanczos.steps))
    d = model.dimension
    extrap = extrapolate_critical([b.beta_c for b in boxes], schedule, d)
    green_extrap = extrapolate_critical([b.green_beta_c for b in boxes], schedule, d)
    return CriticalIntensityReport(d, tuple(boxes), extrap, green_extrap, tol, eps)
