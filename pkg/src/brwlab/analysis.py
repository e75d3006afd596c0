"""Duality checks, regime classification and growth-rate fits."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError
from .model import BrwModel, require_admissible, validate_model
from .moments import ATOL, RTOL, evolve_first_moment, evolve_forward_first_moment
from .operators import (
    BETA_TOL,
    DEFAULT_SCHEDULE,
    EPS_POS,
    CriticalIntensityReport,
    LatticeBox,
    SourceLanczos,
    build_operator,
    critical_intensity,
)

DUALITY_TOL = 1e-9
#: half-width of the band around beta_c reported as near-critical
CRITICAL_BAND = 1e-3

REGIMES = ("supercritical", "critical", "subcritical")


# --- duality --------------------------------------------------------------


@dataclass(frozen=True)
class DualityReport:
    """Gap between the infinite-population mean and the single-particle mean.

    ``gaps[k, i]`` is the absolute difference at ``times[k]`` and site
    ``box.sites[i]``.
    """

    times: np.ndarray
    box: LatticeBox
    gaps: np.ndarray
    tolerance: float
    rtol: float
    atol: float

    @property
    def max_gap(self) -> float:
        return float(self.gaps.max()) if self.gaps.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_gap < self.tolerance

    def max_gap_by_time(self) -> np.ndarray:
        return self.gaps.max(axis=1)


def duality_check(
    model: BrwModel,
    box: LatticeBox,
    times,
    rtol: float = RTOL,
    atol: float = ATOL,
    check_symmetry: bool = True,
    tolerance: float = DUALITY_TOL,
) -> DualityReport:
    """Compare the forward mean from a uniform field with the backward total mean.

    With ``check_symmetry`` off an asymmetric kernel is accepted, which makes
    the check a negative control.
    """
    if check_symmetry:
        broken = [v for v in validate_model(model) if v.invariant == "symmetry"]
        if broken:
            raise ConfigError("duality requires a symmetric kernel: " + "; ".join(map(str, broken)))
    forward = evolve_forward_first_moment(model, box, times, rtol=rtol, atol=atol)
    backward = evolve_first_moment(model, box, "total", times, rtol=rtol, atol=atol)
    gaps = np.abs(forward.values - backward.values)
    return DualityReport(forward.times, box, gaps, tolerance, rtol, atol)


# --- regimes --------------------------------------------------------------


@dataclass(frozen=True)
class RegimeReport:
    regime: str  # "supercritical", "subcritical" or "near-critical"
    lambda0: float
    beta: float
    beta_c: float
    half_width: int
    criticality: CriticalIntensityReport


def largest_box_eigenvalue(model: BrwModel, half_width: int) -> float:
    """Principal eigenvalue of ``A + beta Delta_0`` on one box.

    Truncation only lowers the eigenvalue, so this is a lower bound for the
    whole-lattice value.
    """
    op = build_operator(model, LatticeBox(model.dimension, half_width))
    return SourceLanczos(op).top_eigenvalue(model.beta)


def classify_regime(
    model: BrwModel,
    schedule: Sequence[int] = DEFAULT_SCHEDULE,
    band: float = CRITICAL_BAND,
    eps: float = EPS_POS,
    criticality: CriticalIntensityReport | None = None,
) -> RegimeReport:
    """Supercritical if ``lambda0 > eps`` or ``beta > beta_c + band``,
    subcritical if ``beta < beta_c - band``, near-critical otherwise.

    ``lambda0`` is taken on the largest box of the schedule, a lower bound
    for the whole lattice; the second supercritical test catches recurrent
    walks whose eigenvalue is too small to show on any box. A precomputed
    ``criticality`` report for the same walk can be passed to skip the
    bisection.
    """
    require_admissible(model)
    if criticality is None:
        criticality = critical_intensity(model, schedule, eps=eps, tol=BETA_TOL)
    L = max(criticality.half_widths)
    lam = largest_box_eigenvalue(model, L)
    beta, beta_c = model.beta, criticality.extrapolated
    if lam > eps or beta > beta_c + band:
        regime = "supercritical"
    elif beta < beta_c - band:
        regime = "subcritical"
    else:
        regime = "near-critical"
    return RegimeReport(regime, lam, beta, beta_c, L, criticality)


# --- growth laws ----------------------------------------------------------


@dataclass(frozen=True)
class GrowthForm:
    """``exp(rate * lambda0 * t) * t**t_power * (ln t)**log_power``."""

    rate: int = 0
    t_power: Fraction = Fraction(0)
    log_power: int = 0

    def __call__(self, t, lambda0: float = 0.0):
        t = np.asarray(t, dtype=float)
        out = np.exp(self.rate * lambda0 * t) * t ** float(self.t_power)
        if self.log_power:
            out = out * np.log(t) ** self.log_power
        return out

    @property
    def is_exponential(self) -> bool:
        return self.rate != 0

    def describe(self) -> str:
        parts = []
        if self.rate:
            parts.append(f"exp({self.rate}*lambda0*t)" if self.rate != 1 else "exp(lambda0*t)")
        if self.t_power:
            parts.append(f"t^({self.t_power})")
        if self.log_power:
            parts.append(f"ln(t)^({self.log_power})")
        return "*".join(parts) or "1"


@dataclass(frozen=True)
class GrowthLaw:
    """Asymptotic shape of the local (``u``) and total (``v``) moments of order ``order``."""

    regime: str
    dimension: int
    order: int
    local: GrowthForm
    total: GrowthForm


def _critical_forms(d: int, n: int) -> tuple[GrowthForm, GrowthForm]:
    F = Fraction
    if d == 1:
        return GrowthForm(0, F(n - 1, 2), n - 1), GrowthForm(0, F(n - 1, 2))
    if d == 2:
        return GrowthForm(0, F(-1)), GrowthForm(0, F(0), n - 1)
    if d == 3:
        # total row kept exactly as tabulated
        return GrowthForm(0, F(-1, 2), n - 1), GrowthForm(0, F(2 * n - 1, 2))
    if d == 4:
        return GrowthForm(0, F(n - 1), 1 - 2 * n), GrowthForm(0, F(2 * n - 1), 1 - 2 * n)
    return GrowthForm(0, F(2 * n - 1)), GrowthForm(0, F(2 * n - 1))


def _subcritical_forms(d: int) -> tuple[GrowthForm, GrowthForm]:
    if d == 1:
        return GrowthForm(0, Fraction(-3, 2)), GrowthForm(0, Fraction(-1, 2))
    if d == 2:
        return GrowthForm(0, Fraction(-1), -2), GrowthForm(0, Fraction(0), -1)
    return GrowthForm(0, Fraction(-d, 2)), GrowthForm()


def predicted_growth_law(regime: str, dimension: int, order: int) -> GrowthLaw:
    """Large-time form of the moments; ``"near-critical"`` maps to ``"critical"``."""
    if regime == "near-critical":
        regime = "critical"
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}")
    if int(dimension) != dimension or dimension < 1:
        raise ConfigError(f"dimension must be a positive integer, got {dimension}")
    if int(order) != order or order < 1:
        raise ConfigError(f"moment order must be a positive integer, got {order}")
    d, n = int(dimension), int(order)
    if regime == "supercritical":
        local = total = GrowthForm(n)
    elif regime == "critical":
        local, total = _critical_forms(d, n)
    else:
        local, total = _subcritical_forms(d)
    return GrowthLaw(regime, d, n, local, total)


# --- fitting --------------------------------------------------------------


@dataclass(frozen=True)
class GrowthFit:
    form: str
    estimate: float
    stderr: float
    r2: float
    intercept: float
    points: int
    residuals: np.ndarray


def fit_growth_rate(times, values, window: tuple[float, float] = (10.0, 30.0), form="exponential") -> GrowthFit:
    """Least-squares slope of ``log values`` on the fit window.

    ``form`` is ``"exponential"`` (slope against ``t``), ``"power"`` (slope
    against ``ln t``) or a :class:`GrowthForm`, whose logarithmic factor is
    divided out before a power fit.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ConfigError("times and values must be 1-d arrays of equal length")
    lo, hi = window
    mask = (t >= lo) & (t <= hi)
    if mask.sum() < 3:
        raise ConfigError(f"fit window [{lo}, {hi}] holds fewer than 3 points")
    t, y = t[mask], y[mask]
    if np.any(~(y > 0)):
        raise ConfigError("values must be strictly positive on the fit window")
    log_y = np.log(y)
    if isinstance(form, GrowthForm):
        if form.is_exponential:
            kind = "exponential"
        else:
            kind = "power"
            if form.log_power:
                if np.any(t <= 1):
                    raise ConfigError("logarithmic corrections need t > 1 on the window")
                log_y = log_y - form.log_power * np.log(np.log(t))
    elif form in ("exponential", "power"):
        kind = form
    else:
        raise ConfigError(f"unknown fit form {form!r}")
    if kind == "power" and np.any(t <= 0):
        raise ConfigError("power fits need t > 0 on the window")
    x = t if kind == "exponential" else np.log(t)
    res = stats.linregress(x, log_y)
    resid = log_y - (res.intercept + res.slope * x)
    r2 = res.rvalue**2 if math.isfinite(res.rvalue) else 1.0
    return GrowthFit(kind, float(res.slope), float(res.stderr), float(r2), float(res.intercept), int(t.size), resid)


def supercritical_half_width(t_max: float, total_rate: float, dimension: int) -> int:
    """Box half-width ``ceil(3 sqrt(kappa t_max d))`` for growth fits up to ``t_max``."""
    return int(math.ceil(3.0 * math.sqrt(total_rate * t_max * dimension)))
