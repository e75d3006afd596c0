"""Vaccination: damping of the reproduction rates at the source.

A fraction of the hosts is immunised, so each of the ``n - 1`` extra
offspring survives with probability ``alpha``: ``b_n -> alpha**(n-1) b_n``
for ``n >= 2``, ``b_0`` unchanged, and ``b_1`` re-derived from closure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import BrwModel, OffspringLaw, eval_generating_function


@dataclass(frozen=True)
class VaccinationParams:
    alpha: float

    def __post_init__(self):
        a = float(self.alpha)
        if not (math.isfinite(a) and 0.0 < a <= 1.0):
            raise ConfigError(f"vaccination.alpha must lie in (0, 1], got {self.alpha}")
        object.__setattr__(self, "alpha", a)


def _params(params) -> VaccinationParams:
    return params if isinstance(params, VaccinationParams) else VaccinationParams(params)


def vaccinate(law: OffspringLaw, params: VaccinationParams | float) -> OffspringLaw:
    """The damped law; accepts the parameters or a bare ``alpha``."""
    alpha = _params(params).alpha
    rates = {n: b if n == 0 else alpha ** (n - 1) * b for n, b in law.rates().items()}
    return OffspringLaw.from_rates(rates)


def vaccinated_generating_function(law: OffspringLaw, params: VaccinationParams | float, u):
    """Closed form of the damped generating function, computed from ``f`` alone.

    ``(f(0)(1 - u)(alpha - 1) + f(alpha u) - u f(alpha)) / alpha``
    """
    alpha = _params(params).alpha
    u_arr = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(u_arr)) or np.any(u_arr < 0.0) or np.any(u_arr > 1.0):
        raise ValueError("u must lie in [0, 1]")
    f = lambda v: eval_generating_function(law, v)  # noqa: E731
    value = (f(0.0) * (1.0 - u_arr) * (alpha - 1.0) + f(alpha * u_arr) - u_arr * f(alpha)) / alpha
    return float(value) if np.ndim(u) == 0 else value


def vaccinated_model(model: BrwModel, params: VaccinationParams | float) -> BrwModel:
    return model.with_law(vaccinate(model.law, params))


def vaccinated_beta(law: OffspringLaw, params: VaccinationParams | float) -> float:
    return vaccinate(law, params).beta
