import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from brwlab.errors import ConfigError
from brwlab.model import BrwModel, OffspringLaw, build_simple_kernel, eval_generating_function, is_admissible
from brwlab.operators import LatticeBox, SourceLanczos, build_operator
from brwlab.vaccination import (
    VaccinationParams,
    vaccinate,
    vaccinated_beta,
    vaccinated_generating_function,
    vaccinated_model,
)


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.0000001, float("nan")])
def test_alpha_range(alpha):
    with pytest.raises(ConfigError):
        VaccinationParams(alpha)


def test_identity_at_alpha_one():
    law = OffspringLaw.from_rates({0: 0.3, 2: 1.0, 4: 0.2})
    assert vaccinate(law, 1.0) == law
    model = BrwModel(build_simple_kernel(2, 1.0), law)
    assert vaccinated_model(model, VaccinationParams(1.0)) == model


def test_binary_example():
    law = vaccinate(OffspringLaw.binary(1.0, 1.0), 0.5)
    assert law.coefficients == (1.0, -1.5, 0.5)


def test_three_term_example():
    law = vaccinate(OffspringLaw.from_rates({0: 1.0, 2: 1.0, 3: 1.0}), VaccinationParams(0.5))
    assert law.coefficients == (1.0, -1.75, 0.5, 0.25)
    assert sum(law.coefficients) == 0.0


def test_two_routes_agree_on_example():
    law = OffspringLaw.binary(1.0, 1.0)
    closed = vaccinated_generating_function(law, 0.5, 0.5)
    direct = eval_generating_function(vaccinate(law, 0.5), 0.5)
    assert closed == pytest.approx(0.375, abs=1e-15)
    assert abs(closed - direct) < 1e-14


def test_generating_function_edges():
    law = OffspringLaw.from_rates({0: 0.4, 2: 0.7, 3: 0.1})
    assert abs(vaccinated_generating_function(law, 0.3, 1.0)) < 1e-15
    u = np.linspace(0, 1, 11)
    assert np.allclose(vaccinated_generating_function(law, 1.0, u), eval_generating_function(law, u), atol=1e-15)
    with pytest.raises(ValueError):
        vaccinated_generating_function(law, 0.5, 1.5)
    with pytest.raises(ConfigError):
        vaccinated_generating_function(law, 0.0, 0.5)


rates = st.dictionaries(st.sampled_from([0, 2, 3, 4, 5]), st.floats(0.0, 3.0), min_size=1)
alphas = st.floats(1e-3, 1.0)


@given(rates, alphas)
def test_closed_form_matches_direct_polynomial(r, alpha):
    law = OffspringLaw.from_rates(r)
    u = np.linspace(0, 1, 100)
    closed = vaccinated_generating_function(law, alpha, u)
    direct = eval_generating_function(vaccinate(law, alpha), u)
    assert np.max(np.abs(closed - direct)) < 1e-12 * max(1.0, max(r.values()))


@given(rates, alphas)
def test_transform_preserves_admissibility_and_damps(r, alpha):
    law = OffspringLaw.from_rates(r)
    new = vaccinate(law, alpha)
    assert is_admissible(BrwModel(build_simple_kernel(1, 1.0), new))
    assert new.coefficients[0] == law.coefficients[0]
    new_rates = new.rates()
    for n, b in law.rates().items():
        assert new_rates.get(n, 0.0) <= b
    assert new.beta <= law.beta + 1e-12


def test_beta_monotone_in_alpha():
    law = OffspringLaw.from_rates({0: 0.2, 2: 1.0, 3: 0.5})
    betas = [vaccinated_beta(law, a) for a in np.linspace(0.05, 1.0, 20)]
    assert np.all(np.diff(betas) >= 0)


def test_eigenvalue_nonincreasing_as_alpha_decreases():
    base = BrwModel(build_simple_kernel(3, 1.0), OffspringLaw.binary(0.2, 1.4))
    lz = SourceLanczos(build_operator(base, LatticeBox(3, 8)))
    lams = [lz.top_eigenvalue(vaccinated_beta(base.law, a)) for a in np.linspace(1.0, 0.1, 10)]
    assert np.all(np.diff(lams) <= 1e-12)
    assert lams[0] > 0 > lams[-1]
    # bisection over alpha for the threshold
    lo, hi = 0.1, 1.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if lz.top_eigenvalue(vaccinated_beta(base.law, mid)) > 0:
            hi = mid
        else:
            lo = mid
    assert lz.top_eigenvalue(vaccinated_beta(base.law, lo)) <= 0 < lz.top_eigenvalue(vaccinated_beta(base.law, hi))
