import numpy as np
import pytest

from bohmflow.field import make_grid
from bohmflow.potentials import (
    from_spec,
    gaussian_well,
    poschl_teller,
    spherical_gaussian_well,
    synthetic_potential,
    validate_short_range,
    zero_potential,
)


SHIPPED = [
    zero_potential(),
    gaussian_well(depth=1.0, width=1.0),
    poschl_teller(lam=1),
    poschl_teller(lam=2),
    spherical_gaussian_well(depth=0.5, width=1.0),
]


class TestEval:
    def test_zero_everywhere(self):
        v = zero_potential()
        assert v.evaluate(0.0) == 0.0
        assert np.all(v.evaluate(np.linspace(-5, 5, 11)) == 0.0)

    def test_poschl_teller_depth(self):
        assert poschl_teller(lam=1).evaluate(0.0) == pytest.approx(-1.0)
        assert poschl_teller(lam=2).evaluate(0.0) == pytest.approx(-3.0)

    def test_gaussian_well_center(self):
        assert gaussian_well(depth=2.0, width=1.0).evaluate(0.0) == pytest.approx(-2.0)

    def test_even_in_q(self):
        q = np.linspace(0.1, 6.0, 40)
        for v in SHIPPED:
            if v.max_dim == 1:
                assert np.allclose(v.evaluate(q), v.evaluate(-q))
            else:
                pts = np.stack([q, 0.3 * q, -0.2 * q], axis=-1)
                assert np.allclose(v.evaluate(pts), v.evaluate(-pts))

    def test_bounded_and_real(self):
        g = make_grid(1, 20.0, 256)
        for v in SHIPPED:
            vals = v.on_grid(g)
            assert np.isrealobj(vals)
            assert np.all(np.isfinite(vals))

    def test_poschl_teller_is_1d_only(self):
        g = make_grid(2, 10.0, 32)
        with pytest.raises(ValueError):
            poschl_teller(lam=1).on_grid(g)

    def test_from_spec_round_trip(self):
        v = from_spec("gaussian_well", {"depth": 1.5, "width": 2.0})
        assert v.evaluate(0.0) == pytest.approx(-1.5)
        with pytest.raises(ValueError):
            from_spec("coulomb", {})


class TestShortRangeValidator:
    def test_zero_passes_with_infinite_exponent(self):
        g = make_grid(1, 20.0, 256)
        report = validate_short_range(zero_potential(), 4, g)
        assert report.passed
        assert report.fitted_exponent == np.inf

    def test_all_shipped_families_satisfy_v4(self):
        g1 = make_grid(1, 20.0, 256)
        g3 = make_grid(3, 20.0, 32)
        for v in SHIPPED:
            grid = g1 if v.max_dim == 1 else g3
            assert validate_short_range(v, 4, grid).passed

    def test_cubic_tail_fails_v4(self):
        g = make_grid(1, 40.0, 512)
        v = synthetic_potential(lambda r: (1.0 + r**2) ** -1.5)
        report = validate_short_range(v, 4, g)
        assert not report.passed
        assert report.fitted_exponent == pytest.approx(3.0, abs=0.2)

    def test_fifth_power_tail_passes_v4(self):
        g = make_grid(1, 40.0, 512)
        v = synthetic_potential(lambda r: (1.0 + r**2) ** -2.5)
        report = validate_short_range(v, 4, g)
        assert report.passed
        assert report.fitted_exponent == pytest.approx(5.0, abs=0.2)

    def test_rejects_small_n(self):
        g = make_grid(1, 20.0, 256)
        with pytest.raises(ValueError):
            validate_short_range(zero_potential(), 1, g)
