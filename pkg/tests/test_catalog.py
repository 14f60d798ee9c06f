"""Function catalog: inversion, cost derivative, assumptions, config IO."""

import numpy as np
import pytest

from mixedreg import (
    ConfigError,
    InversionError,
    MonotoneScalar,
    ProblemSpec,
    SpecError,
    check_assumptions,
    invert_monotone,
    load_problem_config,
    save_problem_config,
)
from mixedreg.catalog import delta_inverse, delta_slope, delta_value


def base_spec(**overrides):
    kw = dict(
        preset="disk",
        p=2.0,
        q=2.0,
        lambda1=1.0,
        lambda2=1.0,
        mu1=1.0,
        mu2=1.0,
        a11="1",
        a12="0",
        a22="1",
        a0="1",
        f="y",
        L="y^2",
        ell="y^2",
        g1="y",
        g2="y",
        zeta1=("t", 1.0),
        zeta2=("t", 1.0),
        N=2,
    )
    kw.update(overrides)
    return ProblemSpec(**kw)


# ---------------------------------------------------------------------------
# monotone inversion


def test_invert_monotone_examples():
    cubic = MonotoneScalar("t + t^3", 1.0)
    assert invert_monotone(cubic, 2.0) == pytest.approx(1.0, abs=1e-13)
    assert invert_monotone(cubic, 10.0) == pytest.approx(2.0, abs=1e-13)
    ident = MonotoneScalar("t", 1.0)
    assert invert_monotone(ident, -3.7) == pytest.approx(-3.7, abs=1e-13)


def test_invert_monotone_roundtrip():
    cubic = MonotoneScalar("t + t^3", 1.0)
    rng = np.random.default_rng(3)
    ts = rng.uniform(-10.0, 10.0, 1000)
    back = invert_monotone(cubic, cubic.value(ts))
    assert np.max(np.abs(back - ts)) < 1e-10


def test_invert_monotone_lipschitz_bound():
    steep = MonotoneScalar("3*t + t^3", 3.0)
    rng = np.random.default_rng(4)
    a = rng.uniform(-20.0, 20.0, 500)
    b = rng.uniform(-20.0, 20.0, 500)
    ha = invert_monotone(steep, a)
    hb = invert_monotone(steep, b)
    assert np.all(np.abs(ha - hb) <= np.abs(a - b) / 3.0 + 1e-12)


def test_invert_monotone_vectorized():
    cubic = MonotoneScalar("t + t^3", 1.0)
    targets = np.array([2.0, 10.0, 0.0, -2.0])
    out = invert_monotone(cubic, targets)
    assert out == pytest.approx([1.0, 2.0, 0.0, -1.0], abs=1e-13)


def test_decreasing_reparametrization_inverts():
    falling = MonotoneScalar("-2*t", 2.0)
    assert falling.direction == "decreasing"
    assert invert_monotone(falling, 5.0) == pytest.approx(-2.5, abs=1e-13)


# ---------------------------------------------------------------------------
# cost derivative Delta and its inverse


def test_delta_examples():
    quartic = base_spec(p=4.0, q=4.0)
    assert delta_value(1, quartic, 1.0) == pytest.approx(2.0, abs=1e-14)
    assert delta_inverse(1, quartic, 2.0) == pytest.approx(1.0, abs=1e-13)

    linear = base_spec(lambda1=2.0, lambda2=0.0)
    assert delta_inverse(1, linear, 5.0) == pytest.approx(2.5, abs=1e-13)

    cubic_cost = base_spec(p=3.0)
    # t + |t| t at t = 2 is 6
    assert delta_value(1, cubic_cost, 2.0) == pytest.approx(6.0, abs=1e-14)
    assert delta_inverse(1, cubic_cost, 6.0) == pytest.approx(2.0, abs=1e-13)


def test_delta_inverse_monotone_and_bounded():
    spec = base_spec(p=4.0)
    rng = np.random.default_rng(5)
    pairs = rng.uniform(-50.0, 50.0, (200, 2))
    lo = np.minimum(pairs[:, 0], pairs[:, 1]) - 1e-9
    hi = np.maximum(pairs[:, 0], pairs[:, 1]) + 1e-9
    ti = delta_inverse(1, spec, lo)
    tj = delta_inverse(1, spec, hi)
    assert np.all(tj >= ti)
    targets = rng.uniform(-100.0, 100.0, 200)
    t = delta_inverse(1, spec, targets)
    assert np.all(np.abs(t) <= np.abs(targets) / spec.lambda1 + 1e-12)


def test_delta_slope_positive():
    spec = base_spec(p=4.0)
    ts = np.linspace(-5.0, 5.0, 41)
    assert np.all(np.asarray(delta_slope(1, spec, ts)) >= spec.lambda1)


def test_delta_roundtrip():
    spec = base_spec(p=3.5, q=4.0, lambda2=2.0)
    rng = np.random.default_rng(6)
    ts = rng.uniform(-8.0, 8.0, 300)
    back = delta_inverse(1, spec, delta_value(1, spec, ts))
    assert np.max(np.abs(back - ts)) < 1e-10


# ---------------------------------------------------------------------------
# spec validation


def test_spec_rejects_bad_exponents():
    with pytest.raises(SpecError):
        base_spec(p=1.5)
    with pytest.raises(SpecError):
        base_spec(q=0.9, N=2)
    with pytest.raises(SpecError):
        base_spec(N=1)


def test_spec_rejects_bad_weights():
    with pytest.raises(SpecError):
        base_spec(lambda1=0.0)
    with pytest.raises(SpecError):
        base_spec(mu2=-1.0)


def test_spec_rejects_state_dependent_diffusion():
    with pytest.raises(SpecError):
        base_spec(a11="1 + y")


def test_spec_rejects_bad_zeta():
    with pytest.raises(SpecError):
        base_spec(zeta1=("x1 + t", 1.0))
    with pytest.raises(SpecError):
        base_spec(zeta1=("t", -1.0))
    with pytest.raises(SpecError):
        base_spec(zeta1=12)


def test_spec_accepts_dict_zeta():
    s = base_spec(zeta1={"expr": "2*t", "rho": 2.0})
    assert s.zeta1.value(3.0) == 6.0


def test_unknown_preset_rejected():
    with pytest.raises(SpecError):
        base_spec(preset="square")


# ---------------------------------------------------------------------------
# assumption checks


def test_assumptions_all_pass_on_shipping_instance(configs):
    rep = check_assumptions(configs["quadratic_tracking"])
    assert rep.all_passed
    assert [c.name for c in rep.checks] == [
        "A1-exponents-weights",
        "A2-ellipticity",
        "A3-cost-nonnegative",
        "A4-nonlinearity",
        "A5-constraints-vanish-at-zero",
        "A6-reparametrization",
        "sign-condition",
    ]


def test_assumption_a5_direct_violation_with_witness():
    rep = check_assumptions(base_spec(g1="y - 10"))
    failed = rep.failed()
    assert [c.name for c in failed] == ["A5-constraints-vanish-at-zero"]
    assert failed[0].witness is not None
    assert failed[0].witness["measured"] == pytest.approx(-10.0)


def test_robinson_sign_condition_passes_for_exponential_cap():
    rep = check_assumptions(base_spec(f="y^3", g1="exp(y) - 1"))
    assert rep.all_passed


def test_slope_floor_violation_detected():
    rep = check_assumptions(base_spec(zeta1=("t - 2*t^3", 1.0)))
    names = [c.name for c in rep.failed()]
    assert "A6-reparametrization" in names
    a6 = [c for c in rep.failed() if c.name == "A6-reparametrization"][0]
    assert a6.witness is not None


def test_manufactured_instances_fail_only_vanishing_caps(configs):
    for name in ("constant_kkt", "smooth_constrained", "jump_bound"):
        rep = check_assumptions(configs[name])
        assert [c.name for c in rep.failed()] == ["A5-constraints-vanish-at-zero"], name


# ---------------------------------------------------------------------------
# config file round trip


def test_config_roundtrip(tmp_path, configs):
    spec = configs["smooth_constrained"]
    path = tmp_path / "copy.cfg"
    save_problem_config(spec, str(path))
    again = load_problem_config(str(path))
    ys = np.linspace(-2.0, 2.0, 9)
    assert np.allclose(spec.g1(0.3, -0.4, ys), again.g1(0.3, -0.4, ys), rtol=0, atol=0)
    assert np.allclose(
        spec.zeta1.value(ys), again.zeta1.value(ys), rtol=0, atol=0
    )
    assert again.p == spec.p and again.lambda2 == spec.lambda2


def test_config_missing_section(tmp_path):
    p = tmp_path / "broken.cfg"
    p.write_text("[domain]\npreset = disk\ndimension = 2\n")
    with pytest.raises(ConfigError):
        load_problem_config(str(p))


def test_config_bad_number(tmp_path, configs):
    p = tmp_path / "bad.cfg"
    save_problem_config(configs["quadratic_tracking"], str(p))
    text = p.read_text().replace("p = 2", "p = banana", 1)
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_problem_config(str(p))


def test_config_missing_file():
    with pytest.raises(ConfigError):
        load_problem_config("/nonexistent/nowhere.cfg")
