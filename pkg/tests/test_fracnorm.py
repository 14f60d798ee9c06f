"""Fractional boundary norms, composition bounds, embedding probes."""

import numpy as np
import pytest

import oracles
from mixedreg import fem
from mixedreg.fracnorm import (
    FracNormError,
    chain_rule_check,
    gagliardo,
    holder_embedding_probe,
    product_check,
)

TWO_PI_SQ = 2.0 * np.pi**2


def cos_field(mesh):
    return fem.boundary_field(mesh, np.cos(mesh.boundary_params))


def random_field(mesh, seed):
    rng = np.random.default_rng(seed)
    return fem.boundary_field(mesh, rng.standard_normal(mesh.n_boundary))


# ---------------------------------------------------------------------------
# basic identities


def test_constant_field(disk):
    m = disk(3)
    rep = gagliardo(fem.boundary_field(m, 2.5), 0.5, 2.0)
    assert rep.seminorm_I == 0.0
    perim = float(np.sum(m.boundary_edge_lengths))
    assert rep.full_norm == pytest.approx(2.5 * np.sqrt(perim), rel=1e-13)


def test_report_fields(disk):
    m = disk(3)
    rep = gagliardo(cos_field(m), 0.5, 2.0)
    assert rep.tau == 0.5 and rep.k == 2.0
    assert rep.quadrature_level == 3
    assert rep.seminorm_I > 0.0
    assert rep.full_norm > rep.seminorm_I ** 0.5


def test_homogeneity(disk):
    m = disk(3)
    v = random_field(m, 9)
    base = gagliardo(v, 0.4, 3.0)
    for c in (2.0, 3.0, -1.0, 0.5):
        scaled = gagliardo(fem.boundary_field(m, c * v.values), 0.4, 3.0)
        assert scaled.seminorm_I == pytest.approx(abs(c) ** 3.0 * base.seminorm_I, rel=1e-12)
        assert scaled.full_norm == pytest.approx(abs(c) * base.full_norm, rel=1e-12)


def test_norm_identity(disk):
    m = disk(3)
    v = random_field(m, 12)
    rep = gagliardo(v, 0.3, 2.0)
    lp = fem.lp_norm(v, 2.0)
    assert rep.full_norm**2 == pytest.approx(rep.seminorm_I + lp**2, rel=1e-13)


def test_rotation_invariance(disk):
    # relabeling the start vertex permutes pair contributions only
    m = disk(3)
    v = random_field(m, 3)
    base = gagliardo(v, 0.5, 2.0).seminorm_I
    rolled = gagliardo(fem.boundary_field(m, np.roll(v.values, 7)), 0.5, 2.0).seminorm_I
    assert rolled == pytest.approx(base, rel=1e-12)


def test_triangle_inequality(disk):
    m = disk(2)
    rng = np.random.default_rng(5)
    v1 = fem.boundary_field(m, rng.standard_normal(m.n_boundary))
    v2 = fem.boundary_field(m, rng.standard_normal(m.n_boundary))
    s = fem.boundary_field(m, v1.values + v2.values)
    g = lambda f: gagliardo(f, 0.5, 2.0).full_norm
    assert g(s) <= g(v1) + g(v2) + 1e-12


def test_validation():
    import mixedreg.geometry as geometry

    m = geometry.build_disk_mesh(1)
    v = fem.boundary_field(m, 1.0)
    with pytest.raises(FracNormError):
        gagliardo(v, 0.0, 2.0)
    with pytest.raises(FracNormError):
        gagliardo(v, 1.0, 2.0)
    with pytest.raises(FracNormError):
        gagliardo(v, 0.5, 0.5)
    with pytest.raises(FracNormError):
        gagliardo(fem.domain_field(m, 1.0), 0.5, 2.0)


# ---------------------------------------------------------------------------
# quadrature accuracy


def test_cosine_approaches_continuum(disk):
    """Angular cosine at tau = 1/2, k = 2; closed-form limit 2 pi^2."""
    expected_rel = {4: 2.008e-4, 5: 5.020e-5, 6: 1.255e-5}
    for level, rel in expected_rel.items():
        semi = gagliardo(cos_field(disk(level)), 0.5, 2.0).seminorm_I
        measured = abs(semi - TWO_PI_SQ) / TWO_PI_SQ
        assert measured == pytest.approx(rel, rel=5e-3)


def test_cosine_oracle_matches_closed_form():
    val = oracles.angular_cos_oracle(panels=10**5)
    assert val == pytest.approx(TWO_PI_SQ, rel=1e-12)


def test_engine_matches_brute_quadrature(disk):
    # rough random field: panel quadrature converges to ~0.3% of the
    # graded-cell engine, inside the 1% design target
    m = disk(2)
    v = random_field(m, 5)
    semi = gagliardo(v, 0.5, 2.0).seminorm_I
    brute = oracles.brute_gagliardo(v, 0.5, 2.0, panels_per_edge=128)
    assert abs(semi - brute) / brute <= 1e-2


# ---------------------------------------------------------------------------
# composition bounds


def test_chain_rule_zero_mapping(disk):
    m = disk(2)
    v = random_field(m, 5)
    lhs, rhs, ratio = chain_rule_check("0", v, 0.5, 2.0)
    assert lhs == 0.0 and ratio == 0.0
    assert rhs > 1.0


def test_chain_rule_linear_mapping(disk):
    # a(t) = 2t: lhs = 2 n(v), rhs = n(v) + 1, so the ratio sits below 2
    m = disk(2)
    v = random_field(m, 5)
    lhs, rhs, ratio = chain_rule_check("2*t", v, 0.5, 2.0)
    n = gagliardo(v, 0.5, 2.0).full_norm
    assert lhs == pytest.approx(2.0 * n, rel=1e-12)
    assert ratio == pytest.approx(2.0 * n / (n + 1.0), rel=1e-12)
    assert ratio < 2.0


def test_chain_rule_stability_under_refinement(fourier_sweep):
    ratios = fourier_sweep["chain"]
    for level, r in ratios.items():
        assert np.isfinite(r) and 0.0 < r < 10.0, level
    drift = abs(ratios[6] - ratios[5]) / ratios[5]
    assert drift < 0.20


def test_product_zero_factor(disk):
    m = disk(2)
    v = random_field(m, 5)
    z = fem.boundary_field(m, 0.0)
    lhs, rhs, ratio = product_check(z, v, 0.25, 0.5, 0.5, 1.0, 2.0, 2.0)
    assert lhs == 0.0 and rhs == 0.0 and ratio == 0.0


def test_product_validation(disk):
    m = disk(1)
    v = fem.boundary_field(m, 1.0)
    with pytest.raises(FracNormError):
        product_check(v, v, 0.25, 0.5, 0.5, 1.0, 2.0, 3.0)
    with pytest.raises(FracNormError):
        product_check(v, v, 0.6, 0.5, 0.5, 1.0, 2.0, 2.0)
    with pytest.raises(FracNormError):
        product_check(fem.domain_field(m, 1.0), v, 0.25, 0.5, 0.5, 1.0, 2.0, 2.0)


def test_product_stability_under_refinement(fourier_sweep):
    ratios = fourier_sweep["product"]
    for level, r in ratios.items():
        assert np.isfinite(r) and 0.0 < r < 10.0, level
    drift = abs(ratios[6] - ratios[5]) / ratios[5]
    assert drift < 0.20


# ---------------------------------------------------------------------------
# Lipschitz-threshold embedding probe


def test_probe_constant_is_zero(disk):
    assert holder_embedding_probe(fem.boundary_field(disk(3), 2.5), 2.0) == 0.0


def test_probe_rejects_small_exponent(disk):
    v = fem.boundary_field(disk(1), 1.0)
    with pytest.raises(FracNormError):
        holder_embedding_probe(v, 1.0)
    with pytest.raises(FracNormError):
        holder_embedding_probe(v, 0.5)


def test_probe_ladder_smooth_field(disk):
    """Smooth trace: ladder values frozen, k-th roots decrease toward 1."""
    m = disk(5)
    v = cos_field(m)
    expected = {2.0: 19.7382, 4.0: 14.8037, 8.0: 10.7943, 16.0: 7.75241}
    roots = []
    for k, e in expected.items():
        val = holder_embedding_probe(v, k)
        assert val == pytest.approx(e, rel=1e-4)
        roots.append(val ** (1.0 / k))
    assert all(a > b for a, b in zip(roots, roots[1:]))


def test_probe_smooth_field_stable_under_refinement(disk):
    vals = [holder_embedding_probe(cos_field(disk(lv)), 2.0) for lv in (3, 4, 5, 6)]
    assert vals[0] == pytest.approx(19.72336, rel=1e-5)
    assert vals[-1] == pytest.approx(19.738961, rel=1e-5)
    assert abs(vals[-1] - vals[0]) / vals[0] < 1e-3


def test_probe_step_field_diverges_logarithmically(disk):
    """Jump trace: k = 2 probe grows by 2 jump^2 amp^2 ln 2 per level."""
    vals = []
    for lv in (4, 5, 6):
        m = disk(lv)
        v = fem.boundary_field(m, np.sign(np.cos(m.boundary_params)))
        vals.append(holder_embedding_probe(v, 2.0))
    incs = [b - a for a, b in zip(vals, vals[1:])]
    for inc in incs:
        assert inc == pytest.approx(oracles.STEP_LADDER_INCREMENT, rel=5e-3)
