"""Shared fixtures.

Expensive solves (the level-4 constant-instance recovery, the two
refinement studies, the seeded Fourier sweeps) are session-scoped so the
module tests and the acceptance suite reuse one computation.
"""

from pathlib import Path

import numpy as np
import pytest

from mixedreg import catalog, fem, geometry, kkt, regularity
from mixedreg.cli import _fourier_coeffs, _fourier_field
from mixedreg.fracnorm import chain_rule_check, product_check

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def disk():
    cache = {}

    def get(level):
        if level not in cache:
            cache[level] = geometry.build_disk_mesh(level)
        return cache[level]

    return get


@pytest.fixture(scope="session")
def configs():
    return {
        p.stem: catalog.load_problem_config(str(p)) for p in sorted(CONFIG_DIR.glob("*.cfg"))
    }


def zero_controls(mesh):
    return fem.domain_field(mesh, 0.0), fem.boundary_field(mesh, 0.0)


@pytest.fixture(scope="session")
def quadratic_spec():
    """Unconstrained linear-quadratic instance; exact optimum via dense solve."""
    return catalog.ProblemSpec(
        preset="disk",
        p=2.0,
        q=2.0,
        lambda1=1.0,
        lambda2=0.0,
        mu1=1.0,
        mu2=0.0,
        a11="1",
        a12="0",
        a22="1",
        a0="1",
        f="0",
        L="(y - 1)^2 / 2",
        ell="0",
        g1="y - 100",
        g2="y - 100",
        zeta1=("t", 1.0),
        zeta2=("t", 1.0),
        N=2,
    )


@pytest.fixture(scope="session")
def constant_solution(configs, disk):
    """Level-4 solve of the manufactured constant instance (C3/C5)."""
    spec = configs["constant_kkt"]
    mesh = disk(4)
    state, report = kkt.solve_kkt(
        spec, zero_controls(mesh), damping=0.5, max_iter=200, kkt_tol=1e-7, active_tol=1e-5
    )
    return spec, mesh, state, report


@pytest.fixture(scope="session")
def quadratic_solution(quadratic_spec, disk):
    """Level-2 solve of the linear-quadratic instance.

    Damping 0.3: the boundary channel gives this instance a joint control
    gain near 3, which puts the default damping 0.5 on a sustained
    2-cycle.
    """
    mesh = disk(2)
    state, report = kkt.solve_kkt(
        quadratic_spec,
        zero_controls(mesh),
        damping=0.3,
        max_iter=400,
        kkt_tol=1e-8,
        active_tol=1e-8,
    )
    return quadratic_spec, mesh, state, report


@pytest.fixture(scope="session")
def smooth_solution(configs, disk):
    """Level-3 solve of the partially active smooth instance."""
    spec = configs["smooth_constrained"]
    mesh = disk(3)
    state, report = kkt.solve_kkt(
        spec, zero_controls(mesh), damping=0.3, max_iter=200, kkt_tol=5e-3, active_tol=1e-3
    )
    return spec, mesh, state, report


@pytest.fixture(scope="session")
def fourier_sweep(disk):
    """Seeded band-limited fields pushed through both composition checks.

    The Fourier coefficients are drawn once per field so every level
    evaluates the same function; refinement stability is meaningless for
    fields that change with the mesh.
    """
    levels = (3, 4, 5, 6)

    rng = np.random.default_rng(42)
    chain_draws = [_fourier_coeffs(rng) for _ in range(50)]
    chain_max = {}
    for level in levels:
        mesh = disk(level)
        worst = 0.0
        for coeffs in chain_draws:
            v = _fourier_field(mesh, coeffs, 5.0)
            _, _, ratio = chain_rule_check("sin(t)", v, 1.0 / 3.0, 2.0)
            worst = max(worst, ratio)
        chain_max[level] = worst

    rng = np.random.default_rng(43)
    prod_draws = [(_fourier_coeffs(rng), _fourier_coeffs(rng)) for _ in range(50)]
    prod_max = {}
    for level in levels:
        mesh = disk(level)
        worst = 0.0
        for c1, c2 in prod_draws:
            v1 = _fourier_field(mesh, c1, 2.0)
            v2 = _fourier_field(mesh, c2, 2.0)
            _, _, ratio = product_check(v1, v2, 0.25, 0.5, 0.5, 1.0, 2.0, 2.0)
            worst = max(worst, ratio)
        prod_max[level] = worst

    return {"chain": chain_max, "product": prod_max}


@pytest.fixture(scope="session")
def smooth_study(configs):
    """Refinement study on the smooth constrained instance (C9)."""
    return regularity.refinement_study(
        configs["smooth_constrained"],
        [3, 4, 5, 6],
        damping=0.3,
        max_iter=200,
        kkt_tol=5e-3,
        active_tol=1e-3,
    )


@pytest.fixture(scope="session")
def jump_study(configs):
    """Control experiment: interior cap jumps across x1 = 1/pi (C9)."""
    return regularity.refinement_study(
        configs["jump_bound"],
        [3, 4, 5],
        damping=0.3,
        max_iter=150,
        kkt_tol=5e-3,
        active_tol=1e-3,
    )
