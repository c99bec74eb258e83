import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from condmix.config import preset_target
from condmix.divergences import (
    Grid,
    GridDensity,
    IncompatibleGridError,
    UndefinedConditionalError,
    chi2_variance,
    dichotomy_check_lsi,
    dichotomy_check_pi,
    divergence_report,
    empirical_conditional_density,
    fisher_information_grid,
    kl_divergence,
    pfi_edge_form,
    pfi_grid,
    poincare_constant_grid,
    target_conditional_density,
    tv_distance,
)
from condmix.potentials import QuadraticPotential
from condmix.regions import Region, VoronoiPartition, interval, whole_space


def gauss(grid, m=0.0, s=1.0):
    x = grid.points()[:, 0]
    return GridDensity(grid, np.exp(-0.5 * ((x - m) / s) ** 2).reshape(grid.shape), False).normalize()


def cells(values, lo=0.0):
    """Density on unit cells over [lo, lo + len(values)]."""
    g = Grid(((lo, lo + len(values)),), (len(values),))
    return GridDensity(g, np.asarray(values, dtype=float), True)


FINE = Grid(((-10.0, 10.0),), (4000,))


def test_grid_basics():
    g = Grid.parse("-1,1,10;0,4,8")
    assert g.dimension == 2 and g.shape == (10, 8)
    assert g.spacing == pytest.approx((0.2, 0.5)) and g.cell_volume == pytest.approx(0.1)
    assert g.points().shape == (80, 2)
    np.testing.assert_allclose(g.points()[1], [g.centers[0][0], g.centers[1][1]])
    assert Grid.parse(g.spec()) == g
    for bad in ("0,1,4", "1,0,10", "0,1,10;0,1,10;0,1,10", "0,inf,10"):
        with pytest.raises(ValueError):
            Grid.parse(bad)


def test_target_density_centred_and_normalised():
    g = Grid(((-8.0, 8.0),), (161,))
    d = target_conditional_density(QuadraticPotential(1), whole_space(), g)
    assert d.total() == pytest.approx(1.0, abs=1e-9)
    mean = np.sum(g.centers[0] * d.values) * g.cell_volume
    assert abs(mean) <= g.spacing[0]


def test_target_density_half_line_is_renormalised_half():
    g = Grid(((-6.0, 6.0),), (120,))
    full = target_conditional_density(QuadraticPotential(1), whole_space(), g)
    half = target_conditional_density(QuadraticPotential(1), interval(0.0), g)
    right = g.centers[0] > 0
    np.testing.assert_allclose(half.values[right], 2 * full.values[right], rtol=1e-12)
    assert np.all(half.values[~right] == 0)


def test_nu1_left_cell_is_truncated_gaussian():
    g = Grid(((-20.0, 5.0),), (500,))
    nu1 = preset_target("nu1")
    d = target_conditional_density(nu1, VoronoiPartition(nu1)[0], g)
    x = g.centers[0]
    ref = np.where(x < 0, np.exp(-0.5 * (x + 10) ** 2), 0.0)
    ref /= ref.sum() * g.cell_volume
    assert np.max(np.abs(d.values - ref)) <= 1e-6


def test_target_density_requires_overlap():
    g = Grid(((0.0, 1.0),), (10,))
    with pytest.raises(UndefinedConditionalError):
        target_conditional_density(QuadraticPotential(1), interval(5.0), g)


def test_empirical_delta_and_uniform_limits():
    g = Grid(((0.0, 1.0),), (10,))
    pts = np.full((50, 1), 0.33)
    d = empirical_conditional_density(pts, whole_space(), g, eps=0.0)
    assert d.values[3] == pytest.approx(10.0) and d.values.sum() == pytest.approx(10.0)
    flat = empirical_conditional_density(pts, whole_space(), g, eps=1e12)
    np.testing.assert_allclose(flat.values, 1.0, rtol=1e-9)


def test_empirical_metadata_and_region_cells():
    g = Grid(((-1.0, 1.0),), (8,))
    pts = np.array([[-0.9], [0.1], [0.2], [5.0], [-0.01]])
    d = empirical_conditional_density(pts, interval(-0.1, 10.0), g)
    assert d.meta["n_samples"] == 4
    assert d.meta["n_outside_grid"] == 1
    # -0.01 falls in the cell [-0.25, 0) whose centre lies outside the region
    assert d.meta["n_boundary_dropped"] == 1
    assert np.all(d.values[:4] == 0)
    with pytest.raises(UndefinedConditionalError):
        empirical_conditional_density(pts, interval(20.0), g)


def test_histogram_consistency_at_one_million_samples():
    g = Grid(((-6.0, 6.0),), (200,))
    x = np.random.default_rng(0).standard_normal((1_000_000, 1))
    mu = empirical_conditional_density(x, whole_space(), g, eps=1e-12)
    assert kl_divergence(mu, target_conditional_density(QuadraticPotential(1), whole_space(), g)) <= 2e-3


def test_two_cell_closed_forms():
    pad = [0.0] * 6
    assert kl_divergence(cells([1, 0] + pad), cells([0.5, 0.5] + pad)) == pytest.approx(math.log(2))
    assert tv_distance(cells([0.9, 0.1] + pad), cells([0.5, 0.5] + pad)) == pytest.approx(0.4)
    assert chi2_variance(cells([1, 0] + pad), cells([0.5, 0.5] + pad)) == pytest.approx(1.0)
    assert tv_distance(cells([1, 0] + pad), cells([0, 1] + pad)) == pytest.approx(1.0)
    assert kl_divergence(cells([1, 0] + pad), cells([0, 1] + pad)) == math.inf
    assert chi2_variance(cells([1, 0] + pad), cells([0, 1] + pad)) == math.inf


def test_identical_densities_give_zero():
    p = gauss(FINE)
    assert kl_divergence(p, p) == 0.0 and tv_distance(p, p) == 0.0 and chi2_variance(p, p) == 0.0
    assert fisher_information_grid(p, p) == 0.0 and pfi_grid(p, p) == 0.0 and pfi_edge_form(p, p) == 0.0


def test_gaussian_closed_forms():
    assert kl_divergence(gauss(FINE), gauss(FINE, 0.5)) == pytest.approx(0.125, abs=1e-3)
    assert chi2_variance(gauss(FINE, 0.3), gauss(FINE)) == pytest.approx(math.exp(0.09) - 1, abs=2e-3)


def test_fisher_information_of_shifted_gaussian():
    g = Grid(((-8.0, 8.0),), (1600,))
    assert fisher_information_grid(gauss(g, 1.0), gauss(g)) == pytest.approx(1.0, abs=2e-2)
    for m in (0.5, 1.0, 2.0):
        assert fisher_information_grid(gauss(g, m), gauss(g)) == pytest.approx(m * m, rel=0.05)


def test_fisher_information_ignores_log_ratio_level():
    mu, pi = gauss(FINE, 0.7), gauss(FINE)
    scaled = GridDensity(FINE, mu.values * 37.0, False).normalize()
    assert fisher_information_grid(scaled, pi) == pytest.approx(fisher_information_grid(mu, pi), rel=1e-12)


def test_pfi_matches_quadrature():
    m = 0.8
    # int |d/dx (mu/pi)|^2 dpi with mu/pi = exp(m x - m^2/2)
    ref, _ = integrate.quad(
        lambda x: m * m * math.exp(2 * m * x - m * m - x * x / 2) / math.sqrt(2 * math.pi), -40, 40
    )
    assert ref == pytest.approx(m * m * math.exp(m * m))
    g = Grid(((-12.0, 12.0),), (6000,))
    assert pfi_grid(gauss(g, m), gauss(g)) == pytest.approx(ref, rel=0.01)
    assert pfi_edge_form(gauss(g, m), gauss(g)) == pytest.approx(ref, rel=0.01)


def test_pfi_is_quadratic_in_perturbation():
    g = Grid(((0.0, 1.0),), (8,))
    pi = GridDensity(g, np.ones(8), False).normalize()
    bump = np.where(np.arange(8) < 4, 1.0, -1.0)
    vals = [pfi_grid(GridDensity(g, pi.values * (1 + d * bump), True), pi) for d in (0.01, 0.02, 0.04)]
    assert vals[1] / vals[0] == pytest.approx(4.0) and vals[2] / vals[1] == pytest.approx(4.0)


def test_fisher_functionals_need_positive_densities():
    z = cells([1, 0] + [0] * 6)
    with pytest.raises(ValueError):
        fisher_information_grid(z, z)
    with pytest.raises(ValueError):
        pfi_grid(z, z)


def test_incompatible_grids():
    with pytest.raises(IncompatibleGridError):
        kl_divergence(gauss(FINE), gauss(Grid(((-10.0, 10.0),), (400,))))


def test_poincare_uniform_and_gaussian():
    g = Grid(((0.0, 1.0),), (2000,))
    rho = poincare_constant_grid(GridDensity(g, np.ones(g.shape), False).normalize())
    assert rho == pytest.approx(math.pi**2, rel=0.01)
    for s in (0.5, 1.0, 2.0):
        g = Grid(((-8 * s, 8 * s),), (1000,))
        assert poincare_constant_grid(gauss(g, 0.0, s)) == pytest.approx(s**-2, rel=0.02)


def test_poincare_nu1_left_cell_exceeds_local_lsi_constant():
    nu1 = preset_target("nu1")
    g = Grid(((-20.0, 5.0),), (1000,))
    d = target_conditional_density(nu1, VoronoiPartition(nu1)[0], g)
    assert poincare_constant_grid(d) >= 1 / 9


def test_poincare_grid_refinement():
    vals = []
    for bins in (400, 800, 1600):
        g = Grid(((-4.0, 4.0),), (bins,))
        x = g.centers[0]
        vals.append(poincare_constant_grid(GridDensity(g, np.exp(-(x**2 - 1) ** 2), False).normalize()))
    assert max(vals) / min(vals) <= 1.02


def test_poincare_2d_product_gaussian_both_solvers():
    for bins in (30, 60):  # dense (900 cells) and shift-invert (3600 cells)
        g = Grid(((-6.0, 6.0), (-12.0, 12.0)), (bins, bins))
        x = g.points()
        vals = np.exp(-0.5 * x[:, 0] ** 2 - 0.5 * x[:, 1] ** 2 / 4).reshape(g.shape)
        rho = poincare_constant_grid(GridDensity(g, vals, False).normalize())
        assert rho == pytest.approx(0.25, rel=0.03)


def test_poincare_needs_two_cells():
    g = Grid(((0.0, 1.0),), (8,))
    with pytest.raises(ValueError):
        poincare_constant_grid(GridDensity(g, np.eye(8)[0] * 8, True))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_holley_stroock_perturbation(seed):
    rng = np.random.default_rng(seed)
    g = Grid(((-5.0, 5.0),), (200,))
    base = gauss(g)
    factor = rng.uniform(0.5, 2.0, g.shape)
    pert = GridDensity(g, base.values * factor, False).normalize()
    r0, r1 = poincare_constant_grid(base), poincare_constant_grid(pert)
    ratio = factor.max() / factor.min()
    assert r0 / ratio * (1 - 1e-9) <= r1 <= r0 * ratio * (1 + 1e-9)


def random_density(rng, g, zeros=False):
    v = rng.gamma(0.5, size=g.shape)
    if zeros:
        v[rng.random(g.shape) < 0.3] = 0.0
    v[0] += 1e-3
    return GridDensity(g, v, False).normalize()


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([8, 20, 64]))
def test_divergence_inequalities(seed, bins):
    rng = np.random.default_rng(seed)
    g = Grid(((0.0, 3.0),), (bins,))
    mu, pi = random_density(rng, g, zeros=True), random_density(rng, g)
    kl, tv, chi = kl_divergence(mu, pi), tv_distance(mu, pi), chi2_variance(mu, pi)
    assert 0 <= tv <= 1 + 1e-12
    assert tv**2 <= kl / 2 + 1e-12
    assert kl <= math.log1p(chi) + 1e-9
    rep = divergence_report(mu, pi, 0.5, 100, 0.0)
    assert rep.tv <= math.sqrt(rep.kl / 2) + 1e-6


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_discrete_poincare_inequality_behind_pi_dichotomy(seed, two_d):
    # pi(S)^2 Var_{pi|S}[mu / pi] <= pi(S) PFI / rho_S, exactly, for the shared discretisation
    rng = np.random.default_rng(seed)
    g = Grid(((0.0, 1.0), (0.0, 2.0)), (9, 12)) if two_d else Grid(((0.0, 1.0),), (40,))
    mu, pi = random_density(rng, g), random_density(rng, g)
    x = g.points()
    cut = rng.uniform(0.2, 0.8)
    region = Region(lambda p: p[:, 0] < cut, "left")
    inside = region.contains(x).reshape(g.shape)
    pi_S = GridDensity(g, np.where(inside, pi.values, 0.0), False)
    mass_pi = pi_S.total()
    pi_S = pi_S.normalize()
    rho = poincare_constant_grid(pi_S)
    ratio = np.where(inside, mu.values / pi.values, 0.0)
    mean = np.sum(pi_S.values * ratio) * g.cell_volume
    var = np.sum(pi_S.values * (ratio - mean) ** 2) * g.cell_volume
    assert mass_pi**2 * var <= mass_pi * pfi_edge_form(mu, pi) / rho * (1 + 1e-9) + 1e-15


def test_lsi_dichotomy_examples():
    r = dichotomy_check_lsi(fi=0.3, alpha=1.0, region_mass=0.0, conditional_ent=5.0)
    assert r.passed and r.branch == "small-mass"
    r = dichotomy_check_lsi(fi=0.01, alpha=1.0, region_mass=0.5, conditional_ent=0.05)
    assert r.passed and r.branch == "conditional" and r.threshold == pytest.approx(0.1)
    r = dichotomy_check_lsi(fi=0.01, alpha=1.0, region_mass=0.5, conditional_ent=0.2)
    assert not r.passed and r.branch == "none"
    with pytest.raises(ValueError):
        dichotomy_check_lsi(0.1, 0.0, 0.5, 0.1)


def test_pi_dichotomy_examples():
    assert dichotomy_check_pi(0.1, 1.0, 0.5, 0.5, 0.0).passed
    r = dichotomy_check_pi(0.0, 1.0, 1.0, 1.0, 0.0)
    assert r.passed and r.lhs == r.threshold == 0.0
    assert not dichotomy_check_pi(0.01, 1.0, 1.0, 0.5, 1.0).passed
    with pytest.raises(ValueError):
        dichotomy_check_pi(0.1, -1.0, 0.5, 0.5, 0.0)


def test_fi_vanishes_at_target():
    g = Grid(((-15.0, 15.0),), (300,))
    nu1 = preset_target("nu1")
    pi = target_conditional_density(nu1, whole_space(), g, eps=1e-300)
    fi = fisher_information_grid(pi, pi)
    assert fi == 0.0
    assert dichotomy_check_lsi(fi + 1e-300, 1.0, 0.9, kl_divergence(pi, pi)).branch == "conditional"
