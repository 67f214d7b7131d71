import math

import numpy as np
import pytest
from scipy import stats

from qstat.bank import LogLikSurface, ThetaGrid
from qstat.errors import DegeneratePosterior, ValidationError
from qstat.inference import (HypothesisSpec, LossMatrix, Region, ThetaPrior, bayes_decide,
                             composite_test, credible_region, delta_line_prior, delta_prior,
                             glrt, jeffreys_prior, normalize_density, posterior,
                             posterior_moments, sideband_hypotheses, uniform_prior,
                             zero_point_hypotheses)
from qstat.optomech import OptomechConfig

GRID = ThetaGrid.uniform((0, 2), (0, 3), (81, 121))


def _gauss_surface(mu=(0.8, 1.4), sd=(0.1, 0.15), grid=GRID, offset=-500.0):
    pts = grid.points()
    ll = offset - 0.5 * (((pts - mu) / sd) ** 2).sum(axis=1)
    half = ll.reshape(grid.shape) / 2
    return LogLikSurface(grid, half, half.copy())


def test_region_masks_are_half_open():
    g = ThetaGrid.uniform((0, 1), (0, 1), (5, 5))
    m = Region(sa=(0.25, 0.75)).mask(g)
    np.testing.assert_array_equal(m[:, 0], [False, True, True, False, False])
    unc = Region.uncertainty(0.25).mask(g)
    assert unc[2, 3] and not unc[2, 2] and not unc[1, 4]
    assert Region.from_dict(Region.uncertainty().to_dict()) == Region.uncertainty()


def test_priors_normalize():
    for p in (uniform_prior(GRID), delta_prior(GRID, 0.5, 1.0),
              delta_line_prior(GRID, s_a=0.5), delta_line_prior(GRID, s_b=2.0),
              uniform_prior(GRID, Region.uncertainty())):
        assert (GRID.weights * p).sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValidationError):
        delta_prior(GRID, 2.5, 1.0)
    with pytest.raises(ValidationError):
        delta_line_prior(GRID, s_a=0.5, s_b=1.0)
    with pytest.raises(ValidationError):
        normalize_density(GRID, np.zeros(GRID.shape))


def test_posterior_of_gaussian_surface():
    post = posterior(_gauss_surface(), uniform_prior(GRID))
    mean, cov = posterior_moments(post)
    np.testing.assert_allclose(mean, [0.8, 1.4], atol=1e-4)
    np.testing.assert_allclose(np.sqrt(np.diag(cov)), [0.1, 0.15], rtol=1e-3)
    assert post.mass.sum() == pytest.approx(1.0, abs=1e-12)
    # evidence = max L * 2 pi sd_a sd_b / area
    expect = -500.0 + math.log(2 * math.pi * 0.1 * 0.15 / 6.0)
    assert post.log_normalizer == pytest.approx(expect, abs=1e-4)
    assert (GRID.weights_sb @ post.marginal("s_b")) == pytest.approx(1.0)


def test_credible_region_mass_and_shape():
    post = posterior(_gauss_surface(), uniform_prior(GRID))
    reg = credible_region(post, 0.95)
    assert 0.95 <= reg.mass < 0.96
    assert reg.contains(GRID, 0.8, 1.4)
    assert not reg.contains(GRID, 0.3, 1.4)
    # for a bivariate normal the HPD set is the chi2(2) ellipse: area 2 pi sd sd q
    area = (GRID.weights * reg.mask).sum()
    q = stats.chi2.ppf(0.95, 2)
    assert area == pytest.approx(math.pi * 0.1 * 0.15 * q, rel=0.05)
    with pytest.raises(ValidationError):
        credible_region(post, 1.0)


def test_flat_and_jeffreys_posteriors_differ_by_prior_factor():
    grid = ThetaGrid.uniform((0.2, 1.5), (0.5, 2.5), (9, 9))
    surf = _gauss_surface(grid=grid, sd=(0.3, 0.5))
    cfg = OptomechConfig(0.8, 4.0, 1.0, 0.5)
    jp = jeffreys_prior(cfg, grid)
    flat = posterior(surf, uniform_prior(grid))
    jeff = posterior(surf, jp)
    ratio = jeff.density / flat.density
    np.testing.assert_allclose(ratio / ratio.max(), jp / jp.max(), rtol=1e-10)


def test_nan_cells_count_as_zero_likelihood():
    surf = _gauss_surface()
    surf.loglik_minus[40, 56] = np.nan
    post = posterior(surf, uniform_prior(GRID))
    assert post.density[40, 56] == 0.0
    assert post.mass.sum() == pytest.approx(1.0)


def test_posterior_rejects_bad_priors():
    surf = _gauss_surface()
    with pytest.raises(ValidationError):
        posterior(surf, np.ones(GRID.shape))
    p = delta_prior(GRID, 1.0, 1.0)
    surf.loglik_plus[:] = np.nan
    with pytest.raises(DegeneratePosterior):
        posterior(surf, p)


def test_composite_test_matches_direct_marginals():
    surf = _gauss_surface(mu=(0.5, 1.0), sd=(0.05, 0.2))
    res = composite_test(surf, sideband_hypotheses())
    # H_k: delta at S_A, uniform S_B on [0, 3]; marginal over S_B is analytic
    i0, i1 = GRID.nearest(0.0, 0)[0], GRID.nearest(0.5, 0)[0]
    direct = [float(np.log(GRID.weights_sb @ np.exp(surf.loglik_total[i]) / 3.0))
              for i in (i0, i1)]
    np.testing.assert_allclose(res.log_marginal, direct, rtol=1e-10)
    assert res.posteriors[1] > 0.999
    assert res.ln_lambda(0, 1) == pytest.approx(direct[1] - direct[0])
    doc = res.to_dict()
    assert [h["name"] for h in doc["hypotheses"]] == ["classical_sa0", "quantum_sa05"]


def test_zero_point_hypotheses_constraint():
    hyps = zero_point_hypotheses(0.25)
    std, mod = (h.density(GRID) for h in hyps)
    assert std[GRID.nearest(0.6, 0.6)] > 0 and mod[GRID.nearest(0.6, 0.6)] == 0
    # data far inside the modified region cannot distinguish the two
    surf = _gauss_surface(mu=(1.0, 2.0), sd=(0.05, 0.05))
    res = composite_test(surf, hyps)
    assert res.posteriors[1] > res.posteriors[0]
    with pytest.raises(ValidationError):
        composite_test(surf, [HypothesisSpec("x", 0.3, ThetaPrior("uniform"))])


def test_hypothesis_from_dict():
    h = HypothesisSpec.from_dict({"name": "q", "prior": 0.5,
                                  "theta_prior": {"kind": "delta_line", "s_a": 0.5},
                                  "constraint": {"s_b": [0.5, None]}})
    d = h.density(GRID)
    assert (GRID.weights * d).sum() == pytest.approx(1.0)
    assert d[:, GRID.axis_sb < 0.5].sum() == 0.0
    with pytest.raises(ValidationError):
        HypothesisSpec.from_dict({"name": "x", "prior": 1.0,
                                  "theta_prior": {"kind": "nope"}}).density(GRID)


def test_bayes_decision_and_glrt():
    assert bayes_decide([0.3, 0.7], LossMatrix.zero_one(2)) == 1
    # asymmetric loss: choosing H_1 wrongly costs 10
    assert bayes_decide([0.3, 0.7], LossMatrix([[0, 10], [1, 0]])) == 0
    with pytest.raises(ValidationError):
        LossMatrix([[0, -1], [1, 0]])
    surf = _gauss_surface(mu=(0.5, 1.0), sd=(0.1, 0.1))
    stat = glrt(surf, Region(sa=(None, 0.25)), Region(sa=(0.25, None)))
    # the best S_A < 0.25 cell sits at 0.225: 0.5 * (0.275 / 0.1)^2
    assert stat == pytest.approx(0.5 * (0.275 / 0.1) ** 2, rel=1e-9)
