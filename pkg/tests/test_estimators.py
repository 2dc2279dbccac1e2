import numpy as np
import pytest

from hamvi.data import Dataset, DomainError
from hamvi.estimators import (HISNoise, HISProposal, MeanFieldProposal, PlanarFlowParams, PlanarProposal,
                              PriorProposal, draw_his_noise, his_elbo, his_elbo_rao_blackwell, importance_log_weights,
                              importance_sampled_nll, iwae_bound, log_mean_exp, planar_forward, planar_nf_elbo,
                              planar_reproject, vanilla_elbo, write_replicates)
from hamvi.flow import FixedTempering, FlowConfig, FreeTempering, NoTempering
from hamvi.models import GaussianModel, gaussian_exact_posterior
from hamvi.priors import MeanFieldParams, MeanFieldPrior, StandardNormalPrior


def instance(d=2, n=10, seed=0):
    rng = np.random.default_rng(seed)
    model = GaussianModel(d)
    data = Dataset(rng.normal(0.5, 1.0, size=(n, d)))
    theta = np.concatenate([0.1 * rng.normal(size=d), np.log(rng.uniform(0.5, 1.5, d))])
    return model, data, theta


def exact_mf(model, data, theta):
    mean, cov = gaussian_exact_posterior(model.params(theta), data)
    return MeanFieldParams(mean, cov)


def test_his_without_flow_is_vanilla():
    model, data, theta = instance()
    rng = np.random.default_rng(1)
    mf = MeanFieldParams(rng.normal(size=2), rng.uniform(0.1, 1.0, 2))
    noise = draw_his_noise(rng, 2, 500)
    prior = MeanFieldPrior(2)
    for scheme in (NoTempering(), FixedTempering(0.3)):
        h = his_elbo(model, data, theta, FlowConfig(0, [0.1, 0.1], scheme), prior, prior.phi_from(mf), noise)
        v = vanilla_elbo(model, data, theta, mf, noise.z)
        assert np.max(np.abs(h.value - v.value)) <= 1e-12


def test_rao_blackwell_per_draw_relation():
    # the two bounds differ only by the initial momentum energy and its mean
    model, data, theta = instance(3)
    rng = np.random.default_rng(2)
    cfg = FlowConfig(5, [0.05, 0.04, 0.03], FixedTempering(0.4))
    prior = MeanFieldPrior(3)
    phi = rng.normal(size=6) * 0.3
    noise = draw_his_noise(rng, 3, 200)
    h = his_elbo(model, data, theta, cfg, prior, phi, noise).value
    rb = his_elbo_rao_blackwell(model, data, theta, cfg, prior, phi, noise).value
    diff = rb - h
    assert np.allclose(diff, 1.5 - 0.5 * np.sum(noise.gamma**2, axis=-1), atol=1e-9)


def test_his_and_rao_blackwell_share_their_mean():
    model, data, theta = instance()
    rng = np.random.default_rng(3)
    cfg = FlowConfig(3, [0.05, 0.05], FixedTempering(0.5))
    prior = StandardNormalPrior(2)
    noise = draw_his_noise(rng, 2, 10_000)
    h = his_elbo(model, data, theta, cfg, prior, None, noise).value
    rb = his_elbo_rao_blackwell(model, data, theta, cfg, prior, None, noise).value
    se = np.sqrt(h.var() / h.size + rb.var() / rb.size)
    assert abs(h.mean() - rb.mean()) < 3 * se


def test_his_diagnostics():
    model, data, theta = instance()
    cfg = FlowConfig(4, [0.05, 0.05], FixedTempering(0.25))
    est = his_elbo(model, data, theta, cfg, StandardNormalPrior(2), None, draw_his_noise(np.random.default_rng(0), 2, 3))
    assert est.value.shape == (3,) and est.z_K.shape == (3, 2)
    assert est.log_jacobian == pytest.approx(np.log(0.25))
    assert np.all(np.isfinite(est.final_hamiltonian))


def test_vanilla_at_exact_posterior_is_exact():
    model, data, theta = instance(3, 25)
    noise = np.random.default_rng(4).normal(size=(1000, 3))
    est = vanilla_elbo(model, data, theta, exact_mf(model, data, theta), noise)
    assert np.var(est.value) < 1e-16
    assert np.max(np.abs(est.value - model.exact_log_marginal(theta, data))) < 1e-8


def test_vanilla_at_prior_without_data():
    model = GaussianModel(2)
    data = Dataset(np.zeros((0, 2)))
    noise = np.random.default_rng(5).normal(size=(100, 2))
    est = vanilla_elbo(model, data, np.zeros(4), MeanFieldParams(np.zeros(2), np.ones(2)), noise)
    assert np.allclose(est.value, 0.0, atol=1e-12)


def test_planar_hand_value():
    nf = PlanarFlowParams([0.5], [1.0], 0.0, 1)
    states, logdet = planar_forward(nf, np.zeros(1))
    assert states[-1][0] == 0.0
    assert logdet == pytest.approx(np.log(1.5))


def test_planar_identity_reduces_to_vanilla():
    model, data, theta = instance()
    noise = np.random.default_rng(6).normal(size=(50, 2))
    nf = PlanarFlowParams(np.zeros(2), np.array([1.0, -2.0]), 0.3, 5)
    p = planar_nf_elbo(model, data, theta, nf, StandardNormalPrior(2), None, noise)
    v = vanilla_elbo(model, data, theta, MeanFieldParams(np.zeros(2), np.ones(2)), noise)
    assert np.allclose(p.value, v.value, atol=1e-12)


def test_planar_log_det_matches_jacobian():
    rng = np.random.default_rng(7)
    nf = PlanarFlowParams(planar_reproject(rng.normal(size=3), rng.normal(size=3)), rng.normal(size=3), 0.2, 4)
    z0 = rng.normal(size=3)
    _, logdet = planar_forward(nf, z0)
    J = np.empty((3, 3))
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        J[:, j] = (planar_forward(nf, z0 + e)[0][-1] - planar_forward(nf, z0 - e)[0][-1]) / (2 * h)
    assert logdet == pytest.approx(np.log(abs(np.linalg.det(J))), abs=1e-7)


def test_planar_reprojection_and_domain():
    rng = np.random.default_rng(8)
    for _ in range(20):
        u, w = 3 * rng.normal(size=4), rng.normal(size=4)
        assert w @ planar_reproject(u, w) > -1.0
    with pytest.raises(DomainError):
        PlanarFlowParams([-2.0], [1.0], 0.0, 1)


def test_planar_singular_map_raises():
    nf = PlanarFlowParams([-1.0], [1.0], 0.0, 1)
    with pytest.raises(FloatingPointError):
        planar_forward(nf, np.zeros(1))


def test_iwae_single_sample_is_vanilla():
    model, data, theta = instance()
    rng = np.random.default_rng(9)
    mf = MeanFieldParams(rng.normal(size=2), rng.uniform(0.2, 1.0, 2))
    prior = MeanFieldPrior(2)
    noise = rng.normal(size=(1, 40, 2))
    b = iwae_bound(model, data, theta, prior, prior.phi_from(mf), 1, noise)
    v = vanilla_elbo(model, data, theta, mf, noise[0])
    assert np.allclose(b, v.value, atol=1e-12)


def test_iwae_exact_posterior_is_exact():
    model, data, theta = instance(3, 30)
    prior = MeanFieldPrior(3)
    phi = prior.phi_from(exact_mf(model, data, theta))
    noise = np.random.default_rng(10).normal(size=(7, 100, 3))
    b = iwae_bound(model, data, theta, prior, phi, 7, noise)
    assert np.max(np.abs(b - model.exact_log_marginal(theta, data))) < 1e-8


def test_iwae_tightens_with_more_samples():
    model, data, theta = instance()
    prior = StandardNormalPrior(2)
    rng = np.random.default_rng(11)
    b1 = iwae_bound(model, data, theta, prior, None, 1, rng.normal(size=(1, 10_000, 2)))
    b10 = iwae_bound(model, data, theta, prior, None, 10, rng.normal(size=(10, 10_000, 2)))
    se = np.sqrt(b1.var() / b1.size + b10.var() / b10.size)
    assert b10.mean() >= b1.mean() - 3 * se
    assert b10.mean() <= model.exact_log_marginal(theta, data)


def test_nll_with_exact_posterior():
    model, data, theta = instance(2, 15)
    prop = MeanFieldProposal(exact_mf(model, data, theta))
    nll = importance_sampled_nll(model, data, theta, prop, 1000, np.random.default_rng(12))
    assert nll == pytest.approx(-model.exact_log_marginal(theta, data), abs=1e-8)


def test_nll_single_draw_is_negative_vanilla():
    model, data, theta = instance()
    mf = MeanFieldParams(np.array([0.2, 0.1]), np.array([0.3, 0.5]))
    nll = importance_sampled_nll(model, data, theta, MeanFieldProposal(mf), 1, np.random.default_rng(13))
    noise = np.random.default_rng(13).normal(size=(1, 2))
    assert nll == pytest.approx(-vanilla_elbo(model, data, theta, mf, noise).value[0], abs=1e-12)


def test_nll_proposals_are_consistent():
    model, data, theta = instance()
    exact = -model.exact_log_marginal(theta, data)
    mf = exact_mf(model, data, theta)
    broad = MeanFieldPrior(2).phi_from(MeanFieldParams(mf.mu, 2.0 * mf.var))
    props = [PriorProposal(MeanFieldPrior(2), broad),
             HISProposal(FlowConfig(3, [0.05, 0.05], FixedTempering(0.7)), MeanFieldPrior(2), broad),
             PlanarProposal(PlanarFlowParams([0.01, 0.0], [1.0, 0.0], 0.0, 2), MeanFieldPrior(2), broad)]
    for prop in props:
        vals = [importance_sampled_nll(model, data, theta, prop, 4000, np.random.default_rng(s)) for s in range(3)]
        assert np.std(vals) < 0.05
        assert np.mean(vals) == pytest.approx(exact, abs=0.05)


def test_log_mean_exp_is_stable():
    a = np.array([1000.0, 1000.0])
    assert log_mean_exp(a) == pytest.approx(1000.0)
    assert log_mean_exp(np.array([-1e4, -1e4 + np.log(3.0)])) == pytest.approx(-1e4 + np.log(2.0))


def test_importance_weights_at_prior():
    model, data, theta = instance()
    noise = np.random.default_rng(14).normal(size=(5, 2))
    w = importance_log_weights(model, data, theta, StandardNormalPrior(2), None, noise)
    expect = model.log_joint(theta, data, noise) + 0.5 * np.sum(noise**2, axis=-1) + np.log(2 * np.pi)
    assert np.allclose(w, expect)


def test_replicate_dump(tmp_path):
    write_replicates(tmp_path / "r.csv", {"his": [1.0, 2.0], "vb": np.array([[3.0]])})
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines == ["replicate,estimator,value", "0,his,1.0", "1,his,2.0", "0,vb,3.0"]


def test_his_noise_shapes():
    n = draw_his_noise(np.random.default_rng(0), 3, (4, 5), noise_dim=2)
    assert isinstance(n, HISNoise) and n.z.shape == (4, 5, 2) and n.gamma.shape == (4, 5, 3)


def test_free_tempering_near_one_matches_untempered():
    model, data, theta = instance()
    noise = draw_his_noise(np.random.default_rng(15), 2, 20)
    a = his_elbo(model, data, theta, FlowConfig(4, [0.05, 0.05], FreeTempering((1.0,) * 4)), StandardNormalPrior(2),
                 None, noise)
    b = his_elbo(model, data, theta, FlowConfig(4, [0.05, 0.05]), StandardNormalPrior(2), None, noise)
    assert np.array_equal(a.value, b.value)
