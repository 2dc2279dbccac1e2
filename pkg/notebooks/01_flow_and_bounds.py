# %% [markdown]
# # Tempered leapfrog flow and its bounds
# A small conjugate Gaussian instance where the exact log marginal is known,
# so every estimator can be compared against the truth.

# %%
import numpy as np

from hamvi.estimators import draw_his_noise, his_elbo, his_elbo_rao_blackwell, iwae_bound, vanilla_elbo
from hamvi.experiment import generate_dataset
from hamvi.flow import FixedTempering, FlowConfig, quadratic_beta
from hamvi.models import GaussianModel, gaussian_exact_posterior, make_true_params
from hamvi.priors import MeanFieldParams, MeanFieldPrior
from hamvi.rng import make_rng

d = 2
model = GaussianModel(d)
data = generate_dataset(d, 10, 0)
theta = make_true_params(d).to_theta()
exact = model.exact_log_marginal(theta, data)
print("exact log p(D):", exact)

# %% [markdown]
# The fixed schedule rises quadratically from beta0 to 1.

# %%
K = 5
print(np.round(quadratic_beta(0.5, np.arange(K + 1), K), 4))

# %%
mean, cov = gaussian_exact_posterior(model.params(theta), data)
prior = MeanFieldPrior(d)
phi = prior.phi_from(MeanFieldParams(mean, 2.0 * cov))
cfg = FlowConfig(K, np.full(d, 0.1), FixedTempering(0.5))
rng = make_rng(1)
noise = draw_his_noise(rng, d, 20000)

bounds = {
    "vanilla": vanilla_elbo(model, data, theta, prior.params(phi), noise.z).value,
    "his": his_elbo(model, data, theta, cfg, prior, phi, noise).value,
    "his (rb)": his_elbo_rao_blackwell(model, data, theta, cfg, prior, phi, noise).value,
    "iwae L=5": iwae_bound(model, data, theta, prior, phi, 5, rng.standard_normal((5, 20000, d))),
}
for name, v in bounds.items():
    print(f"{name:>9}: gap {exact - v.mean():.4f}  sd {v.std():.4f}")
