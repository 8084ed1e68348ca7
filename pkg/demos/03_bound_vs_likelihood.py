# %% [markdown]
# # How tight is the bound?
#
# Train a small two-latent model, then compare the variational bound on held
# out points with an importance-sampled estimate of log p(x) that uses the
# encoder as proposal.

# %%
import numpy as np

from ardvae.config import TrainConfig
from ardvae.data import SplitSpec, split, synth_generate
from ardvae.models import importance_log_likelihood, per_point_bound
from ardvae.numerics import RngStream
from ardvae.optim import train

data = synth_generate(2, 5, 2200, 0.1, "tanh-mlp", seed=44)
tr, te = split(data, SplitSpec(2000, 200, seed=4))
cfg = TrainConfig(variant="sgvb", latent_dim=2, hidden_sizes=[32], learning_rate=3e-3, batch_size=100,
                  iterations=1500, seed=4, standardize="none", eval_every=0)
state = train(cfg, tr).state

# %%
x = te.X[:10]
bound = per_point_bound(state, x, RngStream(1), n_samples=5000)
ll, se = importance_log_likelihood(state, x, RngStream(2), n_samples=10_000)
for b, l, s in zip(bound, ll, se):
    print(f"bound {b:8.3f}   log p(x) {l:8.3f} +- {s:.3f}   gap {l - b:6.3f}")
