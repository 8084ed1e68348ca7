# %% [markdown]
# # Recovering the latent dimensionality of synthetic data
#
# Four latent factors are mapped linearly into 25 observed dimensions with a
# little noise. Each model gets a budget of 12 latent dimensions; the ARD
# variants should switch off the ones the data does not need.

# %%
import numpy as np

from ardvae.analysis import relevance_report, weight_col_sq_norms
from ardvae.config import TrainConfig
from ardvae.data import synth_generate
from ardvae.numerics import RngStream
from ardvae.optim import train

data = synth_generate(4, 25, 5000, 0.05, rng=RngStream(1000))
print(data.X.shape, "top eigenvalues", np.round(np.sort(np.linalg.eigvalsh(np.cov(data.X.T)))[::-1][:6], 3))

# %%
common = dict(latent_dim=12, hidden_sizes=[64], iterations=5000, learning_rate=1.25e-3, batch_size=600,
              standardize="none", eval_every=0, seed=0)
results = {v: train(TrainConfig(variant=v, **common), data) for v in ("sgvb", "sgvb_ard", "gsgvb_ard")}

# %%
for variant, res in results.items():
    rep = relevance_report(res.state)
    print(f"{variant:>10}: bound {res.final_train.total:7.3f}  retained {rep.retained_count} of 12 ({rep.rule})")

# %% [markdown]
# The relevance table for SGVB-ARD: dead dimensions have posterior mass
# mu^2 + sigma^2 near zero and their prior variance lambda follows.

# %%
print(relevance_report(results["sgvb_ard"].state).table())

# %% [markdown]
# Plain SGVB has no relevance weights, but it can still shut a dimension off by
# shrinking the decoder weights that read it.

# %%
norms = weight_col_sq_norms(results["sgvb"].state.decoder)
print(np.round(norms / norms.max(), 4))

# %% [markdown]
# The retained count over training: pruning happens early and then holds.

# %%
trace = [m.retained_count for m in results["sgvb_ard"].metrics]
print(trace[::250])
