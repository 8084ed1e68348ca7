# %% [markdown]
# # Stopping and resuming a run
#
# Every random draw is keyed by its iteration number, so a run restored from a
# checkpoint continues exactly where it stopped.

# %%
import tempfile
from pathlib import Path

from ardvae.checkpoint import load_checkpoint, save_checkpoint
from ardvae.config import TrainConfig
from ardvae.data import synth_generate
from ardvae.numerics import RngStream
from ardvae.optim import Trainer

data = synth_generate(3, 8, 600, 0.1, seed=8)
cfg = TrainConfig(variant="sgvb_ard", latent_dim=4, hidden_sizes=[16], learning_rate=2e-3, batch_size=64,
                  iterations=200, seed=8, standardize="none", eval_every=0)

# %%
straight = Trainer(cfg, data, RngStream(cfg.seed))
straight.run()

first = Trainer(cfg, data, RngStream(cfg.seed))
first.run(until=120)
ckdir = Path(tempfile.mkdtemp()) / "ck"
save_checkpoint(ckdir, cfg, first.state, first.opt, first.loop)
print(sorted(p.name for p in ckdir.iterdir()))

# %%
ck = load_checkpoint(ckdir)
resumed = Trainer(ck.config, data, ck.rng(), state=ck.state, opt=ck.opt, loop=ck.loop)
resumed.run()
same = all(a.tobytes() == resumed.state.arrays()[k].tobytes() for k, a in straight.state.arrays().items())
print("resumed run matches the uninterrupted one bit for bit:", same)
