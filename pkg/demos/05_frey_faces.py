# %% [markdown]
# # Frey Faces
#
# Needs the Frey Faces matrix (1965 images of 20x28 pixels) as a flat_f32 or
# CSV file; pass its path as the first argument. Trains SGVB and SGVB-ARD with
# 200 hidden units and 50 latent dimensions, then dumps a reconstruction.

# %%
import sys
from pathlib import Path

from ardvae.analysis import dump_reconstruction, relevance_report
from ardvae.config import preset
from ardvae.data import SplitSpec, Standardizer, load_matrix_file, split
from ardvae.optim import train

if len(sys.argv) < 2:
    sys.exit("usage: 05_frey_faces.py FREY_FILE [ITERATIONS]")
data = load_matrix_file(sys.argv[1])
iterations = int(sys.argv[2]) if len(sys.argv) > 2 else None

# %%
for name in ("frey_200h_50z_sgvb", "frey_200h_50z_ard"):
    cfg = preset(name)
    if iterations:
        cfg.iterations = iterations
    tr, te = split(data, SplitSpec(cfg.train_count, cfg.test_count, cfg.split_seed))
    scaler = Standardizer.fit(tr.X, cfg.standardize)
    tr.X, te.X = scaler.transform(tr.X), scaler.transform(te.X)
    res = train(cfg, tr, test_data=te)
    rep = relevance_report(res.state, cfg.retention_rule, cfg.retention_threshold)
    print(f"{name}: train {res.final_train.total:.2f}  test {res.final_test:.2f}  retained {rep.retained_count}")
    dump_reconstruction(res.state, te.X[0], (28, 20), Path(f"{name}_test0"), value_range=(0.0, 1.0))
