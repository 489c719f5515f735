"""Out-of-distribution behaviour on the two-cluster 2D toy problem.

Trains GPR, SNGP and a deep ensemble on the two training clusters and
compares the mean predictive std on held-out in-distribution points with
the std on a far-away cluster. Uncertainty maps are written as CSV.

Run: python demos/toy2d_ood.py [output_dir]
"""

import sys
from pathlib import Path

from uqml import data, ensemble, gpr, sngp
from uqml.kernels import KernelSpec
from uqml.nnet import TrainConfig, resnet_spec
from uqml.numerics import make_rng

out = Path(sys.argv[1] if len(sys.argv) > 1 else "toy2d_maps")
out.mkdir(parents=True, exist_ok=True)

train = data.gen_toy_2d_clusters(400, seed=0)
ood = data.gen_ood_cluster(200, seed=0)
held = data.gen_toy_2d_clusters(100, seed=1)
sds, rec = data.standardize(train)
Xo, Xh = rec.apply_x(ood.X), rec.apply_x(held.X)
grid = data.grid2d(resolution=60)
Zg = rec.apply_x(grid)

models = {}
models["gpr"] = lambda X, m=gpr.fit(sds.X, sds.y, KernelSpec.squared_exponential(), 0.1, restarts=2, rng=make_rng(0)): gpr.predict(m, X)
snet = sngp.sngp_fit(resnet_spec(2, width=64, blocks=2, output="scalar", gamma=0.9), sds.X, sds.y,
                     m=512, config=TrainConfig(lr=3e-3, epochs=60, seed=0))
models["sngp"] = lambda X: sngp.sngp_predict(snet, X)
ens = ensemble.train_ensemble(resnet_spec(2, width=32, blocks=2), sds.X, sds.y, 5,
                              TrainConfig(lr=3e-3, epochs=40, loss="nll"), master_seed=0)
models["ensemble"] = lambda X: ensemble.ensemble_predict(ens, X)

print(f"{'method':10s} {'in-dist std':>12s} {'OOD std':>10s} {'ratio':>8s}")
for name, predict in models.items():
    s_in, s_out = predict(Xh).std.mean(), predict(Xo).std.mean()
    print(f"{name:10s} {s_in:12.4f} {s_out:10.4f} {s_out / s_in:8.2f}")
    p = predict(Zg).scaled(rec.y_mean, rec.y_std)
    data.write_table(out / f"{name}_map.csv", {"x1": grid[:, 0], "x2": grid[:, 1], "mean": p.mean, "std": p.std})
print(f"maps written to {out}/")
