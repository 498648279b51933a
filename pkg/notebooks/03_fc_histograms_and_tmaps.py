"""
Local FC histograms and group t-maps
====================================

A look at the building blocks: the per-cube correlation histograms the loss
compares, and the one-sample t-map used to summarise a group.
"""

# %%
import numpy as np

from fcreg.evalsuite import one_sample_tmap, overlap_count, threshold_report, zscore_map
from fcreg.funcconn import FCConfig, bc_distance, fc_histograms
from fcreg.pipeline.phantom import PhantomSpec, make_phantom
from fcreg.volume import ScalarVolume

ph = make_phantom(PhantomSpec(size=(20, 20, 20), timepoints=24, seed=2, n_regions=6))
cfg = FCConfig(w=5)
fixed = fc_histograms(ph.fixed_fmri, cfg)
moving = fc_histograms(ph.moving_fmri, cfg)

# %% [markdown]
# Each cube's histogram counts voxel correlations with the cube centre over
# 21 bins on [-1, 1]. Cubes that the deformation disturbed the most show the
# largest Bhattacharyya distance.

# %%
dists = [bc_distance(a, b) for a, b in zip(fixed, moving)]
worst = int(np.argmax(dists))
print("cubes:", len(fixed), " mean distance %.4f" % np.mean(dists))
print("largest at centre", fixed[worst].center, "distance %.4f" % dists[worst])
print("fixed histogram :", np.round(fixed[worst].counts, 1))
print("moving histogram:", np.round(moving[worst].counts, 1))

# %% [markdown]
# Group statistics: ten noisy "subject" maps sharing one activated blob.

# %%
rng = np.random.default_rng(0)
x = np.arange(20.0)
blob = np.exp(-((x[:, None, None] - 10) ** 2 + (x[None, :, None] - 8) ** 2 + (x[None, None, :] - 12) ** 2) / 8)
subjects = [zscore_map(ScalarVolume(blob + 0.5 * rng.standard_normal(blob.shape))) for _ in range(10)]
tmap = one_sample_tmap(subjects)
rep = threshold_report(tmap, 3.0)
print(rep)

half = one_sample_tmap(subjects[:5])
print("voxels above 3 in both the full group and the first half:", overlap_count(tmap, 3.0, half, 3.0))
