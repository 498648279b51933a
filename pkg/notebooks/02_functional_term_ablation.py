"""
What the functional term adds
=============================

Inside a structurally flat brain, the T1 image carries no alignment signal;
only the fMRI parcels differ. Registering with and without the local-FC
term shows how much of that functional structure each run recovers.
"""

# %%
import numpy as np

from fcreg.funcconn import FCConfig
from fcreg.objective import LossWeights, Objective, OptimizerConfig, register
from fcreg.pipeline.phantom import PhantomSpec, make_phantom

ph = make_phantom(PhantomSpec(size=(24, 24, 24), timepoints=20, seed=0, max_displacement=3.0,
                              n_regions=12, noise_std=0.2, flat_interior=True))
inside = ph.mask.inside
cfg = FCConfig(w=5)
opt = OptimizerConfig(learning_rate=0.05, iterations=150)

# %%
for lam in (0.0, 0.01):
    w8 = LossWeights(lam=lam, gamma=0.01 / inside.size)
    field, hist = register(ph.fixed_t1, ph.moving_t1, ph.fixed_fmri, ph.moving_fmri, w8, cfg, opt)
    final = Objective(ph.fixed_t1, ph.moving_t1, ph.fixed_fmri, ph.moving_fmri, w8, cfg).loss(field.vectors)
    epe = np.linalg.norm(field.vectors - ph.truth.vectors, axis=-1)[inside].mean()
    print(f"lambda={lam:<5} FC distance {hist[0].f_sim:.4f} -> {final.f_sim:.4f}   EPE {epe:.3f}")

# %% [markdown]
# With the term switched on the FC distance drops several-fold and the
# endpoint error improves too: the functional parcels pull the interior into
# place where the anatomy cannot.
