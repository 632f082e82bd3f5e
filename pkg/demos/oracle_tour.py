"""Walk through the finite-difference reference solver.

Builds the top-heated reference chip, checks it against the closed-form 1D
profile, then solves a GRF power map, checks the energy balance and writes a
top slice image.

    python demos/oracle_tour.py [out_dir]
"""
import os
import sys

import numpy as np

from deepoheat import presets
from deepoheat.evaluation import export_slice
from deepoheat.fdm import energy_balance, export_csv, solve_config
from deepoheat.grf import GrfSampler, GrfSpec, rescale_to_power

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
os.makedirs(out, exist_ok=True)

# uniform 2500 W/m² on top, convection below: T is linear in z
cfg = presets.experiment1_config("paper", power=np.ones((21, 21)))
field = solve_config(cfg)
z = cfg.mesh.node_coords()[..., 2]
print("uniform flux: max |T - (303.15 + 25000 z)| = %.2e K" % np.abs(field.values - (303.15 + 25000 * z)).max())

# a random power map
grid = rescale_to_power(GrfSampler(GrfSpec(21, 0.3), seed=0).sample(1)[0], 2.0)
cfg = cfg.with_surface_power("zmax", grid)
field = solve_config(cfg)
injected, outflow = energy_balance(cfg, field)
print("GRF map: T in [%.2f, %.2f] K, injected %.3e W, convected %.3e W"
      % (field.values.min(), field.values.max(), injected, outflow))

export_csv(field, os.path.join(out, "grf_field.csv"))
pgm, _ = export_slice(field, 2, cfg.mesh.counts[2] - 1, os.path.join(out, "grf_top"))
print("wrote", pgm)
