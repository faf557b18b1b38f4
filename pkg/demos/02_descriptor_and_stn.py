"""
Trajectory descriptors and the spatial transformer
==================================================

A clip is T frames of per-joint heatmaps. The descriptor squeezes the
time axis into one map per joint with a shared 1xTx3x3 convolution;
the spatial transformer then re-warps that map with a learned affine
so different camera views land on a common layout.

This script renders a toy trajectory, builds its descriptor, and warps
it with a few hand-picked thetas to show exactly what the sampler does.
"""

import numpy as np

from vinet.descriptor import (
    IDENTITY_THETA,
    affine_grid,
    bilinear_sample,
    trajectory_descriptor,
)
from vinet.synthetic import generate_canonical_motion, render_heatmaps
from vinet.tensor import Tensor

SIZE = 32

# one synthetic walking sequence, 16 frames, rendered at 32x32
motion = generate_canonical_motion("walk", score=0, style_seed=4, frames=16)
heat = render_heatmaps(motion.trajectories, SIZE, SIZE, sigma=2.0)
print("heatmap volume:", heat.shape, " peak:", heat.max())

# the descriptor is just a temporal conv; with an averaging filter it
# becomes a motion-history image you can reason about directly
joint = Tensor(heat[5].astype(np.float64))  # one joint, T x H x W
phi = Tensor(np.full((1, 16, 3, 3), 1.0 / (16 * 9)))
desc = trajectory_descriptor(joint, phi)
print("descriptor:", desc.shape, " mass:", float(desc.data.sum()))

# ---------------------------------------------------------------------
# warping: affine_grid maps a [-1,1]^2 lattice through a 2x2 matrix,
# bilinear_sample reads the image at those points
# ---------------------------------------------------------------------
image = desc

for name, theta in [
    ("identity", IDENTITY_THETA),
    ("zoom out x2", np.array([2.0, 0.0, 0.0, 2.0])),
    ("rotate ~30 deg", np.array([0.866, -0.5, 0.5, 0.866])),
    ("squash x (side view)", np.array([1.0 / 0.55, 0.0, 0.0, 1.0])),
]:
    grid = affine_grid(Tensor(theta.astype(float)), SIZE, SIZE)
    warped = bilinear_sample(image, grid)
    print(f"{name:22s} mass {float(warped.data.sum()):8.3f}  "
          f"max {float(warped.data.max()):.4f}")

# identity reproduces the image exactly; zooming out shrinks the
# content and pads with zeros, which is how off-grid points behave
grid = affine_grid(Tensor(IDENTITY_THETA.copy()), SIZE, SIZE)
warped = bilinear_sample(image, grid)
print("identity max abs error:", np.abs(warped.data - image.data).max())

# ---------------------------------------------------------------------
# why this helps: another camera sees an affinely warped copy of the
# same trajectories, and one warp by the sampler undoes it. Note the
# convention: the sampler reads the input AT theta times the output
# point, so content moves by the inverse of theta -- to undo a view
# with matrix A, theta is A itself. The localisation net regresses
# exactly this correction from the descriptor alone.
# ---------------------------------------------------------------------
angle = np.radians(25.0)
rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
rotated_traj = motion.trajectories @ rot.T + (np.array([0.5, 0.5]) - rot @ [0.5, 0.5])
view = render_heatmaps(rotated_traj, SIZE, SIZE, sigma=2.0)

# whole-figure motion envelope: sum the per-joint time means
frontal = heat.astype(np.float64).mean(axis=1).sum(axis=0)
view_desc = Tensor(view.astype(np.float64).mean(axis=1).sum(axis=0))

unrotate = affine_grid(Tensor(rot.reshape(-1).copy()), SIZE, SIZE)
restored = bilinear_sample(view_desc, unrotate)

err_raw = np.abs(view_desc.data - frontal).sum()
err_restored = np.abs(restored.data - frontal).sum()
print(f"L1 gap to frontal: rotated view {err_raw:.3f} -> after counter-warp "
      f"{err_restored:.3f}  (total mass {frontal.sum():.1f})")

# a rotation is the clean case: it keeps areas and round blobs round.
# Foreshortened views are harder -- the renderer draws round Gaussians
# at squashed positions, so counter-stretching fixes the arrangement
# but widens every blob and its mass by 1/det(A). The scorer's conv
# stack absorbs that residue; an L1 template match would not.
