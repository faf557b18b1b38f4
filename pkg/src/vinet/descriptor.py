"""Per-joint trajectory descriptors and their spatial normalization.

One joint's heatmap frames are aggregated over time by a shared 3×3
convolution into a single descriptor map. A small localisation network
then regresses a 2×2 affine matrix per joint, a normalized sampling grid
is built from it, and the descriptor is resampled bilinearly. The same
filter and localisation weights are shared across all joints; each joint
still gets its own matrix because its descriptor passes through
independently.

Grid coordinates are corner-aligned: −1 maps to pixel 0 and +1 to pixel
H−1 (resp. W−1). Samples outside the image contribute zero.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .heatmaps import HEAT_MAX
from .nn import _promote
from .tensor import Parameter, Tensor

IDENTITY_THETA = np.array([1.0, 0.0, 0.0, 1.0])

__all__ = [
    "IDENTITY_THETA",
    "trajectory_descriptor",
    "base_grid",
    "affine_grid",
    "bilinear_sample",
    "LocalisationNet",
    "VTDM",
]


def trajectory_descriptor(clip_joint: Tensor, phi: Tensor, bias: Tensor | None = None) -> Tensor:
    """Aggregate one joint's T×H×W frames into an H×W map via 3×3 convolution.

    `phi` is the shared 1×T×3×3 filter (stride 1, pad 1 keeps spatial dims).
    A batched N×T×H×W input yields N×H×W.
    """
    out = nn.conv2d(clip_joint, phi, bias, stride=1, padding=1)
    if out.ndim == 3:
        return out.reshape(out.shape[1], out.shape[2])
    return out.reshape(out.shape[0], out.shape[2], out.shape[3])


def base_grid(height: int, width: int) -> np.ndarray:
    """Regular H×W lattice over [−1,1]², as (x, y) pairs in the last axis."""
    xs = np.linspace(-1.0, 1.0, width)
    ys = np.linspace(-1.0, 1.0, height)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def _theta_matrices(theta: Tensor):
    """View θ data as (N,2,2); returns (matrices, batched?)."""
    if theta.shape in ((4,), (2, 2)):
        return theta.data.reshape(1, 2, 2), False
    if theta.ndim == 2 and theta.shape[1] == 4:
        return theta.data.reshape(-1, 2, 2), True
    if theta.ndim == 3 and theta.shape[1:] == (2, 2):
        return theta.data, True
    raise ValueError(f"theta must be 4 values (or a batch of them), got shape {theta.shape}")


def affine_grid(theta: Tensor, height: int, width: int) -> Tensor:
    """Sampling grid: each base point (x_g, y_g) mapped through the 2×2 matrix.

    No translation component. Returns H×W×2 (or N×H×W×2 for batched θ).
    """
    matrices, batched = _theta_matrices(theta)
    n = matrices.shape[0]
    base = base_grid(height, width).reshape(-1, 2)  # (P,2) constant
    pts = np.einsum("pk,njk->npj", base, matrices)
    out_data = pts.reshape(n, height, width, 2)

    def bwd(g):
        if not theta.requires_grad:
            return
        gm = g.reshape(n, -1, 2)
        dth = np.einsum("npj,pk->njk", gm, base)
        theta._accumulate(dth.reshape(theta.shape))

    out = Tensor.from_op(out_data if batched else out_data[0], (theta,), bwd)
    return out


def bilinear_sample(image: Tensor, grid: Tensor) -> Tensor:
    """Sample an H×W image at grid coordinates by bilinear interpolation.

    Differentiable in both the image and the grid, so gradients reach θ.
    Accepts a batch: N×H×W image with N×H'×W'×2 grid.
    """
    img3, img_sq = _promote(image, 2)
    grid4, grid_sq = _promote(grid, 3)
    if grid4.shape[-1] != 2:
        raise ValueError(f"grid last axis must hold (x,y) pairs, got shape {grid.shape}")
    if img_sq != grid_sq or img3.shape[0] != grid4.shape[0]:
        raise ValueError(
            f"image batch {image.shape} does not match grid batch {grid.shape}"
        )
    n, h, w = img3.shape

    px = (grid4.data[..., 0] + 1.0) * (0.5 * (w - 1))
    py = (grid4.data[..., 1] + 1.0) * (0.5 * (h - 1))
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    wx = px - x0
    wy = py - y0

    flat = img3.data.reshape(n, h * w)

    def corner(xi, yi):
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        idx = np.where(valid, yi * w + xi, 0)
        vals = np.take_along_axis(flat, idx.reshape(n, -1), axis=1).reshape(xi.shape)
        return np.where(valid, vals, 0.0), valid, idx

    v00, m00, i00 = corner(x0, y0)
    v01, m01, i01 = corner(x0 + 1, y0)
    v10, m10, i10 = corner(x0, y0 + 1)
    v11, m11, i11 = corner(x0 + 1, y0 + 1)

    out_data = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11)

    def bwd(g):
        if img3.requires_grad:
            weights = (
                ((1 - wx) * (1 - wy), m00, i00),
                (wx * (1 - wy), m01, i01),
                ((1 - wx) * wy, m10, i10),
                (wx * wy, m11, i11),
            )
            offsets = np.arange(n)[:, None] * (h * w)
            gx = np.zeros(n * h * w)
            for wgt, mask, idx in weights:
                contrib = np.where(mask, g * wgt, 0.0).reshape(n, -1)
                gx += np.bincount(
                    (idx.reshape(n, -1) + offsets).ravel(),
                    weights=contrib.ravel(),
                    minlength=n * h * w,
                )
            img3._accumulate(gx.reshape(n, h, w))
        if grid4.requires_grad:
            dpx = g * ((1 - wy) * (v01 - v00) + wy * (v11 - v10)) * (0.5 * (w - 1))
            dpy = g * ((1 - wx) * (v10 - v00) + wx * (v11 - v01)) * (0.5 * (h - 1))
            grid4._accumulate(np.stack([dpx, dpy], axis=-1))

    out = Tensor.from_op(out_data, (img3, grid4), bwd)
    return out.reshape(out.shape[1], out.shape[2]) if img_sq else out


class LocalisationNet(nn.Module):
    """Regress the 4 affine parameters from one descriptor channel.

    conv(5×5,1→10), maxpool 2×2, ReLU, conv(5×5,10→10), maxpool 2×2, ReLU,
    FC(32), ReLU, FC(4). The final layer starts at zero weight with identity
    bias so training begins from the unwarped descriptor.
    """

    def __init__(self, height: int, width: int, *, rng):
        super().__init__()
        h2 = (height - 4) // 2 - 4
        w2 = (width - 4) // 2 - 4
        if h2 < 2 or w2 < 2:
            raise ValueError(
                f"descriptor {height}x{width} too small for the localisation network "
                f"(needs at least 14x14)"
            )
        self.height = height
        self.width = width
        self.conv1 = nn.Conv2d(1, 10, 5, rng=rng)
        self.conv2 = nn.Conv2d(10, 10, 5, rng=rng)
        self.pool = nn.MaxPool2d(2, 2)
        self.flat_features = 10 * (h2 // 2) * (w2 // 2)
        self.fc1 = nn.Linear(self.flat_features, 32, rng=rng)
        self.fc2 = nn.Linear(32, 4, rng=rng)
        self.fc2.weight.data[:] = 0.0
        self.fc2.bias.data[:] = IDENTITY_THETA

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (self.height, self.width):
            raise ValueError(
                f"localisation expects N×1×{self.height}×{self.width}, got {x.shape}"
            )
        # descriptors inherit the raw 0..255 heatmap scale and no norm layer
        # sits before this net; condition to O(1) or the theta head's
        # gradients are ~100x too large and one step scrambles the warp
        h = nn.relu(self.pool(self.conv1(x * (1.0 / HEAT_MAX))))
        h = nn.relu(self.pool(self.conv2(h)))
        h = h.reshape(x.shape[0], self.flat_features)
        return self.fc2(nn.relu(self.fc1(h)))


class VTDM(nn.Module):
    """Trajectory-descriptor module: temporal aggregation plus spatial transformer.

    With `stn_enabled` false the sampler is skipped entirely and the raw
    descriptors come back unchanged (the ablation configuration); the
    localisation parameters then see no gradient.
    """

    def __init__(self, clip_length: int = 16, height: int = 64, width: int = 64,
                 stn_enabled: bool = True, *, rng):
        super().__init__()
        self.clip_length = clip_length
        self.height = height
        self.width = width
        self.stn_enabled = stn_enabled
        self.phi = Parameter(nn.uniform_init(rng, (1, clip_length, 3, 3), clip_length * 9))
        self.phi_bias = Parameter(np.zeros(1))
        self.localisation = LocalisationNet(height, width, rng=rng)

    def forward(self, clip: Tensor) -> Tensor:
        """J×T×H×W clip (or batch B×J×T×H×W) to J×H×W descriptors (or batch)."""
        c5, squeezed = _promote(clip, 4)
        b, j, t, h, w = c5.shape
        if t != self.clip_length:
            raise ValueError(f"clip has {t} frames per joint, filter expects {self.clip_length}")
        if (h, w) != (self.height, self.width):
            raise ValueError(
                f"clip is {h}x{w}, module configured for {self.height}x{self.width}"
            )
        x = c5.reshape(b * j, t, h, w)
        lam = nn.conv2d(x, self.phi, self.phi_bias, stride=1, padding=1)  # (B·J,1,H,W)
        if self.stn_enabled:
            theta = self.localisation(lam)
            grid = affine_grid(theta, h, w)
            out = bilinear_sample(lam.reshape(b * j, h, w), grid)
        else:
            out = lam.reshape(b * j, h, w)
        out = out.reshape(b, j, h, w)
        return out.reshape(j, h, w) if squeezed else out

    def joint_thetas(self, clip: Tensor) -> Tensor:
        """Per-joint affine parameters for inspection; (B·J)×4."""
        c5, _ = _promote(clip, 4)
        b, j, t, h, w = c5.shape
        lam = nn.conv2d(c5.reshape(b * j, t, h, w), self.phi, self.phi_bias, stride=1, padding=1)
        return self.localisation(lam)
