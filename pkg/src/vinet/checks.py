"""Curated self-check suite: oracles and invariants runnable from the CLI.

Each check is a small self-contained function that raises on failure; the
expected values come from independent routes (nested-loop convolution,
longhand rank correlation, closed-form losses) rather than from the library
code under test. The pytest tree covers far more ground; this suite is the
fast subset wired to `vinet check`.
"""

from __future__ import annotations

import math
import tempfile
from pathlib import Path

import numpy as np

from . import descriptor as dsc
from . import nn
from .heatmaps import ManifestEntry, load_sequence, save_sequence
from .model import build_model
from .protocol import evaluate_spearman, make_splits
from .scorer import ScorerConfig
from .synthetic import deviation, generate_canonical_motion
from .tensor import Tensor, backward

__all__ = ["CHECKS", "run_checks"]

_TOL = 1e-4


def _fd_sample(loss_fn, tensor, coords, h):
    """Central differences at selected flat coordinates."""
    out = []
    flat = tensor.data.reshape(-1)
    for c in coords:
        keep = flat[c]
        flat[c] = keep + h
        hi = float(loss_fn().data)
        flat[c] = keep - h
        lo = float(loss_fn().data)
        flat[c] = keep
        out.append((hi - lo) / (2 * h))
    return np.array(out)


def _check_grad(loss_fn, tensors, h=1e-4, max_coords=24, seed=0):
    loss = loss_fn()
    for t in tensors:
        t.grad = None
    backward(loss)
    rng = np.random.default_rng(seed)
    for t in tensors:
        assert t.grad is not None, "missing gradient"
        n = t.data.size
        coords = rng.choice(n, size=min(max_coords, n), replace=False)
        numeric = _fd_sample(loss_fn, t, coords, h)
        analytic = t.grad.reshape(-1)[coords]
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        assert err.max() < _TOL, f"gradient mismatch: rel err {err.max():.2e}"


def check_tensor_autodiff():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    y = Tensor(rng.normal(size=(3,)), requires_grad=True)
    _check_grad(lambda: ((x * y + (x**2)).exp().sum() / ((x * x).sum() + 5.0)), [x, y])


def check_conv2d_bruteforce():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 6, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    got = nn.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    n, co, kh, kw = 2, 4, 3, 3
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    oh = (6 + 2 - kh) // 2 + 1
    ow = (7 + 2 - kw) // 2 + 1
    want = np.zeros((n, co, oh, ow))
    for ni in range(n):
        for c in range(co):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[ni, :, i * 2 : i * 2 + kh, j * 2 : j * 2 + kw]
                    want[ni, c, i, j] = (patch * w[c]).sum() + b[c]
    assert np.abs(got - want).max() < 1e-10, "conv2d disagrees with nested loops"


def check_conv2d_grad():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(2, 2, 5, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    _check_grad(lambda: (nn.conv2d(x, w, b, padding=1) ** 2).sum(), [x, w, b])


def check_maxpool_bruteforce():
    rng = np.random.default_rng(9)
    x = rng.permutation(2 * 3 * 6 * 6).astype(np.float64).reshape(2, 3, 6, 6)
    got = nn.maxpool2d(Tensor(x), 2, 2).data
    want = np.zeros((2, 3, 3, 3))
    for n in range(2):
        for c in range(3):
            for i in range(3):
                for j in range(3):
                    want[n, c, i, j] = x[n, c, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max()
    assert np.array_equal(got, want), "maxpool2d disagrees with nested loops"


def check_batchnorm_grad():
    rng = np.random.default_rng(11)
    bn = nn.BatchNorm2d(3)
    x = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)

    def loss():
        bn.running_mean[:] = 0.0
        bn.running_var[:] = 1.0
        return (bn(x) ** 2).sum()

    _check_grad(loss, [x, bn.weight, bn.bias])


def check_cross_entropy_uniform():
    logits = Tensor(np.zeros((3, 5)))
    loss = nn.softmax_cross_entropy(logits, np.array([0, 2, 4]))
    assert abs(float(loss.data) - math.log(5.0)) < 1e-12, "uniform CE is not ln(S+1)"


def check_affine_grid_exactness():
    grid = dsc.affine_grid(Tensor(dsc.IDENTITY_THETA), 7, 5)
    assert np.array_equal(grid.data, dsc.base_grid(7, 5)), "identity grid drifted"
    rng = np.random.default_rng(13)
    t1 = rng.normal(size=(2, 2))
    t2 = rng.normal(size=(2, 2))
    composed = dsc.affine_grid(Tensor((t1 @ t2).ravel()), 6, 6).data
    via_points = dsc.affine_grid(Tensor(t2.ravel()), 6, 6).data @ t1.T
    assert np.abs(composed - via_points).max() < 1e-12, "grid composition not exact"


def check_bilinear_identity():
    rng = np.random.default_rng(15)
    img = rng.normal(size=(9, 7))
    grid = dsc.affine_grid(Tensor(dsc.IDENTITY_THETA), 9, 7)
    out = dsc.bilinear_sample(Tensor(img), grid)
    assert np.abs(out.data - img).max() < 1e-12, "identity sampling not exact"


def check_bilinear_linearity():
    rng = np.random.default_rng(17)
    im1 = rng.normal(size=(6, 6))
    im2 = rng.normal(size=(6, 6))
    grid = Tensor(rng.uniform(-1, 1, size=(4, 4, 2)))
    lhs = dsc.bilinear_sample(Tensor(1.7 * im1 - 0.3 * im2), grid).data
    rhs = (
        1.7 * dsc.bilinear_sample(Tensor(im1), grid).data
        - 0.3 * dsc.bilinear_sample(Tensor(im2), grid).data
    )
    assert np.abs(lhs - rhs).max() < 1e-12, "sampling is not linear in the image"


def check_sampler_grad_through_theta():
    rng = np.random.default_rng(19)
    img = Tensor(rng.normal(size=(8, 8)), requires_grad=True)
    theta = Tensor(np.array([0.93, 0.041, -0.037, 1.07]), requires_grad=True)

    def loss():
        grid = dsc.affine_grid(theta, 8, 8)
        return (dsc.bilinear_sample(img, grid) ** 2).sum()

    # finite differences are only valid away from the interpolation kinks
    px = (dsc.affine_grid(theta, 8, 8).data + 1.0) * 0.5 * 7
    clearance = np.abs(px - np.round(px)).min()
    assert clearance > 1e-3, f"probe sits on a kink (clearance {clearance:.1e})"
    _check_grad(loss, [img, theta])


def check_heatmap_round_trip():
    rng = np.random.default_rng(21)
    volume = rng.uniform(0.0, 1.0, size=(3, 5, 6, 4)).astype(np.float32)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "probe.vihm"
        save_sequence(path, volume)
        back = load_sequence(path)
        assert back.heatmaps.dtype == np.float32
        assert np.array_equal(back.heatmaps, volume), "round trip not bit-exact"


def check_spearman_longhand():
    rng = np.random.default_rng(23)
    for _ in range(10):
        p = rng.integers(0, 5, size=10).astype(float)
        t = rng.integers(0, 5, size=10).astype(float)
        if (p == p[0]).all() or (t == t[0]).all():
            continue
        # longhand: average ranks then Pearson by the textbook formula
        def ranks(v):
            r = np.empty(v.size)
            for i, x in enumerate(v):
                less = (v < x).sum()
                equal = (v == x).sum()
                r[i] = less + (equal + 1) / 2.0
            return r

        rp, rt = ranks(p), ranks(t)
        num = ((rp - rp.mean()) * (rt - rt.mean())).sum()
        den = math.sqrt(((rp - rp.mean()) ** 2).sum() * ((rt - rt.mean()) ** 2).sum())
        assert abs(evaluate_spearman(p, t) - num / den) < 1e-10, "rho mismatch"


def check_split_hygiene():
    entries = [
        ManifestEntry(path=f"s{s}_q{q}_v{v}", subject_id=s, view_id=v, score=q,
                      action_tag="walk")
        for s in range(6)
        for q in range(3)
        for v in range(4)
    ]
    for plan in make_splits(entries, "cross_subject", folds=3):
        plan.validate(entries)
    (plan,) = make_splits(entries, "cross_view", train_views=[1])
    plan.validate(entries)
    assert plan.test_views == (0, 2, 3)


def check_video_score_invariance():
    import types

    from .protocol import video_score
    from .heatmaps import MovementSample

    rows = np.random.default_rng(25).normal(size=(3, 5))

    def stub(r):
        r = np.asarray(r, dtype=np.float64)

        class _S:
            def __init__(self):
                self.vtdm = types.SimpleNamespace(clip_length=16)
                self.training = False

            def eval(self):
                pass

            def __call__(self, x):
                return Tensor(r[: x.data.shape[0]])

        return _S()

    vol = np.abs(np.random.default_rng(0).normal(size=(2, 48, 4, 4))).astype(np.float32)
    sample = MovementSample(heatmaps=vol, score=0, subject_id=0, view_id=0)
    base, _ = video_score(stub(rows), sample)
    shifted, _ = video_score(stub(rows + np.array([[3.0], [-1.0], [0.2]])), sample)
    scaled, _ = video_score(stub(2.0 * rows + 5.0), sample)
    assert base == shifted == scaled, "argmax invariance broken"


def check_generator_monotonicity():
    for family in ("walk", "sit_stand"):
        for seed in range(20):
            ref = generate_canonical_motion(family, 0, seed, 32)
            devs = [
                deviation(generate_canonical_motion(family, q, seed, 32), ref)
                for q in range(5)
            ]
            assert all(b > a for a, b in zip(devs, devs[1:])), (
                f"deviation not monotone for {family} seed {seed}"
            )


def check_end_to_end_gradient():
    rng = np.random.default_rng(27)
    model = build_model(
        ScorerConfig(input_channels=2, num_classes=3, stage_widths=(8,)),
        clip_length=4, height=16, width=16, seed=0,
    )
    # push theta off the identity so sampling coordinates avoid the kinks
    model.vtdm.localisation.fc2.bias.data[:] = [0.05, -0.04, 0.06, -0.05] + np.array(
        dsc.IDENTITY_THETA
    )
    x = Tensor(rng.uniform(0.0, 1.0, size=(1, 2, 4, 16, 16)))
    y = np.array([1])

    def loss():
        return nn.softmax_cross_entropy(model(x), y)

    probes = [model.vtdm.phi, model.msm.head.weight, model.msm.stem.weight]
    _check_grad(loss, probes, h=3e-6, max_coords=8)


CHECKS = [
    ("tensor-autodiff", check_tensor_autodiff),
    ("conv2d-bruteforce", check_conv2d_bruteforce),
    ("conv2d-gradient", check_conv2d_grad),
    ("maxpool-bruteforce", check_maxpool_bruteforce),
    ("batchnorm-gradient", check_batchnorm_grad),
    ("cross-entropy-uniform", check_cross_entropy_uniform),
    ("affine-grid-exactness", check_affine_grid_exactness),
    ("bilinear-identity", check_bilinear_identity),
    ("bilinear-linearity", check_bilinear_linearity),
    ("sampler-gradient-theta", check_sampler_grad_through_theta),
    ("heatmap-round-trip", check_heatmap_round_trip),
    ("spearman-longhand", check_spearman_longhand),
    ("split-hygiene", check_split_hygiene),
    ("video-score-invariance", check_video_score_invariance),
    ("generator-monotonicity", check_generator_monotonicity),
    ("end-to-end-gradient", check_end_to_end_gradient),
]


def run_checks(names=None) -> list:
    """Run all (or the named) checks; returns [(name, error message or None)]."""
    wanted = dict(CHECKS)
    if names:
        unknown = [n for n in names if n not in wanted]
        if unknown:
            raise ValueError(f"unknown check(s): {', '.join(unknown)}")
        selected = [(n, wanted[n]) for n in names]
    else:
        selected = CHECKS
    results = []
    for name, fn in selected:
        try:
            fn()
        except Exception as err:  # report, never abort the suite
            results.append((name, f"{type(err).__name__}: {err}"))
        else:
            results.append((name, None))
    return results
