"""Synthetic multi-view movement corpus generator.

Each sample is a 15-joint stick figure performing a periodic movement
(walk-like or sit-stand-like) in a canonical unit frame. Quality score q
blends the trajectory linearly from the nominal pattern (q=0) toward a
fully degraded variant of the same subject's pattern (reduced amplitude,
left/right asymmetry, tremor), so the deviation statistic grows exactly
linearly in q for a fixed seed. Views are 2D affine maps of the canonical
frame (the invariance hypothesis under test): near-frontal rotations plus
horizontally foreshortened side views, optionally jittered per sample.
Heatmaps are isotropic Gaussians (peak 1) rendered per joint and frame.

Joint order follows the first 15 body keypoints of the common 25-point
pose layout: nose, neck, R/L shoulder-elbow-wrist, mid hip, R/L
hip-knee-ankle.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .heatmaps import ManifestEntry, save_sequence, write_manifest

NUM_JOINTS = 15
FAMILIES = ("walk", "sit_stand")

NOSE, NECK = 0, 1
R_SHOULDER, R_ELBOW, R_WRIST = 2, 3, 4
L_SHOULDER, L_ELBOW, L_WRIST = 5, 6, 7
MID_HIP = 8
R_HIP, R_KNEE, R_ANKLE = 9, 10, 11
L_HIP, L_KNEE, L_ANKLE = 12, 13, 14

__all__ = [
    "NUM_JOINTS",
    "FAMILIES",
    "CanonicalMotion",
    "ViewTransform",
    "DatasetSpec",
    "generate_canonical_motion",
    "deviation",
    "base_view",
    "apply_view_transform",
    "render_heatmaps",
    "generate_dataset",
]


@dataclass(frozen=True)
class CanonicalMotion:
    """Per-joint 2D trajectories in the canonical unit frame."""

    trajectories: np.ndarray  # J×F×2, (x, y) in roughly [0,1]²
    score: int
    family: str
    style_seed: int

    @property
    def num_frames(self) -> int:
        return self.trajectories.shape[1]


@dataclass(frozen=True)
class ViewTransform:
    """2D affine view: p' = A·p + t."""

    matrix: np.ndarray  # 2×2
    translation: np.ndarray  # 2
    view_id: int

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if self.matrix.shape != (2, 2) or self.translation.shape != (2,):
            raise ValueError("view transform needs a 2x2 matrix and a 2-vector")
        det = float(np.linalg.det(self.matrix))
        if det <= 0.1:
            raise ValueError(f"view transform is degenerate: det(A)={det:.4f} <= 0.1")


@dataclass(frozen=True)
class DatasetSpec:
    """Corpus layout and rendering parameters."""

    subjects: int = 20
    views: int = 6
    repetitions: int = 1
    max_score: int = 4
    frame_range: tuple = (64, 128)
    height: int = 64
    width: int = 64
    sigma: float = 2.0
    seed: int = 0
    family: str = "walk"
    frontal_views: int = 3
    view_jitter: bool = True
    occlusion: bool = False

    def __post_init__(self):
        object.__setattr__(self, "frame_range", tuple(self.frame_range))
        for name in ("subjects", "views", "repetitions", "max_score", "height", "width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        lo, hi = self.frame_range
        if lo < 16 or hi < lo:
            raise ValueError(f"frame_range must satisfy 16 <= lo <= hi, got {self.frame_range}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown motion family {self.family!r}, expected one of {FAMILIES}")
        if not 0 <= self.frontal_views <= self.views:
            raise ValueError("frontal_views must lie in [0, views]")

    @property
    def sample_count(self) -> int:
        return self.subjects * (self.max_score + 1) * self.repetitions * self.views


# ---------------------------------------------------------------------------
# canonical motion
# ---------------------------------------------------------------------------

# base standing pose: (x offset from body axis, y with 0 at top of frame)
_BASE_POSE = np.array(
    [
        (0.000, 0.160),  # nose
        (0.000, 0.240),  # neck
        (0.075, 0.270), (0.100, 0.385), (0.110, 0.500),  # right arm
        (-0.075, 0.270), (-0.100, 0.385), (-0.110, 0.500),  # left arm
        (0.000, 0.550),  # mid hip
        (0.050, 0.555), (0.055, 0.720), (0.060, 0.890),  # right leg
        (-0.050, 0.555), (-0.055, 0.720), (-0.060, 0.890),  # left leg
    ]
)


def _style_params(rng: np.random.Generator, family: str) -> dict:
    p = {
        "limb_scale": rng.uniform(0.9, 1.1),
        "phase0": rng.uniform(0.0, 2 * math.pi),
        "cycles_per_96": rng.uniform(2.5, 4.5) if family == "walk" else rng.uniform(1.2, 2.2),
        "sway": rng.uniform(0.010, 0.020),
        "bob": rng.uniform(0.008, 0.016),
    }
    if family == "walk":
        stride = rng.uniform(0.10, 0.14)
        p.update(
            stride_r=stride,
            stride_l=stride,
            lift=rng.uniform(0.015, 0.025),
            arm=rng.uniform(0.05, 0.08),
            phase_l=math.pi,  # legs in anti-phase
        )
    else:
        p.update(
            drop=rng.uniform(0.16, 0.22),
            bend_r=rng.uniform(0.04, 0.06),
            bend_l=rng.uniform(0.04, 0.06),
            reach=rng.uniform(0.02, 0.04),
        )
    return p


def _degraded_params(p: dict, rng: np.random.Generator, family: str) -> dict:
    # degradation leans on cues no affine map can fake (tremor fuzz, L/R
    # asymmetry, broken phase); amplitude losses stay mild so low quality
    # never just looks like a foreshortened camera
    d = dict(p)
    d["sway"] = p["sway"] * rng.uniform(1.8, 2.6)  # instability
    d["bob"] = p["bob"] * rng.uniform(1.4, 2.0)
    if family == "walk":
        d["stride_r"] = p["stride_r"] * rng.uniform(0.40, 0.60)  # shuffling gait
        d["stride_l"] = d["stride_r"] * rng.uniform(0.45, 0.75)  # asymmetric
        d["lift"] = p["lift"] * rng.uniform(0.4, 0.7)
        d["arm"] = p["arm"] * rng.uniform(0.25, 0.5)
        d["phase_l"] = math.pi + rng.uniform(0.3, 0.7)  # broken coordination
    else:
        d["drop"] = p["drop"] * rng.uniform(0.55, 0.75)  # incomplete sit
        d["bend_l"] = p["bend_l"] * rng.uniform(0.3, 0.6)
        d["reach"] = p["reach"] * rng.uniform(1.5, 2.5)  # compensating arms
        d["cycles_per_96"] = p["cycles_per_96"] * rng.uniform(0.7, 0.9)  # slowed
    return d


def _build_trajectories(family: str, p: dict, frames: int) -> np.ndarray:
    s = p["limb_scale"]
    pose = _BASE_POSE.copy()
    pose[:, 0] *= s
    pose[:, 1] = 0.55 + (pose[:, 1] - 0.55) * s
    pose[:, 0] += 0.5

    # cycle count scales with duration: longer recordings show more cycles
    t = np.arange(frames)
    phi = 2 * math.pi * p["cycles_per_96"] * t / 96.0 + p["phase0"]

    traj = np.repeat(pose[:, None, :], frames, axis=1)  # J×F×2

    if family == "walk":
        swing_r = np.sin(phi)
        swing_l = np.sin(phi + p["phase_l"])
        traj[R_ANKLE, :, 0] += p["stride_r"] * swing_r
        traj[R_KNEE, :, 0] += 0.55 * p["stride_r"] * swing_r
        traj[R_HIP, :, 0] += 0.15 * p["stride_r"] * swing_r
        traj[L_ANKLE, :, 0] += p["stride_l"] * swing_l
        traj[L_KNEE, :, 0] += 0.55 * p["stride_l"] * swing_l
        traj[L_HIP, :, 0] += 0.15 * p["stride_l"] * swing_l
        traj[R_ANKLE, :, 1] -= p["lift"] * np.maximum(0.0, swing_r)
        traj[L_ANKLE, :, 1] -= p["lift"] * np.maximum(0.0, swing_l)
        traj[R_KNEE, :, 1] -= 0.5 * p["lift"] * np.maximum(0.0, swing_r)
        traj[L_KNEE, :, 1] -= 0.5 * p["lift"] * np.maximum(0.0, swing_l)
        # arms counter-swing the legs
        traj[R_WRIST, :, 0] -= p["arm"] * swing_r
        traj[R_ELBOW, :, 0] -= 0.5 * p["arm"] * swing_r
        traj[L_WRIST, :, 0] -= p["arm"] * swing_l
        traj[L_ELBOW, :, 0] -= 0.5 * p["arm"] * swing_l
    else:
        crouch = 0.5 * (1.0 - np.cos(phi))
        drop = p["drop"]
        upper = (NOSE, NECK, R_SHOULDER, L_SHOULDER)
        arms = (R_ELBOW, R_WRIST, L_ELBOW, L_WRIST)
        for j in (MID_HIP, R_HIP, L_HIP):
            traj[j, :, 1] += drop * crouch
        for j in upper:
            traj[j, :, 1] += 0.95 * drop * crouch
        for j in arms:
            traj[j, :, 1] += 0.80 * drop * crouch
        traj[R_KNEE, :, 0] += p["bend_r"] * crouch
        traj[L_KNEE, :, 0] -= p["bend_l"] * crouch
        traj[R_KNEE, :, 1] += 0.45 * drop * crouch
        traj[L_KNEE, :, 1] += 0.45 * drop * crouch
        traj[R_WRIST, :, 0] += p["reach"] * crouch
        traj[L_WRIST, :, 0] -= p["reach"] * crouch

    # whole-body sway and bob
    traj[:, :, 0] += p["sway"] * np.sin(phi)[None, :]
    traj[:, :, 1] += p["bob"] * 0.5 * np.cos(2 * phi)[None, :]
    return traj


def generate_canonical_motion(
    family: str, score: int, style_seed: int, frames: int, max_score: int = 4
) -> CanonicalMotion:
    """Deterministic canonical trajectories for one (subject, repetition, score).

    Score 0 is the nominal pattern; the trajectory moves linearly toward the
    fully degraded pattern (plus tremor) as score grows, so deviation from
    nominal is proportional to score/max_score for a fixed seed.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown motion family {family!r}, expected one of {FAMILIES}")
    if not 0 <= score <= max_score:
        raise ValueError(f"score {score} outside 0..{max_score}")
    style_rng = np.random.default_rng([style_seed, 1])
    params = _style_params(style_rng, family)
    nominal = _build_trajectories(family, params, frames)

    degrade_rng = np.random.default_rng([style_seed, 2])
    worst = _build_trajectories(family, _degraded_params(params, degrade_rng, family), frames)
    tremor = degrade_rng.normal(0.0, degrade_rng.uniform(0.045, 0.065), size=nominal.shape)
    # clip the degraded endpoint, not the blend: both endpoints then sit in
    # the unit frame, so every blend does too and deviation stays exactly
    # proportional to q
    worst = np.clip(worst + tremor, 0.0, 1.0)
    delta = worst - nominal

    traj = nominal + (score / max_score) * delta
    return CanonicalMotion(trajectories=traj, score=score, family=family, style_seed=style_seed)


def deviation(motion: CanonicalMotion, reference: CanonicalMotion) -> float:
    """Mean joint-wise L2 distance between two motions (frames must match)."""
    if motion.trajectories.shape != reference.trajectories.shape:
        raise ValueError("motions have different shapes")
    diff = motion.trajectories - reference.trajectories
    return float(np.sqrt((diff**2).sum(axis=-1)).mean())


# ---------------------------------------------------------------------------
# views
# ---------------------------------------------------------------------------


def _rotation(degrees: float) -> np.ndarray:
    a = math.radians(degrees)
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def _center_fixing_translation(matrix: np.ndarray) -> np.ndarray:
    center = np.array([0.5, 0.5])
    return center - matrix @ center


def base_view(view_id: int, frontal_views: int = 3, views: int = 6) -> ViewTransform:
    """Deterministic base transform for one camera.

    The first `frontal_views` ids are rotations spread over ±8° (a middle id
    sits at 0°); the rest compress x by 0.55–0.75 to mimic side foreshortening.
    """
    if not 0 <= view_id < views:
        raise ValueError(f"view_id {view_id} outside 0..{views - 1}")
    if view_id < frontal_views:
        span = frontal_views - 1
        angle = 0.0 if span == 0 else -8.0 + 16.0 * view_id / span
        matrix = _rotation(angle)
    else:
        side = views - frontal_views
        idx = view_id - frontal_views
        span = side - 1
        sx = 0.55 + (0.20 * idx / span if span else 0.10)
        angle = 0.0 if span == 0 else -4.0 + 8.0 * idx / span
        matrix = _rotation(angle) @ np.diag([sx, 1.0])
    return ViewTransform(matrix=matrix, translation=_center_fixing_translation(matrix),
                         view_id=view_id)


def _jittered_view(base: ViewTransform, rng: np.random.Generator) -> ViewTransform:
    # x-scale jitter deliberately dips into the foreshortening range so a
    # single camera's sessions already span compressions like the side views;
    # a localisation net trained on one view then interpolates, not extrapolates
    matrix = (
        _rotation(rng.uniform(-6.0, 6.0))
        @ np.diag([rng.uniform(0.55, 1.15), rng.uniform(0.85, 1.15)])
        @ base.matrix
    )
    translation = _center_fixing_translation(matrix) + rng.uniform(-0.02, 0.02, size=2)
    return ViewTransform(matrix=matrix, translation=translation, view_id=base.view_id)


def apply_view_transform(motion: CanonicalMotion, view: ViewTransform) -> np.ndarray:
    """Exact affine projection p' = A·p + t of every joint position."""
    if float(np.linalg.det(view.matrix)) <= 0.1:
        raise ValueError("view transform is degenerate")
    return motion.trajectories @ view.matrix.T + view.translation


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def render_heatmaps(trajectories: np.ndarray, height: int, width: int, sigma: float) -> np.ndarray:
    """Isotropic Gaussian (peak 1, std `sigma` pixels) per joint and frame.

    Unit-frame coordinates map corner-aligned onto the raster: x=0 to column
    0, x=1 to column W−1 (same for y/rows). Off-raster joints leave only the
    tail that falls inside.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    trajectories = np.asarray(trajectories, dtype=np.float64)
    j, f, _ = trajectories.shape
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)
    inv = 1.0 / (2.0 * sigma * sigma)
    out = np.empty((j, f, height, width), dtype=np.float32)
    for joint in range(j):
        px = trajectories[joint, :, 0] * (width - 1)
        py = trajectories[joint, :, 1] * (height - 1)
        ex = np.exp(-((cols[None, :] - px[:, None]) ** 2) * inv)  # F×W
        ey = np.exp(-((rows[None, :] - py[:, None]) ** 2) * inv)  # F×H
        out[joint] = np.einsum("fh,fw->fhw", ey, ex).astype(np.float32)
    return out


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------


def _child_seed(*key) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1, dtype=np.uint64)[0])


def generate_dataset(spec: DatasetSpec, out_dir) -> dict:
    """Write the full corpus: sequence files, manifest, generator metadata.

    One canonical motion per (subject, repetition, score) is shared by all of
    that subject-repetition's views; every view applies its own affine map.
    Deterministic from spec.seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    motions_meta = {}
    samples_meta = []

    for subject in range(spec.subjects):
        for rep in range(spec.repetitions):
            style_seed = _child_seed(spec.seed, 101, subject, rep)
            frame_rng = np.random.default_rng([spec.seed, 202, subject, rep])
            frames = int(frame_rng.integers(spec.frame_range[0], spec.frame_range[1] + 1))
            for score in range(spec.max_score + 1):
                motion = generate_canonical_motion(
                    spec.family, score, style_seed, frames, spec.max_score
                )
                motion_key = f"s{subject:02d}_r{rep}_q{score}"
                motions_meta[motion_key] = {
                    "style_seed": style_seed,
                    "frames": frames,
                    "trajectories": motion.trajectories.tolist(),
                }
                for view in range(spec.views):
                    vt = base_view(view, spec.frontal_views, spec.views)
                    if spec.view_jitter:
                        vrng = np.random.default_rng(
                            [spec.seed, 303, subject, rep, score, view]
                        )
                        vt = _jittered_view(vt, vrng)
                    projected = apply_view_transform(motion, vt)
                    volume = render_heatmaps(projected, spec.height, spec.width, spec.sigma)
                    if spec.occlusion:
                        orng = np.random.default_rng(
                            [spec.seed, 404, subject, rep, score, view]
                        )
                        joint = int(orng.integers(NUM_JOINTS))
                        span = int(orng.integers(frames // 8, frames // 3 + 1))
                        start = int(orng.integers(0, frames - span + 1))
                        volume[joint, start : start + span] = 0.0
                    name = f"s{subject:02d}_q{score}_r{rep}_v{view}.vihm"
                    try:
                        save_sequence(out / name, volume)
                    except OSError as e:
                        raise OSError(f"failed writing {out / name}: {e}") from e
                    entries.append(
                        ManifestEntry(
                            path=name,
                            subject_id=subject,
                            view_id=view,
                            score=score,
                            action_tag=spec.family,
                        )
                    )
                    samples_meta.append(
                        {
                            "path": name,
                            "motion": motion_key,
                            "view_id": view,
                            "matrix": vt.matrix.tolist(),
                            "translation": vt.translation.tolist(),
                        }
                    )

    manifest_path = out / "manifest.json"
    write_manifest(manifest_path, entries, extra={"generator": _spec_dict(spec)})
    metadata_path = out / "generator_meta.json"
    metadata_path.write_text(
        json.dumps(
            {"spec": _spec_dict(spec), "motions": motions_meta, "samples": samples_meta}
        )
    )
    return {
        "manifest": str(manifest_path),
        "metadata": str(metadata_path),
        "files": len(entries),
    }


def _spec_dict(spec: DatasetSpec) -> dict:
    d = asdict(spec)
    d["frame_range"] = list(spec.frame_range)
    return d
