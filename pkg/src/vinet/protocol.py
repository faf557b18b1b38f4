"""Clip-based training and video-level evaluation.

Training iterates randomly ordered fixed-length clips of the train-side
videos in small batches under a cross-entropy loss; scoring averages the raw
head outputs over all clips of a video and takes the argmax (a literal
max-over-clip-argmaxes variant is available as a config flag). Reported
metric is Spearman rank correlation between predicted and true scores.
Split construction covers cross-subject k-fold (k = number of score levels)
and cross-view (train on one view or a frontal/side pair, test on the rest).
"""

from __future__ import annotations

import csv
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .heatmaps import (
    ActionConfig,
    MovementSample,
    normalize_clip,
    read_frames,
    read_header,
    read_manifest,
    split_clips,
)
from .model import MovementQualityNet, build_model, trainable_parameters
from .nn import sgd_step, softmax_cross_entropy
from .scorer import ConfigurationError, ScorerConfig
from .tensor import Tensor, backward

__all__ = [
    "SplitError",
    "EvaluationError",
    "SCORING_RULES",
    "TrainConfig",
    "SplitPlan",
    "ScoreDistribution",
    "EvalReport",
    "TrainResult",
    "make_splits",
    "split_entries",
    "augment_temporal_crop",
    "augmentation_plan",
    "train",
    "video_score",
    "evaluate_spearman",
    "evaluate",
    "run_experiment",
    "run_grid",
]

SCORING_RULES = ("mean-logits", "max-clip-score")


class SplitError(ValueError):
    pass


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Protocol knobs; defaults follow the training recipe."""

    action: ActionConfig
    epochs: int = 20
    lr: float = 0.001
    batch_size: int = 5
    seed: int = 0
    stn_enabled: bool = True
    scoring_rule: str = "mean-logits"
    balance: bool = True

    def __post_init__(self):
        # epochs=0 is allowed: it returns the initialized model untouched
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        if self.scoring_rule not in SCORING_RULES:
            raise ConfigurationError(
                f"unknown scoring rule {self.scoring_rule!r}, expected one of {SCORING_RULES}"
            )


@dataclass(frozen=True)
class SplitPlan:
    kind: str  # "cross_subject" | "cross_view"
    train_ids: tuple
    test_ids: tuple
    fold_index: int = 0
    train_views: tuple = ()
    test_views: tuple = ()

    def validate(self, entries) -> None:
        """Assert split hygiene against the manifest the plan was built from."""
        train, test = set(self.train_ids), set(self.test_ids)
        if train & test:
            raise SplitError(f"{len(train & test)} sample(s) appear on both sides")
        by_id = {e.path: e for e in entries}
        missing = (train | test) - set(by_id)
        if missing:
            raise SplitError(f"plan references unknown sample(s): {sorted(missing)[:3]}")
        if self.kind == "cross_subject":
            shared = {by_id[i].subject_id for i in train} & {
                by_id[i].subject_id for i in test
            }
            if shared:
                raise SplitError(f"subjects {sorted(shared)} appear on both sides")
        elif self.kind == "cross_view":
            shared = {by_id[i].view_id for i in train} & {by_id[i].view_id for i in test}
            if shared:
                raise SplitError(f"views {sorted(shared)} appear on both sides")
        else:
            raise SplitError(f"unknown split kind {self.kind!r}")


def make_splits(entries, kind: str, *, folds: int | None = None, train_views=None) -> list:
    """Build hygienic train/test plans from manifest entries.

    cross_subject partitions subjects into k folds (default k = number of
    distinct scores) with every view on both sides; cross_view trains on the
    given view ids and tests on all others.
    """
    entries = list(entries)
    if not entries:
        raise SplitError("empty manifest")
    plans = []
    if kind == "cross_subject":
        subjects = sorted({e.subject_id for e in entries})
        k = folds if folds is not None else len({e.score for e in entries})
        if k < 2:
            raise SplitError(f"need at least 2 folds, got {k}")
        if len(subjects) < k:
            raise SplitError(f"{len(subjects)} subjects cannot fill {k} folds")
        groups = [list(g) for g in np.array_split(subjects, k)]
        for fold, held_out in enumerate(groups):
            held = set(held_out)
            train = tuple(e.path for e in entries if e.subject_id not in held)
            test = tuple(e.path for e in entries if e.subject_id in held)
            plans.append(SplitPlan("cross_subject", train, test, fold_index=fold))
    elif kind == "cross_view":
        if not train_views:
            raise SplitError("cross_view needs train_views")
        train_views = tuple(sorted(set(int(v) for v in train_views)))
        all_views = sorted({e.view_id for e in entries})
        unknown = set(train_views) - set(all_views)
        if unknown:
            raise SplitError(f"train views {sorted(unknown)} absent from manifest")
        test_views = tuple(v for v in all_views if v not in train_views)
        if not test_views:
            raise SplitError("no views left to test on")
        train = tuple(e.path for e in entries if e.view_id in train_views)
        test = tuple(e.path for e in entries if e.view_id in test_views)
        plans.append(
            SplitPlan(
                "cross_view", train, test, train_views=train_views, test_views=test_views
            )
        )
    else:
        raise SplitError(f"unknown split kind {kind!r}")
    for plan in plans:
        plan.validate(entries)
    return plans


def split_entries(entries, plan: SplitPlan) -> tuple:
    """Manifest entries for each side of a plan, in manifest order."""
    train, test = set(plan.train_ids), set(plan.test_ids)
    return (
        [e for e in entries if e.path in train],
        [e for e in entries if e.path in test],
    )


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def augment_temporal_crop(sample: MovementSample, count: int, seed, clip_length: int = 16):
    """`count` random contiguous crops of length >= clip_length, metadata kept."""
    frames = sample.heatmaps.shape[1]
    if frames <= clip_length:
        warnings.warn(
            f"sample {sample.sample_id}: {frames} frames cannot be cropped "
            f"(need > {clip_length}); returning no augmentations"
        )
        return []
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        length = int(rng.integers(clip_length, frames + 1))
        start = int(rng.integers(0, frames - length + 1))
        out.append(
            MovementSample(
                heatmaps=sample.heatmaps[:, start : start + length].copy(),
                score=sample.score,
                subject_id=sample.subject_id,
                view_id=sample.view_id,
                action_tag=sample.action_tag,
                sample_id=f"{sample.sample_id}#crop{i}",
            )
        )
    return out


def augmentation_plan(counts: dict) -> dict:
    """Crops needed per score to reach the majority-class count."""
    if not counts:
        return {}
    target = max(counts.values())
    return {score: target - n for score, n in counts.items() if n < target}


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _TrainVideo:
    path: str
    score: int
    start: int  # first frame of the (possibly cropped) window
    frames: int  # window length


def _train_videos(root, train_entries, clip_length: int, seed: int, balance: bool) -> list:
    videos = []
    for e in train_entries:
        frames = read_header(e.resolve(root))[1]
        if frames < clip_length:
            warnings.warn(f"skipping {e.path}: {frames} frames yield no clip")
            continue
        videos.append(_TrainVideo(str(e.resolve(root)), e.score, 0, frames))
    if not balance or not videos:
        return videos
    counts = Counter(v.score for v in videos)
    rng = np.random.default_rng([seed, 23])
    out = list(videos)
    for score, need in sorted(augmentation_plan(counts).items()):
        pool = [v for v in videos if v.score == score]
        for i in range(need):
            src = pool[i % len(pool)]
            if src.frames <= clip_length:
                out.append(src)  # too short to crop; plain duplicate keeps balance
                continue
            length = int(rng.integers(clip_length, src.frames + 1))
            start = int(rng.integers(0, src.frames - length + 1))
            out.append(_TrainVideo(src.path, score, start, length))
    return out


@dataclass
class TrainResult:
    model: MovementQualityNet
    loss_curve: list
    config: TrainConfig
    scorer_config: ScorerConfig


def train(root, entries, plan: SplitPlan, config: TrainConfig,
          scorer_config: ScorerConfig | None = None) -> TrainResult:
    """Train on the plan's train side; returns model plus per-epoch mean loss.

    Every epoch enumerates all clips of all (balanced) train videos in a
    seeded random order and steps SGD per batch. Fully deterministic given
    the config seed.
    """
    plan.validate(entries)
    train_entries, _ = split_entries(entries, plan)
    if not train_entries:
        raise ConfigurationError("train side of the split is empty")

    joints, _, height, width = read_header(train_entries[0].resolve(root))
    for e in train_entries[1:]:
        j2, _, h2, w2 = read_header(e.resolve(root))
        if (j2, h2, w2) != (joints, height, width):
            raise ConfigurationError(
                f"{e.path}: geometry {j2}x{h2}x{w2} differs from {joints}x{height}x{width}"
            )

    if scorer_config is None:
        scorer_config = ScorerConfig(input_channels=joints,
                                     num_classes=config.action.num_classes)
    if scorer_config.input_channels != joints:
        raise ConfigurationError(
            f"scorer expects {scorer_config.input_channels} channels, data has {joints}"
        )
    if scorer_config.num_classes != config.action.num_classes:
        raise ConfigurationError(
            f"scorer head has {scorer_config.num_classes} classes, "
            f"action defines {config.action.num_classes}"
        )

    clip_length = config.action.clip_length
    model = build_model(
        scorer_config,
        clip_length=clip_length,
        height=height,
        width=width,
        stn_enabled=config.stn_enabled,
        seed=config.seed,
    )
    params = trainable_parameters(model)

    videos = _train_videos(root, train_entries, clip_length, config.seed, config.balance)
    clips = [
        (vi, k) for vi, v in enumerate(videos) for k in range(v.frames // clip_length)
    ]
    if not clips:
        raise ConfigurationError("train side yields no clips")

    loss_curve = []
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 31, epoch]).permutation(len(clips))
        total, seen = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            blocks, labels = [], []
            for idx in batch:
                vi, k = clips[idx]
                v = videos[vi]
                block = read_frames(v.path, v.start + k * clip_length, clip_length)
                blocks.append(normalize_clip(block))
                labels.append(v.score)
            x = Tensor(np.stack(blocks))
            loss = softmax_cross_entropy(model(x), np.array(labels))
            model.zero_grad()
            backward(loss)
            sgd_step(params, config.lr)
            total += float(loss.data) * len(labels)
            seen += len(labels)
        loss_curve.append(total / seen)
    return TrainResult(model, loss_curve, config, scorer_config)


# ---------------------------------------------------------------------------
# scoring and evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreDistribution:
    """Raw head outputs: clip-averaged f̄(k) plus the per-clip rows."""

    averaged: np.ndarray  # K
    per_clip: np.ndarray  # M×K

    @property
    def num_clips(self) -> int:
        return self.per_clip.shape[0]


def video_score(model: MovementQualityNet, sample: MovementSample,
                rule: str = "mean-logits") -> tuple:
    """Predict a score for a whole video from its non-overlapping clips.

    Default rule averages raw logits over clips then takes the argmax (ties
    toward the lowest score); "max-clip-score" instead takes the maximum of
    the per-clip argmaxes.
    """
    if rule not in SCORING_RULES:
        raise ValueError(f"unknown scoring rule {rule!r}, expected one of {SCORING_RULES}")
    clip_length = model.vtdm.clip_length
    clips = split_clips(sample, clip_length)
    x = np.stack([normalize_clip(c.data) for c in clips])
    was_training = model.training
    model.eval()
    try:
        per_clip = model(Tensor(x)).data.copy()
    finally:
        if was_training:
            model.train()
    averaged = per_clip.mean(axis=0)
    if rule == "mean-logits":
        predicted = int(np.argmax(averaged))
    else:
        predicted = int(max(np.argmax(row) for row in per_clip))
    return predicted, ScoreDistribution(averaged=averaged, per_clip=per_clip)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; ties get the mean of their rank range."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j < values.size and values[order[j]] == values[order[i]]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + 1 + j)
        i = j
    return ranks


def evaluate_spearman(predictions, ground_truth) -> float:
    """Spearman rho: Pearson correlation of average ranks."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(ground_truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise EvaluationError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size < 2:
        raise EvaluationError(f"need at least 2 pairs, got {p.size}")
    if (p == p[0]).all() or (t == t[0]).all():
        raise EvaluationError("rank correlation undefined for constant input")
    return float(np.corrcoef(_average_ranks(p), _average_ranks(t))[0, 1])


@dataclass
class EvalReport:
    rows: list  # (sample_id, subject, view, truth, prediction)
    spearman: float
    config: dict

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "subject", "view", "truth", "prediction"])
            for row in self.rows:
                writer.writerow(list(row))
            writer.writerow(["spearman", "", "", "", repr(self.spearman)])


def evaluate(model: MovementQualityNet, root, entries, config: TrainConfig) -> EvalReport:
    """Score every entry (ground truth from the manifest) and report rho."""
    rows, preds, truths = [], [], []
    for e in entries:
        sample = MovementSample(
            heatmaps=_load_volume(e.resolve(root)),
            score=e.score,
            subject_id=e.subject_id,
            view_id=e.view_id,
            action_tag=e.action_tag,
            sample_id=e.path,
        )
        predicted, _ = video_score(model, sample, rule=config.scoring_rule)
        rows.append((e.path, e.subject_id, e.view_id, e.score, predicted))
        preds.append(predicted)
        truths.append(e.score)
    rho = evaluate_spearman(preds, truths)
    echo = asdict(config)
    return EvalReport(rows=rows, spearman=rho, config=echo)


def _load_volume(path) -> np.ndarray:
    joints, frames, _, _ = read_header(path)
    return read_frames(path, 0, frames)


def run_experiment(root, entries, plan: SplitPlan, config: TrainConfig,
                   scorer_config: ScorerConfig | None = None) -> tuple:
    """Train on the plan then evaluate on its test side."""
    result = train(root, entries, plan, config, scorer_config)
    _, test_entries = split_entries(entries, plan)
    report = evaluate(result.model, root, test_entries, config)
    return result, report


def _grid_cell(args) -> tuple:
    """One (action, split) experiment; module-level so worker processes can run it."""
    root, group, plan, cell_config, scorer_config, out_dir = args
    if plan.kind == "cross_view":
        detail = "train-v" + "-".join(str(v) for v in plan.train_views)
    else:
        detail = f"fold{plan.fold_index}"
    action_name = cell_config.action.name
    kind = plan.kind
    try:
        _, report = run_experiment(root, group, plan, cell_config, scorer_config)
        rho = report.spearman
    except EvaluationError as err:
        warnings.warn(f"{action_name}/{kind}/{detail}: {err}")
        report, rho = None, float("nan")
    csv_path = Path(out_dir) / f"{action_name}_{kind}_{detail}.csv"
    if report is not None:
        report.write_csv(csv_path)
    return (action_name, kind, detail, rho, str(csv_path))


def run_grid(root, out_dir, config: TrainConfig, *,
             kinds=("cross_subject", "cross_view"), train_views=(1,),
             scorer_config: ScorerConfig | None = None, jobs: int = 1) -> list:
    """Train/evaluate every (action, split) cell; one CSV each plus a summary.

    Cells are independent, so jobs > 1 runs them in worker processes; each
    cell stays internally deterministic either way. Returns
    [(action, kind, detail, rho, csv path)] in cell order.
    """
    root = Path(root)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = read_manifest(root / "manifest.json")
    by_action = {}
    for e in entries:
        by_action.setdefault(e.action_tag, []).append(e)

    cells = []
    for action_tag in sorted(by_action):
        group = by_action[action_tag]
        action = ActionConfig(
            name=action_tag or config.action.name,
            max_score=max(e.score for e in group),
            clip_length=config.action.clip_length,
        )
        cell_config = replace(config, action=action)
        for kind in kinds:
            if kind == "cross_subject":
                plans = make_splits(group, "cross_subject")
            else:
                plans = make_splits(group, "cross_view", train_views=train_views)
            for plan in plans:
                cells.append((root, group, plan, cell_config, scorer_config, str(out)))

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_grid_cell, cells))
    else:
        results = [_grid_cell(cell) for cell in cells]

    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["action", "split", "detail", "spearman"])
        for action_name, kind, detail, rho, _ in results:
            writer.writerow([action_name, kind, detail, repr(rho)])
    return results
