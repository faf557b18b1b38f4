"""Command-line interface: corpus generation, training, scoring, evaluation.

Every subcommand takes an optional JSON config file plus flag overrides
(flags win), rejects unknown config keys, and writes the fully resolved
configuration next to its outputs so any run can be reproduced
bit-identically from that echo. Exit codes: 0 success, 1 runtime failure,
2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, restore_model, save_checkpoint
from .checks import CHECKS, run_checks
from .heatmaps import (
    ActionConfig,
    FormatError,
    SequenceTooShortError,
    load_sequence,
    read_header,
    read_manifest,
)
from .model import build_model
from .protocol import (
    SCORING_RULES,
    EvaluationError,
    SplitError,
    TrainConfig,
    evaluate,
    make_splits,
    run_grid,
    split_entries,
    train,
    video_score,
)
from .scorer import STEM_CHANNELS, ConfigurationError, ScorerConfig
from .synthetic import FAMILIES, DatasetSpec, generate_dataset

__all__ = ["main"]


class UsageError(ValueError):
    """Bad flags or config shape; maps to exit code 2."""


GENERATE_KEYS = (
    "subjects", "views", "repetitions", "max_score", "frame_range", "height",
    "width", "sigma", "seed", "family", "frontal_views", "view_jitter", "occlusion",
)

EXPERIMENT_KEYS = (
    "action", "clip_length", "epochs", "lr", "batch_size", "seed", "stn_enabled",
    "balance", "scoring_rule", "backbone", "stage_widths", "stage_depth", "groups",
    "split", "train_views", "fold", "jobs",
)

EXPERIMENT_DEFAULTS = {
    "action": None,
    "clip_length": 16,
    "epochs": 20,
    "lr": 0.001,
    "batch_size": 5,
    "seed": None,
    "stn_enabled": True,
    "balance": True,
    "scoring_rule": "mean-logits",
    "backbone": "tiny",
    "stage_widths": [32, 64],
    "stage_depth": 1,
    "groups": 1,
    "split": "cross_view",
    "train_views": [1],
    "fold": 0,
    "jobs": 1,
}


def _int_list(text: str) -> list:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}") from err


def _int_pair(text: str) -> list:
    values = _int_list(text)
    if len(values) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    return values


def _load_json_config(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as err:
        raise UsageError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise UsageError(f"config file {path} is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    doc.pop("command", None)  # reserved keys written by the resolved-config echo
    return doc


def _resolve(args, keys, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    cfg = {k: defaults.get(k) for k in keys}
    if getattr(args, "config", None):
        file_cfg = _load_json_config(args.config)
        unknown = sorted(set(file_cfg) - set(keys))
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        cfg.update(file_cfg)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("VINET_SEED")
    if env:
        try:
            return int(env)
        except ValueError as err:
            raise UsageError(f"VINET_SEED must be an integer, got {env!r}") from err
    return 0


def _write_echo(out_dir, command: str, cfg: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = {"command": command, **cfg}
    path = out_dir / "resolved_config.json"
    path.write_text(json.dumps(echo, indent=1, sort_keys=True) + "\n")
    return path


def _action_entries(entries, action: str | None):
    tags = sorted({e.action_tag for e in entries})
    if action is None:
        if len(tags) != 1:
            raise UsageError(
                f"manifest holds actions {tags}; pick one with --action"
            )
        action = tags[0]
    group = [e for e in entries if e.action_tag == action]
    if not group:
        raise UsageError(f"no samples tagged {action!r} (manifest has {tags})")
    return action, group


def _experiment_pieces(root, cfg) -> tuple:
    """Shared train/evaluate/grid plumbing: entries, action, configs."""
    root = Path(root)
    entries = read_manifest(root / "manifest.json")
    tag, group = _action_entries(entries, cfg["action"])
    action = ActionConfig(tag, max(e.score for e in group), cfg["clip_length"])
    joints = read_header(group[0].resolve(root))[0]
    train_config = TrainConfig(
        action=action,
        epochs=cfg["epochs"],
        lr=cfg["lr"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
        stn_enabled=cfg["stn_enabled"],
        scoring_rule=cfg["scoring_rule"],
        balance=cfg["balance"],
    )
    scorer_config = ScorerConfig(
        backbone_style=cfg["backbone"],
        input_channels=joints,
        num_classes=action.num_classes,
        stage_widths=tuple(cfg["stage_widths"]),
        stage_depth=cfg["stage_depth"],
        groups=cfg["groups"],
    )
    return entries, group, action, train_config, scorer_config


def _pick_plan(group, cfg):
    if cfg["split"] == "cross_subject":
        plans = make_splits(group, "cross_subject")
        fold = cfg["fold"]
        if not 0 <= fold < len(plans):
            raise UsageError(f"fold {fold} outside 0..{len(plans) - 1}")
        return plans[fold]
    if cfg["split"] == "cross_view":
        (plan,) = make_splits(group, "cross_view", train_views=cfg["train_views"])
        return plan
    raise UsageError(f"unknown split {cfg['split']!r}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _resolve(args, GENERATE_KEYS, {})
    defaults = DatasetSpec()
    for key in GENERATE_KEYS:
        if cfg[key] is None and key != "seed":
            cfg[key] = getattr(defaults, key)
    cfg["seed"] = _resolve_seed(cfg["seed"])
    cfg["frame_range"] = list(cfg["frame_range"])
    try:
        spec = DatasetSpec(**cfg)
    except (ValueError, TypeError) as err:
        raise UsageError(str(err)) from err
    summary = generate_dataset(spec, args.out)
    echo = _write_echo(args.out, "generate", cfg)
    print(f"wrote {summary['files']} sequence files under {args.out}")
    print(f"manifest: {summary['manifest']}")
    print(f"resolved config: {echo}")
    return 0


def _finish_experiment_cfg(cfg) -> None:
    cfg["seed"] = _resolve_seed(cfg["seed"])
    cfg["train_views"] = list(cfg["train_views"])
    cfg["stage_widths"] = list(cfg["stage_widths"])
    if cfg["scoring_rule"] not in SCORING_RULES:
        raise UsageError(
            f"unknown scoring rule {cfg['scoring_rule']!r}, expected one of {SCORING_RULES}"
        )
    if cfg["backbone"] not in STEM_CHANNELS:
        raise UsageError(
            f"unknown backbone {cfg['backbone']!r}, expected one of {sorted(STEM_CHANNELS)}"
        )


def cmd_train(args) -> int:
    cfg = _resolve(args, EXPERIMENT_KEYS, EXPERIMENT_DEFAULTS)
    _finish_experiment_cfg(cfg)
    root = Path(args.data)
    try:
        _, group, action, train_config, scorer_config = _experiment_pieces(root, cfg)
        plan = _pick_plan(group, cfg)
    except (ConfigurationError, ValueError) as err:
        if isinstance(err, UsageError):
            raise
        raise UsageError(str(err)) from err
    result = train(root, group, plan, train_config, scorer_config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out / "model.vick"
    save_checkpoint(
        checkpoint_path,
        result.model,
        config={
            "scorer": {**asdict(scorer_config), "stage_widths": list(scorer_config.stage_widths)},
            "clip_length": action.clip_length,
            "height": result.model.vtdm.height,
            "width": result.model.vtdm.width,
            "stn_enabled": cfg["stn_enabled"],
            "action": asdict(action),
            "scoring_rule": cfg["scoring_rule"],
        },
        seed=cfg["seed"],
        epoch=cfg["epochs"],
    )
    loss_path = out / "loss.csv"
    with open(loss_path, "w", newline="") as fh:
        fh.write("epoch,mean_loss\n")
        for i, value in enumerate(result.loss_curve):
            fh.write(f"{i},{value!r}\n")
    echo = _write_echo(out, "train", cfg)
    final = f"{result.loss_curve[-1]:.6f}" if result.loss_curve else "n/a"
    print(f"trained {cfg['epochs']} epoch(s) on {len(plan.train_ids)} videos; final loss {final}")
    print(f"checkpoint: {checkpoint_path}")
    print(f"loss curve: {loss_path}")
    print(f"resolved config: {echo}")
    return 0


def _model_from_checkpoint(path):
    header, arrays = load_checkpoint(path)
    c = header.get("config") or {}
    try:
        scorer_config = ScorerConfig(
            backbone_style=c["scorer"]["backbone_style"],
            input_channels=c["scorer"]["input_channels"],
            num_classes=c["scorer"]["num_classes"],
            stage_widths=tuple(c["scorer"]["stage_widths"]),
            stage_depth=c["scorer"]["stage_depth"],
            groups=c["scorer"]["groups"],
        )
        model = build_model(
            scorer_config,
            clip_length=c["clip_length"],
            height=c["height"],
            width=c["width"],
            stn_enabled=c["stn_enabled"],
            seed=header.get("seed") or 0,
        )
    except KeyError as err:
        raise CheckpointError(f"{path}: config missing key {err}") from err
    restore_model(model, arrays)
    return model, header


def cmd_score(args) -> int:
    cfg = _resolve(args, EXPERIMENT_KEYS, EXPERIMENT_DEFAULTS)
    model, header = _model_from_checkpoint(args.checkpoint)
    rule = args.rule or header.get("config", {}).get("scoring_rule") or cfg["scoring_rule"]
    if rule not in SCORING_RULES:
        raise UsageError(f"unknown scoring rule {rule!r}")

    samples = []
    if args.data:
        root = Path(args.data)
        entries = read_manifest(root / "manifest.json")
        for e in entries:
            sample = load_sequence(
                e.resolve(root), subject_id=e.subject_id, view_id=e.view_id,
                score=e.score, action_tag=e.action_tag,
            )
            sample.sample_id = e.path
            samples.append((sample, e.score))
    for path in args.inputs or []:
        sample = load_sequence(path)
        samples.append((sample, ""))
    if not samples:
        raise UsageError("nothing to score: pass --data and/or input files")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    num_classes = model.msm.head.weight.data.shape[0]
    rows = []
    for sample, truth in samples:
        predicted, dist = video_score(model, sample, rule=rule)
        rows.append((sample.sample_id, sample.subject_id, sample.view_id, truth,
                     predicted, dist.averaged))
        print(f"{sample.sample_id}: predicted {predicted}")
    csv_path = out / "predictions.csv"
    with open(csv_path, "w", newline="") as fh:
        logit_names = ",".join(f"f{k}" for k in range(num_classes))
        fh.write(f"sample_id,subject,view,truth,prediction,{logit_names}\n")
        for sample_id, subject, view, truth, predicted, averaged in rows:
            logits = ",".join(repr(float(v)) for v in averaged)
            fh.write(f"{sample_id},{subject},{view},{truth},{predicted},{logits}\n")
    echo = _write_echo(out, "score", {**cfg, "scoring_rule": rule})
    print(f"predictions: {csv_path}")
    print(f"resolved config: {echo}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve(args, EXPERIMENT_KEYS, EXPERIMENT_DEFAULTS)
    _finish_experiment_cfg(cfg)
    model, header = _model_from_checkpoint(args.checkpoint)
    root = Path(args.data)
    entries = read_manifest(root / "manifest.json")
    tag, group = _action_entries(entries, cfg["action"])
    action = ActionConfig(tag, max(e.score for e in group), cfg["clip_length"])
    rule = args.rule or header.get("config", {}).get("scoring_rule") or cfg["scoring_rule"]
    eval_config = TrainConfig(
        action=action,
        epochs=max(header.get("epoch") or 0, 0),
        seed=cfg["seed"],
        stn_enabled=cfg["stn_enabled"],
        scoring_rule=rule,
        balance=cfg["balance"],
    )
    if args.all:
        test_entries = group
    else:
        plan = _pick_plan(group, cfg)
        _, test_entries = split_entries(group, plan)
    report = evaluate(model, root, test_entries, eval_config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "report.csv"
    report.write_csv(csv_path)
    echo = _write_echo(out, "evaluate", {**cfg, "scoring_rule": rule})
    print(f"evaluated {len(report.rows)} videos; spearman rho = {report.spearman:.4f}")
    print(f"report: {csv_path}")
    print(f"resolved config: {echo}")
    return 0


def cmd_grid(args) -> int:
    cfg = _resolve(args, EXPERIMENT_KEYS, EXPERIMENT_DEFAULTS)
    _finish_experiment_cfg(cfg)
    root = Path(args.data)
    kinds = ("cross_subject", "cross_view") if cfg["split"] == "both" else (cfg["split"],)
    for kind in kinds:
        if kind not in ("cross_subject", "cross_view"):
            raise UsageError(f"unknown split {kind!r}")
    entries = read_manifest(root / "manifest.json")
    if not entries:
        raise UsageError("manifest is empty")
    # placeholder action; run_grid rebuilds one per action tag in the manifest
    base_action = ActionConfig("grid", max(e.score for e in entries), cfg["clip_length"])
    train_config = TrainConfig(
        action=base_action,
        epochs=cfg["epochs"],
        lr=cfg["lr"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
        stn_enabled=cfg["stn_enabled"],
        scoring_rule=cfg["scoring_rule"],
        balance=cfg["balance"],
    )
    scorer_config = None  # per-action class counts differ; let train() derive it
    results = run_grid(
        root, args.out, train_config, kinds=kinds,
        train_views=tuple(cfg["train_views"]), scorer_config=scorer_config,
        jobs=cfg["jobs"],
    )
    echo = _write_echo(args.out, "grid", cfg)
    for action_name, kind, detail, rho, _ in results:
        print(f"{action_name} {kind} {detail}: rho = {rho:.4f}")
    print(f"summary: {Path(args.out) / 'summary.csv'}")
    print(f"resolved config: {echo}")
    return 0


def cmd_check(args) -> int:
    if args.list:
        for name, _ in CHECKS:
            print(name)
        return 0
    try:
        results = run_checks(args.names or None)
    except ValueError as err:
        raise UsageError(str(err)) from err
    failures = 0
    for name, error in results:
        if error is None:
            print(f"ok   {name}")
        else:
            failures += 1
            print(f"FAIL {name}: {error}")
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_experiment_flags(sub, with_split=True):
    sub.add_argument("--config", help="JSON config file; flags override it")
    sub.add_argument("--action", help="action tag to use when the manifest holds several")
    sub.add_argument("--clip-length", type=int)
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--batch-size", type=int)
    sub.add_argument("--seed", type=int, help="default: $VINET_SEED, then 0")
    sub.add_argument("--no-stn", dest="stn_enabled", action="store_const", const=False,
                     help="disable the spatial transformer (ablation)")
    sub.add_argument("--stn", dest="stn_enabled", action="store_const", const=True)
    sub.add_argument("--no-balance", dest="balance", action="store_const", const=False)
    sub.add_argument("--scoring-rule", dest="scoring_rule", choices=SCORING_RULES)
    sub.add_argument("--backbone", choices=sorted(STEM_CHANNELS))
    sub.add_argument("--stage-widths", dest="stage_widths", type=_int_list)
    sub.add_argument("--stage-depth", dest="stage_depth", type=int)
    sub.add_argument("--groups", type=int)
    if with_split:
        sub.add_argument("--split", choices=("cross_subject", "cross_view", "both"))
        sub.add_argument("--train-views", dest="train_views", type=_int_list,
                         help="comma-separated view ids for cross_view")
        sub.add_argument("--fold", type=int, help="fold index for cross_subject")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vinet",
        description="View-invariant movement quality pipeline",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("generate", help="write a synthetic multi-view corpus")
    gen.add_argument("--config", help="JSON config file; flags override it")
    gen.add_argument("--out", required=True)
    gen.add_argument("--subjects", type=int)
    gen.add_argument("--views", type=int)
    gen.add_argument("--frontal-views", dest="frontal_views", type=int)
    gen.add_argument("--repetitions", type=int)
    gen.add_argument("--max-score", dest="max_score", type=int)
    gen.add_argument("--frames", dest="frame_range", type=_int_pair, help="LO,HI")
    gen.add_argument("--height", type=int)
    gen.add_argument("--width", type=int)
    gen.add_argument("--sigma", type=float)
    gen.add_argument("--seed", type=int, help="default: $VINET_SEED, then 0")
    gen.add_argument("--family", choices=FAMILIES)
    gen.add_argument("--no-jitter", dest="view_jitter", action="store_const", const=False)
    gen.add_argument("--occlusion", action="store_const", const=True)
    gen.set_defaults(func=cmd_generate)

    tr = commands.add_parser("train", help="train on one split and save a checkpoint")
    tr.add_argument("--data", required=True, help="corpus root holding manifest.json")
    tr.add_argument("--out", required=True)
    _add_experiment_flags(tr)
    tr.set_defaults(func=cmd_train)

    sc = commands.add_parser("score", help="predict scores for sequences")
    sc.add_argument("--checkpoint", required=True)
    sc.add_argument("--data", help="corpus root; scores every manifest entry")
    sc.add_argument("inputs", nargs="*", help="additional .vihm files")
    sc.add_argument("--out", required=True)
    sc.add_argument("--rule", choices=SCORING_RULES)
    sc.add_argument("--config")
    sc.set_defaults(func=cmd_score)

    ev = commands.add_parser("evaluate", help="evaluate a checkpoint on a test side")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--all", action="store_true", help="test on every entry, ignoring --split")
    ev.add_argument("--rule", choices=SCORING_RULES)
    _add_experiment_flags(ev)
    ev.set_defaults(func=cmd_evaluate)

    gr = commands.add_parser("grid", help="run the cross-subject/cross-view matrix")
    gr.add_argument("--data", required=True)
    gr.add_argument("--out", required=True)
    gr.add_argument("--jobs", type=int, help="parallel worker processes")
    _add_experiment_flags(gr)
    gr.set_defaults(func=cmd_grid)

    ck = commands.add_parser("check", help="run the invariant/oracle self-checks")
    ck.add_argument("names", nargs="*", help="subset of check names")
    ck.add_argument("--list", action="store_true")
    ck.set_defaults(func=cmd_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    except (FormatError, SequenceTooShortError, CheckpointError, ConfigurationError,
            SplitError, EvaluationError, FileNotFoundError, NotADirectoryError,
            PermissionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
