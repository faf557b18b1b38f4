import csv
import math
import types

import numpy as np
import pytest

from vinet.heatmaps import (
    ActionConfig,
    ManifestEntry,
    MovementSample,
    SequenceTooShortError,
    read_manifest,
)
from vinet.model import build_model
from vinet.nn import sgd_step, softmax_cross_entropy
from vinet.protocol import (
    EvalReport,
    EvaluationError,
    SplitError,
    SplitPlan,
    TrainConfig,
    augment_temporal_crop,
    augmentation_plan,
    evaluate,
    evaluate_spearman,
    make_splits,
    run_grid,
    split_entries,
    train,
    video_score,
)
from vinet.scorer import ConfigurationError, ScorerConfig
from vinet.synthetic import DatasetSpec, generate_dataset
from vinet.tensor import Tensor, backward

from oracles import spearman_naive

ACTION = ActionConfig("walk", max_score=2, clip_length=16)


def fake_entries(subjects, views, scores, tag="walk"):
    return [
        ManifestEntry(
            path=f"s{s}_q{q}_v{v}.vihm", subject_id=s, view_id=v, score=q, action_tag=tag
        )
        for s in subjects
        for q in scores
        for v in views
    ]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("proto_corpus")
    spec = DatasetSpec(
        subjects=3,
        views=2,
        frontal_views=1,
        repetitions=1,
        max_score=2,
        frame_range=(16, 24),
        height=16,
        width=16,
        sigma=2.0,
        seed=11,
    )
    generate_dataset(spec, root)
    return root, read_manifest(root / "manifest.json")


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig(action=ACTION)
        assert (cfg.epochs, cfg.lr, cfg.batch_size) == (20, 0.001, 5)
        assert cfg.stn_enabled and cfg.balance
        assert cfg.scoring_rule == "mean-logits"

    def test_zero_epochs_allowed(self):
        assert TrainConfig(action=ACTION, epochs=0).epochs == 0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"epochs": -1},
            {"lr": 0.0},
            {"lr": -0.1},
            {"batch_size": 0},
            {"scoring_rule": "median"},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ConfigurationError):
            TrainConfig(action=ACTION, **kwargs)


class TestMakeSplits:
    def test_cross_subject_partition(self):
        entries = fake_entries(range(10), range(3), range(5))
        plans = make_splits(entries, "cross_subject", folds=5)
        assert len(plans) == 5
        seen = []
        for plan in plans:
            _, test = split_entries(entries, plan)
            held = {e.subject_id for e in test}
            assert len(held) == 2
            seen.extend(held)
            # all views on both sides
            train_e, _ = split_entries(entries, plan)
            assert {e.view_id for e in train_e} == {e.view_id for e in test} == {0, 1, 2}
        assert sorted(seen) == list(range(10))  # each subject in exactly one test fold

    def test_default_fold_count_is_score_levels(self):
        entries = fake_entries(range(6), range(2), range(5))
        assert len(make_splits(entries, "cross_subject")) == 5

    def test_too_few_subjects(self):
        entries = fake_entries(range(3), range(2), range(5))
        with pytest.raises(SplitError):
            make_splits(entries, "cross_subject", folds=5)

    def test_cross_view_single(self):
        entries = fake_entries(range(4), range(1, 7), range(3))
        (plan,) = make_splits(entries, "cross_view", train_views=[2])
        assert plan.train_views == (2,)
        assert plan.test_views == (1, 3, 4, 5, 6)
        train, test = split_entries(entries, plan)
        assert {e.view_id for e in train} == {2}
        assert {e.view_id for e in test} == {1, 3, 4, 5, 6}

    def test_cross_view_pair(self):
        entries = fake_entries(range(4), range(1, 7), range(3))
        (plan,) = make_splits(entries, "cross_view", train_views=[2, 5])
        assert plan.test_views == (1, 3, 4, 6)

    def test_cross_view_errors(self):
        entries = fake_entries(range(2), range(3), range(2))
        with pytest.raises(SplitError):
            make_splits(entries, "cross_view", train_views=[9])
        with pytest.raises(SplitError):
            make_splits(entries, "cross_view", train_views=[0, 1, 2])
        with pytest.raises(SplitError):
            make_splits(entries, "cross_view")

    def test_empty_manifest(self):
        with pytest.raises(SplitError):
            make_splits([], "cross_subject")

    def test_unknown_kind(self):
        with pytest.raises(SplitError):
            make_splits(fake_entries([0], [0], [0]), "cross_time")

    def test_validate_rejects_overlap(self):
        entries = fake_entries(range(2), range(2), range(2))
        ids = tuple(e.path for e in entries)
        plan = SplitPlan("cross_subject", ids[:3], ids[2:])
        with pytest.raises(SplitError, match="both sides"):
            plan.validate(entries)

    def test_validate_rejects_shared_subject(self):
        entries = fake_entries(range(2), range(2), range(2))
        by_subject = {s: [e.path for e in entries if e.subject_id == s] for s in (0, 1)}
        mixed = tuple(by_subject[0][:2] + by_subject[1][:1])
        rest = tuple(p for e in entries if (p := e.path) not in mixed)
        plan = SplitPlan("cross_subject", mixed, rest)
        with pytest.raises(SplitError, match="subjects"):
            plan.validate(entries)


class TestAugmentTemporalCrop:
    def make_sample(self, frames):
        vol = np.zeros((2, frames, 4, 4), dtype=np.float32)
        vol[:, :, 0, 0] = np.arange(frames)  # frame index tag for slice recovery
        return MovementSample(
            heatmaps=vol, score=3, subject_id=7, view_id=1, action_tag="walk",
            sample_id="orig",
        )

    def test_crops_are_contiguous_subsequences(self):
        sample = self.make_sample(100)
        crops = augment_temporal_crop(sample, 7, seed=5, clip_length=16)
        assert len(crops) == 7
        for i, crop in enumerate(crops):
            frames = crop.heatmaps.shape[1]
            assert 16 <= frames <= 100
            tags = crop.heatmaps[0, :, 0, 0]
            start = int(tags[0])
            np.testing.assert_array_equal(tags, np.arange(start, start + frames))
            assert (crop.score, crop.subject_id, crop.view_id) == (3, 7, 1)
            assert crop.sample_id == f"orig#crop{i}"

    def test_count_zero(self):
        assert augment_temporal_crop(self.make_sample(40), 0, seed=0) == []

    def test_short_sequence_warns_and_noops(self):
        with pytest.warns(UserWarning, match="cannot be cropped"):
            out = augment_temporal_crop(self.make_sample(16), 3, seed=0, clip_length=16)
        assert out == []

    def test_balancing_arithmetic(self):
        assert augmentation_plan({0: 15, 3: 4}) == {3: 11}
        assert augmentation_plan({0: 5, 1: 5}) == {}
        assert augmentation_plan({}) == {}


class TestTrain:
    def small_config(self, **kwargs):
        defaults = dict(action=ACTION, epochs=1, seed=3, batch_size=5)
        defaults.update(kwargs)
        return TrainConfig(**defaults)

    def test_zero_epochs_returns_initialized_model(self, corpus):
        root, entries = corpus
        (plan,) = make_splits(entries, "cross_view", train_views=[0])
        result = train(root, entries, plan, self.small_config(epochs=0))
        assert result.loss_curve == []
        fresh = build_model(
            result.scorer_config, clip_length=16, height=16, width=16, seed=3
        )
        for (name, p), (name2, q) in zip(
            sorted(result.model.named_parameters()), sorted(fresh.named_parameters())
        ):
            assert name == name2
            np.testing.assert_array_equal(p.data, q.data)

    def test_loss_curve_deterministic(self, corpus):
        root, entries = corpus
        (plan,) = make_splits(entries, "cross_view", train_views=[0])
        first = train(root, entries, plan, self.small_config(epochs=2))
        second = train(root, entries, plan, self.small_config(epochs=2))
        assert first.loss_curve == second.loss_curve
        assert len(first.loss_curve) == 2
        assert all(math.isfinite(v) for v in first.loss_curve)

    def test_overfit_fixed_batch(self):
        # 50 steps on one fixed batch must strictly reduce the loss
        model = build_model(
            ScorerConfig(input_channels=4, num_classes=3), clip_length=8,
            height=16, width=16, seed=0,
        )
        rng = np.random.default_rng(1)
        x = Tensor(rng.uniform(0.0, 255.0, size=(3, 4, 8, 16, 16)))
        y = np.array([0, 1, 2])
        params = model.parameters()
        initial = None
        for _ in range(50):
            loss = softmax_cross_entropy(model(x), y)
            if initial is None:
                initial = float(loss.data)
            model.zero_grad()
            backward(loss)
            sgd_step(params, 0.001)
        final = float(softmax_cross_entropy(model(x), y).data)
        assert final < initial

    def test_empty_train_side(self, corpus):
        root, entries = corpus
        ids = tuple(e.path for e in entries)
        plan = SplitPlan("cross_view", (), ids, train_views=(), test_views=(0, 1))
        with pytest.raises(ConfigurationError, match="empty"):
            train(root, entries, plan, self.small_config())

    def test_scorer_config_mismatch(self, corpus):
        root, entries = corpus
        (plan,) = make_splits(entries, "cross_view", train_views=[0])
        bad = ScorerConfig(input_channels=3, num_classes=3)
        with pytest.raises(ConfigurationError, match="channels"):
            train(root, entries, plan, self.small_config(), scorer_config=bad)
        bad = ScorerConfig(input_channels=15, num_classes=7)
        with pytest.raises(ConfigurationError, match="classes"):
            train(root, entries, plan, self.small_config(), scorer_config=bad)

    def test_unbalanced_train_side_runs(self, corpus):
        root, entries = corpus
        trimmed = [
            e for e in entries if not (e.score == 2 and e.subject_id == 0 and e.view_id == 0)
        ]
        (plan,) = make_splits(trimmed, "cross_view", train_views=[0])
        result = train(root, trimmed, plan, self.small_config())
        assert len(result.loss_curve) == 1
        assert math.isfinite(result.loss_curve[0])


def stub_model(rows, clip_length=16):
    """Duck-typed model returning one fixed logit row per clip."""
    rows = np.asarray(rows, dtype=np.float64)

    class _Stub:
        def __init__(self):
            self.vtdm = types.SimpleNamespace(clip_length=clip_length)
            self.training = False

        def eval(self):
            pass

        def train(self):
            pass

        def __call__(self, x):
            return Tensor(rows[: x.data.shape[0]])

    return _Stub()


def sample_with_frames(frames, score=0, size=4):
    vol = np.abs(
        np.random.default_rng(0).normal(size=(2, frames, size, size))
    ).astype(np.float32)
    return MovementSample(
        heatmaps=vol, score=score, subject_id=0, view_id=0, sample_id="v"
    )


class TestVideoScore:
    def test_single_clip_argmax(self):
        model = stub_model([[0.2, 1.5, -0.3]])
        predicted, dist = video_score(model, sample_with_frames(16))
        assert predicted == 1
        assert dist.num_clips == 1
        np.testing.assert_allclose(dist.averaged, [0.2, 1.5, -0.3])

    def test_mean_logits_example(self):
        model = stub_model([[0.1, 0.9], [0.8, 0.2]])
        predicted, dist = video_score(model, sample_with_frames(32))
        np.testing.assert_allclose(dist.averaged, [0.45, 0.55])
        assert predicted == 1

    def test_tie_breaks_to_lowest(self):
        model = stub_model([[0.5, 0.5, 0.1]])
        predicted, _ = video_score(model, sample_with_frames(16))
        assert predicted == 0

    def test_constant_shift_invariance(self):
        rows = np.random.default_rng(4).normal(size=(3, 5))
        base, _ = video_score(stub_model(rows), sample_with_frames(48))
        shifted = rows + np.array([[10.0], [-3.0], [0.5]])  # per-clip constants
        again, _ = video_score(stub_model(shifted), sample_with_frames(48))
        assert base == again

    def test_increasing_affine_invariance(self):
        for rule in ("mean-logits", "max-clip-score"):
            rows = np.random.default_rng(5).normal(size=(4, 6))
            base, _ = video_score(stub_model(rows), sample_with_frames(64), rule=rule)
            again, _ = video_score(
                stub_model(2.5 * rows + 7.0), sample_with_frames(64), rule=rule
            )
            assert base == again, rule

    def test_max_clip_score_rule_differs(self):
        rows = [[10.0, 0.0, 0.0], [0.0, 0.0, 1.0]]
        sample = sample_with_frames(32)
        mean_pred, _ = video_score(stub_model(rows), sample, rule="mean-logits")
        max_pred, _ = video_score(stub_model(rows), sample, rule="max-clip-score")
        assert mean_pred == 0
        assert max_pred == 2

    def test_too_short(self):
        with pytest.raises(SequenceTooShortError):
            video_score(stub_model([[0.0, 1.0]]), sample_with_frames(10))

    def test_unknown_rule(self):
        with pytest.raises(ValueError, match="scoring rule"):
            video_score(stub_model([[0.0, 1.0]]), sample_with_frames(16), rule="vote")

    def test_real_model_runs(self):
        model = build_model(
            ScorerConfig(input_channels=2, num_classes=3), clip_length=16,
            height=16, width=16, seed=0,
        )
        predicted, dist = video_score(model, sample_with_frames(35, size=16))
        assert 0 <= predicted <= 2
        assert dist.per_clip.shape == (2, 3)
        assert model.training  # mode restored


class TestSpearman:
    def test_identical_orderings(self):
        assert evaluate_spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)

    def test_reversed_orderings(self):
        assert evaluate_spearman([4, 3, 2, 1], [1, 2, 3, 4]) == pytest.approx(-1.0)

    def test_tied_example_matches_oracle(self):
        preds, truth = [1, 2, 2, 3], [1, 2, 3, 4]
        expected = spearman_naive(preds, truth)
        assert evaluate_spearman(preds, truth) == pytest.approx(expected, abs=1e-12)

    def test_random_vectors_match_oracle(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            p = rng.integers(0, 5, size=12)
            t = rng.integers(0, 5, size=12)
            if (p == p[0]).all() or (t == t[0]).all():
                continue
            assert evaluate_spearman(p, t) == pytest.approx(
                spearman_naive(p, t), abs=1e-10
            ), seed

    def test_monotone_transform_invariance(self):
        p = [0.1, 3.0, 2.0, 5.0, 4.4]
        t = [1, 0, 2, 4, 3]
        base = evaluate_spearman(p, t)
        assert evaluate_spearman(np.exp(p), t) == pytest.approx(base, abs=1e-12)
        assert evaluate_spearman(2.0 * np.asarray(p) + 3.0, t) == pytest.approx(
            base, abs=1e-12
        )

    def test_errors(self):
        with pytest.raises(EvaluationError, match="mismatch"):
            evaluate_spearman([1, 2], [1, 2, 3])
        with pytest.raises(EvaluationError, match="at least 2"):
            evaluate_spearman([1], [2])
        with pytest.raises(EvaluationError, match="constant"):
            evaluate_spearman([2, 2, 2], [1, 2, 3])
        with pytest.raises(EvaluationError, match="constant"):
            evaluate_spearman([1, 2, 3], [5, 5, 5])

    def test_range(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            rho = evaluate_spearman(rng.normal(size=8), rng.normal(size=8))
            assert -1.0 <= rho <= 1.0


class TestEvalReport:
    def test_csv_layout(self, tmp_path):
        report = EvalReport(
            rows=[("a.vihm", 0, 1, 3, 2), ("b.vihm", 1, 0, 1, 1)],
            spearman=0.75,
            config={"epochs": 20},
        )
        path = tmp_path / "report.csv"
        report.write_csv(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["sample_id", "subject", "view", "truth", "prediction"]
        assert rows[1] == ["a.vihm", "0", "1", "3", "2"]
        assert rows[-1][0] == "spearman"
        assert float(rows[-1][4]) == 0.75
        assert len(rows) == 4

    def test_evaluate_collects_all_entries(self, corpus):
        root, entries = corpus

        class _VariedStub:
            """Prediction depends on clip content, so rho is defined."""

            def __init__(self):
                self.vtdm = types.SimpleNamespace(clip_length=16)
                self.training = False

            def eval(self):
                pass

            def train(self):
                pass

            def __call__(self, x):
                rows = np.zeros((x.data.shape[0], 3))
                for i in range(x.data.shape[0]):
                    rows[i, int(x.data[i].sum()) % 3] = 1.0
                return Tensor(rows)

        config = TrainConfig(action=ACTION, epochs=1, seed=5)
        test_entries = [e for e in entries if e.view_id == 1]
        report = evaluate(_VariedStub(), root, test_entries, config)
        assert len(report.rows) == len(test_entries)
        for row, e in zip(report.rows, test_entries):
            assert row[0] == e.path
            assert row[3] == e.score
            assert 0 <= row[4] <= 2
        assert -1.0 <= report.spearman <= 1.0
        assert report.config["epochs"] == 1


class TestRunGrid:
    def test_grid_layout(self, corpus, tmp_path):
        root, _ = corpus
        config = TrainConfig(action=ACTION, epochs=1, seed=2)
        results = run_grid(
            root, tmp_path, config, kinds=("cross_subject", "cross_view"),
            train_views=(0,),
        )
        # 3 score levels -> 3 subject folds, plus one cross-view cell
        assert len(results) == 4
        kinds = [r[1] for r in results]
        assert kinds.count("cross_subject") == 3
        assert kinds.count("cross_view") == 1
        with open(tmp_path / "summary.csv", newline="") as fh:
            summary = list(csv.reader(fh))
        assert summary[0] == ["action", "split", "detail", "spearman"]
        assert len(summary) == 5
        for action_name, kind, detail, rho, csv_path in results:
            assert action_name == "walk"
            if not math.isnan(rho):
                assert (tmp_path / f"walk_{kind}_{detail}.csv").exists()
