"""
Does the spatial transformer earn its keep?
===========================================

Train on ONE camera, test on five others the model never saw. Without
the transformer the scorer memorizes the training view's layout; with
it, descriptors get re-warped toward a shared frame before scoring.

This is a shortened rendition of the full ablation in the acceptance
suite (tests/test_acceptance.py, criteria 6 and 7), which averages
five seeds at 40 epochs. A couple of minutes of training is enough to
see the direction.
"""

import tempfile
import time
from pathlib import Path

from vinet.heatmaps import ActionConfig, read_manifest
from vinet.protocol import TrainConfig, make_splits, run_experiment
from vinet.synthetic import DatasetSpec, generate_dataset

out = Path(tempfile.gettempdir()) / "vinet-demos" / "ablation_corpus"
spec = DatasetSpec(subjects=6, views=6, max_score=4, frame_range=(48, 64),
                   height=32, width=32, sigma=2.0, seed=7)
if not (out / "manifest.json").exists():
    generate_dataset(spec, out)
entries = read_manifest(out / "manifest.json")

action = ActionConfig("walk", max_score=4, clip_length=16)

# view 1 is the exact-identity frontal camera; views 3-5 foreshorten
(plan,) = make_splits(entries, "cross_view", train_views=(1,))
print(f"train view {plan.train_views}, unseen views {plan.test_views}\n")

for label, stn in (("with STN   ", True), ("without STN", False)):
    config = TrainConfig(action=action, epochs=25, lr=0.01, batch_size=5,
                         seed=0, stn_enabled=stn)
    t0 = time.perf_counter()
    result, report = run_experiment(out, entries, plan, config)
    print(f"{label}: unseen-view rho {report.spearman:+.4f}   "
          f"final loss {result.loss_curve[-1]:.3f}   "
          f"({time.perf_counter() - t0:.0f}s)")

# two training views make the warp easier to learn still; this is the
# comparison criterion 7 runs at full size
(pair_plan,) = make_splits(entries, "cross_view", train_views=(1, 4))
config = TrainConfig(action=action, epochs=25, lr=0.01, batch_size=5,
                     seed=0, stn_enabled=True)
result, report = run_experiment(out, entries, pair_plan, config)
print(f"\ntwo views {pair_plan.train_views}: unseen-view rho {report.spearman:+.4f}")
