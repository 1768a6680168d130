"""
Training a small detector and matching lines across a homography
================================================================

Pairs of synthetic views are generated, a detector with a line descriptor is
trained on them for a few epochs, and the result is scored on held-out pairs:
structural AP for detection, then nearest-neighbour matching of descriptors
against the lines known to correspond.

Ten epochs on 100 pairs take under a minute on one core and only show the
trend. The reference run behind the acceptance suite uses the configuration in
``tests/fixtures/reference.cfg``. Pass a checkpoint directory to skip training::

    python3 demos/plot_train_detect_match.py [checkpoint_dir]
"""
import sys
from pathlib import Path

import numpy as np

from elsd import metrics, synth, train, viz
from elsd.decode import DecodeConfig
from elsd.geom import label_correspondences
from elsd.model import init_params

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

train_set = synth.generate_dataset(100, seed=0)
test_set = synth.generate_dataset(20, seed=1)

if len(sys.argv) > 1:
    params, net = train.load_model(sys.argv[1])
    cfg = train.TrainConfig(net=net)
else:
    cfg = train.TrainConfig(epochs=10, lr=3e-3, decay_epochs=(7, 9))
    params, log = train.train(train_set, cfg, progress=lambda r: print(
        f"epoch {r['epoch']:2d}  detector {r['detector']:7.2f}  descriptor {r['descriptor']:.3f}"))
    train.save_model(OUT / "demo_checkpoint", params, cfg)

###############################################################################
# Detection
# ---------
# sAP counts a prediction as correct when the summed squared endpoint distance
# to an unmatched ground-truth line is below the threshold, at 128 px scale.

gts = [s.segments_a for s in test_set]
untrained = init_params(cfg.net, 0)
for name, p in (("untrained", untrained), ("trained", params)):
    preds = train.predict([s.image_a for s in test_set], p, cfg.net, DecodeConfig(downsample=cfg.net.downsample))
    print(f"{name:>9}: {sum(map(len, preds)):4d} lines, sAP10 {metrics.structural_ap(preds, gts, 10):.4f}, "
          f"midpoint AP {metrics.midpoint_ap(preds, gts, 10):.4f}")
viz.write_svg(OUT / "detections.svg", viz.segments_svg(test_set[0].image_a, preds[0]))

###############################################################################
# Matching
# --------
# Descriptors are pooled along the ground-truth lines of both views. A match
# is kept only when each line is the other's nearest neighbour. The baseline
# assigns every line of view A a random line of view B.

scores, base = [], []
for s in test_set:
    gt = label_correspondences(s.segments_a, s.segments_b, s.homography, 2.0)
    da = train.describe(s.image_a, s.segments_a, params, cfg.net)
    db = train.describe(s.image_b, s.segments_b, params, cfg.net)
    m = metrics.match_lines(da, db)
    scores.append(metrics.match_prf(m, gt))
    base.append(metrics.random_match_baseline(len(da), len(db), gt))
mean = lambda xs, f: np.mean([getattr(x, f) for x in xs])
print(f"matching  precision {mean(scores, 'precision'):.3f}  recall {mean(scores, 'recall'):.3f}")
print(f"random    precision {mean(base, 'precision'):.3f}  recall {mean(base, 'recall'):.3f}")

s = test_set[0]
gt = label_correspondences(s.segments_a, s.segments_b, s.homography, 2.0)
m = metrics.match_lines(train.describe(s.image_a, s.segments_a, params, cfg.net),
                        train.describe(s.image_b, s.segments_b, params, cfg.net))
viz.write_svg(OUT / "matches.svg", viz.matches_svg(s.image_a, s.segments_a, s.image_b, s.segments_b, m, gt))
print(f"overlays written to {OUT}")
