"""The whole chain at desk scale: generate, calibrate, gate, account.

A seeded backbone (never trained) plus calibrated acceptance regions is
enough to intercept spectral violations at the first stage, semantic
shifts at the second, and to bank the FLOPs of every stage a rejected
sample never reaches.
"""

import numpy as np

from oodgate import (
    CorpusSpec,
    auroc,
    cascade_score_set,
    exit_histogram,
    expected_flops,
    generate_corpus,
)
from oodgate.config import RunConfig
from oodgate.pipeline import Sample, build_backbone, calibrate_pipeline, run_outcomes

cfg = RunConfig()
backbone = build_backbone(cfg)


def corpus(kind, n, seed):
    return [
        Sample(f"{kind}_{i}", label, img)
        for i, (img, label) in enumerate(generate_corpus(CorpusSpec(kind, n=n, classes=4, seed=seed)))
    ]


print("calibrating gates from 2,000 in-distribution samples (90/10 split)...")
calib = calibrate_pipeline(corpus("id_natural", 2000, seed=51), backbone, cfg)
for g in calib.gates:
    print(f"  gate[{g.stage}] {g.score_kind:12s} acceptance region "
          f"[{g.lo:10.4f}, {g.hi:10.4f}]")

id_out = run_outcomes(corpus("id_natural", 500, seed=52), backbone, calib.bank, calib.gates, cfg)
print(f"\nfresh ID acceptance: {np.mean([o.verdict == 'accepted' for o in id_out]):.3f} "
      f"(target {cfg.final_tpr})")

print(f"\n{'corpus':20s} {'auroc':>7s} {'stage1':>7s} {'stage2':>7s} {'final':>6s} {'savings':>8s}")
for kind, seed in (("ood_white_noise", 53), ("ood_flat", 54), ("ood_semantic_shift", 55)):
    ood_out = run_outcomes(corpus(kind, 300, seed), backbone, calib.bank, calib.gates, cfg)
    hist = exit_histogram(ood_out, 2)
    stats = expected_flops(id_out + ood_out, backbone, calib.gates)
    score = auroc(cascade_score_set(id_out, ood_out, calib.gates))
    print(f"{kind:20s} {score:7.3f} {hist['stage_1'].fraction:7.2f} "
          f"{hist['stage_2'].fraction:7.2f} {hist['final_rejected'].fraction:6.2f} "
          f"{stats['savings_pct']:7.1f}%")

print("\nper-sample cost of one early rejection vs the full path:")
cheapest = min(o.flops for o in id_out + ood_out)
print(f"  earliest exit: {cheapest:,} FLOPs")
print(f"  full path:     {expected_flops(id_out, backbone, calib.gates)['full_flops']:,} FLOPs")
