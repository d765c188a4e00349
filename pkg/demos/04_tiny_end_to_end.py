"""Train the full two-stage pipeline at toy scale, in-process.

Six small phantoms, a deliberately tiny network, and a few dozen epochs:
enough to watch the coarse stage localize organs and the refine stage clean
up the boundaries. Takes a minute or two on a laptop CPU. For the scripted
equivalent, see the `priorseg` CLI walkthrough in the README.
"""

import numpy as np

from priorseg import pipeline
from priorseg.config import CoarseConfig, PipelineConfig, RefineConfig
from priorseg.patches import PatchSpec, extract_patch, sample_origins
from priorseg.phantom import OrganSpec, PhantomSpec, gen_phantom
from priorseg.priors import extract_all_priors
from priorseg.rng import derive_rng

cfg = PipelineConfig(
    coarse=CoarseConfig(target_spacing=(3, 3, 6), target_dims=(32, 32, 16),
                        epochs=80, lr=2e-2, batch=1, levels=2, base_width=4,
                        lr_schedule="cosine", augment=True),
    refine=RefineConfig(patch_dims=(16, 16, 8), patches_per_organ=6,
                        epochs=25, lr=5e-3, batch=2, levels=2, base_width=4),
    seed=5)

cases = []
for i in range(6):
    spec = PhantomSpec(dims=(48, 48, 24), spacing=(2.0, 2.0, 4.0),
                       organs=[OrganSpec(1, (20, 18, 14), 120.0),
                               OrganSpec(6, (20, 16, 14), 160.0)])
    img, lab = gen_phantom(spec, derive_rng(cfg.seed, 11, i))
    cases.append((f"case{i}", img, lab))

pres = [pipeline.preprocess_case(c, i, l, cfg) for c, i, l in cases]
train, val, test = pres[:4], pres[4:5], pres[5:]

print("=== coarse stage ===")
ucfg, params, hist, best = pipeline.train_coarse(cfg, train, val, cfg.seed)
for h in hist[::4] + hist[-1:]:
    print("epoch %2d  train %.4f  val %.4f"
          % (h["epoch"], h["train_loss"], h["val_loss"]))

coarse_pred = pipeline.coarse_predict(params, ucfg, test[0])
rep, _ = pipeline.evaluate_pairs([("t", coarse_pred, test[0].native_label)])
print("coarse-only test Dice:", {k: round(v, 3) for k, v in rep.mean.items()})

print("\n=== refine stage ===")
spec_p = PatchSpec(cfg.refine.patch_dims, cfg.refine.patches_per_organ, 0.0)
train_patches, val_patches = [], []
for ci, pre in enumerate(train + val):
    dest = train_patches if ci < len(train) else val_patches
    for prior in extract_all_priors(pipeline.coarse_predict(params, ucfg, pre)):
        if not prior.present:
            continue
        rng = derive_rng(cfg.seed, 20, ci, prior.organ)
        for origin in sample_origins(prior, spec_p, pre.native_image.dims, rng):
            p = extract_patch(pre.native_image, prior, pre.native_label,
                              prior.organ, origin, spec_p)
            dest.append((p.channels, p.label))
print(f"{len(train_patches)} training patches, {len(val_patches)} validation")

rucfg, rparams, rhist, _ = pipeline.train_refine(cfg, train_patches,
                                                 val_patches, cfg.seed)
for h in rhist:
    print("epoch %2d  train %.4f  val %.4f"
          % (h["epoch"], h["train_loss"], h["val_loss"]))

print("\n=== fusion ===")
_, img, lab = cases[5]
coarse, fused = pipeline.infer(params, ucfg, rparams, rucfg, img, cfg, cfg.seed)
crep, _ = pipeline.evaluate_pairs([("t", coarse, lab)])
frep, _ = pipeline.evaluate_pairs([("t", fused, lab)])
print("coarse-only overall Dice: %.4f" % crep.overall)
print("coarse+refine overall Dice: %.4f" % frep.overall)
