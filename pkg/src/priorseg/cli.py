"""Command-line surface for the two-stage segmentation pipeline.

Heavy imports happen after argument parsing so --threads can pin the BLAS
thread pool before numpy initializes. On failure, a single machine-readable
line `ERROR {...json...}` goes to stderr and the exit code is nonzero.
"""

import argparse
import csv
import glob
import json
import logging
import os
import sys


def _case_files(data_dir):
    cases = {}
    for path in sorted(glob.glob(os.path.join(data_dir, "*_image.nii*"))):
        base = os.path.basename(path).split("_image.nii")[0]
        label = path.replace("_image.nii", "_label.nii")
        cases[base] = (path, label if os.path.exists(label) else None)
    if not cases:
        raise FileNotFoundError(f"no '*_image.nii[.gz]' files under {data_dir}")
    return cases


def _load_config(args):
    from .config import PipelineConfig, load_config
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _write_history(history, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "train_loss", "val_loss"])
        writer.writeheader()
        writer.writerows(history)


def cmd_phantom(args):
    from .nifti import write_volume
    from .phantom import gen_phantom, make_cohort_specs
    from .rng import derive_rng
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    specs = make_cohort_specs(args.count, derive_rng(cfg.seed, 10))
    for i, spec in enumerate(specs):
        image, label = gen_phantom(spec, derive_rng(cfg.seed, 11, i))
        write_volume(image, os.path.join(args.out, f"case{i:03d}_image.nii.gz"))
        write_volume(label, os.path.join(args.out, f"case{i:03d}_label.nii.gz"))
    print(f"wrote {args.count} phantom cases to {args.out}")


def cmd_cv_split(args):
    from .pipeline import make_folds
    cfg = _load_config(args)
    cases = sorted(_case_files(args.data))
    folds = make_folds(cases, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "folds.json")
    with open(path, "w") as f:
        json.dump([{"fold": fs.fold, "train": fs.train_ids, "val": fs.val_ids}
                   for fs in folds], f, indent=2)
    print(f"wrote {path}")


def _load_fold(out_dir, fold):
    with open(os.path.join(out_dir, "folds.json")) as f:
        folds = json.load(f)
    return folds[fold]


def _preprocess_all(data_dir, cfg, with_labels=True):
    from .nifti import read_volume
    from .pipeline import preprocess_case
    pres = {}
    for case_id, (img_path, lab_path) in _case_files(data_dir).items():
        image = read_volume(img_path, "image")
        label = None
        if with_labels and lab_path:
            label = read_volume(lab_path, "label")
        pres[case_id] = preprocess_case(case_id, image, label, cfg)
    return pres


def cmd_preprocess(args):
    from .nifti import write_volume
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    for case_id, pre in _preprocess_all(args.data, cfg).items():
        write_volume(pre.native_image,
                     os.path.join(args.out, f"{case_id}_norm.nii.gz"))
        write_volume(pre.coarse_image,
                     os.path.join(args.out, f"{case_id}_coarse_image.nii.gz"))
        if pre.coarse_label is not None:
            write_volume(pre.coarse_label,
                         os.path.join(args.out, f"{case_id}_coarse_label.nii.gz"))
    print(f"preprocessed volumes written to {args.out}")


def cmd_train_coarse(args):
    from .checkpoint import save_checkpoint
    from .pipeline import train_coarse
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    fold = _load_fold(args.out, args.fold)
    pres = _preprocess_all(args.data, cfg)
    train = [pres[c] for c in fold["train"]]
    val = [pres[c] for c in fold["val"]]
    ucfg, params, history, best_epoch = train_coarse(cfg, train, val, cfg.seed)
    ckpt = os.path.join(args.out, f"coarse_fold{args.fold}.ckpt")
    save_checkpoint(ckpt, ucfg, params, step=max(best_epoch, 0))
    _write_history(history, os.path.join(args.out,
                                         f"coarse_fold{args.fold}_history.csv"))
    print(f"wrote {ckpt} (best epoch {best_epoch})")


def cmd_infer_coarse(args):
    from .checkpoint import load_checkpoint
    from .nifti import write_volume
    from .pipeline import coarse_predict
    cfg = _load_config(args)
    ucfg, params, _ = load_checkpoint(args.ckpt)
    os.makedirs(args.out, exist_ok=True)
    for case_id, pre in _preprocess_all(args.data, cfg, with_labels=False).items():
        pred = coarse_predict(params, ucfg, pre)
        write_volume(pred, os.path.join(args.out, f"{case_id}_coarse.nii.gz"))
    print(f"coarse predictions written to {args.out}")


def cmd_build_patches(args):
    from .nifti import read_volume
    from .patches import PatchSpec, build_refine_dataset, manifest_counts
    from .priors import extract_all_priors
    cfg = _load_config(args)
    pres = _preprocess_all(args.data, cfg)
    cases = []
    for case_id in sorted(pres):
        pre = pres[case_id]
        coarse = read_volume(os.path.join(args.coarse,
                                          f"{case_id}_coarse.nii.gz"), "label")
        cases.append((case_id, pre.native_image, pre.native_label,
                      extract_all_priors(coarse)))
    spec = PatchSpec(cfg.refine.patch_dims, cfg.refine.patches_per_organ)
    manifest, _ = build_refine_dataset(cases, spec, cfg.seed, out_dir=args.out)
    expected, actual = manifest_counts(manifest, spec.patches_per_organ)
    print(f"wrote {actual} patches to {args.out} (expected {expected})")


def cmd_train_refine(args):
    from .checkpoint import save_checkpoint
    from .patches import PatchStore, read_manifest
    from .pipeline import train_refine
    cfg = _load_config(args)
    fold = _load_fold(args.out, args.fold)
    manifest = read_manifest(os.path.join(args.patches, "manifest.jsonl"))
    store = PatchStore.open(os.path.join(args.patches, "patches.bin"),
                            os.path.join(args.patches, "patches.index.json"))
    val_ids = set(fold["val"])
    train, val = [], []
    row = 0
    for rec in manifest:
        if rec.get("skipped"):
            continue
        sample = store.load(row)
        row += 1
        dest = val if rec["case"] in val_ids else train
        dest.append((sample.channels, sample.label))
    ucfg, params, history, best_epoch = train_refine(cfg, train, val, cfg.seed)
    ckpt = os.path.join(args.out, f"refine_fold{args.fold}.ckpt")
    save_checkpoint(ckpt, ucfg, params, step=max(best_epoch, 0))
    _write_history(history, os.path.join(args.out,
                                         f"refine_fold{args.fold}_history.csv"))
    print(f"wrote {ckpt} (best epoch {best_epoch})")


def cmd_infer(args):
    from .checkpoint import load_checkpoint
    from .nifti import read_volume, write_volume
    from .pipeline import infer
    cfg = _load_config(args)
    c_ucfg, c_params, _ = load_checkpoint(args.coarse_ckpt)
    r_ucfg, r_params, _ = load_checkpoint(args.refine_ckpt)
    os.makedirs(args.out, exist_ok=True)
    for case_id, (img_path, _) in _case_files(args.data).items():
        image = read_volume(img_path, "image")
        _, fused = infer(c_params, c_ucfg, r_params, r_ucfg, image, cfg, cfg.seed)
        write_volume(fused, os.path.join(args.out, f"{case_id}_pred.nii.gz"))
    print(f"predictions written to {args.out}")


def cmd_evaluate(args):
    from .metrics import report_to_json, report_to_tsv
    from .nifti import read_volume
    from .pipeline import evaluate_pairs
    pairs = []
    for case_id, (_, lab_path) in _case_files(args.gt).items():
        pred_path = os.path.join(args.pred, f"{case_id}_pred.nii.gz")
        if not os.path.exists(pred_path):
            raise FileNotFoundError(f"no prediction for case id {case_id}")
        pairs.append((case_id, read_volume(pred_path, "label"),
                      read_volume(lab_path, "label")))
    report, _ = evaluate_pairs(pairs)
    os.makedirs(args.out, exist_ok=True)
    tsv = report_to_tsv(report)
    with open(os.path.join(args.out, "report.tsv"), "w") as f:
        f.write(tsv)
    with open(os.path.join(args.out, "report.json"), "w") as f:
        f.write(report_to_json(report))
    print(tsv, end="")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="priorseg",
        description="Coarse-to-fine multi-organ 3D segmentation pipeline")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS/OpenMP thread count")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **flags):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        for flag, kwargs in flags.items():
            p.add_argument(flag, **kwargs)
        p.set_defaults(fn=fn)
        return p

    add("phantom", cmd_phantom,
        **{"--out": dict(required=True), "--count": dict(type=int, default=12)})
    add("cv-split", cmd_cv_split,
        **{"--data": dict(required=True), "--out": dict(required=True)})
    add("preprocess", cmd_preprocess,
        **{"--data": dict(required=True), "--out": dict(required=True)})
    add("train-coarse", cmd_train_coarse,
        **{"--data": dict(required=True), "--out": dict(required=True),
           "--fold": dict(type=int, required=True, choices=range(4))})
    add("infer-coarse", cmd_infer_coarse,
        **{"--data": dict(required=True), "--ckpt": dict(required=True),
           "--out": dict(required=True)})
    add("build-patches", cmd_build_patches,
        **{"--data": dict(required=True), "--coarse": dict(required=True),
           "--out": dict(required=True)})
    add("train-refine", cmd_train_refine,
        **{"--patches": dict(required=True), "--out": dict(required=True),
           "--fold": dict(type=int, required=True, choices=range(4))})
    add("infer", cmd_infer,
        **{"--data": dict(required=True), "--coarse-ckpt": dict(required=True),
           "--refine-ckpt": dict(required=True), "--out": dict(required=True)})
    add("evaluate", cmd_evaluate,
        **{"--pred": dict(required=True), "--gt": dict(required=True),
           "--out": dict(required=True)})
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        args.fn(args)
    except Exception as exc:  # single machine-readable failure line
        print("ERROR " + json.dumps({"type": type(exc).__name__,
                                     "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
