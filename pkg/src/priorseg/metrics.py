"""Per-organ Dice scores and cohort aggregation.

Organs absent from the ground truth are excluded from scoring (the cohort
rule for missing anatomy, applied to every organ). Standard deviations use
the population convention (divide by n).
"""

import json
from dataclasses import dataclass

import numpy as np

from .volume import NUM_ORGANS, ORGAN_NAMES

EXCLUDED = None


@dataclass
class CaseScores:
    case_id: str
    scores: dict  # organ id -> float in [0,1], or None when excluded


@dataclass
class CohortReport:
    mean: dict  # organ id -> float, organs with no data omitted
    std: dict
    count: dict  # organ id -> number of scored cases
    overall: float  # unweighted mean of per-organ means


def dice(pred, gt, organ):
    """2|P∩G| / (|P|+|G|); None (excluded) when the organ is absent from gt."""
    if pred.dims != gt.dims:
        raise ValueError(f"dims mismatch: {pred.dims} vs {gt.dims}")
    p = pred.voxels == organ
    g = gt.voxels == organ
    ng = int(g.sum())
    if ng == 0:
        return EXCLUDED
    np_ = int(p.sum())
    inter = int((p & g).sum())
    return 2.0 * inter / (np_ + ng)


def evaluate_case(pred, gt, case_id=""):
    return CaseScores(case_id, {organ: dice(pred, gt, organ)
                                for organ in range(1, NUM_ORGANS + 1)})


def aggregate(cohort):
    """Per-organ mean/std over non-excluded cases; overall = mean of means."""
    if not cohort:
        raise ValueError("empty cohort")
    mean, std, count = {}, {}, {}
    for organ in range(1, NUM_ORGANS + 1):
        vals = [c.scores[organ] for c in cohort if c.scores[organ] is not None]
        count[organ] = len(vals)
        if vals:
            mean[organ] = float(np.mean(vals))
            std[organ] = float(np.std(vals))
    overall = float(np.mean(list(mean.values()))) if mean else float("nan")
    return CohortReport(mean, std, count, overall)


def report_to_tsv(report):
    header = ["metric"] + [ORGAN_NAMES[o] for o in range(1, NUM_ORGANS + 1)] + ["AVG"]
    def row(label, values, overall=""):
        cells = [f"{values[o]:.4f}" if o in values else "-"
                 for o in range(1, NUM_ORGANS + 1)]
        return [label] + cells + [overall]
    lines = [header,
             row("mean", report.mean, f"{report.overall:.4f}"),
             row("std", report.std),
             ["count"] + [str(report.count[o]) for o in range(1, NUM_ORGANS + 1)] + [""]]
    return "\n".join("\t".join(line) for line in lines) + "\n"


def report_to_json(report):
    return json.dumps({
        "mean": {str(o): v for o, v in report.mean.items()},
        "std": {str(o): v for o, v in report.std.items()},
        "count": {str(o): v for o, v in report.count.items()},
        "overall": report.overall,
    }, sort_keys=True, indent=2)
