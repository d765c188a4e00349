import numpy as np
import pytest

from priorseg.metrics import (CaseScores, aggregate, dice, evaluate_case,
                              report_to_json, report_to_tsv)
from priorseg.volume import LabelVolume


def lv(vox):
    return LabelVolume(np.asarray(vox, dtype=np.uint8), (1, 1, 1))


def cube(dims, lo, size, organ):
    vox = np.zeros(dims, np.uint8)
    sl = tuple(slice(a, a + size) for a in lo)
    vox[sl] = organ
    return lv(vox)


def test_identity_dice_is_one():
    gt = cube((10, 10, 10), (2, 2, 2), 3, 5)
    assert dice(gt, gt, 5) == 1.0


def test_disjoint_cubes_zero():
    gt = cube((12, 12, 12), (0, 0, 0), 2, 1)
    pred = cube((12, 12, 12), (6, 6, 6), 2, 1)
    assert dice(pred, gt, 1) == 0.0


def test_half_overlap_hand_count():
    gt = cube((12, 12, 12), (2, 2, 2), 2, 1)  # 8 voxels
    pred = cube((12, 12, 12), (3, 2, 2), 2, 1)  # shifted by 1 in x, overlap 4
    assert dice(pred, gt, 1) == pytest.approx(2 * 4 / (8 + 8))


def test_empty_gt_is_excluded():
    gt = lv(np.zeros((4, 4, 4)))
    pred = cube((4, 4, 4), (0, 0, 0), 2, 4)
    assert dice(pred, gt, 4) is None
    assert dice(gt, gt, 4) is None  # empty/empty still excluded


def test_dice_symmetry():
    rng = np.random.default_rng(0)
    a = lv(rng.integers(0, 3, (8, 8, 8)))
    b = lv(rng.integers(0, 3, (8, 8, 8)))
    assert dice(a, b, 2) == dice(b, a, 2)


def test_dims_mismatch():
    with pytest.raises(ValueError):
        dice(lv(np.zeros((4, 4, 4))), lv(np.zeros((5, 4, 4))), 1)


def test_evaluate_case_exclusion_rule():
    gt = cube((10, 10, 10), (1, 1, 1), 3, 1)  # organ 4 missing from gt
    scores = evaluate_case(gt, gt, "c0")
    assert scores.scores[1] == 1.0
    assert scores.scores[4] is None
    assert set(scores.scores) == set(range(1, 14))


def test_all_background_pred_scores_zero():
    gt = cube((10, 10, 10), (1, 1, 1), 3, 2)
    pred = lv(np.zeros((10, 10, 10)))
    assert evaluate_case(pred, gt).scores[2] == 0.0


def test_aggregate_two_point():
    cohort = [CaseScores("a", {o: None for o in range(1, 14)} | {1: 0.8}),
              CaseScores("b", {o: None for o in range(1, 14)} | {1: 0.9})]
    rep = aggregate(cohort)
    assert rep.mean[1] == pytest.approx(0.85)
    assert rep.std[1] == pytest.approx(0.05)  # population convention
    assert rep.count[1] == 2 and rep.count[2] == 0
    assert 2 not in rep.mean  # excluded everywhere -> no data
    assert rep.overall == pytest.approx(0.85)


def test_aggregate_single_case_std_zero():
    cohort = [CaseScores("a", {o: 0.5 for o in range(1, 14)})]
    rep = aggregate(cohort)
    assert all(v == 0.0 for v in rep.std.values())


def test_aggregate_permutation_invariant():
    rng = np.random.default_rng(1)
    cohort = [CaseScores(str(i), {o: float(rng.random())
                                  for o in range(1, 14)}) for i in range(5)]
    a = aggregate(cohort)
    b = aggregate(list(reversed(cohort)))
    for o in a.mean:
        assert a.mean[o] == pytest.approx(b.mean[o], abs=1e-12)
    assert a.overall == pytest.approx(b.overall, abs=1e-12)


def test_aggregate_empty_cohort():
    with pytest.raises(ValueError):
        aggregate([])


def test_report_serialization():
    cohort = [CaseScores("a", {o: 0.75 for o in range(1, 14)})]
    rep = aggregate(cohort)
    tsv = report_to_tsv(rep)
    lines = tsv.strip().split("\n")
    assert lines[0].split("\t")[1] == "spleen"
    assert lines[0].split("\t")[-1] == "AVG"
    assert "0.7500" in lines[1]
    assert '"overall"' in report_to_json(rep)
