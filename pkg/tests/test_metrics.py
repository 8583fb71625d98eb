import itertools
import math

import numpy as np
import numpy.testing as npt
import pytest

from humanparse.metrics import (
    AP_P_THRESHOLDS,
    DensePoseInstance,
    DensePosePoint,
    GPSConfig,
    InstanceParsing,
    SemSegMap,
    ap_p,
    ap_p_vol,
    app_score,
    densepose_ap,
    gps,
    instance_canvas,
    miou,
    paste_multi_person,
    pcp50,
)
from humanparse.roi import Box

import oracles


def _inst(grid, score=1.0, x=0.0, y=0.0):
    grid = np.asarray(grid, dtype=np.int64)
    h, w = grid.shape
    return InstanceParsing(grid, score, Box(x, y, x + w, y + h, score=min(max(score, 0.0), 1.0)))


def _scene_inst(rng, h, w, num_classes):
    grid = rng.integers(0, num_classes, (h, w))
    grid = np.where(rng.uniform(size=(h, w)) < 0.45, grid, 0)
    return _inst(grid, score=float(rng.uniform(0.05, 1.0)))


def _random_scene(rng, h=7, w=7, num_classes=4, n_pred=None, n_gt=None):
    n_pred = int(rng.integers(0, 6)) if n_pred is None else n_pred
    n_gt = int(rng.integers(0, 6)) if n_gt is None else n_gt
    preds = [_scene_inst(rng, h, w, num_classes) for _ in range(n_pred)]
    gts = [_scene_inst(rng, h, w, num_classes) for _ in range(n_gt)]
    return preds, gts


class TestPaste:
    def test_single_instance(self):
        inst = _inst([[1, 0], [2, 1]])
        out = paste_multi_person([inst], 2, 2)
        npt.assert_array_equal(out.labels, [[1, 0], [2, 1]])

    def test_empty_list_is_background(self):
        out = paste_multi_person([], 3, 2)
        assert not out.labels.any()

    def test_higher_score_claims_overlap(self):
        a = _inst([[1, 1]], score=0.9)
        b = _inst([[2, 2]], score=0.5)
        out = paste_multi_person([b, a], 2, 1)
        npt.assert_array_equal(out.labels, [[1, 1]])

    def test_claim_depends_on_order_not_magnitude(self):
        a = _inst([[1, 1]], score=0.9)
        b = _inst([[2, 2]], score=0.5)
        a2 = _inst([[1, 1]], score=0.09)
        b2 = _inst([[2, 2]], score=0.05)
        first = paste_multi_person([b, a], 2, 1)
        second = paste_multi_person([b2, a2], 2, 1)
        npt.assert_array_equal(first.labels, second.labels)

    def test_ignore_label_never_claims(self):
        a = _inst([[255, 1]], score=0.9)
        b = _inst([[2, 2]], score=0.5)
        out = paste_multi_person([a, b], 2, 1)
        npt.assert_array_equal(out.labels, [[2, 1]])

    def test_instances_clip_to_image(self):
        inst = _inst([[3, 3], [3, 3]], score=0.8, x=1.0, y=1.0)
        out = paste_multi_person([inst], 2, 2)
        npt.assert_array_equal(out.labels, [[0, 0], [0, 3]])

    def test_offset_positioning(self):
        inst = _inst([[5]], score=0.8, x=2.0, y=1.0)
        out = paste_multi_person([inst], 4, 3)
        want = np.zeros((3, 4), dtype=np.int64)
        want[1, 2] = 5
        npt.assert_array_equal(out.labels, want)


class TestMiou:
    def test_identical_grids(self):
        g = SemSegMap(np.array([[0, 1], [2, 1]]))
        per_class, mean = miou(g, g, 3)
        assert mean == 1.0
        assert per_class == [1.0, 1.0, 1.0]

    def test_disjoint_single_class(self):
        pred = SemSegMap(np.array([[1, 1], [0, 0]]))
        gt = SemSegMap(np.array([[0, 0], [1, 1]]))
        per_class, _ = miou(pred, gt, 2)
        assert per_class[1] == 0.0

    def test_hand_counted_2x2(self):
        gt = SemSegMap(np.array([[1, 1], [0, 0]]))
        pred = SemSegMap(np.array([[1, 0], [0, 0]]))
        per_class, mean = miou(pred, gt, 2)
        assert per_class[1] == 0.5
        assert abs(per_class[0] - 2 / 3) < 1e-15
        assert abs(mean - (0.5 + 2 / 3) / 2) < 1e-15

    def test_ignore_pixels_excluded_and_symmetric(self):
        pred = SemSegMap(np.array([[1, 255], [0, 1]]))
        gt = SemSegMap(np.array([[1, 0], [255, 1]]))
        _, a = miou(pred, gt, 2)
        _, b = miou(gt, pred, 2)
        assert a == b == 1.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shapes differ"):
            miou(SemSegMap(np.zeros((2, 2), dtype=int)), SemSegMap(np.zeros((2, 3), dtype=int)), 2)

    def test_label_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            miou(SemSegMap(np.array([[5]])), SemSegMap(np.array([[0]])), 3)

    def test_exhaustive_small_grids_vs_oracle(self):
        # every (pred, gt) pair of 1x2 and 2x2 grids over 3 classes
        for shape in ((1, 2), (2, 2)):
            cells = shape[0] * shape[1]
            grids = [
                np.array(v, dtype=np.int64).reshape(shape)
                for v in itertools.product(range(3), repeat=cells)
            ]
            for pred in grids:
                for gt in grids:
                    _, mean = miou(SemSegMap(pred), SemSegMap(gt), 3)
                    want = oracles.miou_oracle(pred, gt, 3)
                    assert abs(mean - want) < 1e-12

    def test_random_grids_vs_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            h, w = rng.integers(1, 5, 2)
            pred = rng.integers(0, 3, (h, w))
            gt = rng.integers(0, 3, (h, w))
            _, mean = miou(SemSegMap(pred), SemSegMap(gt), 3)
            want = oracles.miou_oracle(pred, gt, 3)
            if math.isnan(want):
                assert math.isnan(mean)
            else:
                assert abs(mean - want) < 1e-12

    def test_symmetry_property(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            pred = rng.integers(0, 4, (4, 4))
            gt = rng.integers(0, 4, (4, 4))
            _, a = miou(SemSegMap(pred), SemSegMap(gt), 4)
            _, b = miou(SemSegMap(gt), SemSegMap(pred), 4)
            assert a == b


class TestAppScore:
    def test_identical_instances(self):
        inst = _inst([[1, 2], [0, 1]])
        assert app_score(inst, inst, 3) == 1.0

    def test_no_shared_parts(self):
        assert app_score(_inst([[1, 1]]), _inst([[2, 2]]), 3) == 0.0

    def test_half_plus_missing_part(self):
        # part 1: IoU 0.5; part 2 only in gt: IoU 0 -> (0.5 + 0) / 2
        pred = _inst([[1, 1, 0, 0]])
        gt = _inst([[1, 0, 0, 2]])
        assert abs(app_score(pred, gt, 3) - 0.25) < 1e-15

    def test_background_not_a_part(self):
        assert app_score(_inst([[0, 0]]), _inst([[0, 0]]), 3) == 0.0

    def test_matches_oracle_randomized(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            pred = rng.integers(0, 4, (5, 5))
            gt = rng.integers(0, 4, (5, 5))
            got = app_score(_inst(pred), _inst(gt), 4)
            want = oracles.app_score_oracle(pred, gt, 4)
            assert abs(got - want) < 1e-12


class TestApP:
    def test_perfect_prediction(self):
        grid = [[1, 2], [0, 1]]
        for t in AP_P_THRESHOLDS:
            assert ap_p([_inst(grid, 0.9)], [_inst(grid)], t, 3) == 1.0
        assert ap_p_vol([_inst(grid, 0.9)], [_inst(grid)], 3) == 1.0

    def test_no_predictions(self):
        assert ap_p([], [_inst([[1]])], 0.5, 2) == 0.0

    def test_empty_gt_with_predictions(self):
        assert ap_p([_inst([[1]], 0.9)], [], 0.5, 2) == 0.0

    def test_both_empty_is_vacuously_perfect(self):
        assert ap_p([], [], 0.5, 2) == 1.0

    def test_threshold_validated(self):
        with pytest.raises(ValueError, match="threshold"):
            ap_p([], [], 0.0, 2)

    def test_crafted_three_preds_two_gts_vs_oracle(self):
        gt1 = _inst([[1, 1, 0], [0, 0, 0]])
        gt2 = _inst([[0, 0, 0], [2, 2, 2]])
        p_good = _inst([[1, 1, 0], [0, 0, 2]], score=0.9)
        p_partial = _inst([[0, 0, 0], [2, 2, 0]], score=0.8)
        p_wrong = _inst([[0, 1, 1], [0, 0, 0]], score=0.7)
        preds, gts = [p_good, p_partial, p_wrong], [gt1, gt2]
        for t in (0.3, 0.5, 0.7):
            got = ap_p(preds, gts, t, 3)
            want = oracles.ap_p_oracle(preds, gts, t, 3)
            assert abs(got - want) < 1e-12

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            preds, gts = _random_scene(rng, n_gt=int(rng.integers(1, 5)))
            values = [ap_p(preds, gts, t, 4) for t in AP_P_THRESHOLDS]
            assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))

    def test_score_rescaling_invariance(self):
        rng = np.random.default_rng(4)
        preds, gts = _random_scene(rng, n_pred=4, n_gt=3)
        scaled = [InstanceParsing(p.labels, p.score * 0.5, p.box) for p in preds]
        for t in (0.3, 0.6):
            assert ap_p(preds, gts, t, 4) == ap_p(scaled, gts, t, 4)

    def test_randomized_scenes_vs_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(60):
            preds, gts = _random_scene(rng)
            t = float(rng.choice([0.1, 0.3, 0.5, 0.7, 0.9]))
            got = ap_p(preds, gts, t, 4)
            want = oracles.ap_p_oracle(preds, gts, t, 4)
            assert abs(got - want) < 1e-12


class TestPcp:
    def test_perfect_prediction(self):
        grid = [[1, 2], [3, 0]]
        assert pcp50([_inst(grid, 0.9)], [_inst(grid)], 4) == 1.0

    def test_no_predictions(self):
        assert pcp50([], [_inst([[1, 2]])], 3) == 0.0

    def test_two_of_four_parts(self):
        # parts 1, 2 predicted exactly; parts 3, 4 entirely missed
        gt = _inst([[1, 2], [3, 4]])
        pred = _inst([[1, 2], [0, 0]])
        assert pcp50([pred], [gt], 5) == 0.5

    def test_rejects_empty_gt_parts(self):
        with pytest.raises(ValueError, match="no parts"):
            pcp50([_inst([[1]])], [_inst([[0]])], 2)

    def test_global_vs_per_instance_pooling(self):
        # one gt with 1 part fully correct, one gt with 3 parts missed:
        # global 1/4, per-instance (1 + 0)/2
        gt1 = _inst([[1, 1]])
        gt2 = _inst([[2, 3], [4, 0]])
        pred = _inst([[1, 1]], score=0.9)
        scenes_preds = [pred]
        scenes_gts = [gt1, gt2]

        # shared frames per comparison require equal shapes; use canvases
        w, h = 2, 2
        preds = [InstanceParsing(instance_canvas(p, w, h), p.score, p.box) for p in scenes_preds]
        gts = [InstanceParsing(instance_canvas(g, w, h), g.score, g.box) for g in scenes_gts]
        assert pcp50(preds, gts, 5) == 0.25
        assert pcp50(preds, gts, 5, per_instance=True) == 0.5

    def test_randomized_vs_oracle(self):
        rng = np.random.default_rng(6)
        done = 0
        while done < 40:
            preds, gts = _random_scene(rng, n_gt=int(rng.integers(1, 5)))
            if not any(np.any((g.labels >= 1) & (g.labels != 255)) for g in gts):
                continue
            done += 1
            for per_inst in (False, True):
                got = pcp50(preds, gts, 4, per_instance=per_inst)
                want = oracles.pcp_oracle(preds, gts, 4, per_instance=per_inst)
                assert abs(got - want) < 1e-12


class TestGps:
    def test_zero_distances(self):
        pts = [DensePosePoint(1, 0.5, 0.5, (3, 4))]
        assert gps(pts, pts, GPSConfig()) == 1.0

    def test_closed_form_half_similarity(self):
        kappa = 0.255
        d = kappa * math.sqrt(2 * math.log(2))
        gt = [DensePosePoint(1, 0.2, 0.3, (0, 0))]
        pred = [DensePosePoint(1, 0.2 + d, 0.3, (0, 0))]
        assert abs(gps(pred, gt, GPSConfig(kappa=kappa)) - 0.5) < 1e-12

    def test_mean_of_hit_and_miss(self):
        gt = [DensePosePoint(1, 0.1, 0.1, (0, 0)), DensePosePoint(2, 0.9, 0.9, (1, 1))]
        pred = [DensePosePoint(1, 0.1, 0.1, (0, 0)), None]
        assert abs(gps(pred, gt, GPSConfig()) - 0.5) < 1e-12

    def test_wrong_part_counts_as_miss(self):
        gt = [DensePosePoint(1, 0.5, 0.5, (0, 0))]
        pred = [DensePosePoint(2, 0.5, 0.5, (0, 0))]
        assert gps(pred, gt, GPSConfig()) == 0.0

    def test_rejects_empty_gt(self):
        with pytest.raises(ValueError, match="at least one"):
            gps([], [], GPSConfig())

    def test_rejects_unpaired_lists(self):
        gt = [DensePosePoint(1, 0.5, 0.5, (0, 0))]
        with pytest.raises(ValueError, match="pair up"):
            gps([], gt, GPSConfig())

    def test_permutation_invariant(self):
        rng = np.random.default_rng(7)
        gt = [DensePosePoint(1, float(u), float(v), (i, 0))
              for i, (u, v) in enumerate(rng.uniform(0, 1, (5, 2)))]
        pred = [DensePosePoint(1, float(u), float(v), (i, 0))
                for i, (u, v) in enumerate(rng.uniform(0, 1, (5, 2)))]
        perm = [3, 1, 4, 0, 2]
        a = gps(pred, gt, GPSConfig())
        b = gps([pred[i] for i in perm], [gt[i] for i in perm], GPSConfig())
        assert abs(a - b) < 1e-15

    def test_strictly_decreasing_in_distance(self):
        gt = [DensePosePoint(1, 0.5, 0.5, (0, 0))]
        values = [
            gps([DensePosePoint(1, 0.5 + d, 0.5, (0, 0))], gt, GPSConfig())
            for d in (0.0, 0.1, 0.2, 0.4)
        ]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_lookup_table_source(self):
        table = np.full((3, 3), np.inf)
        table[1, 2] = table[2, 1] = 0.0  # parts 1 and 2 are declared adjacent
        cfg = GPSConfig(distance_source=table)
        gt = [DensePosePoint(2, 0.5, 0.5, (0, 0))]
        pred = [DensePosePoint(1, 0.9, 0.9, (0, 0))]
        assert gps(pred, gt, cfg) == 1.0


def _dp_inst(points, score):
    return DensePoseInstance(points, score, Box(0, 0, 10, 10, score=min(score, 1.0)))


def _random_dp_scene(rng, parts=4):
    n_gt = int(rng.integers(1, 4))
    gts, preds = [], []
    for _ in range(n_gt):
        n_pts = int(rng.integers(1, 5))
        pts = [
            DensePosePoint(int(rng.integers(1, parts)), float(rng.uniform()), float(rng.uniform()),
                           (int(rng.integers(0, 10)), int(rng.integers(0, 10))))
            for _ in range(n_pts)
        ]
        gts.append(_dp_inst(pts, 1.0))
    for gt in gts:
        if rng.uniform() < 0.8:  # most gts get some prediction
            pred_pts = []
            for p in gt.points:
                if rng.uniform() < 0.8:
                    part = p.part_index if rng.uniform() < 0.8 else int(rng.integers(1, parts))
                    pred_pts.append(
                        DensePosePoint(
                            part,
                            min(max(p.u + rng.normal(0, 0.2), 0), 1),
                            min(max(p.v + rng.normal(0, 0.2), 0), 1),
                            p.pixel,
                        )
                    )
            preds.append(_dp_inst(pred_pts, float(rng.uniform(0.1, 1.0))))
    if rng.uniform() < 0.3:  # an occasional spurious prediction
        preds.append(_dp_inst([DensePosePoint(1, 0.5, 0.5, (9, 9))], float(rng.uniform(0.1, 1.0))))
    return preds, gts


class TestDenseposeAp:
    def test_perfect_predictions(self):
        pts = [DensePosePoint(1, 0.2, 0.8, (2, 3)), DensePosePoint(2, 0.6, 0.1, (5, 5))]
        result = densepose_ap([_dp_inst(pts, 0.9)], [_dp_inst(pts, 1.0)])
        assert result == {"AP": 1.0, "AP50": 1.0, "AP75": 1.0}

    def test_all_below_half_similarity(self):
        gt = [DensePosePoint(1, 0.0, 0.0, (0, 0))]
        pred = [DensePosePoint(1, 1.0, 1.0, (0, 0))]  # distance sqrt(2) >> kappa
        result = densepose_ap([_dp_inst(pred, 0.9)], [_dp_inst(gt, 1.0)])
        assert result["AP"] == 0.0

    def test_rejects_pointless_gt(self):
        with pytest.raises(ValueError, match="point"):
            densepose_ap([], [_dp_inst([], 1.0)])

    def test_crafted_two_instances_vs_oracle(self):
        gt1 = [DensePosePoint(1, 0.1, 0.1, (0, 0)), DensePosePoint(2, 0.9, 0.9, (3, 3))]
        gt2 = [DensePosePoint(1, 0.5, 0.5, (7, 7))]
        pred1 = [DensePosePoint(1, 0.15, 0.1, (0, 0)), DensePosePoint(2, 0.9, 0.8, (3, 3))]
        pred2 = [DensePosePoint(1, 0.9, 0.9, (7, 7))]
        preds = [_dp_inst(pred1, 0.8), _dp_inst(pred2, 0.6)]
        gts = [_dp_inst(gt1, 1.0), _dp_inst(gt2, 1.0)]
        got = densepose_ap(preds, gts)
        want = oracles.densepose_ap_oracle(preds, gts, 0.255)
        for key in ("AP", "AP50", "AP75"):
            assert abs(got[key] - want[key]) < 1e-12

    def test_randomized_scenes_vs_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(40):
            preds, gts = _random_dp_scene(rng)
            got = densepose_ap(preds, gts)
            want = oracles.densepose_ap_oracle(preds, gts, 0.255)
            for key in ("AP", "AP50", "AP75"):
                assert abs(got[key] - want[key]) < 1e-12
