import json
from pathlib import Path

import numpy as np
import pytest

from humanparse.cli import main
from humanparse.io import load_annotations, read_labelmap, write_labelmap

FIXTURES = Path(__file__).parent / "fixtures"


def run_cli(*argv):
    return main(list(argv))


def report(tmp_path, *argv):
    out = tmp_path / "report.json"
    rc = run_cli(*argv, "--out", str(out))
    return rc, json.loads(out.read_text())


class TestLabelMapFormat:
    def test_roundtrip(self, tmp_path):
        labels = np.arange(12, dtype=np.int64).reshape(3, 4)
        labels[0, 0] = 255
        path = tmp_path / "m.ilm1"
        write_labelmap(path, labels)
        assert np.array_equal(read_labelmap(path), labels)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "m.ilm1"
        write_labelmap(path, np.array([[7]], dtype=np.int64))
        raw = path.read_bytes()
        assert raw[:4] == b"ILM1"
        assert raw[4:12] == (1).to_bytes(4, "little") * 2
        assert raw[12:] == (7).to_bytes(2, "little")

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.ilm1"
        path.write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(ValueError, match="magic"):
            read_labelmap(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "m.ilm1"
        write_labelmap(path, np.zeros((2, 2), dtype=np.int64))
        path.write_bytes(path.read_bytes()[:-2])
        with pytest.raises(ValueError, match="payload"):
            read_labelmap(path)

    def test_oversized_values_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="u16"):
            write_labelmap(tmp_path / "m.ilm1", np.array([[70000]], dtype=np.int64))


class TestAnnotationLoading:
    def _write(self, tmp_path, doc):
        path = tmp_path / "ann.json"
        path.write_text(json.dumps(doc))
        return path

    def test_loads_fixture_with_binary_and_inline_maps(self):
        docs = load_annotations(FIXTURES / "parsing_gt.json")
        assert list(docs) == ["img0", "img1", "img2"]
        inst = docs["img0"].instances[0]
        assert inst.labels.shape == (2, 3)

    def test_unknown_instance_key_rejected(self, tmp_path):
        path = self._write(
            tmp_path,
            {"image": {"width": 4, "height": 4},
             "instances": [{"score": 0.5, "box": [0, 0, 1, 1], "confidence": 1}]},
        )
        with pytest.raises(ValueError, match="unknown keys"):
            load_annotations(path)

    def test_missing_image_size_rejected(self, tmp_path):
        path = self._write(tmp_path, {"image": {"width": 4}, "instances": []})
        with pytest.raises(ValueError, match="missing keys"):
            load_annotations(path)

    def test_inline_length_checked(self, tmp_path):
        path = self._write(
            tmp_path,
            {"image": {"width": 4, "height": 4},
             "instances": [{"score": 0.5, "box": [0, 0, 2, 2],
                            "labelmap": {"height": 2, "width": 2, "data": [1, 2, 3]}}]},
        )
        with pytest.raises(ValueError, match="length"):
            load_annotations(path)

    def test_boxes_clamped_to_image(self, tmp_path):
        path = self._write(
            tmp_path,
            {"image": {"width": 4, "height": 4},
             "instances": [{"score": 0.5, "box": [-3, -3, 9, 9]}]},
        )
        box = load_annotations(path)["0"].instances[0].box
        assert (box.x1, box.y1, box.x2, box.y2) == (0.0, 0.0, 4.0, 4.0)

    def test_duplicate_ids_rejected(self, tmp_path):
        doc = {"image": {"id": "a", "width": 4, "height": 4}, "instances": []}
        path = self._write(tmp_path, [doc, doc])
        with pytest.raises(ValueError, match="duplicate"):
            load_annotations(path)

    def test_not_json_rejected(self, tmp_path):
        path = tmp_path / "ann.json"
        path.write_text("not json{")
        with pytest.raises(ValueError, match="JSON"):
            load_annotations(path)


class TestGradcheckCommand:
    def test_single_target_passes(self, tmp_path):
        rc, rep = report(tmp_path, "gradcheck", "--targets", "conv2d")
        assert rc == 0
        assert rep["all_pass"] is True
        assert rep["results"][0]["target"] == "conv2d"
        assert rep["results"][0]["max_rel_error"] < 1e-6

    def test_unknown_target_exits_2(self):
        assert run_cli("gradcheck", "--targets", "bogus") == 2

    def test_impossible_tolerance_exits_1(self, tmp_path):
        rc, rep = report(tmp_path, "gradcheck", "--targets", "relu", "--tolerance", "1e-30")
        assert rc == 1
        assert rep["all_pass"] is False

    def test_config_file_drives_targets(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"targets": ["relu", "batchnorm"], "seed": 3}))
        rc, rep = report(tmp_path, "gradcheck", "--config", str(cfg))
        assert rc == 0
        assert [r["target"] for r in rep["results"]] == ["relu", "batchnorm"]
        assert rep["seed"] == 3

    def test_unknown_config_key_exits_2(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"tarlist": ["relu"]}))
        assert run_cli("gradcheck", "--config", str(cfg)) == 2

    def test_composite_target_passes(self, tmp_path):
        rc, rep = report(tmp_path, "gradcheck", "--targets", "gce")
        assert rc == 0
        assert rep["results"][0]["max_rel_error"] < 1e-4


class TestEvalParsingCommand:
    GT = str(FIXTURES / "parsing_gt.json")

    def test_perfect_predictions_score_one(self, tmp_path):
        rc, rep = report(
            tmp_path, "eval-parsing", str(FIXTURES / "parsing_perfect_pred.json"),
            self.GT, "--classes", "4",
        )
        agg = rep["aggregate"]
        assert rc == 0
        assert agg["mIoU"] == 1.0
        assert agg["APp50"] == 1.0
        assert agg["APpVol"] == 1.0
        assert agg["PCP50"] == 1.0
        assert all(v["miou"] == 1.0 for v in rep["images"].values())

    def test_empty_predictions_zero_ap(self, tmp_path):
        rc, rep = report(
            tmp_path, "eval-parsing", str(FIXTURES / "parsing_empty_pred.json"),
            self.GT, "--classes", "4",
        )
        assert rc == 0
        assert rep["aggregate"]["APp50"] == 0.0
        assert rep["aggregate"]["PCP50"] == 0.0

    def test_matches_oracle_golden_report(self, tmp_path):
        # golden values were computed offline by the brute-force oracles
        rc, rep = report(
            tmp_path, "eval-parsing", str(FIXTURES / "parsing_pred.json"),
            self.GT, "--classes", "4",
        )
        assert rc == 0
        golden = json.loads((FIXTURES / "parsing_golden.json").read_text())
        for key in ("mIoU", "APp50", "APpVol", "PCP50"):
            assert abs(rep["aggregate"][key] - golden[key]) < 1e-12

    def test_image_set_mismatch_exits_2(self, tmp_path, capsys):
        partial = tmp_path / "partial.json"
        docs = json.loads((FIXTURES / "parsing_pred.json").read_text())
        partial.write_text(json.dumps(docs[:2]))
        rc = run_cli("eval-parsing", str(partial), self.GT, "--classes", "4")
        assert rc == 2
        assert "img2" in capsys.readouterr().err

    def test_byte_identical_across_thread_counts(self, tmp_path):
        outs = []
        for threads in ("1", "2", "4"):
            out = tmp_path / f"t{threads}.json"
            rc = run_cli(
                "eval-parsing", str(FIXTURES / "parsing_pred.json"), self.GT,
                "--classes", "4", "--threads", threads, "--out", str(out),
            )
            assert rc == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]


class TestEvalDenseposeCommand:
    GT = str(FIXTURES / "densepose_gt.json")

    def test_perfect(self, tmp_path):
        rc, rep = report(
            tmp_path, "eval-densepose", str(FIXTURES / "densepose_perfect_pred.json"), self.GT
        )
        assert rc == 0
        assert rep["aggregate"] == {"AP": 1.0, "AP50": 1.0, "AP75": 1.0}

    def test_all_wrong(self, tmp_path):
        rc, rep = report(
            tmp_path, "eval-densepose", str(FIXTURES / "densepose_wrong_pred.json"), self.GT
        )
        assert rc == 0
        assert rep["aggregate"]["AP"] == 0.0

    def test_matches_oracle_golden_report(self, tmp_path):
        rc, rep = report(
            tmp_path, "eval-densepose", str(FIXTURES / "densepose_pred.json"), self.GT
        )
        assert rc == 0
        golden = json.loads((FIXTURES / "densepose_golden.json").read_text())
        for key in ("AP", "AP50", "AP75"):
            assert abs(rep["aggregate"][key] - golden[key]) < 1e-12

    def test_kappa_flag_changes_result(self, tmp_path):
        _, tight = report(
            tmp_path, "eval-densepose", str(FIXTURES / "densepose_pred.json"), self.GT,
            "--kappa", "0.02",
        )
        _, loose = report(
            tmp_path, "eval-densepose", str(FIXTURES / "densepose_pred.json"), self.GT,
            "--kappa", "2.0",
        )
        assert tight["aggregate"]["AP"] <= loose["aggregate"]["AP"]

    def test_pointless_gt_exits_2(self, tmp_path):
        bad = tmp_path / "bad_gt.json"
        bad.write_text(json.dumps(
            {"image": {"id": "a", "width": 4, "height": 4},
             "instances": [{"score": 1.0, "box": [0, 0, 2, 2], "points": []}]}
        ))
        pred = tmp_path / "pred.json"
        pred.write_text(json.dumps(
            {"image": {"id": "a", "width": 4, "height": 4}, "instances": []}
        ))
        assert run_cli("eval-densepose", str(pred), str(bad)) == 2


class TestParamsCommand:
    def test_verdict_lighter(self, tmp_path):
        rc, rep = report(tmp_path, "params")
        assert rc == 0
        assert rep["comparison"]["verdict"] == "lighter"
        assert rep["comparison"]["gce_body"] == 2_493_440
        assert rep["comparison"]["baseline8conv_body"] == 17_698_816
        rows = {r["variant"]: r for r in rep["rows"]}
        assert rows["GCEOnly"]["body"] < rows["Baseline8Conv"]["body"]
        assert rows["Conv4_GCE_Conv4"]["body"] > rows["GCE_Conv4"]["body"]


class TestScaleCdfCommand:
    def test_full_image_instance(self, tmp_path):
        gt = tmp_path / "gt.json"
        gt.write_text(json.dumps(
            {"image": {"id": "a", "width": 8, "height": 8},
             "instances": [{"score": 1.0, "box": [0, 0, 8, 8]}]}
        ))
        rc, rep = report(tmp_path, "scale-cdf", str(gt), "--grid", "0.5,1.0")
        assert rc == 0
        assert rep["rows"] == [
            {"scale": 0.5, "fraction": 0.0},
            {"scale": 1.0, "fraction": 1.0},
        ]

    def test_non_increasing_grid_exits_2(self, tmp_path):
        gt = tmp_path / "gt.json"
        gt.write_text(json.dumps(
            {"image": {"id": "a", "width": 8, "height": 8},
             "instances": [{"score": 1.0, "box": [0, 0, 8, 8]}]}
        ))
        assert run_cli("scale-cdf", str(gt), "--grid", "0.5,0.5") == 2

    def test_sqrt_mode(self, tmp_path):
        # quarter-area box: area scale 0.25, sqrt scale 0.5
        gt = tmp_path / "gt.json"
        gt.write_text(json.dumps(
            {"image": {"id": "a", "width": 8, "height": 8},
             "instances": [{"score": 1.0, "box": [0, 0, 4, 4]}]}
        ))
        _, area = report(tmp_path, "scale-cdf", str(gt), "--grid", "0.3")
        _, sq = report(tmp_path, "scale-cdf", str(gt), "--grid", "0.3", "--scale-mode", "sqrt")
        assert area["rows"][0]["fraction"] == 1.0
        assert sq["rows"][0]["fraction"] == 0.0


class TestBenchCommand:
    def test_contract_and_echo(self, tmp_path):
        rc, rep = report(
            tmp_path, "bench", "--variants", "GCEOnly", "--resolutions", "14",
            "--repeats", "3", "--classes", "2", "--seed", "5",
        )
        assert rc == 0
        row = rep["rows"][0]
        assert len(row["samples_ms"]) == 3
        assert row["variant"] == "GCEOnly" and row["roi_resolution"] == 14
        assert rep["seed"] == 5
        assert "note" in rep

    def test_unknown_config_key_exits_2(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"variant": ["GCEOnly"]}))
        assert run_cli("bench", "--config", str(cfg)) == 2

    def test_unknown_variant_exits_2(self):
        assert run_cli("bench", "--variants", "MysteryNet", "--repeats", "3") == 2
