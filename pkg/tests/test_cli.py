"""End-to-end tests of the command-line interface.

Every test drives ``main`` in-process and parses the JSON records it
streams, so exit codes, stdout, and stderr are all checked against the
documented contract: 0 success, 1 usage error, 2 runtime failure, 3
failed gradient gate.
"""

import json

import numpy as np
import pytest

from langgrasp.cli import main
from langgrasp.data import GeneratorConfig, generate_dataset, read_dataset, write_dataset
from langgrasp.train import load_checkpoint


def run_cli(capsys, *argv):
    """Run ``main`` and return (exit code, parsed records, stderr)."""
    capsys.readouterr()  # drain fixture output so records start clean
    code = main(list(argv))
    captured = capsys.readouterr()
    records = [
        json.loads(line) for line in captured.out.splitlines() if line.strip()
    ]
    return code, records, captured.err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def dataset_dir(workdir):
    out = workdir / "data"
    code = main([
        "gen", "--out", str(out), "--scenes", "12", "--eval-seen", "4",
        "--eval-unseen", "4", "--dim", "16", "--proposals", "4",
        "--tokens", "2", "--categories", "4", "--seed", "9",
    ])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def ckpt_path(workdir, dataset_dir):
    path = workdir / "model.json"
    code = main([
        "train", "--data", str(dataset_dir / "train.jsonl"),
        "--ckpt", str(path), "--epochs", "2", "--heads", "2", "--seed", "3",
    ])
    assert code == 0
    return path


class TestGen:
    def test_round_trip(self, capsys, tmp_path):
        out = tmp_path / "ds"
        code, records, _ = run_cli(
            capsys, "gen", "--out", str(out), "--scenes", "5",
            "--eval-seen", "3", "--eval-unseen", "2", "--dim", "16",
            "--proposals", "4", "--tokens", "2", "--categories", "4",
            "--seed", "1",
        )
        assert code == 0
        assert [r["record_type"] for r in records] == ["dataset", "dataset"]
        assert records[0]["split"] == "train" and records[0]["scenes"] == 5
        assert records[1]["scenes"] == 5
        assert records[1]["seen"] == 3 and records[1]["unseen"] == 2
        cfg, train_scenes = read_dataset(out / "train.jsonl")
        assert cfg.dim == 16 and len(train_scenes) == 5
        _, eval_scenes = read_dataset(out / "eval.jsonl")
        assert sum(s.is_unseen for s in eval_scenes) == 2

    def test_rerun_is_byte_identical(self, capsys, tmp_path):
        argv = ["gen", "--scenes", "4", "--eval-seen", "2", "--eval-unseen", "2",
                "--dim", "16", "--categories", "4", "--seed", "5"]
        for sub in ("a", "b"):
            code, _, _ = run_cli(capsys, *argv, "--out", str(tmp_path / sub))
            assert code == 0
        for name in ("train.jsonl", "eval.jsonl"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_seed_changes_output(self, capsys, tmp_path):
        for sub, seed in (("a", "5"), ("b", "6")):
            run_cli(capsys, "gen", "--out", str(tmp_path / sub), "--scenes", "4",
                    "--eval-seen", "0", "--eval-unseen", "0", "--dim", "16",
                    "--categories", "4", "--seed", seed)
        assert (tmp_path / "a" / "train.jsonl").read_bytes() != \
            (tmp_path / "b" / "train.jsonl").read_bytes()

    def test_zero_scenes_is_usage_error(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "gen", "--out", str(tmp_path / "x"),
                               "--scenes", "0")
        assert code == 1
        assert "--scenes" in err

    def test_rejected_dim_is_usage_error(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "gen", "--out", str(tmp_path / "x"),
                               "--dim", "4")
        assert code == 1
        assert "dim" in err

    def test_unwritable_out_is_runtime_error(self, capsys, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        code, _, err = run_cli(
            capsys, "gen", "--out", str(blocker / "sub"), "--scenes", "2",
            "--dim", "16", "--categories", "4",
        )
        assert code == 2
        assert err.startswith("error:")

    def test_occlusion_flag(self, capsys, tmp_path):
        out = tmp_path / "occ"
        code, _, _ = run_cli(
            capsys, "gen", "--out", str(out), "--scenes", "2",
            "--eval-seen", "0", "--eval-unseen", "0", "--dim", "16",
            "--categories", "4", "--occlusion", "yes",
        )
        assert code == 0
        header = json.loads(
            (out / "train.jsonl").read_text().splitlines()[0]
        )
        assert header["config"]["occlusion"] is True

    def test_occlusion_rejects_non_boolean(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "gen", "--out", str(tmp_path / "x"),
                               "--occlusion", "maybe")
        assert code == 1
        assert "boolean" in err

    def test_pretty_output(self, capsys, tmp_path):
        capsys.readouterr()
        code = main(["gen", "--out", str(tmp_path / "p"), "--scenes", "2",
                     "--eval-seen", "0", "--eval-unseen", "0", "--dim", "16",
                     "--categories", "4", "--pretty"])
        out = capsys.readouterr().out
        assert code == 0
        assert out.startswith("[dataset]")


class TestTrain:
    def test_streams_epochs_then_checkpoint(self, capsys, tmp_path, dataset_dir):
        ckpt = tmp_path / "m.json"
        code, records, _ = run_cli(
            capsys, "train", "--data", str(dataset_dir / "train.jsonl"),
            "--ckpt", str(ckpt), "--epochs", "2", "--heads", "2",
            "--seed", "3", "--eval", str(dataset_dir / "eval.jsonl"),
        )
        assert code == 0
        epochs = [r for r in records if r["record_type"] == "epoch"]
        assert [r["epoch"] for r in epochs] == [1, 2]
        for record in epochs:
            assert isinstance(record["loss"], float)
            for key in ("seen", "unseen", "h"):
                assert isinstance(record[key], float)
        assert records[-1]["record_type"] == "checkpoint"
        loaded = load_checkpoint(ckpt)
        assert loaded.epoch == 2

    def test_no_cor_matches_zero_lambda(self, capsys, tmp_path, dataset_dir):
        paths = []
        for name, extra in (("a.json", ["--no-cor"]),
                            ("b.json", ["--lambda-cor", "0.0"])):
            path = tmp_path / name
            code, _, _ = run_cli(
                capsys, "train", "--data", str(dataset_dir / "train.jsonl"),
                "--ckpt", str(path), "--epochs", "2", "--heads", "2",
                "--seed", "3", *extra,
            )
            assert code == 0
            paths.append(path)
        first, second = (load_checkpoint(p).params for p in paths)
        for (name, a), (_, b) in zip(first.named(), second.named()):
            assert np.array_equal(a.data, b.data), name

    def test_heads_must_divide_width(self, capsys, tmp_path, dataset_dir):
        code, _, err = run_cli(
            capsys, "train", "--data", str(dataset_dir / "train.jsonl"),
            "--ckpt", str(tmp_path / "m.json"), "--epochs", "1", "--heads", "3",
        )
        assert code == 1
        assert "heads" in err

    def test_zero_epochs_is_usage_error(self, capsys, tmp_path, dataset_dir):
        code, _, err = run_cli(
            capsys, "train", "--data", str(dataset_dir / "train.jsonl"),
            "--ckpt", str(tmp_path / "m.json"), "--epochs", "0",
        )
        assert code == 1
        assert "--epochs" in err

    def test_missing_dataset(self, capsys, tmp_path):
        code, _, err = run_cli(
            capsys, "train", "--data", str(tmp_path / "absent.jsonl"),
            "--ckpt", str(tmp_path / "m.json"),
        )
        assert code == 2
        assert err.startswith("error:")

    def test_malformed_dataset(self, capsys, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("this is not a dataset\n")
        code, _, err = run_cli(
            capsys, "train", "--data", str(bad),
            "--ckpt", str(tmp_path / "m.json"),
        )
        assert code == 2
        assert err.startswith("error:")

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_non_finite_feature_aborts(self, capsys, tmp_path, dataset_dir):
        lines = (dataset_dir / "train.jsonl").read_text().splitlines()
        scene = json.loads(lines[1])
        scene["vis"][0][0] = float("inf")
        lines[1] = json.dumps(scene)
        poisoned = tmp_path / "poisoned.jsonl"
        poisoned.write_text("\n".join(lines) + "\n")
        code, _, err = run_cli(
            capsys, "train", "--data", str(poisoned),
            "--ckpt", str(tmp_path / "m.json"), "--epochs", "1", "--heads", "2",
        )
        assert code == 2
        assert "non-finite" in err


class TestEval:
    def test_record_schema(self, capsys, dataset_dir, ckpt_path):
        code, records, _ = run_cli(
            capsys, "eval", "--ckpt", str(ckpt_path),
            "--data", str(dataset_dir / "eval.jsonl"),
        )
        assert code == 0
        (record,) = records
        assert record["record_type"] == "eval"
        assert record["seen_count"] == 4 and record["unseen_count"] == 4
        seen, unseen = record["seen"], record["unseen"]
        if seen + unseen == 0:
            assert record["h"] == 0.0
        else:
            expected = 2 * seen * unseen / (seen + unseen)
            assert record["h"] == pytest.approx(expected, abs=1e-12)

    def test_seen_only_split_reports_null_unseen(self, capsys, tmp_path,
                                                 ckpt_path):
        cfg = GeneratorConfig(dim=16, proposals=4, tokens=2, categories=4,
                              seed=9)
        _, eval_seen, _ = generate_dataset(cfg, 1, 4, 0)
        path = tmp_path / "seen_only.jsonl"
        write_dataset(path, cfg, eval_seen)
        code, records, _ = run_cli(
            capsys, "eval", "--ckpt", str(ckpt_path), "--data", str(path),
        )
        assert code == 0
        assert records[0]["unseen"] is None
        assert records[0]["h"] is None
        assert isinstance(records[0]["seen"], float)

    def test_dump_features(self, capsys, tmp_path, dataset_dir, ckpt_path):
        dump = tmp_path / "features.jsonl"
        code, records, _ = run_cli(
            capsys, "eval", "--ckpt", str(ckpt_path),
            "--data", str(dataset_dir / "eval.jsonl"),
            "--dump-features", str(dump),
        )
        assert code == 0
        assert records[-1]["record_type"] == "features"
        rows = [json.loads(line) for line in dump.read_text().splitlines()]
        assert len(rows) == records[-1]["rows"] == 8 * 4
        positives = {}
        for row in rows:
            assert set(row) == {"scene_id", "proposal", "positive", "z_vis"}
            assert len(row["z_vis"]) == 16
            positives[row["scene_id"]] = (
                positives.get(row["scene_id"], 0) + row["positive"]
            )
        assert set(positives.values()) == {1}

    def test_width_mismatch(self, capsys, tmp_path, ckpt_path):
        out = tmp_path / "narrow"
        run_cli(capsys, "gen", "--out", str(out), "--scenes", "1",
                "--eval-seen", "2", "--eval-unseen", "1", "--dim", "12",
                "--categories", "4")
        code, _, err = run_cli(
            capsys, "eval", "--ckpt", str(ckpt_path),
            "--data", str(out / "eval.jsonl"),
        )
        assert code == 2
        assert "width" in err

    def test_missing_checkpoint(self, capsys, tmp_path, dataset_dir):
        code, _, err = run_cli(
            capsys, "eval", "--ckpt", str(tmp_path / "absent.json"),
            "--data", str(dataset_dir / "eval.jsonl"),
        )
        assert code == 2
        assert err.startswith("error:")


class TestIou:
    def test_identical_rects(self, capsys):
        code, records, _ = run_cli(
            capsys, "iou", "--rect1", "0.5,0.5,0.2,0.1,30",
            "--rect2", "0.5,0.5,0.2,0.1,30",
        )
        assert code == 0
        (record,) = records
        assert record["iou"] == pytest.approx(1.0, abs=1e-12)
        assert record["angle_diff"] == 0.0
        assert record["success"] is True

    def test_known_overlap(self, capsys):
        # squares of side 0.2 offset by 0.1: intersection 0.02, union 0.06
        code, records, _ = run_cli(
            capsys, "iou", "--rect1", "0.3,0.5,0.2,0.2,0",
            "--rect2", "0.4,0.5,0.2,0.2,0",
        )
        assert code == 0
        assert records[0]["iou"] == pytest.approx(1 / 3, abs=1e-12)
        assert records[0]["success"] is True

    def test_disjoint(self, capsys):
        code, records, _ = run_cli(
            capsys, "iou", "--rect1", "0.2,0.2,0.1,0.1,0",
            "--rect2", "0.8,0.8,0.1,0.1,0",
        )
        assert code == 0
        assert records[0]["iou"] == 0.0
        assert records[0]["success"] is False

    def test_angle_gate_blocks_success(self, capsys):
        # same square rotated 45 degrees: large overlap, angle too far
        code, records, _ = run_cli(
            capsys, "iou", "--rect1", "0.5,0.5,0.2,0.2,0",
            "--rect2", "0.5,0.5,0.2,0.2,45",
        )
        assert code == 0
        assert records[0]["iou"] > 0.25
        assert records[0]["success"] is False

    def test_wrong_component_count(self, capsys):
        code, _, err = run_cli(capsys, "iou", "--rect1", "1,2,3",
                               "--rect2", "0.5,0.5,0.2,0.1,0")
        assert code == 1
        assert "5 comma-separated" in err

    def test_non_numeric_component(self, capsys):
        code, _, err = run_cli(capsys, "iou", "--rect1", "a,b,c,d,e",
                               "--rect2", "0.5,0.5,0.2,0.1,0")
        assert code == 1
        assert "non-numeric" in err

    def test_pretty_output(self, capsys):
        capsys.readouterr()
        code = main(["iou", "--rect1", "0.5,0.5,0.2,0.1,0",
                     "--rect2", "0.5,0.5,0.2,0.1,0", "--pretty"])
        out = capsys.readouterr().out
        assert code == 0
        assert out.startswith("[iou]")


class TestGradcheck:
    def test_all_checks_pass(self, capsys):
        code, records, _ = run_cli(capsys, "gradcheck")
        assert code == 0
        summary = records[-1]
        assert summary["record_type"] == "gradcheck_summary"
        assert summary["ok"] is True
        assert summary["max_rel_err"] < 1e-4
        ops = {r["op"] for r in records if r["record_type"] == "gradcheck"}
        assert {"matmul", "relu", "row_softmax", "layer_norm"} <= ops
        assert "full model loss (text-query)" in ops
        assert "full model loss (region-query)" in ops
        assert all(r["ok"] for r in records if r["record_type"] == "gradcheck")

    def test_corrupted_gradient_is_caught(self, capsys):
        code, records, _ = run_cli(capsys, "gradcheck", "--corrupt")
        assert code == 3
        bad = [r for r in records
               if r["record_type"] == "gradcheck" and not r["ok"]]
        assert len(bad) == 1
        assert "corrupted" in bad[0]["op"]
        assert records[-1]["ok"] is False


class TestParsing:
    def test_unknown_subcommand(self, capsys):
        code, _, err = run_cli(capsys, "frobnicate")
        assert code == 1
        assert err

    def test_unknown_flag(self, capsys):
        code, _, err = run_cli(capsys, "iou", "--rect1", "0,0,1,1,0",
                               "--rect2", "0,0,1,1,0", "--sideways")
        assert code == 1
        assert err

    def test_no_arguments(self, capsys):
        code, _, err = run_cli(capsys)
        assert code == 1
        assert err
