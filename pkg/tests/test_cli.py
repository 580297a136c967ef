import json

import numpy as np
import pytest

from anchorloc import formats
from anchorloc.cli import dispatch, parse_kv_file

from conftest import TINY_SYNTH


def run(*argv):
    return dispatch(list(argv))


class TestUsage:
    @pytest.mark.parametrize(
        "argv",
        [
            ("--help",),
            ("anchors", "--help"),
            ("anchors", "orthogonalize", "--help"),
            ("pseudo", "generate", "--help"),
            ("synth", "generate", "--help"),
            ("train", "--help"),
            ("eval", "--help"),
            ("report", "--help"),
        ],
    )
    def test_help_exits_zero(self, argv, capsys):
        assert run(*argv) == 0
        assert "usage" in capsys.readouterr().out.lower()

    def test_unknown_flag_exits_two(self, capsys):
        assert run("train", "--does-not-exist") == 2

    def test_unknown_subcommand_exits_two(self):
        assert run("frobnicate") == 2

    def test_missing_required_flag_exits_two(self):
        assert run("eval", "--manifest", "m.jsonl") == 2


class TestDomainErrors:
    def test_rank_deficient_anchor_file(self, tmp_path, capsys):
        from anchorloc.anchors import AnchorSet

        rows = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        formats.save_anchors(
            tmp_path / "bad.tdla",
            AnchorSet.from_rows(rows, ["a", "b"], normalize_rows=False),
        )
        code = run(
            "anchors", "orthogonalize",
            "--in", str(tmp_path / "bad.tdla"),
            "--out", str(tmp_path / "out.tdla"),
        )
        assert code == 1
        assert "RankDeficient" in capsys.readouterr().err

    def test_missing_input_file(self, tmp_path, capsys):
        code = run(
            "anchors", "orthogonalize",
            "--in", str(tmp_path / "nope.tdla"),
            "--out", str(tmp_path / "out.tdla"),
        )
        assert code == 1
        assert capsys.readouterr().err.strip()


def synth_config_file(tmp_path):
    path = tmp_path / "synth.cfg"
    lines = [f"{key} = {value}" for key, value in TINY_SYNTH.items()]
    lines.append("# comment line")
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = synth_config_file(root)
    assert run("synth", "generate", "--config", str(cfg_path), "--out", str(root / "data")) == 0
    assert run(
        "anchors", "orthogonalize",
        "--in", str(root / "data" / "anchors_raw.tdla"),
        "--out", str(root / "anchors" / "ortho.tdla"),
    ) == 0
    assert run(
        "train",
        "--manifest", str(root / "data" / "manifest.jsonl"),
        "--anchors", str(root / "anchors" / "ortho.tdla"),
        "--out", str(root / "train"),
        "--epochs", "10", "--batch-size", "8", "--seed", "13", "--embed-dim", "8",
    ) == 0
    assert run(
        "eval",
        "--checkpoint", str(root / "train" / "model_best.ckpt"),
        "--manifest", str(root / "data" / "manifest.jsonl"),
        "--report", str(root / "eval" / "report.json"),
        "--split", "val", "--map-resolution", "64",
    ) == 0
    return root


class TestFullPipeline:
    def test_outputs_exist(self, workdir):
        assert (workdir / "data" / "manifest.jsonl").exists()
        assert (workdir / "anchors" / "ortho.tdla").exists()
        assert (workdir / "train" / "model_best.ckpt").exists()
        assert (workdir / "eval" / "report.json").exists()

    def test_every_output_dir_has_one_run_manifest(self, workdir):
        for sub in ("data", "anchors", "train", "eval"):
            manifests = list((workdir / sub).glob("run_manifest.json"))
            assert len(manifests) == 1, sub
            payload = json.loads(manifests[0].read_text())
            assert payload["tool_version"]
            assert payload["subcommand"]
            assert "config" in payload and "duration_seconds" in payload

    def test_report_schema(self, workdir):
        report = json.loads((workdir / "eval" / "report.json").read_text())
        for key in ("maxboxacc", "top1_loc", "top5_loc", "top1_cls", "curve", "per_image"):
            assert key in report
        assert report["curve"][0].keys() == {"threshold", "acc"}
        assert set(report["per_image"][0]) == {"id", "iou", "pred_class", "correct"}
        assert report["top1_loc"] <= report["top5_loc"] <= report["maxboxacc"] + 1e-12
        # label-consuming diagnostic is off unless explicitly requested
        assert "patch_text" not in report

    def test_patch_text_flagged_when_requested(self, workdir):
        out = workdir / "eval_pt" / "report.json"
        assert run(
            "eval",
            "--checkpoint", str(workdir / "train" / "model_best.ckpt"),
            "--manifest", str(workdir / "data" / "manifest.jsonl"),
            "--report", str(out),
            "--split", "val", "--map-resolution", "64", "--patch-text-map",
        ) == 0
        report = json.loads(out.read_text())
        assert report["patch_text"]["uses_true_labels"] is True

    def test_eval_parallel_matches_serial(self, workdir):
        serial = workdir / "eval" / "report.json"
        parallel = workdir / "eval_jobs" / "report.json"
        assert run(
            "eval",
            "--checkpoint", str(workdir / "train" / "model_best.ckpt"),
            "--manifest", str(workdir / "data" / "manifest.jsonl"),
            "--report", str(parallel),
            "--split", "val", "--map-resolution", "64", "--jobs", "4",
        ) == 0
        assert json.loads(serial.read_text()) == json.loads(parallel.read_text())

    def test_report_plot(self, workdir):
        assert run(
            "report",
            "--report", str(workdir / "eval" / "report.json"),
            "--out", str(workdir / "figures"),
            "--plot",
            "--checkpoint", str(workdir / "train" / "model_best.ckpt"),
            "--manifest", str(workdir / "data" / "manifest.jsonl"),
            "--split", "val", "--limit", "2",
        ) == 0
        assert (workdir / "figures" / "threshold_curve.png").exists()
        overlays = list((workdir / "figures" / "overlays").glob("overlay_*.png"))
        assert len(overlays) == 2

    def test_pseudo_generate(self, workdir):
        out = workdir / "pseudo"
        assert run(
            "pseudo", "generate",
            "--cams", str(workdir / "data" / "cams"),
            "--patch-grid", "16x16",
            "--out", str(out),
            "--seed", "3", "--n-fg", "36",
        ) == 0
        samples = sorted(out.glob("*.json"))
        samples = [p for p in samples if p.name != "run_manifest.json"]
        assert len(samples) == sum(TINY_SYNTH[k] for k in ("train_count", "val_count", "test_count"))
        payload = json.loads(samples[0].read_text())
        labels = payload["labels"]
        assert sum(labels) * 2 == len(labels)
        for r, c in payload["locations"]:
            assert 0 <= r < 16 and 0 <= c < 16


class TestConfigResolution:
    def test_cli_flag_overrides_config_file(self, tiny_dataset, tmp_path):
        cfg_file = tmp_path / "train.cfg"
        cfg_file.write_text("epochs = 2\nbatch_size = 8\nembed_dim = 8\nn_fg = 36\nseed = 13\n")
        assert run(
            "train",
            "--manifest", str(tiny_dataset["manifest"]),
            "--anchors", str(tiny_dataset["anchors"]),
            "--config", str(cfg_file),
            "--out", str(tmp_path / "out"),
            "--epochs", "3",
        ) == 0
        manifest = json.loads((tmp_path / "out" / "run_manifest.json").read_text())
        assert manifest["config"]["epochs"] == 3  # flag wins
        assert manifest["config"]["batch_size"] == 8  # file wins over default

    def test_env_var_output_root(self, tiny_dataset, tmp_path, monkeypatch):
        monkeypatch.setenv("ANCHORLOC_OUT_ROOT", str(tmp_path / "root"))
        cams = tiny_dataset["root"] / "cams"
        assert run(
            "pseudo", "generate",
            "--cams", str(cams),
            "--patch-grid", "16x16",
            "--seed", "1", "--n-fg", "36",
        ) == 0
        assert (tmp_path / "root" / "pseudo" / "run_manifest.json").exists()

    def test_parse_kv_rejects_garbage(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("this is not a key value line\n")
        with pytest.raises(ValueError):
            parse_kv_file(bad)

    def test_missing_out_without_env_is_usage_error(self, tiny_dataset, monkeypatch, capsys):
        monkeypatch.delenv("ANCHORLOC_OUT_ROOT", raising=False)
        code = run(
            "pseudo", "generate",
            "--cams", str(tiny_dataset["root"] / "cams"),
            "--patch-grid", "16x16", "--n-fg", "36",
        )
        assert code == 2
        assert "--out" in capsys.readouterr().err
