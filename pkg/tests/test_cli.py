"""Command-line interface: config validation, artifacts, determinism."""

import json
import os

import numpy as np
import pytest

from advview.cli import (
    EXPERIMENTS,
    SCHEMA,
    build_parser,
    default_config,
    load_config,
    main,
    schema_epilog,
    validate_config,
)
from advview.errors import ConfigError


def tiny_config(tmp_path, **bench):
    cfg = {
        "attack": {"k": 4, "iterations": 4},
        "bench": {
            "lambdas": [0.0, 0.01],
            "seeds": [0, 1],
            "n_eval": 8,
            "budget": 40,
            "n_per_point": 4,
            "r_values": [2, 5],
            "n_per_scene": 3,
            **bench,
        },
        "scene": {"resolution": 24},
        "render": {"width": 16, "height": 16, "samples_per_ray": 6},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def read_tree(root):
    out = {}
    for base, _, files in os.walk(root):
        for f in files:
            p = os.path.join(base, f)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


class TestConfig:
    def test_defaults_cover_schema(self):
        cfg = default_config()
        for section, keys in SCHEMA.items():
            holder = cfg if section == "" else cfg[section]
            for key in keys:
                assert key in holder

    def test_unknown_keys_listed(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"atack": {"k": 3}, "render": {"wdth": 4}})
        msg = str(err.value)
        assert "atack" in msg and "render.wdth" in msg

    def test_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ADVVIEW_ATTACK__K", "13")
        monkeypatch.setenv("ADVVIEW_SEED", "21")
        cfg = load_config(None)
        assert cfg["attack"]["k"] == 13 and cfg["seed"] == 21

    def test_bad_env_override_rejected(self, monkeypatch):
        monkeypatch.setenv("ADVVIEW_NOPE", "1")
        with pytest.raises(ConfigError, match="ADVVIEW_NOPE"):
            load_config(None)

    def test_missing_config_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/definitely/not/here.json")

    def test_help_documents_every_config_key(self):
        help_text = build_parser().format_help()
        epilog = schema_epilog()
        assert epilog in help_text or all(
            (key if section == "" else f"{section}.{key}") in help_text
            for section, keys in SCHEMA.items()
            for key in keys
        )
        for section, keys in SCHEMA.items():
            for key in keys:
                path = key if section == "" else f"{section}.{key}"
                assert path in help_text, f"--help missing config key {path}"


class TestExitCodes:
    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"no_such": 1}))
        code = main(["attack", "--config", str(bad), "--out-dir", str(tmp_path / "o")])
        assert code == 2
        assert "no_such" in capsys.readouterr().err

    def test_missing_scene_file_exits_2_with_path(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"scene": {"source": "file", "path": "/nope/missing.vox"}}))
        code = main(["attack", "--config", str(cfg), "--out-dir", str(tmp_path / "o")])
        assert code == 2
        assert "/nope/missing.vox" in capsys.readouterr().err

    def test_out_of_bounds_viewpoint_exits_2(self, tmp_path, capsys):
        code = main([
            "render", "--viewpoint", "999,0,0,0,0,0",
            "--out", str(tmp_path / "img.png"), "--out-dir", str(tmp_path),
        ])
        assert code == 2
        assert "outside" in capsys.readouterr().err


class TestRenderCommand:
    def test_render_writes_centered_object(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "preset": "paper-full",
            "scene": {"source": "primitive", "kind": "sphere", "resolution": 24,
                      "name": "ball", "label": 0},
            "render": {"width": 21, "height": 21, "samples_per_ray": 16,
                       "stratified": False, "fov_deg": 40.0},
        }))
        out = tmp_path / "ball.png"
        code = main(["render", "--config", str(cfg), "--viewpoint", "0,0,90,0,0,0",
                     "--out", str(out), "--out-dir", str(tmp_path)])
        assert code == 0
        from PIL import Image

        px = np.asarray(Image.open(out)).astype(float) / 255.0
        mask = np.any(np.abs(px - 1.0) > 0.02, axis=-1)
        assert mask.sum() > 20
        ys, xs = np.nonzero(mask)
        assert abs(ys.mean() - 10) < 1.5 and abs(xs.mean() - 10) < 1.5

    def test_same_seed_identical_bytes(self, tmp_path):
        args = lambda out: ["render", "--seed", "9", "--out", str(out), "--out-dir", str(tmp_path)]
        assert main(args(tmp_path / "a.png")) == 0
        assert main(args(tmp_path / "b.png")) == 0
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


class TestAttackCommand:
    def test_artifacts_and_determinism(self, tmp_path):
        cfg = tiny_config(tmp_path)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        for out in (out1, out2):
            code = main(["attack", "--config", cfg, "--seed", "7", "--out-dir", str(out)])
            assert code == 0
        t1, t2 = read_tree(out1), read_tree(out2)
        assert set(t1) == {"trace.json", "checkpoint.json", "report.json"}
        assert t1 == t2
        report = json.loads(t1["report.json"])
        assert report["config_echo"]["seed"] == 7
        assert 0.0 <= report["report"]["rate_dist"] <= 1.0
        trace = json.loads(t1["trace.json"])
        assert trace["queries"] == 16
        assert len(trace["iterations"]) == 4

    def test_paper_defaults_echoed(self, tmp_path):
        # config defaults carry the standard experiment settings
        cfg = default_config()
        assert cfg["attack"]["lambda"] == 0.01
        assert cfg["attack"]["k"] == 50
        assert cfg["attack"]["iterations"] == 100
        bounds_preset_cfg = default_config()
        assert bounds_preset_cfg["preset"] == "toy-wedge"


class TestBenchCommand:
    def test_lambda_sweep_rows(self, tmp_path):
        cfg = tiny_config(tmp_path)
        out = tmp_path / "sweep"
        code = main(["bench", "--experiment", "lambda-sweep", "--config", cfg,
                     "--out-dir", str(out), "--jobs", "1"])
        assert code == 0
        lines = (out / "lambda_sweep.csv").read_text().strip().splitlines()
        assert lines[0].startswith("lambda,seed,")
        assert len(lines) == 1 + 2 * 2  # one row per (lambda, seed)

    def test_random_vs_nes_two_rows(self, tmp_path):
        cfg = tiny_config(tmp_path)
        out = tmp_path / "rvn"
        code = main(["bench", "--experiment", "random-vs-nes", "--config", cfg,
                     "--out-dir", str(out), "--jobs", "1"])
        assert code == 0
        lines = (out / "random_vs_nes.csv").read_text().strip().splitlines()
        assert len(lines) == 3
        assert lines[1].startswith("random-search,")
        assert lines[2].startswith("nes-attack,")

    def test_emit_dataset_writes_manifest(self, tmp_path):
        cfg = tiny_config(tmp_path)
        out = tmp_path / "ds"
        code = main(["bench", "--experiment", "emit-dataset", "--config", cfg,
                     "--out-dir", str(out), "--jobs", "1"])
        assert code == 0
        manifest = out / "manifest.jsonl"
        rows = [json.loads(x) for x in manifest.read_text().splitlines()][1:]
        assert len(rows) == 4 * 3  # 4 demo scenes x n_per_scene
        for r in rows:
            assert (out / r["file"]).exists()

    def test_unknown_experiment_exits_2(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path)
        code = main(["bench", "--config", cfg, "--out-dir", str(tmp_path / "x")])
        assert code == 2  # bench.experiment unset and no --experiment given

    def test_jobs_do_not_change_artifacts(self, tmp_path):
        cfg = tiny_config(tmp_path)
        outs = []
        for jobs in ("1", "2"):
            out = tmp_path / f"j{jobs}"
            code = main(["bench", "--experiment", "lambda-sweep", "--config", cfg,
                         "--out-dir", str(out), "--jobs", jobs])
            assert code == 0
            outs.append(read_tree(out))
        assert outs[0] == outs[1]
