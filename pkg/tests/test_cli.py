import csv
import json

import pytest

from zpress import bench
from zpress.cli import cli_main
from zpress.geometry import poses_to_json
from zpress.scene import default_intrinsics, make_trajectory, read_ppm

TINY = {"k_views": 4, "n_anchors": 2, "image_size": 16, "steps": 3, "eval_scenes": 1, "target_views": 2}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def cfg_path(tmp_path):
    return write(tmp_path / "c.json", TINY)


@pytest.fixture
def isolated_cache(monkeypatch):
    monkeypatch.delenv("ZPRESS_CACHE", raising=False)


class TestExitCodes:
    def test_missing_config_names_path(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert cli_main(["train", "--config", str(missing), "--out", str(tmp_path / "o")]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_unknown_flag(self, cfg_path, tmp_path, capsys):
        assert cli_main(["train", "--config", str(cfg_path), "--out", str(tmp_path), "--frobnicate"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand(self, tmp_path):
        assert cli_main(["explode", "--out", str(tmp_path)]) == 2

    def test_invalid_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{\n  \"steps\": 3,,\n}")
        assert cli_main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_invalid_field_value(self, tmp_path):
        bad = write(tmp_path / "bad.json", {**TINY, "n_anchors": 9})
        assert cli_main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2

    def test_runtime_failure_is_1(self, tmp_path):
        ck = tmp_path / "broken.zptn"
        ck.write_bytes(b"not an archive")
        (tmp_path / "broken.zptn.json").write_text(json.dumps({"config": TINY, "step": 0}))
        assert cli_main(["eval", "--checkpoint", str(ck), "--out", str(tmp_path / "o")]) == 1

    def test_help(self, capsys):
        assert cli_main(["--help"]) == 0


class TestTrain:
    def test_outputs_and_manifest(self, cfg_path, tmp_path):
        out = tmp_path / "d"
        assert cli_main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
        for name in ("checkpoint.zptn", "metrics.csv", "manifest.json"):
            assert (out / name).is_file()
        man = json.loads((out / "manifest.json").read_text())
        assert {"checkpoint.zptn", "metrics.csv"} <= set(man["files"])
        rows = read_csv(out / "metrics.csv")
        assert list(rows[0]) == ["step", "task", "kl", "total", "psnr", "wallclock_ms", "n_primitives"]
        assert len(rows) == 3

    def test_rerun_byte_identical(self, cfg_path, tmp_path):
        for d in ("a", "b"):
            assert cli_main(["train", "--config", str(cfg_path), "--out", str(tmp_path / d)]) == 0
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_seed_flag_overrides(self, cfg_path, tmp_path):
        cli_main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "a")])
        cli_main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "b"), "--seed", "5"])
        ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
        mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert mb["config"]["seed"] == 5 and ma["config_hash"] != mb["config_hash"]

    def test_hash_tracks_config(self, tmp_path):
        hashes = set()
        for i, extra in enumerate([{}, {}, {"beta": 0.0}, {"lr": 0.02}]):
            out = tmp_path / f"o{i}"
            cli_main(["train", "--config", str(write(tmp_path / f"c{i}.json", {**TINY, **extra})), "--out", str(out)])
            hashes.add(json.loads((out / "manifest.json").read_text())["config_hash"])
        assert len(hashes) == 3

    def test_explicit_default_hashes_same(self, tmp_path):
        a = write(tmp_path / "a.json", TINY)
        b = write(tmp_path / "b.json", {**TINY, "beta": 1e-5})
        for p, d in ((a, "oa"), (b, "ob")):
            cli_main(["train", "--config", str(p), "--out", str(tmp_path / d)])
        ha = json.loads((tmp_path / "oa" / "manifest.json").read_text())["config_hash"]
        hb = json.loads((tmp_path / "ob" / "manifest.json").read_text())["config_hash"]
        assert ha == hb


class TestEvalRender:
    @pytest.fixture
    def ckpt(self, cfg_path, tmp_path):
        cli_main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "run")])
        return tmp_path / "run" / "checkpoint.zptn"

    def test_eval(self, ckpt, tmp_path):
        out = tmp_path / "ev"
        assert cli_main(["eval", "--checkpoint", str(ckpt), "--out", str(out)]) == 0
        res = json.loads((out / "eval.json").read_text())
        assert res["n_primitives"] == 8 and res["psnr_mean"] > 0

    def test_eval_missing_checkpoint(self, tmp_path, capsys):
        assert cli_main(["eval", "--checkpoint", str(tmp_path / "x.zptn"), "--out", str(tmp_path)]) == 2
        assert "x.zptn" in capsys.readouterr().err

    def test_render_with_pose_file(self, ckpt, tmp_path):
        poses = make_trajectory("arc", 2, 0.5, intrinsics=default_intrinsics(10))
        pf = tmp_path / "poses.json"
        pf.write_text(poses_to_json(poses))
        out = tmp_path / "img"
        assert cli_main(["render", "--checkpoint", str(ckpt), "--poses", str(pf), "--out", str(out)]) == 0
        man = json.loads((out / "manifest.json").read_text())
        assert man["files"] == ["view_000.ppm", "view_001.ppm"]
        assert read_ppm(out / "view_001.ppm").pixels.shape == (10, 10, 3)

    def test_render_bad_pose_file(self, ckpt, tmp_path, capsys):
        pf = write(tmp_path / "poses.json", [{"rotation": [1, 0, 0]}])
        assert cli_main(["render", "--checkpoint", str(ckpt), "--poses", str(pf), "--out", str(tmp_path / "o")]) == 2
        assert "entry 0" in capsys.readouterr().err


def experiment(tmp_path, **kw):
    spec = {"name": "t", "base": TINY, "seeds": [0, 1], **kw}
    return write(tmp_path / "exp.json", spec)


@pytest.mark.usefixtures("isolated_cache")
class TestExperiments:
    def test_scaling_rows(self, tmp_path):
        out = tmp_path / "o"
        path = experiment(tmp_path, axis="k_views", values=[4, 6])
        assert cli_main(["scaling", "--config", str(path), "--out", str(out)]) == 0
        rows = read_csv(out / "scaling.csv")
        assert len(rows) == 2 * 2 * 2
        comp = {r["k_views"]: int(r["n_primitives"]) for r in rows if r["variant"] == "compressed"}
        base = {r["k_views"]: int(r["n_primitives"]) for r in rows if r["variant"] == "baseline"}
        assert comp == {"4": 8, "6": 8} and base == {"4": 16, "6": 24}
        assert all(int(r["peak_bytes"]) > 0 for r in rows)

    def test_scaling_rejects_other_axis(self, tmp_path):
        path = experiment(tmp_path, axis="beta", values=[0.0])
        assert cli_main(["scaling", "--config", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_bad_axis_value_named(self, tmp_path, capsys):
        path = experiment(tmp_path, axis="strategy", values=["fps", "psychic"])
        assert cli_main(["strategies", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
        assert "psychic" in capsys.readouterr().err

    def test_unsafe_name(self, tmp_path):
        path = write(tmp_path / "e.json", {"name": "../x", "axis": "beta", "values": [0.0]})
        assert cli_main(["ablate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_ablate_beta(self, tmp_path):
        out = tmp_path / "o"
        path = experiment(tmp_path, axis="beta", values=[0.0, 1e-5])
        assert cli_main(["ablate", "--config", str(path), "--out", str(out)]) == 0
        rows = read_csv(out / "ablation.csv")
        assert [(r["variant"], r["seed"]) for r in rows] == [("0.0", "0"), ("0.0", "1"), ("1e-05", "0"), ("1e-05", "1")]
        summary = json.loads((out / "ablation_summary.json").read_text())
        assert set(summary["order"]) == {"0.0", "1e-05"}
        assert "ablation.csv" in json.loads((out / "manifest.json").read_text())["files"]

    def test_strategies_deterministic(self, tmp_path):
        path = experiment(tmp_path, axis="strategy", values=["fps", "overlap", "kmeans_pose", "kmeans_feature"], seeds=[0])
        for d in ("a", "b"):
            assert cli_main(["strategies", "--config", str(path), "--out", str(tmp_path / d)]) == 0
        a = (tmp_path / "a" / "strategies.csv").read_bytes()
        assert a == (tmp_path / "b" / "strategies.csv").read_bytes()
        variants = [r["variant"] for r in read_csv(tmp_path / "a" / "strategies.csv")]
        assert sorted(variants) == variants and set(variants) == {"fps", "overlap", "kmeans_pose", "kmeans_feature", "no_fusion"}

    def test_sweep_includes_n_equals_k(self, tmp_path):
        out = tmp_path / "o"
        path = experiment(tmp_path, axis="n_anchors", values=[1, 2, 4], seeds=[0], baselines={"narrow": 0.4, "wide": 1.6})
        assert cli_main(["sweep", "--config", str(path), "--out", str(out)]) == 0
        rows = read_csv(out / "anchor_sweep.csv")
        assert len(rows) == 2 * 3
        assert {r["baseline"] for r in rows if r["n_anchors"] == "4"} == {"narrow", "wide"}
        summary = json.loads((out / "anchor_sweep_summary.json").read_text())
        assert set(summary) == {"narrow", "wide"}

    def test_sweep_needs_baselines(self, tmp_path):
        path = experiment(tmp_path, axis="n_anchors", values=[1, 2])
        assert cli_main(["sweep", "--config", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_seed_flag_restricts_grid(self, tmp_path):
        out = tmp_path / "o"
        path = experiment(tmp_path, axis="fusion_mode", values=["default", "no_fusion"])
        assert cli_main(["ablate", "--config", str(path), "--out", str(out), "--seed", "3"]) == 0
        assert {r["seed"] for r in read_csv(out / "ablation.csv")} == {"3"}

    def test_writes_only_under_out(self, tmp_path):
        out = tmp_path / "o"
        path = experiment(tmp_path, axis="ablation", values=["full", "single_block"], seeds=[0])
        before = {p for p in tmp_path.rglob("*")}
        assert cli_main(["ablate", "--config", str(path), "--out", str(out)]) == 0
        new = {p for p in tmp_path.rglob("*")} - before
        assert new and all(out in p.parents or p == out for p in new)


class TestHashing:
    def test_canonical_json_order_free(self):
        assert bench.config_hash({"a": 1, "b": [1, 2]}) == bench.config_hash({"b": [1, 2], "a": 1})
        assert bench.config_hash({"a": 1}) != bench.config_hash({"a": 2})
