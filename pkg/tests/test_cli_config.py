import json

import pytest

from sdmnet.cli import main
from sdmnet.config import ConfigError, RunConfig, load_config, parse_text


class TestConfig:
    def test_defaults_round_trip_through_text(self, tmp_path):
        cfg = RunConfig.defaults()
        (tmp_path / "c.cfg").write_text(cfg.to_text())
        assert load_config(tmp_path / "c.cfg").to_text() == cfg.to_text()

    def test_file_then_overrides(self, tmp_path):
        (tmp_path / "c.cfg").write_text("seed=3  # comment\n\nmodel.stages=16x1s2;24x2s1\n")
        cfg = load_config(tmp_path / "c.cfg", [("seed", "9")])
        assert cfg.seed == 9
        assert cfg.get("model.stages") == [(16, 1, 2), (24, 2, 1)]

    def test_typed_values(self):
        cfg = load_config(overrides=[("enhance.tiles", "8x2"), ("augment.balance", "off"),
                                     ("enhance.variants", "gray,chan3"), ("learner.RF.n_trees", "7"),
                                     ("learner.RF.bootstrap", "false")])
        assert cfg.get("enhance.tiles") == (8, 2)
        assert cfg.get("augment.balance") is False
        assert cfg.get("enhance.variants") == ("gray", "chan3")
        assert cfg.learners == {"RF": {"n_trees": 7, "bootstrap": False}}

    @pytest.mark.parametrize("key,value", [("nope", "1"), ("seed", "x"), ("enhance.tiles", "4"),
                                           ("enhance.variants", "sepia"), ("learner.RF.depth", "3"),
                                           ("learner.KNN.k", "3"), ("model.stages", "8y1")])
    def test_rejected(self, key, value):
        with pytest.raises(ConfigError):
            load_config(overrides=[(key, value)])

    def test_malformed_line(self):
        with pytest.raises(ConfigError, match=":2:"):
            parse_text("seed=1\njunk\n", "f.cfg")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.cfg")

    def test_hash_stable_and_sensitive(self):
        a = load_config(overrides=[("seed", "1")])
        assert a.hash == load_config(overrides=[("seed", "1")]).hash
        assert len(a.hash) == 16
        assert a.hash != load_config(overrides=[("seed", "2")]).hash
        assert a.hash != load_config(overrides=[("seed", "1"), ("learner.LR.l2", "0.5")]).hash

    def test_hash_ignores_paths_and_threads(self):
        a = load_config(overrides=[("paths.workdir", "/a"), ("threads", "1")])
        b = load_config(overrides=[("paths.workdir", "/b"), ("threads", "4")])
        assert a.hash == b.hash

    def test_model_config(self):
        cfg = load_config(overrides=[("data.image_size", "32"), ("model.stages", "8x1s2")])
        m = cfg.model_config(3)
        assert m.in_channels == 3 and m.image_size == 32 and m.stages == [(8, 1, 2)]

    def test_desk_config_parses(self):
        from pathlib import Path
        cfg = load_config(Path(__file__).parents[1] / "configs" / "desk.cfg")
        assert cfg.get("data.image_size") == 64


class TestCli:
    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--bogus"])
        assert exc.value.code == 2

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_config_error_exit(self, tmp_path, capsys):
        assert main(["split", "--workdir", str(tmp_path), "--set", "nope=1"]) == 4
        assert "config error" in capsys.readouterr().err

    def test_missing_artifact_exit(self, tmp_path, capsys):
        assert main(["split", "--workdir", str(tmp_path)]) == 3
        assert main(["table", "--workdir", str(tmp_path)]) == 3
        assert main(["eval", "--workdir", str(tmp_path)]) == 3

    def test_data_stages(self, tmp_path, capsys):
        work = str(tmp_path / "w")
        common = ["--workdir", work, "--seed", "3", "--threads", "1"]
        assert main(["synth", "--n", "20", "--size", "32", *common]) == 0
        assert main(["enhance", "--set", "data.image_size=32", *common]) == 0
        assert main(["split", "--set", "data.image_size=32", *common]) == 0
        plan = json.loads((tmp_path / "w" / "folds" / "folds.json").read_text())
        assert len(plan["folds"]) == 5
        for v in ("gray", "gamma", "invert", "chan3"):
            assert len(list((tmp_path / "w" / "images" / v).glob("*.im3f"))) == 20
        assert plan["meta"]["seed"] == 3 and len(plan["meta"]["config_hash"]) == 16

    def test_eval_on_counts(self, tmp_path, capsys):
        rows = ["id,pred,label"]
        cases = [(1, 1, 1119), (0, 0, 3728), (1, 0, 20), (0, 1, 15)]
        i = 0
        for pred, label, n in cases:
            for _ in range(n):
                rows.append(f"s{i},{pred},{label}")
                i += 1
        (tmp_path / "p.csv").write_text("\n".join(rows) + "\n")
        code = main(["eval", "--workdir", str(tmp_path / "w"), "--predictions", str(tmp_path / "p.csv"),
                     "--name", "counts"])
        out = capsys.readouterr().out
        assert code == 0
        assert "overall accuracy: 99.28%" in out
        assert (tmp_path / "w" / "reports" / "counts.csv").exists()
        assert (tmp_path / "w" / "reports" / "counts_confusion.png").exists()
