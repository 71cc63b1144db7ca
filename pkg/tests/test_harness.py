import configparser
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from switchnet.cli import main
from switchnet.harness import (
    DataSpec,
    RunConfig,
    emit_metrics,
    emit_scale_map,
    metrics_header,
    read_metrics,
    read_pgm,
    read_scale_map,
    run_experiment,
    scale_map_layout,
)
from switchnet.exceptions import ShapeMismatch
from switchnet.nn import build_lenet_small, build_mlp
from switchnet.switcher import SNNConfig
from switchnet.training import EpochRecord, RunLog, TrainConfig

TINY_INI = """
[experiment]
seeds = {seeds}
out = {out}

[model]
kind = mlp
widths = 8

[switcher]
levels = 2
channels = 2,2

[train]
mode = {mode}
epochs = 3
batch_size = 16

[data]
source = synthetic
num_classes = 3
per_class = 10
dims = 6
"""


def tiny_config(tmp_path, seeds=(0,), mode="alternating", name="run"):
    return RunConfig(
        widths=(8,), snn=SNNConfig(levels=2, channels=(2, 2)),
        train=TrainConfig(mode=mode, epochs=3, batch_size=16),
        data=DataSpec(num_classes=3, per_class=10, dims=6),
        out=str(tmp_path / name), seeds=seeds,
    )


def sample_log(n_layers=2, rows=3):
    log = RunLog([5] * n_layers)
    for t in range(rows):
        log.append(EpochRecord(t, "snn" if t % 2 == 0 else "tnn", 1.0 / (t + 3), 0.1 * t + 1 / 3,
                               [(t, 1, 4 - t)] * n_layers))
    return log


class TestMetrics:
    def test_header(self):
        assert metrics_header(1) == ["t", "phase", "train_loss", "test_acc",
                                     "layer0_pruned", "layer0_weakened", "layer0_strengthened"]

    def test_empty_log(self, tmp_path):
        emit_metrics(RunLog([3, 2]), tmp_path / "m.csv")
        assert (tmp_path / "m.csv").read_text().splitlines() == [",".join(metrics_header(2))]

    def test_roundtrip(self, tmp_path):
        log = sample_log()
        emit_metrics(log, tmp_path / "m.csv")
        back = read_metrics(tmp_path / "m.csv")
        assert back.rows == log.rows and back.layer_sizes == log.layer_sizes
        assert len((tmp_path / "m.csv").read_text().splitlines()) == 1 + len(log)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1e6, allow_nan=False), st.floats(0, 1)), max_size=8))
    def test_roundtrip_property(self, tmp_path_factory, values):
        log = RunLog([4])
        for t, (loss, acc) in enumerate(values):
            log.append(EpochRecord(t, "tnn", loss, acc, [(1, 2, 1)]))
        p = tmp_path_factory.mktemp("m") / "m.csv"
        emit_metrics(log, p)
        assert read_metrics(p).rows == log.rows

    def test_bad_header(self, tmp_path):
        (tmp_path / "m.csv").write_text("a,b\n")
        with pytest.raises(ValueError):
            read_metrics(tmp_path / "m.csv")


class TestScaleMap:
    def test_all_ones(self, tmp_path):
        emit_scale_map(np.ones(6), (2, 3), tmp_path / "s.pgm")
        assert np.all(read_pgm(tmp_path / "s.pgm") == 255)
        assert (tmp_path / "s.pgm").read_text().startswith("P2\n3 2\n255\n")

    def test_checker(self, tmp_path):
        g = np.array([0.0, 2.0] * 8)
        emit_scale_map(g, (4, 4), tmp_path / "s.pgm")
        assert read_pgm(tmp_path / "s.pgm").ravel().tolist() == [0, 255] * 8

    def test_weakened_code(self, tmp_path):
        emit_scale_map(np.array([0.0, 0.5, 1.0]), (1, 3), tmp_path / "s.pgm")
        assert read_pgm(tmp_path / "s.pgm").tolist() == [[0, 128, 255]]

    def test_layout_mismatch(self, tmp_path):
        with pytest.raises(ShapeMismatch):
            emit_scale_map(np.ones(5), (2, 3), tmp_path / "s.pgm")

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0, 1e9, allow_nan=False, allow_infinity=False), min_size=1, max_size=40))
    def test_sidecar_roundtrip(self, tmp_path_factory, values):
        p = tmp_path_factory.mktemp("pgm") / "s.pgm"
        emit_scale_map(np.array(values), (1, len(values)), p)
        codes, raw = read_scale_map(p)
        assert raw.ravel().tolist() == values
        assert codes.shape == (1, len(values))

    def test_layouts(self):
        mlp = build_mlp([784, 300], 10)
        assert scale_map_layout(mlp, 0, (28, 28)) == (28, 28)
        assert scale_map_layout(mlp, 1, (28, 28)) == (1, 300)
        lenet = build_lenet_small([4, 8], [32])
        assert scale_map_layout(lenet, 0, (28, 28)) == (1, 4)


class TestConfig:
    def test_file_roundtrip(self, tmp_path):
        cfg = tiny_config(tmp_path, seeds=(3, 4))
        (tmp_path / "c.ini").write_text(cfg.to_ini())
        back = RunConfig.from_file(tmp_path / "c.ini")
        assert back == cfg

    def test_overrides(self, tmp_path):
        (tmp_path / "c.ini").write_text(TINY_INI.format(seeds="0,1", out=tmp_path / "o", mode="alternating"))
        cfg = RunConfig.from_file(tmp_path / "c.ini", train={"mode": "baseline"}, seeds=(5,), out=None)
        assert cfg.train.mode == "baseline" and cfg.seeds == (5,) and cfg.out == str(tmp_path / "o")
        assert cfg.train.epochs == 3 and cfg.snn.channels == (2, 2)

    def test_unknown_key(self, tmp_path):
        p = configparser.ConfigParser()
        p.read_string("[train]\nlearning_rate = 0.1\n")
        with pytest.raises(ValueError):
            RunConfig.from_parser(p)

    def test_invalid(self, tmp_path):
        with pytest.raises(ValueError):
            RunConfig(seeds=())
        with pytest.raises(FileNotFoundError):
            RunConfig(data=DataSpec(source="idx", path=str(tmp_path / "missing")))

    def test_shipped_configs_parse(self):
        from pathlib import Path
        root = Path(__file__).resolve().parents[1] / "configs"
        blobs = RunConfig.from_file(root / "blobs.ini")
        assert len(blobs.seeds) == 8 and blobs.train.mode == "alternating"


class TestRunExperiment:
    def test_eight_seeds(self, tmp_path):
        cfg = tiny_config(tmp_path, seeds=tuple(range(8)))
        summary = run_experiment(cfg)
        out = tmp_path / "run"
        assert sorted(p.name for p in out.iterdir() if p.is_dir()) == [f"seed_{s}" for s in range(8)]
        assert (out / "summary.json").exists() and (out / "config.ini").exists()
        accs = [read_metrics(out / f"seed_{s}" / "metrics.csv").rows[-1].test_acc for s in range(8)]
        assert summary["test_acc_mean"] == pytest.approx(np.mean(accs), abs=1e-15)
        assert summary["test_acc_std"] == pytest.approx(np.std(accs), abs=1e-15)
        for s in range(8):
            files = {p.name for p in (out / f"seed_{s}").iterdir()}
            assert {"metrics.csv", "result.json", "pruned.json", "pruned.snnw",
                    "scale_layer0.pgm", "scale_layer0.txt"} <= files

    def test_single_seed_std_zero(self, tmp_path):
        assert run_experiment(tiny_config(tmp_path))["test_acc_std"] == 0.0

    def test_compact_model_matches(self, tmp_path):
        res = run_experiment(tiny_config(tmp_path))["results"][0]
        assert res["compact_test_acc"] == res["test_acc"]

    def test_byte_identical_repeat(self, tmp_path):
        run_experiment(tiny_config(tmp_path, name="a"))
        run_experiment(tiny_config(tmp_path, name="b"))
        for name in ("metrics.csv", "pruned.snnw", "pruned.json", "scale_layer0.pgm", "scale_layer0.txt"):
            assert (tmp_path / "a/seed_0" / name).read_bytes() == (tmp_path / "b/seed_0" / name).read_bytes()

    def test_baseline_mode(self, tmp_path):
        res = run_experiment(tiny_config(tmp_path, mode="baseline"))["results"][0]
        assert res["params_saved_pct"] == 0.0

    def test_lenet(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs = (rng.random((40, 12, 12)) * 255).astype(np.uint8)
        from switchnet.data import write_idx
        d = tmp_path / "idx"
        d.mkdir()
        labels = rng.integers(0, 2, 40).astype(np.uint8)
        write_idx(imgs[:30], labels[:30], d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte")
        write_idx(imgs[30:], labels[30:], d / "t10k-images-idx3-ubyte", d / "t10k-labels-idx1-ubyte")
        cfg = RunConfig(model="lenet", conv_channels=(2,), fc_widths=(4,),
                        snn=SNNConfig(levels=1, channels=(2,), feature_width=8),
                        train=TrainConfig(epochs=2, batch_size=10),
                        data=DataSpec(source="idx", path=str(d), num_classes=2), out=str(tmp_path / "l"), seeds=(0,))
        res = run_experiment(cfg)["results"][0]
        assert res["original"][:2] == [2, 2 * 4 * 4]


class TestCli:
    def test_gradcheck(self, tmp_path, capsys):
        assert main(["gradcheck", "--instances", "50", "--out", str(tmp_path / "g.json")]) == 0
        assert json.loads((tmp_path / "g.json").read_text())["ok"] is True

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_no_subcommand(self):
        assert main([]) == 2

    def test_train_missing_config(self, tmp_path, capsys):
        assert main(["train", str(tmp_path / "nope.ini")]) == 2

    def test_train_and_report(self, tmp_path, capsys):
        ini = tmp_path / "c.ini"
        ini.write_text(TINY_INI.format(seeds="0,1", out=tmp_path / "o", mode="alternating"))
        assert main(["train", str(ini), "--seed", "4", "--mode", "separate", "--out", str(tmp_path / "x")]) == 0
        assert (tmp_path / "x/seed_4/metrics.csv").exists() and not (tmp_path / "o").exists()
        rows = read_metrics(tmp_path / "x/seed_4/metrics.csv").rows
        assert [r.phase for r in rows] == ["tnn"] * 3 + ["snn"] * 3
        capsys.readouterr()
        assert main(["prune-report", str(tmp_path / "x/seed_4/pruned.json")]) == 0
        assert "surviving" in capsys.readouterr().out

    def test_prune_report_tampered(self, tmp_path):
        run_experiment(tiny_config(tmp_path))
        doc_path = tmp_path / "run/seed_0/pruned.json"
        doc = json.loads(doc_path.read_text())
        doc["architecture"]["params_after"] += 7
        doc_path.write_text(json.dumps(doc))
        assert main(["prune-report", str(doc_path)]) == 1

    def test_prune_report_missing(self, tmp_path):
        assert main(["prune-report", str(tmp_path / "none.json")]) == 1

    def test_make_and_verify_data(self, tmp_path, capsys):
        assert main(["make-data", "--out", str(tmp_path / "d"), "--classes", "3", "--per-class", "4"]) == 0
        assert main(["verify-data", str(tmp_path / "d")]) == 0
        assert "train: " in capsys.readouterr().out

    def test_verify_data_bad(self, tmp_path):
        main(["make-data", "--out", str(tmp_path / "d")])
        p = tmp_path / "d" / "train-images-idx3-ubyte"
        p.write_bytes(b"\x00\x00\x08\x01" + p.read_bytes()[4:])
        assert main(["verify-data", str(tmp_path / "d")]) == 1

    def test_bad_flag_value(self):
        assert main(["gradcheck", "--instances", "many"]) == 2
