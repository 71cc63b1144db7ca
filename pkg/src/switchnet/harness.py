"""Experiment configuration, artifact emission and the multi-seed runner."""
from __future__ import annotations

import configparser
import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import DatasetHandle, load_idx_dataset, mnist_subset, synth_blobs
from .exceptions import ShapeMismatch, SwitchnetError
from .nn import TNNModel, build_lenet_small, build_mlp
from .pruning import apply_prune, derive_pruned_architecture, export_pruned
from .switcher import ScalingFactors, SNNConfig, build_snn
from .tensor import Tensor
from .training import EpochRecord, RunLog, TrainConfig, evaluate, factors_for, train

log = logging.getLogger(__name__)

PGM_CODES = {"pruned": 0, "weakened": 128, "strengthened": 255}


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def metrics_header(n_layers: int) -> list[str]:
    cols = ["t", "phase", "train_loss", "test_acc"]
    for k in range(n_layers):
        cols += [f"layer{k}_pruned", f"layer{k}_weakened", f"layer{k}_strengthened"]
    return cols


def emit_metrics(run_log: RunLog, path) -> None:
    """One CSV row per epoch; floats are written with ``repr`` so they reparse exactly."""
    n_layers = len(run_log.layer_sizes) if run_log.layer_sizes else (
        len(run_log.rows[0].counts) if run_log.rows else 0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(metrics_header(n_layers))
        for r in run_log.rows:
            w.writerow([r.t, r.phase, repr(float(r.train_loss)), repr(float(r.test_acc))]
                       + [c for triple in r.counts for c in triple])


def read_metrics(path) -> RunLog:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_layers = (len(header) - 4) // 3
        if header != metrics_header(n_layers):
            raise ValueError(f"{path}: unexpected metrics header {header}")
        run_log = RunLog()
        for row in reader:
            ints = [int(v) for v in row[4:]]
            counts = [tuple(ints[3 * k : 3 * k + 3]) for k in range(n_layers)]
            run_log.append(EpochRecord(int(row[0]), row[1], float(row[2]), float(row[3]), counts))
    if run_log.rows:
        run_log.layer_sizes = [sum(c) for c in run_log.rows[0].counts]
    return run_log


# ---------------------------------------------------------------------------
# scale maps
# ---------------------------------------------------------------------------


def _vector(g) -> np.ndarray:
    if isinstance(g, Tensor):
        return g.data.reshape(-1)
    return np.asarray(g, dtype=np.float64).reshape(-1)


def ternary_codes(values: np.ndarray) -> np.ndarray:
    codes = np.full(values.shape, PGM_CODES["weakened"], dtype=np.int64)
    codes[values == 0] = PGM_CODES["pruned"]
    codes[values >= 1] = PGM_CODES["strengthened"]
    return codes


def emit_scale_map(g, layout, path) -> tuple[Path, Path]:
    """Plain PGM of one factor vector (0 pruned, 128 weakened, 255 strengthened) plus raw values.

    ``layout`` is (rows, cols); the sidecar ``<path>.txt`` holds one factor
    per line in row-major order.
    """
    values = _vector(g)
    rows, cols = (int(v) for v in layout)
    if rows * cols != values.size:
        raise ShapeMismatch(f"layout {rows}x{cols} does not hold {values.size} factors")
    path = Path(path)
    codes = ternary_codes(values).reshape(rows, cols)
    lines = ["P2", f"{cols} {rows}", "255"] + [" ".join(str(v) for v in r) for r in codes]
    path.write_text("\n".join(lines) + "\n")
    side = path.with_suffix(".txt")
    side.write_text("".join(f"{float(v)!r}\n" for v in values))
    return path, side


def read_pgm(path) -> np.ndarray:
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens += line.split("#", 1)[0].split()
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM")
    cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pix = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    if pix.size != rows * cols or pix.max(initial=0) > maxval:
        raise ValueError(f"{path}: pixel data does not match header")
    return pix.reshape(rows, cols)


def read_scale_map(path) -> tuple[np.ndarray, np.ndarray]:
    """``(codes, raw factors)`` from a PGM written by :func:`emit_scale_map`."""
    codes = read_pgm(path)
    raw = Path(path).with_suffix(".txt").read_text().split()
    values = np.array([float(v) for v in raw], dtype=np.float64)
    return codes, values.reshape(codes.shape)


def scale_map_layout(model: TNNModel, layer: int, image_shape) -> tuple[int, int]:
    n = model.layers[layer].fan_out
    spec = model.layers[layer]
    if spec.kind == "flatten" and not model.is_conv and len(image_shape) == 2 and int(np.prod(image_shape)) == n:
        return int(image_shape[0]), int(image_shape[1])
    return 1, n


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


@dataclass
class DataSpec:
    source: str = "synthetic"  # synthetic | idx
    path: str = ""
    num_classes: int = 10
    per_class: int = 50
    dims: int = 20
    spread: float = 0.05
    seed: int = 0
    subset: int = 0  # draw this many training images (idx only); 0 keeps everything
    subset_seed: int = 0

    def load(self) -> DatasetHandle:
        if self.source == "synthetic":
            return synth_blobs(self.num_classes, self.per_class, self.dims, self.seed, self.spread)
        if self.source == "idx":
            data = load_idx_dataset(self.path, self.num_classes)
            return mnist_subset(data, self.subset, self.subset_seed) if self.subset else data
        raise ValueError(f"unknown data source {self.source!r}")


@dataclass
class RunConfig:
    model: str = "mlp"  # mlp | lenet
    widths: tuple[int, ...] = (300, 100)  # mlp hidden widths
    conv_channels: tuple[int, ...] = (4, 8)
    fc_widths: tuple[int, ...] = (32,)
    snn: SNNConfig = field(default_factory=SNNConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSpec = field(default_factory=DataSpec)
    out: str = "runs/experiment"
    seeds: tuple[int, ...] = tuple(range(8))
    threshold: float = 0.0

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.model not in ("mlp", "lenet"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.data.source == "idx" and not Path(self.data.path).is_dir():
            raise FileNotFoundError(f"data path {self.data.path!r} does not exist")

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(f"cannot read config {path}")
        return cls.from_parser(parser, base=Path(path).parent, **overrides)

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser, base: Path = Path("."), **overrides) -> "RunConfig":
        exp = parser["experiment"] if parser.has_section("experiment") else {}
        mdl = parser["model"] if parser.has_section("model") else {}
        kw = {}
        if "seeds" in exp:
            kw["seeds"] = _ints(exp["seeds"])
        if "out" in exp:
            kw["out"] = exp["out"]
        if "threshold" in exp:
            kw["threshold"] = float(exp["threshold"])
        if "kind" in mdl:
            kw["model"] = mdl["kind"]
        for key in ("widths", "conv_channels", "fc_widths"):
            if key in mdl:
                kw[key] = _ints(mdl[key])
        kw["snn"] = _section(parser, "switcher", SNNConfig)
        kw["train"] = _section(parser, "train", TrainConfig, overrides.pop("train", {}))
        data = _section(parser, "data", DataSpec, build=False)
        if data.get("path") and not Path(data["path"]).is_absolute():
            data["path"] = str((base / data["path"]).resolve())
        kw["data"] = DataSpec(**data)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser["experiment"] = {"seeds": ",".join(map(str, self.seeds)), "out": self.out,
                                "threshold": repr(self.threshold)}
        parser["model"] = {"kind": self.model, "widths": ",".join(map(str, self.widths)),
                           "conv_channels": ",".join(map(str, self.conv_channels)),
                           "fc_widths": ",".join(map(str, self.fc_widths))}
        for name, obj in (("switcher", self.snn), ("train", self.train), ("data", self.data)):
            parser[name] = {k: ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
                            for k, v in asdict(obj).items()}
        lines = []
        for sec in parser.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in parser[sec].items()]
            lines.append("")
        return "\n".join(lines)


def _section(parser, name, cls, extra=None, build=True):
    types = {f.name: f.type for f in fields(cls)}
    kw = {}
    if parser.has_section(name):
        for key, raw in parser[name].items():
            if key not in types:
                raise ValueError(f"[{name}] has unknown key {key!r}")
            kw[key] = _coerce(types[key], raw)
    kw.update(extra or {})
    return cls(**kw) if build else kw


def _coerce(type_name, raw: str):
    t = str(type_name)
    if "tuple" in t:
        return _ints(raw)
    if t.startswith("int"):
        return int(raw)
    if t.startswith("float"):
        return float(raw)
    if t.startswith("bool"):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return raw


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------


def build_models(cfg: RunConfig, data: DatasetHandle, seed: int):
    if cfg.model == "mlp":
        tnn = build_mlp([int(np.prod(data.image_shape))] + list(cfg.widths), data.num_classes, seed)
    else:
        if len(data.image_shape) != 2 or data.image_shape[0] != data.image_shape[1]:
            raise ShapeMismatch(f"lenet needs square images, got {data.image_shape}")
        tnn = build_lenet_small(cfg.conv_channels, cfg.fc_widths, data.num_classes, seed, data.image_shape[0])
    snn = None if cfg.train.mode == "baseline" else build_snn(tnn, cfg.snn, seed)
    return tnn, snn


def run_seed(cfg: RunConfig, data: DatasetHandle, seed: int, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    tnn, snn = build_models(cfg, data, seed)
    tcfg = TrainConfig(**{**asdict(cfg.train), "seed": seed})
    tnn, snn, run_log = train(tnn, snn, data, tcfg)
    emit_metrics(run_log, out / "metrics.csv")
    g = factors_for(snn, tnn) or ScalingFactors.ones(tnn)
    arrays = [v.data.copy() for v in g]
    arch = derive_pruned_architecture(tnn, arrays, cfg.threshold)
    for layer, vec in zip(tnn.scalable_layers(), arrays):
        emit_scale_map(vec, scale_map_layout(tnn, layer, data.image_shape), out / f"scale_layer{layer}.pgm")
    compact = apply_prune(tnn, arrays, cfg.threshold)
    export_pruned(arch, compact, out / "pruned")
    acc = evaluate(tnn, snn, data)
    compact_acc = evaluate(compact, None, data)
    result = {
        "seed": seed,
        "mode": cfg.train.mode,
        "epochs_run": len(run_log),
        "test_acc": acc,
        "compact_test_acc": compact_acc,
        "original": arch.original,
        "surviving": arch.surviving,
        "params_before": arch.params_before,
        "params_after": arch.params_after,
        "params_saved_pct": arch.params_saved_pct,
        "final_counts": [list(c) for c in run_log.rows[-1].counts] if run_log.rows else [],
    }
    (out / "result.json").write_text(json.dumps(result, indent=2))
    return result


def summarize(results: list[dict]) -> dict:
    """Mean and population std of accuracy; mean survivors per layer."""
    acc = np.array([r["test_acc"] for r in results], dtype=np.float64)
    surv = np.array([r["surviving"] for r in results], dtype=np.float64)
    saved = np.array([r["params_saved_pct"] for r in results], dtype=np.float64)
    return {
        "seeds": [r["seed"] for r in results],
        "runs": len(results),
        "test_acc_mean": float(acc.mean()),
        "test_acc_std": float(acc.std()),
        "surviving_mean": surv.mean(axis=0).tolist(),
        "params_saved_pct_mean": float(saved.mean()),
        "results": results,
    }


def run_experiment(cfg: RunConfig) -> dict:
    """Train every seed into ``<out>/seed_<s>/`` and write ``<out>/summary.json``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    data = cfg.data.load()
    results = []
    for seed in cfg.seeds:
        log.info("seed %d", seed)
        try:
            results.append(run_seed(cfg, data, seed, out / f"seed_{seed}"))
        except SwitchnetError as exc:
            raise SwitchnetError(f"seed {seed} failed: {exc}") from exc
    summary = summarize(results)
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary
