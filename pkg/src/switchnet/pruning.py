"""Turn scaling factors into a physically smaller network and report the savings.

A neuron (or conv channel) survives iff its factor exceeds ``threshold``
(exact zero by default).  Surviving factors are folded into the outgoing
weights, so the compact model computes the scaled network without a switcher:
``(x * g) @ W == x @ (diag(g) @ W)``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import AllPruned, ShapeMismatch
from .nn import BatchNormParams, LayerSpec, TNNModel, count_layer_params
from .switcher import classify_factors
from .tensor import RunningStats, Tensor

SNNW_MAGIC = b"SNNW"
SNNW_VERSION = 1
DOC_FORMAT = "switchnet-pruned"


@dataclass
class PrunedArchitecture:
    original: list[int]
    surviving: list[int]
    params_before: int
    params_after: int
    params_saved_pct: float
    factor_stats: list[dict] = field(default_factory=list)

    def __str__(self) -> str:
        return (
            f"{'-'.join(map(str, self.original))} -> {'-'.join(map(str, self.surviving))}: "
            f"{self.params_after}/{self.params_before} weights, {self.params_saved_pct:.2f}% saved"
        )


def saved_pct(before: int, after: int) -> float:
    return 100.0 * (1.0 - after / before)


def _factor_arrays(model: TNNModel, g) -> list[np.ndarray]:
    arrays = [np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float64) for v in g]
    sizes = model.scalable_sizes()
    if len(arrays) != len(sizes) or any(a.shape != (n,) for a, n in zip(arrays, sizes)):
        raise ShapeMismatch(f"factors {[a.shape for a in arrays]} do not match scalable sizes {sizes}")
    return arrays


def _survival(model: TNNModel, factors: list[np.ndarray], threshold: float) -> dict[int, np.ndarray]:
    """Boolean keep-mask per scalable layer.

    A flattened conv feature also dies when its channel was pruned, because
    its input is identically zero.
    """
    keep = {}
    prev_conv = None
    for i, f in zip(model.scalable_layers(), factors):
        mask = f > threshold
        layer = model.layers[i]
        if layer.kind == "conv":
            prev_conv = mask
        elif layer.kind == "flatten" and prev_conv is not None and model.flatten_index is None:
            per_channel = layer.fan_out // len(prev_conv)
            mask = mask & np.repeat(prev_conv, per_channel)
        keep[i] = mask
    return keep


def _layer_counts(model: TNNModel, keep: dict[int, np.ndarray]) -> list[int]:
    counts, last = [], None
    for i, layer in enumerate(model.layers):
        if i in keep:
            last = int(keep[i].sum())
        elif layer.kind == "pool":
            last = counts[-1]
        else:
            last = layer.fan_out
        counts.append(last)
    return counts


def _stats(factors: list[np.ndarray]) -> list[dict]:
    out = []
    for f, (p, w, s) in zip(factors, classify_factors(factors)):
        out.append({
            "size": int(f.size), "min": float(f.min()), "max": float(f.max()), "mean": float(f.mean()),
            "pruned": p, "weakened": w, "strengthened": s,
        })
    return out


def derive_pruned_architecture(model: TNNModel, g, threshold: float = 0.0) -> PrunedArchitecture:
    """Surviving counts and weight-only parameter savings for factors ``g``."""
    factors = _factor_arrays(model, g)
    keep = _survival(model, factors, threshold)
    counts = _layer_counts(model, keep)
    surviving = [counts[i] for i in model.scalable_layers()] + [model.num_classes]
    if not model.layers[0].scalable:
        surviving.insert(0, model.layers[0].fan_in)
    before = count_layer_params(model.layers)
    after = count_layer_params(model.layers, counts)
    return PrunedArchitecture(model.architecture(), surviving, before, after, saved_pct(before, after), _stats(factors))


def architecture_savings(original, surviving) -> PrunedArchitecture:
    """Savings for a fully connected ``original`` -> ``surviving`` neuron-count pair."""
    from .nn import count_params

    original, surviving = [int(v) for v in original], [int(v) for v in surviving]
    if len(original) != len(surviving) or any(s > o for s, o in zip(surviving, original)):
        raise ShapeMismatch(f"survivors {surviving} incompatible with {original}")
    before, after = count_params(original), count_params(surviving)
    return PrunedArchitecture(original, surviving, before, after, saved_pct(before, after))


def apply_prune(model: TNNModel, g, threshold: float = 0.0) -> TNNModel:
    """Compact copy of ``model`` with dead neurons removed and factors folded in."""
    factors = _factor_arrays(model, g)
    keep = _survival(model, factors, threshold)
    for i, mask in keep.items():
        if not mask.any():
            raise AllPruned(f"layer {i} ({model.layers[i].kind}) would have no surviving neurons")
    by_layer = dict(zip(model.scalable_layers(), factors))

    layers: list[LayerSpec] = []
    weights: list[Tensor] = []
    bns: list[BatchNormParams] = []
    flatten_index = None
    # incoming side: which input units survive and what factor they carry
    in_keep: np.ndarray | None = None
    in_scale: np.ndarray | None = None
    for i, layer in enumerate(model.layers):
        mask = keep.get(i)
        if layer.kind == "conv":
            w = model.weight_of(i).data
            out_keep = mask if mask is not None else np.ones(layer.fan_out, bool)
            if in_keep is not None:
                w = w[:, in_keep] * in_scale[in_keep][None, :, None, None]
            w = w[out_keep]
            bn = model.bn_of(i)
            bns.append(BatchNormParams(
                Tensor(bn.gamma.data[out_keep].copy(), requires_grad=True, name=bn.gamma.name),
                Tensor(bn.beta.data[out_keep].copy(), requires_grad=True, name=bn.beta.name),
                RunningStats(bn.stats.mean[out_keep].copy(), bn.stats.var[out_keep].copy(), bn.stats.momentum),
            ))
            weights.append(Tensor(np.ascontiguousarray(w), requires_grad=True, name=model.weight_of(i).name))
            layers.append(LayerSpec("conv", w.shape[1], w.shape[0], layer.kernel, layer.scalable))
            in_keep = out_keep
            in_scale = by_layer[i] if i in by_layer else np.ones(layer.fan_out)
        elif layer.kind == "pool":
            n = int(in_keep.sum()) if in_keep is not None else layer.fan_out
            layers.append(LayerSpec("pool", n, n, layer.kernel, layer.scalable))
        elif layer.kind == "flatten":
            if in_keep is not None:
                per_channel = layer.fan_out // len(in_keep)
                chan_keep = np.repeat(in_keep, per_channel)
                chan_scale = np.repeat(in_scale, per_channel)
            else:
                chan_keep = np.ones(layer.fan_out, bool)
                chan_scale = np.ones(layer.fan_out)
            own = by_layer.get(i, np.ones(layer.fan_out))
            feat_keep = (mask if mask is not None else np.ones(layer.fan_out, bool)) & chan_keep
            # index into the flattened output of the compact conv stack
            flatten_index = np.cumsum(chan_keep)[feat_keep] - 1
            n_in = int(chan_keep.sum())
            layers.append(LayerSpec("flatten", n_in, int(feat_keep.sum()), 0, layer.scalable))
            in_keep, in_scale = feat_keep, own * chan_scale
            if n_in == int(feat_keep.sum()):
                flatten_index = None
        elif layer.kind == "fc":
            w = model.weight_of(i).data
            out_keep = mask if mask is not None else np.ones(layer.fan_out, bool)
            if in_keep is not None:
                w = in_scale[in_keep][:, None] * w[in_keep]
            w = w[:, out_keep]
            weights.append(Tensor(np.ascontiguousarray(w), requires_grad=True, name=model.weight_of(i).name))
            layers.append(LayerSpec("fc", w.shape[0], w.shape[1], 0, layer.scalable))
            in_keep = out_keep
            in_scale = by_layer[i] if i in by_layer else np.ones(layer.fan_out)
        else:
            raise ValueError(f"unknown layer kind {layer.kind!r}")
    return TNNModel(layers, weights, bns, tuple(model.input_shape), flatten_index)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def write_snnw(path, tensors: list[tuple[str, np.ndarray]]) -> None:
    """Little-endian blob: magic, version, count, per-tensor header, then payloads."""
    head = [SNNW_MAGIC, struct.pack("<II", SNNW_VERSION, len(tensors))]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        head.append(struct.pack("<H", len(raw)) + raw)
        head.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
    payload = [np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in tensors]
    Path(path).write_bytes(b"".join(head + payload))


def read_snnw(path) -> list[tuple[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != SNNW_MAGIC:
        raise ValueError(f"{path}: not an SNNW blob")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != SNNW_VERSION:
        raise ValueError(f"{path}: unsupported SNNW version {version}")
    pos = 12
    specs = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, pos)
        name = raw[pos + 2 : pos + 2 + n].decode("utf-8")
        pos += 2 + n
        (rank,) = struct.unpack_from("<B", raw, pos)
        dims = struct.unpack_from(f"<{rank}I", raw, pos + 1)
        pos += 1 + 4 * rank
        specs.append((name, dims))
    out = []
    for name, dims in specs:
        size = int(np.prod(dims)) if dims else 1
        if pos + 8 * size > len(raw):
            raise ValueError(f"{path}: payload truncated at tensor {name!r}")
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
        out.append((name, arr))
        pos += 8 * size
    return out


def export_pruned(arch: PrunedArchitecture, model: TNNModel, path) -> tuple[Path, Path]:
    """Write ``<path>.json`` (description) and ``<path>.snnw`` (weights)."""
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    doc_path, blob_path = base.with_suffix(".json"), base.with_suffix(".snnw")
    names = [w.name or f"w{k}" for k, w in enumerate(model.weights)]
    write_snnw(blob_path, [(n, w.data) for n, w in zip(names, model.weights)])
    doc = {
        "format": DOC_FORMAT,
        "version": 1,
        "architecture": asdict(arch),
        "layers": [asdict(l) for l in model.layers],
        "input_shape": list(model.input_shape),
        "flatten_index": None if model.flatten_index is None else [int(v) for v in model.flatten_index],
        "batchnorm": [
            {"gamma": bn.gamma.data.tolist(), "beta": bn.beta.data.tolist(),
             "running_mean": bn.stats.mean.tolist(), "running_var": bn.stats.var.tolist(),
             "momentum": bn.stats.momentum}
            for bn in model.bn
        ],
        "weights_file": blob_path.name,
        "tensors": names,
    }
    doc_path.write_text(json.dumps(doc, indent=2))
    return doc_path, blob_path


def load_pruned(path) -> tuple[dict, TNNModel]:
    """Inverse of :func:`export_pruned`; ``path`` may name either file or the base."""
    base = Path(path)
    doc_path = base.with_suffix(".json")
    doc = json.loads(doc_path.read_text())
    if doc.get("format") != DOC_FORMAT:
        raise ValueError(f"{doc_path}: not a {DOC_FORMAT} document")
    tensors = read_snnw(doc_path.parent / doc["weights_file"])
    layers = [LayerSpec(**l) for l in doc["layers"]]
    weights = [Tensor(arr, requires_grad=True, name=name) for name, arr in tensors]
    bns = [
        BatchNormParams(
            Tensor(np.array(b["gamma"], dtype=np.float64), requires_grad=True),
            Tensor(np.array(b["beta"], dtype=np.float64), requires_grad=True),
            RunningStats(np.array(b["running_mean"], dtype=np.float64),
                         np.array(b["running_var"], dtype=np.float64), b["momentum"]),
        )
        for b in doc["batchnorm"]
    ]
    index = doc["flatten_index"]
    model = TNNModel(layers, weights, bns, tuple(doc["input_shape"]),
                     None if index is None else np.array(index, dtype=np.intp))
    return doc, model


def verify_document(doc: dict, model: TNNModel) -> bool:
    """Recompute the savings from the loaded layers and compare with the document."""
    arch = doc["architecture"]
    after = count_layer_params(model.layers)
    return after == arch["params_after"] and np.isclose(
        saved_pct(arch["params_before"], after), arch["params_saved_pct"], rtol=0, atol=1e-12
    )
