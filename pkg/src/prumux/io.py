"""File formats: measurement CSV, sparsity-spec JSON, model bundles, planner models, histories.

Floats are written with ``repr`` so every value survives a round trip
bit-exactly. Bundle and planner files carry a ``format_version`` and are
written atomically (temporary file, then rename).
"""
from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import FFN, Attention, EncoderModel, Layer
from .mux import MuxKit
from .planner import AccuracyModel, MeasurementRecord, ThroughputModel, key
from .pruner import MaskScores, SparsitySpec, threshold_masks

MEASUREMENT_HEADER = ["task", "n", "sparsity", "accuracy", "throughput"]
BUNDLE_VERSION = 1
PLANNER_VERSION = 1


class FormatError(ValueError):
    pass


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# measurements

def parse_measurements(text: str) -> list[MeasurementRecord]:
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows or rows[0] != MEASUREMENT_HEADER:
        raise FormatError(f"row 1: header must be exactly {','.join(MEASUREMENT_HEADER)}")
    out, seen = [], {}
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 5:
            raise FormatError(f"row {line}: expected 5 fields, got {len(row)}")
        try:
            n_val = float(row[1])
            if n_val != int(n_val):
                raise ValueError(f"N must be an integer, got {row[1]}")
            rec = MeasurementRecord(row[0], int(n_val), float(row[2]), float(row[3]), float(row[4]))
        except ValueError as exc:
            raise FormatError(f"row {line}: {exc}") from None
        k = (rec.task,) + rec.key
        if k in seen:
            raise FormatError(f"row {line}: duplicate of row {seen[k]} for {k}")
        seen[k] = line
        out.append(rec)
    return out


def load_measurements(path) -> list[MeasurementRecord]:
    return parse_measurements(Path(path).read_text())


def format_measurements(records) -> str:
    lines = [",".join(MEASUREMENT_HEADER)]
    for r in records:
        lines.append(f"{r.task},{r.n},{float(r.sparsity)!r},{float(r.accuracy)!r},{float(r.throughput)!r}")
    return "\n".join(lines) + "\n"


def save_measurements(records, path) -> None:
    _atomic_write(path, format_measurements(records))


# sparsity specs

def spec_from_json(obj: dict, model: EncoderModel | None = None) -> SparsitySpec:
    """Bit masks, or real-valued scores plus ``threshold`` (thresholded here)."""
    try:
        if "threshold" in obj:
            scores = MaskScores(**{k: np.asarray(obj[k], dtype=np.float64)
                                   for k in ("heads", "mha", "ffn", "hidden", "intermediate")},
                                threshold=float(obj["threshold"]))
            spec = threshold_masks(scores)
        else:
            spec = SparsitySpec.from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad sparsity spec: {exc}") from None
    if model is not None and not spec.matches(model.n_layers, model.n_heads, model.d_hidden, model.d_ff):
        raise FormatError("sparsity spec does not match the model dimensions")
    return spec


def load_spec(path, model: EncoderModel | None = None) -> SparsitySpec:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return spec_from_json(obj, model)


def save_spec(spec: SparsitySpec, path) -> None:
    _atomic_write(path, json.dumps(spec.to_dict()) + "\n")


# bundles

@dataclass
class ModelBundle:
    model: EncoderModel
    kit: MuxKit
    spec: SparsitySpec
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kit.demux_dim != self.model.d_hidden or self.kit.dim != self.model.d_hidden:
            raise ValueError("bundle: mux kit and model disagree on the hidden width")


def _arr(a) -> list:
    return np.asarray(a).tolist()


def model_to_dict(m: EncoderModel) -> dict:
    layers = []
    for layer in m.layers:
        entry = {k: _arr(getattr(layer, k)) for k in ("ln1_g", "ln1_b", "ln2_g", "ln2_b")}
        a = layer.attn
        entry["attn"] = None if a is None else {
            **{k: _arr(getattr(a, k)) for k in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")},
            "n_heads": a.n_heads}
        f = layer.ffn
        entry["ffn"] = None if f is None else {k: _arr(getattr(f, k)) for k in ("w1", "b1", "w2", "b2")}
        layers.append(entry)
    return {"n_heads": m.n_heads, "head_dim": m.head_dim, "d_ff": m.d_ff, "layers": layers,
            "cls_w": _arr(m.cls_w), "cls_b": _arr(m.cls_b), "vocab_w": _arr(m.vocab_w)}


def _mat(x, ncols: int | None = None) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1 and a.size == 0 and ncols is not None:
        a = a.reshape(0, ncols)
    return a


def model_from_dict(d: dict) -> EncoderModel:
    dh = int(d["head_dim"])
    cls_w = _mat(d["cls_w"])
    dim = cls_w.shape[0]
    layers = []
    for e in d["layers"]:
        attn = ffn = None
        if e["attn"] is not None:
            a = e["attn"]
            h = int(a["n_heads"])
            w = {k: _mat(a[k]).reshape(dim, h * dh) for k in ("wq", "wk", "wv")}
            attn = Attention(**w, bq=_mat(a["bq"]), bk=_mat(a["bk"]), bv=_mat(a["bv"]),
                             wo=_mat(a["wo"]).reshape(h * dh, dim), bo=_mat(a["bo"]),
                             n_heads=h, head_dim=dh)
        if e["ffn"] is not None:
            f = e["ffn"]
            b1 = _mat(f["b1"])
            ffn = FFN(w1=_mat(f["w1"]).reshape(dim, b1.size), b1=b1,
                      w2=_mat(f["w2"]).reshape(b1.size, dim), b2=_mat(f["b2"]))
        layers.append(Layer(*(_mat(e[k]) for k in ("ln1_g", "ln1_b", "ln2_g", "ln2_b")), attn, ffn))
    return EncoderModel(layers=layers, cls_w=cls_w, cls_b=_mat(d["cls_b"]), vocab_w=_mat(d["vocab_w"]),
                        n_heads=int(d["n_heads"]), head_dim=dh, d_ff=int(d["d_ff"]))


def bundle_to_json(b: ModelBundle) -> str:
    obj = {"format": "prumux-bundle", "format_version": BUNDLE_VERSION,
           "model": model_to_dict(b.model),
           "kit": {"keys": _arr(b.kit.keys), "demux_w": _arr(b.kit.demux_w),
                   "demux_b": _arr(b.kit.demux_b), "seed": b.kit.seed},
           "spec": b.spec.to_dict(), "meta": b.meta}
    return json.dumps(obj)


def bundle_from_json(text: str) -> ModelBundle:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"bundle is not valid JSON: {exc}") from None
    if not isinstance(obj, dict) or obj.get("format") != "prumux-bundle":
        raise FormatError("not a prumux model bundle")
    if obj.get("format_version") != BUNDLE_VERSION:
        raise FormatError(f"unsupported bundle format_version {obj.get('format_version')!r} "
                          f"(this build reads version {BUNDLE_VERSION})")
    try:
        model = model_from_dict(obj["model"])
        k = obj["kit"]
        kit = MuxKit(keys=_mat(k["keys"]), demux_w=_mat(k["demux_w"]), demux_b=_mat(k["demux_b"]),
                     seed=int(k["seed"]))
        spec = SparsitySpec.from_dict(obj["spec"])
        return ModelBundle(model, kit, spec, dict(obj.get("meta", {})))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed bundle: {exc}") from None


def save_bundle(b: ModelBundle, path) -> None:
    _atomic_write(path, bundle_to_json(b))


def load_bundle(path) -> ModelBundle:
    return bundle_from_json(Path(path).read_text())


# planner models

def planner_to_json(acc_models: dict[str, AccuracyModel], thr: ThroughputModel) -> str:
    obj = {"format": "prumux-planner", "format_version": PLANNER_VERSION,
           "reference_task": thr.reference_task,
           "throughput": [[n, s, t] for (n, s), t in sorted(thr.table.items())],
           "accuracy": {t: {"n_knots": _arr(m.n_knots), "s_knots": _arr(m.s_knots), "grid": _arr(m.grid)}
                        for t, m in sorted(acc_models.items())}}
    return json.dumps(obj, indent=1) + "\n"


def planner_from_json(text: str) -> tuple[dict[str, AccuracyModel], ThroughputModel]:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"planner model is not valid JSON: {exc}") from None
    if not isinstance(obj, dict) or obj.get("format") != "prumux-planner":
        raise FormatError("not a prumux planner model")
    if obj.get("format_version") != PLANNER_VERSION:
        raise FormatError(f"unsupported planner format_version {obj.get('format_version')!r}")
    try:
        thr = ThroughputModel(obj["reference_task"], {key(n, s): float(t) for n, s, t in obj["throughput"]})
        acc = {t: AccuracyModel(t, m["n_knots"], m["s_knots"], m["grid"]) for t, m in obj["accuracy"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed planner model: {exc}") from None
    return acc, thr


def save_planner(acc_models, thr, path) -> None:
    _atomic_write(path, planner_to_json(acc_models, thr))


def load_planner(path):
    return planner_from_json(Path(path).read_text())


# training history

def format_history(history) -> str:
    lines = ["epoch,loss,accuracy"]
    lines += [f"{h['epoch']},{float(h['loss'])!r},{float(h['accuracy'])!r}" for h in history]
    return "\n".join(lines) + "\n"


def save_history(history, path) -> None:
    _atomic_write(path, format_history(history))
