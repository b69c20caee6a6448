"""Inference-only forward passes for the note and phoneme networks.

A graph is a JSON description of one or more input branches (each a list of
layers), a fusion order, and a head. Tensors live in a :class:`WeightStore`
whose names are derived from layer positions::

    <branch>.<i>.weight            conv2d (out, in, k_time, k_freq) / dense (units, in)
    <branch>.<i>.bias
    <branch>.<i>.fw.w_ih           recurrent (4H, in), gates ordered i, f, g, o
    <branch>.<i>.fw.w_hh           (4H, H)
    <branch>.<i>.fw.bias           (4H,)
    <branch>.<i>.bw.*              same for the backward direction

Head layers use the prefix ``head``. Branch tensors flow as
``(channels, time, freq)`` images until the first dense or recurrent layer,
which flattens them to ``(time, channels * freq)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import expit

from .ctc import PhonemeInventory, Posteriorgram
from .features import MelSpectrogram
from .formats import atomic_write_bytes, atomic_write_text

LAYER_KINDS = ("conv2d", "bidirectional-recurrent", "dense", "pooling", "activation")
ACTIVATIONS = ("linear", "relu", "sigmoid", "tanh", "softmax")


class GraphError(ValueError):
    """Malformed model graph."""


class WeightError(ValueError):
    """Weights missing, corrupt, or inconsistent with the graph."""

    def __init__(self, message: str, report: "ValidationReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    channels: int | None = None
    kernel: tuple[int, int] = (3, 3)
    dilation: tuple[int, int] = (1, 1)
    units: int | None = None
    pool: tuple[int, int] = (1, 2)
    activation: str = "linear"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise GraphError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise GraphError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "dilation", tuple(int(d) for d in self.dilation))
        object.__setattr__(self, "pool", tuple(int(p) for p in self.pool))
        if self.kind == "conv2d":
            if not self.channels or self.channels < 1:
                raise GraphError("conv2d needs a positive channel count")
            if any(k < 1 or k % 2 == 0 for k in self.kernel):
                raise GraphError(f"conv2d kernel dims must be odd and positive, got {self.kernel}")
            if any(d < 1 for d in self.dilation):
                raise GraphError(f"dilation must be >= 1, got {self.dilation}")
        if self.kind in ("dense", "bidirectional-recurrent") and (not self.units or self.units < 1):
            raise GraphError(f"{self.kind} needs a positive unit count")
        if self.kind == "pooling" and (self.pool[0] != 1 or self.pool[1] < 1):
            raise GraphError(f"only frequency-axis pooling (1, p) is supported, got {self.pool}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "LayerSpec":
        known = {"kind", "channels", "kernel", "dilation", "units", "pool", "activation", "comment"}
        extra = set(d) - known
        if extra:
            raise GraphError(f"unknown layer fields {sorted(extra)}")
        return cls(**{k: v for k, v in d.items() if k != "comment"})

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "conv2d":
            out.update(channels=self.channels, kernel=list(self.kernel), dilation=list(self.dilation))
        if self.kind in ("dense", "bidirectional-recurrent"):
            out["units"] = self.units
        if self.kind == "pooling":
            out["pool"] = list(self.pool)
        if self.activation != "linear":
            out["activation"] = self.activation
        return out


@dataclass(frozen=True)
class Branch:
    input_dim: int
    layers: tuple[LayerSpec, ...]


@dataclass(frozen=True)
class ModelGraph:
    branches: dict[str, Branch]
    fusion: tuple[str, ...]
    head: tuple[LayerSpec, ...]
    name: str = ""

    def __post_init__(self):
        if set(self.fusion) != set(self.branches) or len(self.fusion) != len(self.branches):
            raise GraphError(f"fusion order {list(self.fusion)} must list every branch once")
        if not self.head or self.head[-1].kind != "dense":
            raise GraphError("head must end with a dense layer")
        shapes = parameter_shapes(self)  # raises on inconsistent shapes
        object.__setattr__(self, "_shapes", shapes)

    @property
    def output_dim(self) -> int:
        return self.head[-1].units

    @property
    def output_activation(self) -> str:
        return self.head[-1].activation

    def branch_output_dim(self, name: str) -> int:
        return _propagate(self.branches[name].input_dim, self.branches[name].layers, name, {})

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelGraph":
        try:
            branches = {
                name: Branch(int(b["input_dim"]), tuple(LayerSpec.from_dict(l) for l in b["layers"]))
                for name, b in d["branches"].items()
            }
            fusion = tuple(d.get("fusion", {}).get("order", list(branches)))
            head = tuple(LayerSpec.from_dict(l) for l in d["head"])
        except (KeyError, TypeError) as exc:
            raise GraphError(f"malformed graph: {exc}") from exc
        return cls(branches, fusion, head, d.get("name", ""))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "branches": {
                n: {"input_dim": b.input_dim, "layers": [l.to_dict() for l in b.layers]}
                for n, b in self.branches.items()
            },
            "fusion": {"kind": "concat", "order": list(self.fusion)},
            "head": [l.to_dict() for l in self.head],
        }


def load_graph(path) -> ModelGraph:
    try:
        return ModelGraph.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: {exc}") from exc


def save_graph(path, graph: ModelGraph) -> None:
    atomic_write_text(path, json.dumps(graph.to_dict(), indent=2) + "\n")


def default_note_graph() -> ModelGraph:
    text = resources.files("notegate").joinpath("data/note_graph.json").read_text(encoding="utf-8")
    return ModelGraph.from_dict(json.loads(text))


def default_phoneme_graph() -> ModelGraph:
    text = resources.files("notegate").joinpath("data/phoneme_graph.json").read_text(encoding="utf-8")
    return ModelGraph.from_dict(json.loads(text))


def _propagate(input_dim: int, layers, prefix: str, shapes: dict) -> int:
    """Walk ``layers`` recording parameter shapes; returns the flattened output dim."""
    image = (1, input_dim)  # (channels, freq) while still 2-D
    dim = None
    for i, layer in enumerate(layers):
        name = f"{prefix}.{i}"
        if layer.kind == "conv2d":
            if image is None:
                raise GraphError(f"{name}: conv2d after the features were flattened")
            c_in, freq = image
            shapes[f"{name}.weight"] = (layer.channels, c_in, *layer.kernel)
            shapes[f"{name}.bias"] = (layer.channels,)
            image = (layer.channels, freq)
        elif layer.kind == "pooling":
            if image is None:
                raise GraphError(f"{name}: pooling after the features were flattened")
            c, freq = image
            if freq // layer.pool[1] < 1:
                raise GraphError(f"{name}: pooling {layer.pool} leaves no frequency bins")
            image = (c, freq // layer.pool[1])
        elif layer.kind == "activation":
            pass
        else:
            if image is not None:
                dim, image = image[0] * image[1], None
            if layer.kind == "dense":
                shapes[f"{name}.weight"] = (layer.units, dim)
                shapes[f"{name}.bias"] = (layer.units,)
                dim = layer.units
            else:
                h = layer.units
                for d in ("fw", "bw"):
                    shapes[f"{name}.{d}.w_ih"] = (4 * h, dim)
                    shapes[f"{name}.{d}.w_hh"] = (4 * h, h)
                    shapes[f"{name}.{d}.bias"] = (4 * h,)
                dim = 2 * h
    return image[0] * image[1] if image is not None else dim


def parameter_shapes(graph: ModelGraph) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    fused = 0
    for name in graph.fusion:
        b = graph.branches[name]
        fused += _propagate(b.input_dim, b.layers, name, shapes)
    for i, layer in enumerate(graph.head):
        if layer.kind in ("conv2d", "pooling"):
            raise GraphError(f"head.{i}: {layer.kind} is not allowed in the head")
    # the head consumes the concatenated branch outputs as a flat sequence
    _propagate(fused, graph.head, "head", shapes)
    return shapes


@dataclass(frozen=True, eq=False)
class WeightStore:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        frozen = {}
        for name, arr in self.tensors.items():
            a = np.array(arr, dtype="<f4")
            a.setflags(write=False)
            frozen[name] = a
        object.__setattr__(self, "tensors", frozen)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self):
        return len(self.tensors)

    @classmethod
    def zeros(cls, graph: ModelGraph) -> "WeightStore":
        return cls({k: np.zeros(s, dtype=np.float32) for k, s in parameter_shapes(graph).items()})

    @classmethod
    def random(cls, graph: ModelGraph, seed: int = 0, scale: float = 0.1) -> "WeightStore":
        rng = np.random.default_rng(seed)
        return cls({k: (scale * rng.standard_normal(s)).astype(np.float32)
                    for k, s in parameter_shapes(graph).items()})

    def without(self, name: str) -> "WeightStore":
        return WeightStore({k: v for k, v in self.tensors.items() if k != name})

    def replace(self, **updates) -> "WeightStore":
        return WeightStore({**self.tensors, **updates})


def save_weights(path, weights: WeightStore) -> None:
    """Write ``path`` (JSON manifest) and ``path`` with a ``.bin`` suffix (raw blob)."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    manifest = {"format": "notegate-weights", "version": 1, "blob": blob_path.name,
                "byte_order": "little", "tensors": {}}
    chunks, offset = [], 0
    for name in sorted(weights.tensors):
        arr = weights.tensors[name]
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest["tensors"][name] = {"shape": list(arr.shape), "dtype": "float32", "offset": offset}
        chunks.append(data)
        offset += len(data)
    atomic_write_bytes(blob_path, b"".join(chunks))
    atomic_write_text(path, json.dumps(manifest, indent=1) + "\n")


def load_weights(path) -> WeightStore:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
        blob = (path.parent / manifest["blob"]).read_bytes()
        entries = manifest["tensors"]
    except FileNotFoundError as exc:
        raise WeightError(f"missing weights file: {exc.filename}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise WeightError(f"corrupt weight manifest {path}: {exc}") from exc
    tensors = {}
    for name, e in entries.items():
        try:
            shape = tuple(int(s) for s in e["shape"])
            offset = int(e["offset"])
            if e.get("dtype", "float32") != "float32":
                raise WeightError(f"{name}: unsupported dtype {e['dtype']!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise WeightError(f"corrupt manifest entry {name!r}: {exc}") from exc
        n = int(np.prod(shape, dtype=np.int64))
        if offset < 0 or offset + 4 * n > len(blob):
            raise WeightError(f"{name}: data range exceeds blob size {len(blob)}")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape)
    return WeightStore(tensors)


@dataclass(frozen=True)
class ValidationReport:
    missing: tuple[str, ...] = ()
    extra: tuple[str, ...] = ()
    mismatched: tuple[tuple[str, tuple, tuple], ...] = ()

    @property
    def ok(self) -> bool:
        return not (self.missing or self.extra or self.mismatched)

    def __str__(self):
        if self.ok:
            return "weights match graph"
        lines = [f"missing tensor {n}" for n in self.missing]
        lines += [f"unexpected tensor {n}" for n in self.extra]
        lines += [f"tensor {n}: expected shape {tuple(e)}, got {tuple(a)}" for n, e, a in self.mismatched]
        return "\n".join(lines)


def validate(graph: ModelGraph, weights: WeightStore) -> ValidationReport:
    expected = parameter_shapes(graph)
    missing = tuple(sorted(set(expected) - set(weights.tensors)))
    extra = tuple(sorted(set(weights.tensors) - set(expected)))
    mismatched = tuple(
        (n, expected[n], weights[n].shape)
        for n in sorted(set(expected) & set(weights.tensors))
        if tuple(weights[n].shape) != tuple(expected[n])
    )
    return ValidationReport(missing, extra, mismatched)


def _check(graph: ModelGraph, weights: WeightStore) -> None:
    report = validate(graph, weights)
    if not report.ok:
        raise WeightError(f"weights do not match graph {graph.name or ''}:\n{report}", report)


def activate(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "linear":
        return x
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        return expit(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "softmax":
        z = np.exp(x - x.max(axis=-1, keepdims=True))
        return z / z.sum(axis=-1, keepdims=True)
    raise GraphError(f"unknown activation {kind!r}")


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, dilation=(1, 1)) -> np.ndarray:
    """Same-padded 2-D convolution (cross-correlation) of ``(C_in, T, F)`` input."""
    c_out, c_in, kt, kf = weight.shape
    dt, df = dilation
    _, T, F = x.shape
    pt, pf = dt * (kt - 1) // 2, df * (kf - 1) // 2
    xp = np.pad(x, ((0, 0), (pt, pt), (pf, pf)))
    w = weight.astype(np.float64)
    out = np.broadcast_to(bias.astype(np.float64)[:, None, None], (c_out, T, F)).copy()
    for i in range(kt):
        for j in range(kf):
            window = xp[:, i * dt: i * dt + T, j * df: j * df + F]
            out += np.tensordot(w[:, :, i, j], window, axes=(1, 0))
    return out


def max_pool_freq(x: np.ndarray, size: int) -> np.ndarray:
    c, T, F = x.shape
    keep = (F // size) * size
    return x[:, :, :keep].reshape(c, T, F // size, size).max(axis=3)


def lstm(xs: np.ndarray, w_ih: np.ndarray, w_hh: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Unidirectional LSTM over ``(T, D)`` input starting from zero state."""
    h_dim = w_hh.shape[1]
    proj = xs @ w_ih.astype(np.float64).T + bias.astype(np.float64)
    w_hh = w_hh.astype(np.float64)
    h = np.zeros(h_dim)
    c = np.zeros(h_dim)
    out = np.empty((xs.shape[0], h_dim))
    for t in range(xs.shape[0]):
        z = proj[t] + w_hh @ h
        i = expit(z[:h_dim])
        f = expit(z[h_dim: 2 * h_dim])
        g = np.tanh(z[2 * h_dim: 3 * h_dim])
        o = expit(z[3 * h_dim:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return out


def bidirectional_lstm(xs: np.ndarray, params: Mapping[str, np.ndarray]) -> np.ndarray:
    fw = lstm(xs, params["fw.w_ih"], params["fw.w_hh"], params["fw.bias"])
    bw = lstm(xs[::-1], params["bw.w_ih"], params["bw.w_hh"], params["bw.bias"])[::-1]
    return np.concatenate([fw, bw], axis=1)


def apply_layer(layer: LayerSpec, params: Mapping[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    """One layer; ``x`` is ``(C, T, F)`` before flattening and ``(T, D)`` after."""
    if layer.kind == "conv2d":
        y = conv2d(x, params["weight"], params["bias"], layer.dilation)
    elif layer.kind == "pooling":
        y = max_pool_freq(x, layer.pool[1])
    elif layer.kind == "activation":
        y = x
    else:
        if x.ndim == 3:
            c, T, F = x.shape
            x = x.transpose(1, 0, 2).reshape(T, c * F)
        if layer.kind == "dense":
            y = x @ params["weight"].astype(np.float64).T + params["bias"].astype(np.float64)
        else:
            y = bidirectional_lstm(x, params)
    return activate(y, layer.activation)


def _layer_params(weights: WeightStore, prefix: str) -> dict[str, np.ndarray]:
    p = prefix + "."
    return {k[len(p):]: v for k, v in weights.tensors.items() if k.startswith(p)}


def run_layers(layers, weights: WeightStore, prefix: str, x: np.ndarray) -> np.ndarray:
    for i, layer in enumerate(layers):
        x = apply_layer(layer, _layer_params(weights, f"{prefix}.{i}"), x)
    if x.ndim == 3:
        c, T, F = x.shape
        x = x.transpose(1, 0, 2).reshape(T, c * F)
    return x


def forward(graph: ModelGraph, weights: WeightStore, inputs: Mapping[str, np.ndarray]) -> np.ndarray:
    """Run every branch, concatenate in fusion order, then the head. Returns ``(T, out)``."""
    _check(graph, weights)
    lengths = set()
    outs = []
    for name in graph.fusion:
        if name not in inputs:
            raise GraphError(f"no input supplied for branch {name!r}")
        x = np.asarray(inputs[name], dtype=np.float64)
        branch = graph.branches[name]
        if x.ndim != 2 or x.shape[1] != branch.input_dim:
            raise ValueError(f"branch {name!r} expects T x {branch.input_dim} input, got {x.shape}")
        lengths.add(x.shape[0])
        outs.append(run_layers(branch.layers, weights, name, x[None, :, :]))
    if len(lengths) != 1:
        raise ValueError(f"branch inputs disagree on frame count: {sorted(lengths)}")
    return run_layers(graph.head, weights, "head", np.concatenate(outs, axis=1))


def forward_note_model(mel: MelSpectrogram, ppg: Posteriorgram, graph: ModelGraph,
                       weights: WeightStore):
    """Onset/offset/activation posteriors from the dual-branch note network."""
    from .decode import FramePosteriors

    if graph.output_dim != 3 or graph.output_activation != "sigmoid":
        raise GraphError("note graph must end with a 3-unit sigmoid dense layer")
    if mel.n_frames != ppg.n_frames:
        raise ValueError(f"mel has {mel.n_frames} frames, PPG has {ppg.n_frames}")
    if not np.isclose(mel.hop_seconds, ppg.hop_seconds) or not np.isclose(
            mel.frame_zero_time, ppg.frame_zero_time):
        raise ValueError("mel and PPG frame grids differ")
    inputs = {"mel": mel.frames, "ppg": ppg.frames}
    out = forward(graph, weights, {k: v for k, v in inputs.items() if k in graph.branches})
    return FramePosteriors(out[:, 0], out[:, 1], out[:, 2], mel.hop_seconds, mel.frame_zero_time)


def forward_phoneme_model(mel: MelSpectrogram, graph: ModelGraph, weights: WeightStore,
                          inventory: PhonemeInventory | None = None) -> Posteriorgram:
    """Phonetic posteriorgram (blank last) from the phoneme-classifier CRNN."""
    if graph.output_activation != "softmax":
        raise GraphError("phoneme graph must end with a softmax dense layer")
    if inventory is not None and graph.output_dim != inventory.n_classes:
        raise GraphError(
            f"phoneme graph emits {graph.output_dim} classes, inventory needs {inventory.n_classes}")
    out = forward(graph, weights, {"mel": mel.frames})
    return Posteriorgram(out, mel.hop_seconds, mel.frame_zero_time, inventory)
