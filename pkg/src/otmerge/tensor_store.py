"""Binary tensor container ("OTMB") and model-bundle manifest.

This is the interchange boundary of the pipeline: exporters write OTMB
containers, the toy lab writes OTMB containers, and every pipeline stage
reads and writes them.

Layout (all integers little-endian):

    magic   "OTMB" (4 bytes)
    u32     format version (currently 1)
    u64     manifest byte length
    bytes   manifest as canonical JSON (sorted keys, no whitespace)
    then, for each record, sorted by name:
        u32     name byte length
        bytes   UTF-8 name
        u8      dtype tag (0 = float32, 1 = float64)
        u32     rank
        u64[r]  dims
        bytes   raw row-major little-endian payload

Serialization is a pure function of logical content: identical records and
manifest always produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContainerIntegrityError,
    CorruptionError,
    FormatError,
    ValidationError,
)

MAGIC = b"OTMB"
FORMAT_VERSION = 1

MODULE_NAMES = ("q_proj", "k_proj", "v_proj", "mlp_in", "mlp_out")
SIDES = ("pre", "post")

_DTYPE_TAGS = {"float32": 0, "float64": 1}
_TAG_DTYPES = {0: "float32", 1: "float64"}
_NP_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


@dataclass(frozen=True)
class ModuleDims:
    """Input/output width of one projection module."""

    d_in: int
    d_out: int


@dataclass(frozen=True)
class TensorRecord:
    """One named tensor; payload is row-major little-endian."""

    name: str
    dtype: str  # "float32" | "float64"
    shape: tuple[int, ...]
    data: np.ndarray

    def validate(self) -> None:
        if self.dtype not in _DTYPE_TAGS:
            raise ValidationError(f"record {self.name!r}: unsupported dtype {self.dtype!r}")
        expected = int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1
        if self.data.size != expected:
            raise ValidationError(
                f"record {self.name!r}: payload has {self.data.size} values, "
                f"shape {self.shape} requires {expected}"
            )

    def as_array(self) -> np.ndarray:
        """Return the tensor widened to float64 for compute."""
        return np.asarray(self.data, dtype=np.float64).reshape(self.shape)


def make_record(name: str, array: np.ndarray, dtype: str = "float64") -> TensorRecord:
    arr = np.ascontiguousarray(array, dtype=_NP_DTYPES[dtype])
    rec = TensorRecord(name=name, dtype=dtype, shape=tuple(arr.shape), data=arr.reshape(-1))
    rec.validate()
    return rec


@dataclass(frozen=True)
class ModelManifest:
    """Architecture card for one model plus the calibration sample count."""

    model_id: str
    num_layers: int
    layers: tuple[dict, ...]  # one {module_name: ModuleDims} per layer
    sample_count: int

    def validate(self) -> None:
        if self.num_layers != len(self.layers):
            raise ValidationError(
                f"manifest {self.model_id!r}: num_layers {self.num_layers} "
                f"!= {len(self.layers)} layer entries"
            )
        if self.sample_count <= 1:
            raise ValidationError(
                f"manifest {self.model_id!r}: sample_count must exceed 1, "
                f"got {self.sample_count}"
            )
        for idx, modules in enumerate(self.layers):
            for name, dims in modules.items():
                if name not in MODULE_NAMES:
                    raise ValidationError(
                        f"manifest {self.model_id!r}: layer {idx} has unknown module {name!r}"
                    )
                if dims.d_in < 1 or dims.d_out < 1:
                    raise ValidationError(
                        f"manifest {self.model_id!r}: layer {idx} module {name} "
                        f"has non-positive dims"
                    )

    def module_dims(self, layer: int, module: str) -> ModuleDims:
        try:
            return self.layers[layer][module]
        except (IndexError, KeyError):
            raise ValidationError(
                f"manifest {self.model_id!r} has no module {module!r} at layer {layer}"
            ) from None

    def to_json_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "num_layers": self.num_layers,
            "sample_count": self.sample_count,
            "layers": [
                {name: {"d_in": d.d_in, "d_out": d.d_out} for name, d in sorted(mods.items())}
                for mods in self.layers
            ],
        }

    @staticmethod
    def from_json_dict(obj: dict) -> "ModelManifest":
        layers = tuple(
            {name: ModuleDims(d_in=int(d["d_in"]), d_out=int(d["d_out"])) for name, d in mods.items()}
            for mods in obj["layers"]
        )
        manifest = ModelManifest(
            model_id=str(obj["model_id"]),
            num_layers=int(obj["num_layers"]),
            layers=layers,
            sample_count=int(obj["sample_count"]),
        )
        manifest.validate()
        return manifest


def canonical_manifest_bytes(manifest: ModelManifest) -> bytes:
    return json.dumps(manifest.to_json_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def manifest_sha256(manifest: ModelManifest) -> str:
    return hashlib.sha256(canonical_manifest_bytes(manifest)).hexdigest()


@dataclass(frozen=True)
class ActivationMatrix:
    """T x n feature activations for one (model, layer, module, side)."""

    model_id: str
    layer: int
    module: str
    side: str  # "pre" | "post"
    matrix: np.ndarray

    def validate_against(self, manifest: ModelManifest) -> None:
        if self.side not in SIDES:
            raise ValidationError(f"activation side must be pre/post, got {self.side!r}")
        dims = manifest.module_dims(self.layer, self.module)
        width = dims.d_in if self.side == "pre" else dims.d_out
        t, n = self.matrix.shape
        if t != manifest.sample_count:
            raise ValidationError(
                f"activations {self.layer}.{self.module}.{self.side}: {t} rows, "
                f"manifest sample_count is {manifest.sample_count}"
            )
        if n != width:
            raise ValidationError(
                f"activations {self.layer}.{self.module}.{self.side}: {n} columns, "
                f"manifest dimension is {width}"
            )


@dataclass
class WeightBundle:
    """Projection weights (and optional biases) for one model."""

    model_id: str
    manifest: ModelManifest
    weights: dict = field(default_factory=dict)  # (layer, module) -> (d_out, d_in)
    biases: dict = field(default_factory=dict)  # (layer, module) -> (d_out,)

    def validate(self) -> None:
        self.manifest.validate()
        for (layer, module), w in self.weights.items():
            dims = self.manifest.module_dims(layer, module)
            if w.shape != (dims.d_out, dims.d_in):
                raise ValidationError(
                    f"weight {layer}.{module}: shape {w.shape}, "
                    f"manifest requires ({dims.d_out}, {dims.d_in})"
                )
        for (layer, module), b in self.biases.items():
            dims = self.manifest.module_dims(layer, module)
            if b.shape != (dims.d_out,):
                raise ValidationError(
                    f"bias {layer}.{module}: shape {b.shape}, "
                    f"manifest requires ({dims.d_out},)"
                )


# ---------------------------------------------------------------------------
# container I/O


def _validate_records(records, manifest: ModelManifest) -> None:
    manifest.validate()
    seen = set()
    for rec in records:
        rec.validate()
        if rec.name in seen:
            raise ContainerIntegrityError(f"duplicate tensor name {rec.name!r}")
        seen.add(rec.name)
        _cross_check(rec, manifest)


def _cross_check(rec: TensorRecord, manifest: ModelManifest) -> None:
    """Records following the weight/activation naming convention must match
    the manifest; any other name is free-form."""
    parts = rec.name.split(".")
    if len(parts) == 4 and parts[0] == "layer" and parts[1].isdigit() and parts[2] in MODULE_NAMES:
        layer, module, kind = int(parts[1]), parts[2], parts[3]
        dims = manifest.module_dims(layer, module)
        if kind == "weight" and rec.shape != (dims.d_out, dims.d_in):
            raise ValidationError(
                f"record {rec.name!r}: shape {rec.shape} does not match "
                f"manifest ({dims.d_out}, {dims.d_in})"
            )
        if kind == "bias" and rec.shape != (dims.d_out,):
            raise ValidationError(
                f"record {rec.name!r}: shape {rec.shape} does not match "
                f"manifest ({dims.d_out},)"
            )
    elif len(parts) == 4 and parts[0] == "acts" and parts[1].isdigit() and parts[2] in MODULE_NAMES:
        layer, module, side = int(parts[1]), parts[2], parts[3]
        if side not in SIDES:
            raise ValidationError(f"record {rec.name!r}: unknown activation side {side!r}")
        dims = manifest.module_dims(layer, module)
        width = dims.d_in if side == "pre" else dims.d_out
        if rec.shape != (manifest.sample_count, width):
            raise ValidationError(
                f"record {rec.name!r}: shape {rec.shape} does not match "
                f"manifest ({manifest.sample_count}, {width})"
            )


def write_container(records, manifest: ModelManifest, path) -> None:
    """Serialize records + manifest to `path`; byte-deterministic."""
    _validate_records(records, manifest)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    manifest_bytes = canonical_manifest_bytes(manifest)
    buf.write(struct.pack("<Q", len(manifest_bytes)))
    buf.write(manifest_bytes)
    for rec in sorted(records, key=lambda r: r.name):
        name_bytes = rec.name.encode("utf-8")
        buf.write(struct.pack("<I", len(name_bytes)))
        buf.write(name_bytes)
        buf.write(struct.pack("<B", _DTYPE_TAGS[rec.dtype]))
        buf.write(struct.pack("<I", len(rec.shape)))
        for dim in rec.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(np.ascontiguousarray(rec.data, dtype=_NP_DTYPES[rec.dtype]).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_container(path):
    """Inverse of write_container; re-validates everything on load.

    Returns (records, manifest). Record payloads keep their stored dtype;
    use TensorRecord.as_array() to widen to float64 for compute.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    pos = 0

    def take(n: int, what: str):
        nonlocal pos
        if pos + n > len(view):
            raise CorruptionError(f"container truncated while reading {what}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    magic = bytes(take(4, "magic"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported container version {version}")
    (manifest_len,) = struct.unpack("<Q", take(8, "manifest length"))
    try:
        manifest = ModelManifest.from_json_dict(
            json.loads(bytes(take(manifest_len, "manifest")).decode("utf-8"))
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptionError(f"manifest is not valid canonical JSON: {exc}") from exc

    records = []
    while pos < len(view):
        (name_len,) = struct.unpack("<I", take(4, "record name length"))
        name = bytes(take(name_len, "record name")).decode("utf-8")
        (tag,) = struct.unpack("<B", take(1, "dtype tag"))
        if tag not in _TAG_DTYPES:
            raise CorruptionError(f"record {name!r}: unknown dtype tag {tag}")
        dtype = _TAG_DTYPES[tag]
        (rank,) = struct.unpack("<I", take(4, "rank"))
        shape = tuple(struct.unpack("<Q", take(8, "dim"))[0] for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = take(count * _NP_DTYPES[dtype].itemsize, f"payload of {name!r}")
        data = np.frombuffer(payload, dtype=_NP_DTYPES[dtype]).copy()
        data.flags.writeable = False
        records.append(TensorRecord(name=name, dtype=dtype, shape=shape, data=data))

    _validate_records(records, manifest)
    return records, manifest


# ---------------------------------------------------------------------------
# record <-> domain-object helpers


def weight_record_name(layer: int, module: str, kind: str = "weight") -> str:
    return f"layer.{layer}.{module}.{kind}"


def activation_record_name(layer: int, module: str, side: str) -> str:
    return f"acts.{layer}.{module}.{side}"


def bundle_to_records(bundle: WeightBundle, dtype: str = "float64"):
    bundle.validate()
    records = []
    for (layer, module), w in sorted(bundle.weights.items()):
        records.append(make_record(weight_record_name(layer, module), w, dtype))
    for (layer, module), b in sorted(bundle.biases.items()):
        records.append(make_record(weight_record_name(layer, module, "bias"), b, dtype))
    return records


def records_to_bundle(records, manifest: ModelManifest) -> WeightBundle:
    bundle = WeightBundle(model_id=manifest.model_id, manifest=manifest)
    for rec in records:
        parts = rec.name.split(".")
        if len(parts) == 4 and parts[0] == "layer" and parts[1].isdigit():
            layer, module, kind = int(parts[1]), parts[2], parts[3]
            if kind == "weight":
                bundle.weights[(layer, module)] = rec.as_array()
            elif kind == "bias":
                bundle.biases[(layer, module)] = rec.as_array()
    bundle.validate()
    return bundle


def activations_to_records(acts, dtype: str = "float64"):
    records = []
    for a in sorted(acts, key=lambda a: (a.layer, a.module, a.side)):
        records.append(make_record(activation_record_name(a.layer, a.module, a.side), a.matrix, dtype))
    return records


def records_to_activations(records, manifest: ModelManifest) -> dict:
    """Return {(layer, module, side): ActivationMatrix} for every activation record."""
    out = {}
    for rec in records:
        parts = rec.name.split(".")
        if len(parts) == 4 and parts[0] == "acts" and parts[1].isdigit():
            act = ActivationMatrix(
                model_id=manifest.model_id,
                layer=int(parts[1]),
                module=parts[2],
                side=parts[3],
                matrix=rec.as_array(),
            )
            act.validate_against(manifest)
            out[(act.layer, act.module, act.side)] = act
    return out
