"""Checkpoint-to-container extraction.

Loads a pretrained causal-LM checkpoint, reads the projection weights of the
selected decoder layers, and captures pre/post-projection activations via
forward hooks while the model runs over a text sample file. Per-sample token
features are mean-pooled (accumulated in float64, stored float32) into the
T x n activation matrices the merge pipeline consumes.

Samples run one at a time, so no padding positions ever enter the pooling.
Selected layers are reindexed to a contiguous 0..L-1 range in the container;
the original indices are recorded in the export report.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from otmerge.errors import OtmergeError, ValidationError
from otmerge.tensor_store import (
    ActivationMatrix,
    ModelManifest,
    ModuleDims,
    WeightBundle,
    activations_to_records,
    bundle_to_records,
    write_container,
)

logger = logging.getLogger(__name__)

# candidate attribute paths per module role, tried in order
ROLE_PATHS = {
    "q_proj": ("self_attn.q_proj", "attn.q_proj", "attention.q_proj"),
    "k_proj": ("self_attn.k_proj", "attn.k_proj", "attention.k_proj"),
    "v_proj": ("self_attn.v_proj", "attn.v_proj", "attention.v_proj"),
    "mlp_in": ("mlp.up_proj", "mlp.fc_in", "mlp.c_fc"),
    "mlp_out": ("mlp.down_proj", "mlp.fc_out", "mlp.c_proj"),
}


class CheckpointLoadError(OtmergeError):
    """Checkpoint or tokenizer could not be loaded."""


class ModuleMappingError(OtmergeError):
    """A requested module role does not exist in the architecture."""


@dataclass
class ExportSpec:
    """What to extract: checkpoint, layer/module selection, calibration text."""

    checkpoint: str
    samples_file: str | None = None
    layers: list | None = None  # original layer indices; None = all
    modules: tuple = ("q_proj", "k_proj", "v_proj", "mlp_in", "mlp_out")
    max_samples: int = 2000
    max_length: int = 512
    pooling: str = "mean"
    dtype: str = "float32"

    def validate(self) -> None:
        if self.max_samples < 2:
            raise ValidationError("max_samples must be >= 2 (correlations need T >= 2)")
        if self.pooling != "mean":
            raise ValidationError(f"only mean pooling is supported, got {self.pooling!r}")
        if self.dtype != "float32":
            raise ValidationError("exports are float32; the pipeline widens on load")
        unknown = [m for m in self.modules if m not in ROLE_PATHS]
        if unknown:
            raise ValidationError(f"unknown module roles {unknown}; known: {sorted(ROLE_PATHS)}")


def load_model(spec: ExportSpec):
    from transformers import AutoModelForCausalLM

    try:
        model = AutoModelForCausalLM.from_pretrained(spec.checkpoint)
    except Exception as exc:
        raise CheckpointLoadError(f"cannot load checkpoint {spec.checkpoint!r}: {exc}") from exc
    model.eval()
    return model


def load_tokenizer(spec: ExportSpec):
    from transformers import AutoTokenizer

    try:
        return AutoTokenizer.from_pretrained(spec.checkpoint)
    except Exception as exc:
        raise CheckpointLoadError(f"cannot load tokenizer for {spec.checkpoint!r}: {exc}") from exc


def locate_decoder_layers(model):
    for path in ("model.layers", "layers", "transformer.h", "model.decoder.layers"):
        obj = model
        try:
            for attr in path.split("."):
                obj = getattr(obj, attr)
        except AttributeError:
            continue
        if isinstance(obj, (torch.nn.ModuleList, list)) and len(obj):
            return list(obj)
    raise ModuleMappingError("cannot locate decoder layers in this architecture")


def resolve_module(layer_module, role: str):
    for path in ROLE_PATHS.get(role, ()):
        obj = layer_module
        try:
            for attr in path.split("."):
                obj = getattr(obj, attr)
        except AttributeError:
            continue
        if isinstance(obj, torch.nn.Linear):
            return obj
    available = sorted(name for name, _ in layer_module.named_modules() if name)
    raise ModuleMappingError(
        f"module role {role!r} not found in layer; available submodules: {available}"
    )


def _selected_layers(model, spec: ExportSpec):
    """[(reindexed, original, layer module)] for the selection."""
    layers = locate_decoder_layers(model)
    original = list(range(len(layers))) if spec.layers is None else list(spec.layers)
    for idx in original:
        if not 0 <= idx < len(layers):
            raise ValidationError(f"layer {idx} out of range; model has {len(layers)} layers")
    return [(new, orig, layers[orig]) for new, orig in enumerate(original)]


def build_manifest(model_id: str, selected, modules, sample_count: int) -> ModelManifest:
    layer_dims = []
    for _, _, layer_module in selected:
        dims = {}
        for role in modules:
            linear = resolve_module(layer_module, role)
            dims[role] = ModuleDims(d_in=linear.in_features, d_out=linear.out_features)
        layer_dims.append(dims)
    manifest = ModelManifest(
        model_id=model_id,
        num_layers=len(layer_dims),
        layers=tuple(layer_dims),
        sample_count=sample_count,
    )
    manifest.validate()
    return manifest


def read_samples(spec: ExportSpec, tokenizer):
    """Tokenized samples plus bookkeeping: (list of 1 x T_i id tensors, report)."""
    if not spec.samples_file:
        raise ValidationError("samples_file is required for activation export")
    with open(spec.samples_file, encoding="utf-8") as fh:
        lines = [line.strip() for line in fh]
    encoded = []
    skipped = 0
    truncated = 0
    for line in lines:
        if len(encoded) >= spec.max_samples:
            break
        if not line:
            continue
        ids = tokenizer(line, return_tensors="pt")["input_ids"]
        if ids.numel() == 0:
            skipped += 1
            logger.warning("sample produced no tokens after tokenization; skipped")
            continue
        if ids.shape[1] > spec.max_length:
            ids = ids[:, : spec.max_length]
            truncated += 1
        encoded.append(ids)
    if len(encoded) < 2:
        raise ValidationError(
            f"need at least 2 usable samples, got {len(encoded)} "
            f"(skipped {skipped} empty after tokenization)"
        )
    report = {"samples_used": len(encoded), "samples_skipped_empty": skipped,
              "samples_truncated": truncated}
    return encoded, report


def export_weights(spec: ExportSpec, out_path, sample_count: int, model=None):
    """Write the selected projection matrices (and biases) as weights.otmb."""
    spec.validate()
    if model is None:
        model = load_model(spec)
    selected = _selected_layers(model, spec)
    manifest = build_manifest(spec.checkpoint, selected, spec.modules, sample_count)
    bundle = WeightBundle(model_id=spec.checkpoint, manifest=manifest)
    for new, _, layer_module in selected:
        for role in spec.modules:
            linear = resolve_module(layer_module, role)
            bundle.weights[(new, role)] = linear.weight.detach().to(torch.float32).numpy()
            if linear.bias is not None:
                bundle.biases[(new, role)] = linear.bias.detach().to(torch.float32).numpy()
    write_container(bundle_to_records(bundle, dtype="float32"), manifest, out_path)
    return manifest, {"layer_map": {new: orig for new, orig, _ in selected}}


def export_activations(spec: ExportSpec, out_path, model=None, tokenizer=None, probe=None):
    """Run the model over the sample file and write pooled activations.

    `probe`, when given as (reindexed layer, role, side), additionally returns
    the raw per-token feature arrays for that capture point, one per sample,
    for cross-checking the pooling against the pipeline's own pooler.
    """
    spec.validate()
    if model is None:
        model = load_model(spec)
    if tokenizer is None:
        tokenizer = load_tokenizer(spec)
    encoded, report = read_samples(spec, tokenizer)
    T = len(encoded)
    selected = _selected_layers(model, spec)
    manifest = build_manifest(spec.checkpoint, selected, spec.modules, T)

    pooled = {
        (new, role, side): np.empty((T, getattr(dims, attr)), dtype=np.float32)
        for new, _, layer_module in selected
        for role in spec.modules
        for side, attr, dims in (
            ("pre", "d_in", manifest.module_dims(new, role)),
            ("post", "d_out", manifest.module_dims(new, role)),
        )
    }
    raw_probe = [] if probe is not None else None

    captures = {}

    def make_hook(key):
        def hook(_module, args, output):
            captures[key] = (args[0].detach(), output.detach())

        return hook

    handles = []
    try:
        for new, _, layer_module in selected:
            for role in spec.modules:
                handles.append(
                    resolve_module(layer_module, role).register_forward_hook(
                        make_hook((new, role))
                    )
                )
        torch.manual_seed(0)  # inference determinism; no sampling involved
        with torch.no_grad():
            for t, ids in enumerate(encoded):
                captures.clear()
                model(input_ids=ids)
                for (new, role), (pre, post) in captures.items():
                    # batch size 1: tokens x features after squeezing; pooling
                    # accumulates in float64, rows stored as float32
                    pre2d = pre.reshape(-1, pre.shape[-1]).numpy()
                    post2d = post.reshape(-1, post.shape[-1]).numpy()
                    pooled[(new, role, "pre")][t] = pre2d.astype(np.float64).mean(axis=0)
                    pooled[(new, role, "post")][t] = post2d.astype(np.float64).mean(axis=0)
                    if probe is not None and probe[:2] == (new, role):
                        raw_probe.append(pre2d if probe[2] == "pre" else post2d)
    finally:
        for handle in handles:
            handle.remove()

    acts = [
        ActivationMatrix(model_id=spec.checkpoint, layer=new, module=role, side=side,
                         matrix=matrix)
        for (new, role, side), matrix in sorted(pooled.items())
    ]
    write_container(activations_to_records(acts, dtype="float32"), manifest, out_path)
    report["layer_map"] = {new: orig for new, orig, _ in selected}
    if probe is not None:
        return manifest, report, raw_probe
    return manifest, report
