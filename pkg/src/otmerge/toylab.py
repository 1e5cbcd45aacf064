"""Desk-scale synthetic models with known ground truth.

A toy "transformer" is a stack of linear projection modules: attention
projections (q/k/v) are square taps on the layer's input stream, and the
mlp_in -> nonlinearity -> mlp_out chain advances the stream to the next
layer. There is no attention mixing; the merge pipeline only consumes
per-module projection activations, and those are all this lab produces.

Planted scenarios derive a second model from a source by permuting (and
optionally truncating or noising) every feature space, giving an exact
ground-truth answer for what the transport plans should recover.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedScaleError, ValidationError
from .fusion import ResidualBundle, ResidualLayer
from .tensor_store import (
    MODULE_NAMES,
    ActivationMatrix,
    ModelManifest,
    ModuleDims,
    WeightBundle,
)

ATTENTION_MODULES = ("q_proj", "k_proj", "v_proj")

MAX_TOY_DIM = 4096


@dataclass(frozen=True)
class ToyModelSpec:
    """Deterministic description of a toy model; weights follow from the seed."""

    num_layers: int
    dims: tuple  # stream width entering each layer, length num_layers + 1
    modules: tuple = ("q_proj", "mlp_in", "mlp_out")
    nonlinearity: str = "tanh"
    seed: int = 0

    def validate(self) -> None:
        if self.num_layers < 1:
            raise ValidationError("num_layers must be >= 1")
        if len(self.dims) != self.num_layers + 1:
            raise ValidationError(
                f"dims needs {self.num_layers + 1} entries (stream width per layer "
                f"boundary), got {len(self.dims)}"
            )
        if any(d < 1 for d in self.dims):
            raise ValidationError("all dims must be >= 1")
        unknown = set(self.modules) - set(MODULE_NAMES)
        if unknown:
            raise ValidationError(f"unknown modules {sorted(unknown)}")
        if not self.modules:
            raise ValidationError("module set is empty")
        if ("mlp_in" in self.modules) != ("mlp_out" in self.modules):
            raise ValidationError("mlp_in and mlp_out must be used together")
        if "mlp_in" not in self.modules:
            # stream advances through the last attention tap; widths must match
            if any(self.dims[i] != self.dims[i + 1] for i in range(self.num_layers)):
                raise ValidationError(
                    "without an MLP pair the stream width cannot change across layers"
                )
        if self.nonlinearity not in ("tanh", "relu"):
            raise ValidationError(f"nonlinearity must be tanh or relu, got {self.nonlinearity!r}")

    def module_dims(self, layer: int, module: str) -> ModuleDims:
        d_in = self.dims[layer]
        if module in ATTENTION_MODULES:
            return ModuleDims(d_in=d_in, d_out=d_in)
        if module == "mlp_in":
            return ModuleDims(d_in=d_in, d_out=d_in)  # hidden width = input width
        if module == "mlp_out":
            return ModuleDims(d_in=d_in, d_out=self.dims[layer + 1])
        raise ValidationError(f"unknown module {module!r}")

    def manifest(self, model_id: str, sample_count: int) -> ModelManifest:
        layers = tuple(
            {m: self.module_dims(layer, m) for m in self.modules}
            for layer in range(self.num_layers)
        )
        manifest = ModelManifest(
            model_id=model_id,
            num_layers=self.num_layers,
            layers=layers,
            sample_count=sample_count,
        )
        manifest.validate()
        return manifest


@dataclass(frozen=True)
class PlantedScenario:
    """Source spec plus the recipe for deriving a permuted target from it."""

    source: ToyModelSpec
    perm_seed: int = 1
    noise: float = 0.0
    target_dims: tuple | None = None  # truncated stream widths, or None
    identity: bool = False  # plant the identity permutation
    sample_count: int = 64

    def validate(self) -> None:
        self.source.validate()
        if self.noise < 0:
            raise ValidationError("noise level must be >= 0")
        if self.sample_count < 2:
            raise ValidationError("sample_count must be >= 2")
        if self.target_dims is not None:
            if len(self.target_dims) != len(self.source.dims):
                raise ValidationError("target_dims must match source dims in length")
            if self.target_dims[0] != self.source.dims[0]:
                raise ValidationError("input width cannot be truncated (inputs are shared)")
            if any(t > s or t < 1 for t, s in zip(self.target_dims, self.source.dims)):
                raise ValidationError("target_dims must satisfy 1 <= target <= source")


def generate_toy(spec: ToyModelSpec, sample_count: int = 2, model_id: str = "toy") -> WeightBundle:
    """Deterministic weights from the seed: standard normal scaled by 1/sqrt(d_in)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    bundle = WeightBundle(
        model_id=model_id, manifest=spec.manifest(model_id, sample_count)
    )
    for layer in range(spec.num_layers):
        for module in MODULE_NAMES:
            if module not in spec.modules:
                continue
            dims = spec.module_dims(layer, module)
            w = rng.standard_normal((dims.d_out, dims.d_in)) / np.sqrt(dims.d_in)
            bundle.weights[(layer, module)] = w
    bundle.validate()
    return bundle


def _nonlin(name: str, x: np.ndarray) -> np.ndarray:
    return np.tanh(x) if name == "tanh" else np.maximum(x, 0.0)


def run_activations(bundle: WeightBundle, inputs: np.ndarray, nonlinearity: str = "tanh") -> dict:
    """Forward the toy model on a T x d0 input batch, recording pre- and
    post-projection activations for every (layer, module).

    Returns {(layer, module, side): ActivationMatrix}.
    """
    h = np.asarray(inputs, dtype=np.float64)
    if h.ndim != 2:
        raise ValidationError("inputs must be a T x d0 matrix")
    manifest = bundle.manifest
    first = manifest.layers[0]
    d0 = next(iter(first.values())).d_in
    if h.shape[1] != d0:
        raise ValidationError(f"input width {h.shape[1]} != layer-0 width {d0}")

    acts = {}

    def record(layer, module, side, matrix):
        acts[(layer, module, side)] = ActivationMatrix(
            model_id=bundle.model_id, layer=layer, module=module, side=side, matrix=matrix
        )

    for layer in range(manifest.num_layers):
        modules = manifest.layers[layer]
        last_tap = None
        for module in ATTENTION_MODULES:
            if module not in modules:
                continue
            w = bundle.weights[(layer, module)]
            post = h @ w.T
            record(layer, module, "pre", h)
            record(layer, module, "post", post)
            last_tap = post
        if "mlp_in" in modules:
            w_in = bundle.weights[(layer, "mlp_in")]
            z = h @ w_in.T
            record(layer, "mlp_in", "pre", h)
            record(layer, "mlp_in", "post", z)
            hidden = _nonlin(nonlinearity, z)
            w_out = bundle.weights[(layer, "mlp_out")]
            o = hidden @ w_out.T
            record(layer, "mlp_out", "pre", hidden)
            record(layer, "mlp_out", "post", o)
            h = o
        elif last_tap is not None:
            h = last_tap
    return acts


def _selection(rng, d: int, keep: int, identity: bool) -> np.ndarray:
    """Target->source index map: a permutation when keep == d, else the first
    `keep` entries of one."""
    order = np.arange(d) if identity else rng.permutation(d)
    return order[:keep]


def planted_permutation_case(scenario: PlantedScenario):
    """Build (source bundle, target bundle, ground truth).

    The target is the source with every feature space permuted (and optionally
    truncated), plus optional weight noise. Ground truth maps are target->source
    index arrays per (layer, module, side): entry i names the source channel
    that became target channel i.
    """
    scenario.validate()
    spec = scenario.source
    source = generate_toy(spec, sample_count=scenario.sample_count, model_id="toy-source")
    rng = np.random.default_rng(scenario.perm_seed)
    t_dims = tuple(scenario.target_dims) if scenario.target_dims else tuple(spec.dims)

    # independent selection per feature space; the shared input space is fixed
    stream = [np.arange(spec.dims[0])]
    for layer in range(1, spec.num_layers + 1):
        stream.append(_selection(rng, spec.dims[layer], t_dims[layer], scenario.identity))
    hidden = []
    taps = {}
    advancing = None
    if "mlp_in" not in spec.modules:
        present = [m for m in ATTENTION_MODULES if m in spec.modules]
        advancing = present[-1] if present else None
    for layer in range(spec.num_layers):
        hd = spec.module_dims(layer, "mlp_in").d_out if "mlp_in" in spec.modules else 0
        hidden.append(
            _selection(rng, hd, min(hd, t_dims[layer]), scenario.identity) if hd else None
        )
        for module in ATTENTION_MODULES:
            if module not in spec.modules:
                continue
            if module == advancing:
                taps[(layer, module)] = stream[layer + 1]
            else:
                d = spec.dims[layer]
                taps[(layer, module)] = _selection(
                    rng, d, t_dims[layer], scenario.identity
                )

    def spaces(layer: int, module: str):
        """(in-space selection, out-space selection) for one module."""
        if module in ATTENTION_MODULES:
            return stream[layer], taps[(layer, module)]
        if module == "mlp_in":
            return stream[layer], hidden[layer]
        return hidden[layer], stream[layer + 1]

    target_spec = ToyModelSpec(
        num_layers=spec.num_layers,
        dims=t_dims,
        modules=spec.modules,
        nonlinearity=spec.nonlinearity,
        seed=spec.seed,
    )
    target_spec.validate()
    target = WeightBundle(
        model_id="toy-target",
        manifest=target_spec.manifest("toy-target", scenario.sample_count),
    )
    truth = {}
    for layer in range(spec.num_layers):
        for module in spec.modules:
            sel_in, sel_out = spaces(layer, module)
            w = source.weights[(layer, module)][np.ix_(sel_out, sel_in)]
            if scenario.noise > 0:
                w = w + scenario.noise * rng.standard_normal(w.shape)
            else:
                w = w.copy()
            target.weights[(layer, module)] = w
            truth[(layer, module, "in")] = sel_in.copy()
            truth[(layer, module, "out")] = sel_out.copy()
    target.validate()
    return source, target, truth


# ---------------------------------------------------------------------------
# residual-frozen adaptation on a single affine toy layer


def _single_entry(bundle: ResidualBundle) -> tuple:
    if len(bundle.entries) != 1:
        raise ValidationError(
            f"adaptation expects a single-affine-layer bundle, got {len(bundle.entries)} entries"
        )
    ((key, entry),) = bundle.entries.items()
    if entry.base.size > MAX_TOY_DIM * MAX_TOY_DIM or max(entry.base.shape) > MAX_TOY_DIM:
        raise UnsupportedScaleError("bundle exceeds toy scale")
    return key, entry


def affine_mse_loss(entry: ResidualLayer, X: np.ndarray, Y: np.ndarray) -> float:
    """Mean (over samples) squared error of the fused affine map on (X, Y)."""
    pred = X @ entry.fused_weight().T
    fused_bias = entry.fused_bias()
    if fused_bias is not None:
        pred = pred + fused_bias
    err = pred - Y
    return float(np.sum(err * err) / X.shape[0])


def residual_frozen_step(bundle: ResidualBundle, batch, lr: float):
    """One gradient-descent step on the base weights only.

    The transported residual is frozen: the loss gradient with respect to the
    scaled masked delta is forced to zero, while the base receives the full
    (unmasked) gradient of the squared error through the fused forward map.
    Returns (updated bundle, loss before the step); delta, mask and alpha are
    the same objects as in the input bundle.
    """
    key, entry = _single_entry(bundle)
    X = np.asarray(batch[0], dtype=np.float64)
    Y = np.asarray(batch[1], dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValidationError("batch must be (T x d_in inputs, T x d_out targets)")
    if X.shape[1] != entry.base.shape[1] or Y.shape[1] != entry.base.shape[0]:
        raise ValidationError(
            f"batch dims {X.shape[1]}->{Y.shape[1]} do not match weight "
            f"{entry.base.shape[1]}->{entry.base.shape[0]}"
        )
    loss = affine_mse_loss(entry, X, Y)
    if lr == 0.0:
        return bundle, loss
    T = X.shape[0]
    pred = X @ entry.fused_weight().T
    fused_bias = entry.fused_bias()
    if fused_bias is not None:
        pred = pred + fused_bias
    err = pred - Y
    grad_w = (2.0 / T) * err.T @ X
    new_entry = ResidualLayer(
        base=entry.base - lr * grad_w,
        delta=entry.delta,
        mask=entry.mask,
        alpha=entry.alpha,
        base_bias=(
            None
            if entry.base_bias is None
            else entry.base_bias - lr * (2.0 / T) * err.sum(axis=0)
        ),
        delta_bias=entry.delta_bias,
    )
    updated = ResidualBundle(model_id=bundle.model_id, manifest=bundle.manifest)
    updated.entries[key] = new_entry
    return updated, loss
