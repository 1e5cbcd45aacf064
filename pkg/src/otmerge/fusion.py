"""Weight-space fusion driven by activation-space transport plans.

A feature plan pair (Q_in, Q_out) induces coordinate maps

    phi_in  = (Q_in)^T     target input features  -> source input coordinates
    phi_out = Q_out        source output coords   -> target output features

and the transported source operator phi_out @ W_B @ phi_in, which acts on
target features exactly as "map to source coordinates, apply the source
layer, map back". Fusion blends transported operators into the target weight
on a top-k set of output neurons only, in residual form:

    fused = base + alpha * (mask . (sum_m p_m * transported_m - base))

where the mask selects whole output-neuron rows. The residual parts are
stored separately so adaptation can freeze the transported residual and the
final weights can be folded back at any time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .sinkhorn import TransportPlan
from .stats import ActivationScore
from .tensor_store import ModelManifest, WeightBundle, make_record


@dataclass
class CoordinateMaps:
    """Linear maps carrying target features into source coordinates and back."""

    phi_in: np.ndarray  # (d_B_in, d_A_in)
    phi_out: np.ndarray  # (d_A_out, d_B_out)
    scaling_applied: bool
    scale_in: np.ndarray | None = None  # per-row factors applied to (Q_in)^T
    scale_out: np.ndarray | None = None


def _plan_matrix(Q) -> np.ndarray:
    m = Q.plan if isinstance(Q, TransportPlan) else np.asarray(Q, dtype=np.float64)
    if not np.isfinite(m).all():
        raise ValidationError("transport plan has non-finite entries")
    return np.array(m, dtype=np.float64)


def _row_normalize(mat: np.ndarray, name: str):
    sums = mat.sum(axis=1)
    if np.any(sums <= 0):
        raise ValidationError(f"{name} has a nonpositive row sum; cannot scale")
    factors = 1.0 / sums
    return mat * factors[:, None], factors


def coordinate_maps(Q_in, Q_out, scale: bool = True) -> CoordinateMaps:
    """Build phi_in = (Q_in)^T and phi_out = Q_out.

    With scale on (default), each map is row-normalized to row sums 1. Under
    uniform marginals this equals multiplying by the inverse marginal mass
    (d_B_in for phi_in, d_A_out for phi_out); unscaled plans would shrink the
    transported operator by those factors.
    """
    phi_in = _plan_matrix(Q_in).T.copy()
    phi_out = _plan_matrix(Q_out)
    scale_in = scale_out = None
    if scale:
        phi_in, scale_in = _row_normalize(phi_in, "phi_in")
        phi_out, scale_out = _row_normalize(phi_out, "phi_out")
    return CoordinateMaps(
        phi_in=phi_in,
        phi_out=phi_out,
        scaling_applied=scale,
        scale_in=scale_in,
        scale_out=scale_out,
    )


def transported_operator(maps: CoordinateMaps, W_B: np.ndarray) -> np.ndarray:
    """phi_out @ W_B @ phi_in: the source layer re-expressed in target coordinates."""
    W_B = np.asarray(W_B, dtype=np.float64)
    if maps.phi_out.shape[1] != W_B.shape[0]:
        raise ValidationError(
            f"phi_out columns ({maps.phi_out.shape[1]}) != W_B rows ({W_B.shape[0]})"
        )
    if W_B.shape[1] != maps.phi_in.shape[0]:
        raise ValidationError(
            f"W_B columns ({W_B.shape[1]}) != phi_in rows ({maps.phi_in.shape[0]})"
        )
    return maps.phi_out @ W_B @ maps.phi_in


def verify_representation_identity(maps: CoordinateMaps, W_B, h_A) -> float:
    """Max absolute gap between the transported operator applied to h_A and the
    explicit map-apply-map-back route; pure rounding, <= 1e-10 at desk scale."""
    h = np.asarray(h_A, dtype=np.float64)
    lhs = transported_operator(maps, W_B) @ h
    rhs = maps.phi_out @ (np.asarray(W_B, dtype=np.float64) @ (maps.phi_in @ h))
    if lhs.size == 0:
        return 0.0
    return float(np.max(np.abs(lhs - rhs)))


def select_topk(scores, k: int) -> np.ndarray:
    """Indices of the k largest activation-strength scores, lowest index first
    on ties; k >= len(scores) selects every neuron. Returned sorted ascending."""
    if k < 0:
        raise ValidationError(f"k must be nonnegative, got {k}")
    vec = scores.scores if isinstance(scores, ActivationScore) else np.asarray(scores)
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1:
        raise ValidationError("scores must be a vector")
    if k >= vec.size:
        return np.arange(vec.size)
    order = np.argsort(-vec, kind="stable")[:k]
    return np.sort(order)


@dataclass
class ResidualLayer:
    """Residual decomposition of one fused projection.

    fused = base + alpha * (mask . delta), with delta the aggregated
    transported operator minus the base, and the mask selecting whole output
    rows. The scaled masked update is the defining quantity of "fused minus
    base": it is exactly linear in alpha.
    """

    base: np.ndarray
    delta: np.ndarray
    mask: np.ndarray  # sorted output-row indices
    alpha: float
    base_bias: np.ndarray | None = None
    delta_bias: np.ndarray | None = None

    def update_term(self) -> np.ndarray:
        """alpha * (mask . delta) as a full matrix, zeros outside the mask."""
        update = np.zeros_like(self.base)
        if self.alpha != 0.0 and self.mask.size:
            update[self.mask] = self.alpha * self.delta[self.mask]
        return update

    def fused_weight(self) -> np.ndarray:
        return _apply_masked_update(self.base, self.delta, self.mask, self.alpha)

    def fused_bias(self) -> np.ndarray | None:
        if self.base_bias is None:
            return None
        return _apply_masked_update(self.base_bias, self.delta_bias, self.mask, self.alpha)


@dataclass
class ResidualBundle:
    """Residual layers for a whole model, keyed by (layer, module)."""

    model_id: str
    manifest: ModelManifest
    entries: dict = field(default_factory=dict)


def _check_mask(mask, d_out: int) -> np.ndarray:
    rows = np.asarray(sorted(set(int(i) for i in np.asarray(mask).reshape(-1))), dtype=np.intp)
    if rows.size and (rows[0] < 0 or rows[-1] >= d_out):
        raise ValidationError(f"mask indices out of range [0, {d_out})")
    return rows


def _apply_masked_update(base, delta, rows, alpha):
    # alpha == 0 and the empty mask short-circuit so the result is the base
    # bit-for-bit (x + 0.0 would flip the sign of -0.0 entries)
    out = base.copy()
    if alpha != 0.0 and rows.size:
        out[rows] = base[rows] + alpha * delta[rows]
    return out


def fuse_layer(
    W_A: np.ndarray,
    transported,
    mask,
    alpha: float,
    bias: np.ndarray | None = None,
    transported_biases=None,
):
    """Masked residual fusion of transported source operators into one target
    weight.

    `transported` is a list of (layer-correspondence weight, transported
    operator) pairs, all shaped like W_A. Only output rows in `mask` change;
    a selected row is blended toward the correspondence-weighted mixture of
    transported rows. Bias follows the same rule when given: transported
    biases are the phi_out-mapped source biases.

    Returns (fused weight, ResidualLayer); fused bias, when present, lives on
    the ResidualLayer.
    """
    W_A = np.asarray(W_A, dtype=np.float64)
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    if not transported:
        raise ValidationError("transported operator list is empty")
    mixture = np.zeros_like(W_A)
    for weight, op in transported:
        op = np.asarray(op, dtype=np.float64)
        if op.shape != W_A.shape:
            raise ValidationError(
                f"transported operator shape {op.shape} != target {W_A.shape}"
            )
        mixture += float(weight) * op
    delta = mixture - W_A
    rows = _check_mask(mask, W_A.shape[0])

    base_bias = delta_bias = None
    if bias is not None:
        base_bias = np.asarray(bias, dtype=np.float64)
        if base_bias.shape != (W_A.shape[0],):
            raise ValidationError(f"bias shape {base_bias.shape} != ({W_A.shape[0]},)")
        bias_mixture = np.zeros_like(base_bias)
        if transported_biases is not None:
            if len(transported_biases) != len(transported):
                raise ValidationError("transported_biases must align with transported")
            for (weight, _), tb in zip(transported, transported_biases):
                if tb is None:
                    continue  # absent source bias contributes zero
                tb = np.asarray(tb, dtype=np.float64)
                if tb.shape != base_bias.shape:
                    raise ValidationError(
                        f"transported bias shape {tb.shape} != {base_bias.shape}"
                    )
                bias_mixture += float(weight) * tb
        delta_bias = bias_mixture - base_bias

    entry = ResidualLayer(
        base=W_A.copy(),
        delta=delta,
        mask=rows,
        alpha=float(alpha),
        base_bias=None if base_bias is None else base_bias.copy(),
        delta_bias=delta_bias,
    )
    return entry.fused_weight(), entry


def fold(residual: ResidualBundle) -> WeightBundle:
    """Absorb every masked, alpha-scaled residual into its base weights; the
    result is architecturally identical to the target model."""
    bundle = WeightBundle(model_id=residual.model_id, manifest=residual.manifest)
    for key, entry in residual.entries.items():
        bundle.weights[key] = entry.fused_weight()
        fused_bias = entry.fused_bias()
        if fused_bias is not None:
            bundle.biases[key] = fused_bias
    bundle.validate()
    return bundle


# ---------------------------------------------------------------------------
# residual container records


def residual_to_records(residual: ResidualBundle):
    records = []
    for (layer, module), entry in sorted(residual.entries.items()):
        prefix = f"residual.{layer}.{module}"
        records.append(make_record(f"{prefix}.base", entry.base))
        records.append(make_record(f"{prefix}.delta", entry.delta))
        records.append(make_record(f"{prefix}.mask_idx", entry.mask.astype(np.float64)))
        records.append(make_record(f"{prefix}.alpha", np.array([entry.alpha])))
        if entry.base_bias is not None:
            records.append(make_record(f"{prefix}.base_bias", entry.base_bias))
            records.append(make_record(f"{prefix}.delta_bias", entry.delta_bias))
    return records


def records_to_residual(records, manifest: ModelManifest) -> ResidualBundle:
    by_name = {rec.name: rec for rec in records}
    keys = set()
    for name in by_name:
        parts = name.split(".")
        if len(parts) == 4 and parts[0] == "residual" and parts[1].isdigit():
            keys.add((int(parts[1]), parts[2]))
    bundle = ResidualBundle(model_id=manifest.model_id, manifest=manifest)
    for layer, module in sorted(keys):
        prefix = f"residual.{layer}.{module}"
        try:
            base = by_name[f"{prefix}.base"].as_array()
            delta = by_name[f"{prefix}.delta"].as_array()
            mask = by_name[f"{prefix}.mask_idx"].as_array().astype(np.intp)
            alpha = float(by_name[f"{prefix}.alpha"].as_array()[0])
        except KeyError as exc:
            raise ValidationError(f"residual entry {layer}.{module} is incomplete: {exc}")
        base_bias = delta_bias = None
        if f"{prefix}.base_bias" in by_name:
            base_bias = by_name[f"{prefix}.base_bias"].as_array()
            delta_bias = by_name[f"{prefix}.delta_bias"].as_array()
        bundle.entries[(layer, module)] = ResidualLayer(
            base=base,
            delta=delta,
            mask=_check_mask(mask, base.shape[0]),
            alpha=alpha,
            base_bias=base_bias,
            delta_bias=delta_bias,
        )
    return bundle
