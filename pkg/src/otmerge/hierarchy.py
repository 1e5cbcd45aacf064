"""Two-level transport: per-module feature plans, then layer correspondence.

For every (target layer, source layer, module, side) we solve a feature-level
OT problem over correlation costs with uniform marginals. Feature objectives
aggregate into an L x M layer cost per side ("in" from pre-projection
activations, "out" from post-projection); layer-level OT on each side yields
P_pre and P_post, combined entrywise as P_eff = sqrt(P_pre * P_post).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import MissingInputError, OtmergeError, ValidationError
from .sinkhorn import SolverConfig, TransportPlan, solve_auto, solve_streaming
from .stats import pearson_cost, pearson_cost_oracle

logger = logging.getLogger(__name__)

# plan side -> activation capture side
SIDE_TO_CAPTURE = {"in": "pre", "out": "post"}

# layer-level regularization is scaled up when costs would overflow the kernel
ETA_ESCALATION_THRESHOLD = 1000.0


class PlanKey(NamedTuple):
    target_layer: int
    source_layer: int
    module: str
    side: str  # "in" | "out"


@dataclass
class FeaturePlanSet:
    """Feature-level transport plans and their cost matrices, keyed by PlanKey."""

    plans: dict = field(default_factory=dict)
    costs: dict = field(default_factory=dict)


@dataclass
class LayerPlan:
    """Side-specific layer transport and the effective correspondence."""

    cost_pre: np.ndarray
    cost_post: np.ndarray
    p_pre: TransportPlan
    p_post: TransportPlan
    p_eff_raw: np.ndarray  # sqrt(P_pre * P_post) before normalization
    p_eff: np.ndarray
    row_norm_applied: bool


def _index_activations(acts) -> dict:
    if isinstance(acts, dict):
        return acts
    return {(a.layer, a.module, a.side): a for a in acts}


def _layer_modules(indexed: dict) -> dict:
    """layer -> set of modules that have both pre and post activations."""
    by_layer: dict = {}
    for layer, module, side in indexed:
        by_layer.setdefault(layer, {}).setdefault(module, set()).add(side)
    return {
        layer: {m for m, sides in mods.items() if {"pre", "post"} <= sides}
        for layer, mods in by_layer.items()
    }


def _layer_range(indexed: dict, who: str) -> int:
    layers = {layer for layer, _, _ in indexed}
    if not layers:
        raise MissingInputError(f"{who} activations are empty")
    count = max(layers) + 1
    if layers != set(range(count)):
        raise ValidationError(f"{who} activations have gaps in layer indices: {sorted(layers)}")
    return count


def uniform_marginal(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def feature_plans(target_acts, source_acts, pairing, cfg: SolverConfig) -> FeaturePlanSet:
    """Solve one feature-level OT problem per (target layer, source layer,
    module, side), with uniform marginals 1/n and 1/n'.

    `pairing` names the module roles to align (same role on both sides);
    None pairs every role present in both models for a given layer pair.
    """
    tgt = _index_activations(target_acts)
    src = _index_activations(source_acts)
    L = _layer_range(tgt, "target")
    M = _layer_range(src, "source")
    tgt_modules = _layer_modules(tgt)
    src_modules = _layer_modules(src)

    result = FeaturePlanSet()
    for ell in range(L):
        for m in range(M):
            if pairing is None:
                modules = sorted(tgt_modules.get(ell, set()) & src_modules.get(m, set()))
                if not modules:
                    raise MissingInputError(
                        f"no shared module roles between target layer {ell} "
                        f"and source layer {m}"
                    )
            else:
                modules = list(pairing)
            for module in modules:
                for side, capture in SIDE_TO_CAPTURE.items():
                    key = PlanKey(ell, m, module, side)
                    try:
                        x = tgt[(ell, module, capture)]
                        y = src[(m, module, capture)]
                    except KeyError:
                        raise MissingInputError(
                            f"missing activations for plan key {tuple(key)}"
                        ) from None
                    cost = pearson_cost(x, y)
                    a = uniform_marginal(cost.shape[0])
                    b = uniform_marginal(cost.shape[1])
                    if cfg.mode == "streaming":
                        plan = solve_streaming(
                            pearson_cost_oracle(x, y), cost.shape, a, b, cfg
                        )
                    else:
                        plan = solve_auto(cost, a, b, cfg)
                    if not plan.converged:
                        logger.warning(
                            "feature plan %s stopped at max_iters with violation %.3e",
                            tuple(key),
                            plan.final_violation,
                        )
                    result.plans[key] = plan
                    result.costs[key] = cost
    return result


def layer_costs(plans: dict, costs: dict, side: str) -> np.ndarray:
    """L x M matrix of feature transport objectives <C, Q>, averaged over the
    modules available for each layer pair on the given side."""
    if side not in SIDE_TO_CAPTURE:
        raise ValidationError(f"side must be 'in' or 'out', got {side!r}")
    sums: dict = {}
    counts: dict = {}
    for key, plan in plans.items():
        if key.side != side:
            continue
        cost = costs.get(key)
        if cost is None:
            raise MissingInputError(f"no cost matrix for plan key {tuple(key)}")
        if cost.shape != plan.plan.shape:
            raise ValidationError(
                f"plan key {tuple(key)}: cost shape {cost.shape} "
                f"!= plan shape {plan.plan.shape}"
            )
        pair = (key.target_layer, key.source_layer)
        sums[pair] = sums.get(pair, 0.0) + float(np.sum(cost * plan.plan))
        counts[pair] = counts.get(pair, 0) + 1
    if not sums:
        raise MissingInputError(f"no plans for side {side!r}")
    L = max(p[0] for p in sums) + 1
    M = max(p[1] for p in sums) + 1
    out = np.empty((L, M))
    for ell in range(L):
        for m in range(M):
            if (ell, m) not in sums:
                raise MissingInputError(f"no plans for layer pair ({ell}, {m}) on side {side!r}")
            out[ell, m] = sums[(ell, m)] / counts[(ell, m)]
    return out


def _effective_eta(cost: np.ndarray, eta: float) -> float:
    """Scale eta up linearly once costs exceed the escalation threshold, keeping
    -C/eta bounded."""
    max_cost = float(np.max(cost)) if cost.size else 0.0
    if max_cost > ETA_ESCALATION_THRESHOLD:
        return eta * (max_cost / ETA_ESCALATION_THRESHOLD)
    return eta


def layer_plan(
    cost_pre: np.ndarray,
    cost_post: np.ndarray,
    cfg: SolverConfig,
    row_normalize: bool = True,
) -> LayerPlan:
    """Solve the pre- and post-side layer OT independently and combine them.

    P_eff is the entrywise geometric mean of the two plans. Raw rows sum to
    about 1/L, which would shrink the transported operator mixture by a
    factor of L; row normalization (default on) restores convex-combination
    weights per target layer.
    """
    cost_pre = np.asarray(cost_pre, dtype=np.float64)
    cost_post = np.asarray(cost_post, dtype=np.float64)
    if cost_pre.shape != cost_post.shape:
        raise ValidationError(
            f"layer cost shapes differ: {cost_pre.shape} vs {cost_post.shape}"
        )
    if not (np.isfinite(cost_pre).all() and np.isfinite(cost_post).all()):
        raise ValidationError("layer cost matrices must be finite")
    L, M = cost_pre.shape
    a = uniform_marginal(L)
    b = uniform_marginal(M)
    solved = {}
    for label, cost in (("pre", cost_pre), ("post", cost_post)):
        side_cfg = SolverConfig(
            epsilon=_effective_eta(cost, cfg.epsilon),
            max_iters=cfg.max_iters,
            tol=cfg.tol,
            mode=cfg.mode,
            block_size=cfg.block_size,
            stability_eps=cfg.stability_eps,
        )
        try:
            solved[label] = solve_auto(cost, a, b, side_cfg)
        except OtmergeError as exc:
            exc.args = (f"layer-level OT ({label} side): {exc.args[0]}",) + exc.args[1:]
            raise
    p_eff_raw = np.sqrt(solved["pre"].plan * solved["post"].plan)
    if row_normalize:
        row_sums = p_eff_raw.sum(axis=1, keepdims=True)
        if np.any(row_sums <= 0):
            raise ValidationError("cannot row-normalize P_eff: a row sums to zero")
        p_eff = p_eff_raw / row_sums
    else:
        p_eff = p_eff_raw.copy()
    return LayerPlan(
        cost_pre=cost_pre,
        cost_post=cost_post,
        p_pre=solved["pre"],
        p_post=solved["post"],
        p_eff_raw=p_eff_raw,
        p_eff=p_eff,
        row_norm_applied=row_normalize,
    )


def transport_mass_explained(Q, k: int) -> float:
    """Fraction of total plan mass carried by the k largest entries."""
    if k < 0:
        raise ValidationError(f"k must be nonnegative, got {k}")
    Qm = Q.plan if isinstance(Q, TransportPlan) else np.asarray(Q, dtype=np.float64)
    size = Qm.size
    if k == 0:
        return 0.0
    if k >= size:
        return 1.0
    flat = np.sort(Qm.reshape(-1))[::-1]
    total = float(flat.sum())
    if total == 0.0:
        return 0.0
    return float(flat[:k].sum()) / total


def mass_curve_report(plans, ks) -> dict:
    """Average transport-mass-explained over a set of plans at each k."""
    if isinstance(plans, FeaturePlanSet):
        plans = plans.plans
    if not plans:
        raise ValidationError("no plans to report on")
    ks = [int(k) for k in ks]
    per_plan = {}
    for key, plan in sorted(plans.items()):
        name = ".".join(str(p) for p in key) if isinstance(key, tuple) else str(key)
        per_plan[name] = [transport_mass_explained(plan, k) for k in ks]
    curves = np.array(list(per_plan.values()))
    return {
        "ks": ks,
        "average": curves.mean(axis=0).tolist(),
        "per_plan": per_plan,
    }
