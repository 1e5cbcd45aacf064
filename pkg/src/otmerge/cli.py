"""Pipeline orchestration: plan, fuse, analyze, verify, adapt, gen-toy.

All commands read a JSON config (flags override individual keys), write
machine-readable JSON reports plus binary containers, and print a short
human summary. Artifacts are byte-deterministic for a fixed config and seed.

Exit codes: 0 success, 1 verification-check failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fusion, hierarchy, sinkhorn, stats, tensor_store, toylab
from .errors import (
    ConsistencyError,
    MissingInputError,
    OtmergeError,
    UnsupportedScaleError,
    ValidationError,
)


@dataclass
class PipelineConfig:
    """End-to-end parameter set; defaults follow the solver presets."""

    target_weights: str = ""
    target_acts: str = ""
    source_weights: str = ""
    source_acts: str = ""
    out_dir: str = "out"
    alpha: float = 0.1
    top_k: int = 128
    epsilon: float = 0.1
    feature_iters: int = 200
    feature_tol: float = 1e-6
    eta: float = 0.1
    layer_iters: int = 1000
    layer_tol: float = 1e-9
    stability_eps: float = 1e-12
    mode: str = "log_domain"
    block_size: int = 256
    modules: list | None = None
    scale_maps: bool = True
    row_normalize: bool = True
    seed: int = 0

    def feature_config(self) -> sinkhorn.SolverConfig:
        return sinkhorn.SolverConfig(
            epsilon=self.epsilon,
            max_iters=self.feature_iters,
            tol=self.feature_tol,
            mode=self.mode,
            block_size=self.block_size,
            stability_eps=self.stability_eps,
        )

    def layer_config(self) -> sinkhorn.SolverConfig:
        return sinkhorn.SolverConfig(
            epsilon=self.eta,
            max_iters=self.layer_iters,
            tol=self.layer_tol,
            mode="log_domain" if self.mode == "streaming" else self.mode,
            block_size=self.block_size,
            stability_eps=self.stability_eps,
        )

    def validate_paths(self) -> None:
        for name in ("target_weights", "target_acts", "source_weights", "source_acts"):
            path = getattr(self, name)
            if not path:
                raise ValidationError(f"config key {name!r} is required")
            if not Path(path).exists():
                raise MissingInputError(f"{name}: no such file: {path}")


def load_config(path: str, overrides: dict) -> PipelineConfig:
    if not Path(path).exists():
        raise MissingInputError(f"config file not found: {path}")
    with open(path) as fh:
        raw = json.load(fh)
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    cfg = PipelineConfig(**raw)
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    # paths in the config are relative to the config file
    base = Path(path).parent
    for name in ("target_weights", "target_acts", "source_weights", "source_acts"):
        value = getattr(cfg, name)
        if value and not Path(value).is_absolute():
            setattr(cfg, name, str(base / value))
    if cfg.out_dir and not Path(cfg.out_dir).is_absolute():
        cfg.out_dir = str(base / cfg.out_dir)
    return cfg


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _key_name(key) -> str:
    return f"{key.side}.{key.target_layer}.{key.source_layer}.{key.module}"


def _load_model(weights_path, acts_path):
    records, manifest = tensor_store.read_container(weights_path)
    bundle = tensor_store.records_to_bundle(records, manifest)
    act_records, act_manifest = tensor_store.read_container(acts_path)
    if tensor_store.manifest_sha256(act_manifest) != tensor_store.manifest_sha256(manifest):
        raise ConsistencyError(
            f"weights and activations disagree on the manifest for {manifest.model_id!r}"
        )
    acts = tensor_store.records_to_activations(act_records, act_manifest)
    return bundle, acts


# ---------------------------------------------------------------------------
# plan


def cmd_plan(cfg: PipelineConfig) -> int:
    cfg.validate_paths()
    target, target_acts = _load_model(cfg.target_weights, cfg.target_acts)
    source, source_acts = _load_model(cfg.source_weights, cfg.source_acts)

    pairing = list(cfg.modules) if cfg.modules else None
    plan_set = hierarchy.feature_plans(target_acts, source_acts, pairing, cfg.feature_config())
    cost_pre = hierarchy.layer_costs(plan_set.plans, plan_set.costs, side="in")
    cost_post = hierarchy.layer_costs(plan_set.plans, plan_set.costs, side="out")
    lp = hierarchy.layer_plan(cost_pre, cost_post, cfg.layer_config(), cfg.row_normalize)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for key in sorted(plan_set.plans):
        records.append(
            tensor_store.make_record(f"plan.{_key_name(key)}", plan_set.plans[key].plan)
        )
        records.append(tensor_store.make_record(f"cost.{_key_name(key)}", plan_set.costs[key]))
    records.append(tensor_store.make_record("layer_cost.pre", lp.cost_pre))
    records.append(tensor_store.make_record("layer_cost.post", lp.cost_post))
    records.append(tensor_store.make_record("layer_plan.pre", lp.p_pre.plan))
    records.append(tensor_store.make_record("layer_plan.post", lp.p_post.plan))
    records.append(tensor_store.make_record("layer_plan.eff_raw", lp.p_eff_raw))
    records.append(tensor_store.make_record("layer_plan.eff", lp.p_eff))
    tensor_store.write_container(records, target.manifest, out / "plans.otmb")

    report = {
        "config": dataclasses.asdict(cfg),
        "target_manifest_sha256": tensor_store.manifest_sha256(target.manifest),
        "source_manifest_sha256": tensor_store.manifest_sha256(source.manifest),
        "feature_convergence": {
            _key_name(key): {
                "converged": plan.converged,
                "iterations": plan.iterations_used,
                "violation": plan.final_violation,
            }
            for key, plan in sorted(plan_set.plans.items())
        },
        "layer_convergence": {
            side: {
                "converged": p.converged,
                "iterations": p.iterations_used,
                "violation": p.final_violation,
            }
            for side, p in (("pre", lp.p_pre), ("post", lp.p_post))
        },
        "layer_cost_pre": lp.cost_pre.tolist(),
        "layer_cost_post": lp.cost_post.tolist(),
        "p_eff": lp.p_eff.tolist(),
        "p_eff_raw": lp.p_eff_raw.tolist(),
        "row_norm_applied": lp.row_norm_applied,
    }
    _write_json(report, out / "plan_report.json")
    n_conv = sum(1 for v in report["feature_convergence"].values() if v["converged"])
    print(
        f"plan: {len(plan_set.plans)} feature plans ({n_conv} converged), "
        f"layer grid {lp.p_eff.shape[0]}x{lp.p_eff.shape[1]} -> {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# fuse


def _load_plan_artifacts(plans_dir: Path):
    plans_path = plans_dir / "plans.otmb"
    report_path = plans_dir / "plan_report.json"
    for p in (plans_path, report_path):
        if not p.exists():
            raise MissingInputError(f"plan artifact missing: {p}")
    records, manifest = tensor_store.read_container(plans_path)
    with open(report_path) as fh:
        report = json.load(fh)
    by_name = {rec.name: rec for rec in records}
    return by_name, manifest, report


def cmd_fuse(cfg: PipelineConfig, plans_dir: str | None = None) -> int:
    cfg.validate_paths()
    target, target_acts = _load_model(cfg.target_weights, cfg.target_acts)
    source_records, source_manifest = tensor_store.read_container(cfg.source_weights)
    source = tensor_store.records_to_bundle(source_records, source_manifest)

    out = Path(plans_dir) if plans_dir else Path(cfg.out_dir)
    by_name, _, report = _load_plan_artifacts(out)
    if report.get("target_manifest_sha256") != tensor_store.manifest_sha256(target.manifest):
        raise ConsistencyError("plan artifacts were built for a different target model")
    if report.get("source_manifest_sha256") != tensor_store.manifest_sha256(source.manifest):
        raise ConsistencyError("plan artifacts were built for a different source model")

    p_eff = by_name["layer_plan.eff"].as_array()
    M = p_eff.shape[1]

    residual = fusion.ResidualBundle(model_id=target.model_id, manifest=target.manifest)
    fused = tensor_store.WeightBundle(model_id=target.model_id, manifest=target.manifest)
    mask_sizes = {}
    residual_norms = {}
    for (ell, module), w_a in sorted(target.weights.items()):
        post = target_acts.get((ell, module, "post"))
        if post is None:
            raise MissingInputError(f"target activations missing for {ell}.{module}.post")
        scores = stats.activation_strength(post)
        mask = fusion.select_topk(scores, cfg.top_k)
        transported = []
        transported_biases = []
        for m in range(M):
            if (m, module) not in source.weights:
                continue  # source has no module of this role at layer m
            q_in = by_name.get(f"plan.in.{ell}.{m}.{module}")
            q_out = by_name.get(f"plan.out.{ell}.{m}.{module}")
            if q_in is None or q_out is None:
                raise MissingInputError(f"plan tensors missing for {ell}.{m}.{module}")
            maps = fusion.coordinate_maps(
                q_in.as_array(), q_out.as_array(), scale=cfg.scale_maps
            )
            transported.append(
                (p_eff[ell, m], fusion.transported_operator(maps, source.weights[(m, module)]))
            )
            src_bias = source.biases.get((m, module))
            transported_biases.append(None if src_bias is None else maps.phi_out @ src_bias)
        bias = target.biases.get((ell, module))
        fused_w, entry = fusion.fuse_layer(
            w_a,
            transported,
            mask,
            cfg.alpha,
            bias=bias,
            transported_biases=transported_biases if bias is not None else None,
        )
        fused.weights[(ell, module)] = fused_w
        fused_bias = entry.fused_bias()
        if fused_bias is not None:
            fused.biases[(ell, module)] = fused_bias
        residual.entries[(ell, module)] = entry
        mask_sizes[f"{ell}.{module}"] = int(mask.size)
        residual_norms[f"{ell}.{module}"] = float(np.linalg.norm(entry.update_term()))

    tensor_store.write_container(
        tensor_store.bundle_to_records(fused), target.manifest, out / "fused.otmb"
    )
    tensor_store.write_container(
        fusion.residual_to_records(residual), target.manifest, out / "residual.otmb"
    )
    _write_json(
        {
            "alpha": cfg.alpha,
            "top_k": cfg.top_k,
            "mask_sizes": mask_sizes,
            "residual_update_norms": residual_norms,
        },
        out / "fusion_report.json",
    )
    print(f"fuse: {len(residual.entries)} modules fused at alpha={cfg.alpha} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(plans_dir: str, ks, out_dir: str | None = None) -> int:
    out = Path(out_dir) if out_dir else Path(plans_dir)
    by_name, _, _ = _load_plan_artifacts(Path(plans_dir))
    plans = {
        name.split("plan.", 1)[1]: rec.as_array()
        for name, rec in by_name.items()
        if name.startswith("plan.")
    }
    if not plans:
        raise MissingInputError("no feature plans found in the plan container")
    report = hierarchy.mass_curve_report(plans, ks)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(report, out / "mass_curve.json")
    lines = ["k,average_mass_explained"]
    for k, avg in zip(report["ks"], report["average"]):
        lines.append(f"{k},{avg!r}")
    (out / "mass_curve.csv").write_text("\n".join(lines) + "\n")
    print(f"analyze: {len(plans)} plans, ks={report['ks']} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# verify


def _verify_checks(seed: int, fault_inject: bool):
    rng = np.random.default_rng(seed)
    checks = []

    # transported operator == map to source coordinates, apply, map back;
    # maps drawn at transport-plan magnitude (entries ~ 1/n)
    worst = 0.0
    for _ in range(100):
        d_a_in, d_b_in, d_b_out, d_a_out = rng.integers(2, 65, size=4)
        maps = fusion.CoordinateMaps(
            phi_in=rng.random((d_b_in, d_a_in)) / d_a_in,
            phi_out=rng.random((d_a_out, d_b_out)) / d_b_out,
            scaling_applied=False,
        )
        w_b = rng.uniform(-10, 10, (d_b_out, d_b_in))
        h = rng.uniform(-10, 10, d_a_in)
        worst = max(worst, fusion.verify_representation_identity(maps, w_b, h))
    checks.append(("representation_identity", worst <= 1e-10, worst, 1e-10))

    # marginal feasibility on random instances at both tolerance regimes
    worst = 0.0
    all_conv = True
    for tol, iters in ((1e-6, 2000), (1e-9, 2000)):
        for _ in range(10):
            n, m = rng.integers(4, 33, size=2)
            C = rng.random((n, m)) * 2
            plan = sinkhorn.solve_log_domain(
                C,
                hierarchy.uniform_marginal(n),
                hierarchy.uniform_marginal(m),
                sinkhorn.SolverConfig(epsilon=0.1, max_iters=iters, tol=tol),
            )
            all_conv = all_conv and plan.converged
            viol = sinkhorn.marginal_violation(
                plan.plan, plan.row_marginal, plan.col_marginal
            )
            worst = max(worst, viol if plan.converged else np.inf)
    checks.append(("marginal_feasibility", all_conv and worst <= 1e-6, worst, 1e-6))

    # fusion contracts on a random instance
    d_out, d_in = 12, 7
    w_a = rng.standard_normal((d_out, d_in))
    ops = [(0.6, rng.standard_normal((d_out, d_in))), (0.4, rng.standard_normal((d_out, d_in)))]
    mask = fusion.select_topk(rng.random(d_out), 5)

    _, e1 = fusion.fuse_layer(w_a, ops, mask, 1.0)
    exact = True
    for alpha in (0.25, 0.5, 1.0):
        _, ea = fusion.fuse_layer(w_a, ops, mask, alpha)
        exact = exact and np.array_equal(ea.update_term(), alpha * e1.update_term())
    checks.append(("alpha_linearity", exact, 0.0 if exact else 1.0, 0.0))

    fused_w, entry = fusion.fuse_layer(w_a, ops, mask, 0.3)
    if fault_inject:
        outside = np.setdiff1d(np.arange(d_out), entry.mask)
        fused_w = fused_w.copy()
        fused_w[outside[0]] = w_a[outside[0]] + 0.3 * entry.delta[outside[0]]
    outside = np.setdiff1d(np.arange(d_out), entry.mask)
    untouched = all(
        fused_w[r].tobytes() == w_a[r].tobytes() for r in outside
    )
    checks.append(("no_touch", untouched, 0.0 if untouched else 1.0, 0.0))

    # residual freezing across adaptation steps
    bundle = fusion.ResidualBundle(model_id="verify", manifest=None)
    bundle.entries[(0, "q_proj")] = entry
    before = entry.delta.tobytes()
    X = rng.standard_normal((16, d_in))
    Y = rng.standard_normal((16, d_out))
    b = bundle
    for _ in range(5):
        b, _ = toylab.residual_frozen_step(b, (X, Y), lr=1e-3)
    frozen = b.entries[(0, "q_proj")].delta.tobytes() == before
    checks.append(("residual_freezing", frozen, 0.0 if frozen else 1.0, 0.0))
    return checks


def cmd_verify(seed: int, fault_inject: bool, out_dir: str | None) -> int:
    checks = _verify_checks(seed, fault_inject)
    report = [
        {"check": name, "passed": bool(ok), "measured": float(val), "threshold": float(thr)}
        for name, ok, val, thr in checks
    ]
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(report, out / "verify_report.json")
    failed = 0
    for item in report:
        status = "PASS" if item["passed"] else "FAIL"
        print(
            f"[{status}] {item['check']}: measured={item['measured']:.3e} "
            f"threshold={item['threshold']:.3e}"
        )
        failed += 0 if item["passed"] else 1
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# adapt


def cmd_adapt(
    residual_path: str,
    data_path: str,
    steps: int,
    lr: float,
    out_dir: str,
    layer: int | None = None,
    module: str | None = None,
) -> int:
    records, manifest = tensor_store.read_container(residual_path)
    residual = fusion.records_to_residual(records, manifest)
    if not residual.entries:
        raise ValidationError("residual container holds no entries")
    for entry in residual.entries.values():
        if max(entry.base.shape) > toylab.MAX_TOY_DIM:
            raise UnsupportedScaleError(
                "residual bundle exceeds toy scale; adaptation is a desk-scale demonstration"
            )

    losses = []
    if steps > 0:
        if layer is None and module is None and len(residual.entries) == 1:
            key = next(iter(residual.entries))
        elif layer is not None and module is not None:
            key = (layer, module)
            if key not in residual.entries:
                raise MissingInputError(f"no residual entry for layer {layer} module {module!r}")
        else:
            raise ValidationError(
                "bundle has multiple entries; pass --layer and --module to pick one"
            )
        with open(data_path) as fh:
            data = json.load(fh)
        X = np.asarray(data["inputs"], dtype=np.float64)
        Y = np.asarray(data["targets"], dtype=np.float64)
        single = fusion.ResidualBundle(model_id=residual.model_id, manifest=manifest)
        single.entries[key] = residual.entries[key]
        for _ in range(steps):
            single, loss = toylab.residual_frozen_step(single, (X, Y), lr)
            losses.append(loss)
        losses.append(toylab.affine_mse_loss(single.entries[key], X, Y))
        residual.entries[key] = single.entries[key]

    folded = fusion.fold(residual)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor_store.write_container(
        tensor_store.bundle_to_records(folded), manifest, out / "adapted.otmb"
    )
    _write_json(
        {"steps": steps, "lr": lr, "loss_trajectory": losses},
        out / "adapt_report.json",
    )
    print(f"adapt: {steps} steps, folded {len(residual.entries)} modules -> {out}")
    return 0


# ---------------------------------------------------------------------------
# gen-toy


def cmd_gen_toy(scenario_path: str, out_dir: str) -> int:
    if not Path(scenario_path).exists():
        raise MissingInputError(f"scenario file not found: {scenario_path}")
    with open(scenario_path) as fh:
        raw = json.load(fh)
    spec = toylab.ToyModelSpec(
        num_layers=int(raw["num_layers"]),
        dims=tuple(raw["dims"]),
        modules=tuple(raw.get("modules", ("q_proj", "mlp_in", "mlp_out"))),
        nonlinearity=raw.get("nonlinearity", "tanh"),
        seed=int(raw.get("seed", 0)),
    )
    scenario = toylab.PlantedScenario(
        source=spec,
        perm_seed=int(raw.get("perm_seed", 1)),
        noise=float(raw.get("noise", 0.0)),
        target_dims=tuple(raw["target_dims"]) if raw.get("target_dims") else None,
        identity=bool(raw.get("identity", False)),
        sample_count=int(raw.get("samples", 64)),
    )
    source, target, truth = toylab.planted_permutation_case(scenario)
    rng = np.random.default_rng(int(raw.get("input_seed", 1234)))
    inputs = rng.standard_normal((scenario.sample_count, spec.dims[0]))
    source_acts = toylab.run_activations(source, inputs, spec.nonlinearity)
    target_acts = toylab.run_activations(target, inputs, spec.nonlinearity)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor_store.write_container(
        tensor_store.bundle_to_records(source), source.manifest, out / "source_weights.otmb"
    )
    tensor_store.write_container(
        tensor_store.activations_to_records(source_acts.values()),
        source.manifest,
        out / "source_acts.otmb",
    )
    tensor_store.write_container(
        tensor_store.bundle_to_records(target), target.manifest, out / "target_weights.otmb"
    )
    tensor_store.write_container(
        tensor_store.activations_to_records(target_acts.values()),
        target.manifest,
        out / "target_acts.otmb",
    )
    _write_json(
        {f"{l}.{m}.{s}": sel.tolist() for (l, m, s), sel in sorted(truth.items())},
        out / "truth.json",
    )

    pipeline = PipelineConfig(
        target_weights="target_weights.otmb",
        target_acts="target_acts.otmb",
        source_weights="source_weights.otmb",
        source_acts="source_acts.otmb",
        out_dir="artifacts",
    )
    for key, value in raw.get("pipeline", {}).items():
        if not hasattr(pipeline, key):
            raise ValidationError(f"unknown pipeline override {key!r}")
        setattr(pipeline, key, value)
    _write_json(dataclasses.asdict(pipeline), out / "config.json")

    # a least-squares dataset for the adaptation demo: the first module's own
    # input/output pairs from the target model
    first = sorted(target.weights)[0]
    pre = target_acts[(first[0], first[1], "pre")].matrix
    post = target_acts[(first[0], first[1], "post")].matrix
    _write_json(
        {"layer": first[0], "module": first[1], "inputs": pre.tolist(), "targets": post.tolist()},
        out / "adapt_data.json",
    )
    print(f"gen-toy: wrote scenario with L={spec.num_layers} dims={list(spec.dims)} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otmerge",
        description="Transport-guided cross-architecture weight fusion pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--k", type=int, default=None, help="top-k mask size")
        p.add_argument("--epsilon", type=float, default=None, help="feature-level regularization")
        p.add_argument("--eta", type=float, default=None, help="layer-level regularization")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory override")

    p = sub.add_parser("plan", help="estimate feature- and layer-level transport plans")
    add_config_flags(p)

    p = sub.add_parser("fuse", help="fuse source weights into the target via stored plans")
    add_config_flags(p)
    p.add_argument("--plans", default=None, help="directory holding plan artifacts")

    p = sub.add_parser("analyze", help="transport-mass-explained curves from stored plans")
    p.add_argument("--plans", required=True)
    p.add_argument("--ks", default="1,2,4,8,16,32,64,128", help="comma-separated k values")
    p.add_argument("--out", default=None)

    p = sub.add_parser("verify", help="run the built-in invariant checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fault-inject", action="store_true", help="corrupt one mask row (negative control)")
    p.add_argument("--out", default=None)

    p = sub.add_parser("adapt", help="residual-frozen adaptation on a toy bundle, then fold")
    p.add_argument("--residual", required=True, help="residual container from fuse")
    p.add_argument("--data", default=None, help="JSON with inputs/targets")
    p.add_argument("--steps", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--layer", type=int, default=None)
    p.add_argument("--module", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-toy", help="generate a planted toy scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON")
    p.add_argument("--out", required=True)
    return parser


def _overrides(args) -> dict:
    return {
        "alpha": args.alpha,
        "top_k": args.k,
        "epsilon": args.epsilon,
        "eta": args.eta,
        "seed": args.seed,
        "out_dir": args.out,
    }


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "plan":
            return cmd_plan(load_config(args.config, _overrides(args)))
        if args.command == "fuse":
            return cmd_fuse(load_config(args.config, _overrides(args)), args.plans)
        if args.command == "analyze":
            ks = [int(k) for k in args.ks.split(",") if k.strip()]
            return cmd_analyze(args.plans, ks, args.out)
        if args.command == "verify":
            return cmd_verify(args.seed, args.fault_inject, args.out)
        if args.command == "adapt":
            if args.steps > 0 and not args.data:
                raise ValidationError("--data is required when --steps > 0")
            return cmd_adapt(
                args.residual, args.data, args.steps, args.lr, args.out, args.layer, args.module
            )
        if args.command == "gen-toy":
            return cmd_gen_toy(args.scenario, args.out)
        raise ValidationError(f"unknown command {args.command!r}")
    except (OtmergeError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
