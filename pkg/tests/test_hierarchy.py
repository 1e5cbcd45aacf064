import numpy as np
import pytest

from otmerge import errors
from otmerge.hierarchy import (
    PlanKey,
    feature_plans,
    layer_costs,
    layer_plan,
    mass_curve_report,
    transport_mass_explained,
    uniform_marginal,
)
from otmerge.sinkhorn import SolverConfig, feature_defaults, layer_defaults
from otmerge.toylab import ToyModelSpec, generate_toy, run_activations


def toy_acts(seed=0, layers=2, dim=10, samples=40, modules=("q_proj", "mlp_in", "mlp_out")):
    spec = ToyModelSpec(num_layers=layers, dims=(dim,) * (layers + 1), modules=modules, seed=seed)
    bundle = generate_toy(spec, sample_count=samples)
    rng = np.random.default_rng(seed + 1000)
    return run_activations(bundle, rng.standard_normal((samples, dim)))


class TestFeaturePlans:
    def test_self_alignment_recovers_identity(self):
        acts = toy_acts(seed=1)
        plan_set = feature_plans(acts, acts, None, feature_defaults(0.01))
        for key, plan in plan_set.plans.items():
            if key.target_layer == key.source_layer:
                n = plan.plan.shape[0]
                assert (plan.plan.argmax(axis=1) == np.arange(n)).all(), key

    def test_minimal_instance_has_two_sides(self):
        acts = toy_acts(seed=2, layers=1, modules=("q_proj",))
        plan_set = feature_plans(acts, acts, None, feature_defaults(0.1))
        assert set(plan_set.plans) == {
            PlanKey(0, 0, "q_proj", "in"),
            PlanKey(0, 0, "q_proj", "out"),
        }

    def test_missing_activation_is_named(self):
        acts = toy_acts(seed=3, layers=1, modules=("q_proj",))
        with pytest.raises(errors.MissingInputError, match="k_proj"):
            feature_plans(acts, acts, ["k_proj"], feature_defaults(0.1))

    def test_streaming_mode_matches_log_domain(self):
        acts = toy_acts(seed=4, layers=1, dim=8)
        log_set = feature_plans(acts, acts, None, feature_defaults(0.1))
        stream_set = feature_plans(
            acts, acts, None,
            SolverConfig(epsilon=0.1, max_iters=200, tol=1e-6, mode="streaming", block_size=3),
        )
        for key in log_set.plans:
            np.testing.assert_allclose(
                log_set.plans[key].plan, stream_set.plans[key].plan, atol=1e-8
            )


class TestLayerCosts:
    def test_zero_cost_everywhere(self):
        acts = toy_acts(seed=5, layers=1, modules=("q_proj",))
        plan_set = feature_plans(acts, acts, None, feature_defaults(0.1))
        zero_costs = {k: np.zeros_like(c) for k, c in plan_set.costs.items()}
        out = layer_costs(plan_set.plans, zero_costs, "in")
        np.testing.assert_array_equal(out, np.zeros((1, 1)))

    def test_single_module_matches_double_sum(self):
        acts = toy_acts(seed=6, layers=1, modules=("q_proj",))
        plan_set = feature_plans(acts, acts, None, feature_defaults(0.1))
        key = PlanKey(0, 0, "q_proj", "in")
        brute = sum(
            plan_set.costs[key][i, j] * plan_set.plans[key].plan[i, j]
            for i in range(plan_set.costs[key].shape[0])
            for j in range(plan_set.costs[key].shape[1])
        )
        out = layer_costs(plan_set.plans, plan_set.costs, "in")
        assert out[0, 0] == pytest.approx(brute, rel=1e-12)

    def test_multiple_modules_average(self):
        acts = toy_acts(seed=7, layers=1, modules=("q_proj", "k_proj", "v_proj"))
        plan_set = feature_plans(acts, acts, None, feature_defaults(0.1))
        per_module = [
            float(np.sum(plan_set.costs[k] * plan_set.plans[k].plan))
            for k in plan_set.plans
            if k.side == "in"
        ]
        out = layer_costs(plan_set.plans, plan_set.costs, "in")
        assert out[0, 0] == pytest.approx(np.mean(per_module), rel=1e-12)

    def test_self_alignment_diagonal_smaller(self):
        acts = toy_acts(seed=8, layers=2)
        plan_set = feature_plans(acts, acts, None, feature_defaults(0.05))
        out = layer_costs(plan_set.plans, plan_set.costs, "out")
        assert out[0, 0] < out[0, 1]
        assert out[1, 1] < out[1, 0]

    def test_shape_mismatch_rejected(self):
        acts = toy_acts(seed=9, layers=1, modules=("q_proj",))
        plan_set = feature_plans(acts, acts, None, feature_defaults(0.1))
        bad = {k: c[:, :-1] for k, c in plan_set.costs.items()}
        with pytest.raises(errors.ValidationError):
            layer_costs(plan_set.plans, bad, "in")


class TestLayerPlan:
    def test_equal_sides_give_same_raw_effective_plan(self):
        rng = np.random.default_rng(10)
        cost = rng.random((3, 4))
        lp = layer_plan(cost, cost, layer_defaults(0.1))
        np.testing.assert_allclose(lp.p_eff_raw, lp.p_pre.plan, atol=1e-12)

    def test_geometric_mean_hand_value(self):
        # entries 0.04 and 0.09 combine to 0.06 before normalization
        assert np.sqrt(0.04 * 0.09) == pytest.approx(0.06, abs=1e-15)
        rng = np.random.default_rng(11)
        cost = rng.random((2, 3))
        lp = layer_plan(cost, cost * 0.5, layer_defaults(0.2))
        np.testing.assert_allclose(
            lp.p_eff_raw, np.sqrt(lp.p_pre.plan * lp.p_post.plan), atol=1e-15
        )

    def test_row_normalization_default_on(self):
        rng = np.random.default_rng(12)
        lp = layer_plan(rng.random((4, 5)), rng.random((4, 5)), layer_defaults(0.1))
        assert lp.row_norm_applied
        np.testing.assert_allclose(lp.p_eff.sum(axis=1), np.ones(4), atol=1e-12)
        raw_rows = lp.p_eff_raw.sum(axis=1)
        assert (raw_rows < 0.5).all()  # raw rows sum to about 1/L

    def test_marginal_feasibility_at_layer_tolerance(self):
        rng = np.random.default_rng(13)
        lp = layer_plan(rng.random((6, 3)), rng.random((6, 3)), layer_defaults(0.1))
        for p in (lp.p_pre, lp.p_post):
            assert p.converged
            assert p.final_violation <= 1e-9

    def test_geometric_mean_bounded_by_larger_factor(self):
        rng = np.random.default_rng(14)
        lp = layer_plan(rng.random((5, 5)), rng.random((5, 5)), layer_defaults(0.1))
        assert (lp.p_eff_raw <= np.maximum(lp.p_pre.plan, lp.p_post.plan) + 1e-15).all()

    def test_self_alignment_diagonal_argmax(self):
        acts = toy_acts(seed=15, layers=3)
        plan_set = feature_plans(acts, acts, None, feature_defaults(0.05))
        cost_pre = layer_costs(plan_set.plans, plan_set.costs, "in")
        cost_post = layer_costs(plan_set.plans, plan_set.costs, "out")
        lp = layer_plan(cost_pre, cost_post, layer_defaults(0.05))
        assert (lp.p_eff.argmax(axis=1) == np.arange(3)).all()

    def test_eta_escalates_for_huge_costs(self):
        # costs above 1000 would underflow exp(-C/eta); eta scales linearly
        cost = np.array([[0.0, 5000.0], [5000.0, 0.0]])
        lp = layer_plan(cost, cost, layer_defaults(0.1, mode="dense"))
        assert np.isfinite(lp.p_eff).all()
        assert lp.p_pre.converged

    def test_non_finite_cost_rejected(self):
        cost = np.array([[np.inf, 0.0]])
        with pytest.raises(errors.ValidationError):
            layer_plan(cost, cost, layer_defaults(0.1))


class TestMassExplained:
    def test_uniform_plan(self):
        Q = np.full((2, 2), 0.25)
        assert transport_mass_explained(Q, 2) == pytest.approx(0.5, abs=1e-15)

    def test_boundaries(self):
        Q = np.random.default_rng(16).random((3, 5))
        assert transport_mass_explained(Q, 0) == 0.0
        assert transport_mass_explained(Q, 15) == 1.0
        assert transport_mass_explained(Q, 99) == 1.0

    def test_matches_brute_force_sort(self):
        rng = np.random.default_rng(17)
        Q = rng.random((6, 7))
        flat = sorted(Q.reshape(-1), reverse=True)
        for k in (1, 5, 20, 41):
            expected = sum(flat[:k]) / sum(flat)
            assert transport_mass_explained(Q, k) == pytest.approx(expected, abs=1e-12)

    def test_negative_k_rejected(self):
        with pytest.raises(errors.ValidationError):
            transport_mass_explained(np.ones((2, 2)), -1)


class TestMassCurve:
    def test_single_uniform_plan_curve_is_linear(self):
        Q = np.full((4, 4), 1 / 16)
        ks = [0, 4, 8, 16]
        report = mass_curve_report({"only": Q}, ks)
        np.testing.assert_allclose(report["average"], [k / 16 for k in ks], atol=1e-12)

    def test_monotone_nondecreasing(self):
        rng = np.random.default_rng(18)
        plans = {f"p{i}": rng.random((5, 6)) for i in range(3)}
        ks = list(range(0, 31, 3))
        report = mass_curve_report(plans, ks)
        avg = report["average"]
        assert all(b >= a - 1e-15 for a, b in zip(avg, avg[1:]))
        assert avg[-1] == 1.0

    def test_average_of_two_plans(self):
        rng = np.random.default_rng(19)
        q1, q2 = rng.random((3, 3)), rng.random((3, 3))
        ks = [1, 4, 9]
        report = mass_curve_report({"a": q1, "b": q2}, ks)
        for i, k in enumerate(ks):
            expected = 0.5 * (transport_mass_explained(q1, k) + transport_mass_explained(q2, k))
            assert report["average"][i] == pytest.approx(expected, abs=1e-15)

    def test_empty_plans_rejected(self):
        with pytest.raises(errors.ValidationError):
            mass_curve_report({}, [1])


def test_uniform_marginal_sums_to_one():
    np.testing.assert_allclose(uniform_marginal(7).sum(), 1.0, atol=1e-15)
