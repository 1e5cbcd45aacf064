import hashlib
import json

import numpy as np
import pytest

from otmerge import tensor_store as ts
from otmerge.cli import main

SCENARIO = {
    "num_layers": 2,
    "dims": [32, 32, 32],
    "modules": ["q_proj", "mlp_in", "mlp_out"],
    "nonlinearity": "tanh",
    "seed": 3,
    "perm_seed": 17,
    "noise": 0.0,
    "samples": 128,
    "input_seed": 99,
    # sharp plans: the planted oracle comparison needs tightly converged
    # marginals (not the production 200-iteration budget) and an eta small
    # enough that cross-layer mixing weights vanish
    "pipeline": {
        "epsilon": 0.01,
        "eta": 0.01,
        "alpha": 1.0,
        "top_k": 1000,
        "feature_tol": 1e-10,
        "feature_iters": 600,
    },
}


def write_scenario(tmp_path, **overrides):
    scenario = {**SCENARIO, **overrides}
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(scenario))
    return path


def run(args):
    return main([str(a) for a in args])


def hash_dir(root):
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


@pytest.fixture
def toy_workspace(tmp_path):
    scenario = write_scenario(tmp_path)
    assert run(["gen-toy", "--scenario", scenario, "--out", tmp_path / "toy"]) == 0
    return tmp_path / "toy"


class TestGenToy:
    def test_artifacts_written(self, toy_workspace):
        names = {p.name for p in toy_workspace.iterdir()}
        assert {
            "source_weights.otmb",
            "source_acts.otmb",
            "target_weights.otmb",
            "target_acts.otmb",
            "truth.json",
            "config.json",
            "adapt_data.json",
        } <= names

    def test_containers_pass_validation(self, toy_workspace):
        records, manifest = ts.read_container(toy_workspace / "target_acts.otmb")
        acts = ts.records_to_activations(records, manifest)
        assert len(acts) == 2 * 3 * 2  # layers x modules x sides


class TestPlanFuse:
    def test_plan_then_fuse_recovers_permuted_source(self, toy_workspace):
        config = toy_workspace / "config.json"
        assert run(["plan", "--config", config]) == 0
        art = toy_workspace / "artifacts"
        report = json.loads((art / "plan_report.json").read_text())
        p_eff = np.array(report["p_eff"])
        assert (p_eff.argmax(axis=1) == np.arange(2)).all()

        assert run(["fuse", "--config", config]) == 0
        fused_records, fused_manifest = ts.read_container(art / "fused.otmb")
        fused = ts.records_to_bundle(fused_records, fused_manifest)
        target_records, tm = ts.read_container(toy_workspace / "target_weights.otmb")
        target = ts.records_to_bundle(target_records, tm)
        # planted case at alpha=1, full mask: fused == permutation-conjugated
        # source == target weights
        for key in target.weights:
            np.testing.assert_allclose(
                fused.weights[key], target.weights[key], atol=1e-6
            )

    def test_alpha_zero_fused_weights_byte_identical_to_target(self, toy_workspace):
        config = toy_workspace / "config.json"
        assert run(["plan", "--config", config]) == 0
        assert run(["fuse", "--config", config, "--alpha", 0.0]) == 0
        art = toy_workspace / "artifacts"
        fused_records, fm = ts.read_container(art / "fused.otmb")
        target_records, _ = ts.read_container(toy_workspace / "target_weights.otmb")
        fused = {r.name: r for r in fused_records}
        for rec in target_records:
            assert fused[rec.name].data.tobytes() == rec.data.tobytes()

    def test_missing_container_exits_2(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "target_weights": "nope.otmb",
                    "target_acts": "nope.otmb",
                    "source_weights": "nope.otmb",
                    "source_acts": "nope.otmb",
                }
            )
        )
        assert run(["plan", "--config", config]) == 2

    def test_corrupted_plan_container_exits_2(self, toy_workspace):
        config = toy_workspace / "config.json"
        assert run(["plan", "--config", config]) == 0
        plans = toy_workspace / "artifacts" / "plans.otmb"
        plans.write_bytes(plans.read_bytes()[:-20])
        assert run(["fuse", "--config", config]) == 2

    def test_stale_plan_artifacts_exit_2(self, toy_workspace, tmp_path):
        config = toy_workspace / "config.json"
        assert run(["plan", "--config", config]) == 0
        # regenerate the toy with a different seed; plans are now stale
        scenario = write_scenario(tmp_path, seed=4, samples=32)
        assert run(["gen-toy", "--scenario", scenario, "--out", toy_workspace]) == 0
        assert run(["fuse", "--config", config]) == 2

    def test_determinism_byte_identical_artifacts(self, tmp_path):
        # identical config + seed, run twice at the same location
        import shutil

        scenario = write_scenario(tmp_path)
        root = tmp_path / "toy"
        hashes = []
        for _ in range(2):
            if root.exists():
                shutil.rmtree(root)
            assert run(["gen-toy", "--scenario", scenario, "--out", root]) == 0
            config = root / "config.json"
            assert run(["plan", "--config", config]) == 0
            assert run(["fuse", "--config", config]) == 0
            assert run(
                ["analyze", "--plans", root / "artifacts", "--ks", "1,8,64"]
            ) == 0
            hashes.append(hash_dir(root))
        assert hashes[0] == hashes[1]


class TestAnalyze:
    def test_curve_monotone_and_reported(self, toy_workspace):
        config = toy_workspace / "config.json"
        assert run(["plan", "--config", config]) == 0
        art = toy_workspace / "artifacts"
        assert run(["analyze", "--plans", art, "--ks", "0,1,10,100,10000"]) == 0
        report = json.loads((art / "mass_curve.json").read_text())
        avg = report["average"]
        assert avg == sorted(avg)
        assert avg[0] == 0.0 and avg[-1] == 1.0
        assert (art / "mass_curve.csv").read_text().startswith("k,average_mass_explained")


class TestVerify:
    def test_default_run_passes(self, capsys):
        assert run(["verify", "--seed", 0]) == 0
        out = capsys.readouterr().out
        assert "[PASS] representation_identity" in out
        assert "[FAIL]" not in out

    def test_fault_injection_fails_no_touch(self, capsys):
        assert run(["verify", "--seed", 0, "--fault-inject"]) == 1
        out = capsys.readouterr().out
        assert "[FAIL] no_touch" in out

    def test_passes_across_seeds(self):
        for seed in range(10):
            assert run(["verify", "--seed", seed]) == 0

    def test_report_written(self, tmp_path):
        assert run(["verify", "--seed", 1, "--out", tmp_path]) == 0
        report = json.loads((tmp_path / "verify_report.json").read_text())
        assert all(item["passed"] for item in report)


class TestAdapt:
    @pytest.fixture
    def fused_workspace(self, toy_workspace):
        config = toy_workspace / "config.json"
        assert run(["plan", "--config", config]) == 0
        assert run(["fuse", "--config", config]) == 0
        return toy_workspace

    def test_zero_steps_fold_equals_fuse_output(self, fused_workspace):
        art = fused_workspace / "artifacts"
        assert run(
            ["adapt", "--residual", art / "residual.otmb", "--steps", 0,
             "--out", art / "adapted"]
        ) == 0
        adapted_records, _ = ts.read_container(art / "adapted" / "adapted.otmb")
        fused_records, _ = ts.read_container(art / "fused.otmb")
        adapted = {r.name: r for r in adapted_records}
        for rec in fused_records:
            assert adapted[rec.name].data.tobytes() == rec.data.tobytes()

    def test_adaptation_descends_and_freezes_delta(self, fused_workspace):
        art = fused_workspace / "artifacts"
        data = json.loads((fused_workspace / "adapt_data.json").read_text())
        before_records, _ = ts.read_container(art / "residual.otmb")
        key = f"residual.{data['layer']}.{data['module']}.delta"
        delta_before = {r.name: r.data.tobytes() for r in before_records}[key]
        assert run(
            ["adapt", "--residual", art / "residual.otmb", "--data",
             fused_workspace / "adapt_data.json", "--steps", 25, "--lr", 0.05,
             "--layer", data["layer"], "--module", data["module"],
             "--out", art / "adapted"]
        ) == 0
        report = json.loads((art / "adapted" / "adapt_report.json").read_text())
        losses = report["loss_trajectory"]
        assert losses[-1] <= losses[0]
        # the folded container exists and the frozen delta never changed
        adapted_records, _ = ts.read_container(art / "adapted" / "adapted.otmb")
        assert any(r.name.endswith(".weight") for r in adapted_records)
        after_records, _ = ts.read_container(art / "residual.otmb")
        assert {r.name: r.data.tobytes() for r in after_records}[key] == delta_before

    def test_multi_entry_without_selector_exits_2(self, fused_workspace):
        art = fused_workspace / "artifacts"
        assert run(
            ["adapt", "--residual", art / "residual.otmb", "--data",
             fused_workspace / "adapt_data.json", "--steps", 1, "--out", art / "x"]
        ) == 2
