import hashlib
import json

import numpy as np
import pytest

from otmerge import errors
from otmerge.stats import pool_tokens
from otmerge.tensor_store import read_container, records_to_activations, records_to_bundle

from otmerge_exporter.cli import main
from otmerge_exporter.export import (
    CheckpointLoadError,
    ExportSpec,
    ModuleMappingError,
    export_activations,
    export_weights,
    load_model,
    locate_decoder_layers,
    resolve_module,
)

MODULES = ("q_proj", "k_proj", "v_proj", "mlp_in", "mlp_out")


def spec_for(checkpoint, samples=None, **kw):
    return ExportSpec(checkpoint=str(checkpoint), samples_file=None if samples is None else str(samples), **kw)


class TestWeights:
    def test_shapes_match_architecture_card(self, tiny_checkpoint, tmp_path):
        out = tmp_path / "weights.otmb"
        manifest, report = export_weights(spec_for(tiny_checkpoint, modules=MODULES), out, 4)
        records, loaded = read_container(out)
        bundle = records_to_bundle(records, loaded)
        assert loaded.num_layers == 2
        assert bundle.weights[(0, "q_proj")].shape == (16, 16)
        assert bundle.weights[(1, "mlp_in")].shape == (24, 16)
        assert bundle.weights[(1, "mlp_out")].shape == (16, 24)
        assert report["layer_map"] == {0: 0, 1: 1}

    def test_reexport_is_byte_identical(self, tiny_checkpoint, tmp_path):
        paths = [tmp_path / "a.otmb", tmp_path / "b.otmb"]
        for path in paths:
            export_weights(spec_for(tiny_checkpoint), path, 4)
        digests = [hashlib.sha256(p.read_bytes()).hexdigest() for p in paths]
        assert digests[0] == digests[1]

    def test_nonexistent_checkpoint_is_load_error(self, tmp_path):
        with pytest.raises(CheckpointLoadError):
            export_weights(spec_for(tmp_path / "no-such-model"), tmp_path / "w.otmb", 4)

    def test_unknown_module_role_rejected(self, tiny_checkpoint, tmp_path):
        with pytest.raises(errors.ValidationError, match="unknown module roles"):
            export_weights(
                spec_for(tiny_checkpoint, modules=("z_proj",)), tmp_path / "w.otmb", 4
            )

    def test_unmappable_role_lists_available_modules(self, tiny_checkpoint):
        model = load_model(spec_for(tiny_checkpoint))
        layer = locate_decoder_layers(model)[0]
        # degrade the layer so the role cannot resolve
        del layer.self_attn.q_proj
        with pytest.raises(ModuleMappingError, match="available submodules"):
            resolve_module(layer, "q_proj")

    def test_layer_subset_is_reindexed(self, tiny_checkpoint, tmp_path):
        out = tmp_path / "weights.otmb"
        manifest, report = export_weights(spec_for(tiny_checkpoint, layers=[1]), out, 4)
        assert manifest.num_layers == 1
        assert report["layer_map"] == {0: 1}
        records, loaded = read_container(out)
        assert records_to_bundle(records, loaded).weights[(0, "q_proj")].shape == (16, 16)


class TestActivations:
    def test_container_passes_primary_validation(self, tiny_checkpoint, samples_file, tmp_path):
        out = tmp_path / "acts.otmb"
        manifest, report = export_activations(spec_for(tiny_checkpoint, samples_file), out)
        records, loaded = read_container(out)
        acts = records_to_activations(records, loaded)
        assert report["samples_used"] == 4
        assert loaded.sample_count == 4
        assert len(acts) == 2 * len(MODULES) * 2
        assert acts[(0, "q_proj", "pre")].matrix.shape == (4, 16)
        assert acts[(1, "mlp_out", "post")].matrix.shape == (4, 16)

    def test_same_samples_twice_identical(self, tiny_checkpoint, samples_file, tmp_path):
        digests = []
        for name in ("a.otmb", "b.otmb"):
            export_activations(spec_for(tiny_checkpoint, samples_file), tmp_path / name)
            digests.append(hashlib.sha256((tmp_path / name).read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_long_sample_truncated_and_counted(self, tiny_checkpoint, samples_file, tmp_path):
        _, report = export_activations(
            spec_for(tiny_checkpoint, samples_file, max_length=8), tmp_path / "acts.otmb"
        )
        assert report["samples_truncated"] == 1

    def test_too_few_samples_rejected(self, tiny_checkpoint, tmp_path):
        lonely = tmp_path / "one.txt"
        lonely.write_text("the cat\n")
        with pytest.raises(errors.ValidationError, match="at least 2"):
            export_activations(spec_for(tiny_checkpoint, lonely), tmp_path / "acts.otmb")

    def test_pooling_matches_primary_pool_tokens(self, tiny_checkpoint, samples_file, tmp_path):
        # cross-component oracle: exporter's pooled rows == pipeline pooling of
        # the raw per-token dump, up to the float32 cast of the stored row
        out = tmp_path / "acts.otmb"
        probe = (0, "mlp_in", "post")
        _, _, raw = export_activations(
            spec_for(tiny_checkpoint, samples_file), out, probe=probe
        )
        records, loaded = read_container(out)
        acts = records_to_activations(records, loaded)
        stored = acts[probe].matrix
        expected = pool_tokens(raw)
        assert np.max(np.abs(stored - expected) / np.maximum(np.abs(expected), 1e-12)) <= 1e-6

    def test_max_samples_cap(self, tiny_checkpoint, samples_file, tmp_path):
        manifest, report = export_activations(
            spec_for(tiny_checkpoint, samples_file, max_samples=2), tmp_path / "acts.otmb"
        )
        assert report["samples_used"] == 2
        assert manifest.sample_count == 2


class TestCli:
    def test_end_to_end_export(self, tiny_checkpoint, samples_file, tmp_path):
        out = tmp_path / "export"
        code = main(
            [
                "--model", str(tiny_checkpoint),
                "--samples", str(samples_file),
                "--layers", "all",
                "--modules", "q_proj,mlp_in,mlp_out",
                "--out", str(out),
            ]
        )
        assert code == 0
        report = json.loads((out / "export_report.json").read_text())
        assert report["sample_count"] == 4
        for name in ("weights.otmb", "acts.otmb"):
            records, manifest = read_container(out / name)
            assert manifest.num_layers == 2
        records, manifest = read_container(out / "weights.otmb")
        assert all(rec.dtype == "float32" for rec in records)

    def test_missing_model_exits_2(self, samples_file, tmp_path):
        code = main(
            ["--model", str(tmp_path / "missing"), "--samples", str(samples_file),
             "--out", str(tmp_path / "o")]
        )
        assert code == 2
