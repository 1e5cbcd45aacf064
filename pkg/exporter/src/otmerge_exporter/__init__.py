"""Checkpoint exporter: bridges pretrained models into OTMB containers."""

from .export import (
    CheckpointLoadError,
    ExportSpec,
    ModuleMappingError,
    export_activations,
    export_weights,
    load_model,
    load_tokenizer,
    locate_decoder_layers,
    resolve_module,
)

__version__ = "0.1.0"
