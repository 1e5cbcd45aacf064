"""Command-line entry: export weights + activations into OTMB containers."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from otmerge.errors import OtmergeError

from .export import ExportSpec, export_activations, export_weights, load_model, load_tokenizer


def _parse_layers(text: str):
    if text == "all":
        return None
    return [int(part) for part in text.split(",") if part.strip()]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="otmerge-export",
        description="Extract projection weights and pre/post activations from a checkpoint",
    )
    parser.add_argument("--model", required=True, help="checkpoint id or local path")
    parser.add_argument("--samples", required=True, help="text file, one sample per line")
    parser.add_argument("--layers", default="all", help='"all" or comma-separated indices')
    parser.add_argument(
        "--modules",
        default="q_proj,k_proj,v_proj,mlp_in,mlp_out",
        help="comma-separated module roles",
    )
    parser.add_argument("--max-samples", type=int, default=2000)
    parser.add_argument("--max-length", type=int, default=512)
    parser.add_argument("--out", required=True, help="output directory")
    args = parser.parse_args(argv)

    spec = ExportSpec(
        checkpoint=args.model,
        samples_file=args.samples,
        layers=_parse_layers(args.layers),
        modules=tuple(m for m in args.modules.split(",") if m.strip()),
        max_samples=args.max_samples,
        max_length=args.max_length,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        spec.validate()
        model = load_model(spec)
        tokenizer = load_tokenizer(spec)
        manifest, act_report = export_activations(
            spec, out / "acts.otmb", model=model, tokenizer=tokenizer
        )
        _, weight_report = export_weights(
            spec, out / "weights.otmb", manifest.sample_count, model=model
        )
        report = {
            "checkpoint": spec.checkpoint,
            "modules": list(spec.modules),
            "num_layers": manifest.num_layers,
            "sample_count": manifest.sample_count,
            **act_report,
            **weight_report,
        }
        (out / "export_report.json").write_text(
            json.dumps(report, sort_keys=True, indent=2) + "\n"
        )
    except (OtmergeError, FileNotFoundError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    print(
        f"export: {manifest.num_layers} layers x {len(spec.modules)} modules, "
        f"T={manifest.sample_count} -> {out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
