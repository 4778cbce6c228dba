"""Export CLI: manifest + annotations in, scene records out."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from detrefine import InputError, InternalError

from .export import ExportError, export_features
from .manifest import ExportManifest


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def main(argv=None) -> int:
    parser = _Parser(prog="detrefine-export",
                     description="Export detector features to scene records")
    parser.add_argument("--manifest", required=True, help="manifest JSON")
    parser.add_argument("--annotations", required=True,
                        help="annotations JSON (image -> objects)")
    parser.add_argument("--out", required=True, help="output dataset path")
    parser.add_argument("--weights", default=None,
                        help="optional detector weights file")
    try:
        args = parser.parse_args(argv)
        manifest = ExportManifest.load(args.manifest)
        ann_path = Path(args.annotations)
        if not ann_path.exists():
            raise InputError(f"annotations not found: {ann_path}")
        annotations = json.loads(ann_path.read_text()).get("images", {})
        completed = export_features(manifest, annotations, args.out,
                                    weights_path=args.weights)
        ok = sum(1 for r in completed.report.values() if r.get("status") == "ok")
        print(f"exported {ok} scenes to {args.out}; manifest at "
              f"{args.out}.manifest.json")
        return 0
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for image, row in exc.report.items():
            print(f"  {image}: {row.get('status')}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InternalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
