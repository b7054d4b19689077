"""Validate CLI artifacts against the JSON schemas.

usage: validate_schemas.py SCHEMA_DIR ARTIFACT_DIR
"""
import json
import pathlib
import sys

import jsonschema
from referencing import Registry, Resource


def main() -> int:
    schema_dir = pathlib.Path(sys.argv[1])
    art = pathlib.Path(sys.argv[2])
    schemas = {p.name: json.loads(p.read_text()) for p in schema_dir.glob("*.schema.json")}
    registry = Registry().with_resources((name, Resource.from_contents(s)) for name, s in schemas.items())

    def check(schema_name, instance, where):
        cls = jsonschema.validators.validator_for(schemas[schema_name])
        cls.check_schema(schemas[schema_name])
        errors = list(cls(schemas[schema_name], registry=registry).iter_errors(instance))
        for e in errors:
            print(f"{where}: {e.json_path}: {e.message}")
        return not errors

    ok = True
    targets = [
        ("dataset.schema.json", art / "train" / "dataset.json"),
        ("dataset.schema.json", art / "test" / "dataset.json"),
        ("evaluate_report.schema.json", art / "eval.json"),
        ("evaluate_report.schema.json", art / "eval_n1.json"),
        ("ablation_report.schema.json", art / "ablation.json"),
        ("sample_manifest.schema.json", art / "samples" / "manifest.json"),
    ]
    for schema_name, path in targets:
        if not path.exists():
            print(f"missing artifact {path}")
            ok = False
            continue
        ok &= check(schema_name, json.loads(path.read_text()), str(path))
    log = art / "train.ndjson"
    lines = log.read_text().splitlines() if log.exists() else []
    if not lines:
        print(f"missing or empty {log}")
        ok = False
    for i, line in enumerate(lines):
        ok &= check("train_log.schema.json", json.loads(line), f"{log}:{i + 1}")
    print("schemas ok" if ok else "schema validation failed")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
