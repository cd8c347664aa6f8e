"""JSON schemas of the command-line outputs."""

import json
from functools import lru_cache
from importlib import resources

KINDS = ("verdict", "trajectory", "rank_profile", "classify", "bracket", "flow", "geodesic", "cone", "verify")


@lru_cache(maxsize=1)
def load_schema():
    return json.loads((resources.files(__name__) / "outputs.schema.json").read_text(encoding="utf-8"))


def schema_for(kind):
    """Top-level schema for one output kind."""
    if kind not in KINDS:
        raise KeyError(f"unknown output kind {kind!r}")
    full = load_schema()
    return {"$schema": full["$schema"], "$defs": full["$defs"], "$ref": f"#/$defs/{kind}"}


def validate(doc, kind):
    """Raise ``jsonschema.ValidationError`` if ``doc`` does not match."""
    import jsonschema

    jsonschema.validate(doc, schema_for(kind))
