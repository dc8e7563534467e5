"""JSON schemas for every report the command-line tool emits."""

_BOM = {
    "type": "object",
    "required": ["bandwidth", "spad", "queue_depth", "exec_tiles", "exec_mode"],
    "properties": {
        "bandwidth": {"type": "integer", "minimum": 1},
        "spad": {"type": "object", "additionalProperties": {"type": "integer"}},
        "queue_depth": {"type": "integer", "minimum": 1},
        "exec_tiles": {"type": "integer", "minimum": 1},
        "exec_mode": {"enum": ["temporal", "spatial"]},
    },
}

PROGRAM_CONFIG = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["model", "scale", "threat", "mode", "tenant_id", "bom",
                 "dram_window", "layout", "layer_of_instr", "stats"],
    "properties": {
        "model": {"type": "string"},
        "scale": {"type": "integer", "minimum": 1},
        "threat": {"enum": ["pp", "sp", "ps", "ss"]},
        "mode": {"enum": ["temporal", "spatial"]},
        "tenant_id": {"type": "integer", "minimum": 0, "maximum": 3},
        "bom": _BOM,
        "dram_window": {"type": "array", "items": {"type": "integer"}, "minItems": 2},
        "layout": {"type": "object"},
        "layer_of_instr": {"type": "array", "items": {"type": "integer"}},
        "stats": {"type": "object"},
    },
}

MIX_REPORT = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["model", "threat", "mode", "mix", "instructions", "size_bytes"],
    "properties": {
        "mix": {"type": "object", "additionalProperties": {"type": "integer"}},
        "instructions": {"type": "integer"},
        "size_bytes": {"type": "integer"},
    },
}

ZEROIZE_REPORT = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["model", "threat", "optimized", "naive", "reduction"],
    "properties": {
        "optimized": {"type": "object"},
        "naive": {"type": "object"},
        "reduction": {"type": "object"},
    },
}

CYCLES_REPORT = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["tenants"],
    "properties": {
        "tenants": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["cycles", "finished", "traps"],
                "properties": {
                    "cycles": {"type": "integer"},
                    "finished": {"type": "boolean"},
                    "traps": {"type": "integer"},
                },
            },
        },
        "overhead_vs_baseline": {"type": ["number", "null"]},
    },
}

ATTACK_REPORT = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["mode", "all"],
    "properties": {
        "mode": {"enum": ["unshaped", "shaped"]},
        "easy": {"type": "object"},
        "all": {"type": "object"},
        "candidate_inflation": {"type": ["number", "null"]},
        "threshold_sweep": {"type": "array"},
    },
}

BENCH_MANIFEST = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["models", "threats", "modes", "ciphers", "scale", "seed", "runs"],
    "properties": {
        "runs": {"type": "array"},
        "failures": {"type": "array"},
    },
}

SCHEMAS = {
    "config": PROGRAM_CONFIG,
    "mix": MIX_REPORT,
    "zeroize": ZEROIZE_REPORT,
    "cycles": CYCLES_REPORT,
    "attack": ATTACK_REPORT,
    "manifest": BENCH_MANIFEST,
}


def validate_report(kind: str, payload: dict) -> None:
    """Raises jsonschema.ValidationError when the payload is malformed."""
    import jsonschema

    jsonschema.validate(payload, SCHEMAS[kind])
