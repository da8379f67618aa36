"""JSON Schemas for every emitted JSON artifact.

Emitters validate against these before writing; the test suite validates
the written files again from disk.
"""

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_STR = {"type": "string"}
_BOOL = {"type": "boolean"}
_NUM_ARRAY = {"type": "array", "items": _NUM}


GRID_SCHEMA = {
    "type": "object",
    "required": ["p1_axis", "p2_axis", "arms", "seeds_per_cell", "counts",
                 "game_kind", "config"],
    "properties": {
        "p1_axis": _NUM_ARRAY,
        "p2_axis": _NUM_ARRAY,
        "arms": {"type": "array", "items": _STR},
        "seeds_per_cell": _INT,
        "counts": {"type": "array",
                   "items": {"type": "array", "items": {"type": "array",
                                                        "items": _INT}}},
        "game_kind": _STR,
        "config": {"type": "object"},
    },
    "additionalProperties": False,
}

SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["command", "game_kind", "master_seed", "data"],
    "properties": {
        "command": _STR,
        "game_kind": _STR,
        "master_seed": _INT,
        "data": {"type": "object"},
    },
    "additionalProperties": False,
}

ALIGN_SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["mean", "median", "excluded", "n_gained", "n_lost"],
    "properties": {
        "mean": _NUM,
        "median": _NUM,
        "excluded": _INT,
        "n_gained": _INT,
        "n_lost": _INT,
        "gained_mean": {"type": ["number", "null"]},
        "gained_median": {"type": ["number", "null"]},
        "gained_min": {"type": ["number", "null"]},
    },
    "additionalProperties": False,
}

_SHIFT_BLOCK = {
    "type": "object",
    "required": ["lambdas", "shift_norms", "converged", "slope",
                 "rel_residual"],
    "properties": {
        "lambdas": _NUM_ARRAY,
        "shift_norms": _NUM_ARRAY,
        "shifts": {"type": "array", "items": _NUM_ARRAY},
        "converged": {"type": "array", "items": _BOOL},
        "slope": _NUM,
        "rel_residual": _NUM,
        "first_order_direction": _NUM_ARRAY,
        "max_first_order_error": _NUM,
    },
    "additionalProperties": False,
}

_DRIFT_BLOCK = {
    "type": "object",
    "required": ["n_samples", "violations", "worst_margin"],
    "properties": {
        "n_samples": _INT,
        "violations": _INT,
        "worst_margin": _NUM,
        "radius": _NUM,
        "skipped": _BOOL,
        "reason": _STR,
    },
    "additionalProperties": False,
}

PROPS_SCHEMA = {
    "type": "object",
    "required": ["synthetic", "game"],
    "properties": {
        "synthetic": {
            "type": "object",
            "required": ["shift", "drift", "mu", "mu_m"],
            "properties": {
                "shift": _SHIFT_BLOCK,
                "drift": _DRIFT_BLOCK,
                "mu": _NUM,
                "mu_m": _NUM,
            },
            "additionalProperties": False,
        },
        "game": {
            "type": "object",
            "required": ["corner", "cooldown_convergence"],
            "properties": {
                "interior_shift": _SHIFT_BLOCK,
                "interior_equilibrium": _NUM_ARRAY,
                "corner": {
                    "type": "object",
                    "required": ["mu", "mu_violations", "mu_m", "lipschitz",
                                 "certified_radius", "drift"],
                    "properties": {
                        "equilibrium": _NUM_ARRAY,
                        "proxy_point": _NUM_ARRAY,
                        "mu": _NUM,
                        "mu_violations": _INT,
                        "mu_m": _NUM,
                        "lipschitz": _NUM,
                        "certified_radius": _NUM,
                        "lambda": _NUM,
                        "drift": _DRIFT_BLOCK,
                        "note": _STR,
                    },
                    "additionalProperties": False,
                },
                "cooldown_convergence": {
                    "type": "object",
                    "required": ["lambdas", "max_cool_distance",
                                 "const_distances", "ratio"],
                    "properties": {
                        "lambdas": _NUM_ARRAY,
                        "max_cool_distance": _NUM,
                        "const_distances": _NUM_ARRAY,
                        "ratio": _NUM,
                        "n_inits": _INT,
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

SADIAG_SCHEMA = {
    "type": "object",
    "required": ["points"],
    "properties": {
        "points": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["coop_probs", "noise_mean_norm", "sigma_hat",
                             "clt_bound", "repeats", "bias_curve",
                             "second_moments_by_length"],
                "properties": {
                    "coop_probs": _NUM_ARRAY,
                    "noise_mean_norm": _NUM,
                    "sigma_hat": _NUM,
                    "clt_bound": _NUM,
                    "repeats": _INT,
                    "bias_curve": {
                        "type": "array",
                        "items": {"type": "array", "items": _NUM},
                    },
                    "second_moments_by_length": {"type": "object"},
                },
                "additionalProperties": False,
            },
        },
        "arm": _STR,
        "lambda": _NUM,
    },
    "additionalProperties": False,
}

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["command", "config_hash", "tool_version", "started",
                 "finished", "files"],
    "properties": {
        "command": _STR,
        "config_hash": _STR,
        "tool_version": _STR,
        "started": _STR,
        "finished": _STR,
        "files": {"type": "object", "additionalProperties": _STR},
    },
    "additionalProperties": False,
}
