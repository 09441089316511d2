"""Run configuration: JSON schema, defaults and loading."""
import copy
import json

import jsonschema

from clkinetic.errors import ConfigError

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_INT1 = {"type": "integer", "minimum": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


DOMAIN = _obj({
    "type": {"enum": ["ball", "ellipsoid", "polynomial", "quartic"]},
    "params": _obj({
        "radius": _POS, "center": _VEC3, "semi_axes": _VEC3,
        # each term is [coefficient, [px, py, pz]]
        "terms": {"type": "array", "items": {
            "type": "array", "minItems": 2, "maxItems": 2,
            "prefixItems": [_NUM, {"type": "array", "items": {"type": "integer", "minimum": 0},
                                   "minItems": 3, "maxItems": 3}]}},
        "bounding_radius": _POS, "convexity_lower_bound": _POS,
    }),
}, ["type"])

TEMPERATURE = {"oneOf": [
    _POS,
    _obj({"type": {"const": "patchwise"},
          "params": _obj({"axis": {"enum": [0, 1, 2]}, "split": _NUM,
                          "values": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2}},
                         ["values"])}, ["type", "params"]),
    _obj({"type": {"const": "smooth"},
          "params": _obj({"expr": {"type": "string"}, "T_min": _POS, "T_max": _POS}, ["expr"])},
         ["type", "params"]),
]}

WALL = _obj({
    "T_w": TEMPERATURE,
    "r_perp": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    "r_par": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
}, ["T_w", "r_perp", "r_par"])

VERIFY_KERNEL = _obj({
    "n_configs": _INT1, "n_pairs": _INT1, "n_samples": _INT1,
    "normalization_tol": _POS, "reciprocity_tol": _POS, "ks_tol": _POS,
})

VERIFY_LEMMAS = _obj({
    "a_grid": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
    "eps_grid": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
    "b_grid": {"type": "array", "items": _POS, "minItems": 1},
    "w": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
    "w_perp": {"type": "number", "minimum": 0},
    "deltas": {"type": "array", "items": _POS, "minItems": 1},
    "t_grid": {"type": "array", "items": _POS, "minItems": 1},
    "lams": {"type": "array", "items": {"type": "number", "minimum": 1}, "minItems": 1},
    "c": _POS, "v_max": _POS, "n_v": _INT1,
    "l_max": _INT1, "t_star": _POS, "rho": _POS,
})

TRACE = _obj({
    "t": _POS, "x": _VEC3, "v": _VEC3, "samples": _INT1, "k": _INT1,
    "delta": _POS, "lam": {"type": "number", "minimum": 0}, "t_star": _POS, "c": _POS,
    "variant": {"enum": ["literal", "proof"]}, "weighted_samples": _INT1,
})

SIMULATE = _obj({
    "n_particles": _INT1, "n_bounces": _INT1, "horizon": _POS, "T_init": _POS,
    "kind": {"enum": ["cl", "specular", "bounceback"]}, "n_snapshots": _INT1,
    "observables": {"type": "array", "items": {"enum": ["moments", "wall_tally", "dump",
                                                         "equilibrium"]}},
})

SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    "threads": _INT1,
    "output_dir": {"type": "string"},
    "domain": DOMAIN,
    "wall": WALL,
    "verify_kernel": VERIFY_KERNEL,
    "verify_lemmas": VERIFY_LEMMAS,
    "trace": TRACE,
    "simulate": SIMULATE,
})

DEFAULTS = {
    "seed": 12345,
    "threads": 1,
    "output_dir": "out",
    "domain": {"type": "ball", "params": {"radius": 1.0}},
    "wall": {"T_w": 1.0, "r_perp": 0.5, "r_par": 0.5},
    "verify_kernel": {"n_configs": 20, "n_pairs": 1000, "n_samples": 1000000,
                      "normalization_tol": 1e-4, "reciprocity_tol": 1e-10, "ks_tol": 0.01},
    "verify_lemmas": {"a_grid": [0.0, 0.1, 0.2, 0.3, 0.4], "eps_grid": [0.0, 0.01, 0.02, 0.05, 0.1],
                      "b_grid": [0.6, 0.8, 1.0, 1.5, 2.0], "w": [1.0, 0.5], "w_perp": 1.3,
                      "deltas": [0.2, 0.1], "t_grid": [1e-4, 1e-3, 1e-2], "lams": [1.0, 2.0],
                      "c": 1.0 / 15.0, "v_max": 20.0, "n_v": 2001, "l_max": 64,
                      "t_star": 1e-3, "rho": 1.0},
    "trace": {"t": 0.1, "x": [0.0, 0.0, 0.0], "v": [15.0, 0.0, 0.0], "samples": 1000, "k": 8,
              "delta": 0.1, "lam": 1.0, "t_star": 1e-2, "c": 1.0 / 15.0, "variant": "literal",
              "weighted_samples": 20000},
    "simulate": {"n_particles": 20000, "n_bounces": 50, "T_init": 1.0, "kind": "cl",
                 "n_snapshots": 10, "observables": ["moments", "wall_tally", "dump"]},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("domain",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg):
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {path}: {exc.message}") from None
    return cfg


def load(path=None, overrides=None):
    """Read JSON (or start from nothing), validate, then fill defaults."""
    user = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
    validate(user)
    # a user wall replaces the default one wholesale
    if "wall" in user:
        base = {k: v for k, v in DEFAULTS.items() if k != "wall"}
        cfg = _merge(base, user)
    else:
        cfg = _merge(DEFAULTS, user)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    validate(cfg)
    return cfg
