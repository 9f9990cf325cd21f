"""The versioned JSON config document consumed by the command line.

A single document carries the data schema, model formula, optimizer
settings, simulation recipe, and benchmark grid; every section is
validated against :data:`CONFIG_SCHEMA` (unknown keys are rejected)
before any command does work.
"""

from __future__ import annotations

import json

import jsonschema

from .data import Schema
from .errors import SchemaError
from .fit import FitConfig, ModelSpec
from .membench import BenchConfig
from .simulate import DGPSpec, FactorizedPart
from .terms import term_from_dict

CONFIG_FORMAT = "fastr-config/1"

_TERM_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": [
            "global_bias", "categorical_bias", "factorized_bias", "smooth",
            "tensor_smooth", "varying_coefficient",
            "factorized_varying_coefficient", "linear_array_interaction"]},
        "feature": {"type": "string"},
        "feature_i": {"type": "string"},
        "feature_u": {"type": "string"},
        "feature_t": {"type": "string"},
        "feature_a": {"type": "string"},
        "feature_b": {"type": "string"},
        "latent_dim": {"type": "integer", "minimum": 1},
        "num_basis": {"type": "integer", "minimum": 2},
        "num_basis_a": {"type": "integer", "minimum": 2},
        "num_basis_b": {"type": "integer", "minimum": 2},
        "degree": {"type": "integer", "minimum": 0},
        "diff_order": {"type": "integer", "minimum": 1},
        "lambda_t": {"type": "number", "minimum": 0},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "version": {"const": CONFIG_FORMAT},
        "data": {
            "type": "object",
            "properties": {
                "numeric": {"type": "array", "items": {"type": "string"}},
                "categorical": {"type": "array", "items": {"type": "string"}},
                "outcome": {"type": ["string", "null"]},
            },
            "additionalProperties": False,
        },
        "model": {
            "type": "object",
            "properties": {
                "family": {"enum": ["gaussian", "bernoulli", "poisson", "beta"]},
                "terms": {"type": "array", "items": _TERM_SCHEMA, "minItems": 1},
                "df": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "lambda_iu": {"type": "number", "minimum": 0},
            },
            "required": ["family", "terms"],
            "additionalProperties": False,
        },
        "fit": {
            "type": "object",
            "properties": {
                "batch_size": {"type": "integer", "minimum": 1},
                "max_epochs": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "optimizer": {"enum": ["adam", "sgd"]},
                "validation_fraction": {"type": "number", "minimum": 0,
                                        "exclusiveMaximum": 1},
                "patience": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
            },
            "additionalProperties": False,
        },
        "dgp": {
            "type": "object",
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "family": {"enum": ["gaussian", "bernoulli", "poisson", "beta"]},
                "seed": {"type": "integer"},
                "uni_smooths": {"type": "array",
                                "items": {"type": "integer", "minimum": 1,
                                          "maximum": 5}},
                "bivariate": {"type": "boolean"},
                "vc_levels": {"type": "integer", "minimum": 0},
                "factorized": {
                    "type": "object",
                    "properties": {
                        "items": {"type": "integer", "minimum": 2},
                        "users": {"type": "integer", "minimum": 2},
                        "latent_dim": {"type": "integer", "minimum": 1},
                        "num_basis": {"type": "integer", "minimum": 4},
                        "pair_catalog": {"type": "boolean"},
                        "factorization": {"type": "boolean"},
                    },
                    "additionalProperties": False,
                },
                "intercept": {"type": "number"},
                "noise_sd": {"type": "number", "exclusiveMinimum": 0},
                "feature_domain": {"enum": ["unit", "wide"]},
            },
            "required": ["n"],
            "additionalProperties": False,
        },
        "bench": {
            "type": "object",
            "properties": {
                "levels": {"type": "array", "items": {"type": "integer",
                                                      "minimum": 2}},
                "n_values": {"type": "array", "items": {"type": "integer",
                                                        "minimum": 1}},
                "kinds": {"type": "array",
                          "items": {"enum": ["single", "varying"]}},
                "epochs": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
            },
            "additionalProperties": False,
        },
    },
    "required": ["version"],
    "additionalProperties": False,
}


def validate_config(doc: dict) -> None:
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"config invalid at {path}: {exc.message}") from None


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: config must be a JSON object")
    validate_config(doc)
    return doc


def require_section(doc: dict, name: str) -> dict:
    if name not in doc:
        raise SchemaError(f"config is missing the {name!r} section")
    return doc[name]


def parse_data_schema(section: dict) -> Schema:
    return Schema(numeric=tuple(section.get("numeric", ())),
                  categorical=tuple(section.get("categorical", ())),
                  outcome=section.get("outcome"))


def parse_model(section: dict) -> ModelSpec:
    terms = tuple(term_from_dict(t) for t in section["terms"])
    return ModelSpec(family=section["family"], terms=terms,
                     df=section.get("df", 5.0),
                     lambda_iu=section.get("lambda_iu", 0.0))


def parse_fit(section: dict, seed_override: int | None = None) -> FitConfig:
    kwargs = dict(section)
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return FitConfig(**kwargs)


def parse_dgp(section: dict, seed_override: int | None = None) -> DGPSpec:
    kwargs = dict(section)
    if "factorized" in kwargs and kwargs["factorized"] is not None:
        kwargs["factorized"] = FactorizedPart(**kwargs["factorized"])
    if "uni_smooths" in kwargs:
        kwargs["uni_smooths"] = tuple(kwargs["uni_smooths"])
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return DGPSpec(**kwargs)


def parse_bench(section: dict, seed_override: int | None = None) -> BenchConfig:
    kwargs = dict(section)
    for key in ("levels", "n_values", "kinds"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return BenchConfig(**kwargs)
