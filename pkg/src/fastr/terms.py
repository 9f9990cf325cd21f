"""Additive model terms: declarative specs, parameter blocks, minibatch
forward/backward kernels under integer encoding, and penalties.

Every categorical effect is evaluated by gathering rows of its parameter
block with the batch's integer codes; one-hot design matrices are never
constructed (the equivalent explicit construction exists only in the
test oracles). The sentinel code -1 marks levels unseen during training
and contributes zero.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Union

import numpy as np

from . import basis as basis_mod
from .data import EncodedBatch
from .errors import ConfigError

LATENT_INIT_SD = 0.1


# ---------------------------------------------------------------------------
# term specifications


@dataclass(frozen=True)
class GlobalBias:
    kind = "global_bias"


@dataclass(frozen=True)
class CategoricalBias:
    feature: str
    kind = "categorical_bias"


@dataclass(frozen=True)
class FactorizedBias:
    feature_i: str
    feature_u: str
    latent_dim: int = 3
    kind = "factorized_bias"


@dataclass(frozen=True)
class Smooth:
    feature: str
    num_basis: int = basis_mod.DEFAULT_NUM_BASIS
    degree: int = basis_mod.DEFAULT_DEGREE
    diff_order: int = basis_mod.DEFAULT_DIFF_ORDER
    lambda_t: float | None = None
    kind = "smooth"


@dataclass(frozen=True)
class TensorSmooth:
    feature_a: str
    feature_b: str
    num_basis_a: int = 8
    num_basis_b: int = 8
    degree: int = basis_mod.DEFAULT_DEGREE
    diff_order: int = basis_mod.DEFAULT_DIFF_ORDER
    lambda_t: float | None = None
    kind = "tensor_smooth"


@dataclass(frozen=True)
class VaryingCoefficient:
    feature: str
    feature_t: str
    num_basis: int = basis_mod.DEFAULT_NUM_BASIS
    degree: int = basis_mod.DEFAULT_DEGREE
    diff_order: int = basis_mod.DEFAULT_DIFF_ORDER
    lambda_t: float | None = None
    kind = "varying_coefficient"


@dataclass(frozen=True)
class FactorizedVaryingCoefficient:
    feature_i: str
    feature_u: str
    feature_t: str
    num_basis: int = basis_mod.DEFAULT_NUM_BASIS
    latent_dim: int = 3
    degree: int = basis_mod.DEFAULT_DEGREE
    diff_order: int = basis_mod.DEFAULT_DIFF_ORDER
    lambda_t: float | None = None
    kind = "factorized_varying_coefficient"


@dataclass(frozen=True)
class LinearArrayInteraction:
    feature_i: str
    feature_u: str
    kind = "linear_array_interaction"


TermSpec = Union[GlobalBias, CategoricalBias, FactorizedBias, Smooth,
                 TensorSmooth, VaryingCoefficient, FactorizedVaryingCoefficient,
                 LinearArrayInteraction]

_KIND_MAP = {cls.kind: cls for cls in (
    GlobalBias, CategoricalBias, FactorizedBias, Smooth, TensorSmooth,
    VaryingCoefficient, FactorizedVaryingCoefficient, LinearArrayInteraction)}

SMOOTH_KINDS = ("smooth", "tensor_smooth", "varying_coefficient",
                "factorized_varying_coefficient")


def validate_term(spec: TermSpec) -> None:
    if hasattr(spec, "latent_dim") and spec.latent_dim < 1:
        raise ConfigError(f"{term_name(spec)}: latent_dim must be >= 1")
    if hasattr(spec, "lambda_t") and spec.lambda_t is not None and spec.lambda_t < 0:
        raise ConfigError(f"{term_name(spec)}: negative smoothing parameter")
    if isinstance(spec, (Smooth, VaryingCoefficient, FactorizedVaryingCoefficient)):
        if spec.num_basis <= spec.diff_order:
            raise ConfigError(
                f"{term_name(spec)}: num_basis must exceed diff_order")
    if isinstance(spec, TensorSmooth):
        if min(spec.num_basis_a, spec.num_basis_b) <= spec.diff_order:
            raise ConfigError(
                f"{term_name(spec)}: marginal bases must exceed diff_order")


def term_name(spec: TermSpec) -> str:
    if isinstance(spec, GlobalBias):
        return "intercept"
    if isinstance(spec, CategoricalBias):
        return f"bias({spec.feature})"
    if isinstance(spec, FactorizedBias):
        return f"factorized_bias({spec.feature_i},{spec.feature_u})"
    if isinstance(spec, Smooth):
        return f"smooth({spec.feature})"
    if isinstance(spec, TensorSmooth):
        return f"tensor({spec.feature_a},{spec.feature_b})"
    if isinstance(spec, VaryingCoefficient):
        return f"vc({spec.feature}|{spec.feature_t})"
    if isinstance(spec, FactorizedVaryingCoefficient):
        return f"factorized_vc({spec.feature_i},{spec.feature_u}|{spec.feature_t})"
    if isinstance(spec, LinearArrayInteraction):
        return f"array({spec.feature_i},{spec.feature_u})"
    raise ConfigError(f"unknown term {spec!r}")


def categorical_features(spec: TermSpec) -> tuple[str, ...]:
    if isinstance(spec, CategoricalBias):
        return (spec.feature,)
    if isinstance(spec, (FactorizedBias, LinearArrayInteraction)):
        return (spec.feature_i, spec.feature_u)
    if isinstance(spec, VaryingCoefficient):
        return (spec.feature,)
    if isinstance(spec, FactorizedVaryingCoefficient):
        return (spec.feature_i, spec.feature_u)
    return ()


def numeric_features(spec: TermSpec) -> tuple[str, ...]:
    if isinstance(spec, Smooth):
        return (spec.feature,)
    if isinstance(spec, TensorSmooth):
        return (spec.feature_a, spec.feature_b)
    if isinstance(spec, (VaryingCoefficient, FactorizedVaryingCoefficient)):
        return (spec.feature_t,)
    return ()


def term_to_dict(spec: TermSpec) -> dict:
    out = {"kind": spec.kind}
    for f in fields(spec):
        out[f.name] = getattr(spec, f.name)
    return out


def term_from_dict(d: dict) -> TermSpec:
    d = dict(d)
    kind = d.pop("kind", None)
    cls = _KIND_MAP.get(kind)
    if cls is None:
        raise ConfigError(f"unknown term kind {kind!r}")
    try:
        spec = cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad fields for term kind {kind!r}: {exc}") from None
    validate_term(spec)
    return spec


def param_count(spec: TermSpec, level_counts: dict[str, int]) -> int:
    """Number of free parameters the term trains."""

    def levels(name: str) -> int:
        try:
            return level_counts[name]
        except KeyError:
            raise ConfigError(f"unknown categorical feature {name!r}") from None

    if isinstance(spec, GlobalBias):
        return 1
    if isinstance(spec, CategoricalBias):
        return levels(spec.feature)
    if isinstance(spec, FactorizedBias):
        return spec.latent_dim * (levels(spec.feature_i) + levels(spec.feature_u))
    if isinstance(spec, Smooth):
        return spec.num_basis
    if isinstance(spec, TensorSmooth):
        return spec.num_basis_a * spec.num_basis_b
    if isinstance(spec, VaryingCoefficient):
        return levels(spec.feature) * spec.num_basis
    if isinstance(spec, FactorizedVaryingCoefficient):
        return spec.num_basis * spec.latent_dim * (
            levels(spec.feature_i) + levels(spec.feature_u))
    if isinstance(spec, LinearArrayInteraction):
        return levels(spec.feature_i) * levels(spec.feature_u)
    raise ConfigError(f"unknown term {spec!r}")


def dense_param_count(spec: TermSpec, level_counts: dict[str, int]) -> int:
    """Parameters the equivalent non-factorized term would train; equals
    param_count for terms that are not factorized."""
    if isinstance(spec, FactorizedBias):
        return level_counts[spec.feature_i] * level_counts[spec.feature_u]
    if isinstance(spec, FactorizedVaryingCoefficient):
        return (spec.num_basis * level_counts[spec.feature_i]
                * level_counts[spec.feature_u])
    return param_count(spec, level_counts)


# ---------------------------------------------------------------------------
# parameter blocks


def init_params(spec: TermSpec, level_counts: dict[str, int],
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Zero biases and spline weights; latent factors drawn
    Normal(0, 0.1^2). Deterministic given the generator state."""
    validate_term(spec)
    pc = param_count(spec, level_counts)  # validates feature names
    del pc
    if isinstance(spec, GlobalBias):
        return {"mu": np.zeros(())}
    if isinstance(spec, CategoricalBias):
        return {"b": np.zeros(level_counts[spec.feature])}
    if isinstance(spec, FactorizedBias):
        i = level_counts[spec.feature_i]
        u = level_counts[spec.feature_u]
        return {
            "v1": rng.normal(0.0, LATENT_INIT_SD, size=(i, spec.latent_dim)),
            "v2": rng.normal(0.0, LATENT_INIT_SD, size=(u, spec.latent_dim)),
        }
    if isinstance(spec, Smooth):
        return {"w": np.zeros(spec.num_basis)}
    if isinstance(spec, TensorSmooth):
        return {"w": np.zeros(spec.num_basis_a * spec.num_basis_b)}
    if isinstance(spec, VaryingCoefficient):
        return {"w": np.zeros((level_counts[spec.feature], spec.num_basis))}
    if isinstance(spec, FactorizedVaryingCoefficient):
        i = level_counts[spec.feature_i]
        u = level_counts[spec.feature_u]
        shape1 = (i, spec.num_basis, spec.latent_dim)
        shape2 = (u, spec.num_basis, spec.latent_dim)
        return {
            "v1": rng.normal(0.0, LATENT_INIT_SD, size=shape1),
            "v2": rng.normal(0.0, LATENT_INIT_SD, size=shape2),
        }
    if isinstance(spec, LinearArrayInteraction):
        i = level_counts[spec.feature_i]
        u = level_counts[spec.feature_u]
        return {"w": np.zeros((i, u))}
    raise ConfigError(f"unknown term {spec!r}")


# ---------------------------------------------------------------------------
# forward kernels
#
# All kernels return a length-M vector. Codes below zero (levels unseen
# at training time) contribute zero.


def _valid(*code_arrays: np.ndarray) -> np.ndarray | None:
    """Boolean row mask, or None when every code is valid (the training
    path, where dictionaries cover all rows)."""
    mask = None
    for c in code_arrays:
        if c.size and c.min() < 0:
            m = c >= 0
            mask = m if mask is None else (mask & m)
    return mask


def forward_global_bias(m: int, mu: np.ndarray) -> np.ndarray:
    return np.full(m, float(mu))


def forward_categorical_bias(codes: np.ndarray, b: np.ndarray) -> np.ndarray:
    mask = _valid(codes)
    if mask is None:
        return b[codes]
    out = np.zeros(codes.size)
    out[mask] = b[codes[mask]]
    return out


def forward_factorized_bias(ci: np.ndarray, cu: np.ndarray,
                            v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    """Inner product of the gathered latent rows: sum_d v1[i,d] v2[u,d]."""
    mask = _valid(ci, cu)
    if mask is None:
        return np.einsum("md,md->m", v1[ci], v2[cu])
    out = np.zeros(ci.size)
    out[mask] = np.einsum("md,md->m", v1[ci[mask]], v2[cu[mask]])
    return out


def forward_smooth(basis_eval: np.ndarray, w: np.ndarray) -> np.ndarray:
    return basis_eval @ w


def forward_tensor_smooth(basis_a: np.ndarray, basis_b: np.ndarray,
                          w: np.ndarray) -> np.ndarray:
    la = basis_a.shape[1]
    lb = basis_b.shape[1]
    return np.einsum("ma,mb,ab->m", basis_a, basis_b, w.reshape(la, lb))


def forward_vc(basis_eval: np.ndarray, codes: np.ndarray,
               w: np.ndarray) -> np.ndarray:
    """Per-level smooth: gather the level's coefficient row, then row-dot
    with the basis evaluation."""
    mask = _valid(codes)
    if mask is None:
        return np.einsum("ml,ml->m", basis_eval, w[codes])
    out = np.zeros(codes.size)
    out[mask] = np.einsum("ml,ml->m", basis_eval[mask], w[codes[mask]])
    return out


def latent_interaction(ci: np.ndarray, cu: np.ndarray, v1: np.ndarray,
                       v2: np.ndarray) -> np.ndarray:
    """Row-wise latent contraction: out[m, l] = sum_d v1[i_m,l,d] v2[u_m,l,d].

    Rows with an unseen code come back all zero.
    """
    mask = _valid(ci, cu)
    if mask is None:
        return np.einsum("mld,mld->ml", v1[ci], v2[cu])
    out = np.zeros((ci.size, v1.shape[1]))
    out[mask] = np.einsum("mld,mld->ml", v1[ci[mask]], v2[cu[mask]])
    return out


def forward_factorized_vc(basis_eval: np.ndarray, ci: np.ndarray,
                          cu: np.ndarray, v1: np.ndarray, v2: np.ndarray
                          ) -> np.ndarray:
    """Factorized varying coefficient: basis row-dot the latent
    interaction curves, sum_l B_l(t_m) sum_d v1[i_m,l,d] v2[u_m,l,d]."""
    return np.einsum("ml,ml->m", basis_eval, latent_interaction(ci, cu, v1, v2))


def forward_array_interaction(ci: np.ndarray, cu: np.ndarray,
                              w: np.ndarray) -> np.ndarray:
    """Pairwise interaction weights fetched by index; equivalent to the
    row-wise Kronecker design times vec(w) without building it."""
    mask = _valid(ci, cu)
    if mask is None:
        return w[ci, cu]
    out = np.zeros(ci.size)
    out[mask] = w[ci[mask], cu[mask]]
    return out


# ---------------------------------------------------------------------------
# backward kernels
#
# g is the upstream gradient d loss / d eta restricted to the batch; each
# kernel returns gradients shaped like its parameter arrays. Scatter
# reductions use bincount, which accumulates in a fixed order and keeps
# training bit-reproducible.


def _scatter(codes: np.ndarray, values: np.ndarray, n_levels: int) -> np.ndarray:
    """Sum values (shape (M, ...)) into per-level slots (shape (n_levels, ...))."""
    tail = values.shape[1:]
    width = int(np.prod(tail)) if tail else 1
    offsets = np.arange(width, dtype=np.int64)
    flat_idx = (codes[:, None] * width + offsets[None, :]).ravel()
    out = np.bincount(flat_idx, weights=values.reshape(codes.size, width).ravel(),
                      minlength=n_levels * width)
    return out.reshape((n_levels, *tail)) if tail else out


def grad_global_bias(g: np.ndarray) -> dict[str, np.ndarray]:
    return {"mu": np.asarray(g.sum())}

def grad_categorical_bias(g: np.ndarray, codes: np.ndarray, n_levels: int
                          ) -> dict[str, np.ndarray]:
    return {"b": _scatter(codes, g, n_levels)}


def grad_factorized_bias(g: np.ndarray, ci: np.ndarray, cu: np.ndarray,
                         v1: np.ndarray, v2: np.ndarray) -> dict[str, np.ndarray]:
    gv = g[:, None]
    return {
        "v1": _scatter(ci, gv * v2[cu], v1.shape[0]),
        "v2": _scatter(cu, gv * v1[ci], v2.shape[0]),
    }


def grad_smooth(g: np.ndarray, basis_eval: np.ndarray) -> dict[str, np.ndarray]:
    return {"w": basis_eval.T @ g}


def grad_tensor_smooth(g: np.ndarray, basis_a: np.ndarray, basis_b: np.ndarray
                       ) -> dict[str, np.ndarray]:
    return {"w": np.einsum("ma,mb,m->ab", basis_a, basis_b, g).ravel()}


def grad_vc(g: np.ndarray, basis_eval: np.ndarray, codes: np.ndarray,
            n_levels: int) -> dict[str, np.ndarray]:
    return {"w": _scatter(codes, g[:, None] * basis_eval, n_levels)}


def grad_factorized_vc(g: np.ndarray, basis_eval: np.ndarray, ci: np.ndarray,
                       cu: np.ndarray, v1: np.ndarray, v2: np.ndarray
                       ) -> dict[str, np.ndarray]:
    gb = g[:, None, None] * basis_eval[:, :, None]
    return {
        "v1": _scatter(ci, gb * v2[cu], v1.shape[0]),
        "v2": _scatter(cu, gb * v1[ci], v2.shape[0]),
    }


def grad_array_interaction(g: np.ndarray, ci: np.ndarray, cu: np.ndarray,
                           shape: tuple[int, int]) -> dict[str, np.ndarray]:
    i, u = shape
    return {"w": _scatter(ci * u + cu, g, i * u).reshape(i, u)}


# ---------------------------------------------------------------------------
# penalties


def penalty(spec: TermSpec, params: dict[str, np.ndarray],
            pen: np.ndarray | None, lam_t: float, lam_iu: float,
            batch: EncodedBatch | None = None) -> float:
    """Penalty value for one term.

    Smooth-type terms contribute ``lam_t * w' P w`` (summed over levels
    for varying coefficients). Factorized varying coefficients add the
    difference penalty of each batch row's latent curve plus the squared
    Frobenius shrinkage of the latent blocks; the factorized bias keeps
    only the Frobenius part. ``pen`` is the term's penalty matrix.
    """
    if lam_t < 0 or lam_iu < 0:
        raise ConfigError("penalty strengths must be nonnegative")
    if isinstance(spec, (Smooth, TensorSmooth)):
        w = params["w"]
        return lam_t * float(w @ pen @ w)
    if isinstance(spec, VaryingCoefficient):
        w = params["w"]
        return lam_t * float(np.einsum("il,lk,ik->", w, pen, w))
    if isinstance(spec, FactorizedVaryingCoefficient):
        frob = float(np.sum(params["v1"] ** 2) + np.sum(params["v2"] ** 2))
        rough = 0.0
        if batch is not None and lam_t > 0:
            ci = batch.codes[spec.feature_i]
            cu = batch.codes[spec.feature_u]
            viu = latent_interaction(ci, cu, params["v1"], params["v2"])
            rough = float(np.einsum("ml,lk,mk->", viu, pen, viu))
        return lam_t * rough + lam_iu * frob
    if isinstance(spec, FactorizedBias):
        return lam_iu * float(np.sum(params["v1"] ** 2) + np.sum(params["v2"] ** 2))
    return 0.0


def penalty_grad(spec: TermSpec, params: dict[str, np.ndarray],
                 pen: np.ndarray | None, lam_t: float, lam_iu: float,
                 batch: EncodedBatch | None = None) -> dict[str, np.ndarray]:
    """Gradient of :func:`penalty` with respect to each parameter array."""
    if isinstance(spec, (Smooth, TensorSmooth)):
        return {"w": 2.0 * lam_t * (pen @ params["w"])}
    if isinstance(spec, VaryingCoefficient):
        return {"w": 2.0 * lam_t * (params["w"] @ pen)}
    if isinstance(spec, FactorizedVaryingCoefficient):
        v1, v2 = params["v1"], params["v2"]
        g1 = 2.0 * lam_iu * v1
        g2 = 2.0 * lam_iu * v2
        if batch is not None and lam_t > 0:
            ci = batch.codes[spec.feature_i]
            cu = batch.codes[spec.feature_u]
            viu = latent_interaction(ci, cu, v1, v2)
            gp = 2.0 * lam_t * (viu @ pen)
            g1 = g1 + _scatter(ci, gp[:, :, None] * v2[cu], v1.shape[0])
            g2 = g2 + _scatter(cu, gp[:, :, None] * v1[ci], v2.shape[0])
        return {"v1": g1, "v2": g2}
    if isinstance(spec, FactorizedBias):
        return {"v1": 2.0 * lam_iu * params["v1"],
                "v2": 2.0 * lam_iu * params["v2"]}
    return {}


def tensor_penalty_matrix(spec: TensorSmooth) -> np.ndarray:
    """Kronecker-sum difference penalty for a tensor-product smooth."""
    pa = basis_mod.difference_penalty(spec.num_basis_a, spec.diff_order).matrix
    pb = basis_mod.difference_penalty(spec.num_basis_b, spec.diff_order).matrix
    ia = np.eye(spec.num_basis_a)
    ib = np.eye(spec.num_basis_b)
    return np.kron(pa, ib) + np.kron(ia, pb)


def center_smooth(w: np.ndarray, basis_col_means: np.ndarray
                  ) -> tuple[np.ndarray, float]:
    """Shift a smooth's weights so its fitted curve averages zero over
    the training evaluations; the absorbed constant belongs to the
    intercept. Exact because the basis rows sum to one."""
    c = float(basis_col_means @ w)
    return w - c, c
