"""Synthetic data generation for the estimation studies, plus the
integrated squared error metric used to score recovered effects.

The catalog holds five univariate test functions, one bivariate bump
surface, and ten varying-coefficient shapes. The factorized scenario
draws two categorical features (4 and 5 levels by default) and builds
the time-varying interaction from one catalog-driven per-pair surface
plus one genuine low-rank factorization, standardized to unit variance
over the sampled rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import basis as basis_mod
from . import data as data_mod
from .data import Dataset
from .errors import ConfigError, DimensionError
from .family import get_family

GAUSSIAN_NOISE_SD = 0.3


# ---------------------------------------------------------------------------
# test-function catalog


def _f_uni_1(x):
    return -((x / 4.0) ** 5)


def _f_uni_2(x):
    return np.log(x ** 2) / 10.0


def _f_uni_3(x):
    return np.sin(3.0 * x)


def _f_uni_4(x):
    x = np.asarray(x, dtype=np.float64)
    left = np.sin(3.0 * x) * 0.1 + 1.0
    right = (-2.0 * x + 1.0) / 4.0
    return np.where(x < 0.0, left, right)


def _f_uni_5(x):
    return -x * np.tanh(3.0 * x) * np.sin(4.0 * x) / 4.0


def _f_bi(x, y):
    scale = math.pi ** 0.3 * 0.4
    bump1 = 1.2 * np.exp(-((x - 0.2) ** 2) / 0.09 - ((y - 0.3) ** 2) / 0.16)
    bump2 = 0.8 * np.exp(-((x - 0.7) ** 2) / 0.09 - ((y - 0.8) ** 2) / 0.16)
    return scale * (bump1 + bump2)


_VC_FUNCS = [
    lambda x: np.cos(3.0 * x),
    lambda x: np.tanh(3.0 * x),
    lambda x: -((x / 4.0) ** 3),
    lambda x: np.cos(3.0 * x - 2.0) * (-x / 3.0),
    lambda x: np.exp(x / 2.0) - 1.0,
    lambda x: (x / 2.0) ** 2,
    lambda x: np.sin(x) * np.cos(x),
    lambda x: np.sqrt(np.abs(x)),
    lambda x: -((x / 4.0) ** 5),
    lambda x: np.log(x ** 2) / 100.0,
]

CATALOG = {
    "f_uni_1": _f_uni_1,
    "f_uni_2": _f_uni_2,
    "f_uni_3": _f_uni_3,
    "f_uni_4": _f_uni_4,
    "f_uni_5": _f_uni_5,
    "f_bi": _f_bi,
}
for _k, _fn in enumerate(_VC_FUNCS):
    CATALOG[f"f_vc_{_k + 1}"] = _fn


def dgp_function(name: str, x, y=None):
    """Evaluate one catalog function by name."""
    try:
        fn = CATALOG[name]
    except KeyError:
        raise ConfigError(f"unknown catalog function {name!r}") from None
    if name == "f_bi":
        if y is None:
            raise ConfigError("f_bi needs two arguments")
        return fn(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    return fn(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# generation specs


@dataclass(frozen=True)
class FactorizedPart:
    """Time-varying interaction of two balanced categorical features."""

    items: int = 4
    users: int = 5
    latent_dim: int = 3
    num_basis: int = 10
    pair_catalog: bool = True   # add the per-pair catalog surface
    factorization: bool = True  # add the genuine low-rank component

    def __post_init__(self):
        if self.items < 2 or self.users < 2:
            raise ConfigError("factor level counts must be >= 2")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")


@dataclass(frozen=True)
class DGPSpec:
    """What to simulate: sample size, family, and which effects enter
    the additive predictor."""

    n: int
    family: str = "gaussian"
    seed: int = 0
    uni_smooths: tuple[int, ...] = ()
    bivariate: bool = False
    vc_levels: int = 0
    factorized: FactorizedPart | None = None
    intercept: float = 0.0
    noise_sd: float = GAUSSIAN_NOISE_SD
    feature_domain: str = "unit"   # "unit" -> U(0,1), "wide" -> U(-2,2)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        get_family(self.family)
        if any(k < 1 or k > 5 for k in self.uni_smooths):
            raise ConfigError("uni_smooths indices must be in 1..5")
        if self.feature_domain not in ("unit", "wide"):
            raise ConfigError("feature_domain must be 'unit' or 'wide'")


@dataclass
class TruthTable:
    """True effect values on the simulated rows (and dense grids), keyed
    by the names of the model terms they correspond to."""

    row_values: dict[str, np.ndarray] = field(default_factory=dict)
    grids: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    eta: np.ndarray | None = None


def _draw_feature(rng, n, domain):
    if domain == "wide":
        return rng.uniform(-2.0, 2.0, size=n)
    return rng.uniform(0.0, 1.0, size=n)


def _balanced_codes(rng, n, levels):
    # floor(n / levels) per level, remainder spread over the first levels,
    # then shuffled
    codes = np.arange(n, dtype=np.int64) % levels
    rng.shuffle(codes)
    return codes


def generate(spec: DGPSpec) -> tuple[Dataset, TruthTable]:
    """Draw features, build the additive predictor from the requested
    true effects, and sample outcomes through the family's response.

    Numeric features are uniform on the configured domain, categorical
    assignments are balanced, and everything is reproducible from
    ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    numeric: dict[str, np.ndarray] = {}
    categorical: dict[str, tuple[np.ndarray, list[str]]] = {}
    truth = TruthTable()
    eta = np.full(n, spec.intercept, dtype=np.float64)

    for k in spec.uni_smooths:
        x = _draw_feature(rng, n, spec.feature_domain)
        numeric[f"x{k}"] = x
        vals = dgp_function(f"f_uni_{k}", x)
        truth.row_values[f"smooth(x{k})"] = vals
        grid = np.linspace(x.min(), x.max(), 201)
        truth.grids[f"smooth(x{k})"] = {
            "t": grid, "value": dgp_function(f"f_uni_{k}", grid)}
        eta += vals

    if spec.bivariate:
        xa = _draw_feature(rng, n, spec.feature_domain)
        xb = _draw_feature(rng, n, spec.feature_domain)
        numeric["xa"] = xa
        numeric["xb"] = xb
        vals = dgp_function("f_bi", xa, xb)
        truth.row_values["tensor(xa,xb)"] = vals
        eta += vals

    if spec.vc_levels:
        g = _balanced_codes(rng, n, spec.vc_levels)
        tv = _draw_feature(rng, n, spec.feature_domain)
        numeric["tg"] = tv
        categorical["g"] = (g, [f"g{j}" for j in range(spec.vc_levels)])
        vals = np.zeros(n)
        grid = np.linspace(tv.min(), tv.max(), 201)
        grid_levels, grid_vals = [], []
        for level in range(spec.vc_levels):
            fn = f"f_vc_{(level % 10) + 1}"
            sel = g == level
            vals[sel] = dgp_function(fn, tv[sel])
            grid_levels.extend([f"g{level}"] * grid.size)
            grid_vals.append(dgp_function(fn, grid))
        truth.row_values["vc(g|tg)"] = vals
        truth.grids["vc(g|tg)"] = {
            "level": np.array(grid_levels),
            "t": np.tile(grid, spec.vc_levels),
            "value": np.concatenate(grid_vals)}
        eta += vals

    if spec.factorized is not None:
        fac = spec.factorized
        ci = _balanced_codes(rng, n, fac.items)
        cu = _balanced_codes(rng, n, fac.users)
        t = rng.uniform(0.0, 1.0, size=n)
        numeric["t"] = t
        categorical["item"] = (ci, [f"i{j}" for j in range(fac.items)])
        categorical["user"] = (cu, [f"u{j}" for j in range(fac.users)])

        total = np.zeros(n)
        pair_fn_idx = np.arange(fac.items * fac.users) % 10
        if fac.pair_catalog:
            pair = ci * fac.users + cu
            for p in range(fac.items * fac.users):
                sel = pair == p
                if np.any(sel):
                    total[sel] += dgp_function(f"f_vc_{pair_fn_idx[p] + 1}", t[sel])
        scale = 1.0
        v1 = v2 = None
        b = basis_mod.build_basis(np.array([0.0, 1.0]), fac.num_basis, 3)
        if fac.factorization:
            v1 = rng.normal(size=(fac.items, fac.num_basis, fac.latent_dim))
            v2 = rng.normal(size=(fac.users, fac.num_basis, fac.latent_dim))
            design = basis_mod.evaluate(b, t)
            viu = np.einsum("mld,mld->ml", v1[ci], v2[cu])
            raw = np.einsum("ml,ml->m", design, viu)
            sd = float(raw.std())
            scale = 1.0 / sd if sd > 0 else 1.0
            total += raw * scale

        name = "factorized_vc(item,user|t)"
        truth.row_values[name] = total
        grid = np.linspace(0.0, 1.0, 201)
        gdesign = basis_mod.evaluate(b, grid)
        g_i, g_u, g_t, g_v = [], [], [], []
        for i in range(fac.items):
            for u in range(fac.users):
                curve = np.zeros(grid.size)
                if fac.pair_catalog:
                    curve += dgp_function(
                        f"f_vc_{pair_fn_idx[i * fac.users + u] + 1}", grid)
                if fac.factorization:
                    viu = np.einsum("ld,ld->l", v1[i], v2[u])
                    curve += (gdesign @ viu) * scale
                g_i.extend([f"i{i}"] * grid.size)
                g_u.extend([f"u{u}"] * grid.size)
                g_t.extend(grid.tolist())
                g_v.append(curve)
        truth.grids[name] = {
            "level_i": np.array(g_i), "level_u": np.array(g_u),
            "t": np.array(g_t), "value": np.concatenate(g_v)}
        eta += total

    truth.eta = eta
    family = get_family(spec.family)
    theta = family.mean(eta)
    if spec.family == "gaussian":
        y = theta + rng.normal(0.0, spec.noise_sd, size=n)
    elif spec.family == "bernoulli":
        y = (rng.uniform(size=n) < theta).astype(np.float64)
    elif spec.family == "poisson":
        y = rng.poisson(theta).astype(np.float64)
    else:  # beta with fixed precision
        phi = 20.0
        y = rng.beta(theta * phi, (1.0 - theta) * phi)
        y = np.clip(y, 1e-6, 1.0 - 1e-6)
    numeric["y"] = y

    dataset = data_mod.from_columns(numeric, categorical, outcome="y")
    return dataset, truth


# ---------------------------------------------------------------------------
# evaluation metric


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Trapezoidal integration weights aligned with the (possibly
    unsorted) evaluation points."""
    points = np.asarray(points, dtype=np.float64)
    if points.size == 1:
        return np.ones(1)
    order = np.argsort(points, kind="stable")
    sorted_pts = points[order]
    gaps = np.diff(sorted_pts)
    w = np.zeros(points.size)
    w[:-1] += gaps / 2.0
    w[1:] += gaps / 2.0
    out = np.empty_like(w)
    out[order] = w
    return out


def mise(f_hat: np.ndarray, f_true: np.ndarray, weights: np.ndarray) -> float:
    """Weighted mean squared deviation between two functions on a shared
    grid, after removing each function's weighted mean (estimated levels
    are only identified up to a constant)."""
    f_hat = np.asarray(f_hat, dtype=np.float64)
    f_true = np.asarray(f_true, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if not (f_hat.shape == f_true.shape == weights.shape):
        raise DimensionError(
            f"mise inputs must align, got {f_hat.shape}, {f_true.shape}, "
            f"{weights.shape}")
    total = weights.sum()
    if total <= 0:
        raise DimensionError("integration weights must have positive mass")
    d = (f_hat - np.sum(weights * f_hat) / total) \
        - (f_true - np.sum(weights * f_true) / total)
    return float(np.sum(weights * d * d) / total)


def grouped_mise(f_hat: np.ndarray, f_true: np.ndarray, t: np.ndarray,
                 groups: np.ndarray | None = None) -> float:
    """MISE with trapezoidal weights over ``t``, computed per group and
    averaged. ``groups=None`` treats all rows as a single function."""
    if groups is None:
        return mise(f_hat, f_true, trapezoid_weights(t))
    values = []
    for gkey in np.unique(groups):
        sel = groups == gkey
        if np.sum(sel) < 2:
            continue
        values.append(mise(f_hat[sel], f_true[sel], trapezoid_weights(t[sel])))
    return float(np.mean(values))
