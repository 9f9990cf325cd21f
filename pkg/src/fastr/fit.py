"""Minibatch training of the additive model: penalized likelihood loss,
SGD/Adam updates, validation-based early stopping, smoothing-parameter
resolution from a shared degrees-of-freedom target, prediction, effect
export, and JSON (de)serialization of fitted models.

Per batch the loss is the mean negative log-likelihood plus penalty
terms scaled by 1/N_train (the row-wise roughness part of factorized
varying coefficients enters as a batch mean), so the implied full-data
objective is the classical penalized likelihood: sum of per-observation
nll plus the quadratic penalties.
"""

from __future__ import annotations

import json
import time
import tracemalloc
from dataclasses import dataclass, field

import numpy as np

from . import basis as basis_mod
from . import terms as terms_mod
from .data import BatchPlan, Dataset, EncodedBatch, batches, recode, \
    sequential_batches, take_batch
from .errors import ConfigError, InfeasibleDfError, SchemaError, TrainingDiverged
from .family import Family, get_family
from .tensorops import row_kron
from .terms import TermSpec

MODEL_FORMAT = "fastr-model/1"

DEFAULT_DF = 5.0


@dataclass(frozen=True)
class ModelSpec:
    """Outcome family plus the ordered additive terms and their penalty
    configuration. Terms without an explicit ``lambda_t`` get their
    smoothing parameter from the shared ``df`` target; ``lambda_iu``
    shrinks latent factor blocks."""

    family: str
    terms: tuple[TermSpec, ...]
    df: float | None = DEFAULT_DF
    lambda_iu: float = 0.0

    def __post_init__(self):
        get_family(self.family)
        if self.lambda_iu < 0:
            raise ConfigError("lambda_iu must be nonnegative")
        if self.df is not None and self.df <= 0:
            raise ConfigError("df target must be positive")
        for t in self.terms:
            terms_mod.validate_term(t)
        names = [terms_mod.term_name(t) for t in self.terms]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate terms in model spec")


@dataclass(frozen=True)
class FitConfig:
    """Optimization settings for :func:`train`."""

    batch_size: int = 250
    max_epochs: int = 500
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    validation_fraction: float = 0.1
    patience: int = 50
    seed: int = 0
    track_allocations: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must be in [0, 1)")
        if self.validation_fraction > 0 and self.patience < 1:
            raise ConfigError("patience must be >= 1 when validating")


@dataclass
class TrainReport:
    epochs_run: int = 0
    best_epoch: int = -1
    best_val_loss: float | None = None
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    stopping_reason: str = ""
    wall_time_s: float = 0.0
    lambdas: dict[str, float] = field(default_factory=dict)
    peak_alloc_bytes: int | None = None
    epoch_peak_alloc_bytes: int | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# compiled terms


@dataclass
class _CompiledTerm:
    spec: TermSpec
    name: str
    bases: tuple[basis_mod.SplineBasis, ...] = ()
    pen: np.ndarray | None = None
    lam_t: float = 0.0
    basis_col_means: np.ndarray | None = None

    def basis_design(self, batch: EncodedBatch) -> np.ndarray:
        t_feature = terms_mod.numeric_features(self.spec)[-1]
        return basis_mod.evaluate(self.bases[0], batch.numeric[t_feature])


def _build_term_bases(spec: TermSpec, data: Dataset, rows: np.ndarray
                      ) -> tuple[tuple[basis_mod.SplineBasis, ...], np.ndarray | None]:
    if isinstance(spec, terms_mod.Smooth):
        b = basis_mod.build_basis(data.numeric[spec.feature][rows],
                                  spec.num_basis, spec.degree)
        return (b,), basis_mod.difference_penalty(spec.num_basis, spec.diff_order).matrix
    if isinstance(spec, terms_mod.TensorSmooth):
        ba = basis_mod.build_basis(data.numeric[spec.feature_a][rows],
                                   spec.num_basis_a, spec.degree)
        bb = basis_mod.build_basis(data.numeric[spec.feature_b][rows],
                                   spec.num_basis_b, spec.degree)
        return (ba, bb), terms_mod.tensor_penalty_matrix(spec)
    if isinstance(spec, (terms_mod.VaryingCoefficient,
                         terms_mod.FactorizedVaryingCoefficient)):
        b = basis_mod.build_basis(data.numeric[spec.feature_t][rows],
                                  spec.num_basis, spec.degree)
        return (b,), basis_mod.difference_penalty(spec.num_basis, spec.diff_order).matrix
    return (), None


def _validate_features(spec: ModelSpec, data: Dataset) -> None:
    for t in spec.terms:
        for f in terms_mod.categorical_features(t):
            if f not in data.codes:
                raise SchemaError(f"{terms_mod.term_name(t)}: categorical "
                                  f"feature {f!r} not in dataset")
        for f in terms_mod.numeric_features(t):
            if f not in data.numeric:
                raise SchemaError(f"{terms_mod.term_name(t)}: numeric "
                                  f"feature {f!r} not in dataset")


def _resolve_term_lambda(ct: _CompiledTerm, data: Dataset, rows: np.ndarray,
                         df: float) -> float:
    """Demmler-Reinsch df -> lambda for one smooth-type term. Varying
    coefficients solve per level on the level's own rows and share the
    geometric mean; factorized varying coefficients use the pooled basis
    design."""
    spec = ct.spec
    try:
        if isinstance(spec, terms_mod.Smooth):
            design = basis_mod.evaluate(ct.bases[0], data.numeric[spec.feature][rows])
            pen = basis_mod.PenaltyMatrix(spec.diff_order, ct.pen)
            return basis_mod.df_to_lambda(design, pen, df).value
        if isinstance(spec, terms_mod.TensorSmooth):
            da = basis_mod.evaluate(ct.bases[0], data.numeric[spec.feature_a][rows])
            db = basis_mod.evaluate(ct.bases[1], data.numeric[spec.feature_b][rows])
            pen = basis_mod.PenaltyMatrix(spec.diff_order, ct.pen)
            return basis_mod.df_to_lambda(row_kron(da, db), pen, df).value
        if isinstance(spec, terms_mod.VaryingCoefficient):
            t_all = data.numeric[spec.feature_t][rows]
            codes = data.codes[spec.feature][rows]
            pen = basis_mod.PenaltyMatrix(spec.diff_order, ct.pen)
            logs = []
            for level in range(len(data.levels[spec.feature])):
                sel = codes == level
                if not np.any(sel):
                    continue
                design = basis_mod.evaluate(ct.bases[0], t_all[sel])
                lam = basis_mod.df_to_lambda(design, pen, df).value
                logs.append(np.log(max(lam, 1e-300)))
            if not logs:
                return 0.0
            return float(np.exp(np.mean(logs)))
        if isinstance(spec, terms_mod.FactorizedVaryingCoefficient):
            design = basis_mod.evaluate(ct.bases[0], data.numeric[spec.feature_t][rows])
            pen = basis_mod.PenaltyMatrix(spec.diff_order, ct.pen)
            return basis_mod.df_to_lambda(design, pen, df).value
    except InfeasibleDfError as exc:
        raise InfeasibleDfError(f"{ct.name}: {exc}") from None
    return 0.0


def _compile(spec: ModelSpec, data: Dataset, rows: np.ndarray
             ) -> list[_CompiledTerm]:
    compiled = []
    for t in spec.terms:
        bases, pen = _build_term_bases(t, data, rows)
        ct = _CompiledTerm(spec=t, name=terms_mod.term_name(t), bases=bases, pen=pen)
        if t.kind in terms_mod.SMOOTH_KINDS:
            explicit = getattr(t, "lambda_t", None)
            if explicit is not None:
                ct.lam_t = float(explicit)
            elif spec.df is not None:
                ct.lam_t = _resolve_term_lambda(ct, data, rows, spec.df)
        compiled.append(ct)
    return compiled


def resolve_lambdas(spec: ModelSpec, data: Dataset, df: float) -> dict[str, float]:
    """Smoothing parameter per smooth-type term so each reaches the
    shared degrees-of-freedom target ``df`` on this dataset."""
    _validate_features(spec, data)
    rows = np.arange(data.n_rows, dtype=np.int64)
    out = {}
    for t in spec.terms:
        if t.kind not in terms_mod.SMOOTH_KINDS:
            continue
        bases, pen = _build_term_bases(t, data, rows)
        ct = _CompiledTerm(spec=t, name=terms_mod.term_name(t), bases=bases, pen=pen)
        out[ct.name] = _resolve_term_lambda(ct, data, rows, df)
    return out


# ---------------------------------------------------------------------------
# forward / backward over the whole model


def _term_forward(ct: _CompiledTerm, params: dict[str, np.ndarray],
                  batch: EncodedBatch, m: int) -> np.ndarray:
    spec = ct.spec
    if isinstance(spec, terms_mod.GlobalBias):
        return terms_mod.forward_global_bias(m, params["mu"])
    if isinstance(spec, terms_mod.CategoricalBias):
        return terms_mod.forward_categorical_bias(batch.codes[spec.feature],
                                                  params["b"])
    if isinstance(spec, terms_mod.FactorizedBias):
        return terms_mod.forward_factorized_bias(
            batch.codes[spec.feature_i], batch.codes[spec.feature_u],
            params["v1"], params["v2"])
    if isinstance(spec, terms_mod.Smooth):
        return terms_mod.forward_smooth(ct.basis_design(batch), params["w"])
    if isinstance(spec, terms_mod.TensorSmooth):
        da = basis_mod.evaluate(ct.bases[0], batch.numeric[spec.feature_a])
        db = basis_mod.evaluate(ct.bases[1], batch.numeric[spec.feature_b])
        return terms_mod.forward_tensor_smooth(da, db, params["w"])
    if isinstance(spec, terms_mod.VaryingCoefficient):
        return terms_mod.forward_vc(ct.basis_design(batch),
                                    batch.codes[spec.feature], params["w"])
    if isinstance(spec, terms_mod.FactorizedVaryingCoefficient):
        return terms_mod.forward_factorized_vc(
            ct.basis_design(batch), batch.codes[spec.feature_i],
            batch.codes[spec.feature_u], params["v1"], params["v2"])
    if isinstance(spec, terms_mod.LinearArrayInteraction):
        return terms_mod.forward_array_interaction(
            batch.codes[spec.feature_i], batch.codes[spec.feature_u], params["w"])
    raise ConfigError(f"unknown term {spec!r}")


def _term_backward(ct: _CompiledTerm, params: dict[str, np.ndarray],
                   batch: EncodedBatch, g: np.ndarray) -> dict[str, np.ndarray]:
    spec = ct.spec
    if isinstance(spec, terms_mod.GlobalBias):
        return terms_mod.grad_global_bias(g)
    if isinstance(spec, terms_mod.CategoricalBias):
        return terms_mod.grad_categorical_bias(g, batch.codes[spec.feature],
                                               params["b"].shape[0])
    if isinstance(spec, terms_mod.FactorizedBias):
        return terms_mod.grad_factorized_bias(
            g, batch.codes[spec.feature_i], batch.codes[spec.feature_u],
            params["v1"], params["v2"])
    if isinstance(spec, terms_mod.Smooth):
        return terms_mod.grad_smooth(g, ct.basis_design(batch))
    if isinstance(spec, terms_mod.TensorSmooth):
        da = basis_mod.evaluate(ct.bases[0], batch.numeric[spec.feature_a])
        db = basis_mod.evaluate(ct.bases[1], batch.numeric[spec.feature_b])
        return terms_mod.grad_tensor_smooth(g, da, db)
    if isinstance(spec, terms_mod.VaryingCoefficient):
        return terms_mod.grad_vc(g, ct.basis_design(batch),
                                 batch.codes[spec.feature], params["w"].shape[0])
    if isinstance(spec, terms_mod.FactorizedVaryingCoefficient):
        return terms_mod.grad_factorized_vc(
            g, ct.basis_design(batch), batch.codes[spec.feature_i],
            batch.codes[spec.feature_u], params["v1"], params["v2"])
    if isinstance(spec, terms_mod.LinearArrayInteraction):
        return terms_mod.grad_array_interaction(
            g, batch.codes[spec.feature_i], batch.codes[spec.feature_u],
            params["w"].shape)
    raise ConfigError(f"unknown term {spec!r}")


def _forward_eta(cterms: list[_CompiledTerm], params: list[dict[str, np.ndarray]],
                 batch: EncodedBatch) -> np.ndarray:
    m = batch.rows.size
    eta = np.zeros(m)
    for ct, p in zip(cterms, params):
        eta += _term_forward(ct, p, batch, m)
    return eta


def _loss_penalty_lambdas(ct: _CompiledTerm, lambda_iu: float, m: int,
                          n_train: int) -> tuple[float, float]:
    # Row-wise roughness of factorized vc terms averages over the batch;
    # every other quadratic enters the per-batch loss divided by N_train.
    if isinstance(ct.spec, terms_mod.FactorizedVaryingCoefficient):
        return ct.lam_t / m, lambda_iu / n_train
    return ct.lam_t / n_train, lambda_iu / n_train


def _batch_objective(cterms: list[_CompiledTerm], family: Family,
                     model: ModelSpec, params: list[dict[str, np.ndarray]],
                     aux: float, batch: EncodedBatch, n_train: int) -> float:
    eta = _forward_eta(cterms, params, batch)
    value = family.nll(batch.outcome, eta, aux)
    m = batch.rows.size
    for ct, p in zip(cterms, params):
        lt, liu = _loss_penalty_lambdas(ct, model.lambda_iu, m, n_train)
        value += terms_mod.penalty(ct.spec, p, ct.pen, lt, liu, batch)
    return value


def _batch_gradients(cterms: list[_CompiledTerm], family: Family,
                     model: ModelSpec, params: list[dict[str, np.ndarray]],
                     aux: float, batch: EncodedBatch, n_train: int
                     ) -> tuple[float, list[dict[str, np.ndarray]], float]:
    """(objective value, per-term parameter gradients, aux gradient)."""
    eta = _forward_eta(cterms, params, batch)
    m = batch.rows.size
    value = family.nll(batch.outcome, eta, aux)
    g_obs, d_aux = family.nll_grad(batch.outcome, eta, aux)
    g = g_obs / m  # per-observation gradients -> gradient of the mean
    grads = []
    for ct, p in zip(cterms, params):
        tg = _term_backward(ct, p, batch, g)
        lt, liu = _loss_penalty_lambdas(ct, model.lambda_iu, m, n_train)
        value += terms_mod.penalty(ct.spec, p, ct.pen, lt, liu, batch)
        pg = terms_mod.penalty_grad(ct.spec, p, ct.pen, lt, liu, batch)
        for k, v in pg.items():
            tg[k] = tg[k] + v
        grads.append(tg)
    return value, grads, d_aux


def _subset_objective(cterms, family, model, params, aux, data: Dataset,
                      rows: np.ndarray, n_train: int, chunk: int) -> float:
    """Penalized mean nll over a fixed row set, evaluated in chunks so no
    allocation scales with the subset size."""
    if rows.size == 0:
        return float("nan")
    nll_sum = 0.0
    rough_sum = {i: 0.0 for i, ct in enumerate(cterms)
                 if isinstance(ct.spec, terms_mod.FactorizedVaryingCoefficient)}
    for batch in sequential_batches(data, chunk, rows):
        eta = _forward_eta(cterms, params, batch)
        nll_sum += family.nll(batch.outcome, eta, aux) * batch.rows.size
        for i in rough_sum:
            ct = cterms[i]
            if ct.lam_t > 0:
                rough_sum[i] += terms_mod.penalty(
                    ct.spec, params[i], ct.pen, 1.0, 0.0, batch)
    value = nll_sum / rows.size
    for i, ct in enumerate(cterms):
        p = params[i]
        if i in rough_sum:
            value += ct.lam_t * rough_sum[i] / rows.size
            value += model.lambda_iu / n_train * terms_mod.penalty(
                ct.spec, p, ct.pen, 0.0, 1.0, None)
        else:
            lt, liu = ct.lam_t / n_train, model.lambda_iu / n_train
            value += terms_mod.penalty(ct.spec, p, ct.pen, lt, liu, None)
    return value


# ---------------------------------------------------------------------------
# optimizers


class _Sgd:
    def __init__(self, arrays: list[np.ndarray], lr: float):
        self.arrays = arrays
        self.lr = lr

    def step(self, grads: list[np.ndarray]) -> None:
        for a, g in zip(self.arrays, grads):
            a -= self.lr * g


class _Adam:
    def __init__(self, arrays: list[np.ndarray], lr: float,
                 b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.arrays = arrays
        self.lr = lr
        self.b1 = b1
        self.b2 = b2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * np.square(g)
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# fitted model


@dataclass
class FittedModel:
    spec: ModelSpec
    level_maps: dict[str, list[str]]
    term_params: list[dict[str, np.ndarray]]
    term_bases: list[tuple[basis_mod.SplineBasis, ...]]
    term_lambdas: list[float]
    basis_col_means: list[np.ndarray | None]
    aux: float | None
    meta: dict

    def compiled_terms(self) -> list[_CompiledTerm]:
        out = []
        for t, bases, lam in zip(self.spec.terms, self.term_bases,
                                 self.term_lambdas):
            pen = None
            if isinstance(t, terms_mod.TensorSmooth):
                pen = terms_mod.tensor_penalty_matrix(t)
            elif t.kind in terms_mod.SMOOTH_KINDS:
                pen = basis_mod.difference_penalty(t.num_basis, t.diff_order).matrix
            out.append(_CompiledTerm(spec=t, name=terms_mod.term_name(t),
                                     bases=bases, pen=pen, lam_t=lam))
        return out


def train(spec: ModelSpec, data: Dataset, cfg: FitConfig
          ) -> tuple[FittedModel, TrainReport]:
    """Fit the model by seeded minibatch optimization.

    Deterministic given (spec, data, cfg): the train/validation split,
    parameter initialization, and epoch shuffles all derive from
    ``cfg.seed``. Early stopping watches the penalized validation nll
    and restores the best epoch's parameters.
    """
    t_start = time.perf_counter()
    _validate_features(spec, data)
    family = get_family(spec.family)
    if data.outcome_name is None:
        raise SchemaError("training data has no outcome column")
    family.validate_outcome(data.outcome)

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    rng_split = np.random.default_rng(seeds[0])
    rng_init = np.random.default_rng(seeds[1])

    n = data.n_rows
    perm = rng_split.permutation(n)
    n_val = int(round(cfg.validation_fraction * n))
    if 0 < cfg.validation_fraction and n_val == 0:
        raise ConfigError("validation fraction leaves no validation rows")
    val_rows = np.sort(perm[n - n_val:]) if n_val else np.empty(0, dtype=np.int64)
    train_rows = perm[:n - n_val]
    n_train = train_rows.size
    if n_train == 0:
        raise ConfigError("no training rows left after validation split")

    cterms = _compile(spec, data, train_rows)
    level_counts = data.level_counts()
    params = [terms_mod.init_params(t, level_counts, rng_init) for t in spec.terms]
    aux_arr = np.asarray(family.init_aux()) if family.has_aux else None

    arrays: list[np.ndarray] = []
    for p in params:
        arrays.extend(p[k] for k in sorted(p))
    if aux_arr is not None:
        arrays.append(aux_arr)
    opt = (_Adam(arrays, cfg.learning_rate) if cfg.optimizer == "adam"
           else _Sgd(arrays, cfg.learning_rate))

    plan = BatchPlan(seed=int(seeds[2].generate_state(1)[0]),
                     batch_size=cfg.batch_size, rows=train_rows)

    report = TrainReport(lambdas={ct.name: ct.lam_t for ct in cterms
                                  if ct.spec.kind in terms_mod.SMOOTH_KINDS})

    tracking = cfg.track_allocations
    if tracking and not tracemalloc.is_tracing():
        tracemalloc.start()
    phase_base = tracemalloc.get_traced_memory()[0] if tracking else 0
    phase_peak = 0
    epoch_peak = 0

    best_val = np.inf
    best_snapshot = None
    best_epoch = -1
    bad_epochs = 0
    stopping = "max_epochs"
    epochs_run = 0

    for epoch in range(cfg.max_epochs):
        if tracking:
            epoch_base = tracemalloc.get_traced_memory()[0]
            tracemalloc.reset_peak()
        loss_sum = 0.0
        n_batches = 0
        for step, batch in enumerate(batches(data, plan)):
            aux = float(aux_arr) if aux_arr is not None else 0.0
            value, grads, d_aux = _batch_gradients(
                cterms, family, spec, params, aux, batch, n_train)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, step)
            flat = []
            for p, tg in zip(params, grads):
                flat.extend(tg[k] for k in sorted(p))
            if aux_arr is not None:
                flat.append(np.asarray(d_aux))
            opt.step(flat)
            loss_sum += value
            n_batches += 1
        epochs_run = epoch + 1
        report.train_loss.append(loss_sum / max(n_batches, 1))
        if tracking:
            peak = tracemalloc.get_traced_memory()[1]
            phase_peak = max(phase_peak, peak - phase_base)
            epoch_peak = max(epoch_peak, peak - epoch_base)

        if n_val:
            aux = float(aux_arr) if aux_arr is not None else 0.0
            val = _subset_objective(cterms, family, spec, params, aux, data,
                                    val_rows, n_train, cfg.batch_size)
            report.val_loss.append(val)
            if not np.isfinite(val):
                raise TrainingDiverged(epoch, -1)
            if val < best_val:
                best_val = val
                best_epoch = epoch
                best_snapshot = [a.copy() for a in arrays]
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    stopping = "early_stopping"
                    break

    if best_snapshot is not None:
        for a, saved in zip(arrays, best_snapshot):
            np.copyto(a, saved)
    else:
        best_epoch = epochs_run - 1

    report.epochs_run = epochs_run
    report.best_epoch = best_epoch
    report.best_val_loss = None if not n_val else float(best_val)
    report.stopping_reason = stopping
    report.wall_time_s = time.perf_counter() - t_start
    if tracking:
        report.peak_alloc_bytes = int(phase_peak)
        report.epoch_peak_alloc_bytes = int(epoch_peak)

    col_means: list[np.ndarray | None] = []
    for ct in cterms:
        if isinstance(ct.spec, terms_mod.Smooth):
            design = basis_mod.evaluate(
                ct.bases[0], data.numeric[ct.spec.feature][train_rows])
            col_means.append(design.mean(axis=0))
        else:
            col_means.append(None)

    model = FittedModel(
        spec=spec,
        level_maps={k: list(v) for k, v in data.levels.items()},
        term_params=params,
        term_bases=[ct.bases for ct in cterms],
        term_lambdas=[ct.lam_t for ct in cterms],
        basis_col_means=col_means,
        aux=float(aux_arr) if aux_arr is not None else None,
        meta={
            "epochs_run": epochs_run,
            "best_epoch": best_epoch,
            "best_val_loss": report.best_val_loss,
            "stopping_reason": stopping,
            "n_train": int(n_train),
            "n_validation": int(n_val),
            "seed": cfg.seed,
        },
    )
    return model, report


# ---------------------------------------------------------------------------
# prediction and effect export


def _prepare_prediction_data(model: FittedModel, newdata: Dataset
                             ) -> tuple[Dataset, int]:
    for t in model.spec.terms:
        for f in terms_mod.numeric_features(t):
            if f not in newdata.numeric:
                raise SchemaError(f"prediction data misses numeric column {f!r}")
        for f in terms_mod.categorical_features(t):
            if f not in newdata.codes:
                raise SchemaError(f"prediction data misses categorical column {f!r}")
    return recode(newdata, model.level_maps)


def predict(model: FittedModel, newdata: Dataset, chunk: int = 4096
            ) -> tuple[np.ndarray, int]:
    """Mean predictions on new rows plus the count of categorical codes
    that were never seen in training (those contribute zero)."""
    coded, unseen = _prepare_prediction_data(model, newdata)
    family = get_family(model.spec.family)
    cterms = model.compiled_terms()
    out = np.empty(coded.n_rows)
    for batch in sequential_batches(coded, chunk):
        eta = _forward_eta(cterms, model.term_params, batch)
        out[batch.rows] = family.mean(eta)
    return out, unseen


def predict_eta(model: FittedModel, newdata: Dataset, chunk: int = 4096
                ) -> np.ndarray:
    """Linear predictor on new rows (before the response function)."""
    coded, _ = _prepare_prediction_data(model, newdata)
    cterms = model.compiled_terms()
    out = np.empty(coded.n_rows)
    for batch in sequential_batches(coded, chunk):
        out[batch.rows] = _forward_eta(cterms, model.term_params, batch)
    return out


def term_contributions(model: FittedModel, newdata: Dataset
                       ) -> dict[str, np.ndarray]:
    """Per-term additive contributions on the given rows, keyed by term
    name. Used by evaluation against simulation truth tables."""
    coded, _ = _prepare_prediction_data(model, newdata)
    cterms = model.compiled_terms()
    batch = take_batch(coded, np.arange(coded.n_rows, dtype=np.int64),
                       with_outcome=False)
    return {ct.name: _term_forward(ct, p, batch, coded.n_rows)
            for ct, p in zip(cterms, model.term_params)}


def export_effects(model: FittedModel, grid_size: int = 101) -> dict[str, dict]:
    """Plot-ready effect tables per term.

    Smooth curves are centered to mean zero over the training basis
    (the absorbed constants are reported under ``intercept``); varying
    coefficient terms give one curve per level or level pair; factorized
    varying coefficients additionally export the latent factor curves
    of both sides.
    """
    tables: dict[str, dict] = {}
    absorbed = 0.0
    for idx, (t, params) in enumerate(zip(model.spec.terms, model.term_params)):
        name = terms_mod.term_name(t)
        if isinstance(t, terms_mod.GlobalBias):
            continue
        if isinstance(t, terms_mod.CategoricalBias):
            tables[name] = {"level": list(model.level_maps[t.feature]),
                            "value": params["b"].tolist()}
        elif isinstance(t, terms_mod.FactorizedBias):
            li = model.level_maps[t.feature_i]
            lu = model.level_maps[t.feature_u]
            full = params["v1"] @ params["v2"].T
            tables[name] = {
                "level_i": [a for a in li for _ in lu],
                "level_u": [b for _ in li for b in lu],
                "value": full.ravel().tolist(),
            }
        elif isinstance(t, terms_mod.Smooth):
            b = model.term_bases[idx][0]
            grid = np.linspace(b.t_min, b.t_max, grid_size)
            means = model.basis_col_means[idx]
            w, c = terms_mod.center_smooth(params["w"], means)
            absorbed += c
            tables[name] = {"t": grid.tolist(),
                            "value": (basis_mod.evaluate(b, grid) @ w).tolist()}
        elif isinstance(t, terms_mod.TensorSmooth):
            ba, bb = model.term_bases[idx]
            ga = np.linspace(ba.t_min, ba.t_max, grid_size)
            gb = np.linspace(bb.t_min, bb.t_max, grid_size)
            da = basis_mod.evaluate(ba, np.repeat(ga, grid_size))
            db = basis_mod.evaluate(bb, np.tile(gb, grid_size))
            vals = terms_mod.forward_tensor_smooth(da, db, params["w"])
            tables[name] = {"a": np.repeat(ga, grid_size).tolist(),
                            "b": np.tile(gb, grid_size).tolist(),
                            "value": vals.tolist()}
        elif isinstance(t, terms_mod.VaryingCoefficient):
            b = model.term_bases[idx][0]
            grid = np.linspace(b.t_min, b.t_max, grid_size)
            design = basis_mod.evaluate(b, grid)
            levels = model.level_maps[t.feature]
            curves = design @ params["w"].T
            tables[name] = {
                "level": [lv for lv in levels for _ in grid],
                "t": np.tile(grid, len(levels)).tolist(),
                "value": curves.T.ravel().tolist(),
            }
        elif isinstance(t, terms_mod.FactorizedVaryingCoefficient):
            b = model.term_bases[idx][0]
            grid = np.linspace(b.t_min, b.t_max, grid_size)
            design = basis_mod.evaluate(b, grid)
            li = model.level_maps[t.feature_i]
            lu = model.level_maps[t.feature_u]
            rows_i, rows_u, ts, vals = [], [], [], []
            for i, lab_i in enumerate(li):
                for u, lab_u in enumerate(lu):
                    viu = np.einsum("ld,ld->l", params["v1"][i], params["v2"][u])
                    curve = design @ viu
                    rows_i.extend([lab_i] * grid_size)
                    rows_u.extend([lab_u] * grid_size)
                    ts.extend(grid.tolist())
                    vals.extend(curve.tolist())
            tables[name] = {"level_i": rows_i, "level_u": rows_u,
                            "t": ts, "value": vals}
            latent = {"side": [], "level": [], "dim": [], "t": [], "value": []}
            for side, feat, v in (("i", t.feature_i, params["v1"]),
                                  ("u", t.feature_u, params["v2"])):
                for lvl_idx, lab in enumerate(model.level_maps[feat]):
                    for d in range(t.latent_dim):
                        curve = design @ v[lvl_idx, :, d]
                        latent["side"].extend([side] * grid_size)
                        latent["level"].extend([lab] * grid_size)
                        latent["dim"].extend([d] * grid_size)
                        latent["t"].extend(grid.tolist())
                        latent["value"].extend(curve.tolist())
            tables[f"latent:{name}"] = latent
        elif isinstance(t, terms_mod.LinearArrayInteraction):
            li = model.level_maps[t.feature_i]
            lu = model.level_maps[t.feature_u]
            tables[name] = {
                "level_i": [a for a in li for _ in lu],
                "level_u": [b for _ in li for b in lu],
                "value": params["w"].ravel().tolist(),
            }
    tables["intercept"] = {"value": [float(_intercept_value(model) + absorbed)]}
    return tables


def _intercept_value(model: FittedModel) -> float:
    for t, p in zip(model.spec.terms, model.term_params):
        if isinstance(t, terms_mod.GlobalBias):
            return float(p["mu"])
    return 0.0


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model: FittedModel) -> dict:
    terms_out = []
    for t, params, bases, lam, means in zip(
            model.spec.terms, model.term_params, model.term_bases,
            model.term_lambdas, model.basis_col_means):
        terms_out.append({
            "spec": terms_mod.term_to_dict(t),
            "lambda_t": lam,
            "bases": [b.to_dict() for b in bases],
            "basis_col_means": None if means is None else means.tolist(),
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in params.items()},
        })
    return {
        "version": MODEL_FORMAT,
        "family": model.spec.family,
        "df": model.spec.df,
        "lambda_iu": model.spec.lambda_iu,
        "aux": model.aux,
        "levels": model.level_maps,
        "terms": terms_out,
        "meta": model.meta,
    }


def model_from_dict(doc: dict) -> FittedModel:
    if doc.get("version") != MODEL_FORMAT:
        raise SchemaError(f"unsupported model format {doc.get('version')!r}")
    specs = tuple(terms_mod.term_from_dict(t["spec"]) for t in doc["terms"])
    spec = ModelSpec(family=doc["family"], terms=specs, df=doc.get("df"),
                     lambda_iu=doc.get("lambda_iu", 0.0))
    params = []
    bases = []
    lams = []
    means = []
    for t in doc["terms"]:
        params.append({k: np.asarray(v["data"], dtype=np.float64
                                     ).reshape(v["shape"])
                       for k, v in t["params"].items()})
        bases.append(tuple(basis_mod.SplineBasis.from_dict(b) for b in t["bases"]))
        lams.append(float(t["lambda_t"]))
        m = t.get("basis_col_means")
        means.append(None if m is None else np.asarray(m, dtype=np.float64))
    return FittedModel(
        spec=spec,
        level_maps={k: list(v) for k, v in doc["levels"].items()},
        term_params=params,
        term_bases=bases,
        term_lambdas=lams,
        basis_col_means=means,
        aux=doc.get("aux"),
        meta=dict(doc.get("meta", {})),
    )


def save_model(model: FittedModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path: str) -> FittedModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
