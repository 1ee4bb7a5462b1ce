"""Discriminative training of the transformation network.

Two objectives share one machinery:

* image mode ("ibt"): for every training image, the compatibility of the
  correct class must beat every rival class by that pair's margin; the sum
  of hinge violations is minimized over the network parameters.
* predicate mode ("pbt"): the same ranking constraint, but each class's
  binary attribute row stands in for its images, so no visual examples are
  needed at all.

Margins are average Hamming distances between predicate rows (or a constant
when no predicate matrix exists). Gradients are exact: they chain through
the cosine, through the weighted attribute combination, and through the
transformed class vector, all in closed form. A finite-difference harness
verifies every path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .embeddings import EmbeddingTable, embed_name
from .errors import CodedError
from .model import AttributeProfile, attribute_base_matrix, evaluate
from .network import (
    AdamState,
    NetworkParams,
    adam_step,
    backward_batch,
    forward_batch,
    init_adam,
    init_network,
    params_add_scaled,
    params_from_vector,
    params_squared_norm,
    params_to_vector,
)
from .predicates import PredicateMatrix, margin_matrix

FULL_BATCH = "full"

MODES = ("ibt", "pbt")


@dataclass(frozen=True)
class TrainingConfig:
    """Knobs for one training run; defaults follow the published recipe
    (learning rate 1e-4, no weight penalty, 2 cross-validation folds)."""

    mode: str
    iterations: int
    h1: int
    d: int
    lr: float = 1e-4
    batch_size: int | str = 64
    lam: float = 0.0
    seed: int = 0
    cv_folds: int = 2
    hidden_grid: tuple[int, ...] = ()
    outdim_grid: tuple[int, ...] = ()
    iteration_checkpoints: tuple[int, ...] = ()
    const_margin: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.iterations < 1 or self.h1 < 1 or self.d < 1:
            raise ValueError("iterations, h1 and d must be positive")
        if self.lr <= 0 or self.lam < 0 or self.const_margin < 0:
            raise ValueError("lr must be positive; lam and const_margin non-negative")
        if self.batch_size != FULL_BATCH and (not isinstance(self.batch_size, int) or self.batch_size < 1):
            raise ValueError(f"batch_size must be a positive integer or {FULL_BATCH!r}")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")


@dataclass
class TrainingData:
    """Inputs a training run draws from; profiles are optional in predicate mode."""

    table: EmbeddingTable
    attr_names: tuple[str, ...]
    predicates: PredicateMatrix | None = None
    profiles: list[AttributeProfile] | None = None


@dataclass(frozen=True)
class HistoryRecord:
    iteration: int
    objective: float
    val_accuracy: float | None = None


@dataclass
class TrainingHistory:
    records: list[HistoryRecord] = field(default_factory=list)

    def __post_init__(self):
        iters = [r.iteration for r in self.records]
        if any(b <= a for a, b in zip(iters, iters[1:])):
            raise ValueError("history iterations must be strictly increasing")

    def final_objective(self) -> float:
        return self.records[-1].objective


def constant_margin_matrix(n_classes: int, delta: float) -> np.ndarray:
    """Uniform off-diagonal margin for the regime without a predicate matrix."""
    return delta * (1.0 - np.eye(n_classes))


# --- cosine-matrix machinery shared by both objectives ---

def _cosine_matrix(U: np.ndarray, W: np.ndarray):
    nu = np.linalg.norm(U, axis=1)
    nw = np.linalg.norm(W, axis=1)
    if np.any(nu == 0.0) or np.any(nw == 0.0):
        raise CodedError("E_ZERO_NORM", "cosine undefined for a zero vector")
    C = (U @ W.T) / (nu[:, None] * nw[None, :])
    return C, nu, nw


def _cosine_backprop(U, W, C, nu, nw, G):
    """Given dLoss/dC as G, return dLoss/dU and dLoss/dW.

    d cos(u, w)/du = w / (|u||w|) - cos(u, w) u / |u|^2, applied symmetrically.
    """
    dU = ((G / nw[None, :]) @ W) / nu[:, None] - ((G * C).sum(axis=1) / nu**2)[:, None] * U
    dW = ((G / nu[:, None]).T @ U) / nw[:, None] - ((G * C).sum(axis=0) / nw**2)[:, None] * W
    return dU, dW


def _ibt_core(params, Va, Vc, weight_rows, labels, margins, lam):
    """Loss and exact gradients of the image-mode ranking objective."""
    Ta, cache_a = forward_batch(params, Va)
    Tc, cache_c = forward_batch(params, Vc)
    Phi = weight_rows @ Ta
    C, n_phi, n_cls = _cosine_matrix(Phi, Tc)
    n = C.shape[0]
    rows = np.arange(n)
    true_scores = C[rows, labels]
    H = C - true_scores[:, None] + margins[labels]
    H[rows, labels] = 0.0
    rival_mask = np.ones_like(C, dtype=bool)
    rival_mask[rows, labels] = False
    active = (H > 0.0) & rival_mask
    loss = float(H[active].sum()) + lam * params_squared_norm(params)
    G = active.astype(np.float64)
    G[rows, labels] = -active.sum(axis=1).astype(np.float64)
    dPhi, dTc = _cosine_backprop(Phi, Tc, C, n_phi, n_cls, G)
    dTa = weight_rows.T @ dPhi
    grads_a, _ = backward_batch(params, cache_a, dTa)
    grads_c, _ = backward_batch(params, cache_c, dTc)
    grads = params_add_scaled(grads_a, grads_c, 1.0)
    if lam:
        grads = params_add_scaled(grads, params, 2.0 * lam)
    return loss, grads, H[rival_mask]


def _pbt_core(params, Va, Vc, predicate_rows, margins, lam):
    """Loss and exact gradients of the predicate-mode ranking objective."""
    Ta, cache_a = forward_batch(params, Va)
    Tc, cache_c = forward_batch(params, Vc)
    row_sums = predicate_rows.sum(axis=1)
    weight_rows = predicate_rows / row_sums[:, None]
    Psi = weight_rows @ Ta
    C, n_psi, n_cls = _cosine_matrix(Psi, Tc)  # C[p, y] = cos(Psi_p, class y)
    K = C.shape[0]
    diag = np.diag(C).copy()
    H = C - diag[None, :] + margins  # margins symmetric, so M[p, y] = M[y, p]
    rival_mask = ~np.eye(K, dtype=bool)
    H[~rival_mask] = 0.0
    active = (H > 0.0) & rival_mask
    loss = float(H[active].sum()) + lam * params_squared_norm(params)
    G = active.astype(np.float64)
    G[np.arange(K), np.arange(K)] = -active.sum(axis=0).astype(np.float64)
    dPsi, dTc = _cosine_backprop(Psi, Tc, C, n_psi, n_cls, G)
    dTa = weight_rows.T @ dPsi
    grads_a, _ = backward_batch(params, cache_a, dTa)
    grads_c, _ = backward_batch(params, cache_c, dTc)
    grads = params_add_scaled(grads_a, grads_c, 1.0)
    if lam:
        grads = params_add_scaled(grads, params, 2.0 * lam)
    return loss, grads, H[rival_mask]


def _check_margins(margins: np.ndarray, n_classes: int) -> np.ndarray:
    margins = np.asarray(margins, dtype=np.float64)
    if margins.shape != (n_classes, n_classes):
        raise ValueError(f"margin matrix shape {margins.shape}, expected ({n_classes}, {n_classes})")
    if not np.allclose(margins, margins.T) or np.any(np.diag(margins) != 0.0):
        raise ValueError("margin matrix must be symmetric with a zero diagonal")
    return margins


def _profile_weights(profiles: Sequence[AttributeProfile], n_attrs: int) -> np.ndarray:
    weights = np.empty((len(profiles), n_attrs))
    for i, profile in enumerate(profiles):
        if profile.posteriors.shape != (n_attrs,):
            raise CodedError(
                "E_DIM_MISMATCH",
                f"profile {profile.image_id!r} has {profile.posteriors.size} posteriors for {n_attrs} attributes",
            )
        total = profile.posteriors.sum()
        if total <= 0.0:
            raise CodedError("E_DEGENERATE_PROFILE", f"image {profile.image_id!r} has all-zero posteriors")
        weights[i] = profile.posteriors / total
    return weights


def ibt_loss_and_grad(
    params: NetworkParams,
    table: EmbeddingTable,
    attr_names: Sequence[str],
    batch: Sequence[AttributeProfile],
    train_classes: Sequence[str],
    margins: np.ndarray,
    lam: float = 0.0,
) -> tuple[float, NetworkParams]:
    """Image-mode objective over a batch, with exact parameter gradients."""
    margins = _check_margins(margins, len(train_classes))
    class_index = {name: j for j, name in enumerate(train_classes)}
    labels = np.empty(len(batch), dtype=np.intp)
    for i, profile in enumerate(batch):
        if profile.true_class not in class_index:
            raise CodedError(
                "E_UNKNOWN_TRUE_CLASS",
                f"image {profile.image_id!r} labeled {profile.true_class!r}, not a training class",
            )
        labels[i] = class_index[profile.true_class]
    weight_rows = _profile_weights(batch, len(attr_names))
    Va = attribute_base_matrix(table, attr_names)
    Vc = np.stack([embed_name(table, name) for name in train_classes])
    loss, grads, _ = _ibt_core(params, Va, Vc, weight_rows, labels, margins, lam)
    return loss, grads


def pbt_loss_and_grad(
    params: NetworkParams,
    table: EmbeddingTable,
    attr_names: Sequence[str],
    predicates: PredicateMatrix,
    margins: np.ndarray,
    lam: float = 0.0,
) -> tuple[float, NetworkParams]:
    """Predicate-mode objective over all ordered class pairs."""
    if predicates.n_classes < 2:
        raise CodedError("E_TOO_FEW_CLASSES", "predicate training needs at least 2 classes")
    if tuple(attr_names) != predicates.attribute_names:
        raise CodedError("E_ATTR_MISMATCH", "attribute list does not match the predicate matrix")
    rows = predicates.rows.astype(np.float64)
    if np.any(rows.sum(axis=1) == 0.0):
        empty = [n for n, r in zip(predicates.class_names, predicates.rows) if r.sum() == 0]
        raise CodedError("E_EMPTY_INDICATOR", f"classes with no active attribute: {empty}")
    margins = _check_margins(margins, predicates.n_classes)
    Va = attribute_base_matrix(table, attr_names)
    Vc = np.stack([embed_name(table, name) for name in predicates.class_names])
    loss, grads, _ = _pbt_core(params, Va, Vc, rows, margins, lam)
    return loss, grads


# --- training loop ---

@dataclass
class _Resolved:
    """Name lookups and margin matrix resolved once per run."""

    Va: np.ndarray
    Vc: np.ndarray
    margins: np.ndarray
    train_classes: tuple[str, ...]
    weight_rows: np.ndarray | None = None  # image mode: N x A normalized posteriors
    labels: np.ndarray | None = None
    predicate_rows: np.ndarray | None = None  # predicate mode: K x A binary


def _resolve(config: TrainingConfig, data: TrainingData) -> _Resolved:
    table = data.table
    attr_names = tuple(data.attr_names)
    predicates = data.predicates
    if predicates is not None:
        if attr_names != predicates.attribute_names:
            raise CodedError("E_ATTR_MISMATCH", "attribute list does not match the predicate matrix")
        train_classes = predicates.class_names
        margins = margin_matrix(predicates)
    else:
        if config.mode == "pbt":
            raise CodedError("E_MISSING_PREDICATES", "predicate mode requires a predicate matrix")
        if not data.profiles:
            raise CodedError("E_MISSING_PROFILES", "image mode requires profiles")
        train_classes = tuple(sorted({p.true_class for p in data.profiles}))
        margins = constant_margin_matrix(len(train_classes), config.const_margin)
    if len(train_classes) < 2:
        raise CodedError("E_TOO_FEW_CLASSES", "training needs at least 2 classes")

    Va = attribute_base_matrix(table, attr_names)
    Vc = np.stack([embed_name(table, name) for name in train_classes])
    resolved = _Resolved(Va=Va, Vc=Vc, margins=margins, train_classes=train_classes)

    if config.mode == "ibt":
        if not data.profiles:
            raise CodedError("E_MISSING_PROFILES", "image mode requires profiles")
        class_index = {name: j for j, name in enumerate(train_classes)}
        labels = np.empty(len(data.profiles), dtype=np.intp)
        for i, profile in enumerate(data.profiles):
            if profile.true_class not in class_index:
                raise CodedError(
                    "E_UNKNOWN_TRUE_CLASS",
                    f"image {profile.image_id!r} labeled {profile.true_class!r}, not a training class",
                )
            labels[i] = class_index[profile.true_class]
        resolved.weight_rows = _profile_weights(data.profiles, len(attr_names))
        resolved.labels = labels
    else:
        rows = predicates.rows.astype(np.float64)
        if np.any(rows.sum(axis=1) == 0.0):
            raise CodedError("E_EMPTY_INDICATOR", "a training class has no active attribute")
        resolved.predicate_rows = rows
    return resolved


def _full_objective(config: TrainingConfig, resolved: _Resolved, params: NetworkParams) -> float:
    if config.mode == "ibt":
        loss, _, _ = _ibt_core(
            params, resolved.Va, resolved.Vc, resolved.weight_rows, resolved.labels,
            resolved.margins, config.lam,
        )
    else:
        loss, _, _ = _pbt_core(
            params, resolved.Va, resolved.Vc, resolved.predicate_rows, resolved.margins, config.lam
        )
    return loss


def _checkpoints(config: TrainingConfig) -> list[int]:
    points = sorted({int(c) for c in config.iteration_checkpoints if 1 <= int(c) <= config.iterations})
    if not points or points[-1] != config.iterations:
        points.append(config.iterations)
    return points


def _train_loop(
    config: TrainingConfig,
    data: TrainingData,
    validate: Callable[[NetworkParams], float] | None = None,
) -> tuple[NetworkParams, TrainingHistory]:
    resolved = _resolve(config, data)
    init_seed, shuffle_seed = (int(s) for s in np.random.SeedSequence(config.seed).generate_state(2))
    params = init_network(data.table.dim, config.h1, config.d, seed=init_seed)
    state = init_adam(params, lr=config.lr)
    checkpoints = set(_checkpoints(config))

    records = [HistoryRecord(0, _full_objective(config, resolved, params))]
    rng = np.random.default_rng(shuffle_seed)
    if config.mode == "ibt" and config.batch_size != FULL_BATCH:
        n = resolved.weight_rows.shape[0]
        order = rng.permutation(n)
        pos = 0
    for step in range(1, config.iterations + 1):
        if config.mode == "ibt":
            if config.batch_size == FULL_BATCH:
                batch_weights, batch_labels = resolved.weight_rows, resolved.labels
            else:
                if pos >= len(order):
                    order = rng.permutation(len(order))
                    pos = 0
                idx = order[pos : pos + config.batch_size]
                pos += config.batch_size
                batch_weights, batch_labels = resolved.weight_rows[idx], resolved.labels[idx]
            _, grads, _ = _ibt_core(
                params, resolved.Va, resolved.Vc, batch_weights, batch_labels,
                resolved.margins, config.lam,
            )
        else:
            _, grads, _ = _pbt_core(
                params, resolved.Va, resolved.Vc, resolved.predicate_rows, resolved.margins, config.lam
            )
        params, state = adam_step(params, state, grads)
        if step in checkpoints:
            val = validate(params) if validate is not None else None
            records.append(HistoryRecord(step, _full_objective(config, resolved, params), val))
    return params, TrainingHistory(records)


def train(config: TrainingConfig, data: TrainingData) -> tuple[NetworkParams, TrainingHistory]:
    """Run the configured number of optimizer steps; deterministic per config."""
    return _train_loop(config, data)


# --- cross-validation ---

@dataclass
class CVResult:
    h1: int
    d: int
    iterations: int
    fold_accuracies: list[float]
    grid: list[dict]
    history: TrainingHistory


def _fold_splits(class_names: Sequence[str], folds: int, seed: int) -> list[list[str]]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(class_names))
    return [sorted(chunk.tolist()) for chunk in np.array_split(perm, folds)]


def cross_validate(config: TrainingConfig, data: TrainingData) -> CVResult:
    """Grid-search hidden width, output width and iteration count.

    Classes are split into folds (a held-out class never contributes images
    or predicate rows to its fold's training). Validation accuracy is the
    normalized accuracy over the held-out classes: their images when
    profiles exist, otherwise one pseudo-image per class whose posteriors
    are its predicate row. Ties prefer fewer iterations, then a smaller
    hidden width, then a smaller output width.
    """
    resolved = _resolve(config, data)
    classes = list(resolved.train_classes)
    if len(classes) < 4 or len(classes) < 2 * config.cv_folds:
        raise CodedError(
            "E_TOO_FEW_CLASSES",
            f"{len(classes)} classes cannot give {config.cv_folds} folds with >= 2 held-out classes each",
        )
    hidden_grid = tuple(config.hidden_grid) or (config.h1,)
    outdim_grid = tuple(config.outdim_grid) or (config.d,)
    checkpoints = _checkpoints(config)
    max_iters = checkpoints[-1]

    fold_index_groups = _fold_splits(classes, config.cv_folds, config.seed)

    fold_datasets = []
    for held_idx in fold_index_groups:
        held = [classes[i] for i in held_idx]
        held_set = set(held)
        rest = [name for name in classes if name not in held_set]
        rest_set = set(rest)
        if data.predicates is not None:
            fold_predicates = data.predicates.subset(rest)
        else:
            fold_predicates = None
        fold_profiles = None
        if config.mode == "ibt":
            fold_profiles = [p for p in data.profiles if p.true_class in rest_set]
        if data.profiles:
            val_profiles = [p for p in data.profiles if p.true_class in held_set]
        else:
            val_profiles = [
                AttributeProfile(f"predicate:{name}", name, data.predicates.row(name).astype(np.float64))
                for name in held
            ]
        fold_datasets.append(
            (TrainingData(data.table, data.attr_names, fold_predicates, fold_profiles), val_profiles, held)
        )

    grid_records: list[dict] = []
    for h1, d in itertools.product(hidden_grid, outdim_grid):
        fold_curves = []  # per fold: (val accuracy per checkpoint, history)
        for fold_data, val_profiles, held in fold_datasets:
            fold_config = replace(
                config, h1=h1, d=d, iterations=max_iters, iteration_checkpoints=tuple(checkpoints),
                hidden_grid=(), outdim_grid=(),
            )

            def validate(params):
                report = evaluate(params, data.table, data.attr_names, val_profiles, held)
                return report.normalized_accuracy

            _, history = _train_loop(fold_config, fold_data, validate=validate)
            curve = {r.iteration: r for r in history.records}
            fold_curves.append((curve, history))
        for n_iter in checkpoints:
            mean_acc = float(np.mean([curves[0][n_iter].val_accuracy for curves in fold_curves]))
            grid_records.append(
                {
                    "h1": h1,
                    "d": d,
                    "iterations": n_iter,
                    "mean_accuracy": mean_acc,
                    "fold_accuracies": [curves[0][n_iter].val_accuracy for curves in fold_curves],
                    "_curves": fold_curves,
                }
            )

    best = max(grid_records, key=lambda r: (r["mean_accuracy"], -r["iterations"], -r["h1"], -r["d"]))
    mean_records = []
    fold_curves = best["_curves"]
    iteration_axis = sorted({rec.iteration for _, hist in fold_curves for rec in hist.records})
    for it in iteration_axis:
        objectives = [curve[it].objective for curve, _ in fold_curves]
        vals = [curve[it].val_accuracy for curve, _ in fold_curves]
        mean_val = None if any(v is None for v in vals) else float(np.mean(vals))
        mean_records.append(HistoryRecord(it, float(np.mean(objectives)), mean_val))
    for record in grid_records:
        record.pop("_curves", None)
    return CVResult(
        h1=best["h1"],
        d=best["d"],
        iterations=best["iterations"],
        fold_accuracies=best["fold_accuracies"],
        grid=grid_records,
        history=TrainingHistory(mean_records),
    )


# --- gradient verification ---

def finite_diff_check(seed: int, mode: str, step: float = 1e-5) -> float:
    """Compare analytic loss gradients against central finite differences.

    Builds a random small instance from the seed and returns the maximum
    relative error max|g_a - g_n| / max(|g_a|, |g_n|, 1e-8) over all
    parameters. Two kinds of ill-conditioned draws are rejected and redrawn:
    instances with a hinge argument within 1e-4 of zero (at the kink the
    gradient is undefined, so a difference quotient measures nothing), and
    instances where some gradient component sits below the difference
    quotient's float64 rounding floor (~eps * loss / step), where the
    relative metric amplifies pure round-off.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    for attempt in range(64):
        rng = np.random.default_rng([seed, attempt])
        instance = _random_instance(rng, mode)
        params, loss_fn, hinge_args = instance
        if hinge_args.size and np.min(np.abs(hinge_args)) < 1e-4:
            continue  # too close to a kink for differencing
        loss, grads = loss_fn(params)
        analytic = params_to_vector(grads)
        noise_floor = 1e-6 * max(1.0, loss)
        all_inactive = not np.any(analytic)
        if not all_inactive and np.min(np.abs(analytic)) < noise_floor:
            continue  # a component this small cannot be resolved at this step size
        theta = params_to_vector(params)
        numeric = np.empty_like(theta)
        for i in range(theta.size):
            bumped = theta.copy()
            bumped[i] = theta[i] + step
            hi, _ = loss_fn(params_from_vector(params, bumped))
            bumped[i] = theta[i] - step
            lo, _ = loss_fn(params_from_vector(params, bumped))
            numeric[i] = (hi - lo) / (2.0 * step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        return float(np.max(np.abs(analytic - numeric) / denom))
    raise RuntimeError("could not draw a well-conditioned instance in 64 attempts")


def _distinct_binary_rows(rng: np.random.Generator, k: int, n_attrs: int) -> np.ndarray:
    rows: list[tuple[int, ...]] = []
    while len(rows) < k:
        row = tuple(int(b) for b in rng.integers(0, 2, size=n_attrs))
        if sum(row) == 0 or row in rows:
            continue
        rows.append(row)
    return np.array(rows, dtype=np.uint8)


def _random_instance(rng: np.random.Generator, mode: str):
    d0 = int(rng.integers(4, 13))
    h1 = int(rng.integers(3, 9))
    d = int(rng.integers(2, 7))
    n_attrs = int(rng.integers(3, 9))
    n_classes = int(rng.integers(3, 7))
    attr_names = tuple(f"a{i}" for i in range(n_attrs))
    class_names = tuple(f"c{j}" for j in range(n_classes))
    entries = {name: rng.uniform(-1.0, 1.0, size=d0) for name in attr_names + class_names}
    table = EmbeddingTable(dim=d0, entries=entries)
    predicates = PredicateMatrix(class_names, attr_names, _distinct_binary_rows(rng, n_classes, n_attrs))
    margins = margin_matrix(predicates)
    params = init_network(d0, h1, d, seed=int(rng.integers(0, 2**32)))

    if mode == "ibt":
        profiles = [
            AttributeProfile(f"img{i}", class_names[int(rng.integers(n_classes))],
                             rng.uniform(0.0, 1.0, size=n_attrs))
            for i in range(5)
        ]
        class_index = {name: j for j, name in enumerate(class_names)}
        labels = np.array([class_index[p.true_class] for p in profiles], dtype=np.intp)
        weight_rows = _profile_weights(profiles, n_attrs)
        Va = attribute_base_matrix(table, attr_names)
        Vc = np.stack([embed_name(table, name) for name in class_names])
        _, _, hinge_args = _ibt_core(params, Va, Vc, weight_rows, labels, margins, 0.0)

        def loss_fn(p):
            return ibt_loss_and_grad(p, table, attr_names, profiles, class_names, margins)

    else:
        Va = attribute_base_matrix(table, attr_names)
        Vc = np.stack([embed_name(table, name) for name in class_names])
        _, _, hinge_args = _pbt_core(params, Va, Vc, predicates.rows.astype(np.float64), margins, 0.0)

        def loss_fn(p):
            return pbt_loss_and_grad(p, table, attr_names, predicates, margins)

    return params, loss_fn, hinge_args
