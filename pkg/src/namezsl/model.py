"""The zero-shot model: embedding functions, compatibility scores, evaluation.

An image is represented by its per-attribute posterior probabilities. Its
embedding is the posterior-weighted, normalization-divided sum of the
transformed attribute-name vectors; a class embeds as its transformed name
vector. Classification picks the candidate class with the highest cosine
similarity. A binary indicator row embeds the same way an image would with
posteriors equal to the indicator, which makes text-only training possible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingTable, embed_name, normalize_name
from .errors import CodedError
from .network import IDENTITY, Transform, transform_vectors

__all__ = [
    "AttributeProfile",
    "EvaluationReport",
    "attribute_base_matrix",
    "image_embedding",
    "predicate_embedding",
    "class_embedding",
    "cosine",
    "classify",
    "evaluate",
    "nearest_classes",
]


@dataclass(frozen=True)
class AttributeProfile:
    """One image: id, true class label, per-attribute posterior probabilities."""

    image_id: str
    true_class: str
    posteriors: np.ndarray = field(repr=False)

    def __post_init__(self):
        post = np.asarray(self.posteriors, dtype=np.float64)
        post.flags.writeable = False
        object.__setattr__(self, "posteriors", post)
        if post.ndim != 1 or post.size < 1:
            raise ValueError(f"posteriors must be a non-empty vector, got shape {post.shape}")
        if not np.all(np.isfinite(post)) or post.min() < 0.0 or post.max() > 1.0:
            raise CodedError(
                "E_OUT_OF_RANGE", f"posteriors of image {self.image_id!r} must lie in [0, 1]"
            )


@dataclass
class EvaluationReport:
    """Per-class top-1 accuracies, their unweighted mean, and confusion counts."""

    per_class_accuracy: dict[str, float]
    normalized_accuracy: float
    confusion: dict[tuple[str, str], int]
    n_images: int


def attribute_base_matrix(table: EmbeddingTable, attr_names: Sequence[str]) -> np.ndarray:
    """Stack the (untransformed) name embeddings of the attributes, A x d0."""
    if not attr_names:
        raise ValueError("attribute list is empty")
    return np.stack([embed_name(table, name) for name in attr_names])


def _weighted_embedding(
    transform: Transform, table: EmbeddingTable, attr_names: Sequence[str], weights: np.ndarray
) -> np.ndarray:
    transformed = transform_vectors(transform, attribute_base_matrix(table, attr_names))
    return (weights @ transformed) / weights.sum()


def image_embedding(
    transform: Transform,
    table: EmbeddingTable,
    attr_names: Sequence[str],
    profile: AttributeProfile,
) -> np.ndarray:
    """Posterior-weighted sum of transformed attribute vectors, divided by the
    posterior total so images with different attribute activity are comparable."""
    weights = np.asarray(profile.posteriors, dtype=np.float64)
    if weights.shape != (len(attr_names),):
        raise CodedError(
            "E_DIM_MISMATCH",
            f"profile {profile.image_id!r} has {weights.size} posteriors for {len(attr_names)} attributes",
        )
    if weights.sum() <= 0.0:
        raise CodedError("E_DEGENERATE_PROFILE", f"image {profile.image_id!r} has all-zero posteriors")
    return _weighted_embedding(transform, table, attr_names, weights)


def predicate_embedding(
    transform: Transform,
    table: EmbeddingTable,
    attr_names: Sequence[str],
    indicator: np.ndarray,
) -> np.ndarray:
    """Mean of the transformed vectors of the attributes flagged in ``indicator``.

    Identical, bit for bit, to :func:`image_embedding` with posteriors set to
    the indicator: both run the same weighted-sum computation.
    """
    weights = np.asarray(indicator, dtype=np.float64)
    if weights.shape != (len(attr_names),):
        raise CodedError(
            "E_DIM_MISMATCH", f"indicator has {weights.size} bits for {len(attr_names)} attributes"
        )
    if weights.sum() <= 0.0:
        raise CodedError("E_EMPTY_INDICATOR", "indicator has no active attribute")
    return _weighted_embedding(transform, table, attr_names, weights)


def class_embedding(transform: Transform, table: EmbeddingTable, class_name: str) -> np.ndarray:
    """Transformed embedding of the class name."""
    base = embed_name(table, class_name)
    return transform_vectors(transform, base[None, :])[0]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity, clipped to [-1, 1] against float round-off."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise CodedError("E_DIM_MISMATCH", f"vectors have shapes {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise CodedError("E_ZERO_NORM", "cosine undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _class_matrix(transform: Transform, table: EmbeddingTable, names: Sequence[str]) -> np.ndarray:
    base = np.stack([embed_name(table, name) for name in names])
    return transform_vectors(transform, base)


def _score_matrix(
    transform: Transform,
    table: EmbeddingTable,
    attr_names: Sequence[str],
    profiles: Sequence[AttributeProfile],
    candidates: Sequence[str],
) -> np.ndarray:
    """Cosine compatibility of every profile against every candidate class."""
    transformed_attrs = transform_vectors(transform, attribute_base_matrix(table, attr_names))
    weights = np.empty((len(profiles), len(attr_names)))
    for i, profile in enumerate(profiles):
        if profile.posteriors.shape != (len(attr_names),):
            raise CodedError(
                "E_DIM_MISMATCH",
                f"profile {profile.image_id!r} has {profile.posteriors.size} posteriors "
                f"for {len(attr_names)} attributes",
            )
        total = profile.posteriors.sum()
        if total <= 0.0:
            raise CodedError("E_DEGENERATE_PROFILE", f"image {profile.image_id!r} has all-zero posteriors")
        weights[i] = profile.posteriors / total
    embedded = weights @ transformed_attrs
    class_vecs = _class_matrix(transform, table, candidates)
    norms_x = np.linalg.norm(embedded, axis=1)
    norms_y = np.linalg.norm(class_vecs, axis=1)
    if np.any(norms_x == 0.0) or np.any(norms_y == 0.0):
        raise CodedError("E_ZERO_NORM", "cosine undefined for a zero vector")
    return (embedded @ class_vecs.T) / (norms_x[:, None] * norms_y[None, :])


def classify(
    transform: Transform,
    table: EmbeddingTable,
    attr_names: Sequence[str],
    profile: AttributeProfile,
    candidates: Sequence[str],
) -> tuple[str, dict[str, float]]:
    """Score every candidate and return the argmax; ties go to list order."""
    if not candidates:
        raise ValueError("candidate list is empty")
    row = _score_matrix(transform, table, attr_names, [profile], candidates)[0]
    scores = {name: float(s) for name, s in zip(candidates, row)}
    best = candidates[int(np.argmax(row))]
    return best, scores


def evaluate(
    transform: Transform,
    table: EmbeddingTable,
    attr_names: Sequence[str],
    testset: Sequence[AttributeProfile],
    candidates: Sequence[str],
) -> EvaluationReport:
    """Normalized accuracy: the unweighted mean of per-class top-1 accuracies."""
    if not candidates:
        raise ValueError("candidate list is empty")
    candidate_idx = {name: j for j, name in enumerate(candidates)}
    for profile in testset:
        if profile.true_class not in candidate_idx:
            raise CodedError(
                "E_UNKNOWN_TRUE_CLASS",
                f"image {profile.image_id!r} labeled {profile.true_class!r}, not a candidate",
            )
    totals = {name: 0 for name in candidates}
    correct = {name: 0 for name in candidates}
    confusion: dict[tuple[str, str], int] = {}
    if testset:
        scores = _score_matrix(transform, table, attr_names, testset, candidates)
        predictions = np.argmax(scores, axis=1)
        for profile, pred_j in zip(testset, predictions):
            predicted = candidates[int(pred_j)]
            totals[profile.true_class] += 1
            if predicted == profile.true_class:
                correct[profile.true_class] += 1
            key = (profile.true_class, predicted)
            confusion[key] = confusion.get(key, 0) + 1
    missing = [name for name in candidates if totals[name] == 0]
    if missing:
        raise CodedError("E_MISSING_CLASS", f"no test images for candidates {missing}")
    per_class = {name: correct[name] / totals[name] for name in candidates}
    normalized = float(np.mean(list(per_class.values())))
    return EvaluationReport(
        per_class_accuracy=per_class,
        normalized_accuracy=normalized,
        confusion=confusion,
        n_images=len(testset),
    )


def nearest_classes(
    transform: Transform,
    table: EmbeddingTable,
    query: str,
    pool: Sequence[str],
    k: int,
    transformed: bool = True,
) -> list[tuple[str, float]]:
    """The k pool classes most cosine-similar to the query, descending.

    ``transformed=False`` ranks raw name embeddings regardless of the given
    transform. The query itself (any pool entry normalizing to the same
    tokens) is excluded; ties keep pool order.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    active: Transform = transform if transformed else IDENTITY
    query_tokens = normalize_name(query)
    others = [name for name in pool if normalize_name(name) != query_tokens]
    if k > len(others):
        raise CodedError("E_K_TOO_LARGE", f"k={k} but only {len(others)} pool classes besides the query")
    qvec = class_embedding(active, table, query)
    pool_vecs = _class_matrix(active, table, others)
    sims = [cosine(qvec, vec) for vec in pool_vecs]
    order = sorted(range(len(others)), key=lambda i: -sims[i])
    return [(others[i], sims[i]) for i in order[:k]]
