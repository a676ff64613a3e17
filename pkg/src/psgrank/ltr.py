"""Linear ranking models: grade derivation, a pairwise hinge-loss trainer,
and a listwise coordinate-ascent trainer optimizing NDCG@10.

Both trainers are deterministic for a fixed (data, hyperparams, seed)
triple; identical runs serialize to identical bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import FeatureSchema, FeatureVector, SchemaError

MODEL_VERSION = 1

# Grade buckets over the fraction of relevant characters in a passage.
_RFRAC_THRESHOLDS = (0.10, 0.25, 0.50, 0.75)

# Fixed line-search grid for coordinate ascent: multiplicative probes plus
# additive probes so a zero weight can leave the origin.
_CA_MULTIPLIERS = (0.0, 0.5, 0.8, 1.25, 2.0, -1.0)
_CA_STEPS = (0.05, 0.2, 1.0)


class TrainingError(ValueError):
    """Raised when the training data carries no usable signal."""


def bucket_grade(rfrac: float) -> int:
    """Map a relevant-character fraction in [0,1] to a 0..4 grade."""
    if not 0.0 <= rfrac <= 1.0:
        raise ValueError(f"rfrac must lie in [0,1], got {rfrac}")
    grade = 0
    for threshold in _RFRAC_THRESHOLDS:
        if rfrac >= threshold:
            grade += 1
    return grade


@dataclass(frozen=True)
class GradedExample:
    query_id: str
    item_id: str
    vector: FeatureVector
    grade: int

    def __post_init__(self):
        if self.grade < 0:
            raise ValueError(f"grade must be >= 0, got {self.grade}")


@dataclass(frozen=True)
class LinearModel:
    """A weight vector over a schema, with training provenance."""

    schema: FeatureSchema
    weights: tuple[float, ...]
    trainer: str
    hyperparams: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != len(self.schema):
            raise SchemaError(
                f"{len(self.weights)} weights for schema {self.schema.name!r} "
                f"of length {len(self.schema)}"
            )

    def save(self, path: str | Path) -> None:
        payload = {
            "version": MODEL_VERSION,
            "trainer": self.trainer,
            "schema": {"name": self.schema.name, "features": list(self.schema.features)},
            "weights": list(self.weights),
            "hyperparams": self.hyperparams,
        }
        Path(path).write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "LinearModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version: {payload.get('version')}")
        schema = FeatureSchema(payload["schema"]["name"], tuple(payload["schema"]["features"]))
        return cls(
            schema=schema,
            weights=tuple(payload["weights"]),
            trainer=payload["trainer"],
            hyperparams=payload["hyperparams"],
        )


def _group_by_query(data: Sequence[GradedExample]) -> dict[str, list[GradedExample]]:
    groups: dict[str, list[GradedExample]] = {}
    for ex in data:
        groups.setdefault(ex.query_id, []).append(ex)
    return groups


def _check_schema(data: Sequence[GradedExample]) -> FeatureSchema:
    if not data:
        raise TrainingError("no training examples")
    schema = data[0].vector.schema
    for ex in data:
        if ex.vector.schema != schema:
            raise SchemaError("training examples mix feature schemas")
    return schema


def _difference_matrix(
    data: Sequence[GradedExample], max_pairs: int, seed: int
) -> np.ndarray:
    """Within-query difference vectors x_i - x_j for grade_i > grade_j."""
    diffs = []
    groups = _group_by_query(data)
    for qid in sorted(groups):
        group = sorted(groups[qid], key=lambda e: e.item_id)
        for hi in group:
            for lo in group:
                if hi.grade > lo.grade:
                    diffs.append(np.subtract(hi.vector.values, lo.vector.values))
    if not diffs:
        raise TrainingError("no training signal: every within-query pair has equal grades")
    mat = np.array(diffs, dtype=float)
    if len(mat) > max_pairs:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(mat), size=max_pairs, replace=False))
        mat = mat[keep]
    return mat


def pairwise_error_count(weights: np.ndarray, diffs: np.ndarray) -> int:
    """Pairs not strictly ordered correctly by the weight vector."""
    return int(np.sum(diffs @ weights <= 0.0))


def train_pairwise(
    data: Sequence[GradedExample],
    c: float = 0.01,
    epochs: int = 200,
    seed: int = 0,
    learning_rate: float = 0.5,
    max_pairs: int = 10**6,
) -> LinearModel:
    """Hinge-loss pairwise trainer (0.5*||w||^2 + c * sum hinge margins).

    Full-batch subgradient descent with a 1/(1+t) decaying step; the model
    returned is the epoch with the fewest misordered training pairs (ties
    favor the earlier epoch). Raises TrainingError when no within-query
    pair of distinct grades exists.
    """
    schema = _check_schema(data)
    diffs = _difference_matrix(data, max_pairs, seed)
    w = np.zeros(len(schema))
    best_w = w.copy()
    best_err = pairwise_error_count(w, diffs)
    for t in range(epochs):
        margins = diffs @ w
        violating = margins < 1.0
        grad = w - c * diffs[violating].sum(axis=0)
        w = w - (learning_rate / (1.0 + t)) * grad
        err = pairwise_error_count(w, diffs)
        if err < best_err:
            best_err = err
            best_w = w.copy()
    return LinearModel(
        schema=schema,
        weights=tuple(float(x) for x in best_w),
        trainer="pairwise_hinge",
        hyperparams={
            "c": c,
            "epochs": epochs,
            "learning_rate": learning_rate,
            "max_pairs": max_pairs,
            "seed": seed,
        },
    )


def dcg_at_k(grades_in_rank_order: Sequence[int], k: int) -> float:
    return sum(
        (2.0**g - 1.0) / math.log2(r + 1)
        for r, g in enumerate(grades_in_rank_order[:k], start=1)
    )


def ndcg_at_k(ranked, grades: Mapping[str, int], k: int = 10) -> float:
    """NDCG@k with 2^grade - 1 gains; 0 when nothing relevant is judged.

    ``ranked`` may be a RankedList or any iterable of (item_id, score).
    The ideal ranking considers every item in ``grades``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    in_order = [grades.get(item_id, 0) for item_id, _ in ranked]
    ideal = sorted(grades.values(), reverse=True)
    idcg = dcg_at_k(ideal, k)
    if idcg == 0.0:
        return 0.0
    return dcg_at_k(in_order, k) / idcg


def score(model: LinearModel, vectors: Sequence[FeatureVector]):
    """Rank one query's vectors by w . x; ties break by ascending item id."""
    from .rank import RankedList

    if not vectors:
        raise ValueError("no vectors to score")
    qid = vectors[0].query_id
    w = np.array(model.weights)
    scores = {}
    for v in vectors:
        if v.schema != model.schema:
            raise SchemaError(
                f"vector schema {v.schema.name!r} does not match model "
                f"schema {model.schema.name!r}"
            )
        if v.query_id != qid:
            raise ValueError("score() expects vectors of a single query")
        scores[v.item_id] = float(np.dot(w, v.values))
    return RankedList.from_scores(qid, scores)


def _mean_ndcg(
    weights: np.ndarray,
    matrices: Sequence[tuple[np.ndarray, list[str], dict[str, int]]],
    k: int,
) -> float:
    total = 0.0
    for mat, item_ids, grades in matrices:
        raw = mat @ weights
        order = sorted(zip(item_ids, raw), key=lambda kv: (-kv[1], kv[0]))
        total += ndcg_at_k(order, grades, k)
    return total / len(matrices)


def train_coordinate_ascent(
    data: Sequence[GradedExample],
    restarts: int = 2,
    seed: int = 0,
    max_passes: int = 25,
    k: int = 10,
    trace: list | None = None,
) -> LinearModel:
    """Listwise trainer: cyclic per-coordinate line search on mean NDCG@k.

    Candidate moves come from a fixed multiplicative/additive grid and a
    step is accepted only when the objective strictly increases, so the
    accepted-objective trajectory is monotone. Restart 0 starts from
    uniform weights, later restarts from seeded random directions; the
    best restart wins (ties favor the earlier restart). ``max_passes=0``
    returns the uniform initial weights unchanged. When ``trace`` is given,
    (restart, objective) is appended at the start and after every accepted
    step.
    """
    schema = _check_schema(data)
    groups = _group_by_query(data)
    if all(len({ex.grade for ex in g}) < 2 for g in groups.values()):
        raise TrainingError("no training signal: every within-query pair has equal grades")
    matrices = []
    for qid in sorted(groups):
        group = sorted(groups[qid], key=lambda e: e.item_id)
        mat = np.array([ex.vector.values for ex in group], dtype=float)
        matrices.append((mat, [ex.item_id for ex in group], {ex.item_id: ex.grade for ex in group}))

    n = len(schema)
    rng = np.random.default_rng(seed)
    best_w = None
    best_obj = -1.0
    for restart in range(max(restarts, 1)):
        if restart == 0:
            w = np.full(n, 1.0 / n)
        else:
            w = rng.standard_normal(n)
            norm = np.linalg.norm(w)
            w = w / norm if norm > 0 else np.full(n, 1.0 / n)
        obj = _mean_ndcg(w, matrices, k)
        if trace is not None:
            trace.append((restart, obj))
        if max_passes == 0 and restart == 0:
            return LinearModel(
                schema=schema,
                weights=tuple(float(x) for x in w),
                trainer="coordinate_ascent",
                hyperparams={"restarts": restarts, "max_passes": 0, "k": k, "seed": seed},
            )
        for _ in range(max_passes):
            improved = False
            for coord in range(n):
                current = w[coord]
                candidates = [current * m for m in _CA_MULTIPLIERS]
                candidates += [current + s for s in _CA_STEPS]
                candidates += [current - s for s in _CA_STEPS]
                best_cand = None
                best_cand_obj = obj
                for cand in candidates:
                    if cand == current:
                        continue
                    w[coord] = cand
                    cand_obj = _mean_ndcg(w, matrices, k)
                    if cand_obj > best_cand_obj:
                        best_cand_obj = cand_obj
                        best_cand = cand
                if best_cand is not None:
                    w[coord] = best_cand
                    obj = best_cand_obj
                    improved = True
                    if trace is not None:
                        trace.append((restart, obj))
                else:
                    w[coord] = current
            if not improved:
                break
        if obj > best_obj:
            best_obj = obj
            best_w = w.copy()
    return LinearModel(
        schema=schema,
        weights=tuple(float(x) for x in best_w),
        trainer="coordinate_ascent",
        hyperparams={"restarts": restarts, "max_passes": max_passes, "k": k, "seed": seed},
    )
