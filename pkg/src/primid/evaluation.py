"""Biometric evaluation protocols.

Folds split by individual (never by image). Verification scores come from
leave-one-image-out genuine comparisons and query-vs-other-template
impostor comparisons, both max-fused. TAR@FAR uses the empirical impostor
quantile with an inclusive >= threshold; closed-set Rank-1 and open-set
DIR average 100 seeded probe/gallery trials. All randomness derives from
one explicit seed with counter-derived trial seeds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ProtocolError,
    ReportError,
    SampleSizeError,
    ShapeError,
    SplitError,
)

logger = logging.getLogger(__name__)

METRIC_KEYS = ("tar_1pct_far", "tar_01pct_far", "closed_set_rank1", "open_set_dir_1pct_far")

IMPOSTOR_COUNT_NOTE = (
    "Impostor comparisons pair each query with every non-self template: a fold "
    "with m individuals of n images each yields n*m genuine and n*m*(m-1) "
    "impostor scores (each query meets m-1 other templates, not m)."
)


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int


@dataclass
class ScoreSet:
    genuine: list[float]
    impostor: list[float]

    def validate(self) -> None:
        for name, values in (("genuine", self.genuine), ("impostor", self.impostor)):
            if not values:
                raise SampleSizeError(f"{name} score list is empty")
            arr = np.asarray(values)
            if np.any(arr < -1.0 - 1e-9) or np.any(arr > 1.0 + 1e-9):
                raise ShapeError(f"{name} scores outside [-1, 1]")


@dataclass
class ScoreRow:
    probe_image: str
    subject_id: str
    candidate_id: str
    score: float
    label: str


def kfold_split(individual_ids: Sequence[str], k: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Shuffle individuals with the seeded PRNG and partition into k
    near-equal test sets (earlier folds take the remainder)."""
    ids = list(individual_ids)
    if k < 1 or k > len(ids):
        raise SplitError(f"cannot split {len(ids)} individuals into {k} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    base, extra = divmod(len(ids), k)
    folds = []
    start = 0
    for fold in range(k):
        size = base + (1 if fold < extra else 0)
        test = tuple(shuffled[start:start + size])
        train = tuple(shuffled[:start] + shuffled[start + size:])
        folds.append(FoldSplit(fold_index=fold, train_ids=train, test_ids=test, seed=seed))
        start += size
    return folds


def _as_indexed(test_set: Mapping, model=None) -> dict[str, tuple[list[str], np.ndarray]]:
    """Normalize a test set to id -> ([image_ref, ...], (n, d) embeddings).

    Values may be (n, d) float embeddings, (n, h, w, 3) uint8 crops (with
    ``model`` supplied), or sequences of (ref, vector) pairs.
    """
    out = {}
    for ind_id in sorted(test_set):
        value = test_set[ind_id]
        if isinstance(value, np.ndarray) and value.ndim == 4:
            if model is None:
                raise ProtocolError("raw crops supplied without a model to embed them")
            refs = [f"{ind_id}#{i}" for i in range(value.shape[0])]
            embs = model.embed(value)
        elif isinstance(value, np.ndarray):
            refs = [f"{ind_id}#{i}" for i in range(value.shape[0])]
            embs = np.asarray(value, dtype=np.float64)
        else:
            refs = [ref for ref, _ in value]
            embs = np.stack([np.asarray(vec, dtype=np.float64) for _, vec in value])
        out[ind_id] = (refs, np.asarray(embs, dtype=np.float64))
    return out


def _drop_singletons(indexed, protocol: str):
    kept = {}
    for ind_id, (refs, embs) in indexed.items():
        if embs.shape[0] < 2:
            logger.warning("%s: skipping %r (needs >= 2 images, has %d)",
                           protocol, ind_id, embs.shape[0])
            continue
        kept[ind_id] = (refs, embs)
    return kept


def verification_scores(test_set: Mapping, model=None,
                        with_rows: bool = False):
    """Leave-one-out genuine and query-vs-other-template impostor scores.

    Every image of every individual serves once as the query; its genuine
    score is the max similarity against the individual's remaining images,
    and it contributes one impostor score per other individual (max over
    that individual's full template). Individuals with fewer than two
    images are skipped with a warning.
    """
    indexed = _drop_singletons(_as_indexed(test_set, model), "verification")
    ids = sorted(indexed)
    scores = ScoreSet(genuine=[], impostor=[])
    rows: list[ScoreRow] = []
    for subject in ids:
        refs, embs = indexed[subject]
        n = embs.shape[0]
        sims_self = np.clip(embs @ embs.T, -1.0, 1.0)
        for q in range(n):
            mask = np.arange(n) != q
            genuine = float(sims_self[q, mask].max())
            scores.genuine.append(genuine)
            if with_rows:
                rows.append(ScoreRow(refs[q], subject, subject, genuine, "genuine"))
            for other in ids:
                if other == subject:
                    continue
                _, other_embs = indexed[other]
                impostor = float(np.clip(other_embs @ embs[q], -1.0, 1.0).max())
                scores.impostor.append(impostor)
                if with_rows:
                    rows.append(ScoreRow(refs[q], subject, other, impostor, "impostor"))
    return (scores, rows) if with_rows else scores


def far_threshold(impostor: Sequence[float], far_target: float) -> float:
    """Smallest impostor-score threshold whose inclusive FAR does not exceed
    the target; one float step above the max when even that is too leaky."""
    imp = np.sort(np.asarray(impostor, dtype=np.float64))
    m = imp.size
    if far_target * m < 1:
        raise SampleSizeError(
            f"need >= {math.ceil(1 / far_target)} impostor scores for "
            f"FAR {far_target}, got {m}")
    # count of scores >= v is m - searchsorted_left(v)
    uniq = np.unique(imp)
    counts_ge = m - np.searchsorted(imp, uniq, side="left")
    ok = counts_ge / m <= far_target
    if np.any(ok):
        return float(uniq[np.argmax(ok)])
    return float(np.nextafter(uniq[-1], np.inf))


def tar_at_far(scores: ScoreSet, far_target: float) -> tuple[float, float]:
    """True accept rate at the FAR-calibrated threshold; returns (tar, thr)."""
    scores.validate()
    threshold = far_threshold(scores.impostor, far_target)
    genuine = np.asarray(scores.genuine, dtype=np.float64)
    return float(np.mean(genuine >= threshold)), threshold


def _trial_probe_indices(indexed, rng) -> dict[str, int]:
    return {ind_id: int(rng.integers(indexed[ind_id][1].shape[0]))
            for ind_id in sorted(indexed)}


def _batch_top1(probes: np.ndarray, gallery_matrix: np.ndarray,
                segments: list[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
    """Per-probe best gallery individual under max fusion.

    ``segments`` holds [start, stop) row ranges of ``gallery_matrix`` in
    ascending-id order; argmax takes the first maximum, so ties resolve to
    the smallest id. Returns (segment indices, scores).
    """
    sims = np.clip(probes @ gallery_matrix.T, -1.0, 1.0)
    per_ind = np.stack([sims[:, a:b].max(axis=1) for a, b in segments], axis=1)
    best = per_ind.argmax(axis=1)
    return best, per_ind[np.arange(len(probes)), best]


def _trial_gallery(indexed, picks):
    """Stack the gallery (probes removed) plus per-individual segments."""
    ids = sorted(indexed)
    parts, segments, start = [], [], 0
    for ind_id in ids:
        embs = indexed[ind_id][1]
        rest = np.delete(embs, picks[ind_id], axis=0)
        parts.append(rest)
        segments.append((start, start + rest.shape[0]))
        start += rest.shape[0]
    return ids, np.concatenate(parts, axis=0), segments


def closed_set_rank1(test_set: Mapping, trials: int = 100, seed: int = 0,
                     model=None) -> float:
    """Mean over trials of rank-1 accuracy with one random probe per
    individual and the remaining images as the gallery. Trial t draws its
    probe indices from default_rng([seed, t]), iterating individuals in
    ascending-id order."""
    indexed = _drop_singletons(_as_indexed(test_set, model), "closed-set")
    if not indexed:
        raise ProtocolError("no individuals with >= 2 images")
    accuracies = []
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        picks = _trial_probe_indices(indexed, rng)
        ids, gallery_matrix, segments = _trial_gallery(indexed, picks)
        probes = np.stack([indexed[ind_id][1][picks[ind_id]] for ind_id in ids])
        best, _ = _batch_top1(probes, gallery_matrix, segments)
        accuracies.append(float(np.mean(best == np.arange(len(ids)))))
    return float(np.mean(accuracies))


def open_set_dir(test_set: Mapping, distractors, far_target: float = 0.01,
                 trials: int = 100, seed: int = 0, model=None) -> float:
    """Mean detection-and-identification rate at the given FAR.

    Per trial the test set splits into probes and gallery as in closed-set;
    the threshold is calibrated so the fraction of distractor probes whose
    top-1 score clears it stays within the FAR target, and a mated probe
    counts only if it is rank-1 correct with a top-1 score at or above the
    threshold. Distractor individuals must be disjoint from the test set.
    """
    indexed = _drop_singletons(_as_indexed(test_set, model), "open-set")
    if not indexed:
        raise ProtocolError("no individuals with >= 2 images")
    if isinstance(distractors, np.ndarray) and distractors.ndim == 4:
        if model is None:
            raise ProtocolError("raw distractor crops supplied without a model")
        distractors = model.embed(distractors)
    distractors = np.asarray(distractors, dtype=np.float64)
    if distractors.ndim != 2 or distractors.shape[0] == 0:
        raise ProtocolError("open-set evaluation needs a non-empty distractor set")
    rates = []
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        picks = _trial_probe_indices(indexed, rng)
        ids, gallery_matrix, segments = _trial_gallery(indexed, picks)
        _, non_mated = _batch_top1(distractors, gallery_matrix, segments)
        threshold = far_threshold(non_mated, far_target)
        probes = np.stack([indexed[ind_id][1][picks[ind_id]] for ind_id in ids])
        best, scores = _batch_top1(probes, gallery_matrix, segments)
        hits = (best == np.arange(len(ids))) & (scores >= threshold)
        rates.append(float(np.mean(hits)))
    return float(np.mean(rates))


def template_size_sweep(test_set: Mapping, sizes: Sequence[int] | None = None,
                        far_target: float = 0.01, seed: int = 0,
                        model=None) -> list[tuple[int, float]]:
    """TAR@FAR as templates are truncated to n seeded-random entries.

    For each size n, every individual's template pool is a fixed seeded
    permutation truncated to n entries (genuine pools exclude the query
    first, so the full size reproduces verification_scores exactly).
    Sizes beyond every template's capacity are skipped with a warning.
    """
    indexed = _drop_singletons(_as_indexed(test_set, model), "template-sweep")
    if not indexed:
        raise ProtocolError("no individuals with >= 2 images")
    ids = sorted(indexed)
    max_size = max(embs.shape[0] for _, embs in indexed.values())
    if sizes is None:
        sizes = list(range(1, max_size + 1))
    perms = {ind_id: np.random.default_rng([seed, idx]).permutation(
        indexed[ind_id][1].shape[0]) for idx, ind_id in enumerate(ids)}
    results = []
    for size in sizes:
        if size < 1 or size > max_size:
            logger.warning("template sweep: size %d exceeds availability (max %d); skipped",
                           size, max_size)
            continue
        genuine, impostor = [], []
        for subject in ids:
            _, embs = indexed[subject]
            n = embs.shape[0]
            perm = perms[subject]
            for q in range(n):
                pool = [i for i in perm if i != q][:size]
                sims = np.clip(embs[pool] @ embs[q], -1.0, 1.0)
                genuine.append(float(sims.max()))
                for other in ids:
                    if other == subject:
                        continue
                    _, other_embs = indexed[other]
                    opool = perms[other][:min(size, other_embs.shape[0])]
                    impostor.append(float(np.clip(other_embs[opool] @ embs[q], -1.0, 1.0).max()))
        tar, _ = tar_at_far(ScoreSet(genuine=genuine, impostor=impostor), far_target)
        results.append((int(size), tar))
    return results


@dataclass
class EvalReport:
    """Per-fold metrics (percentages) plus their mean and sample std."""

    fold_metrics: list[dict]
    mean: dict
    std: dict
    notes: list[str] = field(default_factory=list)

    def to_json_obj(self) -> dict:
        return {
            "schema_version": 1,
            "metrics": list(METRIC_KEYS),
            "folds": self.fold_metrics,
            "mean": self.mean,
            "std": self.std,
            "notes": self.notes,
        }

    def to_text(self) -> str:
        lines = []
        header = (f"{'Fold':<6}{'Verification':>14}{'':>14}{'Closed-set':>14}"
                  f"{'Open-set':>14}")
        sub = (f"{'':<6}{'1% FAR':>14}{'0.1% FAR':>14}{'Rank-1':>14}{'Rank-1':>14}")
        lines.append(header)
        lines.append(sub)
        for i, fold in enumerate(self.fold_metrics):
            lines.append(f"{i:<6}" + "".join(
                f"{fold[key]:>14.2f}" for key in METRIC_KEYS))
        lines.append(f"{'mean':<6}" + "".join(
            f"{self.mean[key]:>14.2f}" for key in METRIC_KEYS))
        lines.append(f"{'std':<6}" + "".join(
            f"{self.std[key]:>14.2f}" for key in METRIC_KEYS))
        lines.append(f"{'':<6}" + "".join(
            f"{self.mean[key]:>8.2f} ± {self.std[key]:<4.2f}" for key in METRIC_KEYS))
        if self.notes:
            lines.append("")
            for note in self.notes:
                lines.append(f"note: {note}")
        return "\n".join(lines) + "\n"


def aggregate_report(per_fold_metrics: Sequence[Mapping], expected_folds: int = 5,
                     notes: Sequence[str] = ()) -> EvalReport:
    """Mean and sample standard deviation per metric across folds."""
    if len(per_fold_metrics) != expected_folds:
        raise ReportError(
            f"expected {expected_folds} fold entries, got {len(per_fold_metrics)}")
    keys = set(METRIC_KEYS)
    for i, fold in enumerate(per_fold_metrics):
        missing = keys - set(fold)
        if missing:
            raise ReportError(f"fold {i} missing metrics: {sorted(missing)}")
    mean, std = {}, {}
    for key in METRIC_KEYS:
        values = np.asarray([fold[key] for fold in per_fold_metrics], dtype=np.float64)
        mean[key] = float(values.mean())
        std[key] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return EvalReport(fold_metrics=[dict(f) for f in per_fold_metrics],
                      mean=mean, std=std,
                      notes=[IMPOSTOR_COUNT_NOTE, *notes])
