"""Manifest handling and the align -> embed -> evaluate pipeline.

A manifest is a JSON list of {image, landmarks{lx..my}, individual_id,
species[, name]} entries; image paths resolve relative to the manifest's
directory. These helpers are shared by the CLI and the HTTP service.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .align import LandmarkSet, LandmarkTemplate, align_crop, load_image
from .errors import FormatError
from .evaluation import (
    EvalReport,
    aggregate_report,
    closed_set_rank1,
    kfold_split,
    open_set_dir,
    tar_at_far,
    template_size_sweep,
    verification_scores,
)
from .model import PrimNet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ManifestEntry:
    image: str
    landmarks: LandmarkSet
    individual_id: str
    species: str
    name: str | None = None


def landmarks_from_dict(obj: dict, image_ref: str = "") -> LandmarkSet:
    try:
        return LandmarkSet(
            left_eye=(float(obj["lx"]), float(obj["ly"])),
            right_eye=(float(obj["rx"]), float(obj["ry"])),
            mouth=(float(obj["mx"]), float(obj["my"])),
            image_ref=image_ref,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid landmark payload for {image_ref!r}: {exc}") from exc


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest: {exc}") from exc
    if not isinstance(raw, list):
        raise FormatError(f"{path}: manifest must be a JSON list")
    entries = []
    for i, obj in enumerate(raw):
        try:
            entries.append(ManifestEntry(
                image=obj["image"],
                landmarks=landmarks_from_dict(obj["landmarks"], obj["image"]),
                individual_id=obj["individual_id"],
                species=obj.get("species", "lemur"),
                name=obj.get("name"),
            ))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: bad manifest entry #{i}: {exc}") from exc
    return entries


def embed_manifest(model: PrimNet, template: LandmarkTemplate,
                   entries: list[ManifestEntry], root: str | Path,
                   batch_size: int = 64) -> tuple[list[str], np.ndarray]:
    """Align and embed every manifest image. Returns (refs, embeddings)."""
    root = Path(root)
    crops = np.empty((len(entries), template.canvas[1], template.canvas[0], 3),
                     dtype=np.uint8)
    for i, entry in enumerate(entries):
        img = load_image(root / entry.image)
        crops[i], _ = align_crop(img, entry.landmarks, template)
    chunks = [model.embed(crops[i:i + batch_size])
              for i in range(0, len(entries), batch_size)]
    embeddings = np.concatenate(chunks) if chunks else np.zeros((0, model.cfg.embed_dim))
    return [e.image for e in entries], embeddings


def group_by_individual(entries: list[ManifestEntry], refs: list[str],
                        embeddings: np.ndarray) -> dict[str, list[tuple[str, np.ndarray]]]:
    grouped: dict[str, list[tuple[str, np.ndarray]]] = {}
    for entry, ref, emb in zip(entries, refs, embeddings):
        grouped.setdefault(entry.individual_id, []).append((ref, emb))
    return grouped


@dataclass
class EvaluationArtifacts:
    report: EvalReport
    score_rows: list  # ScoreRow across folds, in fold order
    sweep_rows: list[tuple[int, float]]  # (template size, mean TAR@1%FAR)


def run_evaluation(model: PrimNet, template: LandmarkTemplate,
                   entries: list[ManifestEntry], root: str | Path,
                   folds: int = 5, trials: int = 100, seed: int = 0,
                   species: str | None = None, with_sweep: bool = False,
                   with_scores: bool = False) -> EvaluationArtifacts:
    """Five-fold protocol run: per fold, the held-out individuals form the
    verification/identification test set and the remaining individuals'
    images act as open-set distractor probes."""
    if species is not None:
        entries = [e for e in entries if e.species == species]
    refs, embeddings = embed_manifest(model, template, entries, root)
    grouped = group_by_individual(entries, refs, embeddings)
    splits = kfold_split(sorted(grouped), k=folds, seed=seed)

    fold_metrics = []
    score_rows = []
    sweep_acc: dict[int, list[float]] = {}
    for split in splits:
        test_set = {ind: grouped[ind] for ind in split.test_ids}
        distractors = np.stack([emb for ind in split.train_ids
                                for _, emb in grouped[ind]])
        scores, rows = verification_scores(test_set, with_rows=True)
        if with_scores:
            score_rows.extend(rows)
        tar1, _ = tar_at_far(scores, 0.01)
        tar01, _ = tar_at_far(scores, 0.001)
        rank1 = closed_set_rank1(test_set, trials=trials, seed=seed)
        dir1 = open_set_dir(test_set, distractors, far_target=0.01,
                            trials=trials, seed=seed)
        fold_metrics.append({
            "tar_1pct_far": 100.0 * tar1,
            "tar_01pct_far": 100.0 * tar01,
            "closed_set_rank1": 100.0 * rank1,
            "open_set_dir_1pct_far": 100.0 * dir1,
        })
        if with_sweep:
            for size, tar in template_size_sweep(test_set, seed=seed):
                sweep_acc.setdefault(size, []).append(tar)
    report = aggregate_report(fold_metrics, expected_folds=folds)
    sweep_rows = [(size, float(np.mean(vals)))
                  for size, vals in sorted(sweep_acc.items())]
    return EvaluationArtifacts(report=report, score_rows=score_rows,
                               sweep_rows=sweep_rows)


def write_score_csv(rows, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("probe_image,subject_id,candidate_id,score,label\n")
        for r in rows:
            fh.write(f"{r.probe_image},{r.subject_id},{r.candidate_id},"
                     f"{r.score!r},{r.label}\n")


def write_sweep_csv(rows, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("template_size,tar_1pct_far\n")
        for size, tar in rows:
            fh.write(f"{size},{tar!r}\n")
