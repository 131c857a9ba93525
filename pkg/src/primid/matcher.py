"""Probe-vs-template scoring, verification, and ranked identification.

A template's score against a probe is the maximum cosine similarity over
its enrolled embeddings (max fusion). Decision thresholds are inclusive
(>=) so they compose consistently with FAR calibration in the evaluation
module. Ties in rankings break by ascending individual id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGallery, EmptyTemplate, ShapeError
from .gallery import Gallery, Template


@dataclass(frozen=True)
class MatchResult:
    individual_id: str
    score: float
    rank: int
    accepted: bool = True


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"vector shapes differ: {a.shape} vs {b.shape}")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def template_score(probe: np.ndarray, template: Template) -> float:
    """Max fusion: the highest entry-wise cosine similarity."""
    embs = template.embeddings()
    probe = np.asarray(probe)
    if probe.shape != embs.shape[1:]:
        raise ShapeError(f"probe {probe.shape} does not match template dim {embs.shape[1:]}")
    return float(np.clip(embs @ probe, -1.0, 1.0).max())


def verify(probe: np.ndarray, template: Template, threshold: float) -> tuple[bool, float]:
    """1:1 decision: accept iff the template score reaches the threshold."""
    score = template_score(probe, template)
    return score >= threshold, score


def identify(probe: np.ndarray, gallery: Gallery, k: int = 3,
             threshold: float | None = None,
             species: str | None = None) -> list[MatchResult]:
    """Top-k individuals by template score, descending, ties by ascending id.

    With ``threshold`` set (open-set mode), results scoring below it are
    flagged rejected; an empty accepted list means "not enrolled".
    """
    individuals = gallery.individuals(species)
    if not individuals:
        raise EmptyGallery("gallery has no individuals" +
                           (f" of species {species!r}" if species else ""))
    if k < 1:
        raise ShapeError("k must be >= 1")
    scored = []
    for ind in individuals:
        try:
            score = template_score(probe, gallery.template(ind.id))
        except EmptyTemplate:
            continue
        scored.append((ind.id, score))
    if not scored:
        raise EmptyGallery("no enrolled templates in gallery")
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    results = []
    for rank, (ind_id, score) in enumerate(scored[:k], start=1):
        accepted = True if threshold is None else score >= threshold
        results.append(MatchResult(individual_id=ind_id, score=score,
                                   rank=rank, accepted=accepted))
    return results
