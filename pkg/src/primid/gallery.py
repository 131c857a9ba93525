"""Persistent store of individuals and their enrolled embedding templates.

Storage is a JSON manifest (individuals, entry metadata, offsets) plus a
binary `.emb` sidecar holding little-endian float32 embeddings. Saves are
atomic (write to a temp file, then rename).
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyTemplate, FormatError, NotFound, SpeciesConflict, ZeroVector

GALLERY_FORMAT = 1
SPECIES = ("lemur", "golden_monkey", "chimpanzee")

_UNIT_TOL = 1e-5


@dataclass(frozen=True)
class Individual:
    id: str
    name: str
    species: str

    def __post_init__(self):
        if self.species not in SPECIES:
            raise SpeciesConflict(
                f"unknown species {self.species!r}; expected one of {SPECIES}")


@dataclass
class TemplateEntry:
    embedding: np.ndarray
    image_ref: str
    enrolled_at: float


@dataclass
class Template:
    individual_id: str
    entries: list[TemplateEntry] = field(default_factory=list)

    def embeddings(self) -> np.ndarray:
        if not self.entries:
            raise EmptyTemplate(f"template for {self.individual_id!r} is empty")
        return np.stack([e.embedding for e in self.entries])


class Gallery:
    """In-memory gallery; mutation methods return self for chaining."""

    def __init__(self):
        self._individuals: dict[str, Individual] = {}
        self._templates: dict[str, Template] = {}

    # -- queries ---------------------------------------------------------

    def individuals(self, species: str | None = None) -> list[Individual]:
        out = [ind for ind in self._individuals.values()
               if species is None or ind.species == species]
        return sorted(out, key=lambda ind: ind.id)

    def get(self, individual_id: str) -> Individual:
        try:
            return self._individuals[individual_id]
        except KeyError:
            raise NotFound(f"unknown individual {individual_id!r}") from None

    def template(self, individual_id: str) -> Template:
        self.get(individual_id)
        return self._templates[individual_id]

    def __len__(self) -> int:
        return len(self._individuals)

    def total_entries(self) -> int:
        return sum(len(t.entries) for t in self._templates.values())

    # -- mutations ---------------------------------------------------------

    def enroll(self, individual: Individual, embeddings: list[np.ndarray],
               image_refs: list[str], enrolled_at: float | None = None) -> "Gallery":
        """Append embeddings to an individual's template, creating the
        individual on first enrollment. Re-enrolling an image_ref that is
        already present for the individual is a no-op (idempotent)."""
        if len(embeddings) != len(image_refs):
            raise FormatError("one image_ref per embedding required")
        existing = self._individuals.get(individual.id)
        if existing is not None and existing.species != individual.species:
            raise SpeciesConflict(
                f"{individual.id!r} is enrolled as {existing.species}, not "
                f"{individual.species}")
        stamp = time.time() if enrolled_at is None else enrolled_at
        if existing is None:
            self._individuals[individual.id] = individual
            self._templates[individual.id] = Template(individual.id)
        template = self._templates[individual.id]
        seen = {e.image_ref for e in template.entries}
        for emb, ref in zip(embeddings, image_refs):
            emb = np.asarray(emb, dtype=np.float32)
            norm = float(np.linalg.norm(emb))
            if abs(norm - 1.0) > _UNIT_TOL:
                if norm <= 1e-12:
                    raise ZeroVector(f"embedding for {ref!r} has zero norm")
                emb = emb / norm
            if ref in seen:
                continue
            template.entries.append(TemplateEntry(emb, ref, stamp))
            seen.add(ref)
        return self

    def remove_individual(self, individual_id: str) -> "Gallery":
        self.get(individual_id)
        del self._individuals[individual_id]
        del self._templates[individual_id]
        return self


def save_gallery(gallery: Gallery, path: str | Path) -> None:
    """Write manifest JSON at ``path`` and embeddings at ``path + '.emb'``.

    Both files are written atomically. The manifest stores, per entry, the
    row offset into the float32 embedding blob.
    """
    path = Path(path)
    emb_path = path.with_suffix(path.suffix + ".emb")
    rows = []
    manifest_inds = []
    offset = 0
    dim = 0
    for ind in gallery.individuals():
        template = gallery.template(ind.id)
        entries = []
        for e in template.entries:
            dim = int(e.embedding.shape[0])
            entries.append({"image_ref": e.image_ref, "enrolled_at": e.enrolled_at,
                            "row": offset})
            rows.append(np.asarray(e.embedding, dtype="<f4"))
            offset += 1
        manifest_inds.append({"id": ind.id, "name": ind.name, "species": ind.species,
                              "entries": entries})
    manifest = {
        "gallery_format": GALLERY_FORMAT,
        "embed_dim": dim,
        "embeddings_file": emb_path.name,
        "individuals": manifest_inds,
    }
    blob = np.concatenate(rows).tobytes() if rows else b""
    for target, data in ((emb_path, blob),
                         (path, json.dumps(manifest, indent=2).encode("utf-8"))):
        fd, tmp = tempfile.mkstemp(dir=str(target.parent), prefix=target.name + ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def load_gallery(path: str | Path) -> Gallery:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable gallery manifest: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("gallery_format") != GALLERY_FORMAT:
        raise FormatError(f"{path}: unsupported gallery format")
    emb_path = path.parent / manifest.get("embeddings_file", "")
    dim = int(manifest.get("embed_dim", 0))
    try:
        blob = np.frombuffer(emb_path.read_bytes(), dtype="<f4")
    except OSError as exc:
        raise FormatError(f"{emb_path}: unreadable embedding blob: {exc}") from exc
    matrix = blob.reshape(-1, dim) if dim else blob.reshape(0, 0)
    gallery = Gallery()
    try:
        for entry in manifest["individuals"]:
            ind = Individual(id=entry["id"], name=entry["name"], species=entry["species"])
            embs, refs, stamps = [], [], []
            for item in entry["entries"]:
                embs.append(matrix[int(item["row"])].copy())
                refs.append(item["image_ref"])
                stamps.append(float(item["enrolled_at"]))
            for emb, ref, stamp in zip(embs, refs, stamps):
                gallery.enroll(ind, [emb], [ref], enrolled_at=stamp)
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed gallery manifest: {exc}") from exc
    return gallery
