"""HTTP API over the alignment, embedding, matching, and gallery layers.

JSON over HTTP/1.1; images travel as base64 strings in JSON bodies or as
multipart file uploads (both accepted on the image endpoints). The model
and landmark template are immutable for the process lifetime; gallery
mutations are serialized behind a lock and persisted via atomic rename
before a success response is returned. Responses carry schema_version.
"""

from __future__ import annotations

import base64
import binascii
import io
import threading
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, ValidationError

from .align import LandmarkTemplate, align_crop, load_template
from .errors import (
    DegenerateLandmarks,
    EmptyGallery,
    EmptyTemplate,
    FormatError,
    NotFound,
    PrimIdError,
    SpeciesConflict,
)
from .gallery import SPECIES, Gallery, Individual, load_gallery, save_gallery
from .matcher import identify as matcher_identify
from .matcher import verify as matcher_verify
from .model import PrimNet, load_weights
from .pipeline import landmarks_from_dict

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# request/response schemas


class LandmarkPayload(BaseModel):
    lx: float
    ly: float
    rx: float
    ry: float
    mx: float
    my: float


class AlignRequest(BaseModel):
    image: str = Field(description="base64-encoded PNG or JPEG")
    landmarks: LandmarkPayload


class TransformOut(BaseModel):
    s: float
    theta: float
    mx: float
    my: float


class AlignResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    aligned_image: str
    transform: TransformOut


class IdentifyRequest(BaseModel):
    image: str
    landmarks: LandmarkPayload
    species: Optional[str] = None
    k: int = 3
    threshold: Optional[float] = None


class CandidateOut(BaseModel):
    rank: int
    individual_id: str
    name: str
    score: float
    accepted: bool


class IdentifyResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    candidates: list[CandidateOut]
    no_match: bool


class VerifyRequest(BaseModel):
    image: str
    landmarks: LandmarkPayload
    individual_id: str
    threshold: float = 0.5


class VerifyResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    individual_id: str
    score: float
    accepted: bool
    threshold: float


class EnrollImage(BaseModel):
    image: str
    landmarks: LandmarkPayload
    image_ref: Optional[str] = None


class EnrollRequest(BaseModel):
    individual_id: str
    name: Optional[str] = None
    species: str
    images: list[EnrollImage]


class EnrollResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    individual_id: str
    entries: int


class IndividualSummary(BaseModel):
    id: str
    name: str
    species: str
    entries: int


class GalleryResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    individuals: list[IndividualSummary]


class TemplateEntryOut(BaseModel):
    image_ref: str
    enrolled_at: float


class IndividualResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    id: str
    name: str
    species: str
    entries: list[TemplateEntryOut]


class HealthResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    model_config_hash: str
    individuals: int
    entries: int
    species: list[str]


# ---------------------------------------------------------------------------
# session


class ApiSession:
    """Loaded model/template (immutable) plus the gallery single-writer lock."""

    def __init__(self, model: PrimNet, template: LandmarkTemplate,
                 gallery: Gallery, gallery_path: Path):
        self.model = model
        self.template = template
        self.gallery = gallery
        self.gallery_path = gallery_path
        self.lock = threading.RLock()

    def persist(self) -> None:
        save_gallery(self.gallery, self.gallery_path)


def _decode_image(data: bytes) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError):
        raise HTTPException(status_code=415, detail="payload is not a decodable image")


def _decode_image_b64(text: str) -> np.ndarray:
    try:
        raw = base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError):
        raise HTTPException(status_code=415, detail="invalid base64 image payload")
    return _decode_image(raw)


def _encode_png_b64(img: np.ndarray) -> str:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


async def _payload_with_image(request: Request) -> dict:
    """Accept either a JSON body (image as base64) or multipart form data
    (file field ``image``, other fields as JSON strings or scalars).
    The returned dict always carries a decoded image under ``_image``."""
    content_type = request.headers.get("content-type", "")
    if content_type.startswith("application/json"):
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="invalid JSON body")
        if not isinstance(body, dict) or "image" not in body:
            raise HTTPException(status_code=400, detail="missing image field")
        body["_image"] = _decode_image_b64(body["image"])
        return body
    if content_type.startswith("multipart/form-data"):
        import json as _json

        form = await request.form()
        if "image" not in form:
            raise HTTPException(status_code=400, detail="missing image file")
        upload = form["image"]
        raw = await upload.read() if hasattr(upload, "read") else str(upload).encode()
        body = {}
        for key in form:
            if key == "image":
                continue
            value = form[key]
            if isinstance(value, str) and value[:1] in "{[":
                try:
                    value = _json.loads(value)
                except _json.JSONDecodeError:
                    pass
            body[key] = value
        body["image"] = ""
        body["_image"] = _decode_image(raw)
        return body
    raise HTTPException(status_code=415,
                        detail=f"unsupported media type {content_type or '(none)'}")


def _validate(model_cls, payload: dict):
    try:
        return model_cls.model_validate(payload)
    except ValidationError as exc:
        raise HTTPException(status_code=400, detail=exc.errors())


def _align_probe(session: ApiSession, img: np.ndarray, landmarks: LandmarkPayload):
    lm = landmarks_from_dict(landmarks.model_dump())
    try:
        return align_crop(img, lm, session.template)
    except DegenerateLandmarks as exc:
        raise HTTPException(status_code=400, detail=str(exc))


# ---------------------------------------------------------------------------
# app factory


def create_app(model_path: str | Path, template_path: str | Path,
               gallery_path: str | Path, webui_dir: Path | None = None) -> FastAPI:
    model = load_weights(model_path)
    template = load_template(template_path)
    gallery_path = Path(gallery_path)
    gallery = load_gallery(gallery_path) if gallery_path.exists() else Gallery()
    session = ApiSession(model, template, gallery, gallery_path)
    return create_app_from_session(session, webui_dir=webui_dir)


def create_app_from_session(session: ApiSession, webui_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="primid", version="1.0")
    app.state.session = session

    @app.exception_handler(PrimIdError)
    async def primid_error_handler(_request, exc: PrimIdError):
        status = 400
        if isinstance(exc, (NotFound, EmptyGallery, EmptyTemplate)):
            status = 404
        elif isinstance(exc, SpeciesConflict):
            status = 409
        elif isinstance(exc, FormatError):
            status = 400
        return JSONResponse(status_code=status,
                            content={"schema_version": SCHEMA_VERSION,
                                     "detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health():
        with session.lock:
            individuals = len(session.gallery)
            entries = session.gallery.total_entries()
        return HealthResponse(
            model_config_hash=session.model.cfg.config_hash().hex(),
            individuals=individuals, entries=entries, species=list(SPECIES))

    @app.post("/align", response_model=AlignResponse)
    async def align(request: Request):
        payload = await _payload_with_image(request)
        img = payload.pop("_image")
        req = _validate(AlignRequest, payload)
        crop, params = _align_probe(session, img, req.landmarks)
        return AlignResponse(
            aligned_image=_encode_png_b64(crop),
            transform=TransformOut(s=params.s, theta=params.theta,
                                   mx=params.m_x, my=params.m_y))

    @app.post("/identify", response_model=IdentifyResponse)
    async def identify(request: Request):
        payload = await _payload_with_image(request)
        img = payload.pop("_image")
        req = _validate(IdentifyRequest, payload)
        crop, _ = _align_probe(session, img, req.landmarks)
        emb = session.model.embed(crop)
        with session.lock:
            results = matcher_identify(emb, session.gallery, k=req.k,
                                       threshold=req.threshold, species=req.species)
            names = {ind.id: ind.name for ind in session.gallery.individuals()}
        candidates = [CandidateOut(rank=r.rank, individual_id=r.individual_id,
                                   name=names.get(r.individual_id, r.individual_id),
                                   score=r.score, accepted=r.accepted)
                      for r in results]
        return IdentifyResponse(candidates=candidates,
                                no_match=not any(c.accepted for c in candidates))

    @app.post("/verify", response_model=VerifyResponse)
    async def verify(request: Request):
        payload = await _payload_with_image(request)
        img = payload.pop("_image")
        req = _validate(VerifyRequest, payload)
        crop, _ = _align_probe(session, img, req.landmarks)
        emb = session.model.embed(crop)
        with session.lock:
            tpl = session.gallery.template(req.individual_id)
            accepted, score = matcher_verify(emb, tpl, req.threshold)
        return VerifyResponse(individual_id=req.individual_id, score=score,
                              accepted=accepted, threshold=req.threshold)

    @app.post("/enroll", response_model=EnrollResponse)
    async def enroll(request: Request):
        content_type = request.headers.get("content-type", "")
        if not content_type.startswith("application/json"):
            raise HTTPException(status_code=415, detail="enroll expects JSON")
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="invalid JSON body")
        req = _validate(EnrollRequest, body)
        if not req.images:
            raise HTTPException(status_code=400, detail="no images to enroll")
        embeddings, refs = [], []
        for i, item in enumerate(req.images):
            img = _decode_image_b64(item.image)
            crop, _ = _align_probe(session, img, item.landmarks)
            embeddings.append(session.model.embed(crop))
            refs.append(item.image_ref or f"{req.individual_id}/upload-{i}")
        individual = Individual(id=req.individual_id,
                                name=req.name or req.individual_id,
                                species=req.species)
        with session.lock:
            session.gallery.enroll(individual, embeddings, refs)
            entries = len(session.gallery.template(req.individual_id).entries)
            session.persist()
        return EnrollResponse(individual_id=req.individual_id, entries=entries)

    @app.get("/gallery", response_model=GalleryResponse)
    def list_gallery(species: Optional[str] = None):
        with session.lock:
            individuals = [
                IndividualSummary(id=ind.id, name=ind.name, species=ind.species,
                                  entries=len(session.gallery.template(ind.id).entries))
                for ind in session.gallery.individuals(species)
            ]
        return GalleryResponse(individuals=individuals)

    @app.get("/individuals/{individual_id}", response_model=IndividualResponse)
    def get_individual(individual_id: str):
        with session.lock:
            ind = session.gallery.get(individual_id)
            entries = [TemplateEntryOut(image_ref=e.image_ref, enrolled_at=e.enrolled_at)
                       for e in session.gallery.template(individual_id).entries]
        return IndividualResponse(id=ind.id, name=ind.name, species=ind.species,
                                  entries=entries)

    @app.delete("/individuals/{individual_id}")
    def delete_individual(individual_id: str):
        with session.lock:
            session.gallery.remove_individual(individual_id)
            session.persist()
        return {"schema_version": SCHEMA_VERSION, "deleted": individual_id}

    if webui_dir is not None and Path(webui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(webui_dir), html=True), name="webui")

    return app
