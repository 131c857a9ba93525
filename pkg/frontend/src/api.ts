/**
 * Typed client for the primid HTTP service. The UI performs no recognition
 * math of its own: every score rendered comes from these responses.
 */

import { LandmarkPayload } from "./annotation.js";

export interface TransformOut {
  s: number;
  theta: number;
  mx: number;
  my: number;
}

export interface AlignResponse {
  schema_version: number;
  aligned_image: string; // base64 PNG
  transform: TransformOut;
}

export interface CandidateOut {
  rank: number;
  individual_id: string;
  name: string;
  score: number;
  accepted: boolean;
}

export interface IdentifyResponse {
  schema_version: number;
  candidates: CandidateOut[];
  no_match: boolean;
}

export interface VerifyResponse {
  schema_version: number;
  individual_id: string;
  score: number;
  accepted: boolean;
  threshold: number;
}

export interface EnrollResponse {
  schema_version: number;
  individual_id: string;
  entries: number;
}

export interface IndividualSummary {
  id: string;
  name: string;
  species: string;
  entries: number;
}

export interface GalleryResponse {
  schema_version: number;
  individuals: IndividualSummary[];
}

export interface HealthResponse {
  schema_version: number;
  model_config_hash: string;
  individuals: number;
  entries: number;
  species: string[];
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function parseError(res: Response): Promise<never> {
  let detail = `${res.status} ${res.statusText}`;
  try {
    const body = await res.json();
    if (body && body.detail) {
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(res.status, detail);
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const res = await fetch(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) {
      await parseError(res);
    }
    return (await res.json()) as T;
  }

  private async get<T>(path: string): Promise<T> {
    const res = await fetch(this.base + path);
    if (!res.ok) {
      await parseError(res);
    }
    return (await res.json()) as T;
  }

  health(): Promise<HealthResponse> {
    return this.get("/health");
  }

  gallery(species?: string): Promise<GalleryResponse> {
    const suffix = species ? `?species=${encodeURIComponent(species)}` : "";
    return this.get(`/gallery${suffix}`);
  }

  align(imageB64: string, landmarks: LandmarkPayload): Promise<AlignResponse> {
    return this.post("/align", { image: imageB64, landmarks });
  }

  identify(
    imageB64: string,
    landmarks: LandmarkPayload,
    species: string,
    k = 3,
    threshold?: number,
  ): Promise<IdentifyResponse> {
    return this.post("/identify", {
      image: imageB64,
      landmarks,
      species,
      k,
      threshold: threshold ?? null,
    });
  }

  verify(
    imageB64: string,
    landmarks: LandmarkPayload,
    individualId: string,
    threshold: number,
  ): Promise<VerifyResponse> {
    return this.post("/verify", {
      image: imageB64,
      landmarks,
      individual_id: individualId,
      threshold,
    });
  }

  enroll(
    individualId: string,
    name: string,
    species: string,
    images: { image: string; landmarks: LandmarkPayload; image_ref?: string }[],
  ): Promise<EnrollResponse> {
    return this.post("/enroll", {
      individual_id: individualId,
      name,
      species,
      images,
    });
  }

  deleteIndividual(id: string): Promise<{ deleted: string }> {
    return fetch(`${this.base}/individuals/${encodeURIComponent(id)}`, {
      method: "DELETE",
    }).then(async (res) => {
      if (!res.ok) {
        await parseError(res);
      }
      return (await res.json()) as { deleted: string };
    });
  }
}
