/**
 * DOM wiring: canvas annotation (zoom/pan/click/undo), species and mode
 * selection, and one in-flight recognition request at a time. All math
 * lives in coords/annotation/format; this file only shuttles events.
 */

import { AnnotationState, MARKER_TAGS, CLICK_ORDER } from "./annotation.js";
import { ApiClient, ApiError, IndividualSummary } from "./api.js";
import {
  ViewTransform,
  fitImage,
  identityView,
  imageToScreen,
  panBy,
  zoomAt,
} from "./coords.js";
import { candidateHtml, candidateViews, isNoMatch, verifyView } from "./format.js";

type Mode = "identify" | "verify" | "enroll";

const MARKER_COLORS = ["#ff5252", "#40c4ff", "#ffd740"];

export class App {
  private readonly api: ApiClient;
  private readonly annotation = new AnnotationState();
  private view: ViewTransform = identityView();
  private image: HTMLImageElement | null = null;
  private imageB64 = "";
  private mode: Mode = "identify";
  private busy = false;
  private dragging = false;
  private dragMoved = false;
  private lastPointer = { x: 0, y: 0 };

  private canvas!: HTMLCanvasElement;
  private ctx!: CanvasRenderingContext2D;

  constructor(private readonly doc: Document, apiBase = "") {
    this.api = new ApiClient(apiBase);
  }

  async init(): Promise<void> {
    this.canvas = this.el<HTMLCanvasElement>("#canvas");
    this.ctx = this.canvas.getContext("2d")!;
    this.bindCanvas();
    this.bindControls();
    await this.loadSpecies();
    await this.refreshGallery();
    this.render();
    this.setStatus("Load an image to begin.");
  }

  private el<T extends Element>(selector: string): T {
    const node = this.doc.querySelector(selector);
    if (!node) {
      throw new Error(`missing element ${selector}`);
    }
    return node as T;
  }

  // -- data loading --------------------------------------------------------

  private async loadSpecies(): Promise<void> {
    const select = this.el<HTMLSelectElement>("#species");
    try {
      const health = await this.api.health();
      select.innerHTML = health.species
        .map((s) => `<option value="${s}">${s.replace("_", " ")}</option>`)
        .join("");
    } catch (err) {
      this.showError(err);
    }
  }

  private async refreshGallery(): Promise<void> {
    const species = this.el<HTMLSelectElement>("#species").value || undefined;
    const select = this.el<HTMLSelectElement>("#individual");
    try {
      const gallery = await this.api.gallery(species);
      select.innerHTML = gallery.individuals
        .map((ind: IndividualSummary) =>
          `<option value="${ind.id}">${ind.name} (${ind.entries})</option>`)
        .join("");
      const empty = gallery.individuals.length === 0;
      select.disabled = empty;
      if (empty && this.mode !== "enroll") {
        this.setStatus("Gallery is empty for this species — enroll an individual first.");
      }
    } catch (err) {
      this.showError(err);
    }
  }

  // -- canvas events ---------------------------------------------------------

  private bindCanvas(): void {
    this.canvas.addEventListener("pointerdown", (ev) => {
      this.dragging = true;
      this.dragMoved = false;
      this.lastPointer = this.canvasPoint(ev);
      this.canvas.setPointerCapture(ev.pointerId);
    });
    this.canvas.addEventListener("pointermove", (ev) => {
      if (!this.dragging) {
        return;
      }
      const p = this.canvasPoint(ev);
      const dx = p.x - this.lastPointer.x;
      const dy = p.y - this.lastPointer.y;
      if (Math.abs(dx) + Math.abs(dy) > 2) {
        this.dragMoved = true;
        this.view = panBy(this.view, dx, dy);
        this.lastPointer = p;
        this.render();
      }
    });
    this.canvas.addEventListener("pointerup", (ev) => {
      this.canvas.releasePointerCapture(ev.pointerId);
      const wasDrag = this.dragMoved;
      this.dragging = false;
      this.dragMoved = false;
      if (wasDrag || !this.image) {
        return;
      }
      if (this.annotation.addScreenClick(this.view, this.canvasPoint(ev))) {
        this.render();
        this.updateControls();
      }
    });
    this.canvas.addEventListener("wheel", (ev) => {
      if (!this.image) {
        return;
      }
      ev.preventDefault();
      const factor = ev.deltaY < 0 ? 1.15 : 1 / 1.15;
      this.view = zoomAt(this.view, this.canvasPoint(ev), factor);
      this.render();
    }, { passive: false });
  }

  private canvasPoint(ev: MouseEvent): { x: number; y: number } {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: (ev.clientX - rect.left) * (this.canvas.width / rect.width),
      y: (ev.clientY - rect.top) * (this.canvas.height / rect.height),
    };
  }

  // -- controls ----------------------------------------------------------

  private bindControls(): void {
    this.el<HTMLInputElement>("#file").addEventListener("change", (ev) => {
      const input = ev.target as HTMLInputElement;
      if (input.files && input.files[0]) {
        void this.loadFile(input.files[0]);
      }
    });
    this.el<HTMLButtonElement>("#undo").addEventListener("click", () => {
      this.annotation.undo();
      this.render();
      this.updateControls();
    });
    this.el<HTMLButtonElement>("#reset").addEventListener("click", () => {
      this.annotation.reset();
      this.render();
      this.updateControls();
    });
    this.el<HTMLButtonElement>("#submit").addEventListener("click", () => {
      void this.submit();
    });
    this.el<HTMLSelectElement>("#species").addEventListener("change", () => {
      void this.refreshGallery();
    });
    for (const mode of ["identify", "verify", "enroll"] as Mode[]) {
      this.el<HTMLInputElement>(`#mode-${mode}`).addEventListener("change", () => {
        this.mode = mode;
        this.updateControls();
      });
    }
    this.el<HTMLButtonElement>("#enroll-as-new").addEventListener("click", () => {
      this.el<HTMLInputElement>("#mode-enroll").checked = true;
      this.mode = "enroll";
      this.updateControls();
      this.setStatus("Fill in an id/name and submit to enroll this probe.");
    });
  }

  private async loadFile(file: File): Promise<void> {
    const buf = await file.arrayBuffer();
    this.imageB64 = arrayBufferToBase64(buf);
    const img = new Image();
    img.onload = () => {
      this.image = img;
      this.annotation.reset();
      this.view = fitImage(img.naturalWidth, img.naturalHeight,
                           this.canvas.width, this.canvas.height);
      this.render();
      this.updateControls();
      this.setStatus(this.annotation.prompt);
    };
    img.src = URL.createObjectURL(file);
  }

  private updateControls(): void {
    const submit = this.el<HTMLButtonElement>("#submit");
    const ready = this.annotation.complete && !!this.image && !this.busy;
    const needsId = this.mode === "enroll"
      ? this.el<HTMLInputElement>("#new-id").value.trim().length === 0
      : false;
    submit.disabled = !ready || needsId;
    submit.textContent = this.busy ? "Working..." :
      this.mode === "identify" ? "Identify" :
      this.mode === "verify" ? "Verify" : "Enroll";
    this.el<HTMLElement>("#verify-panel").classList.toggle("hidden", this.mode !== "verify");
    this.el<HTMLElement>("#enroll-panel").classList.toggle("hidden", this.mode !== "enroll");
    if (this.image) {
      this.setStatus(this.annotation.prompt);
    }
  }

  // -- submission ----------------------------------------------------------

  private async submit(): Promise<void> {
    if (this.busy || !this.annotation.complete || !this.image) {
      return;
    }
    this.busy = true;
    this.updateControls();
    this.clearResults();
    try {
      const landmarks = this.annotation.payload();
      const aligned = await this.api.align(this.imageB64, landmarks);
      this.showAlignedPreview(aligned.aligned_image);
      const species = this.el<HTMLSelectElement>("#species").value;
      if (this.mode === "identify") {
        const thrText = this.el<HTMLInputElement>("#threshold").value.trim();
        const threshold = thrText ? Number(thrText) : undefined;
        const res = await this.api.identify(this.imageB64, landmarks, species, 3, threshold);
        this.renderIdentify(res);
      } else if (this.mode === "verify") {
        const individual = this.el<HTMLSelectElement>("#individual").value;
        const threshold = Number(this.el<HTMLInputElement>("#verify-threshold").value) || 0.5;
        const res = await this.api.verify(this.imageB64, landmarks, individual, threshold);
        this.renderVerify(res);
      } else {
        const id = this.el<HTMLInputElement>("#new-id").value.trim();
        const name = this.el<HTMLInputElement>("#new-name").value.trim() || id;
        const res = await this.api.enroll(id, name, species,
                                          [{ image: this.imageB64, landmarks }]);
        this.setStatus(`Enrolled ${res.individual_id}: template now has ${res.entries} image(s).`);
        await this.refreshGallery();
      }
    } catch (err) {
      this.showError(err);
    } finally {
      this.busy = false;
      this.updateControls();
    }
  }

  private renderIdentify(res: import("./api.js").IdentifyResponse): void {
    const list = this.el<HTMLElement>("#candidates");
    const views = candidateViews(res, 3);
    list.innerHTML = views.map(candidateHtml).join("");
    this.el<HTMLElement>("#no-match").classList.toggle("hidden", !isNoMatch(res));
    this.setStatus(isNoMatch(res)
      ? "No enrolled individual cleared the threshold."
      : "Top candidates by similarity score.");
  }

  private renderVerify(res: import("./api.js").VerifyResponse): void {
    const view = verifyView(res);
    const panel = this.el<HTMLElement>("#verify-result");
    panel.classList.remove("hidden");
    panel.innerHTML =
      `<span class="decision ${view.accepted ? "accept" : "reject"}">${view.decisionText}</span>` +
      `<span class="score">score ${view.scoreText}</span>` +
      `<span class="threshold">threshold ${view.thresholdText}</span>`;
    this.setStatus(`Verification against ${view.individualId} finished.`);
  }

  private showAlignedPreview(b64png: string): void {
    const img = this.el<HTMLImageElement>("#aligned");
    img.src = `data:image/png;base64,${b64png}`;
    img.classList.remove("hidden");
  }

  private clearResults(): void {
    this.el<HTMLElement>("#candidates").innerHTML = "";
    this.el<HTMLElement>("#no-match").classList.add("hidden");
    const verifyPanel = this.el<HTMLElement>("#verify-result");
    verifyPanel.classList.add("hidden");
    verifyPanel.innerHTML = "";
  }

  private setStatus(text: string): void {
    this.el<HTMLElement>("#status").textContent = text;
    this.el<HTMLElement>("#status").classList.remove("error");
  }

  private showError(err: unknown): void {
    const message = err instanceof ApiError
      ? `service error (${err.status}): ${err.message}`
      : `error: ${String(err)}`;
    const node = this.el<HTMLElement>("#status");
    node.textContent = message;
    node.classList.add("error");
  }

  // -- drawing -------------------------------------------------------------

  private render(): void {
    const { width, height } = this.canvas;
    this.ctx.clearRect(0, 0, width, height);
    if (!this.image) {
      return;
    }
    this.ctx.save();
    this.ctx.imageSmoothingEnabled = this.view.scale < 4;
    this.ctx.setTransform(this.view.scale, 0, 0, this.view.scale,
                          this.view.offsetX, this.view.offsetY);
    this.ctx.drawImage(this.image, 0, 0);
    this.ctx.restore();
    this.annotation.points.forEach((p, i) => {
      const s = imageToScreen(this.view, p);
      this.ctx.beginPath();
      this.ctx.arc(s.x, s.y, 7, 0, 2 * Math.PI);
      this.ctx.fillStyle = MARKER_COLORS[i];
      this.ctx.globalAlpha = 0.85;
      this.ctx.fill();
      this.ctx.globalAlpha = 1;
      this.ctx.fillStyle = "#111";
      this.ctx.font = "bold 9px sans-serif";
      this.ctx.textAlign = "center";
      this.ctx.textBaseline = "middle";
      this.ctx.fillText(MARKER_TAGS[CLICK_ORDER[i]], s.x, s.y);
    });
  }
}

function arrayBufferToBase64(buf: ArrayBuffer): string {
  const bytes = new Uint8Array(buf);
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return btoa(binary);
}
