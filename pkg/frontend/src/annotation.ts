/**
 * Landmark annotation state: three clicks in a fixed order (left eye,
 * right eye, mouth center), with undo and reset. Points are stored in
 * source-image pixel coordinates; screen clicks are mapped through the
 * current view transform, so zoom and pan never change the payload.
 */

import { Point, ViewTransform, screenToImage } from "./coords.js";

export type LandmarkLabel = "left_eye" | "right_eye" | "mouth";

export const CLICK_ORDER: LandmarkLabel[] = ["left_eye", "right_eye", "mouth"];

export const PROMPTS: Record<LandmarkLabel, string> = {
  left_eye: "Click the LEFT eye",
  right_eye: "Click the RIGHT eye",
  mouth: "Click the MOUTH center",
};

export const MARKER_TAGS: Record<LandmarkLabel, string> = {
  left_eye: "L",
  right_eye: "R",
  mouth: "M",
};

export interface LandmarkPayload {
  lx: number;
  ly: number;
  rx: number;
  ry: number;
  mx: number;
  my: number;
}

export class AnnotationState {
  readonly points: Point[] = [];

  get complete(): boolean {
    return this.points.length === CLICK_ORDER.length;
  }

  /** Label awaiting a click, or null once all three are set. */
  get nextLabel(): LandmarkLabel | null {
    return this.complete ? null : CLICK_ORDER[this.points.length];
  }

  get prompt(): string {
    const label = this.nextLabel;
    return label ? PROMPTS[label] : "All landmarks set — ready to submit";
  }

  /** Map a canvas click into image coordinates and record it.
   * Returns false (ignored) once three points exist. */
  addScreenClick(view: ViewTransform, screen: Point): boolean {
    if (this.complete) {
      return false;
    }
    this.points.push(screenToImage(view, screen));
    return true;
  }

  addImagePoint(p: Point): boolean {
    if (this.complete) {
      return false;
    }
    this.points.push({ x: p.x, y: p.y });
    return true;
  }

  undo(): boolean {
    return this.points.pop() !== undefined;
  }

  reset(): void {
    this.points.length = 0;
  }

  /** Landmark payload in source-image pixels; only valid when complete. */
  payload(): LandmarkPayload {
    if (!this.complete) {
      throw new Error(`need ${CLICK_ORDER.length} landmarks, have ${this.points.length}`);
    }
    const [le, re, mo] = this.points;
    return { lx: le.x, ly: le.y, rx: re.x, ry: re.y, mx: mo.x, my: mo.y };
  }
}
