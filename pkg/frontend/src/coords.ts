/**
 * View transform between canvas (screen) pixels and source-image pixels.
 *
 * screen = offset + scale * image. All landmark math stays in float image
 * coordinates so zoom/pan never quantizes a click.
 */

export interface ViewTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

export interface Point {
  x: number;
  y: number;
}

export const MIN_SCALE = 0.05;
export const MAX_SCALE = 40;

export function identityView(): ViewTransform {
  return { scale: 1, offsetX: 0, offsetY: 0 };
}

export function imageToScreen(view: ViewTransform, p: Point): Point {
  return { x: view.offsetX + view.scale * p.x, y: view.offsetY + view.scale * p.y };
}

export function screenToImage(view: ViewTransform, p: Point): Point {
  return { x: (p.x - view.offsetX) / view.scale, y: (p.y - view.offsetY) / view.scale };
}

/** Rescale about a screen point so the image pixel under it stays fixed. */
export function zoomAt(view: ViewTransform, screen: Point, factor: number): ViewTransform {
  const scale = Math.min(MAX_SCALE, Math.max(MIN_SCALE, view.scale * factor));
  const anchor = screenToImage(view, screen);
  return {
    scale,
    offsetX: screen.x - anchor.x * scale,
    offsetY: screen.y - anchor.y * scale,
  };
}

export function panBy(view: ViewTransform, dx: number, dy: number): ViewTransform {
  return { scale: view.scale, offsetX: view.offsetX + dx, offsetY: view.offsetY + dy };
}

/** Initial fit: image centered in the canvas with a margin. */
export function fitImage(

  imageW: number,
  imageH: number,
  canvasW: number,
  canvasH: number,
  margin = 12,
): ViewTransform {
  const usableW = Math.max(1, canvasW - 2 * margin);
  const usableH = Math.max(1, canvasH - 2 * margin);
  const scale = Math.min(usableW / imageW, usableH / imageH);
  return {
    scale,
    offsetX: (canvasW - imageW * scale) / 2,
    offsetY: (canvasH - imageH * scale) / 2,
  };
}
