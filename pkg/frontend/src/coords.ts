/** Screen <-> image coordinate transforms for the frame viewport.
 *
 * The viewport shows the image scaled by `zoom` and shifted by `panX/panY`
 * (both in screen pixels). All detection and support boxes travel over the
 * wire in image pixels; these helpers are the only place the two coordinate
 * systems meet, so their round trip must compose to identity.
 */

export interface ViewTransform {
  zoom: number;
  panX: number;
  panY: number;
}

export interface Point {
  x: number;
  y: number;
}

export interface Box {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

export interface ScreenRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

/** Minimum drag gesture extent, in screen pixels, on each axis. */
export const MIN_DRAG_PX = 8;

export function imageToScreen(t: ViewTransform, p: Point): Point {
  return { x: p.x * t.zoom + t.panX, y: p.y * t.zoom + t.panY };
}

export function screenToImage(t: ViewTransform, p: Point): Point {
  return { x: (p.x - t.panX) / t.zoom, y: (p.y - t.panY) / t.zoom };
}

/** Image-pixel box -> screen rectangle for canvas drawing. */
export function boxToScreen(t: ViewTransform, b: Box): ScreenRect {
  const a = imageToScreen(t, { x: b.x1, y: b.y1 });
  const z = imageToScreen(t, { x: b.x2, y: b.y2 });
  return { x: a.x, y: a.y, w: z.x - a.x, h: z.y - a.y };
}

/** Normalize a drag gesture (two screen corners, any order) into an
 * image-pixel box. Returns null when the gesture spans less than
 * MIN_DRAG_PX on either screen axis: too small to be a support chip. */
export function dragToImageBox(
  t: ViewTransform,
  start: Point,
  end: Point,
): Box | null {
  if (
    Math.abs(end.x - start.x) < MIN_DRAG_PX ||
    Math.abs(end.y - start.y) < MIN_DRAG_PX
  ) {
    return null;
  }
  const a = screenToImage(t, start);
  const b = screenToImage(t, end);
  return {
    x1: Math.min(a.x, b.x),
    y1: Math.min(a.y, b.y),
    x2: Math.max(a.x, b.x),
    y2: Math.max(a.y, b.y),
  };
}
