/** Pure translation of detections into screen-space draw commands.
 *
 * The DOM layer replays these onto a canvas; tests assert on the commands
 * directly, so rendering math stays verifiable without a browser.
 */

import { ViewTransform, boxToScreen, ScreenRect } from "./coords.js";
import type { Detection } from "./schema.js";

export interface DrawCommand {
  rect: ScreenRect;
  color: string;
  label: string;
}

/** Threshold is client-side only. A slider pinned at 1.0 means "hide all":
 * no response content may produce a box. */
export function visibleDetections(
  detections: readonly Detection[],
  threshold: number,
): Detection[] {
  if (threshold >= 1) return [];
  return detections.filter((d) => d.score >= threshold);
}

export function buildOverlay(
  detections: readonly Detection[],
  view: ViewTransform,
  threshold: number,
  colorForClass: (classId: number) => string,
): DrawCommand[] {
  return visibleDetections(detections, threshold).map((d) => ({
    rect: boxToScreen(view, d.box),
    color: colorForClass(d.class_id),
    label: `${d.class_name} ${d.score.toFixed(2)}`,
  }));
}
