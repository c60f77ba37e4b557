/** Console session state and the actions that mutate it.
 *
 * The store performs no model computation: every displayed number comes out
 * of an API response. Shot counts are reconciled against GET /status after
 * each mutation so the sidebar always mirrors the server.
 */

import { ApiClient, ApiError } from "./api.js";
import { Box, Point, ViewTransform, dragToImageBox } from "./coords.js";
import { colorFor } from "./palette.js";
import type { Detection, FrameInfo } from "./schema.js";

export interface PaletteEntry {
  classId: number;
  name: string;
  color: string;
  shots: number;
  /** include this class in detect requests */
  selected: boolean;
}

export interface Toast {
  message: string;
  kind: "error" | "info";
}

export class ConsoleStore {
  frames: FrameInfo[] = [];
  cursor = 0;
  classes: PaletteEntry[] = [];
  activeClassId: number | null = null;
  scoreThreshold = 0;
  toasts: Toast[] = [];
  /** 409 guidance from the last detect attempt, shown inline. */
  detectPrompt: string | null = null;
  /** frames with a detect response; empty array = "no detections" badge */
  private overlays = new Map<string, Detection[]>();
  private inflight = new Map<string, AbortController>();
  onChange: () => void = () => {};

  constructor(readonly api: ApiClient) {}

  // -- frames ---------------------------------------------------------------

  async loadFrames(): Promise<void> {
    const all: FrameInfo[] = [];
    let page = 0;
    for (;;) {
      const chunk = await this.api.listFrames(page);
      all.push(...chunk.frames);
      if (all.length >= chunk.total || chunk.frames.length === 0) break;
      page += 1;
    }
    this.frames = all;
    this.cursor = Math.min(this.cursor, Math.max(0, all.length - 1));
    this.onChange();
  }

  currentFrame(): FrameInfo | null {
    return this.frames[this.cursor] ?? null;
  }

  step(delta: number): void {
    if (this.frames.length === 0) return;
    this.cursor =
      (this.cursor + delta + this.frames.length) % this.frames.length;
    this.onChange();
  }

  // -- class palette ----------------------------------------------------------

  async registerClass(name: string): Promise<PaletteEntry> {
    const info = await this.api.registerClass(name);
    const entry: PaletteEntry = {
      classId: info.class_id,
      name: info.name,
      color: colorFor(this.classes.length),
      shots: info.shots,
      selected: true,
    };
    this.classes.push(entry);
    this.activeClassId = entry.classId;
    this.onChange();
    return entry;
  }

  classEntry(classId: number): PaletteEntry | undefined {
    return this.classes.find((c) => c.classId === classId);
  }

  colorForClass = (classId: number): string =>
    this.classEntry(classId)?.color ?? "#ffffff";

  setActive(classId: number): void {
    this.activeClassId = classId;
    this.onChange();
  }

  toggleSelected(classId: number): void {
    const e = this.classEntry(classId);
    if (e) {
      e.selected = !e.selected;
      this.onChange();
    }
  }

  private async reconcileShots(): Promise<void> {
    const status = await this.api.status();
    for (const info of status.classes) {
      const e = this.classEntry(info.class_id);
      if (e) e.shots = info.shots;
    }
    this.onChange();
  }

  // -- annotation ---------------------------------------------------------------

  /** Drag gesture -> POST support. Optimistic shot bump, rolled back and
   * toasted when the server rejects. Returns the posted box, or null when
   * the gesture was rejected locally (no active class / sub-minimum drag). */
  async annotate(
    view: ViewTransform,
    dragStart: Point,
    dragEnd: Point,
  ): Promise<Box | null> {
    const frame = this.currentFrame();
    if (frame === null || this.activeClassId === null) return null;
    const entry = this.classEntry(this.activeClassId);
    if (entry === undefined) return null;
    const box = dragToImageBox(view, dragStart, dragEnd);
    if (box === null) return null;

    entry.shots += 1; // optimistic
    this.onChange();
    try {
      await this.api.addSupport(entry.classId, frame.id, box);
    } catch (err) {
      entry.shots -= 1; // rollback
      this.toast(err instanceof Error ? err.message : String(err));
      this.onChange();
      return null;
    }
    await this.reconcileShots();
    return box;
  }

  // -- detection ---------------------------------------------------------------

  selectedClassIds(): number[] {
    return this.classes.filter((c) => c.selected).map((c) => c.classId);
  }

  /** Run detection on the current frame for the selected classes. Only one
   * request per frame is in flight: a newer click aborts the older one. */
  async detect(): Promise<void> {
    const frame = this.currentFrame();
    if (frame === null) return;
    this.inflight.get(frame.id)?.abort();
    const controller = new AbortController();
    this.inflight.set(frame.id, controller);
    this.detectPrompt = null;
    try {
      const res = await this.api.detect(
        frame.id,
        this.selectedClassIds(),
        controller.signal,
      );
      if (this.inflight.get(frame.id) !== controller) return; // superseded
      this.overlays.set(frame.id, res.detections);
    } catch (err) {
      if (err instanceof Error && err.name === "AbortError") return;
      if (this.inflight.get(frame.id) === controller) {
        if (err instanceof ApiError && err.status === 409) {
          this.detectPrompt = `add supports first: ${err.message}`;
        } else {
          this.toast(err instanceof Error ? err.message : String(err));
        }
      }
    } finally {
      if (this.inflight.get(frame.id) === controller) {
        this.inflight.delete(frame.id);
      }
      this.onChange();
    }
  }

  /** Detections for a frame, or null when no detect response exists yet
   * (overlays are only shown for frames that have one). */
  overlayFor(frameId: string): Detection[] | null {
    return this.overlays.get(frameId) ?? null;
  }

  // -- misc ---------------------------------------------------------------

  setThreshold(v: number): void {
    this.scoreThreshold = Math.min(1, Math.max(0, v));
    this.onChange();
  }

  toast(message: string, kind: Toast["kind"] = "error"): void {
    this.toasts.push({ message, kind });
    this.onChange();
  }
}
