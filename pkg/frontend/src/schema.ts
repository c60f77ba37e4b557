/** Runtime decoders for the service's JSON bodies.
 *
 * Every byte shown in the console originates from one of these six
 * endpoints; decoding strictly at the boundary keeps the rest of the client
 * typed. Unknown extra fields are tolerated (server may grow), missing or
 * mistyped fields are errors.
 */

import type { Box } from "./coords.js";

export interface FrameInfo {
  id: string;
  url: string;
  width: number;
  height: number;
}

export interface FramePage {
  frames: FrameInfo[];
  total: number;
  page: number;
  page_size: number;
}

export interface ClassInfo {
  class_id: number;
  name: string;
  shots: number;
}

export interface SupportAck {
  chip_id: number;
  class_id: number;
  shots: number;
}

export interface RemoveAck {
  class_id: number;
  shots: number;
}

export interface Detection {
  box: Box;
  class_id: number;
  class_name: string;
  score: number;
}

export interface DetectResponse {
  frame_id: string;
  detections: Detection[];
}

export interface Status {
  checkpoint_id: string;
  param_hash: string;
  classes: ClassInfo[];
}

export class SchemaError extends Error {}

function fail(path: string, want: string, got: unknown): never {
  throw new SchemaError(`${path}: expected ${want}, got ${JSON.stringify(got)}`);
}

function obj(v: unknown, path: string): Record<string, unknown> {
  if (typeof v !== "object" || v === null || Array.isArray(v)) {
    fail(path, "object", v);
  }
  return v as Record<string, unknown>;
}

function num(v: unknown, path: string): number {
  if (typeof v !== "number" || !Number.isFinite(v)) fail(path, "number", v);
  return v;
}

function int(v: unknown, path: string): number {
  const n = num(v, path);
  if (!Number.isInteger(n)) fail(path, "integer", v);
  return n;
}

function str(v: unknown, path: string): string {
  if (typeof v !== "string") fail(path, "string", v);
  return v;
}

function arr(v: unknown, path: string): unknown[] {
  if (!Array.isArray(v)) fail(path, "array", v);
  return v;
}

function decodeBox(v: unknown, path: string): Box {
  const o = obj(v, path);
  return {
    x1: num(o.x1, `${path}.x1`),
    y1: num(o.y1, `${path}.y1`),
    x2: num(o.x2, `${path}.x2`),
    y2: num(o.y2, `${path}.y2`),
  };
}

function decodeFrameInfo(v: unknown, path: string): FrameInfo {
  const o = obj(v, path);
  return {
    id: str(o.id, `${path}.id`),
    url: str(o.url, `${path}.url`),
    width: int(o.width, `${path}.width`),
    height: int(o.height, `${path}.height`),
  };
}

export function decodeFramePage(v: unknown): FramePage {
  const o = obj(v, "frame page");
  return {
    frames: arr(o.frames, "frames").map((f, i) =>
      decodeFrameInfo(f, `frames[${i}]`),
    ),
    total: int(o.total, "total"),
    page: int(o.page, "page"),
    page_size: int(o.page_size, "page_size"),
  };
}

export function decodeClassInfo(v: unknown, path = "class"): ClassInfo {
  const o = obj(v, path);
  const shots = int(o.shots, `${path}.shots`);
  if (shots < 0) fail(`${path}.shots`, "count >= 0", shots);
  return {
    class_id: int(o.class_id, `${path}.class_id`),
    name: str(o.name, `${path}.name`),
    shots,
  };
}

export function decodeSupportAck(v: unknown): SupportAck {
  const o = obj(v, "support ack");
  return {
    chip_id: int(o.chip_id, "chip_id"),
    class_id: int(o.class_id, "class_id"),
    shots: int(o.shots, "shots"),
  };
}

export function decodeRemoveAck(v: unknown): RemoveAck {
  const o = obj(v, "remove ack");
  return {
    class_id: int(o.class_id, "class_id"),
    shots: int(o.shots, "shots"),
  };
}

function decodeDetection(v: unknown, path: string): Detection {
  const o = obj(v, path);
  const score = num(o.score, `${path}.score`);
  if (score < 0 || score > 1) fail(`${path}.score`, "score in [0,1]", score);
  return {
    box: decodeBox(o.box, `${path}.box`),
    class_id: int(o.class_id, `${path}.class_id`),
    class_name: str(o.class_name, `${path}.class_name`),
    score,
  };
}

export function decodeDetectResponse(v: unknown): DetectResponse {
  const o = obj(v, "detect response");
  return {
    frame_id: str(o.frame_id, "frame_id"),
    detections: arr(o.detections, "detections").map((d, i) =>
      decodeDetection(d, `detections[${i}]`),
    ),
  };
}

export function decodeStatus(v: unknown): Status {
  const o = obj(v, "status");
  return {
    checkpoint_id: str(o.checkpoint_id, "checkpoint_id"),
    param_hash: str(o.param_hash, "param_hash"),
    classes: arr(o.classes, "classes").map((c, i) =>
      decodeClassInfo(c, `classes[${i}]`),
    ),
  };
}

/** Error bodies are {"detail": "..."}; fall back to the raw text. */
export function decodeErrorDetail(v: unknown): string {
  if (typeof v === "object" && v !== null && "detail" in v) {
    const d = (v as Record<string, unknown>).detail;
    if (typeof d === "string") return d;
  }
  return JSON.stringify(v);
}
