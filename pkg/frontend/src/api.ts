/** Thin typed client over fetch. Every response body passes through a
 * schema decoder; HTTP errors surface as ApiError with the server detail. */

import type { Box } from "./coords.js";
import {
  ClassInfo,
  DetectResponse,
  FramePage,
  RemoveAck,
  Status,
  SupportAck,
  decodeClassInfo,
  decodeDetectResponse,
  decodeErrorDetail,
  decodeFramePage,
  decodeRemoveAck,
  decodeStatus,
  decodeSupportAck,
} from "./schema.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
  }
}

async function body(res: Response): Promise<unknown> {
  const text = await res.text();
  let parsed: unknown = text;
  try {
    parsed = JSON.parse(text);
  } catch {
    // non-JSON error body; keep raw text
  }
  if (!res.ok) throw new ApiError(res.status, decodeErrorDetail(parsed));
  return parsed;
}

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private url(path: string): string {
    return this.baseUrl + path;
  }

  async listFrames(page: number, pageSize = 0): Promise<FramePage> {
    const q = pageSize > 0 ? `?page=${page}&page_size=${pageSize}` : `?page=${page}`;
    return decodeFramePage(await body(await fetch(this.url(`/frames${q}`))));
  }

  /** URL for the raw image bytes of a frame (used as <img src>). */
  frameUrl(frameId: string): string {
    return this.url(`/frames/${frameId}`);
  }

  async registerClass(name: string): Promise<ClassInfo> {
    const res = await fetch(this.url("/classes"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ name }),
    });
    return decodeClassInfo(await body(res));
  }

  async addSupport(
    classId: number,
    frameId: string,
    box: Box,
  ): Promise<SupportAck> {
    const res = await fetch(this.url(`/classes/${classId}/supports`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ frame_id: frameId, box }),
    });
    return decodeSupportAck(await body(res));
  }

  async removeSupport(classId: number, chipId: number): Promise<RemoveAck> {
    const res = await fetch(this.url(`/classes/${classId}/supports/${chipId}`), {
      method: "DELETE",
    });
    return decodeRemoveAck(await body(res));
  }

  async detect(
    frameId: string,
    classIds: number[] | null,
    signal?: AbortSignal,
  ): Promise<DetectResponse> {
    const res = await fetch(this.url("/detect"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ frame_id: frameId, class_ids: classIds }),
      signal,
    });
    return decodeDetectResponse(await body(res));
  }

  async status(): Promise<Status> {
    return decodeStatus(await body(await fetch(this.url("/status"))));
  }
}
