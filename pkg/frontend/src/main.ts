/** DOM wiring for the operator console. All logic lives in the imported
 * modules; this file only binds events and repaints. */

import { ApiClient } from "./api.js";
import { Point, ViewTransform } from "./coords.js";
import { buildOverlay } from "./overlay.js";
import { ConsoleStore } from "./state.js";

const api = new ApiClient("");
const store = new ConsoleStore(api);

const view: ViewTransform = { zoom: 1, panX: 0, panY: 0 };
let drag: { start: Point; end: Point } | null = null;

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

const canvas = $<HTMLCanvasElement>("viewport");
const ctx = canvas.getContext("2d")!;
const frameImg = new Image();
let imgReady = false;

function mouse(ev: MouseEvent): Point {
  const r = canvas.getBoundingClientRect();
  return { x: ev.clientX - r.left, y: ev.clientY - r.top };
}

function repaintCanvas(): void {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (imgReady) {
    ctx.imageSmoothingEnabled = view.zoom < 1;
    ctx.drawImage(
      frameImg,
      view.panX,
      view.panY,
      frameImg.naturalWidth * view.zoom,
      frameImg.naturalHeight * view.zoom,
    );
  }
  const frame = store.currentFrame();
  const badge = $("badge");
  badge.hidden = true;
  if (frame) {
    const dets = store.overlayFor(frame.id);
    if (dets !== null) {
      const commands = buildOverlay(
        dets,
        view,
        store.scoreThreshold,
        store.colorForClass,
      );
      ctx.lineWidth = 2;
      ctx.font = "12px system-ui, sans-serif";
      for (const c of commands) {
        ctx.strokeStyle = c.color;
        ctx.strokeRect(c.rect.x, c.rect.y, c.rect.w, c.rect.h);
        ctx.fillStyle = c.color;
        ctx.fillText(c.label, c.rect.x + 2, c.rect.y - 3);
      }
      badge.hidden = commands.length > 0;
      badge.textContent =
        dets.length === 0 ? "no detections" : "no detections above threshold";
    }
  }
  if (drag) {
    ctx.strokeStyle = "#ffffff";
    ctx.setLineDash([4, 3]);
    ctx.strokeRect(
      Math.min(drag.start.x, drag.end.x),
      Math.min(drag.start.y, drag.end.y),
      Math.abs(drag.end.x - drag.start.x),
      Math.abs(drag.end.y - drag.start.y),
    );
    ctx.setLineDash([]);
  }
}

function repaintSidebar(): void {
  const frame = store.currentFrame();
  $("frame-label").textContent = frame
    ? `${frame.id} (${store.cursor + 1}/${store.frames.length})`
    : "no frames";

  const list = $("class-list");
  list.replaceChildren();
  for (const c of store.classes) {
    const row = document.createElement("li");
    row.className = c.classId === store.activeClassId ? "active" : "";
    const swatch = document.createElement("span");
    swatch.className = "swatch";
    swatch.style.background = c.color;
    const label = document.createElement("span");
    label.textContent = `${c.name} (${c.shots} shot${c.shots === 1 ? "" : "s"})`;
    const pick = document.createElement("input");
    pick.type = "checkbox";
    pick.checked = c.selected;
    pick.title = "include in detection";
    pick.addEventListener("click", (ev) => {
      ev.stopPropagation();
      store.toggleSelected(c.classId);
    });
    row.append(swatch, label, pick);
    row.addEventListener("click", () => store.setActive(c.classId));
    list.append(row);
  }

  $("prompt").textContent = store.detectPrompt ?? "";
  const toasts = $("toasts");
  toasts.replaceChildren(
    ...store.toasts.slice(-3).map((t) => {
      const el = document.createElement("div");
      el.className = `toast ${t.kind}`;
      el.textContent = t.message;
      return el;
    }),
  );
}

function loadCurrentFrame(): void {
  const frame = store.currentFrame();
  if (!frame) return;
  imgReady = false;
  frameImg.onload = () => {
    imgReady = true;
    repaintCanvas();
  };
  frameImg.src = api.frameUrl(frame.id);
}

store.onChange = () => {
  repaintSidebar();
  repaintCanvas();
};

canvas.addEventListener("mousedown", (ev) => {
  drag = { start: mouse(ev), end: mouse(ev) };
});
canvas.addEventListener("mousemove", (ev) => {
  if (drag) {
    drag.end = mouse(ev);
    repaintCanvas();
  }
});
canvas.addEventListener("mouseup", (ev) => {
  if (!drag) return;
  const { start } = drag;
  drag = null;
  void store.annotate(view, start, mouse(ev));
  repaintCanvas();
});

$("prev").addEventListener("click", () => {
  store.step(-1);
  loadCurrentFrame();
});
$("next").addEventListener("click", () => {
  store.step(1);
  loadCurrentFrame();
});
$("detect").addEventListener("click", () => void store.detect());

$<HTMLSelectElement>("zoom").addEventListener("change", (ev) => {
  view.zoom = Number((ev.target as HTMLSelectElement).value);
  repaintCanvas();
});
$<HTMLInputElement>("threshold").addEventListener("input", (ev) => {
  const raw = Number((ev.target as HTMLInputElement).value);
  store.setThreshold(raw / 100);
  $("threshold-label").textContent = (raw / 100).toFixed(2);
});

$<HTMLFormElement>("class-form").addEventListener("submit", (ev) => {
  ev.preventDefault();
  const input = $<HTMLInputElement>("class-name");
  const name = input.value.trim();
  if (!name) return;
  input.value = "";
  void store
    .registerClass(name)
    .catch((err) => store.toast(err instanceof Error ? err.message : String(err)));
});

async function init(): Promise<void> {
  const status = await api.status();
  $("checkpoint").textContent =
    `${status.checkpoint_id} · ${status.param_hash.slice(0, 12)}`;
  await store.loadFrames();
  loadCurrentFrame();
}

void init().catch((err) =>
  store.toast(err instanceof Error ? err.message : String(err)),
);
