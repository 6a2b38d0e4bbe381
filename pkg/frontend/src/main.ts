import { ApiError, VoxsegClient, type TaskName } from "./api";
import { SessionState } from "./state";
import { VoxelView } from "./renderer";

const client = new VoxsegClient("");
const state = new SessionState();
const view = new VoxelView(document.getElementById("view") as HTMLCanvasElement);

const el = {
  shapeSelect: document.getElementById("shape-select") as HTMLSelectElement,
  task: () =>
    (document.querySelector('input[name="task"]:checked') as HTMLInputElement)
      .value as TaskName,
  steps: document.getElementById("steps") as HTMLInputElement,
  stepsLabel: document.getElementById("steps-label") as HTMLSpanElement,
  seed: document.getElementById("seed") as HTMLInputElement,
  paletteSeed: document.getElementById("palette-seed") as HTMLInputElement,
  run: document.getElementById("run") as HTMLButtonElement,
  clear: document.getElementById("clear-clicks") as HTMLButtonElement,
  display: document.getElementById("display-toggle") as HTMLInputElement,
  notice: document.getElementById("notice") as HTMLDivElement,
  banner: document.getElementById("banner") as HTMLDivElement,
  metrics: document.getElementById("metrics") as HTMLDivElement,
  clicks: document.getElementById("click-count") as HTMLSpanElement,
  snapshot: document.getElementById("snapshot") as HTMLTextAreaElement,
  copy: document.getElementById("copy-snapshot") as HTMLButtonElement,
};

function refresh(): void {
  el.clicks.textContent = `${state.clicks.length}/10`;
  el.notice.textContent = state.notice;
  el.stepsLabel.textContent = String(state.steps);
  const can = state.canRun();
  el.run.disabled = !can.ok;
  el.run.title = can.reason;
  el.snapshot.value = JSON.stringify(state.snapshot());
  if (state.lastResponse) {
    const r = state.lastResponse;
    const iou = r.iou_vs_gt === null ? "n/a" : (100 * r.iou_vs_gt).toFixed(2);
    el.metrics.textContent = `IoU vs GT: ${iou} · ${r.elapsed_ms.toFixed(0)} ms`;
  }
}

function showError(message: string): void {
  el.banner.textContent = message;
  el.banner.style.display = "block";
  window.setTimeout(() => (el.banner.style.display = "none"), 6000);
}

async function loadShapeList(): Promise<void> {
  const shapes = await client.listShapes();
  el.shapeSelect.innerHTML = "";
  for (const s of shapes) {
    const opt = document.createElement("option");
    opt.value = s.id;
    opt.textContent = `${s.id} (${s.num_parts} parts, R=${s.resolution})`;
    el.shapeSelect.appendChild(opt);
  }
  if (shapes.length) await loadShape(shapes[0].id);
}

async function loadShape(id: string): Promise<void> {
  try {
    const detail = await client.getShape(id);
    state.loadShape(detail);
    view.setShape(detail);
    view.clearMarkers();
    refresh();
  } catch (err) {
    showError(err instanceof ApiError ? err.message : String(err));
  }
}

async function runSegmentation(): Promise<void> {
  const can = state.canRun();
  if (!can.ok) {
    state.notice = can.reason;
    refresh();
    return;
  }
  state.pending = true;
  refresh();
  try {
    const response = await client.segment(state.toRequest());
    state.applyResponse(response);
    view.paintResult(response.colors, response.labels, state.display);
  } catch (err) {
    showError(err instanceof ApiError ? err.message : String(err));
  } finally {
    state.pending = false;
    refresh();
  }
}

el.shapeSelect.addEventListener("change", () => void loadShape(el.shapeSelect.value));
document.querySelectorAll('input[name="task"]').forEach((radio) =>
  radio.addEventListener("change", () => {
    state.setTask(el.task());
    refresh();
  })
);
el.steps.addEventListener("input", () => {
  state.steps = Number(el.steps.value);
  refresh();
});
el.seed.addEventListener("change", () => {
  state.seed = Number(el.seed.value) || 0;
  refresh();
});
el.paletteSeed.addEventListener("change", () => {
  const v = el.paletteSeed.value.trim();
  state.paletteSeed = v === "" ? null : Number(v);
  refresh();
});
el.run.addEventListener("click", () => void runSegmentation());
el.clear.addEventListener("click", () => {
  state.clearClicks();
  view.clearMarkers();
  refresh();
});
el.display.addEventListener("change", () => {
  state.display = el.display.checked ? "labels" : "colors";
  if (state.lastResponse) {
    view.paintResult(state.lastResponse.colors, state.lastResponse.labels, state.display);
  }
  refresh();
});

let dragging = false;
const viewCanvas = document.getElementById("view") as HTMLCanvasElement;
viewCanvas.addEventListener("pointerdown", () => (dragging = false));
viewCanvas.addEventListener("pointermove", () => (dragging = true));
viewCanvas.addEventListener("pointerup", (ev) => {
  if (dragging) return; // orbiting, not clicking
  const voxel = view.pick(ev.clientX, ev.clientY);
  if (voxel && state.addClick(voxel)) {
    view.addMarker(voxel);
  }
  refresh();
});

el.copy.addEventListener("click", () => {
  void navigator.clipboard.writeText(el.snapshot.value);
});

void loadShapeList().catch((err) => showError(String(err)));
refresh();
