/** Session state for one studio tab: the loaded shape, click list, task mode,
 * sampler settings, and the last segmentation result. The service accepts at
 * most 10 point prompts, so the click list is hard-capped here with a visible
 * notice instead of a silent drop. */

import type { SegmentRequest, SegmentResponse, ShapeDetail, TaskName } from "./api";

export const MAX_CLICKS = 10;

export type Voxel = [number, number, number];

export interface SessionSnapshot {
  shape_id: string;
  task: TaskName;
  clicks: Voxel[];
  steps: number;
  seed: number;
  palette_seed: number | null;
}

export type DisplayMode = "colors" | "labels";

export class SessionState {
  shape: ShapeDetail | null = null;
  task: TaskName = "interactive";
  clicks: Voxel[] = [];
  steps = 12;
  seed = 0;
  paletteSeed: number | null = null;
  display: DisplayMode = "colors";
  lastResponse: SegmentResponse | null = null;
  notice = "";
  pending = false;

  private activeSet: Set<string> = new Set();

  loadShape(shape: ShapeDetail): void {
    this.shape = shape;
    this.activeSet = new Set(shape.coords.map((c) => c.join(",")));
    this.clicks = [];
    this.lastResponse = null;
    this.notice = "";
  }

  isActiveVoxel(voxel: Voxel): boolean {
    return this.activeSet.has(voxel.join(","));
  }

  /** Append a click; refuses inactive voxels and enforces the 10-click cap. */
  addClick(voxel: Voxel): boolean {
    if (!this.shape) {
      this.notice = "load a shape first";
      return false;
    }
    if (!this.isActiveVoxel(voxel)) {
      this.notice = "click must land on an active voxel";
      return false;
    }
    if (this.clicks.length >= MAX_CLICKS) {
      this.notice = `max ${MAX_CLICKS} points`;
      return false;
    }
    this.clicks.push(voxel);
    this.notice = "";
    return true;
  }

  clearClicks(): void {
    this.clicks = [];
    this.notice = "";
  }

  setTask(task: TaskName): void {
    // clicks stay visible in the UI; only the payload drops them (see below)
    this.task = task;
    this.notice = "";
  }

  /** The run button is disabled while a request is in flight and for an
   * interactive run without clicks. */
  canRun(): { ok: boolean; reason: string } {
    if (!this.shape) return { ok: false, reason: "no shape loaded" };
    if (this.pending) return { ok: false, reason: "request in flight" };
    if (this.task === "interactive" && this.clicks.length === 0) {
      return { ok: false, reason: "place at least one click for interactive" };
    }
    return { ok: true, reason: "" };
  }

  /** Everything needed to reproduce the current result, as shown in the UI. */
  snapshot(): SessionSnapshot {
    return {
      shape_id: this.shape ? this.shape.id : "",
      task: this.task,
      clicks: this.task === "interactive" ? [...this.clicks] : [],
      steps: this.steps,
      seed: this.seed,
      palette_seed: this.paletteSeed,
    };
  }

  /** The request payload: non-interactive tasks send an empty click list. */
  toRequest(): SegmentRequest {
    const snap = this.snapshot();
    return {
      shape_id: snap.shape_id,
      task: snap.task,
      clicks: snap.clicks,
      steps: snap.steps,
      seed: snap.seed,
      palette_seed: snap.palette_seed,
    };
  }

  applyResponse(response: SegmentResponse): void {
    this.lastResponse = response;
  }
}
