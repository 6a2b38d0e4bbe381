/** Typed client for the voxseg inference service. */

export type TaskName = "interactive" | "full" | "guided";

export interface ShapeSummary {
  id: string;
  num_parts: number;
  resolution: number;
}

export interface ShapeDetail {
  id: string;
  resolution: number;
  num_parts: number;
  coords: [number, number, number][];
  gt_labels: number[];
}

export interface SegmentRequest {
  shape_id: string;
  task: TaskName;
  clicks: [number, number, number][];
  steps: number;
  seed: number;
  palette_seed?: number | null;
}

export interface SegmentResponse {
  colors: [number, number, number][];
  labels: number[];
  iou_vs_gt: number | null;
  elapsed_ms: number;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

async function expectOk<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = `${resp.status} ${resp.statusText}`;
    try {
      const body = await resp.json();
      if (body && body.detail) detail = JSON.stringify(body.detail);
    } catch {
      // keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class VoxsegClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: typeof fetch = fetch.bind(globalThis)
  ) {}

  listShapes(): Promise<ShapeSummary[]> {
    return this.fetchFn(`${this.baseUrl}/api/shapes`).then((r) =>
      expectOk<ShapeSummary[]>(r)
    );
  }

  getShape(id: string): Promise<ShapeDetail> {
    return this.fetchFn(`${this.baseUrl}/api/shape/${encodeURIComponent(id)}`).then(
      (r) => expectOk<ShapeDetail>(r)
    );
  }

  segment(request: SegmentRequest): Promise<SegmentResponse> {
    return this.fetchFn(`${this.baseUrl}/api/segment`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    }).then((r) => expectOk<SegmentResponse>(r));
  }
}
