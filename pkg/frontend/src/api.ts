import type {
  EditCreateRequest,
  EditStatus,
  PoseJson,
  RenderResponse,
  RoiResponse,
  SceneSummary,
} from './types.js';

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client for the scene service. Render calls accept an
 * AbortSignal so rapid camera motion can cancel stale requests. */
export class ApiClient {
  constructor(
    private base: string = '',
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async get<T>(path: string, signal?: AbortSignal): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, { signal });
    if (!resp.ok) throw new Error(`${path}: ${resp.status} ${await resp.text()}`);
    return (await resp.json()) as T;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw new Error(`${path}: ${resp.status} ${await resp.text()}`);
    return (await resp.json()) as T;
  }

  scenes(): Promise<SceneSummary[]> {
    return this.get('/scenes');
  }

  render(scene: string, pose: PoseJson, res: number, signal?: AbortSignal): Promise<RenderResponse> {
    const q = new URLSearchParams({ scene, pose: JSON.stringify(pose), res: String(res) });
    return this.get(`/render?${q}`, signal);
  }

  roi(
    scene: string,
    pose: PoseJson,
    box: { center: number[]; dims: number[] },
    resolution: number,
    samplesPerEdge: number,
    signal?: AbortSignal,
  ): Promise<RoiResponse> {
    const resp = this.fetchImpl(this.base + '/roi', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({
        scene,
        pose,
        box,
        resolution,
        samples_per_edge: samplesPerEdge,
      }),
      signal,
    });
    return resp.then(async (r) => {
      if (!r.ok) throw new Error(`/roi: ${r.status} ${await r.text()}`);
      return (await r.json()) as RoiResponse;
    });
  }

  createEdit(req: EditCreateRequest): Promise<{ id: string }> {
    return this.post('/edits', req);
  }

  editStatus(id: string): Promise<EditStatus> {
    return this.get(`/edits/${id}/status`);
  }

  editRender(id: string, pose: PoseJson, res: number, signal?: AbortSignal): Promise<RenderResponse> {
    const q = new URLSearchParams({ pose: JSON.stringify(pose), res: String(res) });
    return this.get(`/edits/${id}/render?${q}`, signal);
  }
}

/** Serializes render requests: starting a new one aborts the previous
 * in-flight request, so stale frames never land. */
export class LatestRequestGate {
  private controller: AbortController | null = null;

  async run<T>(task: (signal: AbortSignal) => Promise<T>): Promise<T | null> {
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    try {
      return await task(controller.signal);
    } catch (err) {
      if (controller.signal.aborted) return null;
      throw err;
    }
  }
}
