/** Typed client for the editing service.
 *
 * Every server interaction goes through this module; nothing else touches
 * the network, so the UI can only mutate server state via the documented
 * endpoints.
 */

import type { ApiErrorBody, JobRecord, PlanSpec, SceneInfo, SegmentResponse, ViewListing } from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function raiseForStatus(response: Response): Promise<Response> {
  if (response.ok) return response;
  let body: ApiErrorBody | null = null;
  try {
    body = (await response.json()) as ApiErrorBody;
  } catch {
    /* non-JSON error body */
  }
  throw new ApiError(response.status, body?.code ?? 'INTERNAL', body?.message ?? response.statusText);
}

export class ApiClient {
  constructor(
    private readonly base: string = '',
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await raiseForStatus(await this.fetchFn(`${this.base}${path}`));
    return (await response.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const response = await raiseForStatus(
      await this.fetchFn(`${this.base}${path}`, {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify(body),
      }),
    );
    return (await response.json()) as T;
  }

  listScenes(): Promise<SceneInfo[]> {
    return this.getJson('/api/scenes');
  }

  listViews(sceneId: string): Promise<ViewListing> {
    return this.getJson(`/api/scenes/${sceneId}/views`);
  }

  viewImageUrl(sceneId: string, viewId: string): string {
    return `${this.base}/api/scenes/${sceneId}/views/${viewId}.png`;
  }

  jobRenderUrl(jobId: string, viewId: string): string {
    return `${this.base}/api/jobs/${jobId}/renders/${viewId}.png`;
  }

  segment(sceneId: string, viewId: string, maxMasks?: number): Promise<SegmentResponse> {
    return this.postJson('/api/segment', { scene_id: sceneId, view_id: viewId, max_masks: maxMasks });
  }

  /** Returns the exact PNG bytes of the server-side 2D edit. */
  async preview(sceneId: string, viewId: string, plan: PlanSpec): Promise<Uint8Array> {
    const response = await raiseForStatus(
      await this.fetchFn(`${this.base}/api/preview`, {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify({ scene_id: sceneId, view_id: viewId, plan }),
      }),
    );
    return new Uint8Array(await response.arrayBuffer());
  }

  async submitJob(sceneId: string, plan: PlanSpec, seed?: number, config?: Record<string, unknown>): Promise<string> {
    const body = await this.postJson<{ job_id: string }>('/api/jobs', {
      scene_id: sceneId,
      plan,
      seed,
      config,
    });
    return body.job_id;
  }

  job(jobId: string): Promise<JobRecord> {
    return this.getJson(`/api/jobs/${jobId}`);
  }
}
