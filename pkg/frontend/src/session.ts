/** Editing session state: region selection, the style draft, previews.
 *
 * Pure state machine over the API client; all DOM concerns live in app.ts.
 * The draft only ever references mask ids present in the fetched label
 * map, and serializes to exactly the plan schema the job endpoint takes.
 */

import { ApiClient } from './api.js';
import { LabelMap, labelAt, maskIds } from './labelmap.js';
import type { JobRecord, PlanSpec, RegionStyleEntry, StyleDraft } from './types.js';

export const MIN_TEXTURE_SIDE = 32;

export interface AssignColorParams {
  mode: 'color';
  hue?: number;
  sat?: number;
  fromRegion?: boolean;
  valueShift?: number;
}

export interface AssignTextureParams {
  mode: 'texture' | 'both';
  /** data URI of the uploaded texture sample; the server quilts the canvas. */
  textureDataUri: string;
  textureWidth: number;
  textureHeight: number;
  hue?: number;
  sat?: number;
  valueShift?: number;
}

export interface AssignClearParams {
  mode: 'none';
}

export type AssignParams = AssignColorParams | AssignTextureParams | AssignClearParams;

export class UiEditSession {
  sceneId: string;
  activeViewId: string | null = null;
  labelMap: LabelMap | null = null;
  knownMaskIds: number[] = [];
  activeMaskId: number | null = null;
  draft: StyleDraft = {};
  maxMasks: number | undefined;
  /** Exact bytes of the last /api/preview response. */
  lastPreview: Uint8Array | null = null;
  previewStale = true;
  activeJobId: string | null = null;
  editingLocked = false;

  constructor(
    readonly api: ApiClient,
    sceneId: string,
  ) {
    this.sceneId = sceneId;
  }

  async openView(viewId: string, labelMap: LabelMap): Promise<void> {
    this.activeViewId = viewId;
    this.labelMap = labelMap;
    this.knownMaskIds = maskIds(labelMap);
    this.activeMaskId = null;
    this.draft = {};
    this.lastPreview = null;
    this.previewStale = true;
  }

  /** Click hit-test; clicks outside the image leave the selection alone. */
  selectRegion(x: number, y: number): number | null {
    if (!this.labelMap) throw new Error('no label map loaded');
    const hit = labelAt(this.labelMap, x, y);
    if (hit === null) return this.activeMaskId;
    this.activeMaskId = hit;
    return hit;
  }

  /** Update the draft for one region; returns a validation message or null. */
  assignStyle(maskId: number, params: AssignParams): string | null {
    if (this.editingLocked) return 'editing is locked while a job runs';
    if (!this.knownMaskIds.includes(maskId)) return `unknown region ${maskId}`;

    if (params.mode === 'none') {
      this.draft[String(maskId)] = { mode: 'none' };
      this.previewStale = true;
      return null;
    }
    if (params.mode === 'color') {
      const entry: RegionStyleEntry = params.fromRegion
        ? { mode: 'color', color_source: 'from-region' }
        : { mode: 'color', hue: params.hue ?? 0, sat: params.sat ?? 1 };
      if (!params.fromRegion) {
        if (entry.hue! < 0 || entry.hue! >= 360) return 'hue must be in [0, 360)';
        if (entry.sat! < 0 || entry.sat! > 1) return 'saturation must be in [0, 1]';
      }
      if (params.valueShift) entry.value_shift = params.valueShift;
      this.draft[String(maskId)] = entry;
      this.previewStale = true;
      return null;
    }
    // texture or both: the upload is the texture sample the server quilts
    if (params.textureWidth < MIN_TEXTURE_SIDE || params.textureHeight < MIN_TEXTURE_SIDE) {
      return `texture must be at least ${MIN_TEXTURE_SIDE}x${MIN_TEXTURE_SIDE} pixels`;
    }
    const entry: RegionStyleEntry = { mode: params.mode, texture_ref: params.textureDataUri };
    if (params.mode === 'both') {
      entry.hue = params.hue ?? 0;
      entry.sat = params.sat ?? 1;
    }
    if (params.valueShift) entry.value_shift = params.valueShift;
    this.draft[String(maskId)] = entry;
    this.previewStale = true;
    return null;
  }

  clearRegion(maskId: number): void {
    this.draft[String(maskId)] = { mode: 'none' };
    this.previewStale = true;
  }

  /** The exact plan JSON POST /api/jobs consumes. */
  planSpec(): PlanSpec {
    if (!this.activeViewId) throw new Error('no active view');
    const plan: PlanSpec = {
      edit_image: `view:${this.activeViewId}`,
      style: this.draft,
    };
    if (this.maxMasks !== undefined) plan.max_masks = this.maxMasks;
    return plan;
  }

  async requestPreview(): Promise<Uint8Array> {
    if (!this.activeViewId) throw new Error('no active view');
    const bytes = await this.api.preview(this.sceneId, this.activeViewId, this.planSpec());
    this.lastPreview = bytes;
    this.previewStale = false;
    return bytes;
  }

  async launchJob(seed?: number, config?: Record<string, unknown>): Promise<string> {
    const jobId = await this.api.submitJob(this.sceneId, this.planSpec(), seed, config);
    this.activeJobId = jobId;
    this.editingLocked = true;
    return jobId;
  }

  /** One poll step; unlocks editing when the job reaches a terminal state. */
  async pollJob(): Promise<JobRecord> {
    if (!this.activeJobId) throw new Error('no active job');
    const record = await this.api.job(this.activeJobId);
    if (record.state === 'DONE' || record.state === 'FAILED') {
      this.editingLocked = false;
    }
    return record;
  }
}
