/** Wire types mirroring the server's JSON schemas. */

export type StyleMode = 'none' | 'color' | 'texture' | 'both';

/** One region's style entry, exactly the schema POST /api/jobs consumes. */
export interface RegionStyleEntry {
  mode: StyleMode;
  hue?: number | null;
  sat?: number | null;
  value_shift?: number;
  texture_ref?: string | null;
  color_source?: 'explicit' | 'from-region' | null;
}

export type StyleDraft = Record<string, RegionStyleEntry>;

export interface PlanSpec {
  edit_image: string;
  style: StyleDraft;
  max_masks?: number;
}

export interface SceneInfo {
  id: string;
  name: string;
  n_views: number;
  width: number;
  height: number;
}

export interface ViewListing {
  view_ids: string[];
  width: number;
  height: number;
}

export interface SegmentResponse {
  view_id: string;
  shape: [number, number];
  mask_ids: number[];
  areas: number[];
  label_map_png_b64: string;
}

export type JobState =
  | 'PENDING'
  | 'SEGMENTING'
  | 'MATCHING'
  | 'EDITING_2D'
  | 'TRAINING_TEXTURE'
  | 'TRAINING_COLOR'
  | 'DONE'
  | 'FAILED';

export const STAGE_ORDER: JobState[] = [
  'SEGMENTING',
  'MATCHING',
  'EDITING_2D',
  'TRAINING_TEXTURE',
  'TRAINING_COLOR',
];

export interface JobRecord {
  job_id: string;
  state: JobState;
  seed: number;
  progress: Record<string, number>;
  sampled_view_ids: string[];
  stages_done: string[];
  stages_skipped: string[];
  failure: { stage: string; message: string } | null;
}

export interface ApiErrorBody {
  status: number;
  code: string;
  message: string;
}
