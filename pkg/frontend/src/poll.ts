/** Fixed-interval job polling with per-stage progress summaries. */

import type { JobRecord, JobState } from './types.js';
import { STAGE_ORDER } from './types.js';

export interface StageProgress {
  stage: JobState;
  /** 'skipped' | 'done' | 'active' | 'pending' */
  status: 'skipped' | 'done' | 'active' | 'pending';
  fraction: number;
}

/** Progress-bar model derived from a job record; skipped stages stay visible. */
export function stageProgress(record: JobRecord): StageProgress[] {
  return STAGE_ORDER.map((stage) => {
    if (record.stages_skipped.includes(stage)) {
      return { stage, status: 'skipped', fraction: 1 };
    }
    if (record.stages_done.includes(stage)) {
      return { stage, status: 'done', fraction: 1 };
    }
    const fraction = record.progress[stage] ?? 0;
    const status = record.state === stage ? 'active' : 'pending';
    return { stage, status, fraction };
  });
}

export function isTerminal(state: JobState): boolean {
  return state === 'DONE' || state === 'FAILED';
}

export interface PollOptions {
  intervalMs?: number;
  onUpdate?: (record: JobRecord) => void;
  /** injectable for tests */
  sleep?: (ms: number) => Promise<void>;
}

/** Poll until the job terminates. Stateless: safe across server restarts. */
export async function pollUntilDone(
  fetchRecord: () => Promise<JobRecord>,
  { intervalMs = 1000, onUpdate, sleep }: PollOptions = {},
): Promise<JobRecord> {
  const wait = sleep ?? ((ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms)));
  for (;;) {
    const record = await fetchRecord();
    onUpdate?.(record);
    if (isTerminal(record.state)) return record;
    await wait(intervalMs);
  }
}
