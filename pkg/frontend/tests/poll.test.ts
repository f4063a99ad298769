import { describe, expect, it } from 'vitest';

import { isTerminal, pollUntilDone, stageProgress } from '../src/poll.js';
import type { JobRecord } from '../src/types.js';

function record(overrides: Partial<JobRecord>): JobRecord {
  return {
    job_id: 'j1',
    state: 'PENDING',
    seed: 0,
    progress: {},
    sampled_view_ids: [],
    stages_done: [],
    stages_skipped: [],
    failure: null,
    ...overrides,
  };
}

describe('stage progress model', () => {
  it('shows skipped stages as skipped, done as done, current as active', () => {
    const model = stageProgress(
      record({
        state: 'TRAINING_COLOR',
        stages_done: ['SEGMENTING', 'MATCHING', 'EDITING_2D'],
        stages_skipped: ['TRAINING_TEXTURE'],
        progress: { TRAINING_COLOR: 0.4 },
      }),
    );
    const byStage = Object.fromEntries(model.map((s) => [s.stage, s]));
    expect(byStage.SEGMENTING.status).toBe('done');
    expect(byStage.TRAINING_TEXTURE.status).toBe('skipped');
    expect(byStage.TRAINING_COLOR.status).toBe('active');
    expect(byStage.TRAINING_COLOR.fraction).toBeCloseTo(0.4);
  });

  it('marks everything pending on a fresh job', () => {
    for (const stage of stageProgress(record({}))) {
      expect(stage.status).toBe('pending');
      expect(stage.fraction).toBe(0);
    }
  });
});

describe('polling', () => {
  it('polls until a terminal state and reports every update', async () => {
    const states: JobRecord[] = [
      record({ state: 'SEGMENTING' }),
      record({ state: 'TRAINING_COLOR', progress: { TRAINING_COLOR: 0.5 } }),
      record({ state: 'DONE', stages_done: ['SEGMENTING', 'MATCHING', 'EDITING_2D', 'TRAINING_COLOR'] }),
    ];
    let calls = 0;
    const seen: string[] = [];
    const result = await pollUntilDone(() => Promise.resolve(states[Math.min(calls++, states.length - 1)]), {
      sleep: () => Promise.resolve(),
      onUpdate: (r) => seen.push(r.state),
    });
    expect(result.state).toBe('DONE');
    expect(calls).toBe(3);
    expect(seen).toEqual(['SEGMENTING', 'TRAINING_COLOR', 'DONE']);
  });

  it('is stateless: resumes cleanly from a mid-job record after a restart', async () => {
    // the poll loop has no local state beyond the fetch function, so a
    // server restart just means the next GET returns the persisted record
    const afterRestart = [record({ state: 'TRAINING_COLOR' }), record({ state: 'FAILED', failure: { stage: 'TRAINING_COLOR', message: 'killed' } })];
    let calls = 0;
    const result = await pollUntilDone(() => Promise.resolve(afterRestart[Math.min(calls++, 1)]), {
      sleep: () => Promise.resolve(),
    });
    expect(result.state).toBe('FAILED');
    expect(isTerminal(result.state)).toBe(true);
  });
});
