/** Browser entry point: wires the session state machine to the DOM.
 *
 * Layout: a scene/view picker, the view canvas with a label-map outline
 * overlay, a style panel for the selected region, the preview pane (always
 * the server's exact PNG bytes), and the job progress bar with a
 * before/after slider once the edit lands.
 */

import { ApiClient, ApiError } from './api.js';
import { LabelMap, labelMapFromRgba, maskOutline } from './labelmap.js';
import { pollUntilDone, stageProgress } from './poll.js';
import { MIN_TEXTURE_SIDE, UiEditSession } from './session.js';
import type { JobRecord } from './types.js';

const api = new ApiClient('');
let session: UiEditSession | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(text: string, isError = false): void {
  const bar = el<HTMLDivElement>('status');
  bar.textContent = text;
  bar.className = isError ? 'status error' : 'status';
}

async function decodeLabelMap(b64: string): Promise<LabelMap> {
  const bytes = Uint8Array.from(atob(b64), (ch) => ch.charCodeAt(0));
  const bitmap = await createImageBitmap(new Blob([bytes], { type: 'image/png' }));
  const canvas = document.createElement('canvas');
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  const ctx = canvas.getContext('2d')!;
  ctx.drawImage(bitmap, 0, 0);
  const data = ctx.getImageData(0, 0, bitmap.width, bitmap.height).data;
  return labelMapFromRgba(bitmap.width, bitmap.height, data);
}

function drawOverlay(): void {
  if (!session?.labelMap) return;
  const canvas = el<HTMLCanvasElement>('overlay');
  const ctx = canvas.getContext('2d')!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (session.activeMaskId === null) return;
  const scale = canvas.width / session.labelMap.width;
  ctx.fillStyle = 'rgba(255, 210, 60, 0.9)';
  for (const [x, y] of maskOutline(session.labelMap, session.activeMaskId)) {
    ctx.fillRect(x * scale, y * scale, scale, scale);
  }
}

function refreshDraftPanel(): void {
  if (!session) return;
  el<HTMLPreElement>('draft-json').textContent = JSON.stringify(session.planSpec(), null, 2);
  el<HTMLSpanElement>('active-region').textContent =
    session.activeMaskId === null ? 'none' : String(session.activeMaskId);
  el<HTMLButtonElement>('preview-btn').disabled = session.editingLocked;
  el<HTMLButtonElement>('launch-btn').disabled = session.editingLocked;
  el<HTMLDivElement>('preview-stale').hidden = !session.previewStale;
}

async function openScene(sceneId: string): Promise<void> {
  const views = await api.listViews(sceneId);
  const picker = el<HTMLSelectElement>('view-picker');
  picker.innerHTML = '';
  for (const vid of views.view_ids) {
    const option = document.createElement('option');
    option.value = vid;
    option.textContent = vid;
    picker.appendChild(option);
  }
  session = new UiEditSession(api, sceneId);
  await openView(views.view_ids[0]);
}

async function openView(viewId: string): Promise<void> {
  if (!session) return;
  setStatus(`segmenting ${viewId}...`);
  const seg = await api.segment(session.sceneId, viewId);
  const labelMap = await decodeLabelMap(seg.label_map_png_b64);
  await session.openView(viewId, labelMap);
  const img = el<HTMLImageElement>('view-image');
  img.src = api.viewImageUrl(session.sceneId, viewId);
  el<HTMLImageElement>('preview-image').src = img.src; // empty draft previews as the original
  drawOverlay();
  refreshDraftPanel();
  setStatus(`view ${viewId}: ${seg.mask_ids.length} regions`);
}

function canvasClick(event: MouseEvent): void {
  if (!session?.labelMap) return;
  const canvas = el<HTMLCanvasElement>('overlay');
  const rect = canvas.getBoundingClientRect();
  const x = ((event.clientX - rect.left) / rect.width) * session.labelMap.width;
  const y = ((event.clientY - rect.top) / rect.height) * session.labelMap.height;
  session.selectRegion(x, y);
  drawOverlay();
  refreshDraftPanel();
}

function readTextureUpload(): Promise<{ dataUri: string; width: number; height: number } | null> {
  const input = el<HTMLInputElement>('texture-upload');
  const file = input.files?.[0];
  if (!file) return Promise.resolve(null);
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onerror = () => reject(reader.error);
    reader.onload = () => {
      const dataUri = reader.result as string;
      const probe = new Image();
      probe.onload = () => resolve({ dataUri, width: probe.naturalWidth, height: probe.naturalHeight });
      probe.onerror = () => reject(new Error('cannot decode the uploaded texture'));
      probe.src = dataUri;
    };
    reader.readAsDataURL(file);
  });
}

async function applyStyle(): Promise<void> {
  if (!session || session.activeMaskId === null) {
    setStatus('click a region first', true);
    return;
  }
  const mode = el<HTMLSelectElement>('mode-picker').value;
  let message: string | null;
  if (mode === 'none') {
    message = session.assignStyle(session.activeMaskId, { mode: 'none' });
  } else if (mode === 'color') {
    message = session.assignStyle(session.activeMaskId, {
      mode: 'color',
      fromRegion: el<HTMLInputElement>('from-region').checked,
      hue: Number(el<HTMLInputElement>('hue-input').value),
      sat: Number(el<HTMLInputElement>('sat-input').value),
      valueShift: Number(el<HTMLInputElement>('value-shift').value),
    });
  } else {
    const upload = await readTextureUpload();
    if (!upload) {
      setStatus(`upload a texture image (at least ${MIN_TEXTURE_SIDE}x${MIN_TEXTURE_SIDE})`, true);
      return;
    }
    message = session.assignStyle(session.activeMaskId, {
      mode: mode as 'texture' | 'both',
      textureDataUri: upload.dataUri,
      textureWidth: upload.width,
      textureHeight: upload.height,
      hue: Number(el<HTMLInputElement>('hue-input').value),
      sat: Number(el<HTMLInputElement>('sat-input').value),
    });
  }
  if (message) {
    setStatus(message, true);
    return;
  }
  refreshDraftPanel();
  setStatus('draft updated; preview is stale');
}

let previewUrl: string | null = null;

async function requestPreview(): Promise<void> {
  if (!session) return;
  setStatus('rendering preview...');
  try {
    const bytes = await session.requestPreview();
    // display the exact response bytes; no client-side re-rendering
    if (previewUrl) URL.revokeObjectURL(previewUrl);
    const copy = new Uint8Array(new ArrayBuffer(bytes.byteLength));
    copy.set(bytes);
    previewUrl = URL.createObjectURL(new Blob([copy.buffer], { type: 'image/png' }));
    el<HTMLImageElement>('preview-image').src = previewUrl;
    refreshDraftPanel();
    setStatus('preview up to date');
  } catch (error) {
    reportError(error);
  }
}

function renderProgress(record: JobRecord): void {
  const holder = el<HTMLDivElement>('progress');
  holder.innerHTML = '';
  for (const stage of stageProgress(record)) {
    const row = document.createElement('div');
    row.className = `stage ${stage.status}`;
    const label = stage.status === 'skipped' ? `${stage.stage} (skipped)` : stage.stage;
    row.textContent = `${label} ${(stage.fraction * 100).toFixed(0)}%`;
    holder.appendChild(row);
  }
  const failure = record.failure ? ` — ${record.failure.message}` : '';
  setStatus(`job ${record.job_id}: ${record.state}${failure}`, record.state === 'FAILED');
}

function showComparison(record: JobRecord): void {
  if (!session?.activeViewId) return;
  const before = el<HTMLImageElement>('before-image');
  const after = el<HTMLImageElement>('after-image');
  before.src = api.viewImageUrl(session.sceneId, session.activeViewId);
  after.src = api.jobRenderUrl(record.job_id, session.activeViewId);
  el<HTMLDivElement>('comparison').hidden = false;
  const slider = el<HTMLInputElement>('compare-slider');
  const clip = () => {
    after.style.clipPath = `inset(0 0 0 ${slider.value}%)`;
  };
  slider.oninput = clip;
  clip();
}

async function launchJob(): Promise<void> {
  if (!session) return;
  try {
    const jobId = await session.launchJob();
    refreshDraftPanel();
    setStatus(`job ${jobId} submitted`);
    const record = await pollUntilDone(() => session!.pollJob(), {
      intervalMs: 1000,
      onUpdate: renderProgress,
    });
    refreshDraftPanel();
    if (record.state === 'DONE') showComparison(record);
  } catch (error) {
    reportError(error);
  }
}

function reportError(error: unknown): void {
  if (error instanceof ApiError) {
    setStatus(`${error.code}: ${error.message}`, true);
  } else {
    setStatus(String(error), true);
  }
}

async function boot(): Promise<void> {
  try {
    const scenes = await api.listScenes();
    const picker = el<HTMLSelectElement>('scene-picker');
    picker.innerHTML = '';
    for (const scene of scenes) {
      const option = document.createElement('option');
      option.value = scene.id;
      option.textContent = `${scene.name} (${scene.n_views} views)`;
      picker.appendChild(option);
    }
    picker.onchange = () => void openScene(picker.value);
    el<HTMLSelectElement>('view-picker').onchange = (event) =>
      void openView((event.target as HTMLSelectElement).value);
    el<HTMLCanvasElement>('overlay').onclick = canvasClick;
    el<HTMLButtonElement>('apply-btn').onclick = () => void applyStyle();
    el<HTMLButtonElement>('clear-btn').onclick = () => {
      if (session && session.activeMaskId !== null) {
        session.clearRegion(session.activeMaskId);
        refreshDraftPanel();
      }
    };
    el<HTMLButtonElement>('preview-btn').onclick = () => void requestPreview();
    el<HTMLButtonElement>('launch-btn').onclick = () => void launchJob();
    if (scenes.length) await openScene(scenes[0].id);
  } catch (error) {
    reportError(error);
  }
}

if (typeof document !== 'undefined') {
  void boot();
}
