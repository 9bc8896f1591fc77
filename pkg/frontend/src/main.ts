import { ApiClient, LatestRequestGate } from './api.js';
import { dragOrbit, orbitPose, zoomOrbit, type OrbitState } from './camera.js';
import {
  exportDescriptor,
  importDescriptor,
  withBoxField,
  type EditFormState,
} from './editor.js';
import { buildRuns, drawOverlay, type OverlayRun } from './overlay.js';
import { formatLosses, pollEditStatus } from './poll.js';
import type { SceneSummary } from './types.js';

const api = new ApiClient('..');
const renderGate = new LatestRequestGate();
const previewGate = new LatestRequestGate();

const el = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
};

const canvas = el<HTMLCanvasElement>('view');
const ctx = canvas.getContext('2d')!;
const previewCanvas = el<HTMLCanvasElement>('preview');
const previewCtx = previewCanvas.getContext('2d')!;
const statusLine = el<HTMLDivElement>('status');
const jobLine = el<HTMLDivElement>('job');

let scene: SceneSummary | null = null;
let orbit: OrbitState = {
  azimuthDeg: 0, elevationDeg: -10, radius: 3.3,
  target: [0, 0, 0], afovDeg: 60,
};
let form: EditFormState = {
  sceneId: 'demo',
  box: { center: [0, 1.2, 0], dims: [0.8, 0.8, 0.8] },
  variant: 'replace',
  alpha: 1.0,
  eps: 1e-9,
  caption: 'a red disc',
  textureOnly: false,
};
let runs: OverlayRun[] = [];
let showHidden = true;
let currentEditId: string | null = null;
const RES = 256;

function setStatus(text: string) {
  statusLine.textContent = text;
}

async function refreshView() {
  const pose = orbitPose(orbit);
  const result = await renderGate.run(async (signal) => {
    const render = await api.render(form.sceneId, pose, RES, signal);
    const roi = await api.roi(form.sceneId, pose, form.box, RES, 24, signal);
    return { render, roi };
  });
  if (result === null) return; // superseded by a newer request
  const img = new Image();
  img.onload = () => {
    canvas.width = result.render.width;
    canvas.height = result.render.height;
    ctx.drawImage(img, 0, 0);
    runs = buildRuns(result.roi.samples);
    drawOverlay(ctx, runs, showHidden);
  };
  img.src = `data:image/png;base64,${result.render.png_base64}`;
  setStatus(
    `az ${orbit.azimuthDeg.toFixed(0)}°  el ${orbit.elevationDeg.toFixed(0)}°  ` +
    `r ${orbit.radius.toFixed(2)}  mean T ${result.render.mean_transmittance.toFixed(3)}`
  );
}

async function refreshPreview() {
  if (!currentEditId) return;
  const pose = orbitPose(orbit);
  const result = await previewGate.run((signal) =>
    api.editRender(currentEditId!, pose, RES, signal)
  );
  if (result === null) return;
  const img = new Image();
  img.onload = () => {
    previewCanvas.width = result.width;
    previewCanvas.height = result.height;
    previewCtx.drawImage(img, 0, 0);
  };
  img.src = `data:image/png;base64,${result.png_base64}`;
}

function bindOrbitControls() {
  let dragging = false;
  let last: [number, number] = [0, 0];
  canvas.addEventListener('mousedown', (e) => {
    dragging = true;
    last = [e.clientX, e.clientY];
  });
  window.addEventListener('mouseup', () => (dragging = false));
  window.addEventListener('mousemove', (e) => {
    if (!dragging) return;
    orbit = dragOrbit(orbit, e.clientX - last[0], e.clientY - last[1]);
    last = [e.clientX, e.clientY];
    void refreshView();
  });
  canvas.addEventListener('wheel', (e) => {
    e.preventDefault();
    orbit = zoomOrbit(orbit, e.deltaY);
    void refreshView();
  }, { passive: false });
}

function bindBoxControls() {
  const fields: Array<['center' | 'dims', 0 | 1 | 2, string]> = [
    ['center', 0, 'cx'], ['center', 1, 'cy'], ['center', 2, 'cz'],
    ['dims', 0, 'dx'], ['dims', 1, 'dy'], ['dims', 2, 'dz'],
  ];
  for (const [field, axis, id] of fields) {
    const input = el<HTMLInputElement>(id);
    input.value = String(form.box[field][axis]);
    input.addEventListener('change', () => {
      try {
        form = withBoxField(form, field, axis, Number(input.value));
        void refreshView();
      } catch (err) {
        setStatus(String(err));
      }
    });
  }
}

function bindFormControls() {
  const caption = el<HTMLInputElement>('caption');
  caption.value = form.caption;
  caption.addEventListener('input', () => (form = { ...form, caption: caption.value }));

  const variant = el<HTMLSelectElement>('variant');
  variant.value = form.variant;
  variant.addEventListener('change', () => (form = { ...form, variant: variant.value }));

  const alpha = el<HTMLInputElement>('alpha');
  alpha.value = String(form.alpha);
  alpha.addEventListener('change', () => {
    form = { ...form, alpha: Number(alpha.value) };
    void refreshPreview(); // strength changes re-request the blended view
  });

  const texture = el<HTMLInputElement>('texture-only');
  texture.addEventListener('change', () => (form = { ...form, textureOnly: texture.checked }));

  el<HTMLInputElement>('show-hidden').addEventListener('change', (e) => {
    showHidden = (e.target as HTMLInputElement).checked;
    void refreshView();
  });

  el<HTMLButtonElement>('export').addEventListener('click', () => {
    el<HTMLTextAreaElement>('descriptor').value =
      JSON.stringify(exportDescriptor(form), null, 2);
  });
  el<HTMLButtonElement>('import').addEventListener('click', () => {
    try {
      form = importDescriptor(JSON.parse(el<HTMLTextAreaElement>('descriptor').value));
      bindBoxControls();
      caption.value = form.caption;
      variant.value = form.variant;
      alpha.value = String(form.alpha);
      void refreshView();
    } catch (err) {
      setStatus(String(err));
    }
  });

  el<HTMLButtonElement>('submit').addEventListener('click', () => void submitEdit());
}

async function submitEdit() {
  const descriptor = exportDescriptor(form);
  const steps = Number(el<HTMLInputElement>('steps').value) || 100;
  jobLine.textContent = 'submitting…';
  try {
    const { id } = await api.createEdit({
      scene: form.sceneId,
      box: descriptor.box,
      mode: descriptor.mode,
      caption: descriptor.caption,
      texture_only: descriptor.texture_only,
      steps,
      seed: 123,
      render_resolution: 32,
      n_samples: 24,
      scorer: 'mock',
    });
    currentEditId = id;
    const final = await pollEditStatus(
      (jobId) => api.editStatus(jobId),
      id,
      (status) => {
        jobLine.textContent =
          `job ${status.id}: ${status.state}  step ${status.step}/${status.total_steps}  ` +
          formatLosses(status.losses);
        if (status.step > 0 && status.step % 25 === 0) void refreshPreview();
      },
    );
    jobLine.textContent =
      final.state === 'done'
        ? `job ${final.id} finished at step ${final.step}  ${formatLosses(final.losses)}`
        : `job ${final.id} failed: ${final.error}`;
    void refreshPreview();
  } catch (err) {
    jobLine.textContent = String(err);
  }
}

async function boot() {
  const scenes = await api.scenes();
  const select = el<HTMLSelectElement>('scene');
  select.innerHTML = scenes.map((s) => `<option value="${s.id}">${s.id}</option>`).join('');
  scene = scenes[0] ?? null;
  if (scene) {
    form = { ...form, sceneId: scene.id };
    orbit = { ...orbit, afovDeg: scene.default_pose.afov_deg };
  }
  select.addEventListener('change', () => {
    form = { ...form, sceneId: select.value };
    void refreshView();
  });
  bindOrbitControls();
  bindBoxControls();
  bindFormControls();
  await refreshView();
}

void boot();
