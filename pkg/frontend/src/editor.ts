import type { BlendModeJson, BoxJson } from './types.js';

/** The edit form's state; exports to and imports from the engine's edit
 * descriptor JSON so a round trip reproduces box, mode and caption
 * exactly. */
export interface EditFormState {
  sceneId: string;
  box: BoxJson;
  variant: string;
  alpha: number;
  eps: number;
  caption: string;
  textureOnly: boolean;
}

export interface EditDescriptorJson {
  scene_id: string;
  box: BoxJson;
  mode: BlendModeJson;
  caption: string;
  ema_center: [number, number, number] | null;
  field_g_checkpoint: string | null;
  texture_only: boolean;
}

export const BLEND_VARIANTS = [
  'replace',
  'smooth',
  'object-blend-in-activation',
  'object-blend-out-activation',
] as const;

export function exportDescriptor(state: EditFormState): EditDescriptorJson {
  return {
    scene_id: state.sceneId,
    box: {
      center: [...state.box.center] as [number, number, number],
      dims: [...state.box.dims] as [number, number, number],
    },
    mode: { variant: state.variant, alpha: state.alpha, eps: state.eps },
    caption: state.caption,
    ema_center: null,
    field_g_checkpoint: null,
    texture_only: state.textureOnly,
  };
}

export function importDescriptor(doc: EditDescriptorJson): EditFormState {
  if (!BLEND_VARIANTS.includes(doc.mode.variant as typeof BLEND_VARIANTS[number])) {
    throw new Error(`unknown blend variant: ${doc.mode.variant}`);
  }
  if (doc.box.dims.some((d) => !(d > 0))) {
    throw new Error('box dims must be positive');
  }
  return {
    sceneId: doc.scene_id,
    box: {
      center: [...doc.box.center] as [number, number, number],
      dims: [...doc.box.dims] as [number, number, number],
    },
    variant: doc.mode.variant,
    alpha: doc.mode.alpha,
    eps: doc.mode.eps,
    caption: doc.caption,
    textureOnly: doc.texture_only,
  };
}

/** Nudge one box field; returns a new state (inputs are immutable). */
export function withBoxField(
  state: EditFormState,
  field: 'center' | 'dims',
  axis: 0 | 1 | 2,
  value: number,
): EditFormState {
  if (field === 'dims' && !(value > 0)) {
    throw new Error('box dims must be positive');
  }
  const box: BoxJson = {
    center: [...state.box.center] as [number, number, number],
    dims: [...state.box.dims] as [number, number, number],
  };
  box[field][axis] = value;
  return { ...state, box };
}
