export interface PoseJson {
  position: [number, number, number];
  look_at: [number, number, number];
  up?: [number, number, number];
  afov_deg: number;
}

export interface BoxJson {
  center: [number, number, number];
  dims: [number, number, number];
}

export interface BlendModeJson {
  variant: string;
  alpha: number;
  eps: number;
}

export interface SceneSummary {
  id: string;
  scene_type: string;
  bounds_min: [number, number, number];
  bounds_max: [number, number, number];
  default_pose: PoseJson;
  resolution: number;
}

export interface RenderResponse {
  width: number;
  height: number;
  png_base64: string;
  depth_f32_base64: string;
  mean_transmittance: number;
}

export interface EdgeSample {
  edge: number;
  pixel: [number, number];
  visible: boolean;
}

export interface RoiResponse {
  width: number;
  height: number;
  samples: EdgeSample[];
}

export interface EditStatus {
  id: string;
  state: 'running' | 'done' | 'error';
  step: number;
  total_steps: number;
  losses: Record<string, number> | null;
  error: string | null;
}

export interface EditCreateRequest {
  scene: string;
  box: BoxJson;
  mode: BlendModeJson;
  caption: string;
  texture_only: boolean;
  steps: number;
  seed: number;
  render_resolution: number;
  n_samples: number;
  scorer: string;
  edit_id?: string;
}
