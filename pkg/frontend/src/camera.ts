import type { PoseJson } from './types.js';

/** Orbit camera state: spherical angles around a target point. Elevation
 * follows the engine's convention: it is the elevation of the viewing
 * direction, so -90 puts the camera straight above looking down. */
export interface OrbitState {
  azimuthDeg: number;
  elevationDeg: number;
  radius: number;
  target: [number, number, number];
  afovDeg: number;
}

const rad = (deg: number) => (deg * Math.PI) / 180;

export function viewForward(azimuthDeg: number, elevationDeg: number): [number, number, number] {
  const az = rad(azimuthDeg);
  const el = rad(elevationDeg);
  return [Math.cos(el) * Math.cos(az), Math.cos(el) * Math.sin(az), Math.sin(el)];
}

export function orbitPose(state: OrbitState): PoseJson {
  const f = viewForward(state.azimuthDeg, state.elevationDeg);
  const position: [number, number, number] = [
    state.target[0] - state.radius * f[0],
    state.target[1] - state.radius * f[1],
    state.target[2] - state.radius * f[2],
  ];
  return { position, look_at: [...state.target], afov_deg: state.afovDeg };
}

/** Mouse-drag update; clamps elevation away from the poles so the pose
 * stays well defined. */
export function dragOrbit(state: OrbitState, dxPx: number, dyPx: number): OrbitState {
  const azimuthDeg = normalizeAzimuth(state.azimuthDeg - dxPx * 0.4);
  const elevationDeg = clamp(state.elevationDeg + dyPx * 0.4, -89, 89);
  return { ...state, azimuthDeg, elevationDeg };
}

export function zoomOrbit(state: OrbitState, wheelDelta: number): OrbitState {
  const factor = Math.exp(wheelDelta * 0.001);
  return { ...state, radius: clamp(state.radius * factor, 0.2, 50) };
}

export function normalizeAzimuth(deg: number): number {
  let a = ((deg + 180) % 360 + 360) % 360 - 180;
  if (a === -180) a = 180;
  return a;
}

const clamp = (x: number, lo: number, hi: number) => Math.min(Math.max(x, lo), hi);
