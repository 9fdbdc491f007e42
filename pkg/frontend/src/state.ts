/**
 * Pure view-state logic: axis/slice geometry, seed hit-testing, and the
 * client-side model status. No I/O and no DOM in this module.
 */

export type Axis = "x" | "y" | "z";
export type Position = [number, number, number];
export type ModelStatus = "absent" | "stale" | "trained";

export interface VolumeMetaInfo {
  dims: [number, number, number];
  dtype: string;
  voxel_count: number;
  max_value: number;
  env_size: number;
}

export interface ModelInfo {
  format_version: number;
  theta_g: number;
  w_max: number;
  lambda: number;
  mu: number;
  features: string[];
  env_size: number;
  beta: number[];
  diagnostics: Record<string, unknown>;
}

export interface JobInfo {
  id: string;
  status: string;
  progress: number;
  stats: Record<string, unknown> | null;
  error: string | null;
}

/** Overlay palette; mirrors the colors the service bakes into preview PNGs. */
export const OVERLAY_BOTH: [number, number, number, number] = [255, 255, 255, 160];
export const OVERLAY_FAITH_ONLY: [number, number, number, number] = [255, 128, 0, 220];
export const OVERLAY_GLOBAL_ONLY: [number, number, number, number] = [64, 128, 255, 220];

export interface ViewState {
  axis: Axis;
  index: number;
  windowLo: number;
  windowHi: number;
  overlayVisible: boolean;
  overlayOpacity: number;
  thetaG: number | null;
  seeds: Position[];
  modelStatus: ModelStatus;
  jobId: string | null;
  jobStatus: string | null;
  jobProgress: number;
  notice: string | null;
}

export function initialViewState(): ViewState {
  return {
    axis: "z",
    index: 0,
    windowLo: 0,
    windowHi: 255,
    overlayVisible: true,
    overlayOpacity: 0.8,
    thetaG: null,
    seeds: [],
    modelStatus: "absent",
    jobId: null,
    jobStatus: null,
    jobProgress: 0,
    notice: null,
  };
}

export function sliceCount(dims: [number, number, number], axis: Axis): number {
  return axis === "x" ? dims[0] : axis === "y" ? dims[1] : dims[2];
}

export function clampIndex(index: number, dims: [number, number, number], axis: Axis): number {
  return Math.min(Math.max(0, Math.round(index)), sliceCount(dims, axis) - 1);
}

/**
 * Displayed slice orientation follows the service: axis z -> rows y, cols x;
 * axis y -> rows z, cols x; axis x -> rows z, cols y.
 */
export function sliceShape(
  dims: [number, number, number],
  axis: Axis,
): { rows: number; cols: number } {
  const [dx, dy, dz] = dims;
  if (axis === "z") return { rows: dy, cols: dx };
  if (axis === "y") return { rows: dz, cols: dx };
  return { rows: dz, cols: dy };
}

export function pixelToVoxel(axis: Axis, index: number, col: number, row: number): Position {
  if (axis === "z") return [col, row, index];
  if (axis === "y") return [col, index, row];
  return [index, col, row];
}

export function voxelToPixel(axis: Axis, p: Position): { col: number; row: number } {
  if (axis === "z") return { col: p[0], row: p[1] };
  if (axis === "y") return { col: p[0], row: p[2] };
  return { col: p[1], row: p[2] };
}

/** Seeds whose coordinate along the viewed axis equals the slice index. */
export function seedsOnSlice(seeds: Position[], axis: Axis, index: number): Position[] {
  const ax = axis === "x" ? 0 : axis === "y" ? 1 : 2;
  return seeds.filter((p) => p[ax] === index);
}

/**
 * A click within 1 px (Chebyshev) of an existing marker on the current slice
 * selects that marker instead of creating a neighbor.
 */
export function hitTestSeed(
  seeds: Position[],
  axis: Axis,
  index: number,
  col: number,
  row: number,
  tolerance = 1,
): Position | null {
  for (const seed of seedsOnSlice(seeds, axis, index)) {
    const px = voxelToPixel(axis, seed);
    if (Math.abs(px.col - col) <= tolerance && Math.abs(px.row - row) <= tolerance) {
      return seed;
    }
  }
  return null;
}

export function samePosition(a: Position, b: Position): boolean {
  return a[0] === b[0] && a[1] === b[1] && a[2] === b[2];
}

/**
 * Latest-wins bookkeeping for in-flight requests: a response is applied only
 * if no newer request of the same kind was issued meanwhile.
 */
export class RequestSequencer {
  private counter = 0;

  issue(): number {
    this.counter += 1;
    return this.counter;
  }

  isCurrent(ticket: number): boolean {
    return ticket === this.counter;
  }
}
