/* tslint:disable */
/* eslint-disable */

/**
 * Projected points of a synthetic scene with their blur class
 * (0 background, 1 blurred, 2 3D foreground). Records of 4: `u, v, depth,
 * class`; points behind the camera are omitted.
 */
export function blur_scene_points(seed: number, n_boxes: number, n_points: number): Float64Array;

/**
 * 2D regions of the same scene. Records of 4: `u1, v1, u2, v2`.
 */
export function blur_scene_regions(seed: number, n_boxes: number): Float64Array;

/**
 * Corners of a box, `[x0, y0, x1, y1, ...]` counter-clockwise.
 */
export function box_corners(v: Float64Array): Float64Array;

/**
 * Deformable sample locations around the normalized reference `(u, v)`
 * for a seeded sampler and a seeded query scaled by `spread`.
 * Records of 4: `level, u, v, weight`, all in normalized image units.
 */
export function deformable_samples(seed: number, u: number, v: number, n_samples: number, spread: number): Float64Array;

/**
 * Image size of the synthetic camera, `[W, H]`.
 */
export function image_size(): Float64Array;

/**
 * Intersection polygon of two boxes, flattened like [`box_corners`].
 */
export function overlap_polygon(a: Float64Array, b: Float64Array): Float64Array;

/**
 * BEV IoU of two `[x, y, l, w, yaw]` boxes; NaN for malformed input.
 */
export function rotated_iou(a: Float64Array, b: Float64Array): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly blur_scene_points: (a: number, b: number, c: number) => [number, number];
    readonly blur_scene_regions: (a: number, b: number) => [number, number];
    readonly box_corners: (a: number, b: number) => [number, number];
    readonly deformable_samples: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly image_size: () => [number, number];
    readonly overlap_polygon: (a: number, b: number, c: number, d: number) => [number, number];
    readonly rotated_iou: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
