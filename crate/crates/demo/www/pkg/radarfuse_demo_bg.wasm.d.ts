/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const blur_scene_points: (a: number, b: number, c: number) => [number, number];
export const blur_scene_regions: (a: number, b: number) => [number, number];
export const box_corners: (a: number, b: number) => [number, number];
export const deformable_samples: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const image_size: () => [number, number];
export const overlap_polygon: (a: number, b: number, c: number, d: number) => [number, number];
export const rotated_iou: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
