/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demorun_free: (a: number, b: number) => void;
export const __wbg_featureview_free: (a: number, b: number) => void;
export const demorun_are_deg: (a: number) => number;
export const demorun_ate: (a: number) => number;
export const demorun_estimate_xy: (a: number) => [number, number];
export const demorun_frames: (a: number) => number;
export const demorun_mode: (a: number) => [number, number];
export const demorun_non_converged: (a: number) => number;
export const demorun_truth_xy: (a: number) => [number, number];
export const evaluateText: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const featureView: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const featureview_edges_xy: (a: number) => [number, number];
export const featureview_planars_xy: (a: number) => [number, number];
export const featureview_points_xy: (a: number) => [number, number];
export const simulateAndRun: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: bigint) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
