/* tslint:disable */
/* eslint-disable */

/**
 * Outcome of a simulated run, flattened for JavaScript.
 */
export class DemoRun {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Rotation RMSE, degrees.
     */
    readonly are_deg: number;
    /**
     * Translation RMSE, m.
     */
    readonly ate: number;
    readonly estimate_xy: Float64Array;
    readonly frames: number;
    /**
     * Mode actually used, which may differ from the requested one.
     */
    readonly mode: string;
    readonly non_converged: number;
    /**
     * Ground-truth positions as `[x0, y0, x1, y1, ...]`.
     */
    readonly truth_xy: Float64Array;
}

/**
 * Points of one synthetic sweep, split by feature class, in the sensor frame.
 */
export class FeatureView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly edges_xy: Float64Array;
    readonly planars_xy: Float64Array;
    readonly points_xy: Float64Array;
}

export function evaluateText(estimate: string, ground_truth: string, align: boolean): string;

export function featureView(scene: string, sigma_threshold: number, seed: bigint): FeatureView;

export function simulateAndRun(scene: string, mode: string, frames: number, tilt_var: number, sigma_z: number, seed: bigint): DemoRun;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demorun_free: (a: number, b: number) => void;
    readonly __wbg_featureview_free: (a: number, b: number) => void;
    readonly demorun_are_deg: (a: number) => number;
    readonly demorun_ate: (a: number) => number;
    readonly demorun_estimate_xy: (a: number) => [number, number];
    readonly demorun_frames: (a: number) => number;
    readonly demorun_mode: (a: number) => [number, number];
    readonly demorun_non_converged: (a: number) => number;
    readonly demorun_truth_xy: (a: number) => [number, number];
    readonly evaluateText: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly featureView: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly featureview_edges_xy: (a: number) => [number, number];
    readonly featureview_planars_xy: (a: number) => [number, number];
    readonly featureview_points_xy: (a: number) => [number, number];
    readonly simulateAndRun: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: bigint) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
