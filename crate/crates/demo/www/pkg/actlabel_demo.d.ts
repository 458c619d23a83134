/* tslint:disable */
/* eslint-disable */

/**
 * Classifies the 2-D point `(x, y)` against three fixed template classes.
 * Returns the label (`NG` below `lambda`), per-class similarities and the
 * templates for drawing.
 */
export function match_point(x: number, y: number, lambda: number, aggregation: string): string;

/**
 * `boxes` is `[{"box": [x1, y1, x2, y2], "score": s}, ...]`. Returns the
 * pairwise IoU table and the indices that survive the confidence cut and
 * greedy NMS.
 */
export function nms_explore(boxes: string, conf: number, nms_iou: number): string;

/**
 * Sweeps an 11 x 11 threshold grid over a seeded synthetic scene. `mode` is
 * `single` (conf x NMS IoU) or `dual` (box x text threshold). `best` is the
 * cell with the highest accuracy among those with recall at or above
 * `recall_floor`, or null.
 */
export function sweep_heatmap(seed: number, frames: number, mode: string, recall_floor: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly match_point: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly nms_explore: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly sweep_heatmap: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
