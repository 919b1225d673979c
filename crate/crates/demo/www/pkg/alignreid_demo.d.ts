/* tslint:disable */
/* eslint-disable */

/**
 * Label of an image-feature pair for the joint discriminator.
 */
export function pair_label(image_is_real: boolean, feature_is_real: boolean, same_identity: boolean): string;

/**
 * RGBA pixels of one row per identity: two RGB cameras then two IR cameras.
 */
export function render_identities(seed: bigint, identities: number, nuisance: number): Uint8Array;

/**
 * CMC and mAP of a score table given as JSON:
 * `{"query_ids": [..], "gallery_ids": [..], "scores": [[..], ..]}`.
 */
export function retrieval_metrics(input: string): string;

/**
 * Width and height in pixels of the strip returned by [`render_identities`].
 */
export function strip_size(identities: number, image_size: number): Uint32Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly pair_label: (a: number, b: number, c: number) => [number, number];
    readonly render_identities: (a: bigint, b: number, c: number) => [number, number, number, number];
    readonly retrieval_metrics: (a: number, b: number) => [number, number, number, number];
    readonly strip_size: (a: number, b: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
