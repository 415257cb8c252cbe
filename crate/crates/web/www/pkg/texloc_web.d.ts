/* tslint:disable */
/* eslint-disable */

/**
 * A map built from one texture, ready to localize queries.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Whether a query at this pose lies inside the texture.
     */
    fits(theta_deg: number, tx: number, ty: number): boolean;
    /**
     * Stitched frame poses in the texture frame, `[tx, ty, theta, ...]`.
     */
    framePoses(): Float64Array;
    /**
     * Localizes a query; returns a JSON string.
     */
    localize(theta_deg: number, tx: number, ty: number, occlusion: number, blur: number, seed: number): string;
    /**
     * Generates the texture, captures a 3x3 zig-zag of frames, stitches them
     * and builds the database. `style` is scratchy, granular or fibrous.
     */
    constructor(seed: number, style: string);
    /**
     * Query pixels as RGBA.
     */
    queryRgba(theta_deg: number, tx: number, ty: number, occlusion: number, blur: number, seed: number): Uint8Array;
    /**
     * Texture pixels as RGBA for an `ImageData`.
     */
    textureRgba(): Uint8Array;
    readonly featureCount: number;
    readonly frameHeight: number;
    readonly frameWidth: number;
    readonly height: number;
    readonly loopClosures: number;
    readonly queryHeight: number;
    readonly queryWidth: number;
    readonly width: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_featureCount: (a: number) => number;
    readonly demo_fits: (a: number, b: number, c: number, d: number) => number;
    readonly demo_frameHeight: (a: number) => number;
    readonly demo_framePoses: (a: number) => [number, number];
    readonly demo_frameWidth: (a: number) => number;
    readonly demo_height: (a: number) => number;
    readonly demo_localize: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly demo_loopClosures: (a: number) => number;
    readonly demo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_queryHeight: (a: number) => number;
    readonly demo_queryRgba: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly demo_queryWidth: (a: number) => number;
    readonly demo_textureRgba: (a: number) => [number, number];
    readonly demo_width: (a: number) => number;
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
