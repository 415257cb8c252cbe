/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_featureCount: (a: number) => number;
export const demo_fits: (a: number, b: number, c: number, d: number) => number;
export const demo_frameHeight: (a: number) => number;
export const demo_framePoses: (a: number) => [number, number];
export const demo_frameWidth: (a: number) => number;
export const demo_height: (a: number) => number;
export const demo_localize: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const demo_loopClosures: (a: number) => number;
export const demo_new: (a: number, b: number, c: number) => [number, number, number];
export const demo_queryHeight: (a: number) => number;
export const demo_queryRgba: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const demo_queryWidth: (a: number) => number;
export const demo_textureRgba: (a: number) => [number, number];
export const demo_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
