/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const airtime: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const compare: (a: number, b: bigint, c: number, d: number) => [number, number];
export const lading: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
