/**
 * Minimal NPY codec for the array types the toolkit exchanges:
 * little-endian uint8/uint16/uint32/float32, C order, 2D or 3D.
 * Version 1.0 is written; 1.0 and 2.0 are accepted.
 */

import { FormatError, UnsupportedError, ValidationError } from "./errors.js";

export type ArrayData = Uint8Array | Uint16Array | Uint32Array | Float32Array;

export interface BoundArray {
  data: ArrayData;
  shape: number[];
}

const MAGIC = Buffer.from("\x93NUMPY", "latin1");

type DtypeInfo = {
  descr: string;
  bytes: number;
  build: (buf: Buffer) => ArrayData;
};

const DTYPES: Record<string, DtypeInfo> = {
  "|u1": { descr: "|u1", bytes: 1, build: (b) => new Uint8Array(copyAligned(b)) },
  "<u2": { descr: "<u2", bytes: 2, build: (b) => new Uint16Array(copyAligned(b)) },
  "<u4": { descr: "<u4", bytes: 4, build: (b) => new Uint32Array(copyAligned(b)) },
  "<f4": { descr: "<f4", bytes: 4, build: (b) => new Float32Array(copyAligned(b)) },
};

function copyAligned(buf: Buffer): ArrayBuffer {
  // Typed-array views need alignment; Buffer slices may not provide it.
  const out = new ArrayBuffer(buf.length);
  new Uint8Array(out).set(buf);
  return out;
}

export function descrOf(data: ArrayData): string {
  if (data instanceof Uint8Array) return "|u1";
  if (data instanceof Uint16Array) return "<u2";
  if (data instanceof Uint32Array) return "<u4";
  if (data instanceof Float32Array) return "<f4";
  throw new ValidationError("unsupported typed array");
}

export function checkBound(a: BoundArray): void {
  if (a.shape.length !== 2 && a.shape.length !== 3) {
    throw new ValidationError(`expected a 2D or 3D array, got shape [${a.shape}]`);
  }
  const count = a.shape.reduce((x, y) => x * y, 1);
  if (a.data.length !== count) {
    throw new ValidationError(
      `array is not contiguous for its shape: ${a.data.length} values vs shape [${a.shape}]`,
    );
  }
}

export function encodeNpy(a: BoundArray): Buffer {
  checkBound(a);
  const descr = descrOf(a.data);
  const shapeRepr = `(${a.shape.join(", ")})`;
  let header = `{'descr': '${descr}', 'fortran_order': False, 'shape': ${shapeRepr}, }`;
  const unpadded = MAGIC.length + 2 + 2 + header.length + 1;
  header += " ".repeat((64 - (unpadded % 64)) % 64) + "\n";

  const head = Buffer.alloc(MAGIC.length + 4 + header.length);
  MAGIC.copy(head, 0);
  head[6] = 1; // version 1.0
  head[7] = 0;
  head.writeUInt16LE(header.length, 8);
  head.write(header, 10, "latin1");
  const body = Buffer.from(a.data.buffer, a.data.byteOffset, a.data.byteLength);
  return Buffer.concat([head, body]);
}

export function decodeNpy(buf: Buffer): BoundArray {
  if (buf.length < 10 || !buf.subarray(0, 6).equals(MAGIC)) {
    throw new FormatError("not an NPY file");
  }
  const major = buf[6];
  const minor = buf[7];
  if (!((major === 1 || major === 2) && minor === 0)) {
    throw new UnsupportedError(`NPY version ${major}.${minor} not supported`);
  }
  let headerLen: number;
  let offset: number;
  if (major === 1) {
    headerLen = buf.readUInt16LE(8);
    offset = 10;
  } else {
    headerLen = buf.readUInt32LE(8);
    offset = 12;
  }
  const header = buf.subarray(offset, offset + headerLen).toString("latin1");
  const descrMatch = header.match(/'descr':\s*'([^']+)'/);
  const orderMatch = header.match(/'fortran_order':\s*(True|False)/);
  const shapeMatch = header.match(/'shape':\s*\(([^)]*)\)/);
  if (!descrMatch || !orderMatch || !shapeMatch) {
    throw new FormatError("malformed NPY header");
  }
  if (orderMatch[1] === "True") {
    throw new UnsupportedError("Fortran-order arrays not supported");
  }
  const info = DTYPES[descrMatch[1]];
  if (!info) {
    throw new UnsupportedError(`dtype ${descrMatch[1]} not supported`);
  }
  const shape = shapeMatch[1]
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => Number(s));
  if (shape.length !== 2 && shape.length !== 3 || shape.some((v) => !Number.isInteger(v))) {
    throw new UnsupportedError(`expected a 2D or 3D array, got shape (${shapeMatch[1]})`);
  }
  const count = shape.reduce((x, y) => x * y, 1);
  const body = buf.subarray(offset + headerLen);
  if (body.length < count * info.bytes) {
    throw new FormatError("truncated data section");
  }
  const data = info.build(body.subarray(0, count * info.bytes));
  return { data, shape };
}
