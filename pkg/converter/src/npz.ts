/**
 * Minimal reader for .npz files (zip archives of .npy arrays).
 *
 * Supports the subset numpy's savez/savez_compressed actually produces:
 * stored or raw-deflate zip entries, .npy format versions 1.x/2.x, and
 * little-endian float32/float64 C-order payloads.
 */

import * as zlib from "node:zlib";

export interface NpyArray {
  /** Entry name with the trailing ".npy" stripped. */
  name: string;
  shape: number[];
  /** Always float32 after loading; float64 sources are downcast. */
  data: Float32Array;
  /** Source dtype descriptor, e.g. "<f4". */
  descr: string;
}

const EOCD_SIGNATURE = 0x06054b50;
const CENTRAL_SIGNATURE = 0x02014b50;
const LOCAL_SIGNATURE = 0x04034b50;

interface ZipEntry {
  name: string;
  compression: number;
  compressedSize: number;
  localHeaderOffset: number;
}

function findEndOfCentralDirectory(buf: Buffer): number {
  // EOCD is at the tail; scan backwards past a possible zip comment.
  const earliest = Math.max(0, buf.length - 22 - 0xffff);
  for (let i = buf.length - 22; i >= earliest; i--) {
    if (buf.readUInt32LE(i) === EOCD_SIGNATURE) {
      return i;
    }
  }
  throw new Error("not a zip file: end-of-central-directory record not found");
}

function readCentralDirectory(buf: Buffer): ZipEntry[] {
  const eocd = findEndOfCentralDirectory(buf);
  const entryCount = buf.readUInt16LE(eocd + 10);
  let offset = buf.readUInt32LE(eocd + 16);
  const entries: ZipEntry[] = [];
  for (let i = 0; i < entryCount; i++) {
    if (buf.readUInt32LE(offset) !== CENTRAL_SIGNATURE) {
      throw new Error(`corrupt zip: bad central directory entry at ${offset}`);
    }
    const compression = buf.readUInt16LE(offset + 10);
    const compressedSize = buf.readUInt32LE(offset + 20);
    const nameLength = buf.readUInt16LE(offset + 28);
    const extraLength = buf.readUInt16LE(offset + 30);
    const commentLength = buf.readUInt16LE(offset + 32);
    const localHeaderOffset = buf.readUInt32LE(offset + 42);
    const name = buf.toString("utf8", offset + 46, offset + 46 + nameLength);
    entries.push({ name, compression, compressedSize, localHeaderOffset });
    offset += 46 + nameLength + extraLength + commentLength;
  }
  return entries;
}

function extractEntry(buf: Buffer, entry: ZipEntry): Buffer {
  const at = entry.localHeaderOffset;
  if (at + 30 > buf.length || buf.readUInt32LE(at) !== LOCAL_SIGNATURE) {
    throw new Error(`corrupt zip: bad local header for ${entry.name}`);
  }
  const nameLength = buf.readUInt16LE(at + 26);
  const extraLength = buf.readUInt16LE(at + 28);
  const start = at + 30 + nameLength + extraLength;
  const end = start + entry.compressedSize;
  if (end > buf.length) {
    throw new Error(`corrupt zip: ${entry.name} payload extends past end of file`);
  }
  const raw = buf.subarray(start, end);
  if (entry.compression === 0) {
    return Buffer.from(raw);
  }
  if (entry.compression === 8) {
    return zlib.inflateRawSync(raw);
  }
  throw new Error(
    `unsupported zip compression method ${entry.compression} for ${entry.name}`,
  );
}

function parseNpy(name: string, buf: Buffer): NpyArray {
  if (buf.length < 10 || !buf.subarray(0, 6).equals(Buffer.from("\x93NUMPY", "latin1"))) {
    throw new Error(`${name}: not an npy array (bad magic)`);
  }
  const major = buf[6];
  let headerLength: number;
  let headerStart: number;
  if (major === 1) {
    headerLength = buf.readUInt16LE(8);
    headerStart = 10;
  } else {
    headerLength = buf.readUInt32LE(8);
    headerStart = 12;
  }
  const header = buf.toString("latin1", headerStart, headerStart + headerLength);

  const descrMatch = header.match(/'descr':\s*'([^']+)'/);
  const fortranMatch = header.match(/'fortran_order':\s*(True|False)/);
  const shapeMatch = header.match(/'shape':\s*\(([^)]*)\)/);
  if (!descrMatch || !fortranMatch || !shapeMatch) {
    throw new Error(`${name}: malformed npy header: ${header.trim()}`);
  }
  if (fortranMatch[1] === "True") {
    throw new Error(`${name}: fortran-order arrays are not supported`);
  }
  const descr = descrMatch[1];
  const shape = shapeMatch[1]
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => parseInt(s, 10));
  const count = shape.reduce((a, b) => a * b, 1);

  const payload = buf.subarray(headerStart + headerLength);
  let data: Float32Array;
  if (descr === "<f4") {
    if (payload.length < count * 4) {
      throw new Error(`${name}: truncated payload (${payload.length} bytes for ${count} float32)`);
    }
    data = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      data[i] = payload.readFloatLE(i * 4);
    }
  } else if (descr === "<f8") {
    if (payload.length < count * 8) {
      throw new Error(`${name}: truncated payload (${payload.length} bytes for ${count} float64)`);
    }
    data = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      data[i] = Math.fround(payload.readDoubleLE(i * 8));
    }
  } else {
    throw new Error(`${name}: unsupported dtype ${descr} (only <f4 and <f8)`);
  }
  return { name: name.replace(/\.npy$/, ""), shape, data, descr };
}

/** Parse every array in an in-memory .npz file, in archive order. */
export function readNpz(buf: Buffer): NpyArray[] {
  const entries = readCentralDirectory(buf);
  const arrays: NpyArray[] = [];
  for (const entry of entries) {
    if (!entry.name.endsWith(".npy")) {
      continue;
    }
    arrays.push(parseNpy(entry.name, extractEntry(buf, entry)));
  }
  if (arrays.length === 0) {
    throw new Error("npz archive contains no arrays");
  }
  return arrays;
}
