/**
 * Writer (and reader, for tests) of the named-tensor archive format.
 *
 * Binary layout (all integers little-endian):
 *
 *     magic   8 bytes  "VITW0001"
 *     count   u64      number of entries
 *     entry   u32 name length, UTF-8 name, u32 rank, rank * u64 extents,
 *             float32 LE payload (product of extents values)
 *
 * Writes are atomic: the file is assembled in memory and written to a
 * temp path that is renamed into place only on success.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export const MAGIC = "VITW0001";

export interface ArchiveEntry {
  name: string;
  shape: number[];
  data: Float32Array;
}

export function encodeArchive(entries: ArchiveEntry[]): Buffer {
  const chunks: Buffer[] = [Buffer.from(MAGIC, "ascii")];
  const count = Buffer.alloc(8);
  count.writeBigUInt64LE(BigInt(entries.length));
  chunks.push(count);
  for (const entry of entries) {
    const expected = entry.shape.reduce((a, b) => a * b, 1);
    if (entry.data.length !== expected) {
      throw new Error(
        `${entry.name}: payload has ${entry.data.length} values, shape [${entry.shape}] needs ${expected}`,
      );
    }
    const name = Buffer.from(entry.name, "utf8");
    const header = Buffer.alloc(4 + name.length + 4 + 8 * entry.shape.length);
    header.writeUInt32LE(name.length, 0);
    name.copy(header, 4);
    header.writeUInt32LE(entry.shape.length, 4 + name.length);
    entry.shape.forEach((extent, i) => {
      header.writeBigUInt64LE(BigInt(extent), 4 + name.length + 4 + 8 * i);
    });
    const payload = Buffer.alloc(4 * entry.data.length);
    for (let i = 0; i < entry.data.length; i++) {
      payload.writeFloatLE(entry.data[i], 4 * i);
    }
    chunks.push(header, payload);
  }
  return Buffer.concat(chunks);
}

export function writeArchive(entries: ArchiveEntry[], outPath: string): void {
  const blob = encodeArchive(entries);
  const tmp = path.join(
    path.dirname(outPath),
    `${path.basename(outPath)}.${process.pid}.tmp`,
  );
  try {
    fs.writeFileSync(tmp, blob);
    fs.renameSync(tmp, outPath);
  } catch (err) {
    if (fs.existsSync(tmp)) {
      fs.unlinkSync(tmp);
    }
    throw err;
  }
}

export function readArchive(blob: Buffer): ArchiveEntry[] {
  if (blob.length < 16 || blob.toString("ascii", 0, 8) !== MAGIC) {
    throw new Error("bad archive magic");
  }
  const count = Number(blob.readBigUInt64LE(8));
  let offset = 16;
  const entries: ArchiveEntry[] = [];
  for (let i = 0; i < count; i++) {
    const nameLength = blob.readUInt32LE(offset);
    offset += 4;
    const name = blob.toString("utf8", offset, offset + nameLength);
    offset += nameLength;
    const rank = blob.readUInt32LE(offset);
    offset += 4;
    const shape: number[] = [];
    for (let d = 0; d < rank; d++) {
      shape.push(Number(blob.readBigUInt64LE(offset)));
      offset += 8;
    }
    const valueCount = shape.reduce((a, b) => a * b, 1);
    const data = new Float32Array(valueCount);
    for (let v = 0; v < valueCount; v++) {
      data[v] = blob.readFloatLE(offset);
      offset += 4;
    }
    entries.push({ name, shape, data });
  }
  if (offset !== blob.length) {
    throw new Error(`trailing bytes after ${count} entries`);
  }
  return entries;
}
