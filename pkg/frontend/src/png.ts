/** Minimal deterministic grayscale PNG writer.
 *
 * Crops travel to the service as base64 PNG strings, and the session
 * contract promises that the same stroke list always yields the same
 * payload bytes.  Browser canvas APIs give no such guarantee (premultiplied
 * alpha, color management), so the client writes its own PNGs: 8-bit
 * grayscale, filter 0 on every scanline, zlib stream with *stored* deflate
 * blocks.  Stored blocks cost ~1.03x raw size on 64x64 crops — irrelevant —
 * and remove the compressor from the determinism surface entirely.
 */

const PNG_SIGNATURE = Uint8Array.of(137, 80, 78, 71, 13, 10, 26, 10);

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]!) & 0xff]! ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

export function adler32(bytes: Uint8Array): number {
  const MOD = 65521;
  let s1 = 1;
  let s2 = 0;
  for (let i = 0; i < bytes.length; i++) {
    s1 = (s1 + bytes[i]!) % MOD;
    s2 = (s2 + s1) % MOD;
  }
  return ((s2 << 16) | s1) >>> 0;
}

function writeU32BE(out: number[], value: number): void {
  out.push((value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff);
}

function chunk(out: number[], type: string, data: Uint8Array): void {
  writeU32BE(out, data.length);
  const typed = new Uint8Array(4 + data.length);
  for (let i = 0; i < 4; i++) {
    typed[i] = type.charCodeAt(i);
  }
  typed.set(data, 4);
  for (const b of typed) {
    out.push(b);
  }
  writeU32BE(out, crc32(typed));
}

/** Wrap raw bytes in a zlib stream of stored (uncompressed) deflate blocks. */
export function zlibStored(raw: Uint8Array): Uint8Array {
  const parts: number[] = [0x78, 0x01];
  const MAX_BLOCK = 65535;
  let offset = 0;
  do {
    const len = Math.min(MAX_BLOCK, raw.length - offset);
    const final = offset + len >= raw.length ? 1 : 0;
    parts.push(final, len & 0xff, (len >>> 8) & 0xff, ~len & 0xff, (~len >>> 8) & 0xff);
    for (let i = 0; i < len; i++) {
      parts.push(raw[offset + i]!);
    }
    offset += len;
  } while (offset < raw.length);
  const out = new Uint8Array(parts.length + 4);
  out.set(parts);
  const checksum = adler32(raw);
  out[parts.length] = (checksum >>> 24) & 0xff;
  out[parts.length + 1] = (checksum >>> 16) & 0xff;
  out[parts.length + 2] = (checksum >>> 8) & 0xff;
  out[parts.length + 3] = checksum & 0xff;
  return out;
}

/** Encode an 8-bit grayscale image (row-major bytes) as a PNG file. */
export function encodeGrayPng(gray: Uint8Array, width: number, height: number): Uint8Array {
  if (gray.length !== width * height) {
    throw new Error(`gray buffer length ${gray.length} != ${width}*${height}`);
  }
  const ihdr = new Uint8Array(13);
  const iv = new DataView(ihdr.buffer);
  iv.setUint32(0, width);
  iv.setUint32(4, height);
  ihdr[8] = 8; // bit depth
  ihdr[9] = 0; // color type: grayscale
  ihdr[10] = 0; // compression
  ihdr[11] = 0; // filter method
  ihdr[12] = 0; // interlace

  const raw = new Uint8Array(height * (width + 1));
  for (let y = 0; y < height; y++) {
    raw[y * (width + 1)] = 0; // filter type 0 per scanline
    raw.set(gray.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }

  const out: number[] = [];
  for (const b of PNG_SIGNATURE) {
    out.push(b);
  }
  chunk(out, "IHDR", ihdr);
  chunk(out, "IDAT", zlibStored(raw));
  chunk(out, "IEND", new Uint8Array(0));
  return Uint8Array.from(out);
}

/** Convert float ink in [0, 1] to service gray bytes: 255 - round(v * 255). */
export function inkToGrayBytes(data: Float64Array): Uint8Array {
  const out = new Uint8Array(data.length);
  for (let i = 0; i < data.length; i++) {
    out[i] = 255 - Math.round(data[i]! * 255);
  }
  return out;
}

const B64_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

/** Single-line base64, no wrapping — the transport requires one line. */
export function toBase64(bytes: Uint8Array): string {
  let out = "";
  let i = 0;
  for (; i + 2 < bytes.length; i += 3) {
    const n = (bytes[i]! << 16) | (bytes[i + 1]! << 8) | bytes[i + 2]!;
    out +=
      B64_ALPHABET[(n >>> 18) & 63]! +
      B64_ALPHABET[(n >>> 12) & 63]! +
      B64_ALPHABET[(n >>> 6) & 63]! +
      B64_ALPHABET[n & 63]!;
  }
  const rest = bytes.length - i;
  if (rest === 1) {
    const n = bytes[i]! << 16;
    out += B64_ALPHABET[(n >>> 18) & 63]! + B64_ALPHABET[(n >>> 12) & 63]! + "==";
  } else if (rest === 2) {
    const n = (bytes[i]! << 16) | (bytes[i + 1]! << 8);
    out +=
      B64_ALPHABET[(n >>> 18) & 63]! +
      B64_ALPHABET[(n >>> 12) & 63]! +
      B64_ALPHABET[(n >>> 6) & 63]! +
      "=";
  }
  return out;
}

/** Inverse of {@link toBase64}; rejects wrapped or malformed input. */
export function fromBase64(text: string): Uint8Array {
  if (text.length % 4 !== 0) {
    throw new Error("base64 length must be a multiple of 4");
  }
  const lookup = new Int16Array(128).fill(-1);
  for (let i = 0; i < B64_ALPHABET.length; i++) {
    lookup[B64_ALPHABET.charCodeAt(i)] = i;
  }
  let padding = 0;
  if (text.endsWith("==")) padding = 2;
  else if (text.endsWith("=")) padding = 1;
  const out = new Uint8Array((text.length / 4) * 3 - padding);
  let w = 0;
  for (let i = 0; i < text.length; i += 4) {
    let n = 0;
    let bits = 0;
    for (let k = 0; k < 4; k++) {
      const ch = text.charCodeAt(i + k);
      if (ch === 61 /* '=' */ && i + 4 >= text.length) {
        continue;
      }
      const v = ch < 128 ? lookup[ch]! : -1;
      if (v < 0) {
        throw new Error(`invalid base64 character at ${i + k}`);
      }
      n = (n << 6) | v;
      bits += 6;
    }
    n <<= 24 - bits;
    if (bits >= 8) out[w++] = (n >>> 16) & 0xff;
    if (bits >= 16) out[w++] = (n >>> 8) & 0xff;
    if (bits >= 24) out[w++] = n & 0xff;
  }
  return out;
}
