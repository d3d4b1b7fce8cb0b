/**
 * Typed element descriptors and little-endian buffer marshalling.
 *
 * Matches the core wire convention exactly: int32/int64/float64/byte,
 * little-endian, no padding. int64 values travel as bigint.
 */

export type DatatypeKind = "int32" | "int64" | "float64" | "byte";

export interface Datatype {
  readonly kind: DatatypeKind;
  readonly width: 1 | 4 | 8;
}

export const datatypes = {
  int: { kind: "int32", width: 4 } as Datatype,
  int32: { kind: "int32", width: 4 } as Datatype,
  int64: { kind: "int64", width: 8 } as Datatype,
  double: { kind: "float64", width: 8 } as Datatype,
  float64: { kind: "float64", width: 8 } as Datatype,
  byte: { kind: "byte", width: 1 } as Datatype,
} as const;

/** Mirror of the scripting-surface type constructor: fmi.types(fmi.datatypes.int). */
export function types(descriptor: Datatype): Datatype {
  return descriptor;
}

export type Scalar = number | bigint;

export function pack(values: Scalar[], dtype: Datatype): Buffer {
  const out = Buffer.alloc(values.length * dtype.width);
  const view = new DataView(out.buffer, out.byteOffset, out.byteLength);
  values.forEach((v, i) => {
    switch (dtype.kind) {
      case "int32":
        view.setInt32(i * 4, Number(v), true);
        break;
      case "int64":
        view.setBigInt64(i * 8, BigInt(v), true);
        break;
      case "float64":
        view.setFloat64(i * 8, Number(v), true);
        break;
      case "byte":
        view.setUint8(i, Number(v));
        break;
    }
  });
  return out;
}

export function unpack(raw: Buffer, dtype: Datatype): Scalar[] {
  if (raw.length % dtype.width !== 0) {
    throw new Error(
      `${raw.length} bytes do not tile ${dtype.width}-byte elements`,
    );
  }
  const view = new DataView(raw.buffer, raw.byteOffset, raw.byteLength);
  const count = raw.length / dtype.width;
  const out: Scalar[] = new Array(count);
  for (let i = 0; i < count; i++) {
    switch (dtype.kind) {
      case "int32":
        out[i] = view.getInt32(i * 4, true);
        break;
      case "int64":
        out[i] = view.getBigInt64(i * 8, true);
        break;
      case "float64":
        out[i] = view.getFloat64(i * 8, true);
        break;
      case "byte":
        out[i] = view.getUint8(i);
        break;
    }
  }
  return out;
}

/** Element-wise combining, wraparound semantics identical to the core. */
export type ReductionName = "sum" | "prod" | "min" | "max" | "noop";

export function combine(
  op: ReductionName,
  dtype: Datatype,
  a: Scalar,
  b: Scalar,
): Scalar {
  switch (dtype.kind) {
    case "int32": {
      const x = Number(a) | 0;
      const y = Number(b) | 0;
      if (op === "sum") return (x + y) | 0;
      if (op === "prod") return Math.imul(x, y);
      if (op === "min") return Math.min(x, y);
      if (op === "max") return Math.max(x, y);
      return x;
    }
    case "int64": {
      const x = BigInt(a);
      const y = BigInt(b);
      if (op === "sum") return BigInt.asIntN(64, x + y);
      if (op === "prod") return BigInt.asIntN(64, x * y);
      if (op === "min") return x <= y ? x : y;
      if (op === "max") return x >= y ? x : y;
      return x;
    }
    case "float64": {
      const x = Number(a);
      const y = Number(b);
      if (op === "sum") return x + y;
      if (op === "prod") return x * y;
      if (op === "min") return Math.min(x, y);
      if (op === "max") return Math.max(x, y);
      return x;
    }
    case "byte": {
      const x = Number(a) & 0xff;
      const y = Number(b) & 0xff;
      if (op === "sum") return (x + y) & 0xff;
      if (op === "prod") return (x * y) & 0xff;
      if (op === "min") return Math.min(x, y);
      if (op === "max") return Math.max(x, y);
      return x;
    }
  }
}

export function combineBuffers(
  op: ReductionName,
  dtype: Datatype,
  low: Buffer,
  high: Buffer,
): Buffer {
  const a = unpack(low, dtype);
  const b = unpack(high, dtype);
  if (a.length !== b.length) {
    throw new Error(`count mismatch: ${a.length} vs ${b.length}`);
  }
  return pack(a.map((x, i) => combine(op, dtype, x, b[i])), dtype);
}
