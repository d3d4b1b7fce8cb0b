/**
 * Ranked communicator over the storage-mediated channel.
 *
 * Joins through a two-phase barrier of 1-byte objects, then runs the
 * upload/poll collective algorithms under the shared key convention
 * "{comm}/{epoch}/{op_seq}/{collective}/{src}[>{dst}]". Every object is
 * deleted by its final consumer, reductions fold ascending rank blocks,
 * and op_seq counts every collective, so ranks driven by this wrapper
 * interoperate bit-for-bit with ranks driven by the core library.
 */

import { FmiError } from "./errors.js";
import { StoreClient } from "./store.js";
import {
  combineBuffers,
  pack,
  unpack,
  type Datatype,
  type ReductionName,
  type Scalar,
} from "./types.js";

export interface CommunicatorOptions {
  name: string;
  rank: number;
  worldSize: number;
  store: { host: string; port: number };
  epoch?: number;
  joinTimeoutMs?: number;
  opTimeoutMs?: number;
  pollFloorMs?: number;
}

export class Communicator {
  readonly name: string;
  readonly rank: number;
  readonly worldSize: number;
  readonly epoch: number;
  private opTimeoutMs: number;
  private opSeq = 0;
  private aborted: FmiError | null = null;

  private constructor(
    opts: Required<Pick<CommunicatorOptions, "name" | "rank" | "worldSize">> &
      CommunicatorOptions,
    private client: StoreClient | null,
  ) {
    if (opts.rank < 0 || opts.rank >= opts.worldSize) {
      throw new FmiError(
        "ProtocolViolation",
        `rank ${opts.rank} outside [0, ${opts.worldSize})`,
      );
    }
    this.name = opts.name;
    this.rank = opts.rank;
    this.worldSize = opts.worldSize;
    this.epoch = opts.epoch ?? 0;
    this.opTimeoutMs = opts.opTimeoutMs ?? 30_000;
  }

  /** Join the named group; resolves once every rank has arrived. */
  static async join(opts: CommunicatorOptions): Promise<Communicator> {
    if (opts.worldSize === 1) {
      return new Communicator(opts, null);
    }
    const client = await StoreClient.connect(
      opts.store.host,
      opts.store.port,
      opts.pollFloorMs ?? 0,
    );
    const comm = new Communicator(opts, client);
    const deadlineMs = Date.now() + (opts.joinTimeoutMs ?? 60_000);
    try {
      await comm.barrierAt(`${comm.name}/${comm.epoch}/join/`, deadlineMs);
    } catch (err) {
      client.close();
      const detail = err instanceof Error ? err.message : String(err);
      throw new FmiError("JoinFailed", `join failed: ${detail}`);
    }
    return comm;
  }

  abort(cause: FmiError): void {
    if (this.aborted) return;
    this.aborted = cause;
    this.client?.close();
  }

  close(): void {
    this.client?.close();
  }

  private prefix(opSeq: number, collective: string): string {
    return `${this.name}/${this.epoch}/${opSeq}/${collective}/`;
  }

  private async run<T>(body: (seq: number, deadlineMs: number) => Promise<T>): Promise<T> {
    if (this.aborted) throw this.aborted;
    const seq = ++this.opSeq;
    try {
      return await body(seq, Date.now() + this.opTimeoutMs);
    } catch (err) {
      const fmiErr =
        err instanceof FmiError
          ? err
          : new FmiError("ChannelFailure", String(err));
      this.abort(fmiErr);
      throw fmiErr;
    }
  }

  // -- raw collective bodies (Buffer payloads) ------------------------------

  private async bcastRaw(
    data: Buffer | null,
    root: number,
    prefix: string,
    deadlineMs: number,
  ): Promise<Buffer> {
    const key = prefix + String(root);
    const ack = prefix + "ack/";
    const c = this.client!;
    if (this.rank === root) {
      await c.put(key, data!);
      return data!;
    }
    const raw = await c.getPoll(key, { deadlineMs });
    await c.put(ack + String(this.rank), Buffer.from([1]));
    if ((await c.listCount(ack)) === this.worldSize - 1) {
      await c.del(key);
      for (let r = 0; r < this.worldSize; r++) {
        if (r !== root) await c.del(ack + String(r));
      }
    }
    return raw;
  }

  private async barrierAt(base: string, deadlineMs: number): Promise<void> {
    const c = this.client!;
    const arrive = base + "a/";
    const depart = base + "d/";
    await c.put(arrive + String(this.rank), Buffer.from([1]));
    await c.pollCount(arrive, this.worldSize, {
      deadlineMs,
      stopPrefix: depart,
    });
    await c.put(depart + String(this.rank), Buffer.from([1]));
    if (this.rank === 0) {
      await c.pollCount(depart, this.worldSize, { deadlineMs });
      for (let r = 0; r < this.worldSize; r++) {
        await c.del(arrive + String(r));
        await c.del(depart + String(r));
      }
    }
  }

  /** Non-root ranks upload; the root polls, reads in rank order, deletes. */
  private async gatherParts(
    own: Buffer,
    root: number,
    prefix: string,
    deadlineMs: number,
  ): Promise<Buffer[] | null> {
    const c = this.client!;
    if (this.rank !== root) {
      await c.put(prefix + String(this.rank), own);
      return null;
    }
    await c.pollCount(prefix, this.worldSize - 1, { deadlineMs });
    const parts: Buffer[] = [];
    for (let r = 0; r < this.worldSize; r++) {
      if (r === root) {
        parts.push(own);
        continue;
      }
      const raw = await c.get(prefix + String(r));
      if (raw === null) {
        throw new FmiError(
          "ProtocolViolation",
          `contribution of rank ${r} vanished`,
        );
      }
      parts.push(raw);
    }
    for (let r = 0; r < this.worldSize; r++) {
      if (r !== root) await c.del(prefix + String(r));
    }
    return parts;
  }

  private async reduceRaw(
    own: Buffer,
    op: ReductionName,
    dtype: Datatype,
    root: number,
    prefix: string,
    deadlineMs: number,
  ): Promise<Buffer | null> {
    const parts = await this.gatherParts(own, root, prefix, deadlineMs);
    if (parts === null) return null;
    let acc = parts[0];
    for (const part of parts.slice(1)) {
      acc = combineBuffers(op, dtype, acc, part);
    }
    return acc;
  }

  // -- typed scripting surface ----------------------------------------------

  /** Root broadcasts a value (or vector); everyone returns it. */
  bcast(
    value: Scalar | Scalar[] | null,
    root: number,
    dtype: Datatype,
  ): Promise<Scalar | Scalar[]> {
    this.checkRoot(root);
    const scalar = value !== null && !Array.isArray(value);
    if (this.worldSize === 1) {
      if (this.aborted) return Promise.reject(this.aborted);
      this.opSeq++;
      return Promise.resolve(value as Scalar | Scalar[]);
    }
    return this.run(async (seq, deadlineMs) => {
      const data =
        this.rank === root
          ? pack(Array.isArray(value) ? value : [value as Scalar], dtype)
          : null;
      const raw = await this.bcastRaw(
        data,
        root,
        this.prefix(seq, "bcast"),
        deadlineMs,
      );
      const values = unpack(raw, dtype);
      return scalar || this.rank !== root ? maybeScalar(values) : values;
    });
  }

  barrier(): Promise<void> {
    if (this.worldSize === 1) {
      if (this.aborted) return Promise.reject(this.aborted);
      this.opSeq++;
      return Promise.resolve();
    }
    return this.run((seq, deadlineMs) =>
      this.barrierAt(this.prefix(seq, "barrier"), deadlineMs),
    );
  }

  /** Root returns the rank-order concatenation; everyone else []. */
  gather(
    value: Scalar | Scalar[],
    root: number,
    dtype: Datatype,
  ): Promise<Scalar[]> {
    this.checkRoot(root);
    const own = pack(Array.isArray(value) ? value : [value], dtype);
    if (this.worldSize === 1) {
      if (this.aborted) return Promise.reject(this.aborted);
      this.opSeq++;
      return Promise.resolve(unpack(own, dtype));
    }
    return this.run(async (seq, deadlineMs) => {
      const parts = await this.gatherParts(
        own,
        root,
        this.prefix(seq, "gather"),
        deadlineMs,
      );
      if (parts === null) return [];
      const sizes = new Set(parts.map((p) => p.length));
      if (sizes.size > 1) {
        throw new FmiError(
          "ProtocolViolation",
          `unequal gather contributions: ${[...sizes]}`,
        );
      }
      return unpack(Buffer.concat(parts), dtype);
    });
  }

  /** Root slices its vector n ways; rank i receives slice i. */
  scatter(
    value: Scalar[] | null,
    root: number,
    dtype: Datatype,
  ): Promise<Scalar[]> {
    this.checkRoot(root);
    if (this.worldSize === 1) {
      if (this.aborted) return Promise.reject(this.aborted);
      this.opSeq++;
      return Promise.resolve(value as Scalar[]);
    }
    return this.run(async (seq, deadlineMs) => {
      const c = this.client!;
      const prefix = this.prefix(seq, "scatter");
      if (this.rank === root) {
        const values = value as Scalar[];
        if (values.length % this.worldSize !== 0) {
          throw new FmiError(
            "ProtocolViolation",
            `scatter count ${values.length} not divisible by ${this.worldSize}`,
          );
        }
        const data = pack(values, dtype);
        const chunk = data.length / this.worldSize;
        for (let dst = 0; dst < this.worldSize; dst++) {
          if (dst !== root) {
            await c.put(
              prefix + `${root}>${dst}`,
              data.subarray(dst * chunk, (dst + 1) * chunk),
            );
          }
        }
        return unpack(data.subarray(root * chunk, (root + 1) * chunk), dtype);
      }
      const key = prefix + `${root}>${this.rank}`;
      const raw = await c.getPoll(key, { deadlineMs });
      await c.del(key);
      return unpack(raw, dtype);
    });
  }

  /** Root returns the ascending-rank fold; everyone else []. */
  reduce(
    value: Scalar | Scalar[],
    op: ReductionName,
    root: number,
    dtype: Datatype,
  ): Promise<Scalar | Scalar[]> {
    this.checkRoot(root);
    const scalar = !Array.isArray(value);
    const own = pack(Array.isArray(value) ? value : [value], dtype);
    if (this.worldSize === 1) {
      if (this.aborted) return Promise.reject(this.aborted);
      this.opSeq++;
      return Promise.resolve(value);
    }
    return this.run(async (seq, deadlineMs) => {
      const acc = await this.reduceRaw(
        own,
        op,
        dtype,
        root,
        this.prefix(seq, "reduce"),
        deadlineMs,
      );
      if (acc === null) return [];
      const values = unpack(acc, dtype);
      return scalar ? maybeScalar(values) : values;
    });
  }

  /** Fold at rank 0 then broadcast: every rank returns the same result. */
  allreduce(
    value: Scalar | Scalar[],
    op: ReductionName,
    dtype: Datatype,
  ): Promise<Scalar | Scalar[]> {
    const scalar = !Array.isArray(value);
    const own = pack(Array.isArray(value) ? value : [value], dtype);
    if (this.worldSize === 1) {
      if (this.aborted) return Promise.reject(this.aborted);
      this.opSeq++;
      return Promise.resolve(value);
    }
    return this.run(async (seq, deadlineMs) => {
      const acc = await this.reduceRaw(
        own,
        op,
        dtype,
        0,
        this.prefix(seq, "allreduce") + "r/",
        deadlineMs,
      );
      const raw = await this.bcastRaw(
        acc,
        0,
        this.prefix(seq, "allreduce") + "b/",
        deadlineMs,
      );
      const values = unpack(raw, dtype);
      return scalar ? maybeScalar(values) : values;
    });
  }

  /** Inclusive prefix fold chained through each rank's predecessor. */
  scan(
    value: Scalar | Scalar[],
    op: ReductionName,
    dtype: Datatype,
  ): Promise<Scalar | Scalar[]> {
    const scalar = !Array.isArray(value);
    const own = pack(Array.isArray(value) ? value : [value], dtype);
    if (this.worldSize === 1) {
      if (this.aborted) return Promise.reject(this.aborted);
      this.opSeq++;
      return Promise.resolve(value);
    }
    return this.run(async (seq, deadlineMs) => {
      const c = this.client!;
      const prefix = this.prefix(seq, "scan");
      let result = own;
      if (this.rank > 0) {
        const key = prefix + String(this.rank - 1);
        const prev = await c.getPoll(key, { deadlineMs });
        await c.del(key);
        result = combineBuffers(op, dtype, prev, own);
      }
      if (this.rank < this.worldSize - 1) {
        await c.put(prefix + String(this.rank), result);
      }
      const values = unpack(result, dtype);
      return scalar ? maybeScalar(values) : values;
    });
  }

  private checkRoot(root: number): void {
    if (root < 0 || root >= this.worldSize) {
      throw new FmiError(
        "ProtocolViolation",
        `root ${root} outside [0, ${this.worldSize})`,
      );
    }
  }
}

function maybeScalar(values: Scalar[]): Scalar | Scalar[] {
  return values.length === 1 ? values[0] : values;
}
