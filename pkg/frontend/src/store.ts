/**
 * Client for the store wire protocol (all integers little-endian):
 *
 *   request:  u8 opcode (1=PUT, 2=GET, 3=DELETE, 4=LIST_COUNT) |
 *             u32 key_len | key | (PUT only: u64 value_len | value)
 *   response: u8 status (0=ok, 1=not_found, 2=too_large) |
 *             (GET ok: u64 value_len | value) | (LIST_COUNT: u32 count)
 *
 * One persistent connection, one request in flight at a time.
 */

import * as net from "node:net";

import { FmiError } from "./errors.js";
import { backoffDelay, DEFAULT_POLICY, sleep, type BackoffPolicy } from "./backoff.js";

const OP_PUT = 1;
const OP_GET = 2;
const OP_DELETE = 3;
const OP_LIST_COUNT = 4;

const ST_OK = 0;
const ST_NOT_FOUND = 1;
const ST_TOO_LARGE = 2;

/** Pull-based exact reader over a socket's data events. */
class SocketReader {
  private chunks: Buffer[] = [];
  private length = 0;
  private waiting: (() => void) | null = null;
  private failure: Error | null = null;

  constructor(socket: net.Socket) {
    socket.on("data", (chunk) => {
      this.chunks.push(chunk);
      this.length += chunk.length;
      this.waiting?.();
    });
    const fail = (err: Error) => {
      this.failure = err;
      this.waiting?.();
    };
    socket.on("error", fail);
    socket.on("close", () =>
      fail(new FmiError("ChannelFailure", "store connection closed")),
    );
  }

  async readExact(n: number): Promise<Buffer> {
    while (this.length < n) {
      if (this.failure) throw this.failure;
      await new Promise<void>((resolve) => {
        this.waiting = resolve;
      });
      this.waiting = null;
    }
    const joined = Buffer.concat(this.chunks);
    this.chunks = joined.length > n ? [joined.subarray(n)] : [];
    this.length = joined.length - n;
    return joined.subarray(0, n);
  }
}

export interface PollOptions {
  policy?: BackoffPolicy;
  deadlineMs?: number; // epoch milliseconds
  pollFloorMs?: number;
  stopPrefix?: string;
}

export class StoreClient {
  private reader: SocketReader;
  private queue: Promise<unknown> = Promise.resolve();

  private constructor(
    private socket: net.Socket,
    readonly pollFloorMs: number,
  ) {
    this.reader = new SocketReader(socket);
  }

  static connect(
    host: string,
    port: number,
    pollFloorMs = 0,
  ): Promise<StoreClient> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host, port, noDelay: true });
      socket.once("connect", () => resolve(new StoreClient(socket, pollFloorMs)));
      socket.once("error", (err) =>
        reject(new FmiError("ChannelFailure", `store unreachable: ${err}`)),
      );
    });
  }

  close(): void {
    this.socket.destroy();
  }

  /** Serialize requests: the protocol has exactly one response per request. */
  private enqueue<T>(task: () => Promise<T>): Promise<T> {
    const next = this.queue.then(task, task);
    this.queue = next.catch(() => undefined);
    return next;
  }

  private writeRequest(opcode: number, key: string, value?: Buffer): void {
    const rawKey = Buffer.from(key, "utf-8");
    const head = Buffer.alloc(5);
    head.writeUInt8(opcode, 0);
    head.writeUInt32LE(rawKey.length, 1);
    const parts: Buffer[] = [head, rawKey];
    if (opcode === OP_PUT) {
      const len = Buffer.alloc(8);
      len.writeBigUInt64LE(BigInt(value!.length));
      parts.push(len, value!);
    }
    this.socket.write(Buffer.concat(parts));
  }

  put(key: string, value: Buffer): Promise<void> {
    return this.enqueue(async () => {
      this.writeRequest(OP_PUT, key, value);
      const status = (await this.reader.readExact(1))[0];
      if (status === ST_TOO_LARGE) {
        throw new FmiError(
          "MessageTooLarge",
          `store refused ${value.length} bytes for ${key}`,
        );
      }
      if (status !== ST_OK) {
        throw new FmiError("ChannelFailure", `put ${key} -> status ${status}`);
      }
    });
  }

  get(key: string): Promise<Buffer | null> {
    return this.enqueue(async () => {
      this.writeRequest(OP_GET, key);
      const status = (await this.reader.readExact(1))[0];
      if (status === ST_NOT_FOUND) return null;
      if (status !== ST_OK) {
        throw new FmiError("ChannelFailure", `get ${key} -> status ${status}`);
      }
      const len = (await this.reader.readExact(8)).readBigUInt64LE();
      return len === 0n ? Buffer.alloc(0) : this.reader.readExact(Number(len));
    });
  }

  del(key: string): Promise<void> {
    return this.enqueue(async () => {
      this.writeRequest(OP_DELETE, key);
      const status = (await this.reader.readExact(1))[0];
      if (status !== ST_OK) {
        throw new FmiError("ChannelFailure", `delete ${key} -> ${status}`);
      }
    });
  }

  listCount(prefix: string): Promise<number> {
    return this.enqueue(async () => {
      this.writeRequest(OP_LIST_COUNT, prefix);
      const raw = await this.reader.readExact(5);
      if (raw[0] !== ST_OK) {
        throw new FmiError("ChannelFailure", `list ${prefix} -> ${raw[0]}`);
      }
      return raw.readUInt32LE(1);
    });
  }

  /** Poll until the key exists, sleeping max(backoff, poll floor). */
  async getPoll(key: string, opts: PollOptions = {}): Promise<Buffer> {
    const policy = opts.policy ?? DEFAULT_POLICY;
    const floor = opts.pollFloorMs ?? this.pollFloorMs;
    for (let attempt = 1; attempt <= policy.maxRetries; attempt++) {
      const value = await this.get(key);
      if (value !== null) return value;
      if (attempt === policy.maxRetries) break;
      if (opts.deadlineMs !== undefined && Date.now() > opts.deadlineMs) {
        throw new FmiError("Timeout", `gave up polling ${key} at deadline`);
      }
      await sleep(Math.max(backoffDelay(attempt, policy), floor));
    }
    throw new FmiError(
      "RetriesExhausted",
      `${policy.maxRetries} poll attempts for ${key} saw no value`,
    );
  }

  /** Poll until listCount(prefix) reaches target (or stopPrefix appears). */
  async pollCount(
    prefix: string,
    target: number,
    opts: PollOptions = {},
  ): Promise<void> {
    const policy = opts.policy ?? DEFAULT_POLICY;
    const floor = opts.pollFloorMs ?? this.pollFloorMs;
    for (let attempt = 1; attempt <= policy.maxRetries; attempt++) {
      if ((await this.listCount(prefix)) >= target) return;
      if (opts.stopPrefix && (await this.listCount(opts.stopPrefix)) > 0) {
        return;
      }
      if (attempt === policy.maxRetries) break;
      if (opts.deadlineMs !== undefined && Date.now() > opts.deadlineMs) {
        throw new FmiError(
          "Timeout",
          `gave up waiting for ${target} keys under ${prefix}`,
        );
      }
      await sleep(Math.max(backoffDelay(attempt, policy), floor));
    }
    throw new FmiError(
      "RetriesExhausted",
      `${policy.maxRetries} polls under ${prefix} never reached ${target}`,
    );
  }
}
