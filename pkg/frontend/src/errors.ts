/** Error taxonomy mirroring the core library's kinds. */

export type ErrorKind =
  | "Timeout"
  | "PeerFailure"
  | "ChannelFailure"
  | "MessageTooLarge"
  | "ProtocolViolation"
  | "JoinFailed"
  | "RetriesExhausted";

export class FmiError extends Error {
  constructor(
    readonly kind: ErrorKind,
    detail: string,
  ) {
    super(`${kind}: ${detail}`);
    this.name = "FmiError";
  }
}
