/**
 * Hybrid polling backoff: retries 1..100 sleep their index in ms, later
 * retries sleep twice their index, capped at 500 attempts.
 */

import { FmiError } from "./errors.js";

export interface BackoffPolicy {
  linearRetries: number;
  maxRetries: number;
}

export const DEFAULT_POLICY: BackoffPolicy = {
  linearRetries: 100,
  maxRetries: 500,
};

/** Milliseconds to sleep before the next attempt (1-based retry index). */
export function backoffDelay(
  retry: number,
  policy: BackoffPolicy = DEFAULT_POLICY,
): number {
  if (retry < 1) {
    throw new FmiError("ProtocolViolation", "retry index starts at 1");
  }
  if (retry > policy.maxRetries) {
    throw new FmiError(
      "RetriesExhausted",
      `retry ${retry} exceeds ${policy.maxRetries}`,
    );
  }
  return retry <= policy.linearRetries ? retry : 2 * retry;
}

export function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
