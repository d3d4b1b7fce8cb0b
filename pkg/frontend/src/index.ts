/**
 * fmi-client: scripting wrapper over the message-passing core.
 *
 *   import * as fmi from "fmi-client";
 *   const dtype = fmi.types(fmi.datatypes.int);
 *   const comm = await fmi.Communicator.join({...});
 *   if (myId === 0) await comm.bcast(42, 0, dtype);
 *   else assert(await comm.bcast(null, 0, dtype) === 42);
 */

export { datatypes, types, pack, unpack, combine } from "./types.js";
export type { Datatype, DatatypeKind, ReductionName, Scalar } from "./types.js";
export { Communicator } from "./communicator.js";
export type { CommunicatorOptions } from "./communicator.js";
export { StoreClient } from "./store.js";
export { backoffDelay, DEFAULT_POLICY } from "./backoff.js";
export { FmiError } from "./errors.js";
export type { ErrorKind } from "./errors.js";
