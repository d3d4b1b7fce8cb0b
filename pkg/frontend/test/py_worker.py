"""One mediated rank driven by the core library, for mixed-language worlds.

Reads a JSON job from argv, joins the communicator, runs the listed
collectives, and prints one JSON line with hex-encoded result buffers.
"""

import json
import sys

from fmi import (BYTE, FLOAT64, INT32, INT64, MAX, MIN, PROD, SUM,
                 buffer_of, join)
from fmi.communicator import CommunicatorConfig, mediated_channel
from fmi.profiles import profile_by_name

DTYPES = {"int32": INT32, "int64": INT64, "float64": FLOAT64, "byte": BYTE}
OPS = {"sum": SUM, "prod": PROD, "min": MIN, "max": MAX}


def main():
    job = json.loads(sys.argv[1])
    config = CommunicatorConfig(
        name=job["name"],
        world_size=job["world_size"],
        rank=job["rank"],
        channel=mediated_channel((job["store_host"], job["store_port"]),
                                 profile_by_name("redis")),
        join_timeout=job.get("join_timeout_s", 30.0),
        epoch=job.get("epoch", 0),
    )
    comm = join(config)
    outputs = []
    for step in job["steps"]:
        dtype = DTYPES[step["dtype"]]
        values = step.get("values", [])
        if step["collective"] == "allreduce":
            out = comm.allreduce(buffer_of(values, dtype), OPS[step["op"]])
        elif step["collective"] == "bcast":
            own = buffer_of(values, dtype)
            out = comm.bcast(own, step["root"])
        elif step["collective"] == "scatter":
            own = buffer_of(values if comm.rank == step["root"] else [], dtype)
            out = comm.scatter(own, step["root"])
        elif step["collective"] == "scan":
            out = comm.scan(buffer_of(values, dtype), OPS[step["op"]])
        else:
            raise ValueError(step["collective"])
        outputs.append(out.data.hex())
    comm.close()
    print(json.dumps({"rank": config.rank, "outputs": outputs}), flush=True)


if __name__ == "__main__":
    main()
