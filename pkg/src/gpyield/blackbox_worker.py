"""Self-hosted solver worker speaking the blackbox wire protocol.

Reads newline-delimited JSON requests on stdin and answers each with one
response line on stdout, evaluating the analytic waveguide model.  Useful
for exercising the external-solver path end to end and as a template for
wrapping real solvers.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .oracle import WaveguideConfig, waveguide_s11


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="waveguide blackbox worker")
    parser.add_argument("--width-mm", type=float, default=30.0)
    parser.add_argument("--length-mm", type=float, default=30.0)
    args = parser.parse_args(argv)
    config = WaveguideConfig(width_mm=args.width_mm, length_mm=args.length_mm)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        request = json.loads(line)
        params = np.asarray(request["params"], dtype=float)
        omegas = np.asarray(request["freq_rad_s"], dtype=float)
        values = waveguide_s11(config, params, omegas)[0]
        response = {
            "id": request["id"],
            "s_real": values.real.tolist(),
            "s_imag": values.imag.tolist(),
        }
        sys.stdout.write(json.dumps(response) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
