"""Attaching an external denoiser over the binary wire protocol.

Spawns a small child process that speaks the framed stdin/stdout protocol
and echoes the conditioning tensor back as its noise prediction; a real
deployment would put a neural predictor behind the same framing.
"""

import sys
import textwrap
from pathlib import Path

import numpy as np

import diffrestore as dr
from diffrestore.backends import SubprocessDenoiser

CHILD = textwrap.dedent("""
    import struct, sys

    header = struct.Struct("<4sQIBIIII")      # magic | id | t | null | N,H,W,C
    reply = struct.Struct("<4sQ")
    while True:
        raw = sys.stdin.buffer.read(header.size)
        if not raw:
            break
        magic, rid, t, null, n, h, w, c = header.unpack(raw)
        count = n * h * w * c
        x_t = sys.stdin.buffer.read(4 * count)
        cond = sys.stdin.buffer.read(4 * count)
        payload = x_t if null else cond       # echo the conditioning tensor
        sys.stdout.buffer.write(reply.pack(b"FLEP", rid) + payload)
        sys.stdout.buffer.flush()
""")

script = Path("demo_out/echo_denoiser.py")
script.parent.mkdir(parents=True, exist_ok=True)
script.write_text(CHILD)

backend = SubprocessDenoiser(f"{sys.executable} {script}")
try:
    rng = np.random.default_rng(0)
    x_t = dr.VideoTensor(rng.standard_normal((2, 8, 8, 1)).astype(np.float32).astype(np.float64),
                         unclamped=True)
    cond = dr.VideoTensor(rng.uniform(-1, 1, (2, 8, 8, 1)).astype(np.float32).astype(np.float64))
    eps = backend(x_t, cond, t=500)
    print("conditioned call returns the c tensor verbatim:",
          bool(np.array_equal(eps.data, cond.data)))
    eps_uncond = backend(x_t, None, t=500)
    print("null-condition call (flag set, zero c payload) echoes x_t:",
          bool(np.array_equal(eps_uncond.data, x_t.data)))
finally:
    backend.close()
print("child closed cleanly")
