#!/usr/bin/env python3
"""The SDMS span file format and the command-line pipeline.

Spans serialize to a compact little-endian binary format (64-byte header,
f32 payload) that round-trips bit-exactly. The same operations are exposed
as a CLI: generate span files, fit operators on them, and run sweeps that
emit deterministic CSV.
"""

import io
import subprocess
import sys
import tempfile
from pathlib import Path

from spandmd import (
    expected_file_size,
    forward_with_taps,
    make_inputs,
    make_toy_model,
    read_span,
    write_span,
)

model = make_toy_model(seed=42)
span = forward_with_taps(model, make_inputs(model, 8, seed=1), i=4, p=3)

buf = io.BytesIO()
nbytes = write_span(span, buf)
print(f"serialized span: {nbytes} bytes "
      f"(header 64 + {span.dims.p + 1} states + 2 taps, f32)")
assert nbytes == expected_file_size(span.dims, with_taps=True)

back = read_span(buf.getvalue())
print(f"round trip ok: dims i={back.dims.i}, p={back.dims.p}, "
      f"t_kept={back.dims.t_kept}, taps={'yes' if back.has_taps else 'no'}")

print("\nthe same pipeline via the CLI:")
with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    cmds = [
        [sys.executable, "-m", "spandmd.cli", "generate", "--source", "toy",
         "--seed", "42", "--cut", "4", "--p", "3", "--out", str(tmp / "spans")],
        [sys.executable, "-m", "spandmd.cli", "fit",
         "--in", str(tmp / "spans" / "span_i4_p3.sdms"),
         "--formulation", "full", "--out", str(tmp / "op")],
        [sys.executable, "-m", "spandmd.cli", "sweep", "headline",
         "--source", "toy", "--seed", "42", "--p", "1..3",
         "--L", "8", "--b-cal", "16", "--b-eval", "16",
         "--out", str(tmp / "headline")],
    ]
    for cmd in cmds:
        print("$ " + " ".join(cmd[2:]))
        out = subprocess.run(cmd, capture_output=True, text=True, check=True)
        tail = out.stdout.strip().splitlines()
        for line in tail[-3:]:
            print("  " + line)
    csv_head = (tmp / "headline" / "headline.csv").read_text().splitlines()[:3]
    print("\nfirst CSV rows:")
    for line in csv_head:
        print("  " + line)
