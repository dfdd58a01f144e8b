"""
Command-line pipeline
=====================

Runs the synthetic experiment end to end through the command-line entry
point at the ``smoke`` scale and lists the files it writes.  The same steps
are available as ``qmonitor gen-circuits``, ``sample``, ``estimate``,
``evaluate`` and ``calibrate``.
"""

import sys
import tempfile
from pathlib import Path

from qmonitor.cli import main
from qmonitor.files import read_distances

out = Path(tempfile.mkdtemp()) / "run"
code = main(["run-all", "--profile", "smoke", "--out", str(out)])
if code:
    sys.exit(code)

for p in sorted(out.rglob("*")):
    if p.is_file():
        print(p.relative_to(out), p.stat().st_size, "bytes")

report = read_distances(out / "distances.csv")
for i in report.checkpoints():
    print(f"i={i}: mean diamond distance to truth {report.mean(i, 'diamond_true'):.4f}")
