"""
The command line workflow
=========================

``gatecal`` strings the pieces together: synthesize a plan, calibrate
against a backend, run a campaign, rebuild tables and validate.  This
script calls the same entry point in a scratch directory.
"""

import json
import tempfile
from pathlib import Path

from gatecal.cli import main

out = Path(tempfile.mkdtemp(prefix="gatecal-demo-"))
config = out / "run.json"
config.write_text(json.dumps({"campaign": {"n_starts": 20}, "seed": 1}))

for verb in ("synth", "calibrate", "campaign", "tables", "validate"):
    print(f"$ gatecal {verb} --config run.json")
    code = main([verb, "--config", str(config), "--out", str(out)])
    print(f"  exit {code}")

print("files:", sorted(p.name for p in out.iterdir()))
print((out / "plan_table.md").read_text().splitlines()[3])
