"""
The command-line workflow
=========================

The same steps as the first demo, driven through ``hybrid-ei``:
simulate data files, fit, and summarize the stored draws. Each call
goes through ``main`` so the script runs without a shell.
"""

import json
import tempfile
from pathlib import Path

import pandas as pd

from hybrid_ei.cli import main

work = Path(tempfile.mkdtemp())
(work / "sim.json").write_text(json.dumps({"n_precincts": 60, "housing": "less_integrated", "seed": 3}))

main(["simulate", str(work / "sim.json"), "--out", str(work), "--scheme", "1", "--n-sample", "12"])
print(sorted(p.name for p in work.iterdir()))
print(pd.read_csv(work / "ecological.csv").head(3).to_string(index=False))

# fit with the poll; --design adds the design-based survey estimate alongside
main(["fit", str(work / "ecological.csv"), "--survey", str(work / "survey.csv"), "--design", str(work / "design.csv"),
      "--draws", str(work / "draws.csv"), "--summary", str(work / "summary.json"),
      "--burnin", "3000", "--keep", "3000", "--seed", "7"])
records = pd.DataFrame(json.loads((work / "summary.json").read_text()))
print(records[records.estimand.str.startswith("lambda_h")][["estimator", "estimand", "point", "lo", "hi"]].to_string(index=False))

# later: re-summarize the stored draws, export a plotting frame and the correlation blocks
main(["summarize", str(work / "draws.csv"), "--level", "0.9", "--summary", str(work / "s90.json"),
      "--plot", str(work / "plot.csv"), "--correlations", str(work / "corr.json")])
print(pd.read_csv(work / "plot.csv").head(4).to_string(index=False))
print(f"outputs in {work}")
