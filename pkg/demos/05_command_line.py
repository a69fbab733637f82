# %% [markdown]
# # The command-line workflow
#
# ``fairsampler`` runs the whole sweep and persists every artifact, so a run
# can be resumed, rendered again or replayed from its ``config.json``.

# %%
import json
import tempfile
from pathlib import Path

from fairsampler.cli import main

run = Path(tempfile.mkdtemp()) / "run"
main(["generate", "--preset", "flipped-like", "--seed", "3", "--out", str(run.parent / "data")])

# %%
main(["audit", "--records", str(run.parent / "data" / "records.jsonl"),
      "--schema", str(run.parent / "data" / "schema.json"),
      "--seed", "3", "--folds", "5", "--cluster-k", "5", "--out", str(run)])

# %%
main(["mitigate", "--config", str(run / "config.json"), "--out", str(run)])
print(sorted(p.name for p in run.iterdir()))

# %%
selection = json.loads((run / "selection.json").read_text())
print(selection["chosen"], selection["flags"])
print((run / "report.txt").read_text()[:1500])
