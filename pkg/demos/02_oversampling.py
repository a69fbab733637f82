# %% [markdown]
# # Five ways to choose oversampling targets
#
# Every strategy maps current group counts to target counts; records are then
# duplicated uniformly with replacement inside each group until the targets
# are met. Nothing synthetic is ever created.

# %%
import numpy as np

from fairsampler.data import AttributeSchema, Dataset, GroupKey, GroupSpec, StudentRecord
from fairsampler.sampling import (
    apply_plan, make_plan, plan_cascade, plan_equal, plan_majority, plan_minor,
)

g = GroupSpec.of("g")
counts = {GroupKey(g, (k,)): v for k, v in {"a": 7, "b": 15, "c": 3}.items()}
for name, rule in (("equal", plan_equal), ("majority", plan_majority),
                   ("cascade", plan_cascade), ("minor", lambda c: plan_minor(c, noise_floor=5))):
    print(f"{name:<9}", {str(k): v for k, v in rule(counts).items()})

# %% [markdown]
# ``within`` first equalises the sub-groups inside each main group, then makes
# the main groups equally large, split evenly over their sub-groups.

# %%
schema = AttributeSchema((("cluster_id", ("A", "B")), ("gender", ("d", "t"))))
rng = np.random.default_rng(0)
cells = [("A", "t", 12), ("A", "d", 8), ("B", "t", 6), ("B", "d", 4)]
records = [StudentRecord(f"s{i}_{c}{g_}", {"cluster_id": c, "gender": g_},
                         rng.normal(size=(3, 2)), 0)
           for c, g_, n in cells for i in range(n)]
ds = Dataset(schema, records)
plan = make_plan(ds, GroupSpec.of("cluster_id", "gender"), "within", seed=1)
for stage in plan.stages:
    print({str(k): v for k, v in stage.items()})

# %% [markdown]
# Applying the plan returns the original rows followed by the duplicates.

# %%
res = apply_plan(ds, plan)
print(len(ds), "->", len(res), "rows;", len(res.extra_indices), "duplicates")
