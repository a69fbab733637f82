# %% [markdown]
# # Auditing a cohort for imbalance
#
# A cohort is a set of students, each with categorical attributes, a
# behaviour sequence and a binary label (1 = needs intervention). The label
# itself is a grouping attribute called ``intervention``.

# %%
from fairsampler.audit import build_candidate_set, detect_imbalance, under_represented
from fairsampler.data import GroupSpec
from fairsampler.synthetic import generate, preset

cohort = generate(preset("tuglet-like").with_(seed=0))
ds = cohort.dataset
print(len(ds), "students, attributes", ds.schema.names, "feature dim", ds.feature_dim)

# %% [markdown]
# A group is under-represented when its gap to the largest group exceeds 15%
# of all records.

# %%
for counts in ({"F": 35, "M": 65}, {"F": 48, "M": 51}, {"H": 52, "M": 48}):
    print(counts, "->", under_represented(counts))

# %% [markdown]
# School and the label are balanced on their own. Crossed, they skew towards
# M|1 and H|0 but stay under the rule here; adding gender (with its 1%
# "other" mass) tips the combination over.

# %%
for text in ("school", "intervention", "intervention+school", "gender+intervention+school"):
    finding = detect_imbalance(ds, GroupSpec.parse(text))
    print(f"{text:<28} imbalanced={finding.imbalanced!s:<5} counts="
          + ", ".join(f"{k}:{v}" for k, v in finding.to_json()["counts"].items()))

# %% [markdown]
# The candidate set collects standalone imbalanced attributes and imbalanced
# combinations of biased but balanced ones.

# %%
cands = build_candidate_set(ds, ["school"])
for entry in cands.to_json():
    print(entry["provenance"], entry["spec"])
