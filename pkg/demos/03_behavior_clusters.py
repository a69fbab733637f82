# %% [markdown]
# # Behavioural profiles
#
# Each behaviour sequence is summarised by the mean, spread, final value and
# linear trend of every feature. The summaries are standardised and grouped
# with k-means; k is chosen by mean silhouette.

# %%
from fairsampler.clustering import assign_clusters, embed_behavior, select_k
from fairsampler.synthetic import generate, preset

scenario = preset("tuglet-like")
cohort = generate(scenario.with_(seed=1))
emb = embed_behavior(cohort.dataset)
print("embedding", emb.raw.shape)

# %%
result = select_k(emb, (2, 8), seed=0)
print("k =", result.k, "silhouette =", round(result.silhouette, 3), "sizes", result.sizes())

# %% [markdown]
# Cross-tabulate the found clusters with the generator's true archetypes.

# %%
import numpy as np

ids = cohort.dataset.student_ids
table = np.zeros((len(scenario.archetypes), result.k), dtype=int)
for sid in ids:
    table[cohort.archetypes[sid], result.assignment[sid]] += 1
for name, row in zip(scenario.archetypes, table):
    print(f"{name:<22}", row)

# %% [markdown]
# Clusters become the ``cluster`` pseudo-attribute, usable in any grouping.

# %%
clustered = assign_clusters(cohort.dataset, result)
print(sorted(set(clustered.column("cluster"))))
