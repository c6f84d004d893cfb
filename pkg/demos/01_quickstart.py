# Quickstart: synthetic listening log to track neighbours.
# Run from the repo root: python3 demos/01_quickstart.py

from itemfm import IngestConfig, TrainConfig, WindowConfig, build_cooc, ingest, top_n_similar
from itemfm.experiment import fit_item, prepare_split
from itemfm.synthetic import SyntheticConfig, generate

# A small clustered corpus. Each track belongs to one cluster and one creator.
corpus = generate(SyntheticConfig(clusters=4, tracks_per_cluster=30, users=600, seed=1))
print(len(corpus.events), "raw events")

# Raw events become positive (user, track) interactions.
interactions = ingest(corpus.events, IngestConfig())
print(len(interactions), "positive interactions")

# Window co-occurrences over each user's time-ordered history.
cooc = build_cooc(interactions, WindowConfig(radius_tracks=5))
print(cooc.n_tracks, "tracks,", cooc.n_entries, "co-occurring pairs")
print("weight of the first pair:", cooc.upper()[2][0])

# Train on everything before the 80% time quantile.
split = prepare_split(interactions)
emb, result, _ = fit_item(split, TrainConfig(dim=16, epochs=5, positive_weight_mode="cooc_weight"))
print("mean instance loss per epoch:", [round(e.mean_objective, 4) for e in result.history])

# Nearest neighbours of a popular track. Cluster c00 tracks should dominate.
query = "c00t000"
for track, cos in top_n_similar(query, 5, emb):
    print(f"{track}  cluster {corpus.cluster_of[track]}  cos {cos:.3f}")
