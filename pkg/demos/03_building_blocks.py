# The pieces on toy data small enough to check by hand.
# Run from the repo root: python3 demos/03_building_blocks.py

import numpy as np

from itemfm import EmbeddingSet, FeatureSpace, FMParams, PositiveInteraction, WindowConfig, build_cooc
from itemfm import encode_instance, percentile_rank, predict

# One user played a, b, c in order. With radius 1, a-c never share a window.
history = [PositiveInteraction("u", t, ts) for ts, t in enumerate("abc")]
cooc = build_cooc(history, WindowConfig(radius_tracks=1))
print(cooc.to_dict())

# Inverse distance weighting reaches a-c at half weight.
print(build_cooc(history, WindowConfig(radius_tracks=2, weighting="inverse_distance")).to_dict())

# Feature slots: tracks, then context tracks, then side features.
space = FeatureSpace.from_mapping(["a", "b", "c"], {"a": ["creator1"], "c": ["creator1"]})
slots = encode_instance(0, 2, space)
print("slots for (a, context c):", slots)

# The prediction sums biases and all pairwise dot products of active slots.
rng = np.random.default_rng(0)
params = FMParams(rng.normal(size=space.n_features), rng.normal(size=(space.n_features, 2)))
by_hand = params.w[slots].sum() + sum(
    params.V[i] @ params.V[j] for n, i in enumerate(slots) for j in slots[n + 1 :]
)
print("predict", predict(slots, params), "by hand", by_hand)

# Percentile rank: the share of non-context tracks closer to the query than the context track.
emb = EmbeddingSet(["q", "ctx", "x", "y"], np.array([[1.0, 0.0], [0.6, 0.8], [0.9, 0.1], [-1.0, 0.0]]))
print("percentile rank:", percentile_rank("q", ["ctx"], emb.vocab, emb))
