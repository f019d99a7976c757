"""Triplet mining on a hand-made batch of six 2-D embeddings.

    python demos/mining_walkthrough.py
"""

import numpy as np

from jtanet.mining import distance_matrix, mine_triplets, normalize_embeddings

# two classes on the unit circle; class 1 has one point sneaking close to class 0
angles = np.deg2rad([0, 20, 40, 30, 150, 180])
labels = np.array([0, 0, 0, 1, 1, 1])
e, _ = normalize_embeddings(np.c_[np.cos(angles), np.sin(angles)])

d = distance_matrix(e)
np.set_printoptions(precision=3, suppress=True)
print("squared distances\n", d)

for strategy in ("hard", "semi_hard", "random_hard"):
    ts = mine_triplets(e, labels, strategy, margin=0.5, rng_seed=0)
    print(f"\n{strategy}: {len(ts)} triplets")
    for a, p, n in ts.as_array():
        score = d[a, p] - d[a, n] + 0.5
        print(f"  a={a} p={p} n={n}  score={score:.3f}")

# the point at 30 degrees is the hard negative for every class-0 anchor
