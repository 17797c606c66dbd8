# %% [markdown]
# Retrieval metrics on a hand-made similarity matrix.

# %%
import numpy as np

from pdlab.metrics import compute_report, rank_gallery

# two queries, a gallery of five images from three people
sim = np.array([[0.9, 0.2, 0.8, 0.1, 0.3],
                [0.1, 0.7, 0.6, 0.9, 0.2]])
query_ids = [1, 3]
gallery_ids = [2, 1, 1, 3, 3]

ranked = rank_gallery(sim, query_ids, gallery_ids)
print("ranked gallery:", ranked.order.tolist())
print("relevance:     ", ranked.matches.astype(int).tolist())
rep = compute_report(sim, query_ids, gallery_ids)
print(f"Rank-1 {rep.rank1:.1f}  mAP {rep.mAP:.2f}  mINP {rep.mINP:.2f}")
# query 0: hits at ranks 2 and 4 -> AP = (1/2 + 2/4) / 2 = 0.5, INP = 2/4
# query 1: hits at ranks 1 and 4 -> AP = (1 + 2/4) / 2 = 0.75, INP = 2/4
