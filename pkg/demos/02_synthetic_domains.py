# %% [markdown]
# Source and target domains: same people semantics, different captions and rendering.

# %%
import numpy as np

from pdlab.synthetic import DataConfig, gen_identities, make_domain_pair, render_caption, render_image
from pdlab.synthetic import source_style, target_style

src_style, tgt_style = source_style(), target_style()
person = gen_identities(1, seed=7)[0]
print(person.attributes)
for seed in range(2):
    print("source:", render_caption(person, src_style, seed))
    print("target:", render_caption(person, tgt_style, seed))

# %%
a = render_image(person, src_style, 0)
b = render_image(person, tgt_style, 0)
print("image shape", a.shape, "mean abs pixel difference between domains %.3f" % np.abs(a - b).mean())

# %%
# a small corpus; the defaults give 200 source and 80 target identities
cfg = DataConfig(source_train_ids=20, source_val_ids=0, source_test_ids=5, target_train_ids=10, target_test_ids=5)
source, target = make_domain_pair(cfg, seed=0)
for ds in (source, target):
    print(ds.domain, {n: len(ds.partition(n)) for n in ("train", "val", "test")}, "captions")

# %%
try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 8, figsize=(8, 4))
    for col in range(8):
        axes[0, col].imshow(source.train.images[col * 2])
        axes[1, col].imshow(target.train.images[col * 2])
    for ax in axes.ravel():
        ax.axis("off")
    fig.savefig("domains.png", dpi=80)
    print("wrote domains.png (top: source, bottom: target)")
except ImportError:
    pass
