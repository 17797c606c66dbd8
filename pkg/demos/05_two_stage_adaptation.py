# %% [markdown]
# Baseline, one-stage and two-stage adaptation with the default configuration and a single seed.
# Pretraining takes about three minutes on one core and the three strategies about two more.
# `pdlab pipeline` does the same over three seeds and writes everything to disk.
#
# At much smaller sizes (two layers, a few dozen identities) the ordering between
# strategies is noisy, so the defaults are used here.

# %%
import time

from pdlab.harness import ExperimentConfig, eval_checkpoint, make_workspace, pretrain_source, run_one
from pdlab.synthetic import make_domain_pair

cfg = ExperimentConfig()
ws = make_workspace(cfg, *make_domain_pair(cfg.data, seed=0))

t = time.time()
backbone = pretrain_source(ws, seed=0)
print("pretrained in %.0fs" % (time.time() - t))
print("source test Rank-1 %.1f" % eval_checkpoint(ws, backbone, "source", "test").rank1)
print("target zero-shot Rank-1 %.1f" % eval_checkpoint(ws, backbone).rank1)

# %%
for strategy in ("baseline", "one_stage", "two_stage"):
    run = run_one(ws, strategy, backbone, seed=0)
    extra = "  (prompts only: %.1f)" % run.stage_reports["stage1"].rank1 if run.stage_reports else ""
    print(f"{strategy:9s} Rank-1 {run.report.rank1:5.1f}  mAP {run.report.mAP:5.1f}{extra}")
