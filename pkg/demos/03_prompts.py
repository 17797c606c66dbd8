# %% [markdown]
# Learnable prompts: extra token vectors appended to each tower's input sequence.

# %%
import numpy as np

from pdlab.encoder import EncoderConfig, Vocabulary, encode_image, encode_text, init_encoder_params, patchify, tokenize
from pdlab.prompts import add_prompts_to_params, init_prompts, set_stage_trainability, PromptSet
from pdlab.synthetic import corpus_words, source_style, target_style

cfg = EncoderConfig()
vocab = Vocabulary(corpus_words(source_style(), target_style()))
params = init_encoder_params(cfg, len(vocab), seed=0)
add_prompts_to_params(params, init_prompts(2, 2, cfg.text_width, cfg.image_width, np.random.default_rng(0)))
prompts = PromptSet.from_params(params)

ids = tokenize("the pedestrian is walking and has crimson top and blue jeans", vocab, cfg.max_len)
states, feat = encode_text(ids, params, cfg, prompts)
print(len(ids), "tokens ->", states.shape[0], "states; feature norm %.6f" % np.linalg.norm(feat.data))

img = np.random.default_rng(1).random((cfg.image_h, cfg.image_w, 3))
states, feat = encode_image(patchify(img, cfg.patch), params, cfg, prompts)
print(cfg.num_patches, "patches + CLS ->", states.shape[0], "states with 2 image prompts in front")

# %%
# stage 1 trains only the prompt vectors
for stage in ("stage1", "stage2", "one_stage"):
    set_stage_trainability(params, stage)
    print(f"{stage:9s} trainable scalars: {params.num_scalars(trainable_only=True):7d} of {params.num_scalars()}")
print("expected for stage1:", 2 * cfg.text_width + 2 * cfg.image_width)
