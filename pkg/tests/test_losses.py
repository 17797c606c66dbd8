import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdlab.losses import LossConfig, id_loss, infonce, l_i2t, l_itc, l_t2i, logit_scale, total_loss_stage2
from pdlab.optim import ParamStore
from pdlab.tensor import ShapeError, Tensor


# naive references: plain python loops over anchors and gallery items

def _cos(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def _anchor_ref(anchors, gallery, a_ids, g_ids, scale):
    total = 0.0
    for i, a in enumerate(anchors):
        logits = [scale * _cos(a, g) for g in gallery]
        m = max(logits)
        lse = m + math.log(sum(math.exp(z - m) for z in logits))
        pos = [j for j in range(len(gallery)) if g_ids[j] == a_ids[i]]
        if not pos:
            raise ValueError("empty positive set")
        total += -sum(logits[j] - lse for j in pos) / len(pos)
    return total / len(anchors)


def ref_t2i(t, v, ids, scale):
    return _anchor_ref(t, v, ids, ids, scale)


def ref_i2t(t, v, ids, scale):
    return _anchor_ref(v, t, ids, ids, scale)


def ref_id(feats, labels, w, b=None):
    total = 0.0
    for f, y in zip(feats, labels):
        logits = [sum(f[k] * w[k][c] for k in range(len(f))) + (b[c] if b is not None else 0.0)
                  for c in range(len(w[0]))]
        m = max(logits)
        lse = m + math.log(sum(math.exp(z - m) for z in logits))
        total += lse - logits[y]
    return total / len(feats)


def ref_infonce(t, v, scale):
    ids = list(range(len(t)))
    return _anchor_ref(t, v, ids, ids, scale) + _anchor_ref(v, t, ids, ids, scale)


def _unit(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_batch(seed):
    rng = np.random.default_rng(seed)
    B = int(rng.integers(2, 17))
    d = int(rng.integers(2, 9))
    n_ids = int(rng.integers(1, B + 1))
    ids = rng.integers(0, n_ids, size=B)
    return _unit(rng, B, d), _unit(rng, B, d), ids, float(rng.uniform(0.5, 20)), rng


BATCHES = [random_batch(s) for s in range(100)]


def test_contrastive_losses_match_naive_reference():
    worst = 0.0
    for t, v, ids, scale, _ in BATCHES:
        tl, vl, il = t.tolist(), v.tolist(), ids.tolist()
        r_t2i, r_i2t = ref_t2i(tl, vl, il, scale), ref_i2t(tl, vl, il, scale)
        worst = max(worst,
                    abs(l_t2i(t, v, ids, scale).item() - r_t2i),
                    abs(l_i2t(t, v, ids, scale).item() - r_i2t),
                    abs(l_itc(t, v, ids, scale).item() - (r_t2i + r_i2t)),
                    abs(infonce(t, v, scale).item() - ref_infonce(tl, vl, scale)))
    assert worst < 1e-10


def test_id_and_total_losses_match_naive_reference():
    worst = 0.0
    cfg = LossConfig(lam=0.1)
    for t, v, ids, scale, rng in BATCHES:
        n_cls = int(ids.max()) + 1
        w = rng.normal(size=(t.shape[1], n_cls))
        b = rng.normal(size=n_cls)
        feats = np.concatenate([t, v])
        labels = np.concatenate([ids, ids])
        r_id = ref_id(feats.tolist(), labels.tolist(), w.tolist(), b.tolist())
        worst = max(worst, abs(id_loss(feats, labels, Tensor(w), Tensor(b)).item() - r_id))
        r_id_nobias = ref_id(feats.tolist(), labels.tolist(), w.tolist())
        r_itc = ref_t2i(t.tolist(), v.tolist(), ids.tolist(), scale) + ref_i2t(t.tolist(), v.tolist(), ids.tolist(), scale)
        total = total_loss_stage2(t, v, ids, Tensor(w), cfg, scale).item()
        worst = max(worst, abs(total - (r_itc + 0.1 * r_id_nobias)))
    assert worst < 1e-10


def test_total_is_itc_plus_lambda_id():
    t, v, ids, scale, rng = BATCHES[7]
    w = Tensor(rng.normal(size=(t.shape[1], int(ids.max()) + 1)))
    expected = l_itc(t, v, ids, scale).item() + 0.1 * id_loss(np.concatenate([t, v]), np.concatenate([ids, ids]), w).item()
    assert abs(total_loss_stage2(t, v, ids, w, LossConfig(), scale).item() - expected) < 1e-12
    assert total_loss_stage2(t, v, ids, w, LossConfig(lam=0.0), scale).item() == l_itc(t, v, ids, scale).item()


def test_infonce_equals_itc_exactly_on_unique_ids():
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        B, d = int(rng.integers(1, 17)), int(rng.integers(2, 9))
        t, v = _unit(rng, B, d), _unit(rng, B, d)
        ids = rng.permutation(100)[:B]
        scale = float(rng.uniform(1, 30))
        assert infonce(t, v, scale).item() == l_itc(t, v, ids, scale).item()


def test_hand_cases():
    # orthogonal unit features, unique ids: -log softmax([1, 0]) in each direction
    e = np.eye(2)
    expected = -math.log(math.e / (math.e + 1))
    assert l_t2i(e, e, [0, 1]).item() == pytest.approx(expected, abs=1e-15)
    assert l_itc(e, e, [0, 1]).item() == pytest.approx(2 * expected, abs=1e-15)
    # all positives share one id: the per-anchor average of log-probs over the whole gallery
    assert l_t2i(e, e, [3, 3]).item() == pytest.approx(-0.5 * (math.log(math.e / (math.e + 1)) + math.log(1 / (math.e + 1))))


def test_symmetric_similarity_gives_equal_directions():
    t, _, ids, scale, _ = BATCHES[3]
    assert l_t2i(t, t, ids, scale).item() == pytest.approx(l_i2t(t, t, ids, scale).item(), abs=1e-12)


def test_empty_positive_set_and_shapes():
    t = _unit(np.random.default_rng(0), 3, 4)
    with pytest.raises(ShapeError):
        l_itc(t, t[:2], [0, 1, 2])
    with pytest.raises(ShapeError):
        l_itc(t, t, [0, 1])
    with pytest.raises(ValueError):
        id_loss(t, [0, 1, 5], Tensor(np.zeros((4, 3))))


def test_learnable_scale_starts_at_inverse_temperature_and_is_capped():
    ps = ParamStore()
    ps.add("logit_scale", np.array(math.log(1 / 0.07)))
    assert logit_scale(ps, LossConfig()).item() == pytest.approx(1 / 0.07)
    ps["logit_scale"].data[...] = 10.0
    assert logit_scale(ps, LossConfig()).item() == pytest.approx(100.0)
    assert logit_scale(ps, LossConfig(learnable_scale=False, fixed_scale=2.0)) == 2.0


def test_id_loss_gradient_reaches_classifier():
    t, v, ids, _, rng = BATCHES[11]
    w = Tensor(rng.normal(size=(t.shape[1], int(ids.max()) + 1)), requires_grad=True)
    id_loss(np.concatenate([t, v]), np.concatenate([ids, ids]), w).backward()
    assert np.abs(w.grad).sum() > 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_losses_are_permutation_invariant(seed):
    t, v, ids, scale, rng = random_batch(seed)
    perm = rng.permutation(len(ids))
    w = Tensor(rng.normal(size=(t.shape[1], int(ids.max()) + 1)))
    pairs = [
        (l_itc(t, v, ids, scale), l_itc(t[perm], v[perm], ids[perm], scale)),
        (infonce(t, v, scale), infonce(t[perm], v[perm], scale)),
        (total_loss_stage2(t, v, ids, w, LossConfig(), scale),
         total_loss_stage2(t[perm], v[perm], ids[perm], w, LossConfig(), scale)),
    ]
    for a, b in pairs:
        assert abs(a.item() - b.item()) < 1e-12


def test_itc_gradient_reaches_prompts_in_stage1():
    from pdlab.encoder import EncoderConfig, encode_image, encode_text, init_encoder_params, pad_batch
    from pdlab.prompts import PromptSet, add_prompts_to_params, init_prompts, set_stage_trainability

    cfg = EncoderConfig(layers=1, text_width=8, image_width=8, heads=2, joint_dim=4, max_len=8,
                        image_h=8, image_w=8, patch=4)
    ps = init_encoder_params(cfg, 12, seed=1)
    add_prompts_to_params(ps, init_prompts(2, 2, 8, 8, np.random.default_rng(2)))
    set_stage_trainability(ps, "stage1")
    rng = np.random.default_rng(3)
    ids, lengths = pad_batch([[1, 5, 6, 2], [1, 7, 2], [1, 8, 9, 10, 2]], 0)
    patches = rng.random((3, 4, 48))
    prompts = PromptSet.from_params(ps)
    _, tf = encode_text(ids, ps, cfg, prompts, lengths)
    _, vf = encode_image(patches, ps, cfg, prompts)
    l_itc(tf, vf, [0, 1, 0], 10.0).backward()
    assert np.abs(ps["prompt.text.vectors"].grad).max() > 0
    assert np.abs(ps["prompt.image.vectors"].grad).max() > 0
    assert all(ps[n].grad is None for n in ps if not n.startswith("prompt."))
