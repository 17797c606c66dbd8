import math

import numpy as np
import pytest

from pdlab.encoder import EncoderConfig, init_encoder_params
from pdlab.optim import ParamStore
from pdlab.prompts import (PromptSet, add_prompts_to_params, apply_prompt_dropout, init_prompts, inject_image,
                           inject_text, set_stage_trainability)
from pdlab.tensor import ShapeError, Tensor


def test_default_lengths():
    p = init_prompts(2, 2, 64, 64, np.random.default_rng(0))
    assert p.text.shape == (2, 64) and p.image.shape == (2, 64)


def test_zero_length_injection_is_identity():
    p = init_prompts(0, 0, 8, 8, np.random.default_rng(0))
    x = Tensor(np.ones((5, 8)))
    assert inject_text(x, p.text) is x
    assert inject_image(x, p.image) is x


def test_negative_length_rejected():
    with pytest.raises(ValueError):
        init_prompts(-1, 2, 8, 8, np.random.default_rng(0))


def test_xavier_bound_over_many_draws():
    d = 48
    p = init_prompts(5000, 5000, d, d, np.random.default_rng(1))
    bound = math.sqrt(6.0 / (d + d))
    vals = np.concatenate([p.text.data.ravel(), p.image.data.ravel()])
    assert np.max(np.abs(vals)) <= bound
    assert np.max(np.abs(vals)) > 0.99 * bound


def test_inject_text_layout():
    rng = np.random.default_rng(0)
    t0 = Tensor(rng.normal(size=(6, 4)))
    prm = Tensor(rng.normal(size=(2, 4)))
    out = inject_text(t0, prm)
    assert out.shape == (8, 4)
    assert out.data[6:].tobytes() == prm.data.tobytes()
    assert out.data[:6].tobytes() == t0.data.tobytes()


def test_inject_text_batch_puts_prompts_after_each_eos():
    rng = np.random.default_rng(0)
    t0 = Tensor(rng.normal(size=(2, 5, 3)))
    prm = Tensor(rng.normal(size=(2, 3)))
    out = inject_text(t0, prm, lengths=[3, 5]).data
    assert out.shape == (2, 7, 3)
    np.testing.assert_array_equal(out[0, :3], t0.data[0, :3])
    np.testing.assert_array_equal(out[0, 3:5], prm.data)
    np.testing.assert_array_equal(out[0, 5:], t0.data[0, 3:])
    np.testing.assert_array_equal(out[1, 5:], prm.data)


def test_inject_capacity_error():
    with pytest.raises(ShapeError):
        inject_text(Tensor(np.zeros((6, 4))), Tensor(np.zeros((3, 4))), capacity=8)


def test_inject_image_layout():
    rng = np.random.default_rng(0)
    v0 = Tensor(rng.normal(size=(9, 4)))  # CLS + 8 patches
    prm = Tensor(rng.normal(size=(2, 4)))
    out = inject_image(v0, prm).data
    assert out.shape == (11, 4)
    assert out[:2].tobytes() == prm.data.tobytes()
    np.testing.assert_array_equal(out[2], v0.data[0])  # CLS at index 2


@pytest.mark.parametrize("n_t,n_i", [(0, 0), (1, 3), (4, 0), (5, 5)])
def test_injection_index_arithmetic(n_t, n_i):
    x = Tensor(np.arange(7 * 2.0).reshape(7, 2))
    assert inject_text(x, Tensor(np.full((n_t, 2), -1.0))).shape[0] == 7 + n_t
    out = inject_image(x, Tensor(np.full((n_i, 2), -1.0))).data
    assert out.shape[0] == 7 + n_i
    np.testing.assert_array_equal(out[n_i], x.data[0])


def test_prompt_dropout_modes():
    p = init_prompts(2, 2, 8, 8, np.random.default_rng(0))
    rng = np.random.default_rng(0)
    assert apply_prompt_dropout(p, False, rng) is p
    p0 = PromptSet(p.text, p.image, dropout_p=0.0)
    assert apply_prompt_dropout(p0, True, rng) is p0


def test_prompt_dropout_expectation():
    p = PromptSet(Tensor(np.ones((2, 5))), Tensor(np.ones((2, 5))), dropout_p=0.3)
    rng = np.random.default_rng(2)
    acc = np.zeros((2, 5))
    n = 100_000
    for _ in range(n):
        acc += apply_prompt_dropout(p, True, rng).text.data
    mean = acc / n
    assert np.all(np.abs(mean - 1.0) <= 0.02)


def _model_with_prompts(n_t, n_i, cfg=None):
    cfg = cfg or EncoderConfig(layers=1, text_width=16, image_width=24, heads=4, joint_dim=8)
    ps = init_encoder_params(cfg, 20, 0)
    add_prompts_to_params(ps, init_prompts(n_t, n_i, cfg.text_width, cfg.image_width, np.random.default_rng(0)))
    ps.add("classifier.weight", np.zeros((cfg.joint_dim, 3)))
    return ps, cfg


@pytest.mark.parametrize("n_t,n_i", [(2, 2), (8, 8), (8, 6), (8, 10), (6, 8), (10, 8), (0, 3)])
def test_stage1_trainable_count(n_t, n_i):
    ps, cfg = _model_with_prompts(n_t, n_i)
    set_stage_trainability(ps, "stage1")
    assert ps.num_scalars(trainable_only=True) == n_t * cfg.text_width + n_i * cfg.image_width


def test_stage2_and_one_stage_flags():
    ps, _ = _model_with_prompts(2, 2)
    set_stage_trainability(ps, "stage2")
    assert not ps.is_trainable("prompt.text.vectors") and not ps.is_trainable("prompt.image.vectors")
    assert ps.is_trainable("classifier.weight") and ps.is_trainable("text.token_embedding")
    set_stage_trainability(ps, "one_stage")
    assert all(ps.is_trainable(n) for n in ps)


def test_baseline_and_unknown_stage():
    ps = init_encoder_params(EncoderConfig(layers=1), 10, 0)
    set_stage_trainability(ps, "baseline")
    assert all(ps.is_trainable(n) for n in ps)
    with pytest.raises(ValueError):
        set_stage_trainability(ps, "stage3")
    with pytest.raises(ValueError):
        set_stage_trainability(ps, "stage1")  # no prompts to train
