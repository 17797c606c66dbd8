import math

import numpy as np
import pytest

from pdlab import tensor as T
from pdlab.checkpoint import (Checkpoint, CorruptBlobError, ShapeMismatchError, VersionMismatchError,
                              load_checkpoint, save_checkpoint)
from pdlab.optim import AdamState, LrSchedule, MissingGradError, ParamStore, adam_step, group_lr, lr_at


def _store():
    ps = ParamStore()
    ps.add("enc.w", np.arange(6.0).reshape(2, 3))
    ps.add("enc.b", np.zeros(3), trainable=False)
    ps.add("classifier.weight", np.ones((3, 2)))
    return ps


def test_adam_single_scalar_step():
    ps = ParamStore()
    ps.add("w", np.array(1.0))
    ps["w"].grad = np.array(1.0)
    adam_step(ps, AdamState(), lr=0.1)
    # m_hat = v_hat = 1 after bias correction
    assert ps["w"].data == pytest.approx(1 - 0.1 / (1 + 1e-8), abs=1e-15)
    assert ps["w"].data == pytest.approx(0.9, abs=1e-8)


def test_adam_zero_gradient_leaves_params_exactly():
    ps = _store()
    before = {n: ps[n].data.copy() for n in ps}
    for n in ps.trainable_names():
        ps[n].grad = np.zeros_like(ps[n].data)
    state = AdamState()
    for _ in range(3):
        adam_step(ps, state, lr=0.5)
    for n in ps:
        assert np.array_equal(ps[n].data, before[n])
    assert state.step == 3


def test_frozen_param_untouched_even_with_grad():
    ps = _store()
    ps["enc.b"].grad = np.ones(3)
    for n in ps.trainable_names():
        ps[n].grad = np.ones_like(ps[n].data)
    before = ps["enc.b"].data.tobytes()
    state = AdamState()
    for _ in range(5):
        adam_step(ps, state, lr=0.1)
    assert ps["enc.b"].data.tobytes() == before
    assert set(state.m) == {"enc.w", "classifier.weight"}


def test_missing_grad_names_param():
    ps = _store()
    ps["enc.w"].grad = np.ones((2, 3))
    with pytest.raises(MissingGradError, match="classifier.weight"):
        adam_step(ps, AdamState(), lr=0.1)


def test_group_multiplier_applies_to_classifier():
    assert group_lr("classifier.weight", 2e-5, {"classifier.": 5.0}) == 5 * 2e-5
    assert group_lr("text.projection", 2e-5, {"classifier.": 5.0}) == 2e-5
    ps = ParamStore()
    ps.add("a", np.array(0.0))
    ps.add("classifier.weight", np.array(0.0))
    for n in ps:
        ps[n].grad = np.array(1.0)
    adam_step(ps, AdamState(), 0.01, {"classifier.": 5.0})
    assert ps["classifier.weight"].data == pytest.approx(5 * ps["a"].data)


def test_adam_determinism():
    def run():
        ps = _store()
        state = AdamState()
        rng = np.random.default_rng(0)
        for _ in range(4):
            ps.zero_grad()
            loss = T.tsum(T.gelu(ps["enc.w"] @ ps["classifier.weight"]) * rng.normal(size=(2, 2)))
            loss.backward()
            adam_step(ps, state, 1e-2)
        return ps.digest()

    assert run() == run()


def test_lr_schedule_default_values():
    s = LrSchedule()
    assert lr_at(s, 0) == 1e-6
    assert lr_at(s, 5) == 1e-5
    assert lr_at(s, 60) == pytest.approx(0.0, abs=1e-21)
    assert lr_at(s, 2.5) == pytest.approx(5.5e-6)
    # continuity at the warmup boundary
    assert lr_at(s, 5 - 1e-9) == pytest.approx(lr_at(s, 5), rel=1e-6)
    values = [lr_at(s, e) for e in np.linspace(5, 60, 200)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert s.classifier_multiplier == 5


def test_lr_cosine_midpoint_direct_evaluation():
    s = LrSchedule(base_lr=1.0, warmup_epochs=0, warmup_start_lr=1.0, total_epochs=10, min_lr=0.0)
    assert lr_at(s, 5) == pytest.approx(0.5 * (1 + math.cos(math.pi * 0.5)))


def test_lr_out_of_range():
    with pytest.raises(ValueError):
        lr_at(LrSchedule(), 61)
    with pytest.raises(ValueError):
        lr_at(LrSchedule(), -0.1)


def test_checkpoint_roundtrip_bytes(tmp_path):
    ps = _store()
    state = AdamState(step=3)
    state.sync(ps)
    state.m["enc.w"] += 0.25
    ck = Checkpoint(ps, stage="stage1", epoch=4, config_hash="abc", adam=state, meta={"seed": 1})
    save_checkpoint(ck, tmp_path / "a")
    loaded = load_checkpoint(tmp_path / "a")
    save_checkpoint(loaded, tmp_path / "b")
    for f in ("manifest.json", "params.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert loaded.params.digest() == ps.digest()
    assert not loaded.params.is_trainable("enc.b")
    assert loaded.adam.step == 3
    np.testing.assert_array_equal(loaded.adam.m["enc.w"], state.m["enc.w"])


def test_checkpoint_errors(tmp_path):
    ps = _store()
    save_checkpoint(Checkpoint(ps), tmp_path / "c")
    blob = tmp_path / "c" / "params.bin"
    good = blob.read_bytes()

    blob.write_bytes(good[:-8])
    with pytest.raises(CorruptBlobError) as exc:
        load_checkpoint(tmp_path / "c")
    assert exc.value.code == "corrupt-blob"
    blob.write_bytes(good)

    other = ParamStore()
    other.add("enc.w", np.zeros((3, 2)))
    with pytest.raises(ShapeMismatchError, match="enc.w") as exc:
        load_checkpoint(tmp_path / "c", expected=other)
    assert exc.value.code == "shape-mismatch"

    man = tmp_path / "c" / "manifest.json"
    man.write_text(man.read_text().replace('"format_version": 1', '"format_version": 99'))
    with pytest.raises(VersionMismatchError) as exc:
        load_checkpoint(tmp_path / "c")
    assert exc.value.code == "version-mismatch"


def test_checkpoint_blob_is_little_endian(tmp_path):
    ps = ParamStore()
    ps.add("x", np.array([1.5]))
    save_checkpoint(Checkpoint(ps), tmp_path)
    assert (tmp_path / "params.bin").read_bytes() == np.array([1.5], dtype="<f8").tobytes()
