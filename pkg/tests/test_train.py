import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uformer import dsp
from uformer.experiments import mixture
from uformer.model import build
from uformer.train import (Adam, Checkpoint, CheckpointError, PlateauSchedule, TrainConfig, TrainingAborted,
                           adam_step, capture, load_checkpoint, make_batch, read_container, restore,
                           save_checkpoint, train_loop, write_container)
from uformer.tensor import Tensor


# -- Adam ------------------------------------------------------------------------

def test_adam_zero_gradient():
    p, m, v = np.array([1.0, -2.0]), np.array([0.5, 0.1]), np.array([0.2, 0.3])
    new, m2, v2 = adam_step(p, np.zeros(2), m, v, 1e-3, 5)
    assert np.allclose(m2, 0.9 * m) and np.allclose(v2, 0.999 * v)
    new0, _, _ = adam_step(p, np.zeros(2), np.zeros(2), np.zeros(2), 1e-3, 1)
    assert np.array_equal(new0, p)


def test_adam_constant_gradient_step_bounded():
    p, m, v = np.zeros(1), np.zeros(1), np.zeros(1)
    steps = []
    for t in range(1, 200):
        new, m, v = adam_step(p, np.array([3.0]), m, v, 1e-3, t)
        steps.append(float(p[0] - new[0]))
        p = new
    assert all(0 < s <= 1e-3 * (1 + 1e-6) for s in steps)
    assert np.isclose(steps[-1], 1e-3, rtol=1e-5)


def test_adam_three_hand_steps():
    # scalar parameter, gradients 1, -2, 0.5, lr 0.1
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.1
    p, m, v = 1.0, 0.0, 0.0
    expect = []
    for t, g in enumerate([1.0, -2.0, 0.5], 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        expect.append(p)
    arr, mm, vv = np.array([1.0]), np.zeros(1), np.zeros(1)
    for t, g in enumerate([1.0, -2.0, 0.5], 1):
        arr, mm, vv = adam_step(arr, np.array([g]), mm, vv, lr, t)
        assert np.isclose(arr[0], expect[t - 1], rtol=1e-14)
    assert np.isclose(expect[0], 0.9)


def test_adam_errors():
    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2), 1e-3, 1)
    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), 1e-3, 0)


def test_adam_optimizer_class():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = Adam([("p", p)], lr=0.1)
    p.grad = np.array([1.0, -1.0], dtype=np.float32)
    opt.step()
    assert np.allclose(p.data, [0.9, 2.1])


# -- schedule --------------------------------------------------------------------

def simulate(losses, lr, patience=3, factor=0.5, stop_after=10):
    """Reference for the plateau/early-stop rules: returns (lr per epoch, stop epoch or None)."""
    lrs, best, since_best, rising = [], None, 0, 0
    for e, val in enumerate(losses):
        rising = rising + 1 if e > 0 and val > losses[e - 1] else 0
        if best is None or val < best:
            best, since_best = val, 0
        else:
            since_best += 1
        if since_best == patience:
            lr, since_best = lr * factor, 0
        lrs.append(lr)
        if rising == stop_after:
            return lrs, e + 1
    return lrs, None


def run_schedule(losses, lr=1e-3):
    s = PlateauSchedule(lr)
    lrs = []
    for e, val in enumerate(losses):
        stop = s.update(val)
        lrs.append(s.lr)
        if stop:
            return lrs, e + 1
    return lrs, None


@given(st.lists(st.integers(0, 6).map(float), min_size=1, max_size=60))
def test_schedule_matches_reference(losses):
    assert run_schedule(losses) == simulate(losses, 1e-3)


def test_one_plateau_halves_once():
    lrs, stop = run_schedule([5, 4, 4, 4, 4, 3, 2, 1])
    assert lrs == [1e-3] * 4 + [5e-4] * 4
    assert stop is None


def test_monotone_improvement_never_decays():
    lrs, stop = run_schedule(list(np.linspace(10, 1, 30)))
    assert set(lrs) == {1e-3} and stop is None


def test_early_stop_after_ten_increases():
    _, stop = run_schedule([1.0 + 0.1 * i for i in range(20)])
    assert stop == 11
    _, stop = run_schedule([1.0 + 0.1 * i for i in range(10)])
    assert stop is None


# -- batching --------------------------------------------------------------------

def test_make_batch_pads_short_inputs(rng):
    items = [(rng.standard_normal(n), rng.standard_normal(n)) for n in (1000, 3000, 2000)]
    clean, noisy = make_batch(items, 4.0, 0)
    assert clean.shape == noisy.shape == (3, 3000)
    assert not clean[0, 1000:].any()


def test_make_batch_crops_long_inputs_consistently(rng):
    clean = rng.standard_normal(160000)
    noisy, _ = dsp.mix_at_snr(clean, rng.standard_normal(160000), 5.0)
    c, n = make_batch([(clean, noisy)], 4.0, 3)
    assert c.shape == (1, 64000)
    assert abs(dsp.snr_db(c[0], n[0] - c[0]) - 5.0) < 3.0
    off = int(np.flatnonzero(np.isclose(clean, c[0, 0], atol=1e-7))[0])
    assert np.allclose(noisy[off:off + 64000], n[0], atol=1e-6)


def test_make_batch_empty():
    with pytest.raises(ValueError):
        make_batch([], 4.0, 0)


# -- checkpoints -----------------------------------------------------------------

def test_checkpoint_byte_identical(tmp_path, tiny_cfg):
    model = build(tiny_cfg, seed=2)
    opt = Adam(list(model.named_parameters()))
    ckpt = capture(model, opt, step=7, epoch=2, best_valid=0.25, lr=5e-4, train_cfg=TrainConfig())
    save_checkpoint(tmp_path / "a.ckpt", ckpt)
    save_checkpoint(tmp_path / "b.ckpt", load_checkpoint(tmp_path / "a.ckpt"))
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    back = load_checkpoint(tmp_path / "a.ckpt")
    assert set(back.params) == {n for n, _ in model.named_parameters()}
    assert (back.step, back.epoch, back.best_valid, back.lr) == (7, 2, 0.25, 5e-4)


def test_container_header(tmp_path):
    write_container(tmp_path / "x", {"a": np.arange(3, dtype=np.int64)})
    raw = (tmp_path / "x").read_bytes()
    assert raw[:4] == b"UFMR" and raw[4:8] == (1).to_bytes(4, "little")
    bad = bytearray(raw)
    bad[4] = 9
    (tmp_path / "y").write_bytes(bytes(bad))
    with pytest.raises(CheckpointError, match="version"):
        read_container(tmp_path / "y")
    (tmp_path / "z").write_bytes(b"JUNK" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        read_container(tmp_path / "z")
    (tmp_path / "t").write_bytes(raw[:-4])
    with pytest.raises(CheckpointError, match="truncated"):
        read_container(tmp_path / "t")


def test_restore_into_mismatched_config(tiny_cfg):
    ckpt = capture(build(tiny_cfg))
    other = build(dataclasses.replace(tiny_cfg, use_mhsa=False))
    with pytest.raises(CheckpointError, match="mhsa"):
        restore(other, ckpt)
    wider = build(dataclasses.replace(tiny_cfg, enc_channels=[8, 8, 8, 8, 8], dec_channels=[8, 8, 8, 8, 1]))
    with pytest.raises(CheckpointError, match="shape"):
        restore(wider, ckpt)


# -- loop ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_data():
    data = [mixture(0.5, snr, kind, seed=10 + i)
            for i, (snr, kind) in enumerate([(0, "white"), (5, "pink"), (-5, "brown")])]
    return data, data[:1]


def _run(cfg_model, data, tcfg, resume=None, seed=0):
    ckpts = []
    model = build(cfg_model, seed=seed)
    hist = train_loop(model, data[0], data[1], tcfg, resume=resume,
                      on_epoch=lambda c, best: ckpts.append(c))
    return hist, ckpts


def test_resume_reproduces_trajectory(tmp_path, tiny_cfg, tiny_data):
    tcfg = TrainConfig(chunk_seconds=0.3, max_epochs=4, seed=5)
    full, ckpts = _run(tiny_cfg, tiny_data, tcfg)
    save_checkpoint(tmp_path / "mid.ckpt", ckpts[1])
    resumed, _ = _run(tiny_cfg, tiny_data, tcfg, resume=load_checkpoint(tmp_path / "mid.ckpt"), seed=99)
    assert resumed.step_losses == full.step_losses[4:]
    assert [dataclasses.astuple(r) for r in resumed.records] == [dataclasses.astuple(r) for r in full.records[2:]]


def test_fixed_seed_identical_history(tiny_cfg, tiny_data):
    tcfg = TrainConfig(chunk_seconds=0.3, max_epochs=2, seed=1)
    a, _ = _run(tiny_cfg, tiny_data, tcfg)
    b, _ = _run(tiny_cfg, tiny_data, tcfg)
    assert a.step_losses == b.step_losses
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0] == "epoch,train_loss,valid_loss,lr"


def test_max_steps_and_callbacks(tiny_cfg, tiny_data):
    seen = []
    model = build(tiny_cfg)
    hist = train_loop(model, tiny_data[0], tiny_data[1], TrainConfig(chunk_seconds=0.3, max_steps=3),
                      on_step=lambda s, l: seen.append(s) or False)
    assert seen == [1, 2, 3] and len(hist.step_losses) == 3


def test_nan_aborts_with_tensor_name(tiny_cfg, tiny_data):
    model = build(tiny_cfg)
    model.decoder[4].conv.bias.data[0] = np.nan
    with pytest.raises(TrainingAborted, match="decoder.4.conv.bias"):
        train_loop(model, tiny_data[0], tiny_data[1], TrainConfig(chunk_seconds=0.3, max_epochs=1))


def test_empty_datasets(tiny_cfg, tiny_data):
    with pytest.raises(ValueError):
        train_loop(build(tiny_cfg), [], tiny_data[1], TrainConfig())


@pytest.mark.parametrize("kw", [dict(plateau_patience=0), dict(chunk_seconds=0), dict(batch_size=0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_checkpoint_names_complete(tiny_cfg):
    model = build(tiny_cfg)
    entries = capture(model, Adam(list(model.named_parameters()))).entries()
    names = {k[len("param/"):] for k in entries if k.startswith("param/")}
    assert names == {n for n, _ in model.named_parameters()}
    assert isinstance(Checkpoint.from_entries(entries), Checkpoint)
