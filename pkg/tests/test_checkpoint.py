import numpy as np
import pytest

from helpers import random_batch, small_model
from reprune.checkpoint import load_checkpoint, save_checkpoint
from reprune.errors import FormatError
from reprune.network import PruneMask, backward, forward
from reprune.optim import OptimizerState, step
from reprune.ranking import GradActStats
from reprune.scheduler import CycleState, MetricsLog, RngStreams


def build_state(seed=0, steps=3):
    model = small_model(depth=2, width=3, size=5, batch_norm=True,
                        dropout=0.2, seed=seed)
    params = model.parameters()
    opt = OptimizerState("adam", params,
                         {"beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8})
    _, streams = RngStreams.from_seed(seed)
    mask = PruneMask.full(model)
    mask.rows[0][1] = False
    cycle = CycleState(mask=mask, phase="sub", iteration=1, epoch=7,
                       epoch_in_phase=2,
                       dropped=[(0, 1)],
                       pending_chunks=[[(1, 0)], [(1, 2)]])
    cycle.log_event(5, "phase sub start iteration=1")
    stats = GradActStats(model)
    log = MetricsLog()
    for e in range(2):
        log.append(epoch=e, phase="full", iteration=0, train_acc=0.5 + e,
                   test_acc=0.4, train_loss=1.5, ortho_sum=2.0,
                   live_filters=6, lr=0.01)
    x, y = random_batch(model, n=4, seed=seed + 1)
    for _ in range(steps):
        _, cache = forward(model, mask, x, mode="train",
                           dropout_rng=streams.dropout)
        _, grads = backward(model, mask, cache, y)
        stats.update(model, cache, grads)
        step(opt, params, grads, mask, 0.01)
    return model, opt, cycle, log, stats, streams


def test_roundtrip_restores_everything(tmp_path):
    model, opt, cycle, log, stats, streams = build_state()
    path = str(tmp_path / "state.ckpt")
    save_checkpoint(path, model, opt, cycle, log, stats, streams,
                    config_echo={"epochs": "100", "metric": "ortho"})
    bundle = load_checkpoint(path)

    pa, pb = model.parameters(), bundle.model.parameters()
    assert sorted(pa) == sorted(pb)
    for name in pa:
        assert pa[name].tobytes() == pb[name].tobytes(), name
    for la, lb in zip(model.conv_layers, bundle.model.conv_layers):
        assert la.bn.running_mean.tobytes() == lb.bn.running_mean.tobytes()
        assert la.bn.running_var.tobytes() == lb.bn.running_var.tobytes()
    assert bundle.model.dropout == model.dropout

    for name, slots in opt.slots.items():
        for sname, arr in slots.items():
            got = bundle.opt_state.slots[name][sname]
            assert arr.tobytes() == got.tobytes(), (name, sname)
            assert arr.dtype == got.dtype
    assert bundle.opt_state.rule == "adam"
    assert bundle.opt_state.hyper == opt.hyper

    assert bundle.cycle.phase == "sub"
    assert bundle.cycle.iteration == 1
    assert bundle.cycle.epoch == 7
    assert bundle.cycle.dropped == [(0, 1)]
    assert bundle.cycle.pending_chunks == [[(1, 0)], [(1, 2)]]
    assert bundle.cycle.events == cycle.events
    assert [r.tolist() for r in bundle.cycle.mask.rows] \
        == [r.tolist() for r in cycle.mask.rows]

    assert bundle.log.to_csv() == log.to_csv()
    assert bundle.stats.steps == stats.steps
    assert stats.fisher[0].tobytes() == bundle.stats.fisher[0].tobytes()
    assert bundle.config_echo == {"epochs": "100", "metric": "ortho"}


def test_rng_streams_continue_identically(tmp_path):
    model, opt, cycle, log, stats, streams = build_state(seed=5)
    path = str(tmp_path / "state.ckpt")
    save_checkpoint(path, model, opt, cycle, log, stats, streams)
    bundle = load_checkpoint(path)
    for name in ("dropout", "reinit", "metric"):
        a = getattr(streams, name).random(8)
        b = getattr(bundle.streams, name).random(8)
        assert np.array_equal(a, b), name


def test_save_load_save_is_byte_identical(tmp_path):
    model, opt, cycle, log, stats, streams = build_state(seed=2)
    p1 = str(tmp_path / "a.ckpt")
    p2 = str(tmp_path / "b.ckpt")
    save_checkpoint(p1, model, opt, cycle, log, stats, streams,
                    config_echo={"seed": "2"})
    b = load_checkpoint(p1)
    save_checkpoint(p2, b.model, b.opt_state, b.cycle, b.log, b.stats,
                    b.streams, config_echo=b.config_echo)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"NOT-A-CHECKPOINT....." + bytes(64))
    with pytest.raises(FormatError) as err:
        load_checkpoint(str(p))
    assert "magic" in str(err.value).lower()


def test_truncated_payload_names_array(tmp_path):
    model, opt, cycle, log, stats, streams = build_state(seed=3)
    path = tmp_path / "full.ckpt"
    save_checkpoint(str(path), model, opt, cycle, log, stats, streams)
    raw = path.read_bytes()
    cut = tmp_path / "cut.ckpt"
    cut.write_bytes(raw[:-40])
    with pytest.raises(FormatError) as err:
        load_checkpoint(str(cut))
    # names the array whose bytes ran out
    assert "." in str(err.value) or "conv" in str(err.value)


def test_trailing_garbage_rejected(tmp_path):
    model, opt, cycle, log, stats, streams = build_state(seed=4)
    path = tmp_path / "full.ckpt"
    save_checkpoint(str(path), model, opt, cycle, log, stats, streams)
    bloat = tmp_path / "bloat.ckpt"
    bloat.write_bytes(path.read_bytes() + bytes(9))
    with pytest.raises(FormatError):
        load_checkpoint(str(bloat))


def test_corrupt_header_json(tmp_path):
    model, opt, cycle, log, stats, streams = build_state(seed=6)
    path = tmp_path / "full.ckpt"
    save_checkpoint(str(path), model, opt, cycle, log, stats, streams)
    raw = bytearray(path.read_bytes())
    # smash the first byte after the magic line
    magic_end = raw.index(b"\n") + 1
    raw[magic_end] = ord("?")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_checkpoint(str(bad))
