import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forward_thinking.baseline import DeepNet
from forward_thinking.data import synth_squares, synth_xor, split
from forward_thinking.modelio import (FORMAT_VERSION, MAGIC, BadModelMagicError, ChecksumError,
                                      UnsupportedVersionError, load_model, model_from_bytes,
                                      model_to_bytes, save_model)
from forward_thinking.shallow import TrainConfig
from forward_thinking.stacking import StageSpec, train_forward_thinking, train_forward_thinking_conv
from forward_thinking.tensor import SeededRng


@pytest.fixture(scope="module")
def stacked():
    tr, va = split(synth_xor(200, 0.2, 0), 0.2, 1)
    cfg = TrainConfig(epochs=2, batch_size=16, seed=3)
    res = train_forward_thinking(tr, va, [StageSpec("dense", 5, cfg, init_seed=1),
                                          StageSpec("dense", 4, cfg, init_seed=2)],
                                 final_config=cfg)
    return res.model, va


@pytest.fixture(scope="module")
def stacked_conv():
    tr, va = split(synth_squares(60, 0), 0.2, 1)
    cfg = TrainConfig(epochs=1, batch_size=16, seed=3)
    res = train_forward_thinking_conv(tr, va, [
        StageSpec("conv", 3, cfg, head_hidden_width=6, dropout={"after_stage": 0.2, "after_fc": 0.3},
                  init_seed=1)])
    return res.model, va


@pytest.mark.parametrize("which", ["stacked", "stacked_conv"])
def test_round_trip_predictions_and_bytes(which, request, tmp_path):
    model, va = request.getfixturevalue(which)
    save_model(model, tmp_path / "m.ftm", provenance={"seed": 0})
    back, prov = load_model(tmp_path / "m.ftm")
    assert prov == {"seed": 0}
    np.testing.assert_array_equal(model.probs(va.features), back.probs(va.features))
    save_model(back, tmp_path / "m2.ftm", provenance=prov)
    assert (tmp_path / "m.ftm").read_bytes() == (tmp_path / "m2.ftm").read_bytes()
    assert [s.digest for s in back.stages] == [s.digest for s in model.stages]


@settings(max_examples=25, deadline=None)
@given(widths=st.lists(st.integers(1, 6), max_size=3), d=st.integers(1, 5),
       k=st.integers(2, 4), seed=st.integers(0, 2**16), frozen=st.sets(st.integers(0, 2)))
def test_deepnet_save_load_save_is_identity(widths, d, k, seed, frozen):
    net = DeepNet.dense(SeededRng(seed), d, widths, k)
    net.frozen = {i for i in frozen if i < len(net.layers)}
    blob = model_to_bytes(net, {"seed": seed})
    back, _ = model_from_bytes(blob)
    assert model_to_bytes(back, {"seed": seed}) == blob
    assert back.frozen == net.frozen
    x = SeededRng(seed + 1).normal(0, 1, (3, d))
    np.testing.assert_array_equal(net.probs(x), back.probs(x))


def test_layout_is_little_endian(stacked):
    blob = model_to_bytes(stacked[0])
    assert blob[:8] == MAGIC
    version, hlen = struct.unpack("<II", blob[8:16])
    assert version == FORMAT_VERSION == 1
    assert blob[16:17] == b"{"
    w = stacked[0].stages[0].layer.weights
    start = 16 + hlen
    assert blob[start:start + 8] == struct.pack("<d", w.ravel()[0])


@given(cut=st.integers(1, 200))
@settings(max_examples=30, deadline=None)
def test_truncation_is_a_checksum_error(stacked, cut):
    blob = model_to_bytes(stacked[0])
    with pytest.raises(ChecksumError):
        model_from_bytes(blob[:-cut])


def test_flipped_byte_is_a_checksum_error(stacked):
    blob = bytearray(model_to_bytes(stacked[0]))
    blob[len(blob) // 2] ^= 1
    with pytest.raises(ChecksumError):
        model_from_bytes(bytes(blob))


def test_version_zero_is_a_version_error(stacked):
    blob = bytearray(model_to_bytes(stacked[0]))
    blob[8:12] = struct.pack("<I", 0)
    with pytest.raises(UnsupportedVersionError, match="version 0") as e:
        model_from_bytes(bytes(blob))
    assert e.value.found == 0 and e.value.supported == 1


def test_bad_magic(tmp_path):
    with pytest.raises(BadModelMagicError):
        model_from_bytes(b"NOTMODEL" + bytes(64))


def test_saving_an_unknown_object_fails():
    with pytest.raises(TypeError):
        model_to_bytes(object())
