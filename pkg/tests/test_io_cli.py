import copy
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from refsam3d.cli import main, read_dataset
from refsam3d.errors import CorruptionError, FormatError, InputError
from refsam3d.io import (
    HEADER,
    decode_checkpoint,
    decode_volume,
    encode_checkpoint,
    encode_volume,
    load_checkpoint,
    read_volume,
    save_checkpoint,
    write_volume,
)
from refsam3d.pipeline.config import write_config
from refsam3d.pipeline.model import build_model

dims3 = st.tuples(*[st.integers(1, 6)] * 3)


# ---------------------------------------------------------------- volume files
@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float32, dims3, elements=st.floats(-1e6, 1e6, width=32)),
       st.tuples(*[st.floats(0.125, 4.0, width=32)] * 3))
def test_volume_roundtrip(arr, spacing):
    f = decode_volume(encode_volume(arr, spacing))
    assert f.data.dtype == np.float32 and f.data.tobytes() == arr.tobytes()
    assert f.spacing == spacing


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.uint8, dims3, elements=st.integers(0, 1)))
def test_mask_roundtrip(mask):
    f = decode_volume(encode_volume(mask))
    assert f.is_mask and np.array_equal(f.data, mask)


def test_header_layout():
    raw = encode_volume(np.zeros((2, 3, 4), np.uint8), (1.0, 2.0, 0.5))
    assert raw[:4] == b"V3D1" and raw[4] == 0
    assert struct.unpack_from("<3I3f", raw, 5) == (2, 3, 4, 1.0, 2.0, 0.5)
    assert len(raw) == HEADER.size + 24


def test_bad_magic():
    raw = b"XXXX" + encode_volume(np.zeros((2, 2, 2), np.uint8))[4:]
    with pytest.raises(FormatError, match="bad magic"):
        decode_volume(raw)


def test_non_binary_mask_payload():
    raw = bytearray(encode_volume(np.zeros((2, 2, 2), np.uint8)))
    raw[HEADER.size + 3] = 2
    with pytest.raises(InputError, match="found value 2"):
        decode_volume(bytes(raw))


def test_truncated_payload_reports_sizes():
    raw = encode_volume(np.zeros((4, 4, 4), np.float32))
    with pytest.raises(CorruptionError, match="payload is 252 bytes, expected 256"):
        decode_volume(raw[:-4])
    with pytest.raises(CorruptionError, match="header truncated"):
        decode_volume(raw[:10])


def test_unknown_dtype_code():
    raw = bytearray(encode_volume(np.zeros((1, 1, 1), np.uint8)))
    raw[4] = 9
    with pytest.raises(FormatError, match="dtype code 9"):
        decode_volume(bytes(raw))


def test_write_rejects_bad_inputs(tmp_path):
    with pytest.raises(InputError):
        write_volume(tmp_path / "a.v3d", np.zeros((2, 2)))
    with pytest.raises(InputError):
        write_volume(tmp_path / "a.v3d", np.zeros((2, 2, 2)), (1.0, -1.0, 1.0))


# ---------------------------------------------------------------- checkpoints
def test_checkpoint_roundtrip(tiny_cfg, tmp_path):
    a = build_model(tiny_cfg)
    cfg = copy.deepcopy(tiny_cfg)
    cfg.train.seed = 99
    b = build_model(cfg)
    save_checkpoint(a, tmp_path / "m.ckpt")
    load_checkpoint(b, tmp_path / "m.ckpt")
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()


def test_checkpoint_records_tags(tiny_model):
    stored = decode_checkpoint(encode_checkpoint(tiny_model))
    params = dict(tiny_model.named_parameters())
    assert set(stored) == set(params)
    for name, (arr, origin, frozen) in stored.items():
        assert origin == params[name].origin and frozen == params[name].frozen


def test_checkpoint_corruption(tiny_model, tiny_cfg):
    raw = encode_checkpoint(tiny_model)
    with pytest.raises(CorruptionError, match="truncated"):
        decode_checkpoint(raw[:-1])
    with pytest.raises(CorruptionError, match="trailing"):
        decode_checkpoint(raw + b"\0")
    with pytest.raises(FormatError):
        decode_checkpoint(b"NOPE" + raw[4:])


def test_checkpoint_shape_mismatch(tiny_model, tiny_cfg, tmp_path):
    save_checkpoint(tiny_model, tmp_path / "m.ckpt")
    cfg = copy.deepcopy(tiny_cfg)
    cfg.prompt.num_sparse = 3
    with pytest.raises(FormatError, match="shape"):
        load_checkpoint(build_model(cfg), tmp_path / "m.ckpt")


# ---------------------------------------------------------------- command line
def tiny_config_file(tiny_cfg, tmp_path, **train):
    cfg = copy.deepcopy(tiny_cfg)
    cfg.data.n_train = 3
    for k, v in train.items():
        setattr(cfg.train, k, v)
    path = tmp_path / "tiny.cfg"
    write_config(cfg, path)
    return path


def test_synth_is_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["synth", "--seed", "3", "--n", "3", "--size", "16", "--out", str(tmp_path / name)]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "manifest.jsonl" in files and "case_0000_volume.v3d" in files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    samples = read_dataset(tmp_path / "a")
    assert len(samples) == 3 and samples[0].volume.shape == (1, 16, 16, 16)


def test_eval_of_ground_truth_against_itself(tmp_path, capsys):
    gt = tmp_path / "gt"
    main(["synth", "--seed", "1", "--n", "2", "--size", "16", "--out", str(gt)])
    assert main(["eval", str(gt), str(gt), "--report", str(tmp_path / "r.jsonl")]) == 0
    rows = [json.loads(line) for line in (tmp_path / "r.jsonl").read_text().splitlines()]
    assert len(rows) == 2
    assert all(r["dice"] == 1.0 and r["nsd"] == 1.0 and r["hd"] == 0.0 for r in rows)
    assert {r["class"] for r in rows} <= {"sphere", "cube"}


def test_eval_missing_prediction(tmp_path, capsys):
    gt = tmp_path / "gt"
    main(["synth", "--seed", "1", "--n", "1", "--size", "16", "--out", str(gt)])
    (tmp_path / "pred").mkdir()
    assert main(["eval", str(tmp_path / "pred"), str(gt)]) == 2
    assert "missing prediction" in capsys.readouterr().err


def test_train_then_infer(tiny_cfg, tmp_path, capsys):
    cfg_path = tiny_config_file(tiny_cfg, tmp_path)
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--out", str(run), "--max-steps", "2"]) == 0
    assert (run / "final.ckpt").exists() and (run / "config.cfg").exists()
    vol = np.random.default_rng(0).random((8, 8, 8)).astype(np.float32)
    write_volume(tmp_path / "v.v3d", vol, (1.0, 1.0, 2.0))
    out = tmp_path / "pred.v3d"
    assert main(["infer", "--checkpoint", str(run / "final.ckpt"), "--volume", str(tmp_path / "v.v3d"),
                 "--prompt", "segment the cube", "--out", str(out)]) == 0
    mask, spacing = read_volume(out)
    assert mask.shape == (8, 8, 8) and mask.dtype == np.uint8 and spacing == (1.0, 1.0, 2.0)


def test_train_is_reproducible(tiny_cfg, tmp_path, capsys):
    cfg_path = tiny_config_file(tiny_cfg, tmp_path, epochs=2, checkpoint_every=1)
    for name in ("a", "b"):
        assert main(["train", "--config", str(cfg_path), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    for f in ("train_log.jsonl", "epoch0001.ckpt", "final.ckpt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@pytest.mark.parametrize("argv", [["frobnicate"], ["synth", "--n", "2"], ["eval", "only-one"],
                                  ["gradcheck", "--bogus"]])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1


def test_runtime_errors_exit_2(tmp_path, capsys):
    assert main(["eval", str(tmp_path / "nope"), str(tmp_path / "nope")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("[train]\nlr = banana\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "banana" in capsys.readouterr().err


def test_gradcheck_quick(capsys):
    assert main(["gradcheck", "--quick"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "passed at tolerance 0.0001" in out
