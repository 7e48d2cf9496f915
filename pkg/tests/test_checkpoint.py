import struct

import numpy as np
import pytest

from dianet.analysis import HiddenStateTrace
from dianet.backbone import Network, NetworkConfig, StageSpec
from dianet.checkpoint import (load_checkpoint, load_trace, read_container, save_checkpoint, save_trace,
                               write_container)
from dianet.errors import ConfigError


def _net(dtype=np.float32):
    cfg = NetworkConfig(stages=[StageSpec(8, 1, 1)], reduction=2, num_classes=3, stem_channels=8, cells=2)
    return Network(cfg, seed=4, dtype=dtype)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_checkpoint_round_trip_bitwise(tmp_path, dtype):
    net = _net(dtype)
    for p in net.parameters():
        p.data += np.float32(0.25)
    next(iter(net.buffers().values()))[:] = 3.0
    path = tmp_path / "m.dia"
    save_checkpoint(path, net, {"note": "x"})
    back, meta = load_checkpoint(path)
    assert meta["note"] == "x" and meta["seed"] == 4
    assert back.config == net.config and back.dtype == net.dtype
    for a, b in zip(net.parameters(), back.parameters()):
        assert a.name == b.name and np.array_equal(a.data, b.data) and a.data.dtype == b.data.dtype
    for k, v in net.buffers().items():
        assert np.array_equal(v, back.buffers()[k])
    save_checkpoint(tmp_path / "again.dia", back, {"note": "x"})
    assert (tmp_path / "again.dia").read_bytes() == path.read_bytes()


def test_container_header(tmp_path):
    path = tmp_path / "c.dia"
    write_container(path, {"a": np.arange(3, dtype=np.int32)}, {"k": 1})
    raw = path.read_bytes()
    assert raw[:4] == b"DIA1"
    n = struct.unpack("<I", raw[4:8])[0]
    assert raw[8 + n:] == np.arange(3, dtype="<i4").tobytes()
    arrays, meta, kind = read_container(path)
    assert kind == "model" and meta == {"k": 1} and arrays["a"].tolist() == [0, 1, 2]


def test_corrupt_files_rejected(tmp_path):
    path = tmp_path / "m.dia"
    save_checkpoint(path, _net())
    raw = path.read_bytes()
    (tmp_path / "short.dia").write_bytes(raw[:-10])
    (tmp_path / "magic.dia").write_bytes(b"XXXX" + raw[4:])
    for name in ("short.dia", "magic.dia"):
        with pytest.raises(ConfigError):
            load_checkpoint(tmp_path / name)


def test_trace_round_trip_and_kind_check(tmp_path):
    tr = HiddenStateTrace(np.random.default_rng(0).uniform(size=(4, 3, 2)), stage=1)
    save_trace(tmp_path / "t.dia", tr)
    back = load_trace(tmp_path / "t.dia")
    assert back.stage == 1 and np.array_equal(back.values, tr.values)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "t.dia")
    save_checkpoint(tmp_path / "m.dia", _net())
    with pytest.raises(ConfigError):
        load_trace(tmp_path / "m.dia")
