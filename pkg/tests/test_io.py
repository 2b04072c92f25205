import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polrestore import io as pio
from polrestore import network as net
from polrestore.polar import PolarQuad

from conftest import TINY_NET


def random_quad(seed=0, c=1, h=6, w=8):
    return PolarQuad(np.random.default_rng(seed).uniform(0, 1, (4, c, h, w)).astype(np.float32))


def test_pquad_size_and_header():
    buf = pio.encode_pquad(random_quad(h=2, w=2))
    assert len(buf) == 16 + 4 * 4 * 2 * 2 == 80
    assert buf[:4] == b"PQD1"
    assert struct.unpack("<3I", buf[4:16]) == (2, 2, 1)


def test_pquad_plane_order_on_disk():
    planes = np.stack([np.full((1, 2, 2), v, dtype=np.float32) for v in (0.0, 45.0, 90.0, 135.0)])
    body = np.frombuffer(pio.encode_pquad(PolarQuad(planes)), "<f4", offset=16)
    np.testing.assert_array_equal(body[::4], [0, 45, 90, 135])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([1, 3]), st.integers(1, 9), st.integers(1, 9))
def test_pquad_round_trip_is_bit_exact(seed, c, h, w):
    q = random_quad(seed, c, h, w)
    back = pio.decode_pquad(pio.encode_pquad(q))
    assert back.planes.dtype == np.float32
    assert back.planes.tobytes() == q.planes.tobytes()


def test_pquad_file_round_trip(tmp_path):
    q = random_quad(3, c=3)
    pio.write_pquad(tmp_path / "a.pquad", q)
    assert pio.read_pquad(tmp_path / "a.pquad").planes.tobytes() == q.planes.tobytes()
    assert [p.name for p in tmp_path.iterdir()] == ["a.pquad"]   # no temp file left behind


@pytest.mark.parametrize("mutate", [
    lambda b: b"XQD1" + b[4:],
    lambda b: b[:10],
    lambda b: b[:-1],
    lambda b: b + b"\0\0\0\0",
    lambda b: b[:12] + struct.pack("<I", 2) + b[16:],
    lambda b: b[:4] + struct.pack("<3I", 0, 2, 1) + b[16:],
])
def test_malformed_pquad_is_rejected(mutate):
    with pytest.raises(pio.FormatError):
        pio.decode_pquad(mutate(pio.encode_pquad(random_quad(h=2, w=2))))


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    params = net.init_params(TINY_NET, seed=5)
    pio.write_checkpoint(tmp_path / "m.ckpt", params)
    arrays = pio.read_checkpoint(tmp_path / "m.ckpt")
    assert list(arrays) == list(params)
    for name, p in params.items():
        assert arrays[name].tobytes() == p.data.astype("<f4").tobytes()
    fresh = pio.load_into(net.init_params(TINY_NET, seed=9), arrays)
    assert all(np.array_equal(fresh[k].data, params[k].data) for k in params)
    assert pio.encode_checkpoint(fresh) == pio.encode_checkpoint(params)


def test_malformed_checkpoints():
    buf = pio.encode_checkpoint(net.init_params(TINY_NET))
    for bad in (b"PCKPT0" + buf[6:], buf[:-3], buf[:6] + struct.pack("<I", 10**6) + buf[10:]):
        with pytest.raises(pio.FormatError):
            pio.decode_checkpoint(bad)


def test_checkpoint_config_mismatch():
    arrays = pio.decode_checkpoint(pio.encode_checkpoint(net.init_params(TINY_NET)))
    other = net.init_params(net.NetworkConfig(base_channels=8, unit_counts=(1,) * 6, head_counts=(1,) * 6))
    with pytest.raises(pio.FormatError):
        pio.load_into(other, arrays)
    arrays.pop(next(iter(arrays)))
    with pytest.raises(pio.FormatError):
        pio.load_into(net.init_params(TINY_NET), arrays)


@pytest.mark.parametrize("c", [1, 3])
def test_png16_round_trip_within_quantization(tmp_path, c):
    q = random_quad(4, c=c, h=8, w=12)
    path = tmp_path / "q.png"
    pio.write_quad(path, q)
    back = pio.read_quad(path, channels=c)
    assert back.planes.shape == q.planes.shape
    assert np.abs(back.planes - q.planes).max() <= 1 / 131070 + 1e-7


def test_png16_tile_layout():
    planes = np.stack([np.full((1, 2, 2), v / 65535, dtype=np.float32) for v in (10, 20, 30, 40)])
    img = pio.quad_to_png16_array(PolarQuad(planes))
    np.testing.assert_array_equal(img[::2, ::2], [[30, 20], [40, 10]])


def test_png16_rejects_bad_shapes(tmp_path):
    with pytest.raises(pio.FormatError):
        pio.png16_array_to_quad(np.zeros((8, 4), np.uint16), channels=3)
    (tmp_path / "junk.png").write_bytes(b"not a png")
    with pytest.raises(pio.FormatError):
        pio.read_quad(tmp_path / "junk.png")
