import numpy as np
import pytest

from vcc.errors import CorruptFileError, FormatError, IntegrityError
from vcc.nn import GRU, Adam, CausalConv, Sequential, load_checkpoint, mlp, param_hash, save_checkpoint
from vcc.nn.checkpoint import MAGIC


def trained_net(seed=0):
    rng = np.random.default_rng(seed)
    net = Sequential([CausalConv(2, 4, dilation=2, rng=rng), GRU(4, 3, rng)])
    opt = Adam(net.params(), lr=1e-2)
    x = rng.standard_normal((8, 2)).astype(np.float32)
    for _ in range(3):
        y, cache = net.forward(x)
        net.backward(cache, y)
        opt.step()
    return net, opt


def test_roundtrip_values_and_state(tmp_path):
    net, opt = trained_net()
    path = tmp_path / "m.vckp"
    digest = save_checkpoint(path, net.params(), net.layer_table(), {"note": "x"}, step=opt.t)
    assert digest == param_hash(net.params())
    ck = load_checkpoint(path)
    assert [s.kind for s in ck.layers] == ["causal_conv", "gru_cell"]
    assert ck.layers[0].dilation == 2
    assert ck.meta["note"] == "x"
    fresh, _ = trained_net(seed=5)
    assert ck.load_into(fresh.params()) == 3
    for a, b in zip(net.params(), fresh.params()):
        np.testing.assert_array_equal(a.value, b.value)
        np.testing.assert_array_equal(a.adam_m, b.adam_m)
        np.testing.assert_array_equal(a.adam_v, b.adam_v)


def test_without_state(tmp_path):
    net = mlp([3, 4, 2])
    save_checkpoint(tmp_path / "m.vckp", net.params())
    ck = load_checkpoint(tmp_path / "m.vckp")
    assert ck.step == 0 and not ck.adam_m
    other = mlp([3, 4, 2], rng=np.random.default_rng(9))
    assert ck.load_into(other.params()) == 0
    assert param_hash(other.params()) == ck.sha256


def test_hash_changes_with_values():
    net = mlp([3, 4, 2])
    h = param_hash(net.params())
    net.params()[0].value[0, 0] += 1e-3
    assert param_hash(net.params()) != h


def test_bad_magic(tmp_path):
    (tmp_path / "x.vckp").write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "x.vckp")


def test_bad_version(tmp_path):
    net = mlp([2, 2])
    path = tmp_path / "m.vckp"
    save_checkpoint(path, net.params())
    data = bytearray(path.read_bytes())
    data[4] = 9
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        load_checkpoint(path)


@pytest.mark.parametrize("cut", [10, 40, -60, -1])
def test_truncated(tmp_path, cut):
    net, opt = trained_net()
    path = tmp_path / "m.vckp"
    save_checkpoint(path, net.params(), net.layer_table(), step=opt.t)
    path.write_bytes(path.read_bytes()[:cut])
    with pytest.raises((CorruptFileError, IntegrityError)):
        load_checkpoint(path)


def test_flipped_parameter_byte(tmp_path):
    net = mlp([3, 4, 2])
    path = tmp_path / "m.vckp"
    save_checkpoint(path, net.params())
    data = bytearray(path.read_bytes())
    data[-40] ^= 0xFF  # inside the parameter blob, before the 32-byte digest and state flag
    path.write_bytes(bytes(data))
    with pytest.raises(IntegrityError):
        load_checkpoint(path)


def test_architecture_mismatch(tmp_path):
    save_checkpoint(tmp_path / "m.vckp", mlp([3, 4, 2]).params())
    ck = load_checkpoint(tmp_path / "m.vckp")
    with pytest.raises(IntegrityError):
        ck.load_into(mlp([3, 5, 2]).params())
    with pytest.raises(IntegrityError):
        ck.load_into(mlp([3, 4, 4, 2]).params())


def test_starts_with_magic(tmp_path):
    save_checkpoint(tmp_path / "m.vckp", mlp([2, 2]).params())
    assert (tmp_path / "m.vckp").read_bytes()[:4] == MAGIC
    assert not list(tmp_path.glob("*.tmp"))
