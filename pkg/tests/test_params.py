import numpy as np
import pytest

from seqevade import autodiff as ad
from seqevade.params import AdamState, ParameterStore, adam_step


def make_store(rng):
    store = ParameterStore()
    store.add("w", rng.standard_normal((3, 4)))
    store.add("b", rng.standard_normal(4))
    store.add("scale", rng.standard_normal(()))
    return store


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    store = make_store(rng)
    path = tmp_path / "model.ckpt"
    store.save(path)
    loaded = ParameterStore.load(path)
    assert loaded.names() == store.names()
    for name, t in store.items():
        assert t.data.shape == loaded[name].data.shape
        assert np.array_equal(t.data, loaded[name].data)


def test_checkpoint_double_roundtrip_byte_identical(tmp_path):
    rng = np.random.default_rng(1)
    store = make_store(rng)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    store.save(p1)
    ParameterStore.load(p1).save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_header_is_parseable_text(tmp_path):
    store = ParameterStore()
    store.add("w", np.arange(6.0).reshape(2, 3))
    store.add("c", np.float64(7.0))
    path = tmp_path / "m.ckpt"
    store.save(path)
    raw = path.read_bytes()
    header, rest = raw.split(b"END", 1)
    lines = header.decode("ascii").splitlines()
    assert lines[0] == "TENSORSTORE 1"
    assert lines[1].split() == ["w", "2x3", "0"]
    assert lines[2].split() == ["c", "scalar", "48"]
    total = int(rest.split(b"\n", 1)[0])
    data = rest.split(b"\n", 1)[1]
    assert total == len(data) == 56
    # the data section is raw little-endian float64 at the stated offsets
    assert np.frombuffer(data, "<f8", count=6, offset=0).tolist() == [0, 1, 2, 3, 4, 5]
    assert np.frombuffer(data, "<f8", count=1, offset=48)[0] == 7.0


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTASTORE\njunk")
    with pytest.raises(ValueError, match="tensor store"):
        ParameterStore.load(path)


def test_duplicate_and_bad_names_rejected():
    store = ParameterStore()
    store.add("w", np.zeros(2))
    with pytest.raises(ValueError, match="already exists"):
        store.add("w", np.zeros(2))
    with pytest.raises(ValueError, match="whitespace"):
        store.add("bad name", np.zeros(2))


def test_adam_zero_grads_keep_params_increment_step():
    rng = np.random.default_rng(2)
    store = make_store(rng)
    before = store.state_copy()
    state = AdamState(store, lr=0.1)
    adam_step(store, {n: np.zeros_like(p.data) for n, p in store.items()}, state)
    assert state.t == 1
    for name, t in store.items():
        assert np.array_equal(t.data, before[name])


def test_adam_first_step_matches_hand_formulas():
    store = ParameterStore()
    store.add("x", np.array(1.0))
    state = AdamState(store, lr=0.1)
    adam_step(store, {"x": np.array(1.0)}, state)
    # hand evaluation at t=1, g=1: m=0.1, v=0.001, m_hat=1, v_hat=1
    # x <- 1 - 0.1 * 1 / (sqrt(1) + 1e-8)
    expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8)
    assert abs(float(store["x"].data) - expected) < 1e-15
    assert abs(float(store["x"].data) - 0.9) < 1e-7


def test_adam_missing_grad_key_is_hard_error():
    store = ParameterStore()
    store.add("x", np.zeros(2))
    state = AdamState(store)
    with pytest.raises(KeyError, match="x"):
        adam_step(store, {}, state)


def test_adam_two_steps_bit_identical_across_runs():
    def run():
        rng = np.random.default_rng(5)
        store = make_store(rng)
        state = AdamState(store, lr=0.01)
        for _ in range(2):
            loss = ad.reduce_sum(ad.mul(store["w"], store["w"]))
            loss = ad.add(loss, ad.reduce_sum(ad.mul(store["b"], store["b"])))
            store.zero_grads()
            ad.backward(loss)
            adam_step(store, store.grads(), state)
        return store.state_copy()

    s1, s2 = run(), run()
    for name in s1:
        assert np.array_equal(s1[name], s2[name])


def test_adam_update_rebinds_data_keeping_graph_values():
    store = ParameterStore()
    w = store.add("w", np.array([2.0]))
    out = ad.mul(w, w)
    forward_value = out.parents[0].data
    state = AdamState(store, lr=0.5)
    ad.backward(ad.reduce_sum(out))
    adam_step(store, store.grads(), state)
    # graph still references the pre-update array
    assert np.array_equal(forward_value, [2.0])
    assert not np.array_equal(store["w"].data, [2.0])
