import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from kfmem import weights as W

finite = st.floats(-1e4, 1e4, allow_nan=False, width=32)


def paired_maps(max_entries=4):
    """Two maps with the same names and lengths."""
    def build(shape):
        names, lens = shape
        arrs = [hnp.arrays(np.float32, n, elements=finite) for n in lens]
        return st.tuples(st.tuples(*arrs), st.tuples(*arrs)).map(
            lambda ab: (dict(zip(names, ab[0])), dict(zip(names, ab[1]))))
    shape = st.lists(st.text("abcdefgh._", min_size=1, max_size=10), min_size=1, max_size=max_entries, unique=True) \
        .flatmap(lambda names: st.tuples(st.just(names), st.lists(st.integers(0, 20), min_size=len(names), max_size=len(names))))
    return shape.flatmap(build)


def oracle(pre, ft, a):
    return {k: [(1 - a) * float(x) + a * float(y) for x, y in zip(pre[k], ft[k])] for k in pre}


def test_example_value():
    out = W.merge({"w": [1.0]}, {"w": [2.0]}, 0.8)
    assert abs(float(out["w"][0]) - 1.8) < 1e-6
    assert out["w"].dtype == np.float32


@settings(max_examples=100, deadline=None)
@given(paired_maps(), st.sampled_from([0.0, 0.8, 1.0]))
def test_matches_elementwise_oracle(maps, a):
    pre, ft = maps
    got = W.merge(pre, ft, a)
    want = oracle(pre, ft, a)
    for k in pre:
        np.testing.assert_allclose(got[k], want[k], rtol=1e-6, atol=1e-6)
    for k in pre:
        if a == 0.0:
            assert got[k].tobytes() == np.asarray(pre[k], np.float32).tobytes()
        if a == 1.0:
            assert got[k].tobytes() == np.asarray(ft[k], np.float32).tobytes()


@settings(max_examples=100, deadline=None)
@given(paired_maps(), st.floats(0, 1), st.floats(0, 1))
def test_convex_and_linear(maps, a1, a2):
    pre, ft = maps
    m1, m2 = W.merge(pre, ft, a1), W.merge(pre, ft, a2)
    mid = W.merge(pre, ft, (a1 + a2) / 2)
    for k in pre:
        lo, hi = np.minimum(pre[k], ft[k]), np.maximum(pre[k], ft[k])
        assert np.all(lo <= m1[k]) and np.all(m1[k] <= hi)
        scale = 1.0 + np.maximum(np.abs(pre[k]), np.abs(ft[k]))
        assert np.all(np.abs(mid[k] - (m1[k].astype(np.float64) + m2[k]) / 2) <= 1e-6 * scale)


@settings(max_examples=50, deadline=None)
@given(paired_maps(), st.floats(0, 1))
def test_self_merge_is_identity(maps, a):
    pre, _ = maps
    out = W.merge(pre, pre, a)
    for k in pre:
        assert out[k].tobytes() == np.asarray(pre[k], np.float32).tobytes()


def test_schema_mismatch():
    with pytest.raises(W.SchemaMismatch):
        W.merge({"a": [1.0]}, {"b": [1.0]}, 0.5)
    with pytest.raises(W.SchemaMismatch):
        W.merge({"a": [1.0]}, {"a": [1.0, 2.0]}, 0.5)
    with pytest.raises(W.NonFiniteInput):
        W.merge({"a": [np.nan]}, {"a": [1.0]}, 0.5)
    with pytest.raises(ValueError):
        W.merge({"a": [1.0]}, {"a": [1.0]}, 1.5)


def test_round_trip_random_maps(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(100):
        wm = {f"layer{j}.w": rng.standard_normal(rng.integers(0, 50)).astype(np.float32)
              for j in range(rng.integers(1, 6))}
        path = tmp_path / f"{i}.wmap"
        W.save(wm, path)
        back = W.load(path)
        assert list(back) == list(wm)
        for k in wm:
            assert back[k].tobytes() == wm[k].tobytes()
        assert W.dumps(back) == path.read_bytes()


def test_layout_is_fixed():
    assert W.dumps({"ab": [1.0]}) == b"WMAP" + b"\x01\x00\x00\x00" + b"\x02\x00ab" + \
        b"\x01" + b"\x00" * 7 + b"\x00\x00\x80\x3f"


def test_corrupt_inputs(tmp_path):
    good = W.dumps({"a": [1.0, 2.0]})
    for bad in (good[:-1], b"WMAQ" + good[4:], good + b"\x00", b"WMAP\x00\x00\x00\x00"):
        with pytest.raises(W.CorruptFile):
            W.loads(bad)
    with pytest.raises(W.CorruptFile):
        W.save({}, tmp_path / "empty.wmap")
    with pytest.raises(W.IoFailure):
        W.load(tmp_path / "missing.wmap")
    with pytest.raises(W.IoFailure):
        W.save({"a": [1.0]}, tmp_path / "no" / "dir" / "x.wmap")
