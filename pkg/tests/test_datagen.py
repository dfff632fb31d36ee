import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sigsurrogate.datagen import (
    Dataset,
    DatasetFormatError,
    LabeledRecord,
    generate_dataset,
    prefix_split,
    read_dataset,
    record_setting,
    write_dataset,
)
from sigsurrogate.microsim import SimConfig, simulate
from sigsurrogate.netmodel import build_grid_network

FAST = SimConfig(horizon_s=400, warmup_s=100)


@pytest.fixture(scope="module")
def net():
    return build_grid_network(3, 7, 20, 0.15)


@pytest.fixture(scope="module")
def small(net):
    return generate_dataset(net, FAST, 120, seed=7)


def test_single_record(net):
    ds = generate_dataset(net, FAST, 1, seed=1)
    assert len(ds) == 1 and ds[0].wait_s >= 0


def test_generation_is_deterministic(net, small, tmp_path):
    again = generate_dataset(net, FAST, 120, seed=7, workers=3)
    assert again == small
    write_dataset(small, tmp_path / "a.txt")
    write_dataset(again, tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_generation_is_extendable(net, small):
    # record i depends only on (seed, i)
    assert generate_dataset(net, FAST, 30, seed=7) == small[:30]


def test_labels_match_fresh_simulation(net, small):
    rng = np.random.default_rng(0)
    for i in rng.choice(len(small), 50, replace=False):
        assert simulate(net, small.settings[i], FAST).total_red_wait_s == small.waits[i]
        assert np.array_equal(small.settings[i], record_setting(21, 7, i))


def test_labels_vary(small):
    assert small.waits.mean() > 0 and small.waits.var() > 0


def test_rejects_nonpositive_n(net):
    with pytest.raises(ValueError):
        generate_dataset(net, FAST, 0, seed=1)


def test_prefix_split_sizes_and_order():
    ds = Dataset(np.arange(20).reshape(10, 2) % 120, np.arange(10.0))
    sp = prefix_split(ds, 8)
    assert (len(sp.train), len(sp.test)) == (8, 2)
    assert sp.train.concat(sp.test) == ds


def test_prefix_split_desk_sizes():
    n = 105336
    ds = Dataset(np.zeros((n, 1), dtype=np.int64), np.zeros(n))
    assert len(prefix_split(ds, 85336).test) == 20000


@pytest.mark.parametrize("k", [0, 10, 11, -1])
def test_prefix_split_range(k):
    ds = Dataset(np.zeros((10, 2), dtype=np.int64), np.zeros(10))
    with pytest.raises(ValueError):
        prefix_split(ds, k)


def test_line_format(tmp_path):
    p = tmp_path / "d.txt"
    write_dataset(Dataset.from_records([LabeledRecord((3, 119), 42.0)]), p)
    assert p.read_text() == "3 119 42.0\n"


def test_round_trip_generated(small, tmp_path):
    p = tmp_path / "d.txt"
    write_dataset(small, p)
    assert read_dataset(p) == small
    assert read_dataset(p, 21) == small


@given(
    st.integers(1, 6).flatmap(
        lambda C: st.lists(
            st.tuples(
                st.lists(st.integers(0, 119), min_size=C, max_size=C),
                st.floats(0, 1e9, allow_nan=False, allow_infinity=False),
            ),
            min_size=1, max_size=20,
        )
    )
)
@settings(max_examples=60, deadline=None)
def test_round_trip_property(tmp_path_factory, rows):
    ds = Dataset([r[0] for r in rows], [r[1] for r in rows])
    p = tmp_path_factory.mktemp("rt") / "d.txt"
    write_dataset(ds, p)
    assert read_dataset(p) == ds


def test_missing_label_names_line(tmp_path):
    p = tmp_path / "d.txt"
    good = " ".join(["1"] * 21) + " 5.0\n"
    p.write_text(good + " ".join(["1"] * 21) + "\n")
    with pytest.raises(DatasetFormatError, match=r"d\.txt:2"):
        read_dataset(p, 21)


def test_inconsistent_width(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("1 2 3.0\n1 2 3 4.0\n")
    with pytest.raises(DatasetFormatError, match=":2"):
        read_dataset(p)


def test_malformed_field(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("1 x 3.0\n")
    with pytest.raises(DatasetFormatError, match=":1"):
        read_dataset(p)


def test_out_of_range_offset(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("1 120 3.0\n")
    with pytest.raises(DatasetFormatError):
        read_dataset(p)


def test_integer_labels_accepted(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("1 2 30\n")
    assert read_dataset(p).waits[0] == 30.0


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "nope.txt")


def test_negative_label_rejected():
    with pytest.raises(ValueError):
        LabeledRecord((1,), -1.0)
