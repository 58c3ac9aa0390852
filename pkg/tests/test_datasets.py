import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gossip_langevin.datasets import (
    BREAST_CANCER,
    TELESCOPE,
    CsvSchema,
    Partition,
    load_csv,
    partition_shards,
    read_prepared_csv,
    route_synthetic,
    split_and_partition,
    stack_shards,
    standardize,
    write_dataset_csv,
)
from gossip_langevin.errors import IntegrityError, ValidationError
from gossip_langevin.numerics import RngStream

from conftest import write_breast_cancer_like, write_telescope_like


class TestLoadCsv:
    def test_breast_cancer_shape(self, tmp_path):
        p = tmp_path / "wdbc.data"
        write_breast_cancer_like(p)
        ds = load_csv(p, BREAST_CANCER)
        assert ds.n == 569 and ds.d == 30 and ds.rejected == 0
        assert set(np.unique(ds.y)) <= {0.0, 1.0}

    def test_telescope_shape(self, tmp_path):
        p = tmp_path / "magic04.data"
        write_telescope_like(p)
        ds = load_csv(p, TELESCOPE)
        assert ds.n == 19020 and ds.d == 10

    def test_label_tokens(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("1.0,2.0,g\n3.0,4.0,h\n")
        ds = load_csv(p, CsvSchema(label_column=2, positive_label="g", negative_label="h", header=False))
        np.testing.assert_array_equal(ds.y, [1.0, 0.0])
        np.testing.assert_array_equal(ds.X, [[1.0, 2.0], [3.0, 4.0]])

    def test_malformed_row_rejected(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,b,label\n1,2,1\n3,oops,0\n5,6,0\n" + "".join(f"{i},{i},1\n" for i in range(20)))
        ds = load_csv(p, CsvSchema(label_column="label"))
        assert ds.rejected == 1 and ds.n == 22 and ds.rows_read == 23

    def test_three_rows_one_bad(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,label\n1,1\nx,0\n3,0\n")
        ds = load_csv(p, CsvSchema(label_column="label"), max_reject_fraction=0.5)
        assert ds.n == 2 and ds.rejected == 1
        np.testing.assert_array_equal(ds.X[:, 0], [1.0, 3.0])
        # one bad row in three is over the default limit
        with pytest.raises(ValidationError):
            load_csv(p, CsvSchema(label_column="label"))

    def test_too_many_rejects(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,label\n1,1\nnan?,0\nbad,1\n4,0\n")
        with pytest.raises(ValidationError, match="rejected"):
            load_csv(p, CsvSchema(label_column="label"))

    def test_missing_label_column(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValidationError):
            load_csv(p, CsvSchema(label_column="label"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError):
            load_csv(tmp_path / "nope.csv", TELESCOPE)

    def test_unknown_label_token_rejected(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("".join(f"{i},g\n" for i in range(20)) + "5,q\n")
        ds = load_csv(p, CsvSchema(label_column=1, positive_label="g", negative_label="h", header=False))
        assert ds.rejected == 1 and ds.n == 20

    def test_schema_round_trip(self):
        assert CsvSchema.from_dict(BREAST_CANCER.to_dict()) == BREAST_CANCER


class TestStandardize:
    def test_moments(self, rng):
        from gossip_langevin.datasets import TabularDataset

        X = rng.normal(5, 3, size=(200, 4))
        X[:, 2] = 7.0
        ds = standardize(TabularDataset(X, np.zeros(200), ("a", "b", "c", "d")))
        assert np.all(np.abs(ds.X.mean(axis=0)) <= 1e-8)
        np.testing.assert_allclose(ds.X.std(axis=0)[[0, 1, 3]], 1.0, atol=1e-8)
        np.testing.assert_array_equal(ds.X[:, 2], 0.0)
        np.testing.assert_allclose(ds.normalization.invert(ds.X), X, rtol=1e-10)


class TestPartition:
    def test_hundred_rows_six_agents(self):
        p = split_and_partition(100, 0.1, 6, RngStream(0))
        assert p.shard_sizes() == [15] * 6 and len(p.test) == 10

    def test_single_agent(self):
        p = split_and_partition(50, 0.2, 1, RngStream(0))
        np.testing.assert_array_equal(p.shards[0], p.train)

    def test_same_seed(self):
        a = split_and_partition(77, 0.1, 4, RngStream(9))
        b = split_and_partition(77, 0.1, 4, RngStream(9))
        assert a.to_dict() == b.to_dict()

    def test_telescope_split(self):
        p = split_and_partition(19020, 0.1, 6, RngStream(1))
        assert len(p.train) == 17118 and p.shard_sizes() == [2853] * 6

    def test_breast_cancer_no_split(self):
        p = split_and_partition(569, 0.0, 6, RngStream(1))
        assert sorted(p.shard_sizes(), reverse=True) == [95, 95, 95, 95, 95, 94]

    def test_too_many_agents(self):
        with pytest.raises(ValidationError):
            split_and_partition(5, 0.0, 6, RngStream(0))

    def test_bad_fraction(self):
        with pytest.raises(ValidationError):
            split_and_partition(5, 1.0, 1, RngStream(0))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 400), st.floats(0, 0.9), st.integers(1, 12), st.integers(0, 1000))
    def test_invariants(self, n, frac, agents, seed):
        n_train = n - int(round(frac * n))
        if agents > n_train:
            with pytest.raises(ValidationError):
                split_and_partition(n, frac, agents, RngStream(seed))
            return
        p = split_and_partition(n, frac, agents, RngStream(seed))
        joined = np.concatenate(p.shards)
        assert len(np.unique(joined)) == len(joined)
        np.testing.assert_array_equal(np.sort(joined), np.sort(p.train))
        assert not set(p.test) & set(p.train)
        assert max(p.shard_sizes()) - min(p.shard_sizes()) <= 1

    def test_json_round_trip(self, tmp_path):
        p = split_and_partition(40, 0.25, 3, RngStream(2))
        path = tmp_path / "part.json"
        p.save(path)
        q = Partition.load(path)
        assert q.to_dict() == p.to_dict()

    def test_tampered_manifest(self, tmp_path):
        p = split_and_partition(40, 0.0, 3, RngStream(2))
        doc = p.to_dict()
        doc["shards"][0] = doc["shards"][0][:-1]
        path = tmp_path / "part.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(IntegrityError):
            Partition.load(path)

    def test_unreadable_manifest(self, tmp_path):
        path = tmp_path / "part.json"
        path.write_text("{not json")
        with pytest.raises(IntegrityError):
            Partition.load(path)


class TestRouting:
    def test_route_synthetic_covers_data(self, rng):
        X = rng.normal(size=(23, 2))
        y = rng.normal(size=23)
        shards = route_synthetic(X, y, 4, RngStream(0))
        Xs, ys = stack_shards(shards)
        order = np.lexsort(Xs.T)
        ref = np.lexsort(X.T)
        np.testing.assert_array_equal(Xs[order], X[ref])
        np.testing.assert_array_equal(ys[order], y[ref])

    def test_prepared_csv_is_lossless(self, tmp_path, rng):
        from gossip_langevin.datasets import TabularDataset

        ds = TabularDataset(rng.normal(size=(10, 3)) / 7, (rng.random(10) < 0.5).astype(float), ("a", "b", "c"))
        path = tmp_path / "d.csv"
        write_dataset_csv(path, ds)
        back = read_prepared_csv(path)
        assert back.X.tobytes() == ds.X.tobytes() and back.y.tobytes() == ds.y.tobytes()
        assert back.feature_names == ds.feature_names

    def test_partition_shards(self, rng):
        X = rng.normal(size=(12, 2))
        y = np.arange(12.0)
        p = split_and_partition(12, 0.25, 3, RngStream(4))
        shards = partition_shards(X, y, p)
        for s, idx in zip(shards, p.shards):
            np.testing.assert_array_equal(s.y, idx.astype(float))
