"""Persistence tests: model document round trips and CSV parsing errors."""

import os

import numpy as np
import pytest

from bllim import serialize
from bllim.errors import DataError

from conftest import random_params


class TestModelRoundTrip:
    def test_serialize_deserialize_serialize_byte_identical(self, tmp_path, rng):
        theta = random_params(3, 2, 5, rng)
        report = {"candidates": [{"rank": 0, "gamma": 1.25}], "n_clusters": 3}
        path = tmp_path / "model.json"
        serialize.save_model(str(path), theta, report)
        first = path.read_bytes()
        loaded, loaded_report = serialize.load_model(str(path))
        serialize.save_model(str(path), loaded, loaded_report)
        assert path.read_bytes() == first

    def test_parameters_survive_exactly(self, tmp_path, rng):
        theta = random_params(2, 1, 4, rng)
        path = tmp_path / "model.json"
        serialize.save_model(str(path), theta)
        loaded, report = serialize.load_model(str(path))
        assert report is None
        np.testing.assert_array_equal(loaded.coeffs, theta.coeffs)
        np.testing.assert_array_equal(loaded.residual_covs, theta.residual_covs)
        assert loaded.structure == theta.structure

    def test_unknown_version_rejected(self, tmp_path, rng):
        theta = random_params(1, 1, 2, rng)
        doc = serialize.model_to_dict(theta)
        doc["format_version"] = 99
        path = tmp_path / "model.json"
        path.write_text(serialize.canonical_json(doc))
        with pytest.raises(DataError, match="version"):
            serialize.load_model(str(path))

    def test_malformed_json_locates_error(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("{\n  broken\n}")
        with pytest.raises(DataError) as info:
            serialize.load_model(str(path))
        assert info.value.line is not None


class TestCsv:
    def test_write_read_round_trip(self, tmp_path, rng):
        matrix = rng.standard_normal((7, 3))
        path = tmp_path / "m.csv"
        serialize.write_matrix_csv(str(path), matrix, ["a", "b", "c"])
        loaded, header = serialize.read_matrix_csv(str(path))
        assert header == ["a", "b", "c"]
        np.testing.assert_array_equal(loaded, matrix)

    def test_ragged_row_located(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n3\n")
        with pytest.raises(DataError) as info:
            serialize.read_matrix_csv(str(path))
        assert info.value.line == 3
        assert "ragged" in str(info.value)

    def test_non_numeric_cell_located(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n3,oops\n")
        with pytest.raises(DataError) as info:
            serialize.read_matrix_csv(str(path))
        assert info.value.line == 3 and info.value.column == 2

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DataError, match="empty"):
            serialize.read_matrix_csv(str(path))

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        path = tmp_path / "out.txt"
        serialize.atomic_write_text(str(path), "hello\n")
        assert path.read_text() == "hello\n"
        assert os.listdir(tmp_path) == ["out.txt"]
