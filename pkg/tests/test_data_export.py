"""Unit tests for artifact export."""
import json

import numpy as np
import pandas as pd
import pytest

from data_export import (
    DataExporter, auc_frame, cleaning_frame, features_frame, read_marginal, spectra_frame, trace_frame,
)
from error_handling import ArtifactError
from funcdata import CleaningPolicy, clean
from inference import PredictionStudy
from optimize import coordinate_grid_search


class TestDataExporter:
    """Test class for the artifact writer."""

    @pytest.mark.unit
    def test_csv_header_and_comments(self, exporter):
        """Test CSVs start with the config hash and seed, then any comments."""
        path = exporter.write_csv("values.csv", pd.DataFrame({"a": [1, 2]}), comments=["note=x"])

        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "# config_hash=abc123 seed=7"
        assert lines[1] == "# note=x"
        assert lines[2:] == ["a", "1", "2"]
        assert pd.read_csv(path, comment="#")["a"].tolist() == [1, 2]

    @pytest.mark.unit
    def test_json_meta_and_non_finite_values(self, exporter):
        """Test JSON gets a meta block and NaN or inf become null."""
        path = exporter.write_json("fit.json", {
            "loglik": np.float64(-12.5), "pvalues": np.array([0.1, np.nan]), "count": np.int64(3),
            "flag": np.bool_(True), "upper": float("inf"),
        })

        document = json.loads(path.read_text(encoding="utf-8"))
        assert document["meta"] == {"config_hash": "abc123", "seed": 7}
        assert document["loglik"] == -12.5
        assert document["pvalues"] == [0.1, None]
        assert document["count"] == 3
        assert document["flag"] is True
        assert document["upper"] is None

    @pytest.mark.unit
    def test_text_starts_with_header(self, exporter):
        """Test text artifacts carry the same header line."""
        path = exporter.write_text("simulation.cfg", "seed=7\n")

        assert path.read_text(encoding="utf-8") == "# config_hash=abc123 seed=7\nseed=7\n"

    @pytest.mark.unit
    def test_missing_seed_written_as_none(self, tmp_path):
        """Test an unseeded run says so in the header."""
        assert DataExporter(tmp_path, "h").header == "# config_hash=h seed=none"

    @pytest.mark.unit
    def test_discard_removes_written_files(self, exporter):
        """Test a failed command can remove its partial output."""
        first = exporter.write_csv("a.csv", pd.DataFrame({"a": [1]}))
        second = exporter.write_json("b.json", {})

        exporter.discard()

        assert not first.exists() and not second.exists()
        assert exporter.written == []

    @pytest.mark.unit
    def test_unwritable_directory(self, tmp_path):
        """Test an output path below a regular file is an artifact error."""
        blocker = tmp_path / "blocker"
        blocker.write_text("", encoding="utf-8")

        with pytest.raises(ArtifactError):
            DataExporter(blocker / "out", "h").write_csv("a.csv", pd.DataFrame({"a": [1]}))

    @pytest.mark.unit
    def test_cleaning_report(self, exporter, make_trajectory):
        """Test the cleaning report lists status and reason per subject."""
        policy = CleaningPolicy(min_duration=10.0)
        records = [clean(make_trajectory("S1"), policy),
                   clean(make_trajectory("S2", values=(5.0, 5.0, 5.0)), policy)]

        path = exporter.export_cleaning_report_csv(records)

        frame = pd.read_csv(path, comment="#", keep_default_na=False)
        assert frame.to_dict("records") == [
            {"subject_id": "S1", "status": "kept", "reason": ""},
            {"subject_id": "S2", "status": "rejected", "reason": "empty"},
        ]


class TestMarginalFile:
    """Test class for the marginal density file."""

    @pytest.mark.unit
    def test_round_trip(self, exporter, freq_marginal):
        """Test the marginal reads back exactly, bandwidth included."""
        path = exporter.export_marginal_csv(freq_marginal)

        model = read_marginal(path)

        np.testing.assert_array_equal(model.grid, freq_marginal.grid)
        np.testing.assert_array_equal(model.cdf, freq_marginal.cdf)
        assert model.bandwidth == freq_marginal.bandwidth

    @pytest.mark.unit
    def test_missing_bandwidth(self, write_csv):
        """Test a marginal file without its bandwidth line is refused."""
        path = write_csv("marginal.csv", "x,pdf,cdf\n0,1,0\n1,1,1\n")

        with pytest.raises(ArtifactError):
            read_marginal(path)

    @pytest.mark.unit
    def test_missing_file(self, tmp_path):
        """Test a missing file is an artifact error."""
        with pytest.raises(ArtifactError):
            read_marginal(tmp_path / "absent.csv")


class TestFrames:
    """Test class for artifact table layouts."""

    @pytest.mark.unit
    def test_features_frame(self):
        """Test subject identifiers lead the feature columns."""
        frame = features_frame(["A", "B"], np.eye(2), ["wL1", "wR1"])

        assert list(frame.columns) == ["subject_id", "wL1", "wR1"]
        assert frame.loc[1, "wR1"] == 1.0

    @pytest.mark.unit
    def test_trace_frame(self):
        """Test one row per evaluated candidate with the chosen flag as 0/1."""
        _, _, trace = coordinate_grid_search(lambda params: -params.b_left[0], p=1, levels=1)

        frame = trace_frame(trace)

        assert list(frame.columns) == ["level", "feature", "side", "candidate", "b_value", "loglik", "chosen"]
        assert len(frame) == len(trace.rows)
        assert frame["chosen"].sum() == 2

    @pytest.mark.unit
    def test_long_spectrum_layout(self):
        """Test spectra are written one row per subject and frequency."""
        class Spectra:
            subject_ids = ("A", "B")
            freq_grid = np.array([0.1, 0.2, 0.3])
            power = np.arange(6.0).reshape(2, 3)

        frame = spectra_frame(Spectra)

        assert frame["subject_id"].tolist() == ["A"] * 3 + ["B"] * 3
        assert frame["power"].tolist() == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]

    @pytest.mark.unit
    def test_auc_and_cleaning_frames(self):
        """Test the AUC table columns and an empty cleaning report."""
        assert list(auc_frame(PredictionStudy(rows=[(1, "xwf", 0.7)])).columns) == ["split", "model", "auc"]
        assert cleaning_frame([]).empty
