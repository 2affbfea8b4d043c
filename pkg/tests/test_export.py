"""Tests for report serialization and numerical archives."""

import json

import numpy as np
import pytest
import scipy.sparse as sp

from hmm_lod.config import OutputFormat
from hmm_lod.core.errors import CoefficientError
from hmm_lod.export.archive import (
    export_coo,
    export_solution,
    load_coefficient,
    save_coefficient,
    write_decay_profiles,
)
from hmm_lod.export.report import render, render_csv, write_report
from hmm_lod.models import (
    CSV_COLUMNS,
    DecayProfile,
    ExperimentReport,
    ReportRow,
    StudyKind,
)


@pytest.fixture
def report():
    rows = [
        ReportRow(
            study=StudyKind.LOCALIZATION,
            d=2,
            n=8,
            r=2,
            k=None,
            coeff="checkerboard",
            eps=0.0625,
            contrast=100.0,
            seed=42,
            energy_err=0.1,
            l2_err=1 / 3,
            remainder_norm=0.05,
        ),
        ReportRow(
            study=StudyKind.LOCALIZATION,
            d=2,
            n=8,
            r=2,
            k=4,
            coeff="checkerboard",
            eps=0.0625,
            contrast=100.0,
            seed=42,
            energy_err=0.11,
            extras={"corrector_diff_max": 1e-3},
        ),
    ]
    return ExperimentReport(study=StudyKind.LOCALIZATION, rows=rows, metadata={"seed": 42})


class TestReport:
    def test_csv_header(self, report):
        lines = render_csv(report).splitlines()
        assert lines[0] == (
            "study,d,n,r,k,coeff,eps,contrast,seed,energy_err,l2_err,"
            "remainder_norm,rate,decay_c,wall_ms"
        )
        assert tuple(lines[0].split(",")) == CSV_COLUMNS

    def test_csv_cells(self, report):
        lines = render_csv(report).splitlines()
        assert lines[1] == (
            "localization,2,8,2,global,checkerboard,0.0625,100.0,42,0.1,"
            f"{1 / 3!r},0.05,,,0.0"
        )
        assert lines[2].split(",")[4] == "4"
        assert lines[2].split(",")[10] == ""

    def test_floats_round_trip(self, report):
        cell = render_csv(report).splitlines()[1].split(",")[10]
        assert float(cell) == 1 / 3

    def test_render_is_deterministic(self, report):
        assert render_csv(report) == render_csv(report.model_copy(deep=True))

    def test_json(self, report):
        payload = json.loads(render(report, OutputFormat.JSON))
        assert payload["study"] == "localization"
        assert payload["rows"][0]["k"] is None
        assert payload["rows"][1]["extras"] == {"corrector_diff_max": 1e-3}
        assert payload["metadata"] == {"seed": 42}

    def test_write_report(self, report, tmp_path):
        path = tmp_path / "out" / "report.json"
        text = write_report(report, path, "json")
        assert path.read_text() == text

    def test_write_without_path(self, report):
        assert write_report(report, None) == render_csv(report)


class TestArchive:
    def test_coo_csv(self, tmp_path):
        matrix = sp.csr_matrix(np.array([[2.0, 0.0], [-1.0, 0.5]]))
        path = tmp_path / "A.csv"
        export_coo(matrix, path)
        data = np.loadtxt(path, delimiter=",")
        np.testing.assert_array_equal(data, [[0, 0, 2.0], [1, 0, -1.0], [1, 1, 0.5]])

    def test_coo_npz(self, checkerboard_1d, tmp_path):
        path = tmp_path / "A.npz"
        export_coo(checkerboard_1d.A, path)
        loaded = sp.load_npz(path)
        assert (loaded != checkerboard_1d.A.matrix).nnz == 0

    @pytest.mark.parametrize("name", ["coeff.npy", "coeff.txt"])
    def test_coefficient_archive(self, checkerboard_2d, tmp_path, name):
        path = tmp_path / name
        save_coefficient(checkerboard_2d.coeff, path)
        loaded = load_coefficient(checkerboard_2d.mesh, path, "checkerboard")
        np.testing.assert_array_equal(loaded.values, checkerboard_2d.coeff.values)
        assert loaded.contrast == pytest.approx(checkerboard_2d.coeff.contrast)

    def test_coefficient_for_other_mesh(self, checkerboard_1d, checkerboard_2d, tmp_path):
        path = tmp_path / "coeff.npy"
        save_coefficient(checkerboard_1d.coeff, path)
        with pytest.raises(CoefficientError):
            load_coefficient(checkerboard_2d.mesh, path)

    def test_solution(self, make_setup, tmp_path):
        s = make_setup(1, 2, 1)
        path = tmp_path / "u.csv"
        export_solution(s.mesh, np.array([1.0, 2.0, 3.0]), path)
        assert path.read_text().splitlines() == [
            "x,value",
            "0.0,0.0",
            "0.25,1.0",
            "0.5,2.0",
            "0.75,3.0",
            "1.0,0.0",
        ]

    def test_solution_wrong_length(self, make_setup, tmp_path):
        s = make_setup(1, 2, 1)
        with pytest.raises(ValueError):
            export_solution(s.mesh, np.ones(5), tmp_path / "u.csv")

    def test_decay_profiles_2d(self, tmp_path):
        path = tmp_path / "profiles.csv"
        profile = DecayProfile(
            n=8, node=20, coords=[0.5, 0.25], layers=[1, 2, 3], tails=[0.5, 0.125, 0.0]
        )
        write_decay_profiles([profile], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "n,node,x,y,layer,tail_norm"
        assert lines[1:] == [
            "8,20,0.5,0.25,1,0.5",
            "8,20,0.5,0.25,2,0.125",
            "8,20,0.5,0.25,3,0.0",
        ]
