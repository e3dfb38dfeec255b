"""Salience scoring, ROI naming, top-fraction selection, report files."""
import csv
import json

import numpy as np
import pytest

from stgsl import interpret, stgc_net
from stgsl.interpret import (SalienceReport, aal116_names, minmax_scale,
                             salience_scores, top_fraction, write_salience)


def _model(n=6, blocks=3):
    return stgc_net.init_model(n, seed=0, hyper=stgc_net.ModelHyper(
        n_rois=n, n_blocks=blocks, channels=8, window=8))


class TestMinMax:
    def test_scales_into_unit_interval(self):
        x = np.array([2.0, 4.0, 3.0])
        np.testing.assert_allclose(minmax_scale(x), [0.0, 1.0, 0.5])

    def test_constant_maps_to_zeros(self):
        np.testing.assert_array_equal(minmax_scale(np.full(4, 3.3)), 0.0)


class TestNames:
    def test_aal116_count_and_samples(self):
        names = aal116_names()
        assert len(names) == 116
        assert names[0] == "PreCG.L"
        assert names[66] == "PCUN.L"   # 1-based index 67
        assert names[115] == "Vermis.10"

    def test_default_names_fallback(self):
        names = interpret.default_roi_names(5)
        assert names == ["ROI1", "ROI2", "ROI3", "ROI4", "ROI5"]

    def test_name_length_enforced(self):
        model = _model()
        with pytest.raises(ValueError):
            salience_scores(model, roi_names=["a", "b"])


class TestSalience:
    def test_scores_shape_and_range(self):
        model = _model()
        # make the eval graph non-empty: raise a few thetas, lower alpha
        model.params["alpha"] = np.full((), -3.0)
        model.params["theta"][:] = -3.0
        model.params["theta"][1] = 3.0   # edge (2,1)
        model.params["theta"][4] = 3.0   # edge (3,2)
        report = salience_scores(model)
        assert report.scores.shape == (6,)
        assert report.scores.min() >= 0.0
        assert report.scores.max() <= 1.0
        assert not report.degenerate
        assert len(report.layer_matrices) == 3

    def test_nodes_on_kept_edges_score_highest(self):
        model = _model()
        model.params["alpha"] = np.full((), -3.0)
        model.params["theta"][:] = -3.0
        model.params["theta"][1] = 3.0  # connects nodes 0 and 1 (0-based)
        for l in range(3):
            model.params[f"M.{l}"][:] = 1.0
        report = salience_scores(model)
        top2 = {i for i, _, _ in report.ranking[:2]}
        assert top2 == {0, 1}

    def test_empty_graph_is_degenerate(self):
        model = _model()
        model.params["theta"][:] = -3.0  # no edge survives eval threshold
        report = salience_scores(model)
        assert report.degenerate
        np.testing.assert_array_equal(report.scores, 0.0)

    def test_ranking_is_descending_and_stable(self):
        model = _model()
        model.params["alpha"] = np.full((), -3.0)
        model.params["theta"][:] = 2.0  # dense graph
        report = salience_scores(model)
        scores = [s for _, _, s in report.ranking]
        assert scores == sorted(scores, reverse=True)

    def test_sum_rows_option(self):
        model = _model()
        model.params["alpha"] = np.full((), -3.0)
        model.params["theta"][:] = 2.0
        model.params["M.0"][0, :] = 5.0  # asymmetric reweighting
        by_col = salience_scores(model, sum_rows=False)
        by_row = salience_scores(model, sum_rows=True)
        assert not np.allclose(by_col.scores, by_row.scores)


class TestTopFraction:
    def _report(self, n=20):
        scores = np.linspace(1, 0, n)
        ranking = [(i, f"ROI{i + 1}", float(scores[i])) for i in range(n)]
        return SalienceReport(scores=scores, ranking=ranking, layer_matrices=[])

    def test_ten_percent_is_ceil(self):
        assert len(top_fraction(self._report(20), 0.10)) == 2
        assert len(top_fraction(self._report(116), 0.10)) == 12  # ceil(11.6)

    def test_full_fraction(self):
        assert len(top_fraction(self._report(10), 1.0)) == 10

    def test_invalid_fraction(self):
        with pytest.raises(ValueError):
            top_fraction(self._report(), 0.0)
        with pytest.raises(ValueError):
            top_fraction(self._report(), 1.5)

    def test_name_override(self):
        rep = self._report(4)
        names = ["w", "x", "y", "z"]
        out = top_fraction(rep, 0.5, roi_names=names)
        assert [name for _, name, _ in out] == ["w", "x"]


class TestWriteSalience:
    def test_files_written(self, tmp_path):
        model = _model()
        model.params["alpha"] = np.full((), -3.0)
        model.params["theta"][:] = 2.0
        report = salience_scores(model)
        write_salience(report, str(tmp_path))
        with open(tmp_path / "salience.json") as fh:
            payload = json.load(fh)
        assert len(payload["scores"]) == 6
        assert payload["ranking"][0]["roi_index"] >= 1  # 1-based in reports
        with open(tmp_path / "salience.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["roi_name", "roi_index", "score"]
        assert len(rows) == 7
        for l in range(3):
            mat = np.loadtxt(tmp_path / f"layer_weights_{l}.csv", delimiter=",")
            assert mat.shape == (6, 6)
