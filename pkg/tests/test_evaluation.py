import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uwbdgm.evaluation import (
    TABLE_COLUMNS,
    EvalReport,
    MethodMetrics,
    accuracy,
    cdf,
    class_separation,
    compare,
    mae,
    parse_table,
    per_class_accuracy,
    project_latent,
    regression_metrics,
    residuals,
    rmse,
    table_fixture_room_full,
    write_report_csv,
)

residual_lists = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=50)


class TestMetrics:
    def test_zero_residuals(self):
        assert rmse([0.0, 0.0]) == 0.0 and mae([0.0, 0.0]) == 0.0

    def test_three_four(self):
        assert mae([3.0, 4.0]) == 3.5
        assert rmse([3.0, -4.0]) == pytest.approx(math.sqrt(12.5), rel=1e-15)

    def test_residual_convention(self):
        # zero prediction leaves the raw bias in place
        assert residuals([0.5, 0.2], [0.0, 0.0]).tolist() == [0.5, 0.2]
        assert residuals([0.5, 0.2], [0.5, 0.1]).tolist() == pytest.approx([0.0, 0.1])

    def test_accuracy(self):
        assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
        assert accuracy([0, 1, 1, 0], [0, 1, 2, 2]) == 0.5
        assert per_class_accuracy([0, 1, 1, 0], [0, 1, 1, 1], 3) == [1.0, pytest.approx(2 / 3), None]

    def test_errors(self):
        for fn in (rmse, mae, cdf):
            with pytest.raises(ValueError):
                fn([])
        with pytest.raises(ValueError):
            accuracy([], [])
        with pytest.raises(ValueError):
            residuals([1.0], [1.0, 2.0])

    @settings(max_examples=300, deadline=None)
    @given(r=residual_lists)
    def test_rmse_dominates_mae(self, r):
        assert rmse(r) >= mae(r) * (1 - 1e-12) >= 0

    def test_regression_metrics(self):
        m = regression_metrics([1.0, 2.0], [1.0, 2.0])
        assert (m.rmse, m.mae) == (0.0, 0.0)


class TestCdf:
    def test_step_values(self):
        c = cdf([1.0, -2.0, 3.0])
        assert c(2.0) == pytest.approx(2 / 3)
        assert c(0.5) == 0.0 and c(3.0) == 1.0

    def test_constant_is_single_step(self):
        c = cdf([0.7] * 5)
        assert c.values.tolist() == [0.7] and c.fractions.tolist() == [1.0]

    @settings(max_examples=200, deadline=None)
    @given(r=residual_lists)
    def test_properties(self, r):
        c = cdf(r)
        assert c(max(abs(v) for v in r)) == 1.0
        assert c.fractions[-1] == 1.0
        assert np.all(np.diff(c.fractions) > 0) and np.all(np.diff(c.values) > 0)

    def test_csv(self, tmp_path):
        path = tmp_path / "c.csv"
        cdf([1.0, 2.0]).to_csv(path)
        assert path.read_text().splitlines() == ["value,fraction", "1.0,0.5", "2.0,1.0"]


class TestProjection:
    def test_line_is_rank_one(self, rng):
        u = rng.normal(size=50)
        p = project_latent(np.stack([u, 2 * u], axis=1), np.zeros(50))
        assert p.explained[0] == pytest.approx(1.0, abs=1e-12)
        assert p.explained[1] == pytest.approx(0.0, abs=1e-12)

    def test_isotropic_cloud(self, rng):
        d = 4
        p = project_latent(rng.normal(size=(10_000, d)), np.zeros(10_000))
        assert np.all(np.abs(p.explained - 1 / d) <= 0.05)
        assert p.explained[0] >= p.explained[1]

    def test_duplicated_data_same_axes(self, rng):
        z = rng.normal(size=(30, 5)) * [3, 2, 1, 0.5, 0.1]
        a = project_latent(z, np.arange(30) % 2)
        b = project_latent(np.concatenate([z, z]), np.arange(60) % 2)
        np.testing.assert_allclose(b.coords[:30], a.coords, atol=1e-12)
        np.testing.assert_allclose(b.explained, a.explained, atol=1e-12)

    def test_two_dimensional_codes_rotate_only(self, rng):
        z = rng.normal(size=(40, 2)) * [2.0, 0.5]
        p = project_latent(z, np.zeros(40))
        d_in = np.linalg.norm(z[:, None] - z[None], axis=-1)
        d_out = np.linalg.norm(p.coords[:, None] - p.coords[None], axis=-1)
        np.testing.assert_allclose(d_out, d_in, atol=1e-12)

    def test_sign_convention(self, rng):
        z = rng.normal(size=(25, 3)) * [3, 1, 0.2]
        p = project_latent(z, np.zeros(25))
        q = project_latent(-z, np.zeros(25))
        for row in p.components:
            assert row[np.argmax(np.abs(row))] > 0
        np.testing.assert_allclose(q.coords, -p.coords, atol=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            project_latent(np.ones((2, 3)), [0, 0])
        with pytest.raises(ValueError):
            project_latent(np.ones((5, 1)), [0] * 5)
        with pytest.raises(ValueError, match="rank 0"):
            project_latent(np.ones((5, 3)), [0] * 5)

    def test_separation_and_csv(self, rng, tmp_path):
        z = np.concatenate([rng.normal(size=(20, 3)), rng.normal(size=(20, 3)) + [10, 0, 0]])
        p = project_latent(z, [0] * 20 + [1] * 20)
        gap, spread = class_separation(p)
        assert gap > 3 * spread
        path = tmp_path / "p.csv"
        p.to_csv(path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["u", "v", "label"] and len(rows) == 41


class TestReport:
    def test_fixture_row_order(self):
        text = compare([table_fixture_room_full()])
        header, _, row = text.splitlines()
        assert [c.strip() for c in header.split("|")][1:] == list(TABLE_COLUMNS)
        cells = [c.strip() for c in row.split("|")]
        assert cells == ["Room Full", "0.1084", "0.1553", "0.0895", "0.0568", "0.0163", "0.4859", "0.6203"]

    def test_blank_and_zero(self):
        r = EvalReport("x", 3, 0.0, {"DGM": MethodMetrics(rmse=0.0, mae=0.0, accuracy=1.0)})
        cells = [c.strip() for c in compare([r]).splitlines()[2].split("|")]
        assert cells == ["x", "0.0000", "", "", "0.0000", "0.0000", "", "1.0000"]

    def test_parse_back(self, rng):
        reports = []
        for i in range(5):
            vals = rng.uniform(0, 1, 7).round(4)
            reports.append(EvalReport(f"scenario {i}", 10, vals[0], {
                "SVR": MethodMetrics(rmse=vals[1], mae=vals[2]),
                "DGM": MethodMetrics(rmse=vals[3], mae=vals[4], accuracy=vals[6]),
                "SVC": MethodMetrics(accuracy=vals[5]),
            }))
        parsed = parse_table(compare(reports))
        for r, (name, values) in zip(reports, parsed):
            assert name == r.dataset
            assert values == pytest.approx(r.row(), abs=5e-5)

    def test_csv(self, tmp_path):
        path = tmp_path / "r.csv"
        write_report_csv([table_fixture_room_full()], path)
        rows = list(csv.reader(path.open()))
        assert rows[0][:3] == ["scenario", "n_samples", "unmitigated_mae"]
        assert [float(v) for v in rows[1][2:]] == [0.1084, 0.1553, 0.0895, 0.0568, 0.0163, 0.4859, 0.6203]
