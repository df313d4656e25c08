import numpy as np
import pytest

import oocmice


@pytest.fixture
def table(tmp_path):
    t = oocmice.generate(rows=1200, gaussian=3, linear=[1, 1, -1, 0.5], logistic=[0, 1, -0.5, 0],
                         nominal=True, seed=4, chunk_rows=500, spill_dir=tmp_path / "store")
    return t


def test_generate_shape(table):
    assert table.n_rows == 1200
    assert table.columns == ["x1", "x2", "x3", "y", "b", "g"]
    assert table.categories("b") == ["no", "yes"]
    assert not np.isnan(table.column("x1")).any()


def test_ampute_and_impute(table, tmp_path):
    truth = table.ampute("x1", 0.3, seed=2)
    assert len(truth) == 360
    assert table.missing_count("x1") == 360
    assert np.isnan(table.column("x1")).sum() == 360

    res = oocmice.impute(table, "b ~ x1 + x2 + g", m=3, maxit=2, seed=11, emit_dir=tmp_path / "imps")
    assert res.seed == 11
    assert res.pooled.m == 3
    assert res.pooled.names[0] == "(Intercept)"
    assert len(res.per_imputation) == 3
    assert np.all(np.isfinite(res.pooled.se))
    assert "Number of imputations: 3" in res.report()
    assert res.stats["peak_resident_bytes"] > 0

    # the source keeps its holes; the emitted tables are complete
    assert table.missing_count("x1") == 360
    types = list(table.declarations)
    err = oocmice.score(tmp_path / "imps" / "imputation_1.csv", types, truth)
    assert 0 < err < 3

    again = oocmice.impute(table, "b ~ x1 + x2 + g", m=3, maxit=2, seed=11)
    np.testing.assert_array_equal(again.pooled.q_bar, res.pooled.q_bar)


def test_csv_round_trip(table, tmp_path):
    table.to_csv(tmp_path / "t.csv")
    back = oocmice.read_csv(tmp_path / "t.csv", dict(table.declarations))
    np.testing.assert_allclose(back.column("y"), table.column("y"), rtol=1e-12)


def test_pool_identical_estimates():
    est = oocmice.ParamEstimate(["(Intercept)", "x"], np.array([0.5, -1.0]), np.diag([0.04, 0.09]))
    pooled = oocmice.pool([est, est, est])
    np.testing.assert_array_equal(pooled.q_bar, [0.5, -1.0])
    np.testing.assert_array_equal(pooled.b, np.zeros((2, 2)))
    np.testing.assert_allclose(pooled.se, [0.2, 0.3])


def test_pooled_diagnostics():
    r, lam, df = oocmice.pooled_diagnostics(1.0, 27.0, 3)
    assert r == pytest.approx(36.0)
    assert lam == pytest.approx(36.0 / 37.0)
    assert df > 0


def test_rmse():
    assert oocmice.rmse([1, 2, 3], [1, 2, 5]) == pytest.approx(np.sqrt(4 / 3))


def test_errors_carry_module_and_code(table):
    with pytest.raises(oocmice.OocmiceError) as info:
        oocmice.impute(table, "b ~ x1 +")
    assert info.value.code == 22
    assert info.value.module == "schema"
    with pytest.raises(oocmice.OocmiceError) as info:
        table.ampute("x1", 1.5)
    assert info.value.code == 60
