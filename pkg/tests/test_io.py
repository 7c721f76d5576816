import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sslcox import io, simgen
from sslcox.cox import SurvivalDataset
from sslcox.exceptions import InputError
from sslcox.spline import SplineSpec, build_design
from sslcox.sslfit import PriorConfig, fit


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_read_dataset(tmp_path):
    p = write(tmp_path, "x1,time,status,age\n0.5,1.5,1,40\n-1,2.0,0,51\n")
    d = io.read_dataset(p)
    assert d.names == ["x1", "age"]
    np.testing.assert_array_equal(d.time, [1.5, 2.0])
    np.testing.assert_array_equal(d.covariates, [[0.5, 40], [-1, 51]])


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("time,status,x\n1,1,0.5\n2,1,abc\n", "row 3, column 'x'"),
        ("time,status,x\n1,1,0.5\n2,1\n", "row 3 has 2 fields"),
        ("time,x\n1,0.5\n", "missing required column 'status'"),
        ("time,status,x\n-1,1,0.5\n", "row 2, column 'time'"),
        ("time,status,x\n1,2,0.5\n", "row 2, column 'status'"),
        ("time,status,x\n1,1,\n", "row 2, column 'x'"),
        ("time,status,x\n1,1,nan\n", "row 2, column 'x'"),
        ("time,status,x\n1,0,1\n2,0,3\n", "no events"),
        ("time,status,time\n1,1,1\n", "duplicate"),
        ("", "empty"),
        ("time,status\n", "no data rows"),
    ],
)
def test_read_errors_are_addressed(tmp_path, text, fragment):
    with pytest.raises(InputError, match=fragment.replace("(", r"\(")):
        io.read_dataset(write(tmp_path, text))


def test_missing_file():
    with pytest.raises(InputError, match="cannot open"):
        io.read_dataset("/nonexistent/file.csv")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 30), st.integers(0, 5))
def test_csv_round_trip_lossless(tmp_path_factory, seed, n, p):
    rng = np.random.default_rng(seed)
    d = SurvivalDataset(rng.exponential(size=n) * 10.0 ** rng.integers(-8, 8, n),
                        rng.integers(0, 2, n), rng.standard_normal((n, p)) * 1e3)
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    io.write_dataset(path, d)
    back = io.read_dataset(path, require_events=False)
    assert np.array_equal(back.time, d.time)
    assert np.array_equal(back.status, d.status)
    assert np.array_equal(back.covariates, d.covariates)
    assert back.names == d.names


def test_read_covariates_reorders(tmp_path):
    p = write(tmp_path, "b,a\n1,2\n3,4\n")
    X, t, s = io.read_covariates(p, ["a", "b"])
    np.testing.assert_array_equal(X, [[2, 1], [4, 3]])
    assert t is None and s is None
    with pytest.raises(InputError, match="missing predictor"):
        io.read_covariates(p, ["a", "c"])


@pytest.fixture(scope="module")
def fitted():
    rep = simgen.generate_replicate(simgen.SimConfig(p=5, seed=4, n_test=50))
    bases, design, _ = build_design(rep.train.covariates, SplineSpec(n_bases=8))
    res, _ = fit(rep.train, bases, PriorConfig(s0=0.05), design=design)
    return rep, res, design


def test_model_round_trip_bit_identical(tmp_path, fitted):
    rep, res, design = fitted
    path = tmp_path / "m.json"
    io.save_model(path, res)
    back = io.load_model(path)
    for X in (rep.train.covariates, rep.test.covariates, rep.test.covariates * 3.0):
        assert np.array_equal(back.linear_predictor(X), res.linear_predictor(X))
    assert np.array_equal(back.beta, res.beta)
    assert back.selection() == res.selection()
    assert back.prior == res.prior
    assert np.array_equal(back.baseline.cumulative, res.baseline.cumulative)
    np.testing.assert_allclose(res.linear_predictor(rep.train.covariates), design @ res.beta, atol=1e-12)


def test_model_version_checks(tmp_path, fitted):
    _, res, _ = fitted
    d = io.model_to_dict(res)
    assert d["format_version"] == io.MODEL_FORMAT_VERSION
    d["format_version"] = io.MODEL_FORMAT_VERSION + 1
    p = tmp_path / "new.json"
    p.write_text(json.dumps(d))
    with pytest.raises(InputError, match="newer"):
        io.load_model(p)
    del d["format_version"]
    p.write_text(json.dumps(d))
    with pytest.raises(InputError):
        io.load_model(p)


def test_model_malformed(tmp_path, fitted):
    _, res, _ = fitted
    d = io.model_to_dict(res)
    d["beta"] = d["beta"][:-1]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    with pytest.raises(InputError, match="coefficient count"):
        io.load_model(p)
    p.write_text("{not json")
    with pytest.raises(InputError, match="not valid JSON"):
        io.load_model(p)
