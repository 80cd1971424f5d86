import csv
import io
import json
import math

import numpy as np
import pytest

from medpose.core import LandmarkSet
from medpose.metrics import (MetricsReport, RadialErrors, UnitMismatch, build_report, emit_report,
                             format_table, mre, radial_errors, sdr, sdr_avg)


def errs(values, unit="mm"):
    v = np.asarray(values, float)[None, :]
    return RadialErrors(v, np.ones_like(v, bool), unit)


def test_radial_error_examples():
    gt = LandmarkSet.visible([[10.0, 10.0]])
    pred = LandmarkSet.visible([[13.0, 14.0]])
    assert radial_errors(gt, gt, (0.1, 0.1)).errors.tolist() == [[0.0]]
    r = radial_errors(pred, gt, (0.1, 0.1))
    assert r.errors[0, 0] == pytest.approx(0.5, abs=1e-15) and r.unit == "mm"
    r = radial_errors(pred, gt, None)
    assert r.errors[0, 0] == 5.0 and r.unit == "px"
    with pytest.raises(ValueError):
        radial_errors(LandmarkSet.visible([[0, 0], [1, 1]]), gt, None)


def test_radial_errors_skip_invisible_gt():
    gt = LandmarkSet([[0, 0], [5, 5]], [True, False])
    pred = LandmarkSet.visible([[3, 4], [100, 100]])
    r = radial_errors(pred, gt, None)
    assert r.evaluated.tolist() == [5.0]


def test_radial_errors_translation_invariant(rng):
    for _ in range(20):
        p, g = rng.uniform(0, 100, size=(2, 7, 2))
        t = rng.uniform(-50, 50, size=2)
        a = radial_errors(LandmarkSet.visible(p), LandmarkSet.visible(g), (0.3, 0.2)).errors
        b = radial_errors(LandmarkSet.visible(p + t), LandmarkSet.visible(g + t), (0.3, 0.2)).errors
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_anisotropic_spacing():
    r = radial_errors(LandmarkSet.visible([[3.0, 4.0]]), LandmarkSet.visible([[0.0, 0.0]]), (0.2, 0.1))
    assert r.errors[0, 0] == pytest.approx(math.hypot(0.6, 0.4))


def test_mre_examples():
    assert mre(errs([0.5, 0.5])) == (0.5, 0.0)
    assert mre(errs([0.0, 1.0])) == (0.5, 0.5)
    with pytest.raises(ValueError):
        mre(RadialErrors(np.zeros((1, 2)), np.zeros((1, 2), bool)))


def test_mre_against_two_pass_oracle(rng):
    for _ in range(20):
        e = rng.exponential(2.0, size=(5, 9))
        mask = rng.random((5, 9)) > 0.3
        vals = [float(x) for x, m in zip(e.ravel(), mask.ravel()) if m]
        mean = sum(vals) / len(vals)
        std = math.sqrt(sum((v - mean) ** 2 for v in vals) / len(vals))
        got = mre(RadialErrors(e, mask))
        assert abs(got[0] - mean) <= 1e-12 and abs(got[1] - std) <= 1e-12


def test_pooling_across_images():
    a = RadialErrors(np.array([[1.0, 1.0, 1.0]]), np.ones((1, 3), bool))
    b = RadialErrors(np.array([[4.0, 0.0, 0.0]]), np.array([[True, False, False]]))
    assert mre(a.extend(b))[0] == pytest.approx(7 / 4)
    with pytest.raises(UnitMismatch):
        a.extend(errs([1.0], "px"))


def test_sdr_examples():
    assert sdr(errs([0.0, 0.0, 0.0]), 0.5) == 100.0
    assert sdr(errs([1.0, 3.0]), 2.0) == 50.0
    assert sdr(errs([2.0]), 2.0) == 100.0
    with pytest.raises(UnitMismatch):
        sdr(errs([1.0]), 2.0, unit="px")
    with pytest.raises(ValueError):
        sdr(errs([1.0]), 0.0)


def test_sdr_limits_and_monotone(rng):
    for _ in range(1000):
        e = errs(np.where(rng.random(12) < 0.2, 0.0, rng.exponential(3.0, 12)))
        ts = np.sort(rng.uniform(0.01, 20, size=4))
        rates = [sdr(e, t) for t in ts]
        assert all(a <= b for a, b in zip(rates, rates[1:]))
        assert sdr(e, 1e300) == 100.0
        assert sdr(e, 5e-324) == pytest.approx(100 * np.mean(e.evaluated == 0))


@pytest.mark.parametrize("triple, published", [
    ((82.29, 92.80, 97.33), 90.81),
    ((95.87, 99.70, 100.0), 98.52),
    ((65.66, 87.31, 94.21), 82.39),
])
def test_sdr_avg_paper_examples(triple, published):
    assert round(sdr_avg(triple), 2) == published
    assert abs(sdr_avg(triple) - published) <= 0.005


def test_sdr_avg_basics():
    assert sdr_avg([42.0] * 5) == 42.0
    with pytest.raises(ValueError):
        sdr_avg([])


def _report(thresholds, unit, name, rng):
    e = rng.exponential(1.0, size=(4, 5))
    return build_report(name, RadialErrors(e, np.ones_like(e, bool), unit), thresholds)


@pytest.mark.parametrize("name, thresholds, unit, header", [
    ("head", (2, 3, 4), "mm", "2 mm | 3 mm | 4 mm | SDR_avg | MRE(mm)"),
    ("hand", (2, 4, 10), "mm", "2 mm | 4 mm | 10 mm | SDR_avg | MRE(mm)"),
    ("chest", (3, 6, 9), "px", "3 px | 6 px | 9 px | SDR_avg | MRE(px)"),
    ("teeth", (0.5, 1, 2), "mm", "0.5 mm | 1 mm | 2 mm | SDR_avg | MRE(mm)"),
])
def test_table_headers(rng, name, thresholds, unit, header):
    text = format_table(_report(thresholds, unit, name, rng))
    cols = [c.strip() for c in text.splitlines()[1].split("|")]
    assert " | ".join(cols) == header
    row = [c.strip() for c in text.splitlines()[3].split("|")]
    assert all(len(v.split(".")[1]) == 2 for v in row[:4])
    mean, std = row[4].split("±")
    assert len(mean.split(".")[1]) == 3 and len(std.split(".")[1]) == 3


def test_report_invariants_and_json(tmp_path, rng):
    r = _report((2, 3, 4), "mm", "head", rng)
    vals = [v for _, v in r.sdr]
    assert vals == sorted(vals)
    assert r.sdr_avg == pytest.approx(np.mean(vals))
    assert r.n_images == 4 and r.n_landmarks == 20
    p = emit_report(r, tmp_path / "r.json", "json")
    d = json.loads(p.read_text())
    assert set(d) == {"dataset", "unit", "mre", "sdr", "sdr_avg", "n_images", "n_landmarks"}
    assert set(d["mre"]) == {"mean", "std"} and set(d["sdr"][0]) == {"threshold", "value"}
    assert MetricsReport.from_json(d) == r
    # deterministic serialization
    assert emit_report(r, tmp_path / "s.json", "json").read_bytes() == p.read_bytes()


def test_csv_report(tmp_path, rng):
    r = _report((3, 6, 9), "px", "chest", rng)
    rows = list(csv.reader(io.StringIO(emit_report(r, tmp_path / "r.csv", "csv").read_text())))
    assert rows[0][:5] == ["dataset", "unit", "sdr@3", "sdr@6", "sdr@9"]
    assert float(rows[1][5]) == r.sdr_avg
    with pytest.raises(ValueError):
        emit_report(r, tmp_path / "r.x", "xml")
