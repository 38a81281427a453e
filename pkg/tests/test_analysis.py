import csv

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from esfem.analysis import (REPORT_COLUMNS, box_reference, convergence_slope, patch_test, rmse,
                            run_box_study, write_histograms_csv, write_reports_csv)
from esfem.assembly import Method
from esfem.mesh import DimensionMode, extract_edges, generate_structured_mesh, perturb_interior_nodes

# 50-digit mpmath evaluation of the closed form at the cube centre
BOX_CENTRE = 1.07191876173794002347799453908


def test_box_reference_centre():
    assert box_reference(0.5, 0.5, 0.5) == pytest.approx(BOX_CENTRE, rel=1e-14)


def test_frozen_centre_value_matches_arbitrary_precision():
    with mpmath.workdps(50):
        half = mpmath.mpf(1) / 2
        k = mpmath.pi * mpmath.sqrt(2)
        exact = 10 * mpmath.sin(mpmath.pi * half) ** 2 * mpmath.sinh(k * half) / mpmath.sinh(k)
        assert abs(exact - mpmath.mpf("1.07191876173794002347799453908")) < mpmath.mpf("1e-28")


def test_box_reference_faces(rng):
    x, y = rng.uniform(0, 1, (2, 50))
    assert np.all(box_reference(x, y, np.zeros(50)) == 0.0)
    assert np.allclose(box_reference(x, y, np.ones(50)), 10 * np.sin(np.pi * x) * np.sin(np.pi * y),
                       rtol=1e-14, atol=1e-14)
    pts = np.column_stack([x, y, rng.uniform(0, 1, 50)])
    assert np.array_equal(box_reference(pts), box_reference(*pts.T))


def test_box_reference_is_harmonic():
    # second differences of the closed form cancel in the Laplacian
    p = np.array([0.3, 0.6, 0.4])
    h = 1e-4
    lap = sum((box_reference(*(p + e)) - 2 * box_reference(*p) + box_reference(*(p - e))) / h ** 2
              for e in h * np.eye(3))
    assert abs(lap) < 1e-5


vectors = arrays(float, 12, elements=st.floats(-100, 100, allow_nan=False))


@settings(max_examples=50)
@given(vectors)
def test_rmse_identities(v):
    if not np.any(v):
        with pytest.raises(ValueError):
            rmse(v, v)
        return
    assert rmse(v, v) == 0.0
    assert rmse(2 * v, v) == pytest.approx(1.0)
    e = np.zeros_like(v)
    m = np.abs(v).max()
    e[0] = m * np.linalg.norm(v / m)
    assert rmse(v + e, v) == pytest.approx(1.0)
    assert rmse(v + 0.5 * e, v) >= 0


def test_rmse_length_mismatch():
    with pytest.raises(ValueError):
        rmse(np.ones(3), np.ones(4))


@pytest.mark.parametrize("method", list(Method))
@pytest.mark.parametrize("mode, coef", [(DimensionMode.CYLINDRICAL_2D, [1.0, 0.0, -2.0]),
                                        (DimensionMode.CARTESIAN_3D, [0.5, 1.0, -2.0, 3.0])])
def test_patch_test(method, mode, coef):
    mesh = perturb_interior_nodes(generate_structured_mesh(mode, 4), 0.4, 12)
    scale = np.abs(coef[0] + mesh.nodes @ np.array(coef[1:])).max()
    assert patch_test(mesh, method, coef) <= 1e-10 * scale


def test_convergence_slope_exact_power_law():
    h = np.array([0.4, 0.2, 0.1, 0.05])
    assert convergence_slope(h, 3.0 * h ** 2) == pytest.approx(2.0)


@pytest.fixture(scope="module")
def small_study():
    return run_box_study(divisions=(2, 3), magnitude=0.2, seeds=(7,))


def test_study_layout(small_study):
    rows = [(r.mesh_descriptor, r.method) for r in small_study.reports]
    assert rows == [("regular-n2", Method.FEM), ("regular-n2", Method.ESFEM),
                    ("perturbed-n2-m0.2-s7", Method.FEM), ("perturbed-n2-m0.2-s7", Method.ESFEM),
                    ("regular-n3", Method.FEM), ("regular-n3", Method.ESFEM),
                    ("perturbed-n3-m0.2-s7", Method.FEM), ("perturbed-n3-m0.2-s7", Method.ESFEM)]
    r = small_study.get("ESFEM", 3, True)
    assert r.divisions == 3 and r.perturbed
    assert r.rmse > 0 and r.max_abs_error > 0 and r.iterations > 0


def test_regular_h_is_mean_edge_length(small_study):
    mesh = generate_structured_mesh(DimensionMode.CARTESIAN_3D, 2)
    e = extract_edges(mesh).edges
    expected = np.linalg.norm(mesh.nodes[e[:, 0]] - mesh.nodes[e[:, 1]], axis=1).mean()
    assert small_study.get("fem", 2, False).h == pytest.approx(expected, rel=1e-14)


def test_csv_schema(small_study, tmp_path):
    path = tmp_path / "r.csv"
    write_reports_csv(small_study.reports, path)
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert len(rows) == 9
    assert all(row[-1] == "" for row in rows[1:])
    write_reports_csv(small_study.reports, path, timings=True)
    assert all(float(row[-1]) >= 0 for row in list(csv.reader(path.open()))[1:])


def test_histogram_csv(small_study, tmp_path):
    path = tmp_path / "h.csv"
    write_histograms_csv(small_study.qualities, path)
    rows = list(csv.DictReader(path.open()))
    assert {r["mesh_descriptor"] for r in rows} == set(small_study.qualities)
    for desc, q in small_study.qualities.items():
        total = sum(int(r["count"]) for r in rows if r["mesh_descriptor"] == desc)
        assert total == len(q.per_element_ratio)
