import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from sbiwss.metrics import MetricError, build_gamma, error_report, relative_l2_error
from sbiwss.profile import Method, WssProfile


def prof(s, w, method=Method.TRUTH):
    s = np.asarray(s, float)
    z = np.zeros((len(s), 2))
    return WssProfile(s, z, z, w, method)


S = np.linspace(0.0, 3.1, 200)
REF = prof(S, 1.0 + 0.5 * np.sin(2 * S) ** 2)


def test_identical_is_zero():
    assert relative_l2_error(REF, REF) == 0.0


def test_zero_test_is_hundred():
    assert relative_l2_error(REF, prof(S, np.zeros_like(S))) == pytest.approx(100.0, rel=1e-14)


def test_double_is_hundred():
    assert relative_l2_error(REF, prof(S, 2 * REF.wss)) == pytest.approx(100.0, rel=1e-14)


def test_against_adaptive_quadrature():
    f = lambda s: 1.0 + 0.5 * np.sin(2 * s) ** 2  # noqa: E731
    g = lambda s: 1.1 + 0.3 * np.cos(s)  # noqa: E731
    num = integrate.quad(lambda s: (f(s) - g(s)) ** 2, 0, 3.1, epsabs=1e-13)[0]
    den = integrate.quad(lambda s: f(s) ** 2, 0, 3.1, epsabs=1e-13)[0]
    want = 100 * np.sqrt(num / den)
    assert relative_l2_error(REF, prof(S, g(S))) == pytest.approx(want, rel=1e-7)


@settings(max_examples=25)
@given(st.floats(0.01, 100.0))
def test_homogeneous(a):
    t = prof(S, 1.0 + 0.2 * np.cos(3 * S))
    e = relative_l2_error(REF, t)
    ea = relative_l2_error(prof(S, a * REF.wss), prof(S, a * t.wss))
    assert ea == pytest.approx(e, rel=1e-10)


def test_quadrature_order_insensitive():
    t = prof(S, 1.0 + 0.2 * np.cos(3 * S))
    a = relative_l2_error(REF, t, quad_order=5)
    b = relative_l2_error(REF, t, quad_order=10)
    assert abs(a - b) < 0.01


def test_mismatch_and_zero_reference():
    with pytest.raises(MetricError):
        relative_l2_error(REF, prof(S[:-1], REF.wss[:-1]))
    with pytest.raises(MetricError):
        relative_l2_error(REF, prof(S + 0.01, REF.wss))
    with pytest.raises(MetricError):
        relative_l2_error(prof(S, np.zeros_like(S)), REF)
    with pytest.raises(MetricError):
        relative_l2_error(prof([0.0], [1.0]), prof([0.0], [1.0]))


def test_gamma_endpoints_and_length(stenosis):
    gam = build_gamma(stenosis, (1.5, 4.5, -0.4, 0.4), 200)
    assert len(gam) == 200
    np.testing.assert_allclose(gam.points[[0, -1], 0], [1.5, 4.5], atol=1e-12)
    np.testing.assert_allclose(gam.points[:, 1], stenosis.y(gam.points[:, 0]), atol=1e-14)
    f = lambda x: np.sqrt(1 + float(stenosis.dy(x)) ** 2)  # noqa: E731
    L = integrate.quad(f, 1.5, 4.5, epsabs=1e-13, limit=200)[0]
    assert gam.s[-1] == pytest.approx(L, abs=1e-8)
    assert gam.s[0] == 0.0
    assert np.all(gam.normals[:, 1] > 0)


def test_gamma_clipped_to_vessel(stenosis):
    gam = build_gamma(stenosis, (-1.0, 2.0, -1, 1), 20)
    assert gam.points[0, 0] == pytest.approx(0.0)
    with pytest.raises(MetricError):
        build_gamma(stenosis, (7.0, 8.0, -1, 1), 20)


def test_error_report():
    t = prof(S, 1.1 * REF.wss, Method.SBI)
    m = prof(S, 0.5 * REF.wss, Method.MRI)
    r = error_report(REF, m, t)
    assert r.e_sbi == pytest.approx(10.0, rel=1e-12)
    assert r.e_mri == pytest.approx(50.0, rel=1e-12)
    np.testing.assert_allclose(r.abs_err_mri, 0.5 * REF.wss)
    assert r.s_range == (0.0, pytest.approx(3.1))
