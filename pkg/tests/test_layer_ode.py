from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypch.errors import EventAtStart, ValidationFailure
from hypch.layer_ode import (
    L_pm,
    LayerState,
    OdeParams,
    P_of_h,
    Q_of,
    compare_tau_limit,
    initial_velocities,
    integrate,
    length_forcing,
    rhs_classic,
    rhs_hyperbolic,
    stack,
)
from hypch.profile import LayerVector

SQ2 = math.sqrt(2.0)
T1 = dict(eps=0.07, rho=0.7)
H1 = np.array([0.31, 0.66])
H6 = np.array([0.18, 0.32, 0.45, 0.57, 0.71, 0.86])


def _alpha(l, eps):
    return 16.0 * np.exp(-SQ2 * np.asarray(l) / eps)


def test_stack():
    np.testing.assert_array_equal(stack(np.array([1.0, 2.0, 3.0])), [1.0, 3.0, 5.0, 3.0])
    np.testing.assert_array_equal(stack(np.array([2.0])), [2.0, 2.0])


def test_table1_velocity(quartic):
    p = OdeParams(tau=0.0, **T1)
    v = P_of_h(LayerVector(H1), p, quartic)
    l = np.diff(np.concatenate(([-H1[0]], H1, [2 - H1[-1]])))
    expected = (_alpha(l[2], 0.07) - _alpha(l[0], 0.07)) / (4 * 0.35)
    np.testing.assert_allclose(v, [expected, expected], rtol=1e-13)
    assert v[0] == pytest.approx(-2.915302539591292e-05, rel=1e-12)
    np.testing.assert_array_equal(rhs_classic(H1, p, quartic), v)


def test_direction_follows_outer_gaps(quartic):
    p = OdeParams(tau=0.0, **T1)
    # l3 = 2 (1 - h2) < l1 = 2 h1: both layers move right
    assert np.all(P_of_h(np.array([0.34, 0.69]), p, quartic) > 0)
    assert np.all(P_of_h(H1, p, quartic) < 0)


@pytest.mark.parametrize("N", [1, 2, 5])
def test_equal_spacing_is_stationary(quartic, N):
    h = (2 * np.arange(1, N + 2) - 1) / (2 * (N + 1))
    p = OdeParams(eps=0.01, tau=1.0, rho=0.2)
    # the gaps are equal up to round-off, so P vanishes relative to one alpha term
    scale = 1e-12 * _alpha(1.0 / (N + 1), p.eps) * (N + 1)
    np.testing.assert_allclose(P_of_h(h, p, quartic), 0.0, atol=scale)
    dh, de = rhs_hyperbolic(LayerState(LayerVector(h), np.zeros(N + 1)), p, quartic)
    assert np.all(dh == 0) and np.all(np.abs(de) <= scale)
    traj = integrate("hyperbolic", h, OdeParams(eps=0.01, tau=1.0, rho=0.2, t_end=1e3), quartic,
                     eta0=np.zeros(N + 1))
    np.testing.assert_allclose(traj.h, np.broadcast_to(h, traj.h.shape), atol=1e3 * scale)


def test_quadratic_coupling():
    h = np.array([0.2, 0.7, 0.9])
    assert Q_of(h, np.array([1.0, 0.0, 0.0]))[0] == pytest.approx(-1.0)
    np.testing.assert_array_equal(Q_of(h, np.full(3, 0.3)), 0.0)
    eta = np.array([0.3, -0.1, 0.7])
    np.testing.assert_allclose(Q_of(h, 3 * eta), 9 * Q_of(h, eta), rtol=1e-14)
    with pytest.raises(ValueError):
        Q_of(np.array([0.3, 0.6]), np.zeros(2))


def test_two_layer_rigid_motion(quartic):
    p = OdeParams(tau=5.0, **T1)
    dh, de = rhs_hyperbolic(LayerState(LayerVector(H1), np.array([2e-5, 2e-5])), p, quartic)
    assert de[0] == de[1]


def test_initial_velocities(quartic):
    p = OdeParams(tau=5.0, **T1)
    fwd = initial_velocities(H1, "forward", p, quartic)
    rev = initial_velocities(H1, "reversed", p, quartic)
    np.testing.assert_array_equal(rev, -fwd)
    assert fwd[0] == fwd[1] and rev[0] == rev[1]
    with pytest.raises(ValueError):
        initial_velocities(H1, "sideways", p, quartic)


def _l_of(h):
    return np.diff(np.concatenate(([-h[0]], h, [2 - h[-1]])))


@settings(max_examples=30, deadline=None)
@given(N=st.integers(1, 6), seed=st.integers(0, 2**31 - 1))
def test_length_equations_agree_with_stacked_form(quartic, N, seed):
    rng = np.random.default_rng(seed)
    eps = 0.005
    gaps = rng.uniform(0.7, 1.3, N + 2)
    gaps[[0, -1]] *= 2.0
    ext = np.concatenate(([0.0], np.cumsum(gaps)))
    ext = 2.0 * ext / ext[-1] - ext[1] / ext[-1]
    h = ext[1:-1]
    p = OdeParams(eps=eps, tau=3.0, rho=0.06)
    if np.min(_l_of(h)) <= p.threshold:
        return
    eta = rng.normal(0.0, 1e-3, N + 1)
    force = P_of_h(h, p, quartic) - (p.tau * Q_of(h, eta) if N > 1 else 0.0)
    # l_1 = 2 h_1, l_j = h_j - h_{j-1}, l_{N+2} = 2 (1 - h_{N+1})
    D = np.zeros((N + 2, N + 1))
    D[0, 0] = 2.0
    for j in range(1, N + 1):
        D[j, j], D[j, j - 1] = 1.0, -1.0
    D[N + 1, N] = -2.0
    np.testing.assert_allclose(length_forcing(h, eta, p, quartic), D @ force,
                               rtol=1e-12, atol=1e-14 * np.max(np.abs(force)))


def test_length_equations_along_trajectory(quartic):
    # tau l'' + l' from the stored velocities, l'' by centred differences
    h0 = np.array([0.2, 0.45, 0.8])
    p = OdeParams(eps=0.03, tau=20.0, rho=0.3, t_end=400.0, rel_tol=1e-12, abs_tol=1e-15)
    traj = integrate("hyperbolic", h0, p, quartic, eta0=initial_velocities(h0, "forward", p, quartic))
    # h2 and h3 collide shortly before t = 300
    assert traj.reason == "collision" and traj.event_time > 290.0
    for t in (50.0, 150.0, 280.0):
        dt = 1e-2
        H, E = traj.at([t - dt, t, t + dt])
        dl = np.array([np.diff(np.concatenate(([-e[0]], e, [-e[-1]]))) for e in E])
        lpp = (dl[2] - dl[0]) / (2 * dt)
        lhs = p.tau * lpp + dl[1]
        rhs = length_forcing(H[1], E[1], p, quartic)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-6 * np.max(np.abs(rhs)))


def test_table1_values_frozen(quartic):
    # s(t) = h1(t) - h1(0); three decimals of these agree with the reference table
    expected = {0.0: [-0.012797, -0.053420, -0.124057],
                5.0: [-0.012573, -0.049698, -0.083037],
                50.0: [-0.011266, -0.036384, -0.047508]}
    times = [300.0, 600.0, 665.0]
    for tau, ref in expected.items():
        p = OdeParams(tau=tau, t_end=665.0, **T1)
        if tau == 0:
            traj = integrate("classic", H1, p, quartic, t_eval=times)
        else:
            traj = integrate("hyperbolic", H1, p, quartic, eta0=initial_velocities(H1, "forward", p, quartic),
                             t_eval=times)
        assert traj.reason == "t_end"
        s = traj.at(times)[0][:, 0] - H1[0]
        np.testing.assert_allclose(s, ref, rtol=1e-4)
        # two layers move as a rigid pair
        np.testing.assert_allclose(traj.h[:, 1] - traj.h[:, 0], 0.35, atol=1e-12)


def test_collision_event(quartic):
    h0 = np.array([0.2, 0.45, 0.56, 0.8])
    p = OdeParams(eps=0.02, tau=0.0, rho=0.2, t_end=1e5, rel_tol=1e-11, abs_tol=1e-14)
    traj = integrate("classic", h0, p, quartic)
    assert traj.reason == "collision"
    gaps = np.array([_l_of(hh) for hh in traj.h])
    assert np.min(gaps[-1]) == pytest.approx(p.threshold, abs=1e-9)
    assert np.all(gaps[:-1].min(axis=1) > p.threshold - 1e-9)
    assert traj.t[-1] == pytest.approx(traj.event_time)


def test_boundary_event(quartic):
    h0 = np.array([0.06, 0.5])
    p = OdeParams(eps=0.02, tau=2.0, rho=0.2, t_end=1e5)
    traj = integrate("hyperbolic", h0, p, quartic, eta0=initial_velocities(h0, "forward", p, quartic))
    assert traj.reason == "boundary"
    assert 2 * traj.h[-1, 0] == pytest.approx(p.threshold, abs=1e-9)


def test_start_outside_domain(quartic):
    p = OdeParams(eps=0.02, tau=0.0, rho=0.2)
    with pytest.raises(EventAtStart):
        integrate("classic", np.array([0.04, 0.5]), p, quartic)
    with pytest.raises(ValidationFailure):
        integrate("classic", np.array([0.2, 0.5, 0.8]), OdeParams(eps=0.1, tau=0, rho=0.3), quartic)
    with pytest.raises(ValidationFailure):
        integrate("hyperbolic", H1, OdeParams(tau=0.0, **T1), quartic, eta0=np.zeros(2))
    with pytest.raises(ValidationFailure):
        OdeParams(eps=0.01, tau=-1.0, rho=0.1)
    with pytest.raises(ValidationFailure):
        OdeParams(eps=0.01, tau=1.0, rho=0.5, alpha_mode="exact")


@pytest.mark.parametrize("mode", ["forward", "reversed"])
@pytest.mark.parametrize("h0", [H1, np.array([0.2, 0.45, 0.8]), H6])
def test_total_lengths_conserved(quartic, mode, h0):
    eps = 0.07 if h0.size == 2 else 0.02 if h0.size == 3 else 0.008
    p = OdeParams(eps=eps, tau=25.0, rho=0.16 if h0.size == 6 else 0.7 if h0.size == 2 else 0.2,
                  t_end=600.0 if h0.size < 6 else 2e4)
    traj = integrate("hyperbolic", h0, p, quartic, eta0=initial_velocities(h0, mode, p, quartic))
    L = np.array([L_pm(s)[:2] for s in traj.states()])
    np.testing.assert_allclose(L.sum(axis=1), 1.0, atol=1e-14)
    assert np.max(np.abs(L - L[0])) <= 10 * p.rel_tol


def test_total_length_relaxes_with_general_velocities(quartic):
    h0 = np.array([0.2, 0.45, 0.8])
    tau = 10.0
    p = OdeParams(eps=0.02, tau=tau, rho=0.2, t_end=50.0, rel_tol=1e-12, abs_tol=1e-15)
    eta0 = np.array([1e-3, -2e-3, 5e-4])
    traj = integrate("hyperbolic", h0, p, quartic, eta0=eta0)
    s0 = LayerState(LayerVector(h0), eta0)
    Lm0, _, dLm0, _ = L_pm(s0)
    for s in traj.states()[1:]:
        expected = Lm0 + tau * dLm0 * (1 - math.exp(-s.t / tau))
        assert L_pm(s)[0] == pytest.approx(expected, abs=1e-10)


def test_four_moving_points(quartic):
    # the unique shortest interval is (h3, h4), i.e. l_4
    h = np.array([0.12, 0.3, 0.47, 0.57, 0.74, 0.9])
    p = OdeParams(eps=0.008, tau=0.0, rho=0.16)
    v = rhs_classic(h, p, quartic)
    assert v[1] > 0 and v[2] > 0 and v[3] < 0 and v[4] < 0
    l = _l_of(h)
    i = int(np.argmin(l))
    kappa = np.sort(l)[1] - l[i]
    bound = 2 * l.max() / l.min() * math.exp(-SQ2 * kappa / p.eps)
    near = np.max(np.abs(v[1:5]))
    assert np.abs(v[0]) <= bound * near and np.abs(v[5]) <= bound * near


def test_three_layer_hierarchy(quartic):
    # l_3 (between h2 and h3) is the shortest gap; h3 does not feel it
    h = np.array([0.3, 0.55, 0.68])
    p = OdeParams(eps=0.01, tau=0.0, rho=0.1)
    v = rhs_classic(h, p, quartic)
    l = _l_of(h)
    kappa = np.sort(l)[1] - l.min()
    assert v[0] > 0 and v[1] > 0
    assert abs(v[2]) <= 2 * l.max() / l.min() * math.exp(-SQ2 * kappa / p.eps) * max(v[:2])


def test_reversed_six_layers_turn_around(quartic):
    p = OdeParams(eps=0.008, tau=125.0, rho=0.16, t_end=200.0)
    traj = integrate("hyperbolic", H6, p, quartic, eta0=initial_velocities(H6, "reversed", p, quartic),
                     t_eval=[100.0, 200.0])
    s = traj.at([100.0, 200.0])[0] - H6
    assert s[0, 0] < 0 < s[1, 0]


def test_tau_limit_self_comparison(quartic):
    p = OdeParams(tau=0.0, rel_tol=1e-11, **T1)
    rep = compare_tau_limit(H1, [0.0], 300.0, p, quartic)
    assert rep.sup_h_err[0] == 0.0 and rep.int_eta_err[0] == 0.0
    assert math.isnan(rep.slope())


def test_tau_limit_with_mass_matching(quartic):
    from hypch.profile import ProfileParams, mass

    # a slightly wider pair than the table setup, whose gap sits on the 5 eps floor
    h0 = np.array([0.3, 0.68])
    prof = ProfileParams(eps=0.07, rho=0.7, delta=0.05, N=1)
    M = mass(LayerVector(h0), prof, quartic)
    p = OdeParams(tau=0.0, rel_tol=1e-11, **T1)
    a = compare_tau_limit(h0[:1], [1e-1, 1e-2], 300.0, p, quartic, M_target=M, profile=prof)
    b = compare_tau_limit(h0, [1e-1, 1e-2], 300.0, p, quartic)
    np.testing.assert_allclose(a.sup_h_err, b.sup_h_err, rtol=1e-3)


def test_exact_alpha_close_to_asymptotic_on_table_setup(quartic):
    base = dict(eps=0.008, tau=0.0, rho=0.16, t_end=1e4)
    a = integrate("classic", H6, OdeParams(**base), quartic)
    b = integrate("classic", H6, OdeParams(alpha_mode="exact", **base), quartic)
    sa, sb = a.h[-1] - H6, b.h[-1] - H6
    np.testing.assert_allclose(sb, sa, rtol=1e-2)


def test_trajectory_csv(tmp_path, quartic):
    p = OdeParams(tau=5.0, t_end=10.0, **T1)
    traj = integrate("hyperbolic", H1, p, quartic, eta0=initial_velocities(H1, "forward", p, quartic),
                     t_eval=[5.0, 10.0])
    traj.to_csv(tmp_path / "a.csv")
    traj.to_csv(tmp_path / "b.csv")
    text = (tmp_path / "a.csv").read_text()
    assert text.splitlines()[0] == "t,h1,h2,eta1,eta2"
    assert len(text.splitlines()) == 4
    assert text == (tmp_path / "b.csv").read_text()
