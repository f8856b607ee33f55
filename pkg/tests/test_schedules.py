from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afalora.schedules import ScheduleSpec, beta_at, beta_trajectory, make_fraction_schedule


def spec(ts, te, T):
    return ScheduleSpec("linear", ts, te, T)


def test_boundaries_and_midpoint():
    s = spec(0, 300, 1000)
    assert beta_at(s, 0) == 1.0
    assert beta_at(s, 150) == 0.5
    assert beta_at(s, 300) == 0.0
    assert beta_at(s, 1000) == 0.0


def test_degenerate_window_is_the_limit_of_shrinking_windows():
    s = spec(40, 40, 100)
    assert beta_at(s, 40) == 0.0
    assert beta_at(s, 39) == 1.0
    # oracle: the linear formula on the window [40 - eps, 40] as eps -> 0
    for eps in (Fraction(1, 10), Fraction(1, 1000), Fraction(1, 10**9)):
        def lin(t):
            return max(0, 1 - max(0, t - (40 - eps)) / eps)
        assert lin(40) == beta_at(s, 40)
        assert lin(39) == beta_at(s, 39)
        assert lin(41) == beta_at(s, 41)


def test_out_of_range_step():
    s = spec(0, 3, 10)
    with pytest.raises(ValueError):
        beta_at(s, 11)
    with pytest.raises(ValueError):
        beta_at(s, -1)


def test_invalid_specs():
    with pytest.raises(ValueError):
        spec(5, 4, 10)
    with pytest.raises(ValueError):
        spec(0, 11, 10)
    with pytest.raises(ValueError):
        ScheduleSpec("cosine", 0, 1, 10)
    with pytest.raises(ValueError):
        ScheduleSpec.constant(1.5, 10)
    with pytest.raises(ValueError):
        spec(0, 0, 0)


def test_constant():
    s = ScheduleSpec.constant(0.5, 20)
    assert set(beta_trajectory(s)) == {0.5}


def test_fraction_schedules():
    s = make_fraction_schedule(100, 0, 0.3)
    assert (s.t_start, s.t_end) == (0, 30)
    assert make_fraction_schedule(50, 0, 0.1).t_end == 5
    s = make_fraction_schedule(10, 0, 1.0)
    assert s.t_end == 10 and beta_at(s, 10) == 0.0 and beta_at(s, 9) > 0


def test_fraction_default_is_first_thirty_percent():
    s = make_fraction_schedule(2000)
    assert (s.t_start, s.t_end) == (0, 600)


def test_fraction_rounding_keeps_a_window():
    s = make_fraction_schedule(3, 0.1, 0.2)
    assert s.t_end > s.t_start


def test_fraction_errors():
    with pytest.raises(ValueError):
        make_fraction_schedule(100, 0.5, 0.2)
    with pytest.raises(ValueError):
        make_fraction_schedule(100, 0.0, 1.2)


def test_trajectory_starts_at_step_one():
    traj = beta_trajectory(spec(0, 4, 6))
    assert traj == [0.75, 0.5, 0.25, 0.0, 0.0, 0.0]


@st.composite
def specs(draw):
    T = draw(st.integers(1, 5000))
    ts = draw(st.integers(0, T))
    te = draw(st.integers(ts, T))
    return spec(ts, te, T)


@settings(max_examples=300, deadline=None)
@given(specs())
def test_monotone_and_in_range(s):
    traj = [beta_at(s, t) for t in range(0, s.total_steps + 1, max(1, s.total_steps // 200))]
    assert all(0.0 <= b <= 1.0 for b in traj)
    assert all(a >= b for a, b in zip(traj, traj[1:]))
    assert beta_at(s, 0) == 1.0 or s.t_start == s.t_end == 0


@settings(max_examples=300, deadline=None)
@given(specs(), st.data())
def test_plateaus(s, data):
    t = data.draw(st.integers(0, s.total_steps))
    if t <= s.t_start and not (s.t_start == s.t_end == t):
        assert beta_at(s, t) == 1.0
    if t >= s.t_end:
        assert beta_at(s, t) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10000), st.floats(0, 1), st.floats(0, 1))
def test_fraction_schedules_are_valid(T, a, b):
    lo, hi = min(a, b), max(a, b)
    s = make_fraction_schedule(T, lo, hi)
    assert 0 <= s.t_start <= s.t_end <= T
    assert beta_at(s, T) == 0.0 or hi == 1.0 and s.t_end == T and beta_at(s, T) == 0.0
