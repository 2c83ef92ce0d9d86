import itertools
import math

import numpy as np
import pytest

from torusmin.errors import InsufficientDataError, PreconditionError
from torusmin.flow import GeodesicPath, PhasePoint, integrate
from torusmin.minimal import (
    Line,
    accompanying_line,
    crossing_count,
    hedlund_constant,
    is_minimal,
    is_strictly_monotone,
    minimal_geodesic_for_line,
    project_to_line,
    rotation_number,
    same_image,
    same_rotation,
    sample_minimal_conditions,
)


def flat_path(theta, T=30.0, base=(0.0, 0.0)):
    from torusmin.geometry.metric import MetricField

    return integrate(MetricField.flat(), PhasePoint(base, theta), T)


# rotation numbers and lines


def test_rotation_examples():
    r = rotation_number(flat_path(math.pi / 4))
    assert r.value == pytest.approx(1.0) and r.rational == (1, 1)
    assert math.isinf(rotation_number(flat_path(math.pi / 2)).value)
    r = rotation_number(flat_path(math.atan(math.sqrt(2))))
    assert r.rational is None
    assert r.value == pytest.approx(math.sqrt(2), abs=1e-9)
    r = rotation_number(flat_path(math.atan2(1, 3)))
    assert r.rational == (1, 3)
    with pytest.raises(InsufficientDataError):
        rotation_number(flat_path(0.3, T=5.0))


def test_same_rotation():
    a = rotation_number(flat_path(math.atan(math.sqrt(2))))
    b = rotation_number(flat_path(math.atan(math.sqrt(2)), base=(0.3, 0.1)))
    c = rotation_number(flat_path(0.2))
    assert same_rotation(a, b)
    assert not same_rotation(a, c)


def test_accompanying_line_flat():
    p = flat_path(0.7, base=(0.2, 0.4))
    l = accompanying_line(p)
    assert np.abs(l.offset(p.x)).max() < 1e-9
    assert l.e @ np.array([math.cos(0.7), math.sin(0.7)]) == pytest.approx(1.0)


def test_accompanying_line_vertical():
    l = accompanying_line(flat_path(math.pi / 2))
    assert abs(l.direction[0]) < 1e-12


def test_accompanying_line_noise():
    rng = np.random.default_rng(13)
    s = np.linspace(-15, 15, 601)
    x = np.column_stack([s, 0.5 * s]) / math.sqrt(1.25)
    noisy = x + rng.uniform(-0.1, 0.1, (len(s), 1)) * np.array([-0.5, 1]) / math.sqrt(1.25)
    l = accompanying_line(noisy)
    assert np.abs(l.offset(x)).max() <= 0.1


def test_short_span_rejected():
    with pytest.raises(InsufficientDataError):
        accompanying_line(flat_path(0.1, T=3.0))


# projections and monotonicity


def test_projection_flat(flat):
    l = Line((0.0, 0.0), (1.0, 0.0))
    on = flat_path(0.0, T=10.0)
    s = project_to_line(flat, on, l)
    assert np.allclose(s, on.t)
    par = flat_path(0.0, T=10.0, base=(0.0, 0.5))
    s = project_to_line(flat, par, l)
    assert is_strictly_monotone(s)
    assert np.allclose(np.diff(s), np.diff(par.t))


def test_monotone_collapsing():
    assert is_strictly_monotone([0, 1, 1.00001, 2, 3])
    assert is_strictly_monotone([3, 2, 1])
    assert not is_strictly_monotone([0, 1, 0.5, 2])


# crossings


def test_crossing_examples():
    a = flat_path(0.0, T=10.0, base=(-5, 0))
    b = flat_path(1.0, T=10.0, base=(-2, -3))
    c = flat_path(0.0, T=10.0, base=(-5, 0.5))
    assert crossing_count(a, b) == 1
    assert crossing_count(a, c) == 0


def test_touching_not_counted():
    s = np.linspace(-1, 1, 201)
    a = np.column_stack([s, np.zeros_like(s)])
    bump = np.column_stack([s, 1e-8 * np.cos(np.pi * s / 2)])
    bump[0, 1] = bump[-1, 1] = -1e-8
    assert crossing_count(a, bump) == 0


def test_same_image():
    p = flat_path(0.3, T=20.0)
    q = GeodesicPath(p.t[40:] - p.t[40], p.x[40:], p.theta[40:])
    assert same_image(p, q)
    assert not same_image(p, flat_path(0.3, T=20.0, base=(0, 0.1)))


# minimal geodesics


def test_flat_minimal_is_line(flat, flat_grid):
    l = Line.from_angle((0.3, 0.2), 0.9)
    rec = minimal_geodesic_for_line(flat, l, 20.0, flat_grid)
    assert rec.deviation == 0.0 and rec.certified
    assert np.abs(l.offset(rec.path.x)).max() < 1e-12
    with pytest.raises(PreconditionError):
        minimal_geodesic_for_line(flat, l, 10.0, flat_grid)


def test_is_minimal_flat(flat, flat_grid):
    ok, slack = is_minimal(flat, flat_path(0.4, T=10.0), 1e-6, flat_grid)
    assert ok and slack == pytest.approx(0.0, abs=1e-9)
    corner = np.concatenate([np.linspace((0, 0), (3, 0), 31), np.linspace((3, 0), (3, 3), 31)[1:]])
    ok, slack = is_minimal(flat, corner, 1e-6, flat_grid)
    assert not ok and slack > 1.0


@pytest.fixture(scope="module")
def bumpy_records(bumpy, bumpy_grid):
    rng = np.random.default_rng(21)
    angles = [0.0, 0.3, 0.8, 1.3, 2.0, 2.6]
    recs, fails = sample_minimal_conditions(bumpy, len(angles), angles, bumpy_grid, rng, R=20.0)
    return recs, fails


def test_bumpy_minimal_certified(bumpy, bumpy_grid, bumpy_records):
    recs, fails = bumpy_records
    assert len(recs) == 6
    for rec in recs:
        assert rec.minimality_slack <= bumpy_grid.tol_min
        assert rec.stability < 1e-2
        x0 = rec.path.at(0.0)
        assert np.all((x0 >= 0) & (x0 < 1))


def test_bumpy_projection_monotone(bumpy, bumpy_records):
    for rec in bumpy_records[0]:
        assert is_strictly_monotone(project_to_line(bumpy, rec.path, rec.line))


def test_bumpy_non_crossing(bumpy_records):
    recs = bumpy_records[0]
    for a, b in itertools.combinations(recs, 2):
        if not same_image(a.path, b.path):
            assert crossing_count(a.path, b.path) <= 1


def test_hedlund_bounds(bumpy, bumpy_grid, bumpy_records, flat, flat_grid):
    from torusmin.geometry.metric import equivalence_constant

    recs = bumpy_records[0]
    D = hedlund_constant(bumpy, recs, bumpy_grid)
    A = equivalence_constant(bumpy)
    euclid = max(float(np.abs(r.line.offset(r.path.x)).max()) for r in recs)
    assert 0 < D <= A * euclid + 1e-9
    frecs = [minimal_geodesic_for_line(flat, Line.from_angle((0.1, 0.2), a), 20.0, flat_grid) for a in (0.2, 1.0)]
    assert hedlund_constant(flat, frecs) <= 1e-6
    with pytest.raises(PreconditionError):
        hedlund_constant(flat, [])


def test_deck_invariance(bumpy, bumpy_grid, bumpy_records):
    rec = bumpy_records[0][1]
    _, s0 = is_minimal(bumpy, rec.path, bumpy_grid.tol_min, bumpy_grid)
    for shift in ((1, 0), (0, 1)):
        _, s1 = is_minimal(bumpy, rec.path.translated(shift), bumpy_grid.tol_min, bumpy_grid)
        assert s1 == pytest.approx(s0, abs=1e-6)


def test_rational_direction_periodic(bumpy, bumpy_grid):
    # the horizontal line through the minimum band of f carries a periodic minimiser
    ys = np.linspace(0, 1, 200, endpoint=False)
    xs = np.linspace(0, 1, 64, endpoint=False)
    cost = [np.exp(bumpy.f(np.column_stack([xs, np.full(64, y)]))).mean() for y in ys]
    y0 = float(ys[int(np.argmin(cost))])
    rec = minimal_geodesic_for_line(bumpy, Line((0.0, y0), (1.0, 0.0)), 20.0, bumpy_grid)
    assert rec.certified
    x = rec.path.x
    xi = np.linspace(-4, 4, 65)
    here = np.interp(xi, x[:, 0], x[:, 1])
    next_cell = np.interp(xi + 1, x[:, 0], x[:, 1])
    assert np.abs(here - next_cell).max() < 1e-3


def test_sample_minimal_conditions_flat(flat, flat_grid):
    rng = np.random.default_rng(3)
    recs, fails = sample_minimal_conditions(flat, 4, [0.1, 2.0], flat_grid, rng)
    assert len(recs) == 4 and not fails
    for rec in recs:
        x0 = rec.path.at(0.0)
        assert np.all((x0 >= 0) & (x0 <= 1))
    assert sample_minimal_conditions(flat, 0, [0.1], flat_grid, rng) == ([], [])
