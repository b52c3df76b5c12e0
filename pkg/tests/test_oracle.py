"""Grid oracle tests: extremum search, regions, and the drift quantities."""

import numpy as np
import pytest

import resil.oracle as oracle_mod
from resil.oracle import (
    EmptyRegionError,
    OracleSettings,
    argmax_h,
    grid_minimize,
    maximize,
    min_invariance_margin,
    min_offline_drift,
    min_recovery_drift,
    minimize,
    sup_h,
)
from resil.subsystem import SAFE_SET, buffer_region, safe_minus_buffer

from test_subsystem import cstr_hand_drift, make_cstr, make_toy


def settings(n=201, rounds=2, workers=1):
    return OracleSettings(grid_points_per_dim=n, refinement_rounds=rounds,
                          workers=workers)


def quadratic(b):
    return (b[0] - 0.3) ** 2 + (b[1] + 0.2) ** 2


def test_grid_minimize_quadratic_converges():
    val, arg = grid_minimize(quadratic, [(-1, 1), (-1, 1)], None, settings(101, 3))
    assert val == pytest.approx(0.0, abs=1e-8)
    assert arg[0] == pytest.approx(0.3, abs=1e-4)
    assert arg[1] == pytest.approx(-0.2, abs=1e-4)


def test_grid_minimize_no_axes():
    val, arg = grid_minimize(lambda b: 7.5, [], None, settings())
    assert val == 7.5
    assert arg == ()


def test_tie_break_is_lexicographic_first():
    val, arg = grid_minimize(lambda b: 0.0 * b[0] + 0.0 * b[1],
                             [(-1, 1), (2, 4)], None, settings(11, 0))
    assert val == 0.0
    assert arg == (-1.0, 2.0)


def test_empty_region_raises():
    with pytest.raises(EmptyRegionError):
        grid_minimize(lambda b: b[0], [(-1, 1)], lambda b: b[0] > 5, settings(11, 1))


def test_predicate_restricts_feasible_set():
    val, arg = grid_minimize(lambda b: b[0], [(-1, 1)],
                             lambda b: b[0] >= 0.5, settings(201, 0))
    assert val == pytest.approx(0.5)


def test_nan_objective_raises():
    def bad(b):
        return np.where(b[0] > 0, np.nan, b[0])
    with pytest.raises(FloatingPointError):
        grid_minimize(bad, [(-1, 1)], None, settings(11, 0))


def test_workers_do_not_change_result():
    ref = grid_minimize(quadratic, [(-1, 1), (-1, 1)], None, settings(101, 2, 1))
    par = grid_minimize(quadratic, [(-1, 1), (-1, 1)], None, settings(101, 2, 4))
    assert ref == par


def test_chunked_scan_matches_single_chunk(monkeypatch):
    ref = grid_minimize(quadratic, [(-1, 1), (-1, 1)], None, settings(101, 1))
    monkeypatch.setattr(oracle_mod, "_CHUNK_BUDGET", 500)
    chunked = grid_minimize(quadratic, [(-1, 1), (-1, 1)], None, settings(101, 1))
    assert ref == chunked


def test_refinement_improves_monotonically():
    coarse, _ = grid_minimize(quadratic, [(-1, 1), (-1, 1)], None, settings(51, 0))
    fine, _ = grid_minimize(quadratic, [(-1, 1), (-1, 1)], None, settings(51, 3))
    assert fine <= coarse


def test_minimize_region_membership():
    s = make_cstr()
    st = settings(101, 1)
    for region in (SAFE_SET, safe_minus_buffer(1000.0), buffer_region(1000.0)):
        ex = minimize(lambda T, c: (T - 377.0) ** 2 + c, region, s, st)
        T, c = ex.arg
        hval = (T - 300) * (400 - T)
        assert 300 <= T <= 400 and 0 <= c <= 5
        if region.kind == "safe_set":
            assert hval >= -1e-9
        elif region.kind == "buffer":
            assert hval >= 1000.0 - 1e-9
        else:
            assert -1e-9 <= hval <= 1000.0


def test_maximize_toy_h():
    s = make_toy()
    ex = maximize(lambda x: 1 - x, SAFE_SET, s, settings())
    assert ex.value == pytest.approx(2.0)
    assert ex.kind == "max"
    assert ex.arg == (-1.0,)


def test_sup_h_toy_and_cstr():
    assert sup_h(make_toy(), settings(2001)) == pytest.approx(2.0)
    # 401 points place a node exactly on the vertex at T=350.
    assert sup_h(make_cstr(), settings(401)) == pytest.approx(2500.0)
    # Even grids straddle the vertex; refinement has to close the gap.
    assert sup_h(make_cstr(), settings(200, rounds=2)) == pytest.approx(2500.0, abs=1e-6)


def test_argmax_h_fills_pruned_axes_with_midpoints():
    s = make_cstr()
    x0 = argmax_h(s, settings(401))
    assert x0[0] == pytest.approx(350.0)
    assert x0[1] == 2.5  # c does not enter h; midpoint fill
    assert argmax_h(make_toy(), settings(2001)) == (-1.0,)


def test_min_offline_drift_toy():
    ex = min_offline_drift(make_toy(), settings(2001))
    assert ex.value == pytest.approx(-1.0)
    # Constant in x, so the tie-break lands on the first grid point; the
    # reconstructed adversarial input is the +1 vertex.
    assert ex.arg == (-1.0, 1.0)


def test_min_offline_drift_cstr_corner():
    # The reaction heat grows with T and c while the box edge caps heating,
    # so the worst offline point is the hot corner under full heating.
    ex = min_offline_drift(make_cstr(), settings(401))
    expected = cstr_hand_drift(400.0, 5.0, 2.7e6)
    assert ex.value == pytest.approx(expected, rel=1e-9)
    T, c, u = ex.arg
    assert (T, c, u) == (400.0, 5.0, 2.7e6)


def test_min_recovery_drift_toy():
    ex = min_recovery_drift(make_toy(), 0.1, settings(2001))
    assert ex.value == pytest.approx(1.0)
    x = ex.arg[0]
    assert 0 <= 1 - x <= 0.1


def test_min_invariance_margin_toy():
    ex = min_invariance_margin(make_toy(), 0.1, 1.0, settings(2001))
    assert ex.value == pytest.approx(1.0, abs=1e-9)


def test_invariance_margin_grows_with_z():
    s = make_cstr()
    st = settings(201, 1)
    lo = min_invariance_margin(s, 1000.0, 1.0, st).value
    hi = min_invariance_margin(s, 1000.0, 4.0, st).value
    assert hi >= lo


def test_settings_validation():
    with pytest.raises(ValueError):
        OracleSettings(grid_points_per_dim=1)
    with pytest.raises(ValueError):
        OracleSettings(refinement_rounds=-1)
    with pytest.raises(ValueError):
        OracleSettings(workers=0)


def make_toy_variant(mu, input_box=((-1.0, 1.0),)):
    from resil.exprs import parse_expression
    from resil.subsystem import Subsystem
    sv = ("x1",)
    return Subsystem(
        name="S1", state_vars=sv, input_vars=("u1",),
        f=(parse_expression("0", sv),),
        g=((parse_expression("1", sv),),),
        h=parse_expression("1 - x1", sv),
        mu=(parse_expression(mu, sv),),
        state_box=((-1.0, 1.0),), input_box=input_box,
    )


def test_min_offline_drift_one_sided_input_box():
    ex = min_offline_drift(make_toy_variant("0", ((0.0, 0.5),)), settings(2001))
    assert ex.value == pytest.approx(-0.5)


def test_min_recovery_drift_proportional_law():
    # mu(x) = -x gives h-dot = x, so the band minimum sits at x = 1 - d.
    s = make_toy_variant("-x1")
    for d in (0.25, 0.5):
        ex = min_recovery_drift(s, d, settings(2001))
        assert ex.value == pytest.approx(1 - d, abs=1e-6)
        assert ex.value >= 1 - d  # sampled minima upper-bound the true one


def test_min_recovery_drift_zero_law():
    ex = min_recovery_drift(make_toy_variant("0"), 0.5, settings(2001))
    assert ex.value == pytest.approx(0.0, abs=1e-12)


def test_min_invariance_margin_zero_law_full_set():
    ex = min_invariance_margin(make_toy_variant("0"), 0.0, 1.0, settings(2001))
    assert ex.value == pytest.approx(0.0, abs=1e-12)


def test_min_invariance_margin_proportional_law():
    # mu(x) = -x, z=2, d=0: objective x + 2(1-x) = 2 - x, minimum 1 at x=1.
    ex = min_invariance_margin(make_toy_variant("-x1"), 0.0, 2.0, settings(2001))
    assert ex.value == pytest.approx(1.0, abs=1e-9)


def test_offline_vertex_trick_matches_product_grid():
    # Affine-in-u exactness: scanning only state axes with per-point vertex
    # selection must equal brute force over a dense (x, u) product grid.
    from resil.exprs import parse_expression
    from resil.subsystem import Subsystem
    rng = np.random.default_rng(21)
    for trial in range(3):
        a, b, c = rng.uniform(-2, 2, size=3).round(3)
        sv = ("x1",)
        s = Subsystem(
            name=f"R{trial}", state_vars=sv, input_vars=("u1", "u2"),
            f=(parse_expression(f"{a}*x1", sv),),
            g=((parse_expression(f"{b}", sv), parse_expression(f"{c}*x1", sv)),),
            h=parse_expression("1 - x1*x1", sv),
            mu=(parse_expression("0", sv), parse_expression("0", sv)),
            state_box=((-1.0, 1.0),), input_box=((-1.0, 2.0), (-0.5, 0.5)),
        )
        ex = min_offline_drift(s, settings(301, rounds=0))
        xs = np.linspace(-1, 1, 301)
        u1s = np.linspace(-1, 2, 61)[:, None]
        u2s = np.linspace(-0.5, 0.5, 61)[None, :]
        brute = np.inf
        for x in xs:
            grad = -2 * x
            vals = grad * (a * x + b * u1s + c * x * u2s)
            brute = min(brute, float(vals.min()))
        assert ex.value == pytest.approx(brute, abs=1e-12)


def test_grid_doubling_never_increases_minimum():
    s = make_cstr()
    for n in (101, 201):
        coarse = min_offline_drift(s, settings(n, rounds=0)).value
        fine = min_offline_drift(s, settings(2 * n - 1, rounds=0)).value
        assert fine <= coarse + 1e-9
