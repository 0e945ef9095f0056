"""LES pipeline tests: per-stage hand cases, the merged/twopass equivalence,
quiescence, the projection property, and smoke runs."""

import numpy as np
import pytest

from gmcf_mini import les
from gmcf_mini.coupling import WindProfile
from gmcf_mini.errors import NumericsError
from gmcf_mini.les import FlowState
from gmcf_mini.sor import Grid


def make_state(im=8, jm=8, km=8, h=1.0, dt=0.5, vn=1e-5, cs=0.14):
    return FlowState.create(Grid.uniform(im, jm, km, h), dt=dt, vn=vn, cs=cs)


def zero_inflow(km):
    z = np.zeros(km, dtype=np.float32)
    return WindProfile(z, z.copy(), z.copy())


def uniform_inflow(km, value=1.0):
    return WindProfile(
        np.full(km, value, dtype=np.float32),
        np.zeros(km, dtype=np.float32),
        np.zeros(km, dtype=np.float32),
    )


def randomize(state, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    for f in (state.u, state.v, state.w):
        f[...] = rng.uniform(-scale, scale, size=f.shape).astype(np.float32)


def snapshot(state):
    return {name: getattr(state, name).copy() for name in ("u", "v", "w", "fgh", "fgh_old", "p")}


def changed_fields(state, before):
    return {name for name, arr in before.items() if not np.array_equal(arr, getattr(state, name))}


# ---------------------------------------------------------------------------
# velnw
# ---------------------------------------------------------------------------

def test_velnw_uniform_pressure_no_force_is_identity():
    state = make_state()
    state.p[...] = 3.25
    before = state.u.copy()
    les.velnw(state)
    assert np.array_equal(state.u, before)


def test_velnw_constant_force_hand_value():
    state = make_state(dt=0.5)
    state.fgh[..., 0] = 1.0
    les.velnw(state)
    assert np.allclose(state.u[1:-1, 1:-1, 1:-1], 0.5)
    assert np.allclose(state.v[1:-1, 1:-1, 1:-1], 0.0)


def test_velnw_linear_pressure_unit_slope():
    state = make_state(h=1.0, dt=0.5)
    idx = np.arange(state.p.shape[0], dtype=np.float32)
    state.p[...] = idx[:, None, None]  # unit slope along x
    les.velnw(state)
    assert np.allclose(state.u[1:-1, 1:-1, 1:-1], -state.dt)


# ---------------------------------------------------------------------------
# bondv1
# ---------------------------------------------------------------------------

def test_bondv1_zero_inflow_zeroes_west_halo():
    state = make_state()
    randomize(state, 1)
    les.bondv1(state, zero_inflow(8))
    assert np.all(state.u[0, :, 1:-1] == 0.0)


def test_bondv1_per_level_inflow():
    state = make_state()
    prof = WindProfile(
        np.arange(1, 9, dtype=np.float32), np.zeros(8), np.zeros(8)
    )
    les.bondv1(state, prof)
    for k in range(1, 9):
        assert np.all(state.u[0, :, k] == np.float32(k))


def test_bondv1_touches_halo_only():
    state = make_state()
    randomize(state, 2)
    interior = {f: getattr(state, f)[1:-1, 1:-1, 1:-1].copy() for f in ("u", "v", "w")}
    les.bondv1(state, uniform_inflow(8))
    for f, arr in interior.items():
        assert np.array_equal(getattr(state, f)[1:-1, 1:-1, 1:-1], arr)


def test_bondv1_rejects_wrong_inflow_length():
    state = make_state(km=8)
    with pytest.raises(ValueError, match="levels"):
        les.bondv1(state, zero_inflow(5))


def test_bondv1_periodic_and_outflow_faces():
    state = make_state()
    randomize(state, 3)
    les.bondv1(state, zero_inflow(8))
    g = state.grid
    for f in state.velocities():
        assert np.array_equal(f[:, 0, :], f[:, g.jm, :])
        assert np.array_equal(f[:, g.jm + 1, :], f[:, 1, :])
        assert np.array_equal(f[g.im + 1, 1:-1, 1:-1], f[g.im, 1:-1, 1:-1])
    assert np.all(state.w[:, :, 0] == 0.0)
    assert np.all(state.w[:, :, g.km + 1] == 0.0)


# ---------------------------------------------------------------------------
# velfg: merged vs twopass
# ---------------------------------------------------------------------------

def test_velfg_zero_velocity_gives_zero_force():
    state = make_state()
    les.velfg_merged(state)
    assert np.all(state.fgh == 0.0)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_velfg_merged_equals_twopass_bitwise(seed):
    a = make_state(16, 16, 8)
    randomize(a, seed)
    b = make_state(16, 16, 8)
    for src, dst in zip(a.velocities(), b.velocities()):
        dst[...] = src
    les.velfg_merged(a)
    les.velfg_twopass(b)
    assert np.array_equal(a.fgh, b.fgh)


def test_velfg_linear_u_has_no_viscous_x_term():
    # u = x: diu1 is constant, so the diffusive term vanishes and the force
    # must not depend on the molecular viscosity at all
    outs = []
    for vn in (0.0, 1000.0):
        state = make_state(vn=vn)
        idx = np.arange(state.u.shape[0], dtype=np.float32)
        state.u[...] = idx[:, None, None]
        les.velfg_merged(state)
        outs.append(state.fgh.copy())
    assert np.array_equal(outs[0], outs[1])


# ---------------------------------------------------------------------------
# feedbf
# ---------------------------------------------------------------------------

def test_feedbf_no_mask_is_identity():
    state = make_state()
    randomize(state, 4)
    before = state.fgh.copy()
    les.feedbf(state)
    assert np.array_equal(state.fgh, before)


def test_feedbf_hand_value():
    # force recorded from the un-masked velocity: -(1/0.5) * 2 = -4
    state = make_state(dt=0.5)
    state.mask[...] = 1.0
    state.u[...] = 2.0
    les.feedbf(state)
    assert np.allclose(state.fgh[1:-1, 1:-1, 1:-1, 0], -4.0)


def test_feedbf_solid_cells_end_up_still():
    state = make_state(dt=0.5)
    state.mask[...] = 1.0
    state.u[...] = 2.0
    state.v[...] = -1.0
    les.feedbf(state)
    assert np.all(state.u[1:-1, 1:-1, 1:-1] == 0.0)
    assert np.all(state.v[1:-1, 1:-1, 1:-1] == 0.0)
    # a solid cell with zero velocity is a fixed point of the composition
    state.fgh[...] = 0.0
    state.fgh_old[...] = 0.0
    les.feedbf(state)
    les.adam(state)
    les.velnw(state)
    assert np.allclose(state.u[1:-1, 1:-1, 1:-1], 0.0)


# ---------------------------------------------------------------------------
# les_viscosity
# ---------------------------------------------------------------------------

def test_viscosity_uniform_velocity_no_effect():
    state = make_state()
    state.u[...] = 1.5
    before = state.fgh.copy()
    les.les_viscosity(state)
    assert np.array_equal(state.fgh, before)


def test_strain_magnitude_pure_shear():
    state = make_state(h=1.0)
    shear = 0.25
    y = np.arange(state.u.shape[1], dtype=np.float32)
    state.u[...] = shear * y[None, :, None]
    smag = les.strain_magnitude(state)
    assert np.allclose(smag, shear / np.sqrt(2.0), rtol=1e-6)


def test_viscosity_zero_cs_is_noop():
    state = make_state(cs=0.0)
    randomize(state, 5)
    before = state.fgh.copy()
    les.les_viscosity(state)
    assert np.array_equal(state.fgh, before)


# ---------------------------------------------------------------------------
# adam
# ---------------------------------------------------------------------------

def test_adam_constant_history_is_identity():
    state = make_state()
    state.fgh[...] = 2.0
    state.fgh_old[...] = 2.0
    les.adam(state)
    assert np.all(state.fgh == np.float32(2.0))


def test_adam_hand_value_and_bookkeeping():
    state = make_state()
    state.fgh[...] = 2.0
    state.fgh_old[...] = 0.0
    les.adam(state)
    assert np.all(state.fgh == np.float32(3.0))  # 1.5*2 - 0.5*0
    assert np.all(state.fgh_old == np.float32(2.0))  # pre-update force


# ---------------------------------------------------------------------------
# press
# ---------------------------------------------------------------------------

def test_press_divergence_free_field_keeps_zero_pressure():
    state = make_state()
    state.u[...] = 1.0  # spatially uniform => zero divergence
    state.v[...] = 1.0
    res = les.press(state, n_iter=10)
    assert np.allclose(state.p, 0.0)
    assert res[-1] == 0.0


def test_press_default_runs_fifty_iterations():
    state = make_state()
    randomize(state, 6)
    res = les.press(state)
    assert res.shape == (50,)


def test_projection_reduces_divergence_tenfold():
    state = make_state(16, 16, 8)
    randomize(state, 7)
    div_before = np.abs(les.divergence(state)).max()
    les.press(state, n_iter=50)
    state.fgh[...] = 0.0
    les.velnw(state)  # applies -dt * grad p only
    div_after = np.abs(les.divergence(state)).max()
    assert div_after < div_before / 10.0


# ---------------------------------------------------------------------------
# step pipeline
# ---------------------------------------------------------------------------

def test_step_quiescent_fluid_is_fixed_point():
    state = make_state()
    les.step(state, zero_inflow(8), n_iter=5)
    for name in ("u", "v", "w", "p", "fgh", "fgh_old"):
        assert np.all(getattr(state, name) == 0.0), name


def test_step_smoke_uniform_inflow_bounded():
    state = make_state(16, 16, 8, dt=0.05)
    inflow = uniform_inflow(8)
    for _ in range(10):
        les.step(state, inflow, n_iter=10)
    for f in state.velocities():
        assert np.isfinite(f).all()
    assert np.abs(state.u).max() <= 2.0


def test_step_building_mask_damps_interior_velocity():
    state = make_state(16, 16, 8, dt=0.05)
    state.mask[6:12, 6:12, 2:7] = 1.0
    inflow = uniform_inflow(8)
    for _ in range(10):
        les.step(state, inflow, n_iter=10)
    inside = np.abs(state.u[7:11, 7:11, 3:6])
    assert inside.max() < 0.1 * 1.0


def test_step_reports_blowup_stage():
    state = make_state()
    state.u[1, 1, 1] = np.inf
    with pytest.raises(NumericsError) as err:
        les.step(state, zero_inflow(8), n_iter=2)
    assert err.value.stage == "velnw"


def test_stages_touch_only_documented_fields():
    state = make_state()
    randomize(state, 8)
    state.p[1:-1, 1:-1, 1:-1] = np.random.default_rng(9).uniform(
        -1, 1, (8, 8, 8)
    ).astype(np.float32)
    state.mask[3:5, 3:5, 3:5] = 1.0

    checks = [
        (lambda: les.velnw(state), {"u", "v", "w"}),
        (lambda: les.bondv1(state, uniform_inflow(8)), {"u", "v", "w"}),
        (lambda: les.velfg_merged(state), {"fgh"}),
        (lambda: les.feedbf(state), {"fgh", "u", "v", "w"}),
        (lambda: les.les_viscosity(state), {"fgh"}),
        (lambda: les.adam(state), {"fgh", "fgh_old"}),
        (lambda: les.press(state, n_iter=5), {"p"}),
    ]
    for fn, allowed in checks:
        before = snapshot(state)
        fn()
        assert changed_fields(state, before) <= allowed
