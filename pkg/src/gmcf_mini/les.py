"""Miniature large-eddy simulation: the seven-stage per-step pipeline.

Stages, in call order: velocity update from the stored force and pressure
gradient (velnw), boundary conditions with coupled inflow (bondv1), body
force from advection and diffusion (velfg), building feedback forcing
(feedbf), Smagorinsky eddy viscosity (les_viscosity), Adams-Bashforth
combination (adam), and the pressure solve (press).

``velfg`` exists twice on purpose: ``velfg_twopass`` materializes the
advective (cov) and derivative (diu) fields over the whole extended domain
and then reads them at neighboring points, while ``velfg_merged`` computes
the same values inline for the base and +1-shifted positions in a single
pass, holding each point's force in a private value before one write.  The
two must agree bitwise; the twopass form is the equivalence oracle for the
merged one.

Formula conventions chosen here (the stage names fix only the roles):
velnw uses staggered pressure differences, feedbf applies -(mask/dt)*vel
and then masks solid-cell velocity, the eddy viscosity is
(cs*delta)^2 * |S| with |S|^2 = sum_ij S_ij S_ij, and boundaries are
inflow west / zero-gradient east / periodic lateral / free-slip
top-bottom with no penetration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import coupling, sor
from .coupling import WIND_PROFILE_DATA_ID, SyncStatus, WindProfile
from .errors import NumericsError
from .sor import Grid, Scheme


@dataclass
class FlowState:
    """Prognostic state: velocities, merged 3-component force, pressure."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    fgh: np.ndarray  # (im+2, jm+2, km+2, 3), force components merged
    fgh_old: np.ndarray
    p: np.ndarray
    mask: np.ndarray  # 1 inside buildings, 0 in free flow
    grid: Grid
    dt: float
    vn: float = 1e-5  # molecular viscosity
    cs: float = 0.14  # Smagorinsky constant
    _coeffs: sor.SorCoeffs | None = field(default=None, repr=False)

    @classmethod
    def create(cls, grid: Grid, dt: float, vn: float = 1e-5, cs: float = 0.14) -> "FlowState":
        shape = (grid.im + 2, grid.jm + 2, grid.km + 2)
        z = lambda: np.zeros(shape, dtype=np.float32)  # noqa: E731
        return cls(
            u=z(), v=z(), w=z(),
            fgh=np.zeros(shape + (3,), dtype=np.float32),
            fgh_old=np.zeros(shape + (3,), dtype=np.float32),
            p=z(), mask=z(), grid=grid, dt=dt, vn=vn, cs=cs,
        )

    def coeffs(self) -> sor.SorCoeffs:
        if self._coeffs is None:
            self._coeffs = sor.build_uniform_coeffs(self.grid)
        return self._coeffs

    def velocities(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.u, self.v, self.w


def _box(si, sj, sk):
    return (si, sj, sk)


def _shift(box, axis, d):
    out = list(box)
    out[axis] = slice(box[axis].start + d, box[axis].stop + d)
    return tuple(out)


def _axis_view(arr_1d: np.ndarray, axis: int) -> np.ndarray:
    shape = [1, 1, 1]
    shape[axis] = -1
    return arr_1d.reshape(shape)


def _deriv(f: np.ndarray, axis: int, box, grid: Grid) -> np.ndarray:
    """First derivative of f along axis over the box (halo coordinates).

    Central differences everywhere the +1 neighbor exists; the top edge of
    the array (index N+1) falls back to a one-sided backward difference.
    """
    spac = (grid.dx1, grid.dy1, grid.dzn)[axis]
    sl = box[axis]
    n_int = f.shape[axis] - 2
    out = np.empty(tuple(s.stop - s.start for s in box), dtype=np.float32)
    c_hi = min(sl.stop, n_int + 1)  # central part covers [sl.start, c_hi)
    if c_hi > sl.start:
        cbox = list(box)
        cbox[axis] = slice(sl.start, c_hi)
        cbox = tuple(cbox)
        denom = spac[sl.start : c_hi] + spac[sl.start + 1 : c_hi + 1]
        obox = list((slice(None),) * 3)
        obox[axis] = slice(0, c_hi - sl.start)
        out[tuple(obox)] = (f[_shift(cbox, axis, 1)] - f[_shift(cbox, axis, -1)]) / _axis_view(
            denom, axis
        )
    if sl.stop > n_int + 1:  # single one-sided plane at index n_int + 1
        tbox = list(box)
        tbox[axis] = slice(n_int + 1, n_int + 2)
        tbox = tuple(tbox)
        obox = list((slice(None),) * 3)
        obox[axis] = slice(c_hi - sl.start, None)
        out[tuple(obox)] = (f[tbox] - f[_shift(tbox, axis, -1)]) / np.float32(spac[n_int + 1])
    return out


def _advec(state: FlowState, m: int, axis: int, box) -> np.ndarray:
    """Advective flux: (advecting velocity along axis) * d(vel_m)/d(axis)."""
    vel_m = state.velocities()[m]
    carrier = state.velocities()[axis]
    return carrier[box] * _deriv(vel_m, axis, box, state.grid)


def _combine_force(state: FlowState, m: int, cov, cov_p1, diu, diu_p1) -> None:
    """The neighbor-combination producing force component m over the interior.

    ``cov``/``diu`` hold the three direction components at (i,j,k);
    ``cov_p1``/``diu_p1`` the same quantities at the +1-shifted point along
    each component's own direction.  The staggered direction (x for m=0,
    y for m=1, z for m=2) uses the spacing-weighted average, the other two
    a plain mean; the diffusive part differences the diu terms.
    """
    g = state.grid
    dx_i = _axis_view(g.dx1[1 : g.im + 1], 0)
    dx_i1 = _axis_view(g.dx1[2 : g.im + 2], 0)
    dy_j = _axis_view(g.dy1[1 : g.jm + 1], 1)
    dy_j1 = _axis_view(g.dy1[2 : g.jm + 2], 1)
    dz_k = _axis_view(g.dzn[1 : g.km + 1], 2)
    dz_k1 = _axis_view(g.dzn[2 : g.km + 2], 2)
    two = np.float32(2.0)

    if m == 0:
        covx = (dx_i1 * cov[0] + dx_i * cov_p1[0]) / (dx_i + dx_i1)
        covy = (cov[1] + cov_p1[1]) / two
        covz = (cov[2] + cov_p1[2]) / two
        df = (
            two * (-diu[0] + diu_p1[0]) / (dx_i + dx_i1)
            + (-diu[1] + diu_p1[1]) / dy_j
            + (-diu[2] + diu_p1[2]) / dz_k
        )
    elif m == 1:
        covx = (cov[0] + cov_p1[0]) / two
        covy = (dy_j1 * cov[1] + dy_j * cov_p1[1]) / (dy_j + dy_j1)
        covz = (cov[2] + cov_p1[2]) / two
        df = (
            (-diu[0] + diu_p1[0]) / dx_i
            + two * (-diu[1] + diu_p1[1]) / (dy_j + dy_j1)
            + (-diu[2] + diu_p1[2]) / dz_k
        )
    else:
        covx = (cov[0] + cov_p1[0]) / two
        covy = (cov[1] + cov_p1[1]) / two
        covz = (dz_k1 * cov[2] + dz_k * cov_p1[2]) / (dz_k + dz_k1)
        df = (
            (-diu[0] + diu_p1[0]) / dx_i
            + (-diu[1] + diu_p1[1]) / dy_j
            + two * (-diu[2] + diu_p1[2]) / (dz_k + dz_k1)
        )
    covc = covx + covy + covz
    force = -covc + np.float32(state.vn) * df
    state.fgh[1:-1, 1:-1, 1:-1, m] = force


def velfg_merged(state: FlowState) -> None:
    """Single-pass force computation: cov/diu evaluated inline at the base
    and +1-shifted points, combined immediately, one write per point."""
    g = state.grid
    base = _box(slice(1, g.im + 1), slice(1, g.jm + 1), slice(1, g.km + 1))
    for m in range(3):
        vel = state.velocities()[m]
        cov, cov_p1, diu, diu_p1 = [], [], [], []
        for d in range(3):
            shifted = _shift(base, d, 1)
            cov.append(_advec(state, m, d, base))
            cov_p1.append(_advec(state, m, d, shifted))
            diu.append(_deriv(vel, d, base, g))
            diu_p1.append(_deriv(vel, d, shifted, g))
        _combine_force(state, m, cov, cov_p1, diu, diu_p1)


def velfg_twopass(state: FlowState) -> None:
    """Reference formulation: materialize cov/diu over the extended domain,
    then combine by reading the stored arrays at neighboring points."""
    g = state.grid
    ext = _box(slice(1, g.im + 2), slice(1, g.jm + 2), slice(1, g.km + 2))
    ib, jb, kb = slice(0, g.im), slice(0, g.jm), slice(0, g.km)
    for m in range(3):
        vel = state.velocities()[m]
        cov_full = [_advec(state, m, d, ext) for d in range(3)]
        diu_full = [_deriv(vel, d, ext, g) for d in range(3)]
        base_read = (ib, jb, kb)
        shifted_reads = [
            (slice(1, g.im + 1), jb, kb),
            (ib, slice(1, g.jm + 1), kb),
            (ib, jb, slice(1, g.km + 1)),
        ]
        cov = [cov_full[d][base_read] for d in range(3)]
        cov_p1 = [cov_full[d][shifted_reads[d]] for d in range(3)]
        diu = [diu_full[d][base_read] for d in range(3)]
        diu_p1 = [diu_full[d][shifted_reads[d]] for d in range(3)]
        _combine_force(state, m, cov, cov_p1, diu, diu_p1)


def velnw(state: FlowState) -> None:
    """u += dt * (force - grad p), staggered pressure differences.

    Face index i holds the velocity between pressure cells i and i+1, so
    the update covers faces 0..N-1 per axis: the interior plus the low
    boundary face, which keeps the discrete projection exact at cells next
    to the low boundaries.
    """
    g = state.grid
    dt = np.float32(state.dt)
    p = state.p
    two = np.float32(2.0)
    gx = (p[1:, 1:-1, 1:-1] - p[:-1, 1:-1, 1:-1]) * two / _axis_view(
        g.dx1[0 : g.im + 1] + g.dx1[1 : g.im + 2], 0
    )
    gy = (p[1:-1, 1:, 1:-1] - p[1:-1, :-1, 1:-1]) * two / _axis_view(
        g.dy1[0 : g.jm + 1] + g.dy1[1 : g.jm + 2], 1
    )
    gz = (p[1:-1, 1:-1, 1:] - p[1:-1, 1:-1, :-1]) * two / _axis_view(
        g.dzn[0 : g.km + 1] + g.dzn[1 : g.km + 2], 2
    )
    state.u[:-1, 1:-1, 1:-1] += dt * (state.fgh[:-1, 1:-1, 1:-1, 0] - gx)
    state.v[1:-1, :-1, 1:-1] += dt * (state.fgh[1:-1, :-1, 1:-1, 1] - gy)
    state.w[1:-1, 1:-1, :-1] += dt * (state.fgh[1:-1, 1:-1, :-1, 2] - gz)


def bondv1(state: FlowState, inflow: WindProfile) -> None:
    """Halo-only boundary conditions.

    West face takes the coupled inflow per level; east is zero-gradient
    outflow; the lateral faces wrap periodically; top and bottom are
    free-slip with no penetration.
    """
    g = state.grid
    if inflow.kp != g.km:
        raise ValueError(f"inflow has {inflow.kp} levels, grid has km={g.km}")
    ks = slice(1, g.km + 1)
    state.u[0, :, ks] = inflow.u[None, :]
    state.v[0, :, ks] = inflow.v[None, :]
    state.w[0, :, ks] = inflow.w[None, :]
    for f in state.velocities():
        f[g.im + 1, :, :] = f[g.im, :, :]  # outflow: zero gradient
        f[:, 0, :] = f[:, g.jm, :]  # periodic in y
        f[:, g.jm + 1, :] = f[:, 1, :]
    state.w[:, :, 0] = 0.0
    state.w[:, :, g.km + 1] = 0.0
    for f in (state.u, state.v):
        f[:, :, 0] = f[:, :, 1]
        f[:, :, g.km + 1] = f[:, :, g.km]


def feedbf(state: FlowState) -> None:
    """Building effects: feedback forcing plus direct velocity masking.

    fgh -= (mask/dt) * velocity per component, evaluated on the un-masked
    velocity; afterwards solid cells lose their velocity outright
    (vel *= 1 - mask).  The force term alone would leave a marginal
    period-2 oscillation under the Adams-Bashforth combination; masking
    the velocity is what makes solid cells actually stay still.
    """
    coef = state.mask[1:-1, 1:-1, 1:-1] / np.float32(state.dt)
    keep = np.float32(1.0) - state.mask[1:-1, 1:-1, 1:-1]
    for m, vel in enumerate(state.velocities()):
        state.fgh[1:-1, 1:-1, 1:-1, m] -= coef * vel[1:-1, 1:-1, 1:-1]
        vel[1:-1, 1:-1, 1:-1] *= keep


def strain_magnitude(state: FlowState) -> np.ndarray:
    """|S| over the interior with |S|^2 = sum_ij S_ij S_ij (central diffs)."""
    g = state.grid
    base = _box(slice(1, g.im + 1), slice(1, g.jm + 1), slice(1, g.km + 1))
    d = [[_deriv(vel, ax, base, g) for ax in range(3)] for vel in state.velocities()]
    half = np.float32(0.5)
    s11, s22, s33 = d[0][0], d[1][1], d[2][2]
    s12 = half * (d[0][1] + d[1][0])
    s13 = half * (d[0][2] + d[2][0])
    s23 = half * (d[1][2] + d[2][1])
    two = np.float32(2.0)
    return np.sqrt(s11**2 + s22**2 + s33**2 + two * (s12**2 + s13**2 + s23**2))


def les_viscosity(state: FlowState) -> None:
    """Smagorinsky eddy viscosity nu_t = (cs * delta)^2 |S| added to the
    diffusive force; a zero Smagorinsky constant makes the stage a no-op."""
    if state.cs == 0.0:
        return
    g = state.grid
    delta = np.cbrt(
        _axis_view(g.dx1[1 : g.im + 1], 0)
        * _axis_view(g.dy1[1 : g.jm + 1], 1)
        * _axis_view(g.dzn[1 : g.km + 1], 2)
    ).astype(np.float32)
    nu_t = (np.float32(state.cs) * delta) ** 2 * strain_magnitude(state)
    for m, vel in enumerate(state.velocities()):
        lap = np.zeros((g.im, g.jm, g.km), dtype=np.float32)
        for ax, spac in ((0, g.dx1), (1, g.dy1), (2, g.dzn)):
            up = [slice(1, -1)] * 3
            dn = [slice(1, -1)] * 3
            up[ax] = slice(2, None)
            dn[ax] = slice(0, -2)
            h = _axis_view(spac[1 : vel.shape[ax] - 1], ax)
            lap = lap + (vel[tuple(up)] - np.float32(2.0) * vel[1:-1, 1:-1, 1:-1] + vel[tuple(dn)]) / (h * h)
        state.fgh[1:-1, 1:-1, 1:-1, m] += nu_t * lap


def adam(state: FlowState) -> None:
    """Two-step Adams-Bashforth: force <- 1.5*current - 0.5*previous."""
    current = state.fgh.copy()
    state.fgh[...] = np.float32(1.5) * current - np.float32(0.5) * state.fgh_old
    state.fgh_old[...] = current


def divergence(state: FlowState) -> np.ndarray:
    """Staggered discrete divergence over the interior."""
    g = state.grid
    u, v, w = state.velocities()
    return (
        (u[1:-1, 1:-1, 1:-1] - u[:-2, 1:-1, 1:-1]) / _axis_view(g.dx1[1 : g.im + 1], 0)
        + (v[1:-1, 1:-1, 1:-1] - v[1:-1, :-2, 1:-1]) / _axis_view(g.dy1[1 : g.jm + 1], 1)
        + (w[1:-1, 1:-1, 1:-1] - w[1:-1, 1:-1, :-2]) / _axis_view(g.dzn[1 : g.km + 1], 2)
    )


def _pressure_halo(grid: Grid):
    """Pressure halo policy matching the velocity boundaries: no pressure
    correction through the prescribed inflow (west) and ground (bottom)
    faces, periodic laterally, zero outlets at the east face and open top."""
    jm = grid.jm

    def refresh(p: np.ndarray) -> None:
        p[0, :, :] = p[1, :, :]
        p[-1, :, :] = 0.0
        p[:, 0, :] = p[:, jm, :]
        p[:, -1, :] = p[:, 1, :]
        p[:, :, 0] = p[:, :, 1]
        p[:, :, -1] = 0.0

    return refresh


def press(
    state: FlowState,
    n_iter: int = 50,
    scheme: Scheme = Scheme.REDBLACK,
    omega: float | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Solve the pressure Poisson equation with rhs = div(u*)/dt.

    Returns the residual history.  Default relaxation factors: 1.7 for the
    red-black scheme, 1.0 for the twinned scheme.  The halo follows the
    flow's boundary policy (see _pressure_halo), not the solver tests'
    plain zero-Dirichlet setup.
    """
    if omega is None:
        omega = 1.7 if scheme is Scheme.REDBLACK else 1.0
    rhs = np.zeros_like(state.p)
    rhs[1:-1, 1:-1, 1:-1] = divergence(state) / np.float32(state.dt)
    p_new, residuals = sor.solve_pressure(
        state.p, rhs, state.coeffs(), omega, n_iter, scheme, workers,
        halo_fn=_pressure_halo(state.grid),
    )
    state.p[...] = p_new
    return residuals


_STAGE_FIELDS = ("u", "v", "w", "fgh", "fgh_old", "p")


def _check_finite(state: FlowState, stage: str) -> None:
    for name in _STAGE_FIELDS:
        if not np.isfinite(getattr(state, name)).all():
            raise NumericsError(stage, f"field {name}")


def step(
    state: FlowState,
    inflow: WindProfile,
    n_iter: int = 50,
    scheme: Scheme = Scheme.REDBLACK,
    workers: int = 1,
) -> FlowState:
    """Advance one time step through the full seven-stage pipeline."""
    stages = (
        ("velnw", lambda: velnw(state)),
        ("bondv1", lambda: bondv1(state, inflow)),
        ("velfg", lambda: velfg_merged(state)),
        ("feedbf", lambda: feedbf(state)),
        ("les", lambda: les_viscosity(state)),
        ("adam", lambda: adam(state)),
        ("press", lambda: press(state, n_iter, scheme, workers=workers)),
    )
    # blow-ups are caught by the per-stage finiteness check; the numpy
    # warnings they would emit first are pure noise
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for name, run in stages:
            run()
            _check_finite(state, name)
    return state


def les_main(
    tile,
    model_id: int,
    flow: FlowState,
    peers,
    n_steps: int,
    interval_microsteps: int,
    dt_microsteps: int = 1,
    data_id: int = WIND_PROFILE_DATA_ID,
    sor_iters: int = 50,
    scheme: Scheme = Scheme.REDBLACK,
    record: dict | None = None,
) -> coupling.ModelCouplingState:
    """Coupled model loop: sync every step, request a profile at coupled
    boundaries, run the pipeline with interpolated inflow.

    The first coupled interval uses the single received profile directly;
    once two profiles exist, each step interpolates at (t - interval), the
    window covered by the last two profiles.
    """
    state = coupling.init(tile, model_id, peers, dt_microsteps, interval_microsteps)
    steps_done = 0
    interval_idx = 0
    first_interp: int | None = None
    boundaries: list[dict] = []
    for _ in range(n_steps):
        if coupling.sync(state) is SyncStatus.PEER_FINISHED:
            break
        t = state.current_time
        if t % interval_microsteps == 0:
            got = coupling.pre_exchange(state, data_id)
            if got is SyncStatus.PEER_FINISHED:
                break
            interval_idx += 1
            boundaries.append({"interval": interval_idx, "time": t, "steps_before": steps_done})
        if state.series.can_interpolate:
            inflow = coupling.interpolate_profile(state.series, t - interval_microsteps)
            if first_interp is None:
                first_interp = interval_idx
        else:
            inflow = state.series.next
        step(flow, inflow, n_iter=sor_iters, scheme=scheme)
        steps_done += 1
        coupling.advance_step(state)
    coupling.finished(state)
    coupling.await_peer_fins(state)
    if record is not None:
        record["steps"] = steps_done
        record["first_interpolation_interval"] = first_interp
        record["boundaries"] = boundaries
        record["profiles_received"] = state.series.count_received
    return state
