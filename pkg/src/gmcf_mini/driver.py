"""Synthetic coarse-weather driver: serves a vertical wind profile on demand.

Stand-in for a mesoscale model: each coupled interval it evaluates a
logarithmic wind profile with a sinusoidal gust factor and answers any
pending data requests.  Purely demand-driven; with no consumer it sends
nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import coupling
from .coupling import WIND_PROFILE_DATA_ID, SyncStatus, WindProfile
from .errors import ConfigError

VON_KARMAN = 0.41


@dataclass
class DriverConfig:
    kp: int
    u_star: float  # friction velocity, m/s
    z0: float  # roughness length, m
    level_heights: np.ndarray  # m, strictly increasing, all > z0
    gust_amplitude: float = 0.0
    gust_period: float = 600.0  # s

    def __post_init__(self):
        self.level_heights = np.asarray(self.level_heights, dtype=np.float64)
        if self.level_heights.shape != (self.kp,):
            raise ConfigError(f"level_heights must have length kp={self.kp}")
        if not (np.diff(self.level_heights) > 0).all():
            raise ConfigError("level heights must be strictly increasing")
        if not (self.level_heights > self.z0).all():
            raise ConfigError("all level heights must exceed the roughness length")
        if self.gust_period <= 0:
            raise ConfigError("gust period must be positive")


def generate_profile(cfg: DriverConfig, t_seconds: float) -> WindProfile:
    """Log-law profile with a sinusoidal gust factor, deterministic in (cfg, t).

    u(k) = (u_star / 0.41) * ln(z_k / z0) * (1 + A * sin(2 pi t / T)); the
    phase is taken modulo one period so t and t + T give identical output.
    v and w are zero.  Computed in double precision, emitted single.
    """
    if t_seconds < 0:
        raise ConfigError("profile time must be >= 0")
    phase = 2.0 * math.pi * ((t_seconds % cfg.gust_period) / cfg.gust_period)
    gust = 1.0 + cfg.gust_amplitude * math.sin(phase)
    u = (cfg.u_star / VON_KARMAN) * np.log(cfg.level_heights / cfg.z0) * gust
    zeros = np.zeros(cfg.kp, dtype=np.float32)
    return WindProfile(u.astype(np.float32), zeros, zeros.copy())


def driver_main(
    tile,
    model_id: int,
    cfg: DriverConfig,
    peers,
    n_steps: int,
    interval_microsteps: int,
    microstep_seconds: float,
    data_id: int = WIND_PROFILE_DATA_ID,
    events: list | None = None,
) -> coupling.ModelCouplingState:
    """Producer time loop: sync, compute the profile, serve requests, repeat.

    After the loop the driver keeps serving its final offering until every
    peer has finished, then broadcasts its own FIN.  ``events`` (optional)
    collects one (step, model_time, served) record per completed step.
    """
    state = coupling.init(tile, model_id, peers, interval_microsteps, interval_microsteps)
    early = False
    for _ in range(n_steps):
        if coupling.sync(state) is SyncStatus.PEER_FINISHED:
            early = True
            break
        t = state.current_time
        profile = generate_profile(cfg, t * microstep_seconds)
        served = coupling.post_exchange(state, lambda p=profile: p, data_id)
        if events is not None:
            events.append((state.current_step + 1, t, served))
        coupling.advance_step(state)
    if not early:
        coupling.drain_until_peers_finished(state)
    coupling.finished(state)
    coupling.await_peer_fins(state)
    return state
