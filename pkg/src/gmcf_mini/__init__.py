"""Desk-scale coupled-model framework: a message-passing runtime with a
demand-driven coupling protocol, a miniature LES, a synthetic coarse-weather
driver, and red-black / twinned-double-buffer pressure solvers."""

from .config import RunConfig, parse_config
from .coupling import (
    WIND_PROFILE_DATA_ID,
    ModelCouplingState,
    SyncStatus,
    WindProfile,
    WindProfileSeries,
    interpolate_profile,
)
from .driver import DriverConfig, driver_main, generate_profile
from .errors import ConfigError, DeadlockError, GmcfError, NumericsError, ProtocolError
from .les import FlowState, les_main
from .runtime import (
    ModelSpec,
    Packet,
    PacketType,
    Runtime,
    RuntimeConfig,
    Tile,
    create_runtime,
    send,
    shift_pending,
    wait_for,
)
from .sor import (
    PADDING,
    BoundaryPoint,
    Face,
    Grid,
    Scheme,
    SorCoeffs,
    boundary_range,
    build_uniform_coeffs,
    map_boundary_gid,
    padded_range,
    redblack_iteration,
    solve_pressure,
    twinned_sweep,
)

__version__ = "0.1.0"
