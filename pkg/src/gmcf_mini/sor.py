"""3-D Poisson pressure solver on a structured grid with a one-cell halo.

Two iteration schemes over the same 7-point stencil:

* ``REDBLACK`` -- classic red-black successive over-relaxation: two color
  passes per iteration, updates in place, second pass reads first-pass
  results.  Single worker only.
* ``TWINNED``  -- a double-buffer scheme where every cell stores a pair of
  scalars.  A sweep reads one component everywhere and writes the other,
  so all interior points update independently and the sweep parallelizes
  over k-slabs without races.

Also houses the 1-D boundary-range work distribution used to enumerate
the three boundary-face families of an ``ip x jp x kp`` domain, plus the
range padding rule for splitting that range across compute units.

Fields are single precision; residual accumulation is double precision.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np


class Scheme(enum.Enum):
    REDBLACK = "redblack"
    TWINNED = "twinned"


class Face(enum.Enum):
    YZ = "yz"
    ZX = "zx"
    XY = "xy"


class _Padding:
    """Sentinel for gids that fall in the padded tail of the boundary range."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "PADDING"


PADDING = _Padding()


@dataclass(frozen=True)
class BoundaryPoint:
    """One boundary-face point.

    ``coords`` holds the two in-face indices: (j, k) on the YZ face,
    (k, i) on the ZX face, (j, i) on the XY face.
    """

    face: Face
    coords: tuple[int, int]


@dataclass
class Grid:
    """Interior cell counts plus per-axis spacing arrays.

    ``dx1`` has length im+3 (the x-direction stencils read one spacing past
    the last interior-adjacent pair), ``dy1`` length jm+2, ``dzn`` length
    km+2.  All spacings must be positive.
    """

    im: int
    jm: int
    km: int
    dx1: np.ndarray
    dy1: np.ndarray
    dzn: np.ndarray

    def __post_init__(self):
        if min(self.im, self.jm, self.km) < 1:
            raise ValueError("grid dimensions must be >= 1")
        self.dx1 = np.asarray(self.dx1, dtype=np.float32)
        self.dy1 = np.asarray(self.dy1, dtype=np.float32)
        self.dzn = np.asarray(self.dzn, dtype=np.float32)
        for name, arr, n in (
            ("dx1", self.dx1, self.im + 3),
            ("dy1", self.dy1, self.jm + 2),
            ("dzn", self.dzn, self.km + 2),
        ):
            if arr.shape != (n,):
                raise ValueError(f"{name} must have length {n}, got {arr.shape}")
            if not (arr > 0).all():
                raise ValueError(f"{name} must be positive everywhere")

    @classmethod
    def uniform(cls, im: int, jm: int, km: int, h: float) -> "Grid":
        return cls(
            im,
            jm,
            km,
            np.full(im + 3, h, dtype=np.float32),
            np.full(jm + 2, h, dtype=np.float32),
            np.full(km + 2, h, dtype=np.float32),
        )


@dataclass
class SorCoeffs:
    """Stencil coefficients: cn1 over the interior, cn2*/cn3*/cn4* per axis."""

    cn1: np.ndarray  # (im, jm, km)
    cn2l: np.ndarray  # (im,)
    cn2s: np.ndarray
    cn3l: np.ndarray  # (jm,)
    cn3s: np.ndarray
    cn4l: np.ndarray  # (km,)
    cn4s: np.ndarray


def build_uniform_coeffs(grid: Grid) -> SorCoeffs:
    """Coefficients for a uniformly spaced grid.

    With spacing h the neighbor weights are all 1/h^2 and cn1 = h^2/6, so
    the bracketed term is the standard 7-point Laplacian average and
    cn1 * (sum of neighbor weights) = 1 at every interior point.
    """
    spacings = np.concatenate([grid.dx1, grid.dy1, grid.dzn])
    h = float(spacings[0])
    if not np.all(spacings == np.float32(h)):
        raise ValueError("build_uniform_coeffs requires uniform spacing on all axes")
    w = np.float32(1.0 / (h * h))
    cn1 = np.full((grid.im, grid.jm, grid.km), np.float32(h * h / 6.0), dtype=np.float32)
    ax = np.full(grid.im, w, dtype=np.float32)
    ay = np.full(grid.jm, w, dtype=np.float32)
    az = np.full(grid.km, w, dtype=np.float32)
    return SorCoeffs(cn1, ax, ax.copy(), ay, ay.copy(), az, az.copy())


def make_field(im: int, jm: int, km: int) -> np.ndarray:
    """Zero field over the interior plus a halo of width 1 (float32)."""
    return np.zeros((im + 2, jm + 2, km + 2), dtype=np.float32)


def make_twinned(p: np.ndarray) -> np.ndarray:
    """Pack a field into a twinned array: both components start equal to p."""
    tp = np.empty(p.shape + (2,), dtype=np.float32)
    tp[..., 0] = p
    tp[..., 1] = p
    return tp


def _check_shapes(p: np.ndarray, rhs: np.ndarray, c: SorCoeffs) -> tuple[int, int, int]:
    if p.shape != rhs.shape:
        raise ValueError(f"p shape {p.shape} != rhs shape {rhs.shape}")
    im, jm, km = (n - 2 for n in p.shape[:3])
    if c.cn1.shape != (im, jm, km):
        raise ValueError(f"cn1 shape {c.cn1.shape} does not match interior ({im},{jm},{km})")
    return im, jm, km


def _neighbor_sum(p: np.ndarray, c: SorCoeffs) -> np.ndarray:
    """cn-weighted sum of the six neighbors over the interior block."""
    return (
        c.cn2l[:, None, None] * p[2:, 1:-1, 1:-1]
        + c.cn2s[:, None, None] * p[:-2, 1:-1, 1:-1]
        + c.cn3l[None, :, None] * p[1:-1, 2:, 1:-1]
        + c.cn3s[None, :, None] * p[1:-1, :-2, 1:-1]
        + c.cn4l[None, None, :] * p[1:-1, 1:-1, 2:]
        + c.cn4s[None, None, :] * p[1:-1, 1:-1, :-2]
    )


def _color_mask(im: int, jm: int, km: int, nrd: int) -> np.ndarray:
    # 0-based interior coordinates; nrd=0 hits even (i+j+k) parity, which is
    # the 1-based Fortran loop start i = 1 + mod(j+k+nrd, 2) stepping by 2.
    i, j, k = np.ogrid[0:im, 0:jm, 0:km]
    return (i + j + k + nrd) % 2 == 0


def redblack_iteration(p, rhs, c, omega, halo_fn=None) -> float:
    """One red-black SOR iteration (both color passes) in place.

    Per pass: reltmp = omega * (cn1 * (weighted neighbor sum - rhs) - p),
    p += reltmp on the pass's color, and the squared corrections accumulate
    into the returned residual.  ``halo_fn``, when given, refreshes the halo
    between the two passes (the default zero-Dirichlet policy needs nothing).
    """
    im, jm, km = _check_shapes(p, rhs, c)
    om = np.float32(omega)
    rhs_int = rhs[1:-1, 1:-1, 1:-1]
    p_int = p[1:-1, 1:-1, 1:-1]
    sor = 0.0
    for nrd in (0, 1):
        if halo_fn is not None:
            halo_fn(p)
        reltmp = om * (c.cn1 * (_neighbor_sum(p, c) - rhs_int) - p_int)
        mask = _color_mask(im, jm, km, nrd)
        p_int[mask] += reltmp[mask]
        sor += float(np.sum(reltmp[mask].astype(np.float64) ** 2))
    if halo_fn is not None:
        halo_fn(p)
    return sor


def _twinned_planes(tp, rhs, c, omega, nrd, k_lo, k_hi, partials) -> None:
    """Update destination planes k_lo..k_hi-1 (0-based interior k).

    Reads only the frozen source component, writes only the destination
    component of the given planes, and stores one double-precision partial
    residual per k-plane so the reduction order is worker-count independent.
    """
    om = np.float32(omega)
    src = tp[..., nrd]
    ks = slice(k_lo + 1, k_hi + 1)  # halo offset
    sub = (
        c.cn2l[:, None, None] * src[2:, 1:-1, ks]
        + c.cn2s[:, None, None] * src[:-2, 1:-1, ks]
        + c.cn3l[None, :, None] * src[1:-1, 2:, ks]
        + c.cn3s[None, :, None] * src[1:-1, :-2, ks]
        + c.cn4l[None, None, k_lo:k_hi] * src[1:-1, 1:-1, slice(k_lo + 2, k_hi + 2)]
        + c.cn4s[None, None, k_lo:k_hi] * src[1:-1, 1:-1, slice(k_lo, k_hi)]
    )
    centre = src[1:-1, 1:-1, ks]
    reltmp = om * (c.cn1[:, :, k_lo:k_hi] * (sub - rhs[1:-1, 1:-1, ks]) - centre)
    tp[1:-1, 1:-1, ks, 1 - nrd] = centre + reltmp
    sq = reltmp.astype(np.float64) ** 2
    for k in range(k_lo, k_hi):
        partials[k] = float(np.sum(sq[:, :, k - k_lo]))


def twinned_sweep(tp, rhs, c, omega, nrd: int) -> float:
    """One full-grid sweep reading component ``nrd``, writing component 1-nrd.

    Every interior point gets p_new = p_old + reltmp in the destination
    component; the source component is untouched.  Returns the sum of
    squared corrections (per-k-plane partials combined in k order).
    """
    if tp.ndim != 4 or tp.shape[3] != 2:
        raise ValueError(f"twinned array must have a trailing pair axis, got {tp.shape}")
    if nrd not in (0, 1):
        raise ValueError("nrd must be 0 or 1")
    _, _, km = _check_shapes(tp[..., 0], rhs, c)
    partials = np.zeros(km, dtype=np.float64)
    _twinned_planes(tp, rhs, c, omega, nrd, 0, km, partials)
    return float(np.sum(partials))


def _slab_bounds(km: int, workers: int) -> list[tuple[int, int]]:
    n = min(workers, km)
    edges = np.linspace(0, km, n + 1).astype(int)
    return [(int(edges[i]), int(edges[i + 1])) for i in range(n) if edges[i] < edges[i + 1]]


def solve_pressure(p0, rhs, c, omega, n_iter, scheme: Scheme, workers: int = 1, halo_fn=None):
    """Run ``n_iter`` full iterations (one iteration = both nrd passes).

    Returns ``(p, residuals)`` where ``residuals[i]`` is the accumulated
    squared-correction sum of iteration i.  ``TWINNED`` packs p0 into a
    twinned array and partitions k-slabs over ``workers`` with a barrier
    between the two passes; results are bitwise independent of the worker
    count.  ``REDBLACK`` supports a single worker only.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if scheme is Scheme.REDBLACK and workers > 1:
        raise ValueError("REDBLACK supports workers=1 only; use TWINNED for parallel runs")
    _, _, km = _check_shapes(p0, rhs, c)
    residuals = np.zeros(n_iter, dtype=np.float64)

    if scheme is Scheme.REDBLACK:
        p = p0.copy()
        for it in range(n_iter):
            residuals[it] = redblack_iteration(p, rhs, c, omega, halo_fn)
        return p, residuals

    tp = make_twinned(p0)
    if halo_fn is not None:
        halo_fn(tp[..., 0])
        halo_fn(tp[..., 1])
    slabs = _slab_bounds(km, workers)
    if len(slabs) <= 1:
        for it in range(n_iter):
            tot = 0.0
            for nrd in (0, 1):
                tot += twinned_sweep(tp, rhs, c, omega, nrd)
                if halo_fn is not None:
                    halo_fn(tp[..., 1 - nrd])
            residuals[it] = tot
    else:
        partials = np.zeros(km, dtype=np.float64)
        with ThreadPoolExecutor(max_workers=len(slabs)) as pool:
            for it in range(n_iter):
                tot = 0.0
                for nrd in (0, 1):
                    futs = [
                        pool.submit(_twinned_planes, tp, rhs, c, omega, nrd, lo, hi, partials)
                        for lo, hi in slabs
                    ]
                    for f in futs:
                        f.result()  # barrier between the two passes
                    tot += float(np.sum(partials))
                    if halo_fn is not None:
                        halo_fn(tp[..., 1 - nrd])
                residuals[it] = tot
    # after a full iteration the newest iterate sits in component 0
    return tp[..., 0].copy(), residuals


def boundary_range(ip: int, jp: int, kp: int) -> int:
    """Size of the 1-D index space enumerating the three boundary families."""
    if min(ip, jp, kp) < 1:
        raise ValueError("ip, jp, kp must be >= 1")
    return jp * kp + kp * ip + jp * ip


def map_boundary_gid(gid: int, ip: int, jp: int, kp: int):
    """Decode a global id into a boundary point, or PADDING past the range.

    Branch order matches the boundary kernel: YZ face first (k = gid / jp,
    j = gid mod jp), then ZX, then XY; ids at or beyond the boundary range
    fall into the guarded padding branch.
    """
    if gid < 0:
        raise ValueError("gid must be >= 0")
    n_yz = jp * kp
    n_zx = kp * ip
    if gid < n_yz:
        return BoundaryPoint(Face.YZ, (gid % jp, gid // jp))
    if gid < n_yz + n_zx:
        r = gid - n_yz
        return BoundaryPoint(Face.ZX, (r // ip, r % ip))
    if gid < n_yz + n_zx + jp * ip:
        r = gid - n_yz - n_zx
        return BoundaryPoint(Face.XY, (r // ip, r % ip))
    return PADDING


def padded_range(range_: int, nthreads: int, nunits: int) -> int:
    """Pad a work range up to a multiple of nthreads * nunits."""
    if range_ < 0:
        raise ValueError("range must be >= 0")
    if nthreads < 1 or nunits < 1:
        raise ValueError("nthreads and nunits must be >= 1")
    m = nthreads * nunits
    rem = range_ % m
    return range_ if rem == 0 else range_ + (m - rem)
