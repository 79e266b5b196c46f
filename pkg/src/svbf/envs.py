"""Ground-truth data generators and the dataset file format.

Two simulators: the FitzHugh-Nagumo relaxation oscillator (RK4) and
balls bouncing elastically in an axis-aligned box, optionally with inner
wall segments (maze variant) or rendered to 32x32 binary frames.
Everything is pure in (seed, parameters).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


@dataclass
class TrajectoryBatch:
    x: np.ndarray  # (N, T, d_x) float32 observations
    u: np.ndarray  # (N, T, d_u) float32 controls
    aux: dict[str, np.ndarray] = field(default_factory=dict)  # extras, each (N, T, d)

    def __post_init__(self):
        if self.x.ndim != 3 or self.u.ndim != 3:
            raise ValueError("x and u must be (N, T, d)")
        if self.x.shape[:2] != self.u.shape[:2]:
            raise ValueError("x and u disagree on (N, T)")
        for name, a in self.aux.items():
            if a.shape[:2] != self.x.shape[:2]:
                raise ValueError(f"aux block {name!r} disagrees on (N, T)")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def T(self) -> int:
        return self.x.shape[1]


# ---------------------------------------------------------------------------
# FitzHugh-Nagumo


@dataclass
class FhnParams:
    a: float = 0.7
    b: float = 0.8
    tau: float = 12.5
    i_mean: float = 0.7
    i_var: float = 0.04
    dt: float = 0.1  # observation interval; integration runs dt/substeps
    substeps: int = 4


def fhn_derivs(state: np.ndarray, i_ext: np.ndarray, p: FhnParams) -> np.ndarray:
    v, w = state[..., 0], state[..., 1]
    dv = v - v**3 / 3.0 - w + i_ext
    dw = (v + p.a - p.b * w) / p.tau
    return np.stack([dv, dw], axis=-1)


def _rk4(state, i_ext, p: FhnParams, dt: float):
    k1 = fhn_derivs(state, i_ext, p)
    k2 = fhn_derivs(state + 0.5 * dt * k1, i_ext, p)
    k3 = fhn_derivs(state + 0.5 * dt * k2, i_ext, p)
    k4 = fhn_derivs(state + dt * k3, i_ext, p)
    return state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def fhn_generate(params: FhnParams, n_traj: int, T: int, seed: int) -> TrajectoryBatch:
    """Oscillator trajectories; the per-step stimulus is recorded as the control.

    u[:, t] is the stimulus applied while integrating from step t to t+1
    (the final control is drawn but drives nothing).
    """
    rng = np.random.default_rng(seed)
    state = rng.uniform(-3.0, 3.0, size=(n_traj, 2))
    x = np.zeros((n_traj, T, 2), dtype=np.float32)
    u = np.zeros((n_traj, T, 1), dtype=np.float32)
    sub_dt = params.dt / params.substeps
    for t in range(T):
        x[:, t] = state
        i_ext = params.i_mean + np.sqrt(params.i_var) * rng.standard_normal(n_traj)
        u[:, t, 0] = i_ext
        for _ in range(params.substeps):
            state = _rk4(state, i_ext, params, sub_dt)
        if not np.all(np.isfinite(state)):
            raise FloatingPointError(f"FHN state diverged at step {t}")
    return TrajectoryBatch(x=x, u=u)


# ---------------------------------------------------------------------------
# bouncing balls in a box


@dataclass
class WallSegment:
    axis: int  # 0: wall blocks motion along x (vertical line); 1: along y
    pos: float
    lo: float
    hi: float


@dataclass
class BoxWorld:
    n_balls: int = 1
    radius: float = 0.0
    dt: float = 0.1
    control_gain: float = 1.0
    bound: float = 1.0
    init_speed: float = 0.5
    walls: list[WallSegment] = field(default_factory=list)
    substeps: int = 1

    @property
    def d_x(self) -> int:
        return 2 * self.n_balls

    @property
    def d_u(self) -> int:
        return 2 * self.n_balls


def default_maze_walls() -> list[WallSegment]:
    # two inner segments forming a U-shaped corridor with the outer wall
    return [WallSegment(0, -0.34, -1.0, 0.25), WallSegment(0, 0.34, -0.25, 1.0)]


def _reflect_outer(pos_new, vel, half, flags):
    for axis in range(2):
        p = pos_new[..., axis]
        over = p > half
        under = p < -half
        p[over] = 2 * half - p[over]
        p[under] = -2 * half - p[under]
        hit = over | under
        vel[..., axis][hit] *= -1.0
        flags[..., axis] |= hit


def _reflect_segments(pos_old, pos_new, vel, walls, flags):
    for seg in walls:
        a = seg.axis
        other = 1 - a
        p_old = pos_old[..., a]
        p_new = pos_new[..., a]
        crossed = (p_old - seg.pos) * (p_new - seg.pos) < 0.0
        in_span = (pos_new[..., other] >= seg.lo) & (pos_new[..., other] <= seg.hi)
        hit = crossed & in_span
        p_new[hit] = 2 * seg.pos - p_new[hit]
        vel[..., a][hit] *= -1.0
        flags[..., a] |= hit


def box_step(world: BoxWorld, pos: np.ndarray, vel: np.ndarray, u: np.ndarray):
    """Semi-implicit Euler step with elastic reflections.

    pos, vel: (..., n_balls, 2); u: (..., n_balls, 2) acceleration.
    Returns (pos, vel, flags) where flags mark per-ball, per-axis wall
    contact during the step.
    """
    half = world.bound - world.radius
    if np.any(np.abs(pos) > half + 1e-9):
        raise ValueError("ball outside box bounds")
    pos = pos.copy()
    vel = vel.copy()
    flags = np.zeros(pos.shape, dtype=bool)
    sub_dt = world.dt / world.substeps
    for _ in range(world.substeps):
        vel = vel + world.control_gain * u * sub_dt
        pos_new = pos + vel * sub_dt
        _reflect_segments(pos, pos_new, vel, world.walls, flags)
        _reflect_outer(pos_new, vel, half, flags)
        pos = pos_new
    return pos, vel, flags


def box_generate(world: BoxWorld, n_traj: int, T: int, seed: int) -> TrajectoryBatch:
    """Uniform-random exploration rollouts; observations are positions only.

    aux carries ground-truth velocities and wall-contact flags; the flag
    at step t marks contact during the transition into step t.
    """
    rng = np.random.default_rng(seed)
    nb = world.n_balls
    half = world.bound - world.radius
    pos = rng.uniform(-half, half, size=(n_traj, nb, 2))
    vel = rng.uniform(-world.init_speed, world.init_speed, size=(n_traj, nb, 2))
    u = rng.uniform(-1.0, 1.0, size=(n_traj, T, nb, 2))
    x = np.zeros((n_traj, T, 2 * nb), dtype=np.float32)
    vels = np.zeros((n_traj, T, 2 * nb), dtype=np.float32)
    hits = np.zeros((n_traj, T, 2 * nb), dtype=np.float32)
    for t in range(T):
        x[:, t] = (pos / world.bound).reshape(n_traj, -1)
        vels[:, t] = vel.reshape(n_traj, -1)
        pos, vel, flags = box_step(world, pos, vel, u[:, t])
        if t + 1 < T:
            hits[:, t + 1] = flags.reshape(n_traj, -1)
    return TrajectoryBatch(
        x=x,
        u=u.reshape(n_traj, T, -1).astype(np.float32),
        aux={"velocities": vels, "collisions": hits},
    )


def render_image(world: BoxWorld, pos: np.ndarray, size: int = 32) -> np.ndarray:
    """Binary frame: pixel on iff its center lies within the ball (row-major)."""
    if world.n_balls != 1:
        raise ValueError("image rendering supports a single ball")
    centers = -world.bound + (np.arange(size) + 0.5) * (2.0 * world.bound / size)
    cx, cy = np.meshgrid(centers, centers)  # rows follow y, columns follow x
    x0, y0 = float(pos[..., 0]), float(pos[..., 1])
    mask = (cx - x0) ** 2 + (cy - y0) ** 2 <= world.radius**2
    return mask.astype(np.float32)


def box_image_generate(world: BoxWorld, n_traj: int, T: int, seed: int, size: int = 32) -> TrajectoryBatch:
    """Single-ball box rendered to binary frames; no controls (free flight)."""
    state_batch = box_generate(world, n_traj, T, seed)
    frames = np.zeros((n_traj, T, size * size), dtype=np.float32)
    pos = state_batch.x.reshape(n_traj, T, 1, 2) * world.bound
    for i in range(n_traj):
        for t in range(T):
            frames[i, t] = render_image(world, pos[i, t, 0], size).ravel()
    aux = {
        "positions": state_batch.x,
        "velocities": state_batch.aux["velocities"],
        "collisions": state_batch.aux["collisions"],
    }
    return TrajectoryBatch(x=frames, u=np.zeros((n_traj, T, 0), dtype=np.float32), aux=aux)


# ---------------------------------------------------------------------------
# dataset serialization


class DatasetIOError(IOError):
    pass


class BadMagicError(DatasetIOError):
    pass


class BadVersionError(DatasetIOError):
    pass


class TruncatedError(DatasetIOError):
    pass


_MAGIC = b"SVBF"
_VERSION = 1


def write_dataset(path, batch: TrajectoryBatch) -> None:
    n, T, d_x = batch.x.shape
    d_u = batch.u.shape[2]
    header = bytearray()
    header += _MAGIC
    header += struct.pack("<IIIII", _VERSION, n, T, d_x, d_u)
    header += struct.pack("<I", len(batch.aux))
    for name in batch.aux:
        nb = name.encode()
        header += struct.pack("<I", len(nb)) + nb + struct.pack("<I", batch.aux[name].shape[2])
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(np.ascontiguousarray(batch.x, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(batch.u, dtype="<f4").tobytes())
        for name in batch.aux:
            fh.write(np.ascontiguousarray(batch.aux[name], dtype="<f4").tobytes())


def read_dataset(path) -> TrajectoryBatch:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != _MAGIC:
        raise BadMagicError(f"{path}: not a dataset file")
    off = 4

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise TruncatedError(f"{path}: header truncated at byte {off}")
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals

    (version,) = take("<I")
    if version != _VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    n, T, d_x, d_u = take("<IIII")
    (n_aux,) = take("<I")
    aux_spec = []
    for _ in range(n_aux):
        (name_len,) = take("<I")
        if off + name_len > len(raw):
            raise TruncatedError(f"{path}: header truncated at byte {off}")
        name = raw[off : off + name_len].decode()
        off += name_len
        (dim,) = take("<I")
        aux_spec.append((name, dim))

    def block(count):
        nonlocal off
        nbytes = count * 4
        if off + nbytes > len(raw):
            raise TruncatedError(f"{path}: payload truncated at byte {off}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).copy()
        off += nbytes
        return arr

    x = block(n * T * d_x).reshape(n, T, d_x)
    u = block(n * T * d_u).reshape(n, T, d_u)
    aux = {name: block(n * T * dim).reshape(n, T, dim) for name, dim in aux_spec}
    if off != len(raw):
        raise TruncatedError(f"{path}: {len(raw) - off} trailing bytes")
    return TrajectoryBatch(x=x, u=u, aux=aux)
