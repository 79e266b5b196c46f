import numpy as np
import pytest

from svbf.envs import (
    BadMagicError,
    BadVersionError,
    BoxWorld,
    FhnParams,
    TrajectoryBatch,
    TruncatedError,
    WallSegment,
    box_generate,
    box_image_generate,
    box_step,
    default_maze_walls,
    fhn_derivs,
    fhn_generate,
    read_dataset,
    render_image,
    write_dataset,
)


# ---------------------------------------------------------------- FHN


def test_fhn_derivatives_at_origin():
    d = fhn_derivs(np.array([0.0, 0.0]), np.array(0.0), FhnParams())
    np.testing.assert_allclose(d, [0.0, 0.7 / 12.5])


def test_fhn_fixed_point_from_cubic_root():
    # dv=0, dw=0 under constant stimulus 0.7 reduces to v^3 + 0.75 v + 0.525 = 0
    roots = np.roots([1.0, 0.0, 0.75, 0.525])
    v_star = float(np.real(roots[np.isreal(roots)][0]))
    w_star = (v_star + 0.7) / 0.8
    assert v_star == pytest.approx(-0.517, abs=2e-3)
    assert w_star == pytest.approx(0.229, abs=2e-3)
    d = fhn_derivs(np.array([v_star, w_star]), np.array(0.7), FhnParams())
    np.testing.assert_allclose(d, [0.0, 0.0], atol=1e-6)


def test_fhn_generate_shapes_and_determinism():
    p = FhnParams()
    b1 = fhn_generate(p, 5, 50, seed=3)
    b2 = fhn_generate(p, 5, 50, seed=3)
    assert b1.x.shape == (5, 50, 2) and b1.u.shape == (5, 50, 1)
    assert np.array_equal(b1.x, b2.x) and np.array_equal(b1.u, b2.u)
    assert np.all(np.isfinite(b1.x))


def test_fhn_rk4_step_size_convergence():
    base = FhnParams()
    fine = FhnParams(substeps=2 * base.substeps)
    b1 = fhn_generate(base, 3, 430, seed=11)
    b2 = fhn_generate(fine, 3, 430, seed=11)
    assert np.max(np.abs(b1.x - b2.x)) < 1e-5


# ---------------------------------------------------------------- box


def test_box_free_flight():
    world = BoxWorld(n_balls=1, dt=0.1)
    pos = np.array([[[0.0, 0.0]]])
    vel = np.array([[[0.3, -0.2]]])
    p2, v2, flags = box_step(world, pos, vel, np.zeros((1, 1, 2)))
    np.testing.assert_allclose(p2, pos + 0.1 * vel)
    np.testing.assert_array_equal(v2, vel)
    assert not flags.any()


def test_box_reflection_geometry():
    world = BoxWorld(n_balls=1, dt=1.0)
    pos = np.array([[[0.9, 0.0]]])
    vel = np.array([[[0.2, 0.0]]])
    p2, v2, flags = box_step(world, pos, vel, np.zeros((1, 1, 2)))
    np.testing.assert_allclose(p2[0, 0], [0.9, 0.0])  # 2*1 - 1.1
    np.testing.assert_allclose(v2[0, 0], [-0.2, 0.0])
    assert flags[0, 0, 0] and not flags[0, 0, 1]


def test_box_speed_preserved_and_reversible():
    world = BoxWorld(n_balls=2, dt=0.7)
    rng = np.random.default_rng(0)
    pos = rng.uniform(-0.9, 0.9, (4, 2, 2))
    vel = rng.uniform(-1, 1, (4, 2, 2))
    p2, v2, flags = box_step(world, pos, vel, np.zeros((4, 2, 2)))
    np.testing.assert_allclose(np.abs(v2), np.abs(vel), atol=1e-12)
    # free flight reverses exactly
    free = ~flags.any(axis=(1, 2))
    back = BoxWorld(n_balls=2, dt=-0.7)
    p3, _, _ = box_step(back, p2[free], v2[free], np.zeros_like(p2[free]))
    np.testing.assert_allclose(p3, pos[free], atol=1e-12)


def test_box_step_rejects_outside_start():
    world = BoxWorld(n_balls=1)
    with pytest.raises(ValueError, match="outside"):
        box_step(world, np.array([[[1.5, 0.0]]]), np.zeros((1, 1, 2)), np.zeros((1, 1, 2)))


def test_inner_wall_reflection():
    world = BoxWorld(n_balls=1, dt=1.0, walls=[WallSegment(0, 0.0, -0.5, 0.5)])
    pos = np.array([[[-0.1, 0.0]]])
    vel = np.array([[[0.25, 0.0]]])
    p2, v2, flags = box_step(world, pos, vel, np.zeros((1, 1, 2)))
    np.testing.assert_allclose(p2[0, 0, 0], -0.15)  # reflect 0.15 about 0
    assert v2[0, 0, 0] == -0.25 and flags[0, 0, 0]
    # same motion outside the segment span passes through
    pos = np.array([[[-0.1, 0.9]]])
    p3, v3, flags3 = box_step(world, pos, vel, np.zeros((1, 1, 2)))
    assert p3[0, 0, 0] == pytest.approx(0.15) and not flags3.any()


def test_box_generate_dims_and_ranges():
    b3 = box_generate(BoxWorld(n_balls=3, walls=default_maze_walls()), 4, 20, seed=1)
    assert b3.x.shape == (4, 20, 6) and b3.u.shape == (4, 20, 6)
    assert b3.aux["velocities"].shape == (4, 20, 6)
    b1 = box_generate(BoxWorld(n_balls=1), 4, 20, seed=1)
    assert b1.x.shape[2] == 2 and b1.u.shape[2] == 2
    assert np.all(np.abs(b1.x) <= 1.0)


def test_box_generate_statics():
    world = BoxWorld(n_balls=1, init_speed=0.0, control_gain=0.0)
    b = box_generate(world, 3, 10, seed=5)
    assert np.allclose(b.x, b.x[:, :1])


# ---------------------------------------------------------------- images


def test_render_point_ball_single_pixel():
    world = BoxWorld(n_balls=1, radius=0.04)
    # ball centered on the pixel-center grid: pixel pitch 1/16, centers at odd multiples of 1/32
    img = render_image(world, np.array([1 / 32, 1 / 32]))
    assert img.sum() == 1.0


def test_render_every_frame_nonempty():
    world = BoxWorld(n_balls=1, radius=0.1, init_speed=1.0)
    batch = box_image_generate(world, 2, 15, seed=2)
    assert np.all(batch.x.sum(axis=2) >= 1.0)
    assert batch.u.shape == (2, 15, 0)


def test_render_translation_by_one_pixel():
    world = BoxWorld(n_balls=1, radius=0.2)
    pitch = 2.0 / 32
    a = render_image(world, np.array([0.0, 0.0]))
    b = render_image(world, np.array([pitch, 0.0]))
    np.testing.assert_array_equal(a[:, :-1], b[:, 1:])
    c = render_image(world, np.array([0.0, pitch]))
    np.testing.assert_array_equal(a[:-1, :], c[1:, :])


# ---------------------------------------------------------------- dataset io


def test_dataset_roundtrip_bit_exact(tmp_path):
    batch = box_generate(BoxWorld(n_balls=2), 3, 7, seed=9)
    path = tmp_path / "d.svbf"
    write_dataset(path, batch)
    back = read_dataset(path)
    assert np.array_equal(back.x, batch.x)
    assert np.array_equal(back.u, batch.u)
    assert set(back.aux) == set(batch.aux)
    for k in batch.aux:
        assert np.array_equal(back.aux[k], batch.aux[k])


def test_dataset_empty_aux_is_legal(tmp_path):
    batch = TrajectoryBatch(
        x=np.zeros((1, 3, 2), dtype=np.float32), u=np.zeros((1, 3, 0), dtype=np.float32)
    )
    path = tmp_path / "d.svbf"
    write_dataset(path, batch)
    back = read_dataset(path)
    assert back.aux == {} and back.u.shape == (1, 3, 0)


def test_dataset_error_codes(tmp_path):
    batch = box_generate(BoxWorld(), 2, 4, seed=0)
    path = tmp_path / "d.svbf"
    write_dataset(path, batch)
    raw = path.read_bytes()

    bad_magic = tmp_path / "bad_magic"
    bad_magic.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(BadMagicError):
        read_dataset(bad_magic)

    bad_version = tmp_path / "bad_version"
    bad_version.write_bytes(raw[:4] + (99).to_bytes(4, "little") + raw[8:])
    with pytest.raises(BadVersionError):
        read_dataset(bad_version)

    truncated = tmp_path / "trunc"
    truncated.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(TruncatedError):
        read_dataset(truncated)
