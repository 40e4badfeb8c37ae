import numpy as np
import pytest

from turbseg.errors import ConfigurationError, DegenerateGeometryError, InputError
from turbseg.flow import (
    FlowSet,
    build_flow_set,
    default_intervals,
    estimate_flow_pyramidal,
    stabilize_flows,
)
from turbseg.video_io import FlowField, FrameSequence


def constant_flow_set(t=5, max_offset=4, shape=(6, 8), velocity=(2.0, 0.0), offsets=None):
    """F_{t->t+i} = i * velocity, as produced by a constant-velocity scene."""
    if offsets is None:
        offsets = [i for i in range(-max_offset, max_offset + 1) if i != 0]
    flows = {
        i: FlowField(
            np.full(shape, velocity[0] * i, dtype=np.float32),
            np.full(shape, velocity[1] * i, dtype=np.float32),
        )
        for i in offsets
    }
    return FlowSet(t, flows, max_offset)


def textured_frames(t_count=3, h=48, w=64, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.random((h, w)).astype(np.float32)
    frames = np.stack([base] * t_count)[:, :, :, None]
    return FrameSequence(frames)


class TestBuildFlowSet:
    def test_boundary_truncation_first_frame(self):
        seq = textured_frames(20)
        fs = build_flow_set(seq, 1, 4, flow_source="builtin", levels=2)
        assert fs.available() == [1, 2, 3, 4]
        assert sorted(fs.missing) == [-4, -3, -2, -1]

    def test_interior_frame_has_all_offsets(self):
        seq = textured_frames(20)
        fs = build_flow_set(seq, 10, 4, flow_source="builtin", levels=2)
        assert fs.available() == [-4, -3, -2, -1, 1, 2, 3, 4]
        assert fs.missing == []

    def test_three_frame_sequence(self):
        seq = textured_frames(3)
        fs = build_flow_set(seq, 2, 4, flow_source="builtin", levels=2)
        assert fs.available() == [-1, 1]

    def test_missing_flow_file_names_offset(self, tmp_path):
        seq = textured_frames(5)
        with pytest.raises(InputError, match=r"offset [+-]1"):
            build_flow_set(seq, 2, 1, flow_source="dir", flow_dir=tmp_path)

    def test_ingested_files_round(self, tmp_path):
        from turbseg.video_io import write_flow_file

        seq = textured_frames(4, h=16, w=16)
        for i in (-1, 1):
            fl = FlowField(np.full((16, 16), 0.5 * i), np.zeros((16, 16)))
            write_flow_file(fl, tmp_path / f"flow_0002_{i:+d}.flo")
        fs = build_flow_set(seq, 2, 1, flow_source="dir", flow_dir=tmp_path)
        assert np.allclose(fs.flows[1].u, 0.5)
        assert np.allclose(fs.flows[-1].u, -0.5)


class TestStabilize:
    def test_constant_velocity_exact(self):
        fs = constant_flow_set(velocity=(2.0, 0.0))
        out = stabilize_flows(fs, [(1, 2)])
        assert np.allclose(out[0].field.u, 2.0, atol=1e-12)
        assert np.allclose(out[0].field.v, 0.0, atol=1e-12)

    def test_single_backward_offset_signed_division(self):
        fs = constant_flow_set(offsets=[-1], velocity=(-1.0, 0.0))
        # F_{t->t-1} = (1, 0): dividing by i = -1 gives (-1, 0)
        assert np.allclose(fs.flows[-1].u, 1.0)
        out = stabilize_flows(fs, [(-1,)])
        assert np.allclose(out[0].field.u, -1.0, atol=1e-12)

    def test_every_default_interval_recovers_velocity(self):
        fs = constant_flow_set(velocity=(1.25, -0.5))
        for stab in stabilize_flows(fs, default_intervals(4)):
            assert np.allclose(stab.field.u, 1.25, atol=1e-6)
            assert np.allclose(stab.field.v, -0.5, atol=1e-6)

    def test_jitter_averages_down(self):
        rng = np.random.default_rng(0)
        shape = (32, 32)
        clean = 1.5
        flows = {}
        for i in (1, 2, 3, 4):
            jitter = rng.uniform(-0.5, 0.5, shape).astype(np.float32)
            flows[i] = FlowField(np.full(shape, clean * i, dtype=np.float32) + jitter,
                                 np.zeros(shape, dtype=np.float32))
        fs = FlowSet(1, flows, 4)
        out = stabilize_flows(fs, [(1, 2, 3, 4)])
        assert np.abs(out[0].field.u - clean).max() <= 0.25

    def test_linearity(self):
        fs = constant_flow_set(velocity=(0.7, 0.3))
        scaled = FlowSet(fs.center_frame, {i: f.scaled(3.0) for i, f in fs.flows.items()}, fs.max_offset)
        a = stabilize_flows(fs, default_intervals(2))
        b = stabilize_flows(scaled, default_intervals(2))
        for x, y in zip(a, b):
            assert np.allclose(3.0 * x.field.u, y.field.u, atol=1e-5)
            assert np.allclose(3.0 * x.field.v, y.field.v, atol=1e-5)

    def test_shrinks_partial_intervals(self):
        fs = constant_flow_set(offsets=[1, 2], velocity=(1.0, 0.0))
        out = stabilize_flows(fs, [(1, 2, 3, 4), (-1, -2)])
        assert len(out) == 1
        assert out[0].interval == (1, 2)
        assert out[0].requested_interval == (1, 2, 3, 4)
        assert out[0].shrunk

    def test_all_empty_is_degenerate(self):
        fs = constant_flow_set(offsets=[1])
        with pytest.raises(DegenerateGeometryError):
            stabilize_flows(fs, [(-1,), (-2,)])

    def test_preserves_shape_and_finite(self):
        fs = constant_flow_set(shape=(7, 9))
        out = stabilize_flows(fs, default_intervals(4))
        for stab in out:
            assert stab.field.shape == (7, 9)
            assert np.isfinite(stab.field.u).all()


class TestDefaultIntervals:
    def test_scheme_shape(self):
        iv = default_intervals(4)
        assert len(iv) == 8
        assert iv[0] == (1,)
        assert iv[3] == (1, 2, 3, 4)
        assert iv[4] == (-1,)
        assert iv[7] == (-1, -2, -3, -4)


class TestPyramidalEstimator:
    def test_integer_shift_recovered(self):
        # content of src reappears 3 px to the right in dst
        rng = np.random.default_rng(2)
        base = rng.random((64, 96)).astype(np.float32)
        src = base[:, 3:]
        dst = base[:, :-3]
        flow = estimate_flow_pyramidal(src, dst, levels=2, patch=8)
        interior_u = flow.u[16:-16, 16:-16]
        interior_v = flow.v[16:-16, 16:-16]
        assert np.abs(interior_u - 3.0).max() <= 0.5
        assert np.abs(interior_v).max() <= 0.5

    def test_identity(self):
        rng = np.random.default_rng(3)
        img = rng.random((48, 48)).astype(np.float32)
        flow = estimate_flow_pyramidal(img, img, levels=2, patch=8)
        assert np.abs(flow.u).max() <= 1e-6
        assert np.abs(flow.v).max() <= 1e-6

    def test_textureless_zero_tie_break(self):
        img = np.full((32, 32), 0.5, dtype=np.float32)
        flow = estimate_flow_pyramidal(img, img.copy(), levels=2, patch=8)
        assert np.abs(flow.u).max() == 0.0
        assert np.abs(flow.v).max() == 0.0

    def test_too_small_for_pyramid(self):
        img = np.zeros((16, 16), dtype=np.float32)
        with pytest.raises(ConfigurationError):
            estimate_flow_pyramidal(img, img, levels=3, patch=8)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        a = rng.random((40, 40)).astype(np.float32)
        b = rng.random((40, 40)).astype(np.float32)
        f1 = estimate_flow_pyramidal(a, b, levels=2, patch=8)
        f2 = estimate_flow_pyramidal(a, b, levels=2, patch=8)
        assert np.array_equal(f1.u, f2.u) and np.array_equal(f1.v, f2.v)
