import numpy as np
import pytest

from meshmodes.acap import (
    AcapError,
    AcapFeature,
    FeatureScaler,
    RotationLog,
    SolveContext,
    deformation_gradients,
    encode_dataset,
    encode_shape,
    exp_skew,
    feature_to_transforms,
    make_consistent,
    polar_decompose,
    read_feature_cache,
    reconstruct_positions,
    rotation_log,
    skew,
    write_feature_cache,
)
from meshmodes.datagen import BarSpec, bar_mesh, deform_bar, gen_bar_dataset
from meshmodes.mesh import TriangleMesh, build_adjacency, cotangent_weights


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def small_bar():
    return bar_mesh(BarSpec(segments=8, ring=6))


@pytest.fixture(scope="module")
def bar_setup():
    mesh = small_bar()
    adj = build_adjacency(mesh)
    w = cotangent_weights(mesh)
    return mesh, adj, w


class TestDeformationGradients:
    def test_identity_for_reference(self, bar_setup):
        mesh, adj, w = bar_setup
        field = deformation_gradients(mesh, mesh, w, adj)
        assert np.abs(field.T - np.eye(3)).max() < 1e-6

    def test_rigid_rotation(self, bar_setup):
        mesh, adj, w = bar_setup
        R = rot_z(0.8)
        rotated = mesh.with_positions(mesh.positions @ R.T)
        field = deformation_gradients(mesh, rotated, w, adj)
        assert np.abs(field.T - R).max() < 1e-6

    def test_uniform_scale(self, bar_setup):
        mesh, adj, w = bar_setup
        scaled = mesh.with_positions(2.0 * mesh.positions)
        field = deformation_gradients(mesh, scaled, w, adj)
        assert np.abs(field.T - 2.0 * np.eye(3)).max() < 1e-6


class TestPolarDecompose:
    def test_identity(self):
        R, S = polar_decompose(np.eye(3))
        assert np.allclose(R, np.eye(3))
        assert np.allclose(S, np.eye(3))

    def test_pure_rotation(self):
        R0 = rot_z(np.pi / 2)
        R, S = polar_decompose(R0)
        assert np.abs(R - R0).max() < 1e-12
        assert np.abs(S - np.eye(3)).max() < 1e-12

    def test_pure_symmetric(self):
        D = np.diag([2.0, 0.5, 1.0])
        R, S = polar_decompose(D)
        assert np.abs(R - np.eye(3)).max() < 1e-12
        assert np.abs(S - D).max() < 1e-12

    def test_reflection_rejected(self):
        with pytest.raises(AcapError):
            polar_decompose(np.diag([-1.0, 1.0, 1.0]))

    def test_random_well_conditioned(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            T = np.eye(3) + 0.5 * rng.normal(size=(3, 3))
            if np.linalg.det(T) <= 0.05:
                continue
            R, S = polar_decompose(T)
            assert np.abs(R.T @ R - np.eye(3)).max() < 1e-10
            assert np.array_equal(S, S.T)
            assert np.abs(R @ S - T).max() < 1e-9
            assert np.linalg.det(R) > 0


class TestRotationLog:
    def test_identity(self):
        log = rotation_log(np.eye(3))
        assert log.angle == 0.0
        assert np.allclose(log.r, 0.0)

    def test_quarter_turn(self):
        log = rotation_log(rot_z(np.pi / 2))
        assert np.allclose(log.r, [0.0, 0.0, np.pi / 2], atol=1e-12)

    def test_construct_then_invert(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            R = exp_skew(2.0 * axis)
            log = rotation_log(R)
            assert abs(log.angle - 2.0) < 1e-9
            assert min(np.abs(log.axis - axis).max(), np.abs(log.axis + axis).max()) < 1e-9

    def test_near_pi_flagged(self):
        log = rotation_log(rot_z(np.pi - 1e-8))
        assert log.ambiguous

    def test_exp_matches(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            r = rng.normal(size=3)
            R = exp_skew(r)
            log = rotation_log(R)
            assert np.abs(exp_skew(log.r) - R).max() < 1e-8

    def test_non_rotation_rejected(self):
        with pytest.raises(AcapError):
            rotation_log(np.diag([2.0, 1.0, 1.0]))


class TestMakeConsistent:
    def test_already_consistent(self, bar_setup):
        mesh, adj, _ = bar_setup
        logs = [rotation_log(rot_z(np.pi / 2)) for _ in range(mesh.vertex_count)]
        out = make_consistent(logs, adj)
        for log in out:
            assert np.allclose(log.r, [0, 0, np.pi / 2], atol=1e-12)

    def test_two_pi_equivalent_remapped(self):
        mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        adj = build_adjacency(mesh)
        z = np.array([0.0, 0.0, 1.0])
        logs = [
            RotationLog(axis=z, angle=3.0),
            RotationLog(axis=z, angle=3.0 - 2.0 * np.pi),
            RotationLog(axis=z, angle=3.0),
        ]
        out = make_consistent(logs, adj)
        assert np.allclose(out[1].r, [0, 0, 3.0], atol=1e-12)

    def test_smooth_270_degree_bend(self):
        # per-vertex rotations ramping 0 -> 270 deg along the bar: principal
        # logs wrap past pi, the propagation must unwrap them
        spec = BarSpec(segments=24, ring=6)
        mesh = bar_mesh(spec)
        adj = build_adjacency(mesh)
        total = np.deg2rad(270.0)
        angles = total * mesh.positions[:, 0] / spec.length
        Rs = [rot_z(a) for a in angles]
        logs = [rotation_log(R) for R in Rs]
        out = make_consistent(logs, adj)
        rs = np.array([log.r for log in out])
        for i, nbrs in enumerate(adj.neighbors):
            for j in nbrs:
                assert np.linalg.norm(rs[i] - rs[j]) < np.pi / 8
        # the underlying rotations never change
        for log, R in zip(out, Rs):
            assert np.abs(exp_skew(log.r) - R).max() < 1e-8


class TestFeatureScaler:
    def test_bijective_in_range(self):
        rng = np.random.default_rng(5)
        raw = [rng.uniform(-2, 3, size=(10, 9)) for _ in range(4)]
        sc = FeatureScaler.fit(raw)
        for f in raw:
            back = sc.inverse(sc.forward(f))
            assert np.abs(back - f).max() < 1e-12

    def test_extremes_hit_095(self):
        rng = np.random.default_rng(6)
        raw = [rng.uniform(-1, 1, size=(10, 9)) for _ in range(4)]
        sc = FeatureScaler.fit(raw)
        scaled = np.concatenate([sc.forward(f) for f in raw])
        assert np.abs(scaled).max() == pytest.approx(0.95, abs=1e-12)

    def test_zero_maps_to_zero(self):
        sc = FeatureScaler(-1.0, 2.0, -0.5, 0.25)
        z = np.zeros((3, 9))
        assert np.array_equal(sc.forward(z), z)

    def test_degenerate_block(self):
        raw = [np.zeros((5, 9))]
        sc = FeatureScaler.fit(raw)
        assert np.array_equal(sc.forward(raw[0]), raw[0])
        assert np.array_equal(sc.inverse(sc.forward(raw[0])), raw[0])


class TestEncodeDataset:
    def test_reference_pair_encodes_to_zero(self, bar_setup):
        mesh, _, _ = bar_setup
        feats, scaler = encode_dataset([mesh, mesh])
        for f in feats:
            assert np.abs(f.x).max() < 1e-9

    def test_scaled_extreme_is_095(self):
        spec = BarSpec(segments=8, ring=6)
        meshes, _ = gen_bar_dataset(spec, 8)
        feats, _ = encode_dataset(meshes)
        peak = max(np.abs(f.x).max() for f in feats)
        assert peak == pytest.approx(0.95, abs=1e-12)

    def test_needs_two_shapes(self, bar_setup):
        mesh, _, _ = bar_setup
        with pytest.raises(AcapError):
            encode_dataset([mesh])

    def test_mismatched_faces_rejected(self, bar_setup):
        mesh, _, _ = bar_setup
        other = TriangleMesh(mesh.positions, mesh.faces[:-1])
        with pytest.raises(AcapError, match="same faces"):
            encode_dataset([mesh, other])


class TestReconstruct:
    def test_identity_feature_reproduces_reference(self, bar_setup):
        mesh, adj, w = bar_setup
        feats, scaler = encode_dataset([mesh, mesh])
        out = reconstruct_positions(feats[0], scaler, mesh, w, adj)
        assert np.sqrt(np.mean(np.sum((out.positions - mesh.positions) ** 2, axis=1))) < 1e-9

    def test_rigid_rotation_about_anchor(self, bar_setup):
        mesh, adj, w = bar_setup
        R = rot_z(0.6)
        rotated = mesh.with_positions(mesh.positions @ R.T)
        feats, scaler = encode_dataset([mesh, rotated])
        out = reconstruct_positions(feats[1], scaler, mesh, w, adj, anchor=0)
        anchor_pos = mesh.positions[0]
        expected = (mesh.positions - anchor_pos) @ R.T + anchor_pos
        rms = np.sqrt(np.mean(np.sum((out.positions - expected) ** 2, axis=1)))
        assert rms < 1e-8

    def test_out_of_range_feature_rejected(self, bar_setup):
        mesh, adj, w = bar_setup
        feats, scaler = encode_dataset([mesh, mesh])
        bad = AcapFeature(np.full_like(feats[0].x, 1.5))
        with pytest.raises(AcapError):
            reconstruct_positions(bad, scaler, mesh, w, adj)

    def test_round_trip_error_envelope_on_bent_bars(self):
        # The per-vertex fit followed by the global solve is not an exact
        # inverse pair for curved deformations; this pins the measured
        # approximation floor so regressions are caught.
        spec = BarSpec(segments=12, ring=8)
        meshes, _ = gen_bar_dataset(spec, 10)
        feats, scaler = encode_dataset(meshes)
        ref = meshes[0]
        adj = build_adjacency(ref)
        w = cotangent_weights(ref)
        ctx = SolveContext(ref, w, adj, anchor=0)
        diag = ref.bbox_diagonal()
        worst = 0.0
        for mesh, feat in zip(meshes, feats):
            out = reconstruct_positions(feat, scaler, ref, w, adj, context=ctx)
            rms = np.sqrt(np.mean(np.sum((out.positions - mesh.positions) ** 2, axis=1)))
            worst = max(worst, rms / diag)
        assert worst < 2e-2

    def test_exactly_representable_shape_round_trips(self, bar_setup):
        # global affine deformations are fixed points of encode -> decode
        mesh, adj, w = bar_setup
        A = np.eye(3) + np.array([[0.1, 0.2, 0.0], [0.0, 0.05, 0.1], [0.0, 0.0, 0.2]])
        warped = mesh.with_positions(mesh.positions @ A.T)
        feats, scaler = encode_dataset([mesh, warped])
        out = reconstruct_positions(feats[1], scaler, mesh, w, adj, anchor=0)
        anchor_delta = warped.positions[0] - out.positions[0]
        rms = np.sqrt(np.mean(np.sum((out.positions + anchor_delta - warped.positions) ** 2, axis=1)))
        assert rms / mesh.bbox_diagonal() < 1e-6


class TestHelpers:
    def test_skew_cross_product(self):
        rng = np.random.default_rng(8)
        a, b = rng.normal(size=3), rng.normal(size=3)
        assert np.allclose(skew(a) @ b, np.cross(a, b))

    def test_feature_transform_round_trip(self, bar_setup):
        mesh, adj, w = bar_setup
        bent = mesh.with_positions(deform_bar(BarSpec(segments=8, ring=6), mesh, 45.0, 0.05))
        raw = encode_shape(mesh, bent, w, adj)
        T = feature_to_transforms(raw)
        field = deformation_gradients(mesh, bent, w, adj)
        assert np.abs(T - field.T).max() < 1e-7


class TestFeatureCache:
    def test_round_trip(self, tmp_path, bar_setup):
        mesh, _, _ = bar_setup
        spec = BarSpec(segments=8, ring=6)
        meshes, _ = gen_bar_dataset(spec, 5)
        feats, scaler = encode_dataset(meshes)
        path = tmp_path / "feat.acap"
        write_feature_cache(path, feats, scaler)
        feats2, scaler2 = read_feature_cache(path)
        assert len(feats2) == len(feats)
        for a, b in zip(feats, feats2):
            assert np.array_equal(a.x, b.x)
        assert scaler2.to_dict() == scaler.to_dict()

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.acap"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(AcapError, match="magic"):
            read_feature_cache(p)
