import numpy as np
import pytest

from meshmodes.datagen import BarSpec, bar_mesh, deform_bar, gen_bar_dataset


def ring_centroids(spec, positions):
    return positions.reshape(spec.segments + 1, spec.ring, 3).mean(axis=1)


class TestBarMesh:
    def test_counts(self):
        spec = BarSpec()
        mesh = bar_mesh(spec)
        assert mesh.vertex_count == (spec.segments + 1) * spec.ring
        assert mesh.face_count == spec.segments * spec.ring * 2

    def test_dimensions(self):
        spec = BarSpec()
        mesh = bar_mesh(spec)
        assert mesh.positions[:, 0].min() == 0.0
        assert mesh.positions[:, 0].max() == pytest.approx(spec.length)
        radii = np.linalg.norm(mesh.positions[:, 1:], axis=1)
        assert np.allclose(radii, spec.radius)

    def test_validation(self):
        with pytest.raises(ValueError):
            BarSpec(ring=2)
        with pytest.raises(ValueError):
            BarSpec(length=-1.0)


class TestDeformBar:
    def test_zero_parameters_is_reference(self):
        spec = BarSpec(segments=12, ring=8)
        ref = bar_mesh(spec)
        pos = deform_bar(spec, ref, 0.0, 0.0)
        assert np.array_equal(pos, ref.positions)

    def test_ninety_degree_bend_straight_halves(self):
        spec = BarSpec()
        ref = bar_mesh(spec)
        pos = deform_bar(spec, ref, 90.0, 0.0)
        cents = ring_centroids(spec, pos)
        xs = ref.positions.reshape(spec.segments + 1, spec.ring, 3)[:, 0, 0]
        lo = cents[xs <= 0.3 * spec.length - 1e-9]
        hi = cents[xs >= 0.7 * spec.length + 1e-9]
        # each end segment stays exactly straight
        d_lo = lo[-1] - lo[0]
        d_hi = hi[-1] - hi[0]
        for seg, d in ((lo, d_lo), (hi, d_hi)):
            unit = d / np.linalg.norm(d)
            for a, b in zip(seg, seg[1:]):
                step = (b - a) / np.linalg.norm(b - a)
                assert np.abs(step - unit).max() < 1e-9
        # and they meet at the bend angle
        cosang = d_lo @ d_hi / (np.linalg.norm(d_lo) * np.linalg.norm(d_hi))
        angle = np.degrees(np.arccos(np.clip(cosang, -1, 1)))
        assert angle == pytest.approx(90.0, abs=1e-6)

    def test_bump_support_is_3_sigma(self):
        spec = BarSpec()
        ref = bar_mesh(spec)
        pos = deform_bar(spec, ref, 0.0, spec.bump_max)
        moved = np.nonzero(np.linalg.norm(pos - ref.positions, axis=1) > 0)[0]
        _, table = gen_bar_dataset(spec, 2)
        assert set(moved) <= set(table["bump_vertices"])
        assert len(moved) > 0

    def test_bump_amplitude_at_center(self):
        spec = BarSpec()
        ref = bar_mesh(spec)
        pos = deform_bar(spec, ref, 0.0, 0.1)
        center = spec.resolve_bump_center()
        assert np.linalg.norm(pos[center] - ref.positions[center]) == pytest.approx(0.1, abs=1e-12)

    def test_too_sharp_bend_rejected(self):
        spec = BarSpec(segments=8, ring=6, length=1.0, radius=0.3)
        ref = bar_mesh(spec)
        with pytest.raises(ValueError, match="too sharp"):
            deform_bar(spec, ref, 120.0, 0.0)


class TestDataset:
    def test_shared_faces_and_reference_first(self):
        spec = BarSpec(segments=10, ring=6, length=3.0, radius=0.2)
        meshes, table = gen_bar_dataset(spec, 15)
        assert len(meshes) == 15
        for m in meshes[1:]:
            assert np.array_equal(m.faces, meshes[0].faces)
        assert np.array_equal(meshes[0].positions, bar_mesh(spec).positions)
        assert table["shapes"][0]["bend_deg"] == 0.0

    def test_deterministic(self):
        spec = BarSpec(segments=10, ring=6, length=3.0, radius=0.2)
        a, ta = gen_bar_dataset(spec, 10)
        b, tb = gen_bar_dataset(spec, 10)
        for ma, mb in zip(a, b):
            assert np.array_equal(ma.positions, mb.positions)
        assert ta == tb

    def test_grid_varies_within_every_tenth_split(self):
        spec = BarSpec()
        _, table = gen_bar_dataset(spec, 50)
        train = [table["shapes"][i] for i in range(0, 50, 10)]
        bends = {row["bend_deg"] for row in train}
        bumps = {row["bump_amp"] for row in train}
        assert len(bends) >= 4
        assert len(bumps) >= 4

    def test_ground_truth_sets(self):
        spec = BarSpec()
        meshes, table = gen_bar_dataset(spec, 8)
        ref = meshes[0]
        bend_set = set(table["bend_vertices"])
        # a bend-only shape moves exactly the recorded vertices
        row = next(r for r in table["shapes"] if r["bend_deg"] > 0 and r["bump_amp"] == 0)
        moved = np.nonzero(np.linalg.norm(meshes[row["index"]].positions - ref.positions, axis=1) > 1e-12)[0]
        assert set(moved) == bend_set
