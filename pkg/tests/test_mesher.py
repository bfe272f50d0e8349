"""Tests for the castellated hex mesher.

Expected values come from independent sources: counting arguments for
face/cell totals, analytic solid geometry for the level-transition
metrics (derived by hand below), and brute-force numpy grids for the
castellation counts.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivedesk.errors import (
    InvalidKeepPoint,
    InvalidParams,
    InvalidRegion,
    IoError,
)
from drivedesk.geometry import ScalarField3
from drivedesk.mesher import (
    CHECK_NAMES,
    DomainSpec,
    HexMesh,
    QualityThresholds,
    RefinementRegion,
    background_mesh,
    castellate,
    check_mesh,
    refine,
    export_vtk,
    read_vtk,
    save_quality_report,
    vtk_bytes,
)


def sphere_field(radius=0.5):
    return ScalarField3(lambda p: np.linalg.norm(p, axis=-1) - radius, lipschitz_bound=1.0)


def shell_field(mid=0.6, half_width=0.1):
    """Hollow spherical shell: solid where |r - mid| < half_width, fluid
    both in the core and outside."""
    return ScalarField3(
        lambda p: np.abs(np.linalg.norm(p, axis=-1) - mid) - half_width,
        lipschitz_bound=1.0,
    )


def brute_force_adjacency(mesh):
    """All leaf pairs sharing a face, found geometrically from cell
    bounds (independent of the mesher's octree neighbor logic)."""
    bounds = [mesh.cell_bounds(key) for key in mesh.leaves]
    pairs = []
    tol = 1e-12
    for a in range(len(bounds)):
        lo_a, hi_a = bounds[a]
        for b in range(a + 1, len(bounds)):
            lo_b, hi_b = bounds[b]
            for axis in range(3):
                touching = (
                    abs(hi_a[axis] - lo_b[axis]) < tol
                    or abs(hi_b[axis] - lo_a[axis]) < tol
                )
                if not touching:
                    continue
                others = [x for x in range(3) if x != axis]
                overlap = all(
                    min(hi_a[o], hi_b[o]) - max(lo_a[o], lo_b[o]) > tol
                    for o in others
                )
                if overlap:
                    pairs.append((a, b))
                    break
    return pairs


@pytest.fixture(scope="module")
def spec160():
    return DomainSpec((-3.0, -2.0, -2.0), (5.0, 2.0, 2.0), (10, 4, 4), (4.0, 0.0, 0.0))


@pytest.fixture(scope="module")
def mesh160(spec160):
    return background_mesh(spec160)


@pytest.fixture(scope="module")
def spec4():
    return DomainSpec((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0), (4, 4, 4), (0.9, 0.9, 0.9))


@pytest.fixture(scope="module")
def mesh4(spec4):
    return background_mesh(spec4)


@pytest.fixture(scope="module")
def refined4(mesh4):
    """One level-1 region strictly inside cell (0,0,0,0): that cell splits
    into 8 and nothing else changes (neighbors are level 0, balance holds)."""
    region = RefinementRegion.box_region((-0.9, -0.9, -0.9), (-0.85, -0.85, -0.85), 1)
    return refine(mesh4, [region])


@pytest.fixture(scope="module")
def sphere32():
    spec = DomainSpec((-1.0,) * 3, (1.0,) * 3, (32, 32, 32), (0.9, 0.0, 0.0))
    bg = background_mesh(spec)
    cast = castellate(bg, sphere_field(0.5))
    return spec, bg, cast


class TestDomainSpec:
    def test_level_size_halves_exactly(self, spec160):
        s0 = spec160.level_size(0)
        s2 = spec160.level_size(2)
        assert np.array_equal(s0, (np.array([8.0, 4.0, 4.0]) / np.array([10, 4, 4])))
        assert np.array_equal(s2 * 4, s0)

    def test_volume(self, spec160):
        assert spec160.volume() == pytest.approx(8.0 * 4.0 * 4.0)

    def test_inverted_box_rejected(self):
        with pytest.raises(InvalidParams):
            DomainSpec((1.0, 0.0, 0.0), (0.0, 1.0, 1.0), (2, 2, 2), (0.5, 0.5, 0.5))

    def test_bad_counts_rejected(self):
        with pytest.raises(InvalidParams):
            DomainSpec((0.0,) * 3, (1.0,) * 3, (0, 2, 2), (0.5, 0.5, 0.5))
        with pytest.raises(InvalidParams):
            DomainSpec((0.0,) * 3, (1.0,) * 3, (2, 2), (0.5, 0.5, 0.5))

    def test_keep_point_must_be_strictly_inside(self):
        with pytest.raises(InvalidKeepPoint):
            DomainSpec((0.0,) * 3, (1.0,) * 3, (2, 2, 2), (1.5, 0.5, 0.5))
        with pytest.raises(InvalidKeepPoint):
            DomainSpec((0.0,) * 3, (1.0,) * 3, (2, 2, 2), (1.0, 0.5, 0.5))


class TestRefinementRegion:
    def test_box_region(self):
        r = RefinementRegion.box_region((0, 0, 0), (1, 1, 1), 2)
        assert r.kind == "box" and r.level == 2

    def test_inverted_box_rejected(self):
        with pytest.raises(InvalidParams):
            RefinementRegion.box_region((1, 0, 0), (0, 1, 1), 1)

    def test_band_needs_positive_distance(self):
        with pytest.raises(InvalidParams):
            RefinementRegion.surface_band(0.0, 1)
        with pytest.raises(InvalidParams):
            RefinementRegion.surface_band(-0.2, 1)

    def test_level_must_be_at_least_one(self):
        with pytest.raises(InvalidParams):
            RefinementRegion.box_region((0, 0, 0), (1, 1, 1), 0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(InvalidParams):
            RefinementRegion("blob", 1)


class TestBackgroundMesh:
    def test_cell_count_10_4_4(self, mesh160):
        assert mesh160.cell_count == 160

    def test_boundary_patches_by_position(self, mesh160):
        faces = mesh160.faces()
        counts = {}
        for patch in faces.b_patch:
            counts[patch] = counts.get(patch, 0) + 1
        # x sides expose ny*nz faces each; the four lateral sides are walls.
        assert counts == {"inlet": 16, "outlet": 16, "walls": 160}

    def test_internal_face_count_cubic(self, mesh4):
        # n^3 grid has 3 * n^2 * (n-1) internal faces: 144 at n = 4.
        faces = mesh4.faces()
        assert faces.internal_count == 144
        assert faces.boundary_count == 6 * 16

    def test_total_volume_matches_domain(self, mesh160, spec160):
        assert mesh160.total_volume() == pytest.approx(spec160.volume(), rel=1e-12)

    def test_uniform_cells(self, mesh4):
        vols = mesh4.cell_volumes()
        assert np.allclose(vols, 0.125)
        centers = mesh4.cell_centers()
        assert (centers > -1).all() and (centers < 1).all()

    def test_internal_faces_have_one_owner_one_neighbor(self, mesh4):
        faces = mesh4.faces()
        assert (faces.owner != faces.neighbor).all()
        assert faces.owner.max() < mesh4.cell_count
        assert faces.neighbor.max() < mesh4.cell_count


class TestRefine:
    def test_single_cell_split_adds_seven(self, mesh4, refined4):
        assert refined4.cell_count == mesh4.cell_count + 7
        assert (0, 0, 0, 0) not in refined4.leaves
        for child in [(1, a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)]:
            assert child in refined4.leaves

    def test_input_mesh_unchanged(self, mesh4):
        before = mesh4.leaves
        region = RefinementRegion.box_region((-0.9,) * 3, (-0.85,) * 3, 1)
        refine(mesh4, [region])
        assert mesh4.leaves == before

    def test_idempotent_when_satisfied(self, refined4):
        region = RefinementRegion.box_region((-0.9, -0.9, -0.9), (-0.85, -0.85, -0.85), 1)
        again = refine(refined4, [region])
        assert again.leaves == refined4.leaves

    def test_monotone_under_added_regions(self, mesh4):
        r1 = [RefinementRegion.box_region((-0.9,) * 3, (-0.85,) * 3, 1)]
        r2 = r1 + [RefinementRegion.box_region((0.6,) * 3, (0.9,) * 3, 2)]
        m1 = refine(mesh4, r1)
        m2 = refine(mesh4, r2)
        assert m2.cell_count >= m1.cell_count
        assert m2.cell_count > mesh4.cell_count

    def test_region_beyond_max_level_rejected(self, mesh4):
        region = RefinementRegion.box_region((0, 0, 0), (0.1, 0.1, 0.1), 5)
        with pytest.raises(InvalidRegion):
            refine(mesh4, [region], max_level=4)

    def test_band_without_body_rejected(self, mesh4):
        with pytest.raises(InvalidParams):
            refine(mesh4, [RefinementRegion.surface_band(0.2, 1)])

    def test_max_level_cap(self, mesh4):
        region = RefinementRegion.box_region((0, 0, 0), (0.1, 0.1, 0.1), 1)
        with pytest.raises(InvalidParams):
            refine(mesh4, [region], max_level=7)

    def test_two_to_one_balance_exhaustive(self):
        # Deep refinement at one corner forces balance propagation; verify
        # the level jump across every geometric face adjacency is <= 1.
        spec = DomainSpec((0.0,) * 3, (1.0,) * 3, (2, 2, 2), (0.9, 0.9, 0.9))
        mesh = background_mesh(spec)
        region = RefinementRegion.box_region((0.0,) * 3, (0.02,) * 3, 4)
        refined = refine(mesh, [region])
        assert refined.cell_count > mesh.cell_count
        levels = [key[0] for key in refined.leaves]
        assert max(levels) == 4
        for a, b in brute_force_adjacency(refined):
            assert abs(refined.leaves[a][0] - refined.leaves[b][0]) <= 1

    def test_surface_band_reaches_fixpoint(self, mesh4):
        body = sphere_field(0.5)
        region = RefinementRegion.surface_band(0.1, 2)
        refined = refine(mesh4, [region], body=body)
        assert refined.cell_count > mesh4.cell_count
        # No remaining coarse cell may intersect the band: center distance
        # must exceed the band reach plus the cell's half-diagonal.
        for key in refined.leaves:
            if key[0] >= 2:
                continue
            center = refined.cell_center(key)
            size = refined.spec.level_size(key[0])
            reach = 0.1 + 0.5 * float(np.linalg.norm(size))
            assert abs(float(body(center[None, :])[0])) > reach

    def test_volume_conserved_by_refinement(self, mesh4, refined4, spec4):
        assert refined4.total_volume() == pytest.approx(spec4.volume(), rel=1e-12)


class TestCastellate:
    def test_sphere_removed_volume(self, sphere32):
        spec, bg, cast = sphere32
        removed = bg.cell_count - cast.cell_count
        cell_volume = spec.volume() / bg.cell_count
        expected = (4.0 / 3.0) * math.pi * 0.5**3 / cell_volume
        assert abs(removed - expected) / expected < 0.05

    def test_removed_cells_match_center_rule_brute_force(self, sphere32):
        spec, bg, cast = sphere32
        # Independent oracle: count grid centers strictly inside the sphere.
        centers = (np.arange(32) + 0.5) / 16.0 - 1.0
        gx, gy, gz = np.meshgrid(centers, centers, centers, indexing="ij")
        inside = (gx**2 + gy**2 + gz**2) < 0.25
        assert bg.cell_count - cast.cell_count == int(inside.sum())

    def test_volume_conservation(self, sphere32):
        spec, bg, cast = sphere32
        removed_volume = bg.total_volume() - cast.total_volume()
        total = cast.total_volume() + removed_volume
        assert abs(total - spec.volume()) / spec.volume() < 1e-9

    def test_body_patch_is_closed(self, sphere32):
        _, _, cast = sphere32
        faces = cast.faces()
        body_vecs = [
            faces.b_area_vec[i]
            for i, patch in enumerate(faces.b_patch)
            if patch == "body"
        ]
        assert len(body_vecs) > 0
        # The removed region does not touch the domain boundary, so its
        # exposed faces form a closed surface: outward area vectors cancel.
        resultant = np.sum(body_vecs, axis=0)
        assert np.linalg.norm(resultant) < 1e-9

    def test_keep_point_inside_body_rejected(self, sphere32):
        spec, bg, _ = sphere32
        with pytest.raises(InvalidKeepPoint):
            castellate(bg, sphere_field(0.5), keep_point=(0.0, 0.0, 0.0))

    def test_keep_point_outside_domain_rejected(self, sphere32):
        spec, bg, _ = sphere32
        with pytest.raises(InvalidKeepPoint):
            castellate(bg, sphere_field(0.5), keep_point=(2.0, 0.0, 0.0))

    def test_all_positive_field_leaves_mesh_unchanged(self, mesh4):
        ambient = ScalarField3(
            lambda p: np.full(p.shape[:-1], 0.5), lipschitz_bound=1.0
        )
        out = castellate(mesh4, ambient)
        assert out.leaves == mesh4.leaves

    def test_interior_pocket_discarded(self):
        # Hollow shell: the fluid core is sealed off and must not survive.
        spec = DomainSpec((-1.0,) * 3, (1.0,) * 3, (32,) * 3, (0.9, 0.0, 0.0))
        mesh = background_mesh(spec)
        cast = castellate(mesh, shell_field())
        radii = np.linalg.norm(cast.cell_centers(), axis=1)
        assert radii.min() > 0.6

    def test_castellate_refined_mesh(self, mesh4):
        body = sphere_field(0.5)
        refined = refine(
            mesh4, [RefinementRegion.surface_band(0.15, 2)], body=body
        )
        cast = castellate(refined, body)
        assert 0 < cast.cell_count < refined.cell_count
        removed_volume = refined.total_volume() - cast.total_volume()
        assert cast.total_volume() + removed_volume == pytest.approx(
            refined.spec.volume(), rel=1e-9
        )
        assert check_mesh(cast).overall_pass

    def test_default_keep_point_from_spec(self, sphere32):
        spec, bg, cast = sphere32
        explicit = castellate(bg, sphere_field(0.5), keep_point=spec.keep_point)
        assert explicit.leaves == cast.leaves


class TestCheckMesh:
    def test_uniform_grid_perfect_scores(self, mesh4):
        report = check_mesh(mesh4)
        assert report.overall_pass
        assert report.check("mesh_non_orthogonality").measured == 0.0
        assert report.check("max_skewness").measured == 0.0
        assert report.check("max_aspect_ratio").measured == 1.0
        assert report.check("boundary_openness").measured < 1e-12

    def test_exactly_ten_named_checks(self, mesh4):
        report = check_mesh(mesh4)
        assert tuple(c.name for c in report.checks) == CHECK_NAMES
        assert len(report.checks) == 10

    def test_uniform_grid_exact_extremes(self, mesh4):
        report = check_mesh(mesh4)
        assert report.check("min_face_area").measured == pytest.approx(0.25)
        assert report.check("max_face_area").measured == pytest.approx(0.25)
        assert report.check("min_volume").measured == pytest.approx(0.125)
        assert report.check("max_volume").measured == pytest.approx(0.125)

    def test_level_transition_metrics_match_hand_geometry(self, refined4):
        # Across a level jump, a fine cell of size f faces a coarse cell of
        # size 2f.  With the coarse center at the origin and the fine center
        # at (3f/2 - f/2 ... ) = (0.75, 0.25, 0.25) * 2f, the center line
        # direction is (3, 1, 1): angle to the face normal is
        # arccos(3 / sqrt(11)), the face-plane crossing misses the sub-face
        # centroid by sqrt(2)/12 * 2f, and the center distance is
        # sqrt(11)/4 * 2f, giving skewness sqrt(2) / (3 sqrt(11)).
        report = check_mesh(refined4)
        assert report.overall_pass
        expected_angle = math.degrees(math.acos(3.0 / math.sqrt(11.0)))
        assert report.check("mesh_non_orthogonality").measured == pytest.approx(
            expected_angle, abs=1e-9
        )
        expected_skew = math.sqrt(2.0) / (3.0 * math.sqrt(11.0))
        assert report.check("max_skewness").measured == pytest.approx(
            expected_skew, abs=1e-12
        )
        # Smallest pyramid: fine cell apex to its own full face, f^3 / 6.
        f = 0.25
        assert report.check("face_pyramids").measured == pytest.approx(f**3 / 6.0)

    def test_castellated_mesh_passes(self, sphere32):
        _, _, cast = sphere32
        report = check_mesh(cast)
        assert report.overall_pass
        assert report.cell_count == cast.cell_count

    def test_custom_thresholds_flip_outcome(self, refined4):
        tight = QualityThresholds(non_orthogonality_deg=10.0)
        report = check_mesh(refined4, tight)
        assert not report.check("mesh_non_orthogonality").passed
        assert not report.overall_pass

    def test_report_jsonable_shape(self, mesh4, tmp_path):
        report = check_mesh(mesh4)
        data = report.to_jsonable()
        assert len(data["checks"]) == 10
        for row in data["checks"]:
            assert set(row) == {"name", "measured", "threshold", "pass"}
        assert data["overall_pass"] is True
        path = tmp_path / "quality.json"
        save_quality_report(report, path)
        import json

        loaded = json.loads(path.read_text())
        assert loaded == data

    def test_coupled_point_match_vacuous(self, mesh4):
        row = check_mesh(mesh4).check("coupled_point_match")
        assert row.passed and row.measured == 0.0


class TestVtkIO:
    def test_header_and_cell_declaration(self, mesh160):
        text = vtk_bytes(mesh160).decode("ascii")
        assert text.startswith("# vtk DataFile Version 3.0\n")
        assert "\nDATASET UNSTRUCTURED_GRID\n" in text
        assert "\nCELLS 160 1440\n" in text
        assert "\nCELL_TYPES 160\n" in text
        assert "\nSCALARS level int 1\n" in text

    def test_point_welding(self, mesh4):
        text = vtk_bytes(mesh4).decode("ascii")
        # A 4^3 grid shares corners: (4+1)^3 points, not 8 * 64.
        assert "\nPOINTS 125 double\n" in text

    def test_round_trip(self, mesh160, tmp_path):
        path = tmp_path / "mesh.vtk"
        export_vtk(mesh160, path)
        back = read_vtk(path)
        assert back.cell_count == mesh160.cell_count
        assert back.leaves == mesh160.leaves
        assert np.allclose(back.cell_volumes(), mesh160.cell_volumes())

    def test_reexport_byte_identical(self, refined4, tmp_path):
        p1 = tmp_path / "a.vtk"
        p2 = tmp_path / "b.vtk"
        export_vtk(refined4, p1)
        export_vtk(read_vtk(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_cell_types_all_hexahedron(self, refined4):
        text = vtk_bytes(refined4).decode("ascii")
        lines = text.splitlines()
        idx = lines.index(f"CELL_TYPES {refined4.cell_count}")
        types = lines[idx + 1 : idx + 1 + refined4.cell_count]
        assert set(types) == {"12"}

    def test_levels_persisted(self, refined4, tmp_path):
        path = tmp_path / "mesh.vtk"
        export_vtk(refined4, path)
        back = read_vtk(path)
        assert [k[0] for k in back.leaves] == [k[0] for k in refined4.leaves]

    def test_quality_identical_after_round_trip(self, tmp_path, mesh4):
        body = sphere_field(0.5)
        refined = refine(
            mesh4, [RefinementRegion.surface_band(0.15, 2)], body=body
        )
        cast = castellate(refined, body)
        path = tmp_path / "cast.vtk"
        export_vtk(cast, path)
        back = read_vtk(path)
        r1 = check_mesh(cast)
        r2 = check_mesh(back)
        for c1, c2 in zip(r1.checks, r2.checks):
            assert c1 == c2

    def test_truncated_file_rejected(self, mesh4, tmp_path):
        path = tmp_path / "broken.vtk"
        data = vtk_bytes(mesh4)
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(IoError):
            read_vtk(path)

    def test_foreign_file_rejected(self, tmp_path):
        path = tmp_path / "foreign.vtk"
        path.write_text("# vtk DataFile Version 3.0\nsome other grid\nASCII\n")
        with pytest.raises(IoError):
            read_vtk(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(IoError):
            read_vtk(tmp_path / "absent.vtk")


class TestHexMeshValidation:
    def test_overlapping_leaves_rejected(self, spec4):
        leaves = [(0, 0, 0, 0), (1, 0, 0, 0)]
        with pytest.raises(InvalidParams):
            HexMesh(spec4, leaves)

    def test_out_of_range_leaf_rejected(self, spec4):
        with pytest.raises(InvalidParams):
            HexMesh(spec4, [(0, 4, 0, 0)])

    def test_balance_violation_rejected(self, spec4):
        # A level-0 cell directly facing a level-2 cell: jump of 2.
        leaves = [(0, 1, 0, 0), (2, 3, 0, 0)]
        with pytest.raises(InvalidParams):
            HexMesh(spec4, leaves)

    def test_empty_mesh_rejected(self, spec4):
        with pytest.raises(InvalidParams):
            HexMesh(spec4, [])


class TestFindLeaf:
    def test_finds_containing_cell(self, refined4):
        key = refined4.find_leaf((-0.95, -0.95, -0.95))
        assert key == (1, 0, 0, 0)
        key = refined4.find_leaf((0.9, 0.9, 0.9))
        assert key == (0, 3, 3, 3)

    def test_void_returns_none(self, sphere32):
        _, _, cast = sphere32
        assert cast.find_leaf((0.0, 0.0, 0.0)) is None


class TestRefinementProperties:
    @settings(deadline=None, max_examples=15)
    @given(
        cx=st.floats(-0.8, 0.8),
        cy=st.floats(-0.8, 0.8),
        cz=st.floats(-0.8, 0.8),
        half=st.floats(0.05, 0.4),
        level=st.integers(1, 3),
    )
    def test_refine_conserves_volume_and_balance(self, cx, cy, cz, half, level):
        spec = DomainSpec((-1.0,) * 3, (1.0,) * 3, (2, 2, 2), (0.9, 0.9, 0.9))
        mesh = background_mesh(spec)
        lo = (max(cx - half, -1.0), max(cy - half, -1.0), max(cz - half, -1.0))
        hi = (min(cx + half, 1.0), min(cy + half, 1.0), min(cz + half, 1.0))
        if not all(h > l for l, h in zip(lo, hi)):
            return
        region = RefinementRegion.box_region(lo, hi, level)
        refined = refine(mesh, [region])
        # Volume is conserved exactly by 1 -> 8 splits.
        assert refined.total_volume() == pytest.approx(spec.volume(), rel=1e-12)
        # HexMesh construction itself validates 2:1 balance; double-check
        # geometrically on this small mesh.
        for a, b in brute_force_adjacency(refined):
            assert abs(refined.leaves[a][0] - refined.leaves[b][0]) <= 1
        # Idempotence.
        again = refine(refined, [region])
        assert again.leaves == refined.leaves

    @settings(deadline=None, max_examples=10)
    @given(radius=st.floats(0.2, 0.7))
    def test_castellation_conserves_volume(self, radius):
        spec = DomainSpec((-1.0,) * 3, (1.0,) * 3, (8, 8, 8), (0.92, 0.92, 0.92))
        mesh = background_mesh(spec)
        cast = castellate(mesh, sphere_field(radius))
        removed = mesh.total_volume() - cast.total_volume()
        assert cast.total_volume() + removed == pytest.approx(spec.volume(), rel=1e-9)
        brute = int(
            (np.linalg.norm(mesh.cell_centers(), axis=1) < radius).sum()
        )
        assert mesh.cell_count - cast.cell_count == brute
