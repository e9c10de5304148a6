import math
import random

import numpy as np
import pytest

from conftest import random_image
from hxcut.hierarchy import Hierarchy, validate
from hxcut.imaging import (ImagePlane, boundary_length, boundary_loops,
                           build_alpha_tree, build_bpt, chrominance_module,
                           compute_stats, load_image, load_label_map,
                           luminance, luminance_sum_plane, region_concavity,
                           render_cut, render_saliency, save_image,
                           save_label_map, GREY_AXIS_MAX)
from hxcut.hierarchy import make_cut


# ----------------------------------------------------------------------
# netpbm
# ----------------------------------------------------------------------

def test_pgm_roundtrip(tmp_path):
    img = random_image(0, (5, 7))
    p = tmp_path / "a.pgm"
    save_image(img, str(p))
    back = load_image(str(p))
    assert np.array_equal(img.data, back.data)


def test_ppm_roundtrip(tmp_path):
    img = random_image(1, (4, 3), channels=3)
    p = tmp_path / "a.ppm"
    save_image(img, str(p))
    back = load_image(str(p))
    assert np.array_equal(img.data, back.data)
    # bit-exact bytes on re-save
    save_image(back, str(tmp_path / "b.ppm"))
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()


def test_p5_known_samples(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 17, 42]))
    img = load_image(str(p))
    assert img.data.tolist() == [[0, 255], [17, 42]]


def test_header_comments(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n# a comment\n2 1\n# another\n255\n" + bytes([7, 9]))
    assert load_image(str(p)).data.tolist() == [[7, 9]]


def test_unsupported_maxval(tmp_path):
    p = tmp_path / "x.ppm"
    p.write_bytes(b"P6\n1 1\n1023\n" + bytes([0] * 6))
    with pytest.raises(ValueError, match="maxval"):
        load_image(str(p))


def test_truncated_and_malformed(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n4 4\n255\n" + bytes([0] * 3))
    with pytest.raises(ValueError, match="truncated"):
        load_image(str(p))
    q = tmp_path / "y.pgm"
    q.write_bytes(b"Q5\n1 1\n255\n\x00")
    with pytest.raises(ValueError):
        load_image(str(q))


def test_label_map_16bit(tmp_path):
    lab = np.array([[0, 70000 % 65536], [40000, 3]], dtype=np.int64) % 65536
    p = tmp_path / "l.pgm"
    save_label_map(lab, str(p))
    assert np.array_equal(load_label_map(str(p)), lab)


# ----------------------------------------------------------------------
# boundary measurement
# ----------------------------------------------------------------------

def test_boundary_length_examples():
    assert boundary_length(np.arange(9).reshape(3, 3), 4) == 4.0
    assert boundary_length(np.array([[0, 1], [2, 3]]), 0) == 3.0
    w, h = 6, 4
    assert boundary_length(np.zeros((h, w), dtype=int), 0) == (2 * w + 2 * h) / 2


def test_boundary_unknown_region():
    with pytest.raises(ValueError):
        boundary_length(np.zeros((2, 2), dtype=int), 5)


def _edge_set(mask):
    """Weighted boundary edges of a region: interior ones weigh 1, border
    ones 1/2.  Edges are keyed by (kind, r, c)."""
    out = {}
    h, w = mask.shape
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            for kind, rr, cc, inside in (
                    ("h", r, c, r > 0 and mask[r - 1, c]),
                    ("h", r + 1, c, r + 1 < h and mask[r + 1, c]),
                    ("v", r, c, c > 0 and mask[r, c - 1]),
                    ("v", r, c + 1, c + 1 < w and mask[r, c + 1])):
                if inside:
                    continue
                border = (kind == "h" and (rr == 0 or rr == h)) or \
                         (kind == "v" and (cc == 0 or cc == w))
                out[(kind, rr, cc)] = 0.5 if border else 1.0
    return out


def test_boundary_edge_sets_are_counting_additive():
    rng = np.random.default_rng(3)
    for _ in range(10):
        lab = rng.integers(0, 4, (6, 6))
        f1 = _edge_set(lab == 0)
        f2 = _edge_set(lab == 1)
        union = {**f1, **f2}
        inter = {k: f1[k] for k in f1.keys() & f2.keys()}
        lhs = sum(union.values()) + sum(inter.values())
        rhs = sum(f1.values()) + sum(f2.values())
        assert lhs == rhs
        assert sum(f1.values()) == boundary_length((lab == 0).astype(int), 1) \
            if (lab == 0).any() else True


def test_concavity_shapes():
    assert region_concavity(np.ones((3, 5), dtype=bool)) == 1.0
    cross = np.zeros((3, 3), dtype=bool)
    cross[1, :] = True
    cross[:, 1] = True
    assert region_concavity(cross) == 2.0
    ring = np.ones((3, 3), dtype=bool)
    ring[1, 1] = False
    assert region_concavity(ring) is None
    assert region_concavity(np.eye(2, dtype=bool)) is None


def test_boundary_loop_turning_identity():
    rng = np.random.default_rng(11)
    for _ in range(20):
        mask = rng.random((5, 5)) < 0.6
        if not mask.any():
            continue
        for steps in boundary_loops(mask):
            net = sum(a[0] * b[1] - a[1] * b[0]
                      for a, b in zip(steps, steps[1:] + steps[:1]))
            assert abs(net) == 4


def test_concave_turns_match_corner_census():
    # without pinches, concave turns are exactly the lattice vertices with
    # three of their four surrounding cells inside the region
    shapes = [np.ones((2, 4), dtype=bool)]
    cross = np.zeros((5, 5), dtype=bool)
    cross[2, :] = True
    cross[:, 2] = True
    shapes.append(cross)
    ell = np.zeros((4, 4), dtype=bool)
    ell[:, 0] = True
    ell[3, :] = True
    shapes.append(ell)
    for mask in shapes:
        padded = np.pad(mask, 1).astype(int)
        corners = padded[:-1, :-1] + padded[:-1, 1:] + padded[1:, :-1] + padded[1:, 1:]
        expected = 1.0 + (corners == 3).sum() / 4.0
        assert region_concavity(mask) == expected


# ----------------------------------------------------------------------
# statistics
# ----------------------------------------------------------------------

def _leaf_per_pixel(shape):
    hgrid, wgrid = shape
    labels = np.arange(hgrid * wgrid).reshape(shape)
    children = {hgrid * wgrid: tuple(range(hgrid * wgrid))}
    return Hierarchy(children, hgrid * wgrid, width=wgrid, height=hgrid,
                     leaf_labels=labels)


def test_stats_constant_image():
    h = _leaf_per_pixel((3, 3))
    img = ImagePlane(np.full((3, 3), 7, dtype=np.uint8))
    st = compute_stats(h, img)
    root = st[h.root]
    assert root.area == 9 and root.sums == (63,)
    assert root.fit_residual() == 0.0


def test_stats_two_values():
    labels = np.array([[0, 1]])
    h = Hierarchy({2: (0, 1)}, 2, width=2, height=1, leaf_labels=labels)
    img = ImagePlane(np.array([[0, 10]], dtype=np.uint8))
    st = compute_stats(h, img)
    assert st[2].mean() == (5.0,)
    assert st[2].fit_residual() == 50.0


@pytest.mark.parametrize("seed", range(4))
def test_stats_match_bruteforce(seed):
    img = random_image(50 + seed, (10, 12))
    h = build_bpt(img, 9)
    st = compute_stats(h, img)
    labels = h.leaf_labels
    for n in h.node_ids:
        mask = np.isin(labels, tuple(h.leaf_set(n)))
        vals = img.data[mask].astype(np.int64)
        s = st[n]
        assert s.area == int(mask.sum())
        assert s.sums == (int(vals.sum()),)
        assert s.sumsqs == (int((vals * vals).sum()),)
        assert s.mins == (int(vals.min()),) and s.maxs == (int(vals.max()),)
        assert s.boundary == boundary_length(mask.astype(int), 1)
        rs, cs = np.nonzero(mask)
        assert s.bbox == (rs.min(), cs.min(), rs.max(), cs.max())


def test_stats_dimension_mismatch():
    h = _leaf_per_pixel((2, 2))
    with pytest.raises(ValueError):
        compute_stats(h, ImagePlane(np.zeros((3, 3), dtype=np.uint8)))


# ----------------------------------------------------------------------
# builders
# ----------------------------------------------------------------------

def test_bpt_constant_image():
    img = ImagePlane(np.full((4, 4), 9, dtype=np.uint8))
    h = build_bpt(img, 5)
    assert validate(h) == []
    st = compute_stats(h, img)
    assert st[h.root].area == 16 and st[h.root].sums == (16 * 9,)


def test_bpt_two_level_image_merges_regions_last():
    data = np.zeros((4, 6), dtype=np.uint8)
    data[:, 3:] = 200
    h = build_bpt(ImagePlane(data), 6)
    assert validate(h) == []
    a, b = h.children(h.root)
    sides = {frozenset(np.unique(h.leaf_labels[:, :3]).tolist()),
             frozenset(np.unique(h.leaf_labels[:, 3:]).tolist())}
    assert {frozenset(h.leaf_set(a)), frozenset(h.leaf_set(b))} == sides


def test_bpt_single_leaf():
    img = random_image(2, (3, 3))
    h = build_bpt(img, 1)
    assert validate(h) == []
    assert h.leaves() == (h.root,)


def test_bpt_leaf_per_pixel():
    img = random_image(3, (3, 3))
    h = build_bpt(img, 9)
    assert validate(h) == []
    assert len(h.leaves()) == 9


def test_alpha_tree_singletons_and_top():
    data = np.arange(12, dtype=np.uint8).reshape(3, 4) * 9
    h = build_alpha_tree(ImagePlane(data), [0, 255])
    assert validate(h) == []
    assert len(h.leaves()) == 12  # all pixels distinct at tolerance 0
    assert h.support_size(h.root) == 12


def test_alpha_tree_refinement_monotone():
    img = random_image(7, (8, 8))
    alphas = [0, 4, 16, 64, 255]
    h = build_alpha_tree(img, alphas)
    assert validate(h) == []
    # every class born at level k is contained in one class at level k+1
    from hxcut.hierarchy import horizontal_cut, refinement_le
    cuts = [horizontal_cut(h, a) for a in alphas]
    for fine, coarse in zip(cuts, cuts[1:]):
        assert refinement_le(h, fine, coarse)


def test_alpha_tree_bad_grid():
    img = random_image(8, (4, 4))
    with pytest.raises(ValueError):
        build_alpha_tree(img, [4, 4])


# ----------------------------------------------------------------------
# rendering
# ----------------------------------------------------------------------

def test_render_mean_root_is_global_mean():
    img = ImagePlane(np.array([[0, 1], [2, 4]], dtype=np.uint8))
    h = _leaf_per_pixel((2, 2))
    cut = make_cut(h, h.root, (h.root,))
    out = render_cut(h, cut, "mean", image=img)
    assert np.all(out.data == 2)  # mean 1.75 rounds half-up to 2


def test_render_mean_leaves_identity():
    img = random_image(4, (3, 5))
    h = _leaf_per_pixel((3, 5))
    cut = make_cut(h, h.root, h.leaves())
    out = render_cut(h, cut, "mean", image=img)
    assert np.array_equal(out.data, img.data)


def test_render_labels(ce1):
    h, _ = ce1
    cut = make_cut(h, h.root, (4, 5))
    out = render_cut(h, cut, "labels")
    assert out.data.dtype == np.uint16
    assert out.data.tolist() == [[0, 1], [0, 1]]


def test_render_labels_overflow():
    n = 66000
    labels = np.arange(n).reshape(220, 300)
    h = Hierarchy({n: tuple(range(n))}, n, leaf_labels=labels)
    cut = make_cut(h, n, range(n))
    with pytest.raises(ValueError, match="16-bit"):
        render_cut(h, cut, "labels")


def test_render_saliency_grid(ce1):
    h, _ = ce1
    weights = {(0, 1): 2.0, (2, 3): 2.0, (0, 2): 3.0, (1, 3): 3.0}
    out = render_saliency(weights, h.leaf_labels)
    assert out.data.shape == (5, 5)
    assert out.data[1, 2] == 255 and out.data[3, 2] == 255  # vertical frontier
    assert out.data[2, 1] == 170 and out.data[2, 3] == 170  # horizontal
    assert out.data[2, 2] == 255  # junction closes the contour
    assert out.data[1, 1] == 0  # pixel centers stay empty


def test_render_saliency_infinite_saturates(ce1):
    h, _ = ce1
    weights = {(0, 1): 1.0, (2, 3): 1.0, (0, 2): math.inf, (1, 3): math.inf}
    out = render_saliency(weights, h.leaf_labels)
    assert out.data[1, 2] == 255
    assert out.data[2, 1] == 255  # finite max 1.0 scales to 255


# ----------------------------------------------------------------------
# color decomposition
# ----------------------------------------------------------------------

def test_chrominance_grey_pixel_is_zero():
    img = ImagePlane(np.full((2, 2, 3), 123, dtype=np.uint8))
    out = chrominance_module(img)
    assert np.all(out.data == 0)


def test_chrominance_red_pixel():
    img = ImagePlane(np.zeros((1, 1, 3), dtype=np.uint8))
    img.data[0, 0, 0] = 255
    out = chrominance_module(img)
    units = out.data[0, 0] * out.meta["chroma_units_per_count"]
    assert abs(units - math.sqrt(170 ** 2 + 85 ** 2 + 85 ** 2)) < 1e-9
    assert abs(GREY_AXIS_MAX - 85 * math.sqrt(6)) < 1e-12


def test_chrominance_pythagoras():
    img = random_image(9, (4, 4), channels=3)
    rgb = img.data.astype(np.float64)
    mean = rgb.mean(axis=2)
    chroma = rgb - mean[..., None]
    mag2 = (chroma ** 2).sum(axis=2)
    lum2 = 3.0 * mean ** 2
    assert np.allclose(mag2 + lum2, (rgb ** 2).sum(axis=2), atol=1e-9)


def test_chrominance_rejects_grey():
    with pytest.raises(ValueError):
        chrominance_module(ImagePlane(np.zeros((2, 2), dtype=np.uint8)))


def test_luminance_planes():
    img = random_image(10, (3, 3), channels=3)
    l = luminance(img)
    q = luminance_sum_plane(img)
    assert np.allclose(q.data / 3.0, l)
    grey = random_image(11, (3, 3))
    assert np.array_equal(luminance_sum_plane(grey).data, grey.data.astype(np.int64) * 3)
