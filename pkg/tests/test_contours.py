import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sos_layering.contours import (
    Contour, ContourCollection, ContourError, Cylinder, HeightField, anchored_contours,
    anchored_counts, box, canonicalize, contour_shapes, enumerate_clusters, enumerate_contours,
    extract_cylinders, field_from_cylinders, interior_of, is_cluster, is_compatible,
    is_externally_compatible, neighborhoods, parse_contour, serialize,
)

SQUARE = [((1, 1), (3, 1)), ((3, 1), (3, 3)), ((3, 3), (1, 3)), ((1, 3), (1, 1))]


def from_cells(cells, sign=1):
    return Contour.from_edges(oracles.boundary_edges(cells), sign)


def unit(i, j, sign=1):
    return from_cells({(i, j)}, sign)


# pinched shapes: two cells meeting at a corner
PINCH_LINKED = {(0, 0), (1, 1)}     # one contour under the linked rule
PINCH_SPLIT = {(0, 1), (1, 0)}      # two separate unit squares


# --- construction and canonical form ----------------------------------------

def test_canonical_form_ignores_edge_order():
    a = canonicalize(SQUARE, 1)
    b = canonicalize(SQUARE[2:] + SQUARE[:2], 1)
    c = canonicalize([(q, p) for p, q in reversed(SQUARE)], 1)
    assert a == b == c
    assert a.trail == b.trail == c.trail
    assert serialize(a) == serialize(b) == serialize(c)


def test_translation_changes_canonical_form():
    a = canonicalize(SQUARE, 1)
    t = a.translate(1, 0)
    assert t != a
    assert serialize(t) != serialize(a)
    assert canonicalize(t) == t


def test_open_edge_list_rejected():
    with pytest.raises(ContourError):
        canonicalize(SQUARE[:3], 1)
    with pytest.raises(ContourError):
        Contour.from_edges([((1, 1), (3, 1)), ((3, 1), (3, 3))], 1)


def test_non_dual_edges_rejected():
    with pytest.raises(ContourError):
        Contour.from_edges([((0, 0), (2, 0))], 1)
    with pytest.raises(ContourError):
        Contour(((1, 1), (3, 1), (3, 3), (1, 3)), 0)


def test_serialize_parse_roundtrip():
    for c in enumerate_contours((3, 3), 8):
        assert parse_contour(serialize(c)) == c
    with pytest.raises(ContourError):
        parse_contour("x;1,1-3,1")


# --- interiors ---------------------------------------------------------------

def test_interior_small_shapes():
    assert interior_of(SQUARE) == {(1, 1)}
    assert from_cells({(0, 0), (1, 0)}).interior == {(0, 0), (1, 0)}
    assert from_cells({(0, 0), (1, 0)}).length == 6


def test_pinch_under_linked_rule():
    c = from_cells(PINCH_LINKED)
    assert c.length == 8
    assert c.interior == oracles.flood_interior(c.edge_set) == PINCH_LINKED
    with pytest.raises(ContourError):
        from_cells(PINCH_SPLIT)  # splits into two trails


@pytest.mark.parametrize("max_len", [4, 6, 8, 10])
def test_interiors_match_flood_fill(max_len):
    for s in contour_shapes(max_len):
        assert s.interior == oracles.flood_interior(s.edge_set)


# --- neighbourhoods ----------------------------------------------------------

def test_unit_square_neighbourhoods():
    inner, outer = neighborhoods(unit(0, 0))
    assert inner == {(0, 0)}
    # four edge neighbours plus the two diagonal cells at the non-linked corners
    assert outer == {(1, 0), (-1, 0), (0, 1), (0, -1), (-1, -1), (1, 1)}


def test_domino_neighbourhoods():
    inner, outer = neighborhoods(from_cells({(0, 0), (1, 0)}))
    assert len(inner) == 2
    assert len(outer) == 8


def test_pinch_neighbourhood_has_all_corners():
    c = from_cells(PINCH_LINKED)
    delta = c.inner_nbhd | c.outer_nbhd
    # both off-diagonal cells at the pinch vertex are edge neighbours of the trail
    assert {(0, 1), (1, 0)} <= c.outer_nbhd
    assert delta == oracles.geometric_delta(c.edge_set)


@pytest.mark.parametrize("max_len", [4, 6, 8, 10])
def test_neighbourhoods_match_geometric_rule(max_len):
    for s in contour_shapes(max_len):
        delta = oracles.geometric_delta(s.edge_set)
        assert s.inner_nbhd == delta & s.interior
        assert s.outer_nbhd == delta - s.interior


def test_linked_pairs_are_same_side_of_diagonal():
    from sos_layering.contours import DIRECTIONS, linked
    for a, b in itertools.permutations(DIRECTIONS, 2):
        assert linked(a, b) == oracles.same_side_of_diagonal(a, b)


# --- compatibility -----------------------------------------------------------

def test_compatibility_examples():
    assert is_compatible(unit(0, 0), unit(3, 0))
    assert not is_compatible(unit(0, 0), unit(1, 0))
    assert is_compatible(unit(0, 0), unit(1, 0, -1))
    # same edge set never compatible, whatever the signs
    assert not is_compatible(unit(0, 0), unit(0, 0, -1))
    big = from_cells(box(3, 3))
    assert is_compatible(big, unit(1, 1))
    assert not is_compatible(big, unit(0, 0, -1))      # inner cell on the inner boundary
    assert is_compatible(big, unit(1, 1, -1))          # centre cell is not in Delta^-
    assert is_compatible(from_cells(box(2, 2)), from_cells(box(3, 2)))  # staircase, shared edges
    assert not is_compatible(from_cells(box(2, 2)), from_cells(box(2, 2)).translate(1, 1))  # crossing


def test_external_compatibility_examples():
    assert is_externally_compatible(unit(0, 0), unit(3, 0))
    big = from_cells(box(3, 3))
    assert not is_externally_compatible(big, unit(1, 1))
    assert not is_externally_compatible(unit(0, 0), unit(1, 0))


def test_compatibility_matches_oracle_exhaustively():
    pool = enumerate_contours((3, 3), 8)
    for a, b in itertools.combinations_with_replacement(pool, 2):
        got = is_compatible(a, b)
        assert got == is_compatible(b, a)
        assert got == oracles.compatible(a.edge_set, a.sign, b.edge_set, b.sign), (a, b)


def test_compatible_pair_is_exactly_the_field_decomposition():
    # two routes: the pairwise rule, and the unique cylinder decomposition of
    # the field the pair would produce
    pool = enumerate_contours((3, 3), 8)
    dom = box(3, 3)
    for a, b in itertools.combinations(pool, 2):
        heights = {c: 2 for c in dom}
        for g in (a, b):
            for c in g.interior:
                heights[c] += g.sign
        got = extract_cylinders(HeightField(heights, 2))
        assert (got == {Cylinder(a, 1), Cylinder(b, 1)}) == is_compatible(a, b)


# --- enumeration -------------------------------------------------------------

def test_anchored_counts_match_animal_census():
    assert anchored_counts(10) == oracles.signed_counts((1, 1), 10) == {4: 8, 6: 24, 8: 126, 10: 632}
    assert anchored_counts(8, (5, -3)) == oracles.signed_counts((5, -3), 8)


def test_k4_is_the_four_unit_squares():
    cs = [c for c in anchored_contours((1, 1), 4)]
    assert len(cs) == 8
    assert {frozenset(c.interior) for c in cs} == {frozenset({(i, j)}) for i in (0, 1) for j in (0, 1)}


def test_k6_is_the_dominoes_through_anchor():
    cs = [c for c in anchored_contours((1, 1), 6) if c.length == 6]
    census = set()
    for cells in ({(0, 0), (1, 0)}, {(0, 0), (0, 1)}):
        for dx in range(-2, 3):
            for dy in range(-2, 3):
                s = {(i + dx, j + dy) for i, j in cells}
                if any((1, 1) in e for e in oracles.boundary_edges(s)):
                    census.add(frozenset(s))
    assert {frozenset(c.interior) for c in cs} == census
    assert len(cs) == 2 * len(census) == 24


def test_counting_bound():
    for k, n in anchored_counts(10).items():
        assert n <= 3 ** k
        assert n <= 8 * 3 ** (k - 2)


def test_enumerate_window_and_arguments():
    cs = enumerate_contours((2, 2), 8)
    assert all(c.interior <= box(2, 2) for c in cs)
    # 4 unit squares, 4 dominoes, the full box, 4 L-trominoes, 1 linked pinch
    assert len(cs) == 2 * (4 + 4 + 1 + 4 + 1)
    with pytest.raises(ContourError):
        enumerate_contours((2, 2), 7)
    with pytest.raises(ContourError):
        enumerate_contours((2, 2), 2)


def test_shapes_geometric_invariants():
    for s in contour_shapes(12):
        assert len(s.interior) <= (s.length / 4) ** 2
        assert s.diameter <= s.length / 2
        assert s.inner_nbhd <= s.interior
        assert not (s.outer_nbhd & s.interior)


# --- cylinders and fields ----------------------------------------------------

def test_flat_field_has_no_cylinders():
    assert extract_cylinders(HeightField({c: 3 for c in box(3, 3)}, 3)) == set()
    f = field_from_cylinders([], box(3, 3), 2)
    assert set(f.heights.values()) == {2}


def test_single_peak():
    f = HeightField({c: (3 if c == (1, 1) else 1) for c in box(3, 3)}, 1)
    assert extract_cylinders(f) == {Cylinder(unit(1, 1), 2)}


def test_staircase():
    dom = from_cells({(0, 0), (1, 0)})
    f = field_from_cylinders([Cylinder(dom, 1), Cylinder(unit(0, 0), 1)], box(3, 2), 0)
    assert f.heights == {(0, 0): 2, (1, 0): 1, (2, 0): 0, (0, 1): 0, (1, 1): 0, (2, 1): 0}


def test_incompatible_cylinders_rejected():
    with pytest.raises(ContourError):
        field_from_cylinders([Cylinder(unit(0, 0), 1), Cylinder(unit(1, 0), 1)], box(3, 3), 0)
    with pytest.raises(ContourError):
        field_from_cylinders([Cylinder(unit(5, 5), 1)], box(3, 3), 0)
    with pytest.raises(ContourError):
        Cylinder(unit(0, 0), 0)


def test_energy_identity_random_fields():
    rng = np.random.default_rng(7)
    for _ in range(300):
        f = HeightField.from_array(rng.integers(0, 4, (4, 4)), 0)
        cyl = extract_cylinders(f)
        assert f.energy() == sum(c.intensity * c.contour.length for c in cyl)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=12, max_size=12), st.integers(0, 3))
def test_roundtrip_property(vals, level):
    f = HeightField.from_array(np.array(vals).reshape(3, 4), level)
    cyl = extract_cylinders(f)
    assert field_from_cylinders(cyl, f.domain, level).heights == f.heights
    assert f.energy() == sum(c.intensity * c.contour.length for c in cyl)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(enumerate_contours((4, 4), 8)), max_size=5, unique=True),
       st.lists(st.integers(1, 2), min_size=5, max_size=5))
def test_compatible_sets_roundtrip(contours, ks):
    if not all(is_compatible(a, b) for a, b in itertools.combinations(contours, 2)):
        return
    cyls = {Cylinder(c, k) for c, k in zip(contours, ks)}
    level = 2 * len(contours)
    f = field_from_cylinders(cyls, box(4, 4), level)
    assert extract_cylinders(f) == cyls


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(contour_shapes(10)), st.integers(-5, 5), st.integers(-5, 5), st.integers(0, 7))
def test_canonical_form_invariant_under_rotation_of_cycle(shape, dx, dy, rot):
    c = shape.translate(dx, dy)
    edges = list(c.edges)
    rot %= len(edges)
    rotated = edges[rot:] + edges[:rot]
    assert canonicalize(rotated, c.sign) == c
    assert canonicalize(rotated, c.sign).trail == c.trail
    assert c.translate(-dx, -dy) == shape


# --- clusters ----------------------------------------------------------------

def test_clusters_length_four_are_singletons():
    pool = enumerate_contours((4, 4), 4)
    cl = enumerate_clusters(pool, 4, (3, 3))
    assert len(cl) == 8
    assert all(len(c) == 1 and c.total_length == 4 for c in cl)


def test_clusters_match_subset_filter():
    pool = enumerate_contours((4, 4), 8)
    anchor = (3, 3)
    got = {frozenset(c.contours) for c in enumerate_clusters(pool, 8, anchor)}
    want = set()
    for k in (1, 2):
        for sub in itertools.combinations(pool, k):
            if sum(c.length for c in sub) > 8 or not any(anchor in c.vertices for c in sub):
                continue
            if k == 2 and is_compatible(*sub):
                continue
            want.add(frozenset(sub))
    assert got == want
    assert all(c.kind == "cluster" for c in enumerate_clusters(pool, 8, anchor))


def test_compatible_pair_never_a_cluster():
    a, b = unit(0, 0), unit(4, 4)
    assert not is_cluster([a, b])
    with pytest.raises(ContourError):
        ContourCollection([a, b], "cluster")
    assert len(ContourCollection([a, b], "externally-compatible")) == 2
    with pytest.raises(ContourError):
        ContourCollection([unit(0, 0), unit(1, 0)], "compatible")
