import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sos_layering.contours import Contour, box
from sos_layering.exact import (
    ModelParams, brute_force_log_z, contact_expectation, default_hmax, free_partition, hbar,
    lattice_sum, peak_probability, restricted_z, site_marginal, tail_bound, ursell,
    wall_partition, wetting_point,
)


def unit(i=0, j=0, sign=1):
    return Contour.from_edges(oracles.boundary_edges({(i, j)}), sign)


# frozen from oracles.single_site_z and oracles.row_transfer_log_z
SINGLE_SITE_Z = 1.018657360363774          # beta=1, h=0
BOX3_LOGZ = 4.61251397811584                 # 3x3, beta=1, h=0.5, n=0, heights <= 12


def test_wetting_point_closed_form():
    for b in (0.5, 1.0, 2.0, 5.0, 20.0):
        assert wetting_point(b) == pytest.approx(math.log(math.exp(4 * b) / (math.exp(4 * b) - 1)), rel=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(-1.0)
    with pytest.raises(ValueError):
        ModelParams(0.0)
    with pytest.raises(ValueError):
        ModelParams(1.0, 0.0, -1)
    p = ModelParams.from_h(2.0, 0.3)
    assert p.h == pytest.approx(0.3)
    assert p.J == math.exp(-4.0)


def test_single_site():
    r = wall_partition([(0, 0)], ModelParams.from_h(1.0, 0.0), hmax=60)
    assert r.value == pytest.approx(SINGLE_SITE_Z, abs=1e-14)
    assert oracles.single_site_z(1.0, 0.0) == pytest.approx(SINGLE_SITE_Z, abs=1e-14)
    J = math.exp(-2.0)
    assert r.value == pytest.approx(1 + J ** 2 / (1 - J ** 2), abs=1e-14)


def test_zero_temperature_limit():
    p = ModelParams.from_h(40.0, 0.7)
    r = wall_partition((2, 3), p)
    assert r.log_value == pytest.approx(0.7 * 6, abs=1e-12)


def test_box3_matches_row_transfer_oracle():
    p = ModelParams.from_h(1.0, 0.5)
    r = wall_partition((3, 3), p)
    assert abs(r.log_value - BOX3_LOGZ) <= r.tail_bound + 1e-12
    assert r.tail_bound < 1e-12
    r6 = wall_partition((3, 3), p, hmax=6)
    assert r6.log_value == pytest.approx(oracles.row_transfer_log_z(3, 3, 1.0, range(7), 0, math.exp(0.5)), abs=1e-12)
    assert abs(r6.log_value - BOX3_LOGZ) <= r6.tail_bound


def test_brute_force_agrees_with_transfer():
    cells = [(0, 0), (1, 0), (0, 1), (1, 1), (2, 1)]
    p = ModelParams(1.2, 0.3, 1)
    a = brute_force_log_z(cells, p, 6)
    b = wall_partition(cells, p, hmax=6).log_value
    assert a == pytest.approx(b, abs=1e-12)


def test_hmax_and_tail():
    assert default_hmax(2, 1.0, 9) >= 6
    hm = default_hmax(0, 1.0, 9)
    assert tail_bound(0, 1.0, 9, hm) < 1e-12
    with pytest.raises(ValueError):
        wall_partition((2, 2), ModelParams(1.0, 0.0, 3), hmax=5)


def test_domain_checks():
    with pytest.raises(ValueError):
        wall_partition([(0, 0), (2, 0)], ModelParams(1.0))
    ring = box(3, 3) - {(1, 1)}
    with pytest.raises(ValueError):
        wall_partition(ring, ModelParams(1.0))


def test_free_partition_matches_oracle():
    r = free_partition((2, 2), 1.3, window=5)
    assert r.log_value == pytest.approx(oracles.row_transfer_log_z(2, 2, 1.3, range(-5, 6), 0), abs=1e-12)


# --- restricted sums ---------------------------------------------------------

def test_unit_square_restricted_sums():
    J = math.exp(-3.0)
    p = ModelParams.from_h(1.5, 0.4)
    assert restricted_z(unit(), 1, p).value == pytest.approx(1 / (1 - J ** 2), rel=1e-12)
    assert restricted_z(unit(), 0, p, barred=True).value == pytest.approx(math.exp(0.4), rel=1e-12)
    # negative square at level 0: the wall forces the interior site to 0
    assert restricted_z(unit(sign=-1), 0, p, barred=True).value == pytest.approx(math.exp(0.4), rel=1e-12)
    assert restricted_z(unit(), -1, p).value == 0.0


@pytest.mark.parametrize("sign", [1, -1])
def test_level_decomposition_identity(sign):
    p = ModelParams.from_h(1.5, 0.2)
    c = unit(sign=sign)
    L = c.length
    for m in range(4):
        lhs = restricted_z(c, m, p)
        terms = []
        for k in range(40):
            lev = m + sign * k
            if lev < 0:
                break
            terms.append(math.exp(-k * 1.5 * L) * restricted_z(c, lev, p, barred=True).value)
        assert lhs.value == pytest.approx(math.fsum(terms), abs=2 * lhs.tail_bound + 1e-13)


def test_domino_restricted_sum_against_oracle():
    dom = Contour.from_edges(oracles.boundary_edges({(0, 0), (1, 0)}), 1)
    p = ModelParams.from_h(1.0, 0.0)
    # both cells are in the inner neighbourhood: heights >= 2, boundary 2
    want = oracles.row_transfer_log_z(2, 1, 1.0, range(2, 40), 2, 1.0)
    assert restricted_z(dom, 2, p).log_value == pytest.approx(want, abs=1e-12)


# --- H-bar -------------------------------------------------------------------

@pytest.mark.parametrize("beta", [1.0, 1.5, 2.0, 2.5])
def test_hbar_closed_forms(beta):
    J = math.exp(-2 * beta)
    one = hbar([(0, 0)], beta)
    two = hbar([(0, 0), (1, 0)], beta)
    assert abs(one.log_value) < 1e-10 and one.tail_bound < 1e-12
    assert abs(two.log_value - math.log((1 - J ** 4) / (1 - J ** 3))) < 1e-10 and two.tail_bound < 1e-12
    assert abs(two.log_value - oracles.pair_hbar(beta)) < 1e-10


def test_hbar_pair_value_beta_one():
    # log((1 - e^-4) / (1 - e^-3)) = 2.1463e-3
    assert hbar([(0, 0), (0, 1)], 1.0).log_value == pytest.approx(2.1463104608828e-3, abs=1e-14)


def test_hbar_triples_bounded():
    J = math.exp(-4.0)
    for cells in ([(0, 0), (1, 0), (2, 0)], [(0, 0), (1, 0), (1, 1)]):
        v = hbar(cells, 2.0).log_value
        assert 0 <= v <= 2 * J ** 2 * 3


def test_hbar_splits_over_components():
    a = hbar([(0, 0), (1, 0)], 2.0).log_value
    assert hbar([(0, 0), (1, 0), (5, 5)], 2.0).log_value == pytest.approx(a, abs=1e-15)


# --- peaks, marginals, Ursell functions ----------------------------------------

def test_peak_probability_brackets():
    for n in (1, 2):
        p = peak_probability((5, 5), [(2, 2)], n, 2.0)
        assert 0.5 * math.exp(-8 * n) <= p <= 2 * math.exp(-8 * n)
    assert peak_probability((5, 5), [(2, 2)], 0, 2.0) == 1.0
    q = peak_probability((4, 4), [(1, 1), (2, 1)], 2, 1.5)
    assert 0.5 * math.exp(-12 * 1.5) <= q <= 2 * math.exp(-12 * 1.5)


def test_site_marginal_is_a_distribution():
    p = ModelParams.from_h(1.0, 0.5)
    m = site_marginal((3, 3), p, (1, 1))
    assert m.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(m >= 0)
    assert m[0] == pytest.approx(contact_expectation((3, 3), p, [(1, 1)]), abs=1e-12)


def test_ursell_pair_is_covariance():
    p = ModelParams(1.0, 0.3)
    x, y = (0, 0), (1, 0)
    e = lambda s: contact_expectation((2, 2), p, s)
    assert ursell((2, 2), p, [x, y]) == pytest.approx(e([x, y]) - e([x]) * e([y]), abs=1e-14)
    with pytest.raises(ValueError):
        ursell((2, 2), p, [x, x])


def test_ursell_singletons_sum_to_h_derivative():
    beta, u, step = 2.0, 0.01, 1e-6
    p = ModelParams(beta, u)
    cells = sorted(box(4, 4))
    total = sum(ursell((4, 4), p, [c]) for c in cells)
    up = wall_partition((4, 4), ModelParams(beta, u + step)).log_value
    dn = wall_partition((4, 4), ModelParams(beta, u - step)).log_value
    assert total == pytest.approx((up - dn) / (2 * step), rel=1e-6)


def test_ursell_decays_along_a_strip():
    p = ModelParams(1.0, 0.5)
    strip = [(i, 0) for i in range(7)]
    vals = [abs(ursell(strip, p, [(0, 0), (d, 0)])) for d in (1, 2, 3, 4)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(-1.0, 1.0), st.integers(0, 2))
def test_transfer_matches_brute_force_property(beta, u, n):
    cells = [(0, 0), (1, 0), (1, 1)]
    p = ModelParams(beta, u, n)
    assert wall_partition(cells, p, hmax=n + 4).log_value == pytest.approx(
        brute_force_log_z(cells, p, n + 4), abs=1e-11)


def test_lattice_sum_polynomial_mode():
    allowed = {(0, 0): np.arange(5), (1, 0): np.arange(5)}
    ls, co = lattice_sum(allowed, 0, 1.0, poly=True)
    lx = 0.7
    direct = lattice_sum(allowed, 0, 1.0, reward=math.exp(lx))
    assert ls + math.log(np.sum(co * np.exp(lx * np.arange(len(co))))) == pytest.approx(direct, abs=1e-12)
