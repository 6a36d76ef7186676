import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pmf
from typeproj import (Alphabet, AlphabetMismatchError, EmpiricalType, Pmf, Sample,
                      ValidationError, i_divergence, l_divergence, shannon_entropy,
                      total_variation)

A2 = Alphabet((0, 1))
A3 = Alphabet((0, 1, 2))


def pmf_strategy(m):
    return st.lists(st.floats(0.0, 1.0), min_size=m, max_size=m).filter(
        lambda w: sum(w) > 1e-3).map(lambda w: Pmf.normalized(Alphabet.range(m), w))


class TestTypes:
    def test_alphabet_rules(self):
        with pytest.raises(ValidationError):
            Alphabet((1,))
        with pytest.raises(ValidationError):
            Alphabet((0, 2, 1))
        assert Alphabet.range(4).m == 4

    def test_pmf_rules(self):
        with pytest.raises(ValidationError, match="index 1"):
            Pmf(A2, [1.2, -0.2])
        with pytest.raises(ValidationError):
            Pmf(A2, [0.5, 0.6])
        with pytest.raises(ValidationError):
            Pmf(A3, [0.5, 0.5])
        p = Pmf(A2, [0.25, 0.75])
        assert not p.probs.flags.writeable

    def test_type_and_sample(self):
        t = EmpiricalType(A3, (2, 0, 1))
        assert t.n == 3
        with pytest.raises(ValidationError):
            EmpiricalType(A3, (0, 0, 0))
        s = Sample.from_values(A3, [2.0, 0.0, 0.0])
        assert s.type() == t
        with pytest.raises(ValidationError):
            Sample(A3, (0, 3))

    def test_seeded_draws_repeat(self):
        p = Pmf(A3, [0.2, 0.3, 0.5])
        assert Sample.draw(p, 100, 7) == Sample.draw(p, 100, 7)


class TestDivergences:
    def test_i_divergence_trivial(self):
        u = Pmf(A2, [0.5, 0.5])
        assert i_divergence(u, u) == 0
        assert i_divergence(Pmf(A2, [1, 0]), u) == pytest.approx(math.log(2), abs=1e-15)
        assert i_divergence(u, Pmf(A2, [1, 0])) == math.inf

    def test_i_divergence_oracle(self):
        # mpmath at 40 digits
        p = Pmf(A3, [0.2, 0.3, 0.5])
        q = Pmf(A3, [1 / 3, 1 / 3, 1 / 3])
        assert i_divergence(p, q) == pytest.approx(0.06895927460353616398, abs=1e-15)

    def test_l_divergence(self):
        u = Pmf(A2, [0.5, 0.5])
        assert l_divergence(u, u) == pytest.approx(math.log(2), abs=1e-15)
        assert l_divergence(Pmf(A2, [1, 0]), u) == math.inf

    def test_l_equals_entropy_plus_i(self, rng):
        A4 = Alphabet.range(4)
        for _ in range(50):
            p, q = random_pmf(rng, A4), random_pmf(rng, A4)
            assert l_divergence(q, p) == pytest.approx(
                shannon_entropy(p) + i_divergence(p, q), abs=1e-12)

    def test_entropy(self):
        assert shannon_entropy(Pmf(A2, [1, 0])) == 0
        assert shannon_entropy(Pmf.uniform(Alphabet.range(4))) == pytest.approx(math.log(4))
        assert shannon_entropy(Pmf(A3, [0.2, 0.3, 0.5])) == pytest.approx(
            1.0296530140645735274, abs=1e-15)

    def test_total_variation(self):
        p = Pmf(A2, [0.2, 0.8])
        assert total_variation(p, p) == 0
        assert total_variation(Pmf(A2, [1, 0]), Pmf(A2, [0, 1])) == 1
        assert total_variation(p, Pmf(A2, [0.5, 0.5])) == pytest.approx(0.3, abs=1e-15)

    def test_alphabet_mismatch(self):
        with pytest.raises(AlphabetMismatchError):
            i_divergence(Pmf.uniform(A2), Pmf.uniform(Alphabet((0, 2))))
        with pytest.raises(AlphabetMismatchError):
            total_variation(Pmf.uniform(A2), Pmf.uniform(A3))

    def test_l_projection_of_p_on_simplex_is_p(self):
        p = Pmf(A3, [0.23, 0.31, 0.46])
        best, arg = math.inf, None
        for a in range(101):
            for b in range(101 - a):
                q = Pmf.normalized(A3, [a, b, 100 - a - b])
                v = l_divergence(q, p)
                if v < best:
                    best, arg = v, q
        assert np.allclose(arg.probs, p.probs, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 8).flatmap(lambda m: st.tuples(pmf_strategy(m), pmf_strategy(m))))
def test_i_divergence_nonnegative(pair):
    p, q = pair
    d = i_divergence(p, q)
    assert d >= 0
    same_support = np.array_equal(p.probs > 0, q.probs > 0)
    if same_support and np.allclose(p.probs, q.probs, atol=1e-12, rtol=0):
        assert d <= 1e-10
    elif d == 0:
        assert np.allclose(p.probs, q.probs, atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6).flatmap(
    lambda m: st.tuples(pmf_strategy(m), pmf_strategy(m), pmf_strategy(m))))
def test_total_variation_is_metric(triple):
    a, b, c = triple
    assert total_variation(a, b) == pytest.approx(total_variation(b, a), abs=1e-15)
    assert total_variation(a, a) == 0
    assert total_variation(a, c) <= total_variation(a, b) + total_variation(b, c) + 1e-12
    assert 0 <= total_variation(a, b) <= 1
