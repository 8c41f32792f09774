"""The five distribution primitives against worked examples and oracles."""

import itertools

import numpy as np
import pytest

from symgrad import (
    UNDEFINED,
    ContextError,
    Damp,
    DtkpAm,
    ProgramContext,
    SymbolFunctionError,
    apply,
    apply_if,
    encode_symbol,
    get_probs,
    make_distribution,
    sample_symbols,
    stack,
    union,
)

# Example digit classifier rows; entries named in the worked examples are
# exact, the rest are filled so each row sums to 1.
D1_ROW = [0.00, 0.90, 0.02, 0.012, 0.012, 0.012, 0.012, 0.012, 0.01, 0.01]
D2_ROW = [0.78, 0.09, 0.02, 0.02, 0.02, 0.02, 0.02, 0.01, 0.01, 0.01]
DIGITS = list(range(10))


def ctx_damp():
    return ProgramContext(Damp())


def ctx_dtkp(k):
    return ProgramContext(DtkpAm(k))


def probs_of(d):
    return {s: p for s, p in zip(d.symbols, d.forward_probs()[0])}


def enum_apply(f, dicts, cond=None):
    """Brute-force add-mult oracle over mutually-exclusive inputs."""
    out = {}
    for combo in itertools.product(*(d.items() for d in dicts)):
        syms = tuple(s for s, _ in combo)
        if cond is not None and not cond(*syms):
            continue
        r = f(*syms)
        if r is UNDEFINED:
            continue
        weight = 1.0
        for _, p in combo:
            weight *= p
        out[r] = out.get(r, 0.0) + weight
    return {s: min(p, 1.0) for s, p in out.items()}


class TestMakeDistribution:
    def test_example_digit_distribution(self):
        ctx = ctx_damp()
        d1 = make_distribution(ctx, [D1_ROW], DIGITS)
        got = probs_of(d1)
        assert got[0] == 0.0 and got[1] == 0.9 and got[9] == 0.01

    def test_probability_one_padding_distribution(self):
        ctx = ctx_damp()
        pad = make_distribution(ctx, [[1.0]], [""])
        assert probs_of(pad) == {"": 1.0}

    def test_empty_symbol_list_rejected(self):
        with pytest.raises(ValueError):
            make_distribution(ctx_damp(), np.ones((1, 0)), [])

    def test_duplicate_symbols_rejected(self):
        with pytest.raises(ValueError):
            make_distribution(ctx_damp(), [[0.5, 0.5]], [1, 1])

    def test_registering_after_freeze_rejected(self):
        ctx = ctx_damp()
        d = make_distribution(ctx, [[0.5, 0.5]], [0, 1])
        get_probs(d)
        with pytest.raises(Exception, match="frozen"):
            make_distribution(ctx, [[1.0]], [2])


class TestApply:
    def test_worked_example_sum(self):
        ctx = ctx_damp()
        d1 = make_distribution(ctx, [D1_ROW], DIGITS)
        d2 = make_distribution(ctx, [D2_ROW], DIGITS)
        out = apply(lambda x, y: x + y, d1, d2)
        assert probs_of(out)[1] == pytest.approx(0.702, abs=1e-12)

    def test_identity_map_preserves_everything(self):
        ctx = ctx_damp()
        d = make_distribution(ctx, [D1_ROW], DIGITS)
        out = apply(lambda s: s, d)
        assert out.symbols == d.symbols
        np.testing.assert_array_equal(out.forward_probs(), d.forward_probs())

    def test_uniform_sum_matches_enumeration(self):
        ctx = ctx_damp()
        third = [[1 / 3] * 3]
        da = make_distribution(ctx, third, [0, 1, 2])
        db = make_distribution(ctx, third, [0, 1, 2])
        out = apply(lambda x, y: x + y, da, db)
        assert out.symbols == (0, 1, 2, 3, 4)
        np.testing.assert_allclose(
            out.forward_probs()[0],
            np.array([1, 2, 3, 2, 1]) / 9.0,
            atol=1e-12,
        )

    def test_matches_enumeration_oracle_on_random_instances(self, rng):
        for trial in range(10):
            ctx = ctx_damp()
            dists, dicts = [], []
            for _ in range(int(rng.integers(1, 4))):
                n = int(rng.integers(1, 7))
                row = rng.uniform(size=n)
                row /= row.sum()
                syms = list(range(n))
                dists.append(make_distribution(ctx, row.reshape(1, -1), syms))
                dicts.append(dict(zip(syms, row)))
            out = apply(lambda *xs: sum(xs) % 5, *dists)
            expect = enum_apply(lambda *xs: sum(xs) % 5, dicts)
            got = probs_of(out)
            assert set(got) == set(expect)
            for s, p in expect.items():
                assert got[s] == pytest.approx(p, abs=1e-9)

    def test_relabel_with_injective_f_is_exact(self, rng):
        ctx = ctx_damp()
        row = rng.uniform(size=(1, 6))
        d = make_distribution(ctx, row, list(range(6)))
        out = apply(lambda s: s * 10, d)
        np.testing.assert_array_equal(out.forward_probs(), row)

    def test_undefined_results_are_dropped(self):
        ctx = ctx_damp()
        d = make_distribution(ctx, [[0.5, 0.5]], [0, 1])
        out = apply(lambda s: UNDEFINED if s == 0 else s, d)
        assert out.symbols == (1,)

    def test_empty_input_propagates(self):
        ctx = ctx_damp()
        d = make_distribution(ctx, [[0.5, 0.5]], [0, 1])
        empty = d.filter(lambda s: False)
        out = apply(lambda x, y: x + y, d, empty)
        assert len(out) == 0

    def test_symbol_order_is_first_derivation(self):
        ctx = ctx_damp()
        d = make_distribution(ctx, [[0.25] * 4], [3, 1, 2, 0])
        out = apply(lambda s: s % 2, d)
        assert out.symbols == (1, 0)

    def test_symbols_independent_of_tag_values(self, rng):
        rows = [rng.uniform(size=(1, 4)) for _ in range(2)]
        symbol_lists = []
        for row in rows:
            ctx = ctx_damp()
            d = make_distribution(ctx, row, [0, 1, 2, 3])
            symbol_lists.append(apply(lambda x, y: x * y, d, d).symbols)
        assert symbol_lists[0] == symbol_lists[1]

    def test_user_exception_carries_symbols(self):
        ctx = ctx_damp()
        d = make_distribution(ctx, [[0.5, 0.5]], [0, 1])
        with pytest.raises(SymbolFunctionError) as err:
            apply(lambda x, y: x / y, d, d)
        assert err.value.symbols == (0, 0)

    def test_context_mismatch_rejected(self):
        d1 = make_distribution(ctx_damp(), [[1.0]], [0])
        d2 = make_distribution(ctx_damp(), [[1.0]], [0])
        with pytest.raises(ContextError):
            apply(lambda x, y: x + y, d1, d2)


class TestApplyIf:
    def test_cond_false_gives_empty(self):
        ctx = ctx_damp()
        d = make_distribution(ctx, [[0.5, 0.5]], [0, 1])
        out = apply_if(lambda x: x, lambda x: False, d)
        assert len(out) == 0

    def test_cond_true_equals_apply(self, rng):
        row = rng.uniform(size=(1, 5))
        row /= row.sum()
        ctx1, ctx2 = ctx_damp(), ctx_damp()
        d1 = make_distribution(ctx1, row, list(range(5)))
        d2 = make_distribution(ctx2, row, list(range(5)))
        a = apply_if(lambda x, y: x + y, lambda x, y: True, d1, d1)
        b = apply(lambda x, y: x + y, d2, d2)
        assert a.symbols == b.symbols
        np.testing.assert_allclose(a.forward_probs(), b.forward_probs(), atol=1e-15)

    def test_one_closure_step(self):
        from collections import namedtuple

        Coord = namedtuple("Coord", ["x", "y"])
        ctx = ctx_damp()
        edges = make_distribution(
            ctx, [[1.0, 1.0]], [Coord(1, 2), Coord(2, 3)]
        )
        out = apply_if(
            lambda p, e: Coord(p.x, e.y),
            lambda p, e: p.y == e.x,
            edges,
            edges,
        )
        assert out.symbols == (Coord(1, 3),)


class TestFilter:
    def test_worked_example_even_filter(self):
        ctx = ctx_damp()
        d1 = make_distribution(ctx, [D1_ROW], DIGITS)
        out = d1.filter(lambda x: x % 2 == 0)
        got = probs_of(out)
        assert set(out.symbols) == {0, 2, 4, 6, 8}
        assert got[0] == 0.0 and got[2] == 0.02 and got[8] == 0.01

    def test_true_predicate_is_identity(self):
        ctx = ctx_damp()
        d = make_distribution(ctx, [D1_ROW], DIGITS)
        out = d.filter(lambda s: True)
        assert out.symbols == d.symbols
        np.testing.assert_array_equal(out.forward_probs(), d.forward_probs())

    def test_false_predicate_empties(self):
        ctx = ctx_damp()
        d = make_distribution(ctx, [D1_ROW], DIGITS)
        assert len(d.filter(lambda s: False)) == 0

    def test_filter_composition(self, rng):
        ctx = ctx_damp()
        d = make_distribution(ctx, rng.uniform(size=(1, 10)), DIGITS)
        p = lambda s: s % 2 == 0
        q = lambda s: s > 3
        both = d.filter(p).filter(q)
        combined = d.filter(lambda s: p(s) and q(s))
        assert both.symbols == combined.symbols
        np.testing.assert_array_equal(
            both.forward_probs(), combined.forward_probs()
        )


class TestUnion:
    def test_worked_example(self):
        ctx = ctx_damp()
        d1 = make_distribution(ctx, [[0.01, 0.24]], [0, 1])
        d2 = make_distribution(ctx, [[0.63, 0.37]], [0, 4])
        out = union(d1, d2)
        got = probs_of(out)
        assert got == pytest.approx({0: 0.64, 1: 0.24, 4: 0.37}, abs=1e-12)

    def test_union_with_empty_is_identity(self):
        ctx = ctx_damp()
        d = make_distribution(ctx, [[0.3, 0.7]], [0, 1])
        empty = d.filter(lambda s: False)
        assert union(d, empty) is d
        assert union(empty, d) is d

    def test_union_self_dtkp_is_idempotent(self):
        ctx = ctx_dtkp(3)
        d = make_distribution(ctx, [[0.6, 0.4]], [0, 1])
        out = union(d, d)
        assert out.symbols == d.symbols
        for col in range(2):
            assert out.tags.proof_sets(col) == d.tags.proof_sets(col)
        np.testing.assert_allclose(
            out.forward_probs(), d.forward_probs(), atol=1e-15
        )

    def test_commutative_and_associative_at_probability_level(self, rng):
        for _ in range(5):
            rows = [rng.uniform(size=(1, 3)) for _ in range(3)]
            symsets = [[0, 1, 2], [1, 2, 3], [2, 3, 4]]

            def build(order):
                ctx = ctx_damp()
                ds = [
                    make_distribution(ctx, rows[i], symsets[i]) for i in range(3)
                ]
                a, b, c = (ds[i] for i in order)
                return probs_of(union(union(a, b), c))

            base = build((0, 1, 2))
            for order in [(1, 0, 2), (2, 1, 0), (0, 2, 1)]:
                other = build(order)
                assert set(base) == set(other)
                for s in base:
                    assert base[s] == pytest.approx(other[s], abs=1e-12)


class TestGetProbs:
    def test_input_distribution_roundtrip(self, rng):
        ctx = ctx_damp()
        row = rng.uniform(size=(1, 10))
        d = make_distribution(ctx, row, DIGITS)
        np.testing.assert_array_equal(get_probs(d).data, row)

    def test_sum2_uniform_probs_sum_to_one(self):
        ctx = ctx_damp()
        rows = [[0.1] * 10]
        da = make_distribution(ctx, rows, DIGITS)
        db = make_distribution(ctx, rows, DIGITS)
        out = apply(lambda x, y: x + y, da, db)
        assert get_probs(out).data.sum() == pytest.approx(1.0, abs=1e-9)

    def test_differentiable_to_leaves(self):
        ctx = ctx_damp()
        row = ctx.tape.leaf([[0.2, 0.8]])
        d = make_distribution(ctx, row, [0, 1])
        out = apply(lambda x: x + 1, d)
        from symgrad import tensor as T

        loss = T.reduce_sum(T.reduce_sum(get_probs(out), 0), 0)
        grads = ctx.tape.backward(loss)
        np.testing.assert_allclose(grads[row].data, [[1.0, 1.0]])


class TestSampleSymbols:
    def test_noop_when_m_at_least_n(self):
        ctx = ctx_damp()
        d = make_distribution(ctx, [D1_ROW], DIGITS)
        assert sample_symbols(d, 10) is d
        assert sample_symbols(d, 50) is d

    def test_top_mean_keeps_most_probable(self):
        ctx = ctx_damp()
        d = make_distribution(ctx, [D1_ROW], DIGITS)
        out = sample_symbols(d, 1)
        assert out.symbols == (1,)

    def test_seeded_sampling_reproducible(self, rng):
        row = rng.uniform(size=(1, 10))
        picks = []
        for _ in range(2):
            ctx = ctx_damp()
            d = make_distribution(ctx, row, DIGITS)
            out = sample_symbols(d, 4, seed=7, strategy="categorical")
            picks.append(out.symbols)
        assert picks[0] == picks[1]

    def test_m_below_one_rejected(self):
        ctx = ctx_damp()
        d = make_distribution(ctx, [D1_ROW], DIGITS)
        with pytest.raises(ValueError):
            sample_symbols(d, 0)


class TestStack:
    @pytest.mark.parametrize("make_ctx", [ctx_damp, lambda: ctx_dtkp(2)])
    def test_identical_parts_replicate(self, make_ctx):
        ctx = make_ctx()
        parts = [make_distribution(ctx, [[0.3, 0.7]], [0, 1]) for _ in range(3)]
        out = stack(parts)
        probs = out.forward_probs()
        assert probs.shape == (3, 2)
        np.testing.assert_allclose(probs, np.tile([[0.3, 0.7]], (3, 1)))

    @pytest.mark.parametrize("make_ctx", [ctx_damp, lambda: ctx_dtkp(2)])
    def test_disjoint_parts_zero_padded(self, make_ctx):
        ctx = make_ctx()
        pa = make_distribution(ctx, [[0.8]], ["a"])
        pb = make_distribution(ctx, [[0.5]], ["b"])
        out = stack([pa, pb])
        assert out.symbols == ("a", "b")
        np.testing.assert_allclose(
            out.forward_probs(), [[0.8, 0.0], [0.0, 0.5]], atol=1e-15
        )

    @pytest.mark.parametrize("make_ctx", [ctx_damp, lambda: ctx_dtkp(3)])
    def test_rowwise_equivalence_with_parts(self, make_ctx, rng):
        ctx = make_ctx()
        parts = []
        for i in range(4):
            row = rng.uniform(size=(1, 3))
            d = make_distribution(ctx, row, [0, 1, 2])
            parts.append(apply(lambda x, y: x + y, d, d))
        out = stack(parts)
        stacked = out.forward_probs()
        for i, part in enumerate(parts):
            ref = {s: p for s, p in zip(part.symbols, part.forward_probs()[0])}
            for j, s in enumerate(out.symbols):
                assert stacked[i, j] == pytest.approx(ref.get(s, 0.0), abs=1e-12)


class TestEncodeSymbol:
    def test_injectivity_across_types(self):
        values = [1, "1", True, False, 0, None, (1,), (1, 2), ((1,), 2), 1.0, "ab"]
        encodings = [encode_symbol(v) for v in values]
        assert len(set(encodings)) == len(values)

    def test_tuple_nesting_unambiguous(self):
        assert encode_symbol(("a", "bc")) != encode_symbol(("ab", "c"))

    def test_unsupported_type_rejected(self):
        with pytest.raises(TypeError):
            encode_symbol(object())
