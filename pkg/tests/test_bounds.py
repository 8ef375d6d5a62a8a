import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbpgap import bounds as bd
from nbpgap import channel as ch
from nbpgap import code_graph as cg

from oracles import mp_prob_unbounded, mp_rho_W2, mp_rho_w3, mp_theorem1

ANCHOR = dict(n=100, d_v=10, T=10, m=10**6, w=1.0, b_lambda=10.0, delta=0.05)
# arbitrary-precision evaluation of the bound at ANCHOR, frozen
THEOREM1_ANCHOR = 50.178768568309434
LOG_RHO_W3_ANCHOR = 25.649266963880675
LOG_RHO_W2_ANCHOR = 47.626824914916611


def anchor(**kw):
    return bd.BoundInputs(**{**ANCHOR, **kw})


class TestInputs:
    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.1, 1.5])
    def test_delta_range(self, delta):
        with pytest.raises(bd.BoundsError):
            anchor(delta=delta)

    @pytest.mark.parametrize("kw", [{"n": 0}, {"T": 0}, {"m": 0}, {"d_v": 0.5}, {"w": -1.0}, {"beta": 0.0}])
    def test_nonpositive(self, kw):
        with pytest.raises(bd.BoundsError):
            anchor(**kw)

    def test_from_graph(self):
        g = cg.tanner_155()
        inp = bd.BoundInputs.from_graph(g, T=3, m=1000)
        assert (inp.n, inp.d_v, inp.profile) == (155, 3, None)
        h = bd.BoundInputs.from_graph(cg.hamming_7_4(), T=3, m=1000)
        assert h.d_v == 3 and sorted(h.profile) == [1, 1, 1, 2, 2, 2, 3]


class TestSpectral:
    @pytest.mark.parametrize(
        "w, d_v, expected", [(1.0, 4, (2, 3, 2, 1)), (0.0, 5, (0, 0, 0, 0)), (0.5, 9, (1.5, 4, 1.5, 0.5))]
    )
    def test_examples(self, w, d_v, expected):
        assert bd.spectral_bounds(w, d_v) == pytest.approx(expected, abs=1e-15)

    def test_profile_uses_max(self):
        assert bd.spectral_bounds(1.0, profile=(1, 4, 2)) == bd.spectral_bounds(1.0, 4)

    def test_bad_degree(self):
        with pytest.raises(bd.BoundsError):
            bd.spectral_bounds(1.0, 0)


class TestGeometric:
    @pytest.mark.parametrize("r, k", [(2.0, 5), (0.5, 7), (10.0, 1), (1.3, 40)])
    def test_direct(self, r, k):
        val, lim = bd.log_geometric_sum(math.log(r), k)
        assert not lim
        assert math.exp(val) == pytest.approx(sum(r**i for i in range(k)), rel=1e-12)

    def test_limit(self):
        val, lim = bd.log_geometric_sum(0.0, 6)
        assert lim and val == pytest.approx(math.log(6))

    def test_huge(self):
        val, _ = bd.log_geometric_sum(50.0, 100)
        assert math.isfinite(val) and val == pytest.approx(99 * 50.0, rel=1e-12)


class TestLipschitz:
    def test_rho_w4_is_b_lambda(self):
        lip = bd.lipschitz_constants(anchor(b_lambda=7.5))
        assert lip.rho_w4 == pytest.approx(7.5, rel=1e-15)

    def test_rho_w3_oracle(self):
        lip = bd.lipschitz_constants(anchor())
        assert lip.log_rho_w3 == pytest.approx(LOG_RHO_W3_ANCHOR, rel=1e-13)
        assert lip.log_rho_w3 == pytest.approx(float(np.log(float(mp_rho_w3(100, 10, 10, 1, 10)))), rel=1e-13)

    def test_rho_W2_oracle(self):
        lip = bd.lipschitz_constants(anchor())
        assert lip.log_rho_W2 == pytest.approx(LOG_RHO_W2_ANCHOR, rel=1e-13)
        assert lip.log_rho_W2 == pytest.approx(float(np.log(float(mp_rho_W2(100, 10, 10, 1, 10)))), rel=1e-13)

    def test_T1_has_no_W2(self):
        lip = bd.lipschitz_constants(anchor(T=1))
        assert lip.log_rho_W2 is None and len(lip.log_rho_W1) == 1

    def test_limit_branch(self):
        # n = 1 makes sqrt(n) = 1 and d_v = 2, w = 1 makes B_W2 = 1
        lip = bd.lipschitz_constants(anchor(n=1, d_v=2, T=4))
        assert "limit_sqrt_n" in lip.flags and "limit_B_W2" in lip.flags
        vals = [lip.log_rho_W2, lip.log_rho_w3, *lip.log_rho_W1]
        assert all(math.isfinite(v) for v in vals)

    def test_no_overflow(self):
        lip = bd.lipschitz_constants(anchor(n=10**4, T=100))
        assert all(math.isfinite(v) for v in (lip.log_rho_W2, lip.log_rho_w3, *lip.log_rho_W1))
        assert math.isfinite(bd.log_covering_decoder(anchor(n=10**4, T=100), 0.1))


class TestCovering:
    def test_log2_point(self):
        q, r, c, B = 3, 16, 9, 2.0
        eps = 2 * min(math.sqrt(r), math.sqrt(c)) * B
        assert bd.log_covering_sparse(q, r, c, B, eps) == pytest.approx(q * r * math.log(2), rel=1e-15)

    def test_large_eps(self):
        assert bd.log_covering_sparse(3, 10, 10, 1.0, 1e15) < 1e-12

    def test_monotone(self):
        eps = np.logspace(-3, 3, 25)
        vals = [bd.log_covering_sparse(2, 10, 20, 1.0, e) for e in eps]
        assert np.all(np.diff(vals) < 0)
        vals = [bd.log_covering_sparse(2, 10, 20, B, 0.1) for B in np.linspace(0.1, 5, 25)]
        assert np.all(np.diff(vals) > 0)

    @given(st.integers(1, 30), st.integers(1, 30), st.floats(0.01, 10), st.floats(0.01, 10))
    def test_sparse_not_above_dense(self, r, c, B, eps):
        q = max(1, c // 2)
        assert bd.log_covering_sparse(q, r, c, B, eps) <= bd.log_covering_sparse(c, r, c, B, eps)

    def test_bad_eps(self):
        with pytest.raises(bd.BoundsError):
            bd.log_covering_sparse(1, 1, 1, 1.0, 0.0)
        with pytest.raises(bd.BoundsError):
            bd.log_covering_decoder(anchor(), -1.0)

    def test_decoder_cover_decreasing(self):
        vals = [bd.log_covering_decoder(anchor(), e) for e in (0.01, 0.1, 1.0, 10.0)]
        assert np.all(np.diff(vals) < 0)


class TestTheorem1:
    def test_anchor_value(self):
        rep = bd.theorem1_rhs(anchor())
        assert rep.total == pytest.approx(THEOREM1_ANCHOR, rel=1e-12)
        assert rep.total == pytest.approx(float(mp_theorem1(100, 10, 10, 10**6, 1, 10, 0.05)), rel=1e-12)
        assert "vacuous" in rep.flags

    def test_terms_sum(self):
        rep = bd.theorem1_rhs(anchor())
        assert rep.terms["sample"] == 4e-6
        assert rep.terms["confidence"] == pytest.approx(math.sqrt(math.log(20) / 2e6), rel=1e-15)
        assert rep.total == pytest.approx(sum(rep.terms.values()), rel=1e-15)

    def test_decreasing_in_m(self):
        vals = [bd.theorem1_rhs(anchor(m=m)).total for m in (1e6, 4e6, 16e6)]
        assert vals[0] > vals[1] > vals[2]

    def test_tends_to_zero(self):
        assert bd.theorem1_rhs(anchor(m=1e30)).total < 1e-6

    def test_doubling_T(self):
        d10 = bd.dominant_term(100, 10, 10, 1e6)
        d20 = bd.dominant_term(100, 10, 20, 1e6)
        assert 1.9 < d20 / d10 < 2.1

    @pytest.mark.parametrize("name, grid", [
        ("T", [1, 2, 5, 10, 30]), ("n", [10, 100, 1000]), ("d_v", [2, 3, 8, 15]),
        ("w", [0.5, 1, 3]), ("b_lambda", [1, 10, 100]),
    ])
    def test_increasing(self, name, grid):
        vals = [bd.theorem1_rhs(anchor(**{name: v})).total for v in grid]
        assert np.all(np.diff(vals) > 0)

    def test_bad_log_argument(self):
        with pytest.raises(bd.PreconditionError, match="b_lambda"):
            bd.theorem1_rhs(anchor(b_lambda=1e-9))

    def test_json(self):
        data = json.loads(bd.theorem1_rhs(anchor()).to_json())
        assert data["kind"] == "theorem1" and data["inputs"]["n"] == 100


class TestRateForm:
    def test_identity(self):
        inp = bd.BoundInputs(n=155, d_v=3, d_c=5, kappa=62 / 155, T=3, m=1e4)
        assert bd.theorem1_rate_form(inp).total == pytest.approx(bd.theorem1_rhs(inp).total, rel=1e-14)

    def test_tanner_true_rate_mismatch(self):
        # 155 * 3 edges counted from the variables, 91 * 5 from the independent checks
        inp = bd.BoundInputs(n=155, d_v=3, d_c=5, kappa=64 / 155, T=3, m=1e4)
        with pytest.raises(bd.BoundsError, match="mismatch"):
            bd.theorem1_rate_form(inp)

    def test_missing_fields(self):
        with pytest.raises(bd.BoundsError):
            bd.theorem1_rate_form(anchor())

    def test_high_rate_toward_floor(self):
        d_c, T, m = 40, 4, 1e6
        vals, floors = [], []
        for kappa in (0.5, 0.75, 0.9, 0.975):
            d_v = d_c * (1 - kappa)
            inp = bd.BoundInputs(n=100, d_v=d_v, d_c=d_c, kappa=kappa, T=T, m=m)
            vals.append(bd.theorem1_rate_form(inp).terms["complexity"])
            floors.append(12 * math.sqrt((T + 1) / m * math.log(8 * math.sqrt(m * 100) * d_v * 10)))
        assert np.all(np.diff(vals) < 0)
        assert all(v > f for v, f in zip(vals, floors))


class TestTheorem2:
    def test_constant_profile(self):
        inp = anchor()
        rep = bd.theorem2_rhs([10] * 100, inp)
        assert rep.extra["sum_sq_degrees"] == 100 * 100
        # same log argument, (T+1)^2 replaces (n d_v^2 T + 1)(T+1) / (n d_v^2)
        t1 = bd.theorem1_rhs(inp).terms["complexity"]
        ratio = rep.terms["complexity"] / t1
        assert ratio == pytest.approx(math.sqrt(1e4 * 11 * 11 / ((1e4 * 10 + 1) * 11)), rel=1e-12)

    def test_unit_profile_smallest(self):
        inp = anchor(n=20)
        ones = bd.theorem2_rhs([1] * 20, inp).terms["complexity"]
        other = bd.theorem2_rhs([1] * 19 + [2], inp).terms["complexity"]
        assert ones < other

    def test_hamming_profile(self):
        g = cg.hamming_7_4()
        rep = bd.theorem2_rhs(g.var_degrees.tolist(), bd.BoundInputs(n=7, d_v=3, T=3, m=1e4))
        assert rep.extra["sum_sq_degrees"] == 3 * 1 + 3 * 4 + 9
        assert rep.extra["max_degree"] == 3

    @pytest.mark.parametrize("profile", [[], [1, 2], [0] * 7])
    def test_bad_profile(self, profile):
        with pytest.raises(bd.BoundsError):
            bd.theorem2_rhs(profile, bd.BoundInputs(n=7, d_v=3, T=3, m=1e4))


class TestQFunction:
    def test_zero(self):
        assert bd.q_function(0.0) == 0.5

    @given(st.floats(-8, 8))
    def test_symmetry(self, x):
        assert bd.q_function(x) + bd.q_function(-x) == pytest.approx(1.0, abs=1e-15)

    def test_quantile(self):
        assert abs(bd.q_function(1.6449) - 0.05) < 1e-4

    def test_vector(self):
        assert bd.q_function(np.array([0.0, 0.0])).tolist() == [0.5, 0.5]


class TestProbability:
    def test_oracle(self):
        got = bd.prob_llr_unbounded(100, 1.0, 10.0)
        assert got == pytest.approx(float(mp_prob_unbounded(100, 1, 10)), rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 10**5), st.floats(0.05, 20))
    def test_zero_clip_is_certain(self, n, beta):
        assert bd.prob_llr_unbounded(n, beta, 0.0) == 1.0

    def test_large_clip(self):
        assert bd.prob_llr_unbounded(100, 1.0, 1e4) == 0.0

    @pytest.mark.parametrize("beta", [0.3, 1.0, 3.0])
    def test_range_and_monotone(self, beta):
        vals = [bd.prob_llr_unbounded(50, beta, b) for b in bd.default_b_lambda_grid()]
        assert all(0.0 <= v <= 1.0 for v in vals)
        assert np.all(np.diff(vals) <= 0)

    def test_monte_carlo_small(self):
        # a cheap version of the 10^7-draw acceptance check
        n, beta, b = 5, 1.0, 4.0
        draws = 200_000
        y = ch.add_awgn(np.ones((draws, n)), beta, np.random.default_rng(0))
        hit = (np.abs(2 * y / beta**2) > b).any(axis=1).mean()
        p = bd.prob_llr_unbounded(n, beta, b)
        assert abs(hit - p) < 4 * math.sqrt(p * (1 - p) / draws)

    def test_bad_beta(self):
        with pytest.raises(bd.BoundsError):
            bd.prob_llr_unbounded(10, 0.0, 1.0)


class TestTheorem3:
    def test_components_monotone(self):
        rep = bd.theorem3_rhs(anchor(beta=1.0))
        curve = rep.extra["curve"]
        comp = [r["complexity"] for r in curve]
        prob = [r["probability"] for r in curve]
        assert np.all(np.diff(comp) >= 0)
        assert np.all(np.diff(prob) <= 0)
        assert rep.total == pytest.approx(min(r["phi"] for r in curve) + 4e-6 + math.sqrt(math.log(20) / 2e6))

    def test_small_beta_low_end(self):
        rep = bd.theorem3_rhs(anchor(beta=0.5))
        assert rep.extra["b_lambda_star"] == bd.default_b_lambda_grid()[0]
        assert "argmin_at_grid_start" in rep.flags

    def test_small_model_interior(self):
        # with a tiny complexity term the probability term decides
        inp = bd.BoundInputs(n=2, d_v=1, T=1, m=1e14, beta=1.0)
        rep = bd.theorem3_rhs(inp)
        assert 0.1 < rep.extra["b_lambda_star"] < 1000

    def test_needs_beta(self):
        with pytest.raises(bd.BoundsError):
            bd.theorem3_rhs(anchor())

    def test_empty_grid(self):
        with pytest.raises(bd.BoundsError):
            bd.theorem3_rhs(anchor(beta=1.0), [])
        with pytest.raises(bd.PreconditionError):
            bd.theorem3_rhs(anchor(beta=1.0), [1e-12])

    def test_optimum_nondecreasing_in_beta(self):
        _, optima = bd.fig3_curves()
        stars = [o["b_lambda_star"] for o in optima]
        assert all(b2 >= b1 for b1, b2 in zip(stars, stars[1:]))


class TestProposition1:
    def test_zero_at_delta_one(self):
        assert bd.proposition1_rhs(np.zeros(7), 7, 100, 1.0) == 0.0

    def test_constant(self):
        r = 0.12
        got = bd.proposition1_rhs(np.full(5, r), 5, 400, 0.05)
        assert got == pytest.approx(r + math.sqrt(math.log(20) / 800), rel=1e-14)
        assert bd.proposition1_rhs(r, 5, 400, 0.05) == got

    def test_half(self):
        assert bd.proposition1_rhs(np.ones(4), 4, 100, 1.0, half=True) == 0.5

    @pytest.mark.parametrize("delta", [0.0, 1.5])
    def test_bad_delta(self, delta):
        with pytest.raises(bd.BoundsError):
            bd.proposition1_rhs(np.zeros(3), 3, 10, delta)

    def test_shape(self):
        with pytest.raises(bd.BoundsError):
            bd.proposition1_rhs(np.zeros(3), 4, 10, 0.5)


class TestRademacher:
    def test_single_function_near_zero(self):
        m, draws = 200, 512
        f = np.where(np.random.default_rng(0).random(m) < 0.5, 1.0, -1.0)
        reps = [bd.rademacher_from_outputs(f[None, :], draws, seed=s) for s in range(100)]
        assert abs(np.mean(reps)) < 4 / math.sqrt(draws * m)

    def test_two_constants(self):
        m = 400
        est = bd.rademacher_from_outputs(np.stack([np.ones(m), -np.ones(m)]), 20_000, seed=1)
        assert abs(est / math.sqrt(2 / (math.pi * m)) - 1) < 0.1

    def test_chunking_deterministic(self):
        F = np.stack([np.ones(50), -np.ones(50)])
        assert bd.rademacher_from_outputs(F, 700, seed=3) == bd.rademacher_from_outputs(F, 700, seed=3)

    def test_empty(self):
        with pytest.raises(bd.BoundsError):
            bd.rademacher_from_outputs(np.zeros((1, 0)), 10)

    def test_decoder_pipeline(self):
        g = cg.hamming_7_4()
        ds = ch.generate_dataset(g, 60, beta=1.0, seed=0)
        ws = bd.sample_weights(g, T=2, w=1.0, K=4, seed=0)
        assert all(wt.max_abs() <= 1.0 for wt in ws)
        est = [bd.estimate_bitwise_rademacher(g, ws, ds, j, 64, seed=j) for j in range(g.n)]
        assert all(0.0 <= e <= 1.0 for e in est)
        assert math.isfinite(bd.proposition1_rhs(est, g.n, ds.m, 0.05))

    def test_trend_over_m(self):
        g = cg.hamming_7_4()
        ws = bd.sample_weights(g, T=2, w=1.0, K=4, seed=0)
        vals = []
        for m in (100, 1000, 10000):
            ds = ch.generate_dataset(g, m, beta=1.0, seed=0)
            vals.append(bd.estimate_bitwise_rademacher(g, ws, ds, 0, 256, seed=0))
        assert vals[0] >= vals[1] >= vals[2]

    def test_bad_bit(self):
        g = cg.hamming_7_4()
        ds = ch.generate_dataset(g, 5, beta=1.0, seed=0)
        with pytest.raises(bd.BoundsError):
            bd.estimate_bitwise_rademacher(g, bd.sample_weights(g, 1, 1.0, 1), ds, 7, 4)


@pytest.fixture(scope="module")
def curves():
    return bd.fig2_curves()


class TestFigures:
    def test_monotone(self, curves):
        assert np.all(np.diff([r["total"] for r in curves["m"]]) < 0)
        for name in ("T", "n", "d_v"):
            assert np.all(np.diff([r["total"] for r in curves[name]]) > 0)

    def test_anchor_row(self, curves):
        row = next(r for r in curves["T"] if r["T"] == 10)
        assert row["total"] == pytest.approx(THEOREM1_ANCHOR, rel=1e-12)

    def test_write_rows(self, curves, tmp_path):
        bd.write_rows(curves["m"], tmp_path / "m.csv")
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert len(lines) == 1 + len(curves["m"])
        with pytest.raises(bd.BoundsError):
            bd.write_rows([], tmp_path / "x.csv")
