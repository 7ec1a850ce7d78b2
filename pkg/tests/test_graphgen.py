import json

import numpy as np
import pytest

from heterodyn import (
    ExpectedDegreeSequence,
    FeasibilityError,
    Graph,
    HeterogeneityParams,
    build_heterogeneous_sequence,
    check_concentration,
    edge_probability,
    lambda_max,
    laplacian,
    sample_graph,
    second_order_average,
)
from heterodyn.graphgen import pair_uniforms, seed_stream

from conftest import complete_graph, path_graph, star_graph


class TestExpectedDegreeSequence:
    def test_sorted_nonincreasing(self):
        seq = ExpectedDegreeSequence([1.0, 3.0, 2.0, 3.0])
        assert np.all(np.diff(seq.w) <= 0)
        assert seq.w_max == 3.0
        assert seq.total == 9.0

    def test_feasibility_rejects_3_2_1(self):
        with pytest.raises(FeasibilityError, match="9"):
            ExpectedDegreeSequence([3.0, 2.0, 1.0])

    def test_rejects_nonpositive(self):
        with pytest.raises(FeasibilityError):
            ExpectedDegreeSequence([1.0, 0.0])
        with pytest.raises(FeasibilityError):
            ExpectedDegreeSequence([])

    def test_json_round_trip(self):
        seq = ExpectedDegreeSequence([2.0, 1.5, 1.0])
        back = ExpectedDegreeSequence.from_json(seq.to_json())
        assert np.array_equal(back.w, seq.w)

    def test_json_inconsistent_n(self):
        with pytest.raises(ValueError):
            ExpectedDegreeSequence.from_json(json.dumps({"n": 5, "w": [1.0, 1.0]}))


class TestEdgeProbability:
    def test_flat_sequence(self, flat_sequence):
        assert edge_probability(flat_sequence, 1, 2) == pytest.approx(0.5)

    def test_constant_sequence_gives_c_over_n(self):
        n, c = 16, 3.0
        seq = ExpectedDegreeSequence([c] * n)
        assert edge_probability(seq, 0, 5) == pytest.approx(c / n)

    def test_self_pair_rejected(self, flat_sequence):
        with pytest.raises(ValueError):
            edge_probability(flat_sequence, 2, 2)


class TestBuildHeterogeneousSequence:
    def test_all_hubs_maximal_when_c0_half(self, small_params):
        seq = build_heterogeneous_sequence(small_params, 1000, 60.0)
        assert seq.w[0] == seq.w[1] == 60.0

    def test_hub_cardinality_cap(self):
        # Gamma0 * 100^0.3 ~ 3.98, so 4 hubs are too many
        params = HeterogeneityParams(ell=4, theta=0.3, gamma=0.65, c0=0.5,
                                     Gamma1=0.4, Gamma2=2.0, beta=0.1)
        with pytest.raises(FeasibilityError, match="cardinality"):
            build_heterogeneous_sequence(params, 1000, 100.0)
        params3 = HeterogeneityParams(ell=3, theta=0.3, gamma=0.65, c0=0.5,
                                      Gamma1=0.4, Gamma2=2.0, beta=0.1)
        build_heterogeneous_sequence(params3, 3000, 100.0)

    def test_tail_ceiling(self):
        # with Gamma2 = 1, gamma = 0.65 every tail weight stays below
        # w_max^0.35 ~ 8.13; needs n large enough that sum(w) >= w_max^2
        params = HeterogeneityParams(ell=2, theta=0.25, gamma=0.65, c0=0.5,
                                     Gamma1=0.3, Gamma2=1.0, beta=0.1)
        seq = build_heterogeneous_sequence(params, 40_000, 400.0)
        assert np.all(seq.w[2:] < 400.0**0.35)
        assert np.all(seq.w[2:] > 0.3 * np.log(40_000) ** 1.1)

    def test_tail_band_infeasible(self):
        params = HeterogeneityParams(ell=2, theta=0.3, gamma=0.65, c0=0.5,
                                     Gamma0=5.0, Gamma1=0.4, Gamma2=2.0, beta=0.1)
        with pytest.raises(FeasibilityError, match="tail band"):
            build_heterogeneous_sequence(params, 10_000, 8.0)

    def test_hypothesis_audit(self, small_params):
        n, w_max = 2000, 80.0
        p = small_params
        seq = build_heterogeneous_sequence(p, n, w_max)
        ell = p.ell
        assert ell < p.Gamma0 * w_max**p.theta
        assert np.all(seq.w[:ell] >= 2 * p.c0 * w_max)
        assert seq.w[0] == w_max
        lo = p.Gamma1 * np.log(n) ** (1 + p.beta)
        hi = p.Gamma2 * w_max ** (1 - p.gamma)
        assert np.all((seq.w[ell:] > lo) & (seq.w[ell:] < hi))
        assert seq.w_max**2 <= seq.total

    def test_regime_placement(self):
        params = HeterogeneityParams(ell=2, theta=0.3, gamma=0.65, c0=0.35,
                                     Gamma1=0.4, Gamma2=2.0, beta=0.1,
                                     regimes=((1.0, 0.5), (0.9, 0.4)))
        seq = build_heterogeneous_sequence(params, 2000, 80.0)
        sigma, tau = params.regimes
        w_max = seq.w_max
        # hub 1 at w_max, hub 2 strictly between sigma_2 and tau_1
        assert seq.w[0] == w_max
        assert sigma[1] < seq.w[1] / w_max < tau[0]
        assert seq.w[2] / w_max < tau[1]

    def test_regimes_validation(self):
        with pytest.raises(FeasibilityError):
            HeterogeneityParams(ell=2, theta=0.3, gamma=0.65,
                                regimes=((0.5, 0.9), (0.4, 0.8)))
        with pytest.raises(FeasibilityError):
            HeterogeneityParams(ell=2, theta=0.3, gamma=0.65,
                                regimes=((0.9, 0.5), (0.95, 0.4)))

    def test_theorem_exponent_region(self):
        bad_theta = HeterogeneityParams(ell=2, theta=0.39, gamma=0.65)
        with pytest.raises(FeasibilityError, match="theta"):
            bad_theta.check_theorem_exponents()
        bad_gamma = HeterogeneityParams(ell=2, theta=0.3, gamma=0.6)
        with pytest.raises(FeasibilityError, match="gamma"):
            bad_gamma.check_theorem_exponents()
        HeterogeneityParams(ell=2, theta=0.3, gamma=0.65).check_theorem_exponents()

    def test_tail_hi_band(self, small_params):
        seq = build_heterogeneous_sequence(small_params, 2000, 80.0, tail_hi=6.0)
        assert np.all(seq.w[2:] < 6.0)
        with pytest.raises(FeasibilityError, match="tail_hi"):
            build_heterogeneous_sequence(small_params, 2000, 80.0, tail_hi=100.0)


class TestSampleGraph:
    def test_determinism(self, flat_sequence):
        g1 = sample_graph(flat_sequence, 1234)
        g2 = sample_graph(flat_sequence, 1234)
        assert np.array_equal(g1.edges, g2.edges)
        g3 = sample_graph(flat_sequence, 1235)
        assert g3.seed == 1235

    def test_structure_invariants(self, small_params):
        seq = build_heterogeneous_sequence(small_params, 300, 15.0)
        g = sample_graph(seq, 99)
        a = g.dense_adjacency()
        assert np.array_equal(a, a.T)
        assert np.all(np.diag(a) == 0)
        assert set(np.unique(a)) <= {0, 1}
        assert np.array_equal(g.degrees, a.sum(axis=1))

    def test_edge_frequency_two_nodes(self):
        # p_12 = 0.5 for w = (1, 1); 10^4 seeds
        seq = ExpectedDegreeSequence([1.0, 1.0])
        trials = 10_000
        hits = sum(sample_graph(seq, s).m for s in range(trials))
        sd = np.sqrt(trials * 0.5 * 0.5)
        assert abs(hits - 0.5 * trials) <= 3 * sd

    def test_edge_frequency_matches_p_ij(self):
        # all pair frequencies of a 3-node sequence within 3 binomial SDs
        seq = ExpectedDegreeSequence([1.6, 1.0, 0.8])
        trials = 10_000
        counts = np.zeros((3, 3))
        for s in range(trials):
            for i, j in sample_graph(seq, s).edges:
                counts[i, j] += 1
        for i in range(3):
            for j in range(i + 1, 3):
                p = edge_probability(seq, i, j)
                sd = np.sqrt(trials * p * (1 - p))
                assert abs(counts[i, j] - trials * p) <= 3 * sd

    def test_probability_one_gives_complete_graph(self):
        seq = ExpectedDegreeSequence([2.0, 2.0, 2.0, 2.0])
        # w_i w_j / sum = 4/8 = 0.5; scale so p = 1: w = (s,s,s,s) with s = n
        seq = ExpectedDegreeSequence([4.0] * 4)
        g = sample_graph(seq, 5)
        assert g.m == 6
        assert np.all(g.degrees == 3)

    def test_pair_uniforms_order_independent(self):
        k = np.array([5, 17, 3], dtype=np.int64)
        u1 = pair_uniforms(42, k)
        u2 = pair_uniforms(42, k[::-1])[::-1]
        assert np.array_equal(u1, u2)
        assert np.all((u1 >= 0) & (u1 < 1))

    def test_seed_stream_distinct(self):
        seeds = seed_stream(7, 100)
        assert len(set(seeds)) == 100
        assert seeds == seed_stream(7, 100)

    def test_graph_json_round_trip(self, flat_sequence):
        g = sample_graph(flat_sequence, 3)
        back = Graph.from_json(g.to_json())
        assert back.n == g.n and np.array_equal(back.edges, g.edges)
        assert back.seed == 3


class TestCheckConcentration:
    def test_complete_graph_deterministic(self):
        seq = ExpectedDegreeSequence([4.0] * 4)
        g = sample_graph(seq, 0)
        rep = check_concentration(g, seq)
        assert np.allclose(rep.deviations, abs(3 - 4.0))

    def test_bound_tie_case(self):
        # for w_i = log n the bound is 2 log n
        n = 50
        w = np.full(n, np.log(n))
        seq = ExpectedDegreeSequence(w)
        g = sample_graph(seq, 11)
        rep = check_concentration(g, seq)
        assert np.allclose(rep.bounds, 2 * np.log(n))

    def test_event_flag_matches_rows(self, small_params):
        seq = build_heterogeneous_sequence(small_params, 500, 20.0)
        g = sample_graph(seq, 21)
        rep = check_concentration(g, seq, small_params)
        assert rep.event == bool(np.all(rep.deviations <= rep.bounds))
        assert rep.floor == pytest.approx(1 - 2 * 500 ** (-0.2))
        assert rep.hub_tail_event is not None

    def test_csv_format(self, small_params):
        seq = build_heterogeneous_sequence(small_params, 200, 12.0)
        g = sample_graph(seq, 4)
        rep = check_concentration(g, seq)
        lines = rep.to_csv(g.degrees.astype(float), seq.w).splitlines()
        assert lines[0] == "node,kappa,w,deviation,bound,pass"
        assert len(lines) == 201

    def test_self_loop_exclusion_bias_small(self, small_params):
        # without self-loops E[kappa_i] = w_i (1 - w_i / sum w); the bias
        # w_i^2 / sum(w) must stay under 5% of the concentration bound
        seq = build_heterogeneous_sequence(small_params, 2000, 80.0)
        bias = seq.w**2 / seq.total
        bound = 2 * np.sqrt(np.log(seq.n)) * np.sqrt(
            np.maximum(seq.w, np.log(seq.n))
        )
        assert np.all(bias < 0.05 * bound)


class TestSecondOrderAverage:
    def test_constant_sequence(self, flat_sequence):
        assert second_order_average(flat_sequence) == pytest.approx(2.0)

    def test_direct_evaluation(self):
        seq = ExpectedDegreeSequence([3.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
        assert second_order_average(seq) == pytest.approx(17.0 / 11.0)

    def test_below_w_max_power(self, small_params):
        seq = build_heterogeneous_sequence(small_params, 2000, 80.0)
        assert second_order_average(seq) < 80.0**0.76


class TestLambdaMax:
    def test_complete_k3(self):
        assert lambda_max(complete_graph(3)) == pytest.approx(2.0, abs=1e-6)

    def test_star_1_plus_9(self):
        g = star_graph(9)
        assert lambda_max(g) == pytest.approx(3.0, abs=1e-6)
        dense = np.linalg.eigvalsh(g.dense_adjacency())
        assert dense[-1] == pytest.approx(3.0, abs=1e-10)

    def test_empty_graph(self):
        g = Graph(n=3, edges=np.empty((0, 2), dtype=np.int64))
        assert lambda_max(g) == 0.0

    def test_matches_dense_oracle(self):
        params = HeterogeneityParams(ell=2, theta=0.3, gamma=0.65, c0=0.5,
                                     Gamma0=3.0, Gamma1=0.4, Gamma2=2.0, beta=0.1)
        seq = build_heterogeneous_sequence(params, 50, 6.0)
        for seed in range(8):
            g = sample_graph(seq, seed)
            if g.m == 0:
                continue
            oracle = np.linalg.eigvalsh(g.dense_adjacency().astype(float))[-1]
            assert lambda_max(g) == pytest.approx(oracle, abs=1e-6)


class TestLaplacian:
    def test_single_edge(self):
        lap = laplacian(path_graph(2))
        assert np.array_equal(lap, [[1, -1], [-1, 1]])

    def test_empty_graph(self):
        g = Graph(n=3, edges=np.empty((0, 2), dtype=np.int64))
        assert np.array_equal(laplacian(g), np.zeros((3, 3)))

    def test_star_1_plus_3_eigenvalues(self):
        lap = laplacian(star_graph(3))
        vals = np.sort(np.linalg.eigvalsh(lap.astype(float)))
        assert np.allclose(vals, [0, 1, 1, 4], atol=1e-10)

    def test_row_sums_and_psd(self):
        params = HeterogeneityParams(ell=2, theta=0.3, gamma=0.65, c0=0.5,
                                     Gamma0=3.0, Gamma1=0.4, Gamma2=2.0, beta=0.1)
        seq = build_heterogeneous_sequence(params, 40, 5.5)
        g = sample_graph(seq, 13)
        lap = laplacian(g).astype(float)
        assert np.allclose(lap.sum(axis=1), 0.0)
        assert np.linalg.eigvalsh(lap)[0] >= -1e-10
