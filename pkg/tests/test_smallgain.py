import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iossnet.errors import CompositionError, SpecificationError
from iossnet.smallgain import (
    SubsystemIossCertificate,
    SubsystemLyapCertificate,
    Verdict,
    build_G,
    build_lambda_gamma,
    check_small_gain,
    check_small_gain_uniform,
    compose_overall_lyapunov,
    compute_mu,
    derive_trajectory_certificate,
    spectral_radius,
    verdict_of,
)


def traj(eta=0.5, p=1.0, g=None):
    return SubsystemIossCertificate(eta, p, 1.0, 1.0, g or {})


def lyap(lam=0.5, gamma=None):
    return SubsystemLyapCertificate(lam, np.eye(1), np.eye(1), np.eye(1), np.eye(1), gamma or {})


def chain(M):
    return [[j for j in (i - 1, i + 1) if 0 <= j < M] for i in range(M)]


class TestGainMatrices:
    def test_two_node_G(self):
        G = build_G([traj(g={1: 0.2}), traj(g={0: 0.2})], [[1], [0]])
        np.testing.assert_allclose(G, [[0.0, 0.4], [0.4, 0.0]])

    def test_chain_pattern(self):
        certs = [traj(g={j: 0.1 for j in nb}) for nb in chain(3)]
        G = build_G(certs, chain(3))
        assert np.all(np.diag(G) == 0)
        assert G[0, 2] == 0 and G[2, 0] == 0
        assert G[0, 1] > 0 and G[1, 0] > 0 and G[1, 2] > 0

    def test_gain_topology_mismatch(self):
        with pytest.raises(SpecificationError):
            build_G([traj(g={1: 0.2}), traj()], [[1], [0]])

    def test_eta_range(self):
        with pytest.raises(SpecificationError):
            traj(eta=1.0)

    def test_lambda_gamma(self):
        Lam, Gam = build_lambda_gamma([lyap(gamma={1: 0.2}), lyap(gamma={0: 0.2})], [[1], [0]])
        np.testing.assert_allclose(np.linalg.inv(Lam) @ Gam, [[0, 0.4], [0.4, 0]])


class TestSpectralRadius:
    def test_zero(self):
        assert spectral_radius(np.zeros((3, 3))) == 0.0

    def test_bipartite(self):
        assert spectral_radius([[0, 0.4], [0.4, 0]]) == pytest.approx(0.4, abs=1e-10)

    def test_matches_dense(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            A = rng.uniform(0, 1, (5, 5)) * (rng.uniform(size=(5, 5)) < 0.6)
            assert spectral_radius(A) == pytest.approx(spectral_radius(A, method="dense"), abs=1e-8)

    def test_power_only_irreducible(self):
        rng = np.random.default_rng(3)
        A = rng.uniform(0.1, 1, (6, 6))
        assert spectral_radius(A, method="power") == pytest.approx(spectral_radius(A, method="dense"), abs=1e-9)

    def test_power_only_raises_when_stalled(self):
        A = np.array([[0.5, 1.0], [0.0, 0.2]])
        with pytest.raises(RuntimeError):
            spectral_radius(A, method="power", max_iter=200)
        assert spectral_radius(A) == pytest.approx(0.5)

    def test_reducible_nilpotent(self):
        A = np.array([[0.0, 0.5, 0.0], [0.0, 0.0, 0.5], [0.0, 0.0, 0.0]])
        assert spectral_radius(A) == pytest.approx(0.0, abs=1e-8)

    def test_negative_entries_warn(self):
        with pytest.warns(RuntimeWarning):
            assert spectral_radius([[0.0, -2.0], [0.0, 0.0]]) == pytest.approx(0.0)

    def test_non_square(self):
        with pytest.raises(SpecificationError):
            spectral_radius(np.zeros((2, 3)))

    def test_row_sum_bound(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            k = int(rng.integers(1, 8))
            A = rng.uniform(0, 1, (k, k))
            assert spectral_radius(A) <= A.sum(axis=1).max() + 1e-9


class TestVerdicts:
    def test_strict_and_marginal(self):
        assert verdict_of(0.99) == Verdict.PASS
        assert verdict_of(1.05) == Verdict.FAIL
        assert verdict_of(1.0 + 1e-12) == Verdict.MARGINAL
        assert verdict_of(1.0 - 1e-12) == Verdict.MARGINAL

    def test_check_small_gain_example(self):
        nb = [[1], [0]]
        out = check_small_gain(None, [lyap(gamma={1: 0.2}), lyap(gamma={0: 0.2})], nb)
        assert out.rho_LG == pytest.approx(0.4)
        assert out.verdict_lyap
        assert out.status_traj == Verdict.NOT_RUN

    def test_failing_trajectory(self):
        nb = [[1], [0]]
        out = check_small_gain([traj(g={1: 0.525}), traj(g={0: 0.525})], None, nb)
        assert out.rho_G == pytest.approx(1.05)
        assert not out.verdict_traj and out.N is None


class TestMu:
    def test_symmetric_example(self):
        Lam, Gam = np.diag([0.5, 0.5]), np.array([[0, 0.2], [0.2, 0]])
        mu = compute_mu(Lam, Gam)
        np.testing.assert_allclose(mu, [1.0, 1.0], atol=1e-6)
        np.testing.assert_allclose(mu @ (-Lam + Gam), [-0.3, -0.3], atol=1e-6)

    def test_single_node(self):
        mu = compute_mu(np.diag([0.7]), np.zeros((1, 1)))
        np.testing.assert_allclose(mu, [1.0])

    def test_reducible_chain(self):
        Lam = np.diag([0.5, 0.5, 0.5])
        Gam = np.array([[0, 0.3, 0], [0, 0, 0.3], [0, 0, 0]])
        mu = compute_mu(Lam, Gam)
        assert np.all(mu > 0)
        assert np.all(mu @ (-Lam + Gam) < 0)

    def test_refuses_without_small_gain(self):
        with pytest.raises(CompositionError):
            compute_mu(np.diag([0.5, 0.5]), np.array([[0, 0.6], [0.6, 0]]))


class TestComposeLyapunov:
    def test_symmetric(self):
        certs = [lyap(gamma={1: 0.2}), lyap(gamma={0: 0.2})]
        out = compose_overall_lyapunov(certs, [1.0, 1.0], [[1], [0]])
        assert out.lambda_sigma == pytest.approx(0.3)

    def test_single(self):
        out = compose_overall_lyapunov([lyap(lam=0.7)], [1.0], [[]])
        assert out.lambda_sigma == pytest.approx(0.7)

    def test_asymmetric_weights(self):
        # gamma_12 = 0.2 weighs V_2 in node 1's decrease; gamma_21 = 0.1 weighs V_1 in node 2's.
        certs = [lyap(gamma={1: 0.2}), lyap(gamma={0: 0.1})]
        out = compose_overall_lyapunov(certs, [1.0, 2.0], [[1], [0]])
        # column-wise: node 1 collects 2*0.1 from node 2, node 2 collects 0.5*0.2 from node 1
        assert out.lambda_sigma == pytest.approx(0.3)

    def test_rate_is_sound_on_nonnegative_values(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            M = int(rng.integers(1, 6))
            lam = rng.uniform(0.2, 0.9, M)
            Gam = rng.uniform(0, 0.2, (M, M)) * (1 - np.eye(M))
            if spectral_radius(Gam / lam[None, :]) >= 1:
                continue
            nb = [[j for j in range(M) if j != i] for i in range(M)]
            certs = [lyap(lam[i], {j: Gam[i, j] for j in nb[i]}) for i in range(M)]
            mu = compute_mu(np.diag(lam), Gam)
            try:
                out = compose_overall_lyapunov(certs, mu, nb)
            except CompositionError:
                continue
            for V in rng.uniform(0, 1, (20, M)):
                rate = mu @ (-lam * V + Gam @ V)
                assert rate <= -out.lambda_sigma * (mu @ V) + 1e-12

    def test_transposed_index_would_be_unsound(self):
        # The row-indexed reading would claim 0.3 here; V = (1, 0) only decays at rate 0.1.
        certs = [lyap(gamma={1: 0.1}), lyap(gamma={0: 0.2})]
        mu = np.array([1.0, 2.0])
        out = compose_overall_lyapunov(certs, mu, [[1], [0]])
        assert out.lambda_sigma == pytest.approx(0.1)
        V = np.array([1.0, 0.0])
        lam, Gam = np.array([0.5, 0.5]), np.array([[0, 0.1], [0.2, 0]])
        assert mu @ (-lam * V + Gam @ V) == pytest.approx(-0.1)

    def test_block_matrices(self):
        certs = [lyap(gamma={1: 0.2}), lyap(gamma={0: 0.2})]
        out = compose_overall_lyapunov(certs, [1.0, 0.5], [[1], [0]])
        np.testing.assert_allclose(np.diag(out.P_sigma1), [1.0, 0.5])

    def test_rate_out_of_range(self):
        certs = [lyap(gamma={1: 0.6}), lyap(gamma={0: 0.6})]
        with pytest.raises(CompositionError):
            compose_overall_lyapunov(certs, [1.0, 1.0], [[1], [0]])


class TestTrajectoryCertificate:
    def test_scalar_block_length(self):
        out = derive_trajectory_certificate([traj(0.5, 2.0)], np.zeros((1, 1)))
        # rho(S_2) = 0.5 equals the target (1 + 0) / 2, so the strict test needs N = 3.
        assert out.N == 3
        assert out.rho_S == pytest.approx(0.25)
        assert out.g_bar == pytest.approx(1.0)

    def test_decoupled_pair_matches_scalar(self):
        one = derive_trajectory_certificate([traj(0.5, 2.0)], np.zeros((1, 1)))
        two = derive_trajectory_certificate([traj(0.5, 2.0)] * 2, np.zeros((2, 2)))
        assert two.N == one.N and two.g_bar == pytest.approx(1.0)

    def test_two_node_coupled(self):
        G = np.array([[0, 0.4], [0.4, 0]])
        out = derive_trajectory_certificate([traj(0.5, 1.0), traj(0.5, 1.0)], G)
        # rho(S_1) = 0.9 misses the target (1 + 0.4) / 2 = 0.7; S_2 has rho 0.25 + 0.4.
        assert out.N == 2
        assert out.rho_S == pytest.approx(0.65)
        assert out.sigma0 ** (1 / out.N) < out.sigma < 1

    def test_power_bound_holds(self):
        G = np.array([[0, 0.3, 0], [0.2, 0, 0.3], [0, 0.2, 0]])
        certs = [traj(0.6, 3.0), traj(0.7, 2.0), traj(0.5, 4.0)]
        out = derive_trajectory_certificate(certs, G)
        P = np.eye(3)
        for xi in range(401):
            assert np.linalg.norm(P, 2) <= out.b * out.sigma0 ** xi * (1 + 1e-9)
            P = P @ out.S

    def test_refuses_large_G(self):
        with pytest.raises(CompositionError):
            derive_trajectory_certificate([traj(), traj()], np.array([[0, 1.2], [1.2, 0]]))


class TestUniform:
    def test_lyapunov_rows(self):
        bound, verdict = check_small_gain_uniform({"interior": [0.2 / 0.5, 0.2 / 0.5]})
        assert bound == pytest.approx(0.8) and verdict == Verdict.PASS

    def test_trajectory_rows(self):
        bound, verdict = check_small_gain_uniform({"interior": [0.3 / 0.5, 0.3 / 0.5], "boundary": [0.5]})
        assert bound == pytest.approx(1.2) and verdict == Verdict.FAIL

    def test_empty(self):
        assert check_small_gain_uniform({})[1] == Verdict.NOT_RUN

    def test_chain_monotone_and_bounded(self):
        g_int, g_bnd = 0.2, 0.3
        radii = []
        for M in range(2, 41):
            G = np.zeros((M, M))
            for i, nb in enumerate(chain(M)):
                for j in nb:
                    G[i, j] = g_bnd if len(nb) == 1 else g_int
            radii.append(spectral_radius(G))
        bound, _ = check_small_gain_uniform({"interior": [g_int, g_int], "boundary": [g_bnd]})
        assert all(b >= a - 1e-10 for a, b in zip(radii, radii[1:]))
        assert radii[-1] <= bound + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_mu_property(M, seed):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.05, 0.95, M)
    Gam = rng.uniform(0, 1, (M, M)) * (rng.uniform(size=(M, M)) < 0.5) * (1 - np.eye(M))
    scale = spectral_radius(Gam / lam[None, :])
    if scale > 0:
        Gam *= rng.uniform(0.05, 0.95) / scale
    mu = compute_mu(np.diag(lam), Gam)
    assert np.all(mu > 0)
    assert np.all(mu @ (-np.diag(lam) + Gam) < 0)
