import numpy as np
import pytest

from afdm_isac.channel import (add_noise, qam16, random_targets, receive, simulate_echo,
                               target_from_normalized)
from afdm_isac.dictionary import Dictionary, VirtualGrid, build_dictionary, build_grids
from afdm_isac.errors import AfdmError, DimensionError, DivergenceError, GridError
from afdm_isac.sbl import (PriorParams, Posterior, SblState, doppler_cells, doppler_peaks, e_step, init_state,
                           posterior, posterior_structured, run_offgrid_sbl,
                           run_ongrid_baseline, select_support, top_p, update_beta,
                           update_delta, update_kappa)

from oracles import expected_residual, parabola_vertex


def _toy_dictionary(A, B, r_k=10.0):
    K = A.shape[1]
    grid = VirtualGrid(r_tau=1, r_k=r_k, L_tau=1, K_nu=K, ell_bar=np.zeros(K),
                       k_bar=np.arange(K, dtype=float), alpha_max=0, ell_max=0)
    return Dictionary(x=np.zeros(A.shape[0], complex), A=A, B=B, grid=grid)


def _crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# closed-form updates against direct arithmetic on tiny instances

def test_scalar_posterior():
    phi, y, beta, delta = 0.7 - 0.4j, 1.1 + 0.3j, 2.5, 0.8
    post = posterior(np.array([[phi]]), np.array([delta]), beta, np.array([y]), "direct")
    sigma = 1.0 / (beta * abs(phi) ** 2 + 1.0 / delta)
    assert post.sigma_diag[0] == pytest.approx(sigma, abs=1e-12)
    assert post.mu[0] == pytest.approx(beta * sigma * np.conj(phi) * y, abs=1e-12)


@pytest.mark.parametrize("method", ["direct", "woodbury"])
def test_two_by_two_posterior(method):
    rng = np.random.default_rng(1)
    Phi = _crandn(rng, 2, 2)
    y = _crandn(rng, 2)
    delta, beta = np.array([0.6, 1.7]), 3.0
    # explicit 2x2 inverse by the adjugate formula
    H = beta * Phi.conj().T @ Phi + np.diag(1 / delta)
    det = H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0]
    Sigma = np.array([[H[1, 1], -H[0, 1]], [-H[1, 0], H[0, 0]]]) / det
    post = posterior(Phi, delta, beta, y, method)
    np.testing.assert_allclose(post.full(), Sigma, atol=1e-12)
    np.testing.assert_allclose(post.mu, beta * Sigma @ Phi.conj().T @ y, atol=1e-12)


def test_delta_update_scalar():
    for b in (1e-4, 0.5, 3.0):
        for x in (0.0, 1e-9, 0.3, 7.0):
            d = update_delta(np.array([np.sqrt(x)]), np.array([0.0]), b)[0]
            if x == 0.0:
                assert d == 1e-12
                continue
            # stationary point of -log d - x/d - b d
            assert b * d * d + d - x == pytest.approx(0.0, abs=1e-12 * max(1.0, x))
            if b >= 0.5:
                assert d == pytest.approx((np.sqrt(1 + 4 * b * x) - 1) / (2 * b), rel=1e-12)


def test_delta_update_uses_second_moment():
    d = update_delta(np.array([0.3 + 0.4j, 0.0]), np.array([0.75, 2.0]), 0.5)
    x = np.array([0.25 + 0.75, 2.0])
    np.testing.assert_allclose(d, (np.sqrt(1 + 2 * x) - 1), rtol=1e-12)


def test_beta_update_two_by_two():
    rng = np.random.default_rng(2)
    Phi = _crandn(rng, 2, 2)
    y, mu = _crandn(rng, 2), _crandn(rng, 2)
    sd, delta, beta = np.array([0.2, 0.1]), np.array([0.5, 0.4]), 1.5
    prior = PriorParams(b=1e-4, d=2.0, e=0.3)
    T = np.linalg.norm(y - Phi @ mu) ** 2
    gamma = (1 - 0.2 / 0.5) + (1 - 0.1 / 0.4)
    expected = (2.0 - 1 + 2) / (0.3 + T + gamma / beta)
    got = update_beta(y, Phi, mu, sd, delta, beta, prior)
    assert got == pytest.approx(expected, rel=1e-12)
    assert update_beta(y, Phi, mu, sd, delta, beta, prior, dof="grid") == pytest.approx(expected)


def test_beta_dof_counts():
    rng = np.random.default_rng(3)
    Phi = _crandn(rng, 3, 5)
    y, mu = _crandn(rng, 3), _crandn(rng, 5)
    sd, delta = np.full(5, 0.1), np.full(5, 0.5)
    prior = PriorParams()
    a = update_beta(y, Phi, mu, sd, delta, 1.0, prior, dof="measurements")
    b = update_beta(y, Phi, mu, sd, delta, 1.0, prior, dof="grid")
    assert b / a == pytest.approx((prior.d - 1 + 5) / (prior.d - 1 + 3), rel=1e-12)


def test_beta_divergence():
    with pytest.raises(DivergenceError):
        update_beta(np.zeros(1), np.ones((1, 1)), np.zeros(1), np.array([2.0]), np.array([1.0]),
                    1e-9, PriorParams(e=1e-300))


def _kappa_instance(seed, K):
    rng = np.random.default_rng(seed)
    A, B = _crandn(rng, 4, K), _crandn(rng, 4, K)
    y = _crandn(rng, 4)
    mu = _crandn(rng, K)
    G = _crandn(rng, K, K)
    Sigma = 0.1 * (G @ G.conj().T) + 0.05 * np.eye(K)
    post = Posterior(mu=mu, sigma_diag=np.real(np.diag(Sigma)), _full=Sigma)
    return _toy_dictionary(A, B), y, post


def test_kappa_scalar_matches_quadratic_minimizer():
    D, y, post = _kappa_instance(4, 1)
    new, support, skipped = update_kappa(y, D, post, np.zeros(1), P=1)
    f = lambda k: expected_residual(y, D.A, D.B, [k], post.mu, post.full())
    assert new[0] == pytest.approx(parabola_vertex(f), abs=1e-12)
    assert not skipped.any()


def test_kappa_two_by_two_gauss_seidel():
    D, y, post = _kappa_instance(5, 2)
    start = np.array([0.3, -0.2])
    new, support, _ = update_kappa(y, D, post, start, P=2, gauss_seidel=True)
    k = start.copy()
    for j in (0, 1):
        def f(v, j=j):
            kk = k.copy()
            kk[j] = v
            return expected_residual(y, D.A, D.B, kk, post.mu, post.full())
        k[j] = parabola_vertex(f)
    np.testing.assert_allclose(new, k, atol=1e-12)


def test_kappa_two_by_two_jacobi():
    D, y, post = _kappa_instance(6, 2)
    start = np.array([0.1, 0.4])
    new, _, _ = update_kappa(y, D, post, start, P=2, gauss_seidel=False)
    for j in (0, 1):
        def f(v, j=j):
            kk = start.copy()
            kk[j] = v
            return expected_residual(y, D.A, D.B, kk, post.mu, post.full())
        assert new[j] == pytest.approx(parabola_vertex(f), abs=1e-12)


def test_kappa_clamped_and_truncated():
    D, y, post = _kappa_instance(7, 4)
    D = _toy_dictionary(D.A, D.B, r_k=1e-3)
    new, support, _ = update_kappa(y, D, post, np.zeros(4), P=2, support_rule="top")
    assert np.all(np.abs(new) <= 5e-4)
    np.testing.assert_array_equal(support, top_p(post.mu, 2))
    off = np.setdiff1d(np.arange(4), support)
    assert not np.any(new[off])


def test_kappa_zero_curvature_skipped():
    A = np.eye(2, dtype=complex)
    B = np.zeros((2, 2), dtype=complex)
    D = _toy_dictionary(A, B)
    post = Posterior(mu=np.array([1.0 + 0j, 0.5]), sigma_diag=np.zeros(2),
                     _full=np.zeros((2, 2), complex))
    new, _, skipped = update_kappa(np.ones(2, complex), D, post, np.array([0.2, 0.1]), P=2)
    assert skipped.all()
    np.testing.assert_array_equal(new, [0.2, 0.1])


# support selection

def test_top_p_ties_prefer_lower_index():
    np.testing.assert_array_equal(top_p(np.array([1.0, 3.0, 3.0, 2.0, 3.0]), 2), [1, 2])


def test_doppler_peaks_skip_split_target():
    # rows of 5; row 0 has one target straddling two atoms, row 1 a weak isolated peak
    mu = np.array([0.0, 0.9, 0.8, 0.1, 0.0,
                   0.0, 0.0, 0.3, 0.0, 0.0])
    np.testing.assert_array_equal(top_p(mu, 2), [1, 2])
    np.testing.assert_array_equal(doppler_peaks(mu, 2, 5), [1, 7])


def test_doppler_peaks_fill_when_few_peaks():
    mu = np.array([1.0, 0.5, 0.2])
    np.testing.assert_array_equal(doppler_peaks(mu, 2, 3), [0, 1])
    grid = build_grids(0, 1, 1.0)
    with pytest.raises(ValueError):
        select_support(mu, 1, grid, "biggest")


def test_doppler_cells_prefers_spread_energy():
    # r_k = 0.25, so a cell spans two atoms either side of the peak
    mu = np.array([0.0, 0.5, 0.6, 0.5, 0.0,
                   0.0, 0.0, 0.8, 0.0, 0.0])
    np.testing.assert_array_equal(doppler_peaks(mu, 1, 5), [7])
    np.testing.assert_array_equal(doppler_cells(mu, 1, 5, 0.25), [2])


def test_doppler_cells_suppresses_peaks_in_same_cell():
    mu = np.array([0.9, 0.1, 0.5, 0.2, 0.1,
                   0.0, 0.0, 0.3, 0.0, 0.0])
    np.testing.assert_array_equal(doppler_peaks(mu, 2, 5), [0, 2])
    # the cell around index 2 holds more energy and swallows the peak at 0
    np.testing.assert_array_equal(doppler_cells(mu, 2, 5, 0.25), [2, 7])
    # a coarse grid leaves only the peak itself in its cell
    np.testing.assert_array_equal(doppler_cells(mu, 2, 5, 1.0), [0, 2])


def test_doppler_cells_fill():
    mu = np.array([0.9, 0.1, 0.5])
    np.testing.assert_array_equal(doppler_cells(mu, 3, 3, 0.5), [0, 1, 2])
    grid = build_grids(0, 1, 0.5)
    mu = np.array([0.9, 0.1, 0.5, 0.2, 0.1])
    np.testing.assert_array_equal(select_support(mu, 2, grid), doppler_cells(mu, 2, 5, 0.5))


# the three posterior paths agree

def test_posterior_paths_agree(cfg, rng):
    x = qam16(cfg.N, rng)
    D = build_dictionary(build_grids(10, 2, 0.5), x, cfg)
    y = _crandn(rng, cfg.N)
    delta = rng.uniform(0.01, 2.0, D.n_atoms)
    kappa = np.zeros(D.n_atoms)
    kappa[[3, 40, 77]] = [0.2, -0.25, 0.1]
    Phi = D.A + D.B * kappa
    ref = posterior(Phi, delta, 4.0, y, "direct")
    for p in (posterior(Phi, delta, 4.0, y, "woodbury"),
              posterior_structured(D, kappa, delta, 4.0, y)):
        assert np.max(np.abs(p.mu - ref.mu)) < 1e-8
        assert np.max(np.abs(p.sigma_diag - ref.sigma_diag)) < 1e-8
        idx = np.array([3, 40, 5])
        assert np.max(np.abs(p.columns(idx) - ref.full()[:, idx])) < 1e-8


def test_e_step_shapes_and_checks(cfg, rng):
    D = build_dictionary(build_grids(10, 2, 0.5), qam16(cfg.N, rng), cfg)
    y = _crandn(rng, cfg.N)
    st = init_state(y, D)
    assert st.beta == pytest.approx(100 * cfg.N / np.vdot(y, y).real)
    np.testing.assert_allclose(st.delta, np.abs(D.A.conj().T @ y))
    assert not st.kappa.any()
    Sigma, mu = e_step(st, y, D)
    assert Sigma.shape == (99, 99) and mu.shape == (99,)
    np.testing.assert_allclose(Sigma, Sigma.conj().T, atol=1e-12)
    with pytest.raises(GridError):
        e_step(SblState(st.delta, st.beta, np.full(99, 0.3)), y, D)
    with pytest.raises(DimensionError):
        init_state(y[:-1], D)
    with pytest.raises(AfdmError):
        init_state(np.zeros(cfg.N), D)


# estimator behaviour

def test_off_grid_refines_single_target(cfg, rng):
    x = qam16(cfg.N, rng)
    D = build_dictionary(build_grids(10, 2, 0.5), x, cfg)
    t = target_from_normalized(3, 0.62, cfg, 1.0)
    r, _ = add_noise(simulate_echo(x, [t], cfg), 10.0, 1)
    y = receive(r, cfg)
    res = run_offgrid_sbl(y, D, cfg, 1)
    on = run_ongrid_baseline(y, D, cfg, 1)
    assert res.ell[0] == on.ell[0] == 3
    assert on.nu[0] == 0.5 and not on.kappa.any()
    assert 0.5 < res.nu[0] <= 0.75
    assert abs(res.nu[0] - 0.62) < abs(on.nu[0] - 0.62)


def test_result_fields(cfg, rng):
    x = qam16(cfg.N, rng)
    D = build_dictionary(build_grids(10, 2, 0.5), x, cfg)
    ts = random_targets(cfg, 3, rng)
    r, _ = add_noise(simulate_echo(x, ts, cfg), 10.0, 1)
    res = run_offgrid_sbl(receive(r, cfg), D, cfg, 3, trace=True)
    assert res.ranges.shape == res.velocities.shape == res.gains.shape == (3,)
    np.testing.assert_allclose(res.ranges, res.ell * cfg.range_bin)
    np.testing.assert_allclose(res.velocities, res.nu * 50.0)
    assert 1 <= res.iterations <= 200 and res.residual >= 0
    assert len(res.trace) == res.iterations
    assert {"t", "residual", "beta", "delta_change"} <= set(res.trace[0])
    assert res.converged == (res.trace[-1]["delta_change"] < 1e-6)


def test_iteration_cap_and_exit(cfg, rng):
    x = qam16(cfg.N, rng)
    D = build_dictionary(build_grids(10, 2, 0.5), x, cfg)
    r, _ = add_noise(simulate_echo(x, random_targets(cfg, 2, rng), cfg), 5.0, 2)
    y = receive(r, cfg)
    res = run_offgrid_sbl(y, D, cfg, 2, max_iter=3)
    assert res.iterations == 3 and not res.converged
    res = run_offgrid_sbl(y, D, cfg, 2, eps=1e3)
    assert res.iterations == 1 and res.converged


@pytest.mark.parametrize("kw", [dict(P=0), dict(eps=0.0), dict(max_iter=0)])
def test_bad_arguments(cfg, rng, kw):
    D = build_dictionary(build_grids(10, 2, 0.5), qam16(cfg.N, rng), cfg)
    args = dict(P=1, eps=1e-6, max_iter=10)
    args.update(kw)
    with pytest.raises(ValueError):
        run_offgrid_sbl(_crandn(rng, cfg.N), D, cfg, args.pop("P"), **args)


def test_deterministic(cfg, rng):
    x = qam16(cfg.N, rng)
    D = build_dictionary(build_grids(10, 2, 0.5), x, cfg)
    r, _ = add_noise(simulate_echo(x, random_targets(cfg, 3, rng), cfg), 5.0, 3)
    y = receive(r, cfg)
    a, b = run_offgrid_sbl(y, D, cfg, 3), run_offgrid_sbl(y, D, cfg, 3)
    np.testing.assert_array_equal(a.nu, b.nu)
    np.testing.assert_array_equal(a.gains, b.gains)


def test_methods_give_same_estimate(cfg, rng):
    x = qam16(cfg.N, rng)
    D = build_dictionary(build_grids(10, 2, 0.5), x, cfg)
    r, _ = add_noise(simulate_echo(x, random_targets(cfg, 3, rng), cfg), 10.0, 4)
    y = receive(r, cfg)
    a = run_offgrid_sbl(y, D, cfg, 3, method="structured", max_iter=30)
    b = run_offgrid_sbl(y, D, cfg, 3, method="woodbury", max_iter=30)
    np.testing.assert_array_equal(a.support, b.support)
    np.testing.assert_allclose(a.nu, b.nu, atol=1e-8)


def _on_grid_cases(r_k):
    for ell in range(5):
        for k in np.arange(-1.0, 1.0 + 1e-9, r_k):
            yield ell, float(np.round(k, 12))


@pytest.mark.parametrize("r_k", [1.0, 0.5])
def test_exhaustive_on_grid_recovery(small_cfg, r_k):
    rng = np.random.default_rng(99)
    x = qam16(small_cfg.N, rng)
    grid = build_grids(4, 1, r_k)
    D = build_dictionary(grid, x, small_cfg)
    for ell, k in _on_grid_cases(r_k):
        t = target_from_normalized(ell, k, small_cfg, 1.0)
        y = receive(simulate_echo(x, [t], small_cfg), small_cfg)
        res = run_offgrid_sbl(y, D, small_cfg, 1)
        assert res.support[0] == grid.nearest(ell, k), (ell, k)
        assert abs(res.kappa[res.support[0]]) < 1e-3


def test_two_target_support_easy(small_cfg):
    rng = np.random.default_rng(7)
    x = qam16(small_cfg.N, rng)
    grid = build_grids(4, 1, 1.0)
    D = build_dictionary(grid, x, small_cfg)
    placements = [(1, -1.0, 0, 1.0), (4, 0.0, 2, 1.0), (3, 1.0, 3, -1.0)]
    for l1, k1, l2, k2 in placements:
        ts = [target_from_normalized(l1, k1, small_cfg, 1.0),
              target_from_normalized(l2, k2, small_cfg, 0.8j)]
        y = receive(simulate_echo(x, ts, small_cfg), small_cfg)
        res = run_offgrid_sbl(y, D, small_cfg, 2)
        assert set(res.support) == {grid.nearest(l1, k1), grid.nearest(l2, k2)}
