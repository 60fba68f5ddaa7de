"""Off-grid sparse Bayesian learning with EM hyper-parameter updates.

The sparse delay/Doppler reflectivity vector has a Gaussian prior with
per-atom variances ``delta``; the noise precision ``beta`` and the per-atom
Doppler offsets ``kappa`` are treated as hyper-parameters.  Each EM sweep
computes the Gaussian posterior of the reflectivities (E-step), then
updates ``delta``, ``beta`` and ``kappa`` in closed form (M-step).
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _kernels
from .afdm import AfdmConfig
from .dictionary import Dictionary, check_kappa
from .errors import AfdmError, ConditioningError, DimensionError, DivergenceError

log = logging.getLogger(__name__)

DELTA_FLOOR = 1e-12


@dataclass(frozen=True)
class PriorParams:
    """Gamma root parameters: ``b`` for the atom variances, ``(d, e)`` for the noise precision."""

    b: float = 1e-4
    d: float = 1.0
    e: float = 1e-4

    def __post_init__(self):
        if min(self.b, self.d, self.e) <= 0:
            raise ValueError("prior root parameters must be strictly positive")


@dataclass
class SblState:
    delta: np.ndarray
    beta: float
    kappa: np.ndarray
    mu: np.ndarray = None
    Sigma: np.ndarray = None
    t: int = 0


@dataclass
class Posterior:
    """Gaussian posterior of the reflectivity vector.

    Only the diagonal of the covariance is always materialized; covariance
    columns are produced on demand from ``gram_cols(idx)``, which returns
    ``Phi^H C^-1 Phi[:, idx]`` for the marginal covariance ``C``.
    """

    mu: np.ndarray
    sigma_diag: np.ndarray
    delta: np.ndarray = None
    gram_cols: object = None
    _full: np.ndarray = None

    def columns(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if self._full is not None:
            return self._full[:, idx]
        # Sigma = D - D Phi^H C^-1 Phi D with D = diag(delta)
        d = self.delta
        cols = -(d[:, None] * self.gram_cols(idx)) * d[idx][None, :]
        cols[idx, np.arange(idx.size)] += d[idx]
        return cols

    def full(self):
        if self._full is None:
            S = self.columns(np.arange(self.mu.size))
            self._full = 0.5 * (S + S.conj().T)
        return self._full


@dataclass
class EstimateResult:
    ranges: np.ndarray
    velocities: np.ndarray
    gains: np.ndarray
    ell: np.ndarray
    nu: np.ndarray
    support: np.ndarray
    iterations: int
    residual: float
    converged: bool
    kappa: np.ndarray = None
    wall_ms: float = 0.0
    trace: list = field(default_factory=list)


def top_p(values, P):
    """Indices of the P largest ``|values|``; ties go to the lower index."""
    order = np.argsort(-np.abs(values), kind="stable")
    return np.sort(order[:P])


def doppler_peaks(values, P, K_nu):
    """The P largest local maxima of ``|values|`` along each delay row's Doppler axis.

    A target between two grid points shows up as two adjacent large
    coefficients; only the larger one is a peak.  Rows are the delay-major
    blocks of length ``K_nu``.  If fewer than P peaks exist the remainder is
    filled with the largest non-peak entries.
    """
    mag = np.abs(values)
    rows = mag.reshape(-1, K_nu)
    peak = np.ones(rows.shape, dtype=bool)
    peak[:, 1:] &= rows[:, 1:] >= rows[:, :-1]
    peak[:, :-1] &= rows[:, :-1] > rows[:, 1:]
    peak = peak.ravel()
    order = np.argsort(-mag, kind="stable")
    ranked = np.concatenate([order[peak[order]], order[~peak[order]]])
    return np.sort(ranked[:P])


def doppler_cells(values, P, K_nu, r_k, half_width=0.5):
    """Greedy pick of Doppler peaks scored by the energy of their resolution cell.

    Each local maximum of ``|values|`` along a delay row is scored by the sum
    of ``|values|^2`` over the atoms of that row within ``half_width`` Doppler
    bins.  On fine grids a target's energy is shared by several neighbouring
    atoms, so this keeps weak targets comparable to isolated noise spikes.
    Peaks inside the cell of an already picked peak are skipped.  Shortfalls
    are filled with the largest remaining entries.
    """
    mag = np.abs(values)
    rows = (mag * mag).reshape(-1, K_nu)
    radius = int(np.floor(half_width / r_k + 1e-9))
    padded = np.pad(np.cumsum(rows, axis=1), ((0, 0), (1, 0)))
    idx = np.arange(K_nu)
    lo = np.clip(idx - radius, 0, K_nu)
    hi = np.clip(idx + radius + 1, 0, K_nu)
    score = (padded[:, hi] - padded[:, lo]).ravel()

    mrows = mag.reshape(-1, K_nu)
    peak = np.ones(mrows.shape, dtype=bool)
    peak[:, 1:] &= mrows[:, 1:] >= mrows[:, :-1]
    peak[:, :-1] &= mrows[:, :-1] > mrows[:, 1:]
    cand = np.flatnonzero(peak.ravel())
    cand = cand[np.argsort(-score[cand], kind="stable")]
    chosen = []
    for j in cand:
        if len(chosen) == P:
            break
        if any(c // K_nu == j // K_nu and abs(c - j) <= radius for c in chosen):
            continue
        chosen.append(j)
    if len(chosen) < P:
        rest = [j for j in np.argsort(-mag, kind="stable") if j not in set(chosen)]
        chosen += rest[:P - len(chosen)]
    return np.sort(np.asarray(chosen, dtype=np.int64))


def select_support(values, P, grid, rule="cells"):
    if rule == "peaks":
        return doppler_peaks(values, P, grid.K_nu)
    if rule == "cells":
        return doppler_cells(values, P, grid.K_nu, grid.r_k)
    if rule == "top":
        return top_p(values, P)
    raise ValueError(f"unknown support rule {rule!r}")


def init_state(y, dictionary: Dictionary) -> SblState:
    y = np.asarray(y, dtype=np.complex128)
    N = dictionary.A.shape[0]
    if y.shape != (N,):
        raise DimensionError(f"measurement must have length {N}")
    energy = float(np.vdot(y, y).real)
    if energy == 0.0:
        raise AfdmError("cannot initialize from an all-zero measurement")
    delta = np.maximum(np.abs(dictionary.A.conj().T @ y), DELTA_FLOOR)
    return SblState(delta=delta, beta=100.0 * N / energy,
                    kappa=np.zeros(dictionary.n_atoms), t=0)


def _cholesky(H, what):
    H = 0.5 * (H + H.conj().T)
    try:
        return scipy.linalg.cho_factor(H, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"{what} is not positive definite") from exc


def posterior(Phi, delta, beta, y, method="auto") -> Posterior:
    """Posterior mean and covariance of the reflectivities for a dense ``Phi``.

    ``method="direct"`` factors the (atoms x atoms) precision matrix;
    ``"woodbury"`` factors the (N x N) marginal covariance instead, which is
    cheaper whenever there are more atoms than measurements.
    """
    N, K = Phi.shape
    if method == "auto":
        method = "woodbury" if K > N else "direct"
    if method == "direct":
        H = beta * (Phi.conj().T @ Phi) + np.diag(1.0 / delta)
        fac = _cholesky(H, "posterior precision")
        Sigma = scipy.linalg.cho_solve(fac, np.eye(K, dtype=np.complex128), check_finite=False)
        Sigma = 0.5 * (Sigma + Sigma.conj().T)
        mu = beta * (Sigma @ (Phi.conj().T @ y))
        return Posterior(mu=mu, sigma_diag=np.real(np.diag(Sigma)).copy(), delta=delta,
                         _full=Sigma)
    if method != "woodbury":
        raise ValueError(f"unknown posterior method {method!r}")
    C = (Phi * delta[None, :]) @ Phi.conj().T
    C[np.diag_indices(N)] += 1.0 / beta
    fac = _cholesky(C, "marginal covariance")
    G = scipy.linalg.cho_solve(fac, Phi, check_finite=False)
    q = scipy.linalg.cho_solve(fac, y, check_finite=False)
    mu = delta * (Phi.conj().T @ q)
    sigma_diag = delta - delta * delta * _kernels.column_inner_real(Phi, G)
    # float round-off can push a collapsed atom's variance a hair negative
    sigma_diag = np.maximum(sigma_diag, 0.0)
    return Posterior(mu=mu, sigma_diag=sigma_diag, delta=delta,
                     gram_cols=lambda idx: Phi.conj().T @ G[:, idx])


def _hermitian_inverse(C):
    """Inverse of a Hermitian positive definite matrix; only the lower triangle of C is read."""
    L, info = scipy.linalg.lapack.zpotrf(C, lower=1, clean=0)
    if info:
        raise ConditioningError("marginal covariance is not positive definite")
    inv, info = scipy.linalg.lapack.zpotri(L, lower=1, overwrite_c=1)
    if info:
        raise ConditioningError("marginal covariance inverse failed")
    iu = np.triu_indices(inv.shape[0], 1)
    inv[iu] = inv.T[iu].conj()
    return inv


def posterior_structured(dictionary: Dictionary, kappa, delta, beta, y) -> Posterior:
    """Same posterior as :func:`posterior`, exploiting the shift structure of the atoms.

    Works in the time domain, where every atom is a cyclic shift of the
    transmit frame times a Doppler ramp.  The marginal covariance and all
    diagonal quadratic forms then reduce to per-delay lag sums, so the cost
    per call is O(L_tau N^2) instead of O(N^2 x atoms).  Atoms with a
    nonzero Doppler offset are corrected explicitly.
    """
    if not dictionary.cyclic:
        raise ValueError("structured posterior needs a cyclic-prefix dictionary")
    grid = dictionary.grid
    s, TA, TB, E = dictionary.s, dictionary.TA, dictionary.TB, dictionary.lag_phase
    TAH, TBH = dictionary.TAH, dictionary.TBH
    ells = (np.arange(grid.L_tau) * grid.r_tau).astype(np.int64)
    sup = np.flatnonzero(kappa)

    g = delta.reshape(grid.L_tau, grid.K_nu) @ E.T
    C = _kernels.lagged_gram(s, ells, np.ascontiguousarray(g))
    if sup.size:
        F_s = TA[:, sup] + TB[:, sup] * kappa[sup]
        T_s = TA[:, sup]
        C += (F_s * delta[sup]) @ F_s.conj().T - (T_s * delta[sup]) @ T_s.conj().T
    C[np.diag_indices_from(C)] += 1.0 / beta
    R = _hermitian_inverse(C)

    y_t = dictionary.daft.conj().T @ y
    q = R @ y_t
    mu = delta * (TAH @ q + kappa * (TBH @ q))
    h = _kernels.lagged_quadratic(s, ells, R)
    quad = np.real(h @ E.conj()).ravel()
    if sup.size:
        quad[sup] = _kernels.column_inner_real(F_s, R @ F_s)
    sigma_diag = np.maximum(delta - delta * delta * quad, 0.0)

    def gram_cols(idx):
        F = TAH[idx, :].conj().T + TBH[idx, :].conj().T * kappa[idx]
        W = R @ F
        return TAH @ W + kappa[:, None] * (TBH @ W)

    return Posterior(mu=mu, sigma_diag=sigma_diag, delta=delta, gram_cols=gram_cols)


def _posterior_for(dictionary, kappa, delta, beta, y, method):
    if method == "structured" or (method == "auto" and dictionary.cyclic
                                  and dictionary.s is not None):
        return posterior_structured(dictionary, kappa, delta, beta, y)
    Phi = dictionary.A + dictionary.B * kappa[None, :]
    return posterior(Phi, delta, beta, y, method)


def e_step(state: SblState, y, dictionary: Dictionary, method="auto"):
    """Dense posterior covariance and mean at the state's hyper-parameters."""
    kappa = check_kappa(state.kappa, dictionary)
    post = _posterior_for(dictionary, kappa, state.delta, state.beta,
                          np.asarray(y, np.complex128), method)
    return post.full(), post.mu


def update_delta(mu, sigma_diag, b, floor=DELTA_FLOOR):
    """Atom-variance update; collapsed atoms are held at ``floor``."""
    second = np.abs(mu) ** 2 + np.asarray(sigma_diag, dtype=np.float64)
    return _kernels.delta_update(second, float(b), float(floor))


def update_beta(y, Phi, mu, sigma_diag, delta, beta, prior: PriorParams, dof="measurements"):
    """Noise-precision update.

    ``delta`` and ``beta`` are the values the posterior was computed with.
    The numerator counts the noise degrees of freedom: the measurement
    length for ``dof="measurements"``, the atom count for ``dof="grid"``.
    The atom count overstates the precision whenever the grid has more
    atoms than measurements, which lets the posterior chase noise.
    """
    resid = y - Phi @ mu
    return _beta_from_residual(float(np.vdot(resid, resid).real), Phi.shape, sigma_diag, delta,
                               beta, prior, dof)


def _beta_from_residual(T, shape, sigma_diag, delta, beta, prior, dof):
    N, K = shape
    count = K if dof == "grid" else N
    denom = prior.e + T + np.sum(1.0 - sigma_diag / delta) / beta
    if not denom > 0:
        raise DivergenceError(f"noise precision denominator {denom!r} (residual {T!r})")
    return (prior.d - 1.0 + count) / denom


def _residual(y, dictionary, kappa, mu):
    r = y - dictionary.A @ mu
    sup = np.flatnonzero(kappa)
    if sup.size:
        r -= dictionary.B[:, sup] @ (kappa[sup] * mu[sup])
    return r


def kappa_system(y, dictionary: Dictionary, mu, sigma_cols, support):
    """Truncated (Xi, eta) on ``support``.

    ``sigma_cols`` holds the posterior covariance columns for ``support``.
    Xi is the curvature of the expected residual in kappa; it carries the
    complex conjugate of the second moment E[h h^H] so that the quadratic
    form matches E|y - (A + B diag kappa) h|^2 exactly.
    """
    A = dictionary.A
    S = np.asarray(support, dtype=np.int64)
    BsH = dictionary.BH[S, :]
    mu_s = mu[S]
    second = sigma_cols[S, :] + np.outer(mu_s, mu_s.conj())
    Xi = np.real((BsH @ BsH.conj().T) * second.conj())
    resid = y - A @ mu
    cross = np.einsum("ji,ij->j", BsH, A @ sigma_cols)
    eta = np.real(mu_s.conj() * (BsH @ resid)) - np.real(cross)
    return Xi, eta


def update_kappa(y, dictionary: Dictionary, post: Posterior, kappa, P, gauss_seidel=True,
                 support_rule="cells"):
    """Coordinate update of the Doppler offsets on the P-atom support of ``|mu|``.

    Returns ``(kappa_new, support, skipped)``; entries off the support are
    zero and every entry lies in ``[-r_k/2, r_k/2]``.
    """
    support = select_support(post.mu, P, dictionary.grid, support_rule)
    sigma_cols = post.columns(support)
    Xi, eta = kappa_system(y, dictionary, post.mu, sigma_cols, support)
    half = dictionary.r_k / 2.0
    k_s, skipped = _kernels.kappa_sweep(np.ascontiguousarray(Xi), eta,
                                        np.asarray(kappa, np.float64)[support].copy(),
                                        half, gauss_seidel)
    if skipped.any():
        log.debug("kappa update skipped for atoms %s (zero curvature)", support[skipped])
    new = np.zeros(dictionary.n_atoms)
    new[support] = k_s
    return new, support, skipped


def _extract(post, kappa, dictionary, P, cfg, support_rule):
    support = select_support(post.mu, P, dictionary.grid, support_rule)
    grid = dictionary.grid
    ell = grid.ell_bar[support].astype(np.int64)
    nu = grid.k_bar[support] + kappa[support]
    return dict(ranges=ell * cfg.range_bin, velocities=nu * cfg.velocity_per_doppler,
                gains=post.mu[support], ell=ell, nu=nu, support=support)


def _run(y, dictionary, cfg, P, eps, max_iter, prior, offgrid, gauss_seidel, dof,
         method, trace, support_rule, callback=None):
    if P < 1 or eps <= 0 or max_iter < 1:
        raise ValueError("need P >= 1, eps > 0 and max_iter >= 1")
    start = time.perf_counter()
    y = np.asarray(y, dtype=np.complex128)
    state = init_state(y, dictionary)
    delta, beta, kappa = state.delta, state.beta, state.kappa
    events = []
    converged = False
    t = 0
    while t < max_iter:
        post = _posterior_for(dictionary, kappa, delta, beta, y, method)
        resid = _residual(y, dictionary, kappa, post.mu)
        T = float(np.vdot(resid, resid).real)
        delta_new = update_delta(post.mu, post.sigma_diag, prior.b)
        beta_new = _beta_from_residual(T, dictionary.A.shape, post.sigma_diag, delta, beta,
                                       prior, dof)
        support = None
        if offgrid:
            kappa, support, _ = update_kappa(y, dictionary, post, kappa, P, gauss_seidel,
                                             support_rule)
        change = float(np.sum((delta_new - delta) ** 2) / np.sum(delta ** 2))
        delta, beta = delta_new, beta_new
        t += 1
        if trace:
            rec = dict(t=t, residual=T, beta=float(beta),
                       delta_change=change)
            events.append(rec)
            log.debug("sbl %s", rec)
        if callback is not None:
            callback(t, post, delta, beta, kappa, support, change)
        if change < eps:
            converged = True
            break
    post = _posterior_for(dictionary, kappa, delta, beta, y, method)
    resid = _residual(y, dictionary, kappa, post.mu)
    out = _extract(post, kappa, dictionary, P, cfg, support_rule)
    return EstimateResult(**out, iterations=t, residual=float(np.vdot(resid, resid).real),
                          converged=converged, kappa=kappa,
                          wall_ms=1e3 * (time.perf_counter() - start), trace=events)


def run_offgrid_sbl(y, dictionary: Dictionary, cfg: AfdmConfig, P, eps=1e-6, max_iter=200,
                    prior=PriorParams(), gauss_seidel=True, dof="measurements",
                    method="auto", support_rule="cells", trace=False,
                    callback=None) -> EstimateResult:
    """Joint delay/Doppler estimation with off-grid Doppler refinement.

    Runs EM until the relative squared change of ``delta`` drops below
    ``eps`` or ``max_iter`` sweeps have been made, then reads the P targets
    off the posterior mean.  ``support_rule="top"`` takes the P largest
    coefficients verbatim, ``"peaks"`` the P largest Doppler-axis local
    maxima so that one target split over adjacent grid points is not
    counted twice, and the default ``"cells"`` ranks those maxima by the
    energy within half a Doppler bin (see :func:`doppler_cells`).

    ``callback(t, posterior, delta, beta, kappa, support, change)``, if
    given, sees the state after every sweep; ``posterior`` is the one the
    new hyper-parameters were computed from.
    """
    return _run(y, dictionary, cfg, P, eps, max_iter, prior, True, gauss_seidel, dof,
                method, trace, support_rule, callback)


def run_ongrid_baseline(y, dictionary: Dictionary, cfg: AfdmConfig, P, eps=1e-6,
                        max_iter=200, prior=PriorParams(), dof="measurements", method="auto",
                        support_rule="cells", trace=False, callback=None) -> EstimateResult:
    """Same EM loop with the Doppler offsets pinned to zero."""
    return _run(y, dictionary, cfg, P, eps, max_iter, prior, False, True, dof, method, trace,
                support_rule, callback)
