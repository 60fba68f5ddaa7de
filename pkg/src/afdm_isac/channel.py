"""Multi-target doubly-dispersive echo synthesis and its DAF-domain matrix model."""

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .afdm import (SPEED_OF_LIGHT, AfdmConfig, TimeFrame, add_cpp, daft_demodulate,
                   daft_matrix, idaft_modulate, remove_cpp)
from .errors import DimensionError, OutOfWindowError, RangeQuantizationWarning

# slack for float round-off when checking window edges
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class Target:
    """A point scatterer.

    ``ell`` is the integer normalized delay and ``nu`` the real normalized
    Doppler.  ``h_tilde`` folds the delay-dependent Doppler phase into the
    gain, so that the DAF-domain echo is ``h_tilde * echo_matrix(ell, nu) @ x``.
    """

    range: float
    velocity: float
    gain: complex
    ell: int
    nu: float
    h_tilde: complex

    @property
    def alpha(self) -> int:
        """Integer part of the normalized Doppler, with the fraction in (-1/2, 1/2]."""
        return int(np.ceil(self.nu - 0.5))

    @property
    def frac(self) -> float:
        return self.nu - self.alpha


def _effective_gain(gain, ell, nu, cfg):
    # r[n] = h exp(-j2pi f (n - ell)) s[n - ell] = [h exp(+j2pi f ell)] exp(-j2pi f n) s[n - ell]
    return complex(gain) * np.exp(2j * np.pi * (nu / cfg.N) * ell)


def _check_window(ell, nu, cfg):
    if not 0 <= ell <= cfg.ell_max:
        raise OutOfWindowError(f"normalized delay {ell} outside [0, {cfg.ell_max}]")
    if abs(nu) > cfg.alpha_max + 0.5 + _EDGE_TOL:
        raise OutOfWindowError(
            f"normalized Doppler {nu:.6g} outside +/-{cfg.alpha_max + 0.5}")


def target_from_physical(range_m, velocity, cfg: AfdmConfig, gain=1.0) -> Target:
    """Map a physical (range, radial velocity) pair onto normalized delay/Doppler.

    Delay is rounded to the nearest integer sample; a
    :class:`RangeQuantizationWarning` is issued if that moved it.
    """
    tau = 2.0 * range_m / SPEED_OF_LIGHT
    ell_exact = tau / cfg.T_s
    ell = int(np.rint(ell_exact))
    if abs(ell_exact - ell) > _EDGE_TOL:
        warnings.warn(
            f"range {range_m} m is {ell_exact:.4f} delay samples; rounded to {ell}",
            RangeQuantizationWarning, stacklevel=2)
    f_d = 2.0 * velocity * cfg.f_c / SPEED_OF_LIGHT
    nu = f_d / cfg.delta_f
    _check_window(ell, nu, cfg)
    return Target(range=float(range_m), velocity=float(velocity), gain=complex(gain),
                  ell=ell, nu=float(nu), h_tilde=_effective_gain(gain, ell, nu, cfg))


def target_from_normalized(ell, nu, cfg: AfdmConfig, gain=1.0) -> Target:
    ell = int(ell)
    _check_window(ell, nu, cfg)
    return Target(range=ell * cfg.range_bin, velocity=nu * cfg.velocity_per_doppler,
                  gain=complex(gain), ell=ell, nu=float(nu),
                  h_tilde=_effective_gain(gain, ell, nu, cfg))


def random_targets(cfg: AfdmConfig, P, rng, nu_limit=None, max_draws=10000):
    """Draw P targets in distinct (delay, integer-Doppler) cells.

    Delays are uniform over the integer bins, Doppler uniform over
    ``[-nu_limit, nu_limit]`` (default ``alpha_max``), gains standard complex
    Gaussian.
    """
    if nu_limit is None:
        nu_limit = float(cfg.alpha_max)
    n_cells = (cfg.ell_max + 1) * (2 * cfg.alpha_max + 1)
    if P > n_cells:
        raise ValueError(f"cannot place {P} targets in {n_cells} distinct cells")
    targets, cells = [], set()
    for _ in range(max_draws):
        if len(targets) == P:
            break
        ell = int(rng.integers(0, cfg.ell_max + 1))
        nu = float(rng.uniform(-nu_limit, nu_limit))
        cell = (ell, int(np.rint(nu)))
        if cell in cells:
            continue
        cells.add(cell)
        gain = (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2.0)
        targets.append(target_from_normalized(ell, nu, cfg, gain))
    else:
        raise RuntimeError("could not place targets in distinct cells")
    return targets


def qam16(n, rng):
    """Unit-average-energy 16-QAM symbols."""
    levels = np.array([-3.0, -1.0, 1.0, 3.0])
    re = levels[rng.integers(0, 4, n)]
    im = levels[rng.integers(0, 4, n)]
    return (re + 1j * im) / np.sqrt(10.0)


def apply_sensing_channel(s_cpp, targets, cfg: AfdmConfig) -> TimeFrame:
    """Noiseless echo of a prefixed frame from a set of point targets.

    Received sample n (n = -N_cpp, ..., N-1) sums each target's delayed and
    Doppler-rotated copy of the transmit frame; contributions that would
    reach back before the start of the prefix are dropped.
    """
    if isinstance(s_cpp, TimeFrame):
        if not s_cpp.has_cpp:
            raise DimensionError("sensing channel expects a prefixed frame")
        s_cpp = s_cpp.values
    s_cpp = np.asarray(s_cpp, dtype=np.complex128)
    if s_cpp.shape != (cfg.N + cfg.N_cpp,):
        raise DimensionError(f"prefixed frame must have length {cfg.N + cfg.N_cpp}")
    ells = np.array([t.ell for t in targets], dtype=np.int64)
    f_norms = np.array([t.nu / cfg.N for t in targets], dtype=np.float64)
    gains = np.array([t.gain for t in targets], dtype=np.complex128)
    return TimeFrame(_kernels.echo_time_domain(s_cpp, cfg.N_cpp, ells, f_norms, gains),
                     has_cpp=True)


def gamma_cpp(ell, cfg: AfdmConfig) -> np.ndarray:
    """Diagonal of the prefix phase-correction matrix for delay ``ell``."""
    n = np.arange(cfg.N, dtype=np.float64)
    g = np.ones(cfg.N, dtype=np.complex128)
    if cfg.prefix_is_cyclic:
        return g
    head = n < ell
    N = cfg.N
    g[head] = np.exp(-2j * np.pi * cfg.c1 * (N * N - 2 * N * (ell - n[head])))
    return g


def time_domain_operator(ell, nu, cfg: AfdmConfig) -> np.ndarray:
    """Gamma_CPP @ Delta_{nu/N} @ Pi^ell as a dense N x N matrix."""
    N = cfg.N
    n = np.arange(N)
    diag = gamma_cpp(ell, cfg) * np.exp(-2j * np.pi * n * nu / N)
    op = np.zeros((N, N), dtype=np.complex128)
    op[n, (n - ell) % N] = diag
    return op


def echo_matrix(ell, nu, cfg: AfdmConfig) -> np.ndarray:
    """Per-target DAF-domain channel matrix (excluding the gain ``h_tilde``)."""
    M = daft_matrix(cfg)
    return M @ time_domain_operator(ell, nu, cfg) @ M.conj().T


def model_echo(x, targets, cfg: AfdmConfig) -> np.ndarray:
    """Noiseless DAF-domain echo from the matrix model."""
    x = np.asarray(x, dtype=np.complex128)
    y = np.zeros(cfg.N, dtype=np.complex128)
    for t in targets:
        y += t.h_tilde * (echo_matrix(t.ell, t.nu, cfg) @ x)
    return y


def simulate_echo(x, targets, cfg: AfdmConfig) -> TimeFrame:
    """Modulate ``x``, prefix it and pass it through the sensing channel."""
    return apply_sensing_channel(add_cpp(idaft_modulate(x, cfg), cfg), targets, cfg)


def receive(r: TimeFrame, cfg: AfdmConfig) -> np.ndarray:
    """Strip the prefix and demodulate back to the DAF domain."""
    return daft_demodulate(remove_cpp(r, cfg), cfg)


def add_noise(frame, snr_db, seed=None):
    """Add circular complex Gaussian noise at a per-sample SNR.

    Noise variance is the mean power of ``frame`` divided by the linear SNR.
    ``snr_db=inf`` returns the input untouched.  ``seed`` is anything
    :func:`numpy.random.default_rng` accepts.

    Returns ``(noisy, sigma2)`` with ``noisy`` of the same kind as ``frame``.
    """
    values = frame.values if isinstance(frame, TimeFrame) else np.asarray(frame, np.complex128)
    if np.isposinf(snr_db):
        return frame, 0.0
    if not np.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite or +inf, got {snr_db}")
    power = float(np.mean(np.abs(values) ** 2))
    sigma2 = power / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(values.shape) + 1j * rng.standard_normal(values.shape)
    noisy = values + np.sqrt(sigma2 / 2.0) * w
    if isinstance(frame, TimeFrame):
        return TimeFrame(noisy, has_cpp=frame.has_cpp), sigma2
    return noisy, sigma2
