"""AFDM waveform primitives: configuration, DAFT/IDAFT and the chirp-periodic prefix."""

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import DiversityError, DimensionError, PrefixTooShortError, AfdmError

# 3e8 rather than 299792458: makes one Doppler bin exactly 50 m/s and one
# delay bin exactly 39.0625 m at the reference 90 GHz / 30 kHz / N=128 setup.
SPEED_OF_LIGHT = 3.0e8


@dataclass(frozen=True)
class AfdmConfig:
    """System constants of one AFDM frame.

    ``c1`` is derived from ``alpha_max`` and ``k_v`` and is not a free
    parameter; construct instances through :func:`build_config`.
    """

    N: int
    delta_f: float
    f_c: float
    c1: float
    c2: float
    N_cpp: int
    alpha_max: int
    ell_max: int
    k_v: int = 1

    @property
    def T_s(self) -> float:
        return 1.0 / (self.N * self.delta_f)

    @property
    def T(self) -> float:
        return 1.0 / self.delta_f

    @property
    def range_bin(self) -> float:
        """Range covered by one integer delay sample (m)."""
        return SPEED_OF_LIGHT * self.T_s / 2.0

    @property
    def velocity_per_doppler(self) -> float:
        """Radial velocity of one unit of normalized Doppler (m/s)."""
        return SPEED_OF_LIGHT * self.delta_f / (2.0 * self.f_c)

    @property
    def c1_fraction(self) -> Fraction:
        return Fraction(self.c1).limit_denominator(10 ** 9)

    @property
    def diversity_value(self) -> int:
        return 2 * self.alpha_max + self.ell_max + 2 * self.alpha_max * self.ell_max

    @property
    def prefix_is_cyclic(self) -> bool:
        """True when the CPP phase correction is identically one."""
        two_n_c1 = 2 * self.N * self.c1
        return self.N % 2 == 0 and abs(two_n_c1 - round(two_n_c1)) < 1e-9


def build_config(N=128, delta_f=30e3, f_c=90e9, alpha_max=2, ell_max=10, k_v=1,
                 c2=0.0, N_cpp=12) -> AfdmConfig:
    """Validate system constants and derive the first chirp rate.

    Raises :class:`DiversityError` when the delay/Doppler window breaks the
    full-diversity condition and :class:`PrefixTooShortError` when the prefix
    cannot hold the maximum delay.
    """
    if N <= 0 or N % 2:
        raise AfdmError(f"N must be a positive even integer, got {N}")
    if alpha_max < 0 or ell_max < 0 or k_v < 0:
        raise AfdmError("alpha_max, ell_max and k_v must be non-negative")
    if N_cpp > N:
        raise AfdmError(f"N_cpp={N_cpp} exceeds the frame length N={N}")
    if N_cpp < ell_max:
        raise PrefixTooShortError(f"N_cpp={N_cpp} < ell_max={ell_max}")
    div = 2 * alpha_max + ell_max + 2 * alpha_max * ell_max
    if div >= N:
        raise DiversityError(
            f"2*alpha_max + ell_max + 2*alpha_max*ell_max = {div} >= N = {N}")
    c1 = (2 * (alpha_max + k_v) + 1) / (2 * N)
    return AfdmConfig(N=int(N), delta_f=float(delta_f), f_c=float(f_c), c1=c1,
                      c2=float(c2), N_cpp=int(N_cpp), alpha_max=int(alpha_max),
                      ell_max=int(ell_max), k_v=int(k_v))


@dataclass(frozen=True)
class TimeFrame:
    values: np.ndarray
    has_cpp: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.complex128))

    def __len__(self):
        return self.values.shape[0]


def chirp_diag(c, N):
    """Diagonal of Lambda_c, exp(-j 2 pi c n^2)."""
    n = np.arange(N, dtype=np.float64)
    return np.exp(-2j * np.pi * c * n * n)


def dft_matrix(N):
    """Unitary N-point DFT matrix."""
    n = np.arange(N)
    return np.exp(-2j * np.pi * np.outer(n, n) / N) / np.sqrt(N)


@lru_cache(maxsize=16)
def _daft_cached(N, c1, c2):
    M = chirp_diag(c2, N)[:, None] * dft_matrix(N) * chirp_diag(c1, N)[None, :]
    M.setflags(write=False)
    return M


def daft_matrix(cfg: AfdmConfig) -> np.ndarray:
    """The unitary DAFT matrix Lambda_c2 F Lambda_c1 (read-only, cached)."""
    return _daft_cached(cfg.N, cfg.c1, cfg.c2)


def _check_len(v, n, what):
    v = np.asarray(v, dtype=np.complex128)
    if v.ndim != 1 or v.shape[0] != n:
        raise DimensionError(f"{what} must have length {n}, got shape {v.shape}")
    return v


def idaft_modulate(x, cfg: AfdmConfig) -> TimeFrame:
    x = _check_len(x, cfg.N, "DAF symbol vector")
    return TimeFrame(daft_matrix(cfg).conj().T @ x, has_cpp=False)


def daft_demodulate(r, cfg: AfdmConfig) -> np.ndarray:
    if isinstance(r, TimeFrame):
        if r.has_cpp:
            raise DimensionError("remove the prefix before demodulating")
        r = r.values
    r = _check_len(r, cfg.N, "time frame")
    return daft_matrix(cfg) @ r


def cpp_phase(cfg: AfdmConfig) -> np.ndarray:
    """Prefix phase factors for n = -N_cpp, ..., -1."""
    if cfg.N_cpp == 0:
        return np.ones(0, dtype=np.complex128)
    n = np.arange(-cfg.N_cpp, 0, dtype=np.float64)
    if cfg.prefix_is_cyclic:
        return np.ones(cfg.N_cpp, dtype=np.complex128)
    N = cfg.N
    return np.exp(-2j * np.pi * cfg.c1 * (N * N + 2 * N * n))


def add_cpp(s, cfg: AfdmConfig) -> TimeFrame:
    if isinstance(s, TimeFrame):
        if s.has_cpp:
            raise DimensionError("frame already carries a prefix")
        s = s.values
    s = _check_len(s, cfg.N, "time frame")
    if cfg.N_cpp == 0:
        return TimeFrame(s.copy(), has_cpp=True)
    prefix = s[cfg.N - cfg.N_cpp:] * cpp_phase(cfg)
    return TimeFrame(np.concatenate([prefix, s]), has_cpp=True)


def remove_cpp(r, cfg: AfdmConfig) -> TimeFrame:
    if isinstance(r, TimeFrame):
        if not r.has_cpp:
            raise DimensionError("frame carries no prefix")
        r = r.values
    r = _check_len(r, cfg.N + cfg.N_cpp, "prefixed frame")
    return TimeFrame(r[cfg.N_cpp:].copy(), has_cpp=False)
