"""Virtual delay/Doppler grids and the linearized measurement model A + B diag(kappa)."""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .afdm import AfdmConfig, daft_matrix
from .channel import gamma_cpp
from .errors import DimensionError, GridError

DEFAULT_MAX_COLUMNS = 8192


@dataclass(frozen=True)
class VirtualGrid:
    """Delay-major lattice: flat index ``j = l' * K_nu + k'``."""

    r_tau: int
    r_k: float
    L_tau: int
    K_nu: int
    ell_bar: np.ndarray
    k_bar: np.ndarray
    alpha_max: int
    ell_max: int

    @property
    def size(self) -> int:
        return self.L_tau * self.K_nu

    def index(self, ell_idx, k_idx):
        return ell_idx * self.K_nu + k_idx

    def nearest(self, ell, nu):
        """Flat index of the grid point nearest to (ell, nu)."""
        li = int(np.clip(np.rint(ell / self.r_tau), 0, self.L_tau - 1))
        row = self.k_bar[li * self.K_nu:(li + 1) * self.K_nu]
        return li * self.K_nu + int(np.argmin(np.abs(row - nu)))


def doppler_count(alpha_max, r_k):
    q = 2.0 * alpha_max / r_k
    # exact multiples (4 / 0.1 = 40.000000000000004) must not round up
    if abs(q - round(q)) < 1e-9:
        return int(round(q)) + 1
    return math.ceil(q) + 1


def build_grids(ell_max, alpha_max, r_k) -> VirtualGrid:
    if not r_k > 0:
        raise GridError(f"Doppler grid resolution must be positive, got {r_k}")
    r_tau = 1
    L_tau = (ell_max + 1) // r_tau
    K_nu = doppler_count(alpha_max, r_k)
    k_row = np.minimum(np.arange(K_nu) * r_k - alpha_max, float(alpha_max))
    ell_bar = np.repeat(np.arange(L_tau, dtype=np.float64) * r_tau, K_nu)
    k_bar = np.tile(k_row, L_tau)
    ell_bar.setflags(write=False)
    k_bar.setflags(write=False)
    return VirtualGrid(r_tau=r_tau, r_k=float(r_k), L_tau=L_tau, K_nu=K_nu,
                       ell_bar=ell_bar, k_bar=k_bar, alpha_max=alpha_max, ell_max=ell_max)


def _time_columns(ells, ks, x, cfg):
    """Gamma Delta Pi^ell s for each (ell, k) pair, as columns; s = IDAFT(x)."""
    M = daft_matrix(cfg)
    s = M.conj().T @ np.asarray(x, dtype=np.complex128)
    N = cfg.N
    n = np.arange(N)
    ells = np.asarray(ells, dtype=np.int64)
    ks = np.asarray(ks, dtype=np.float64)
    shifted = s[(n[:, None] - ells[None, :]) % N]
    cols = shifted * np.exp(-2j * np.pi * np.outer(n, ks) / N)
    if not cfg.prefix_is_cyclic:
        for j, ell in enumerate(ells):
            cols[:, j] *= gamma_cpp(ell, cfg)
    return cols


def _doppler_slope(N):
    return -2j * np.pi * np.arange(N) / N


def atom(ell_bar, k_bar, x, cfg: AfdmConfig) -> np.ndarray:
    """Noiseless unit-gain DAF-domain response of one (delay, Doppler) point."""
    return daft_matrix(cfg) @ _time_columns([int(ell_bar)], [k_bar], x, cfg)[:, 0]


def atom_derivative(ell_bar, k_bar, x, cfg: AfdmConfig) -> np.ndarray:
    """Partial derivative of :func:`atom` with respect to the Doppler coordinate."""
    t = _time_columns([int(ell_bar)], [k_bar], x, cfg)[:, 0]
    return daft_matrix(cfg) @ (_doppler_slope(cfg.N) * t)


@dataclass(frozen=True)
class Dictionary:
    """Atoms ``A`` and Doppler-derivative atoms ``B`` over a virtual grid.

    ``TA``/``TB`` are the same columns before the DAFT (time domain) and
    ``s`` the transmitted time-domain frame.  ``cyclic`` records that every
    time-domain atom is a pure cyclic shift of ``s`` times a Doppler ramp,
    which the structured posterior path relies on.
    """

    x: np.ndarray
    A: np.ndarray
    B: np.ndarray
    grid: VirtualGrid
    s: np.ndarray = None
    TA: np.ndarray = None
    TB: np.ndarray = None
    daft: np.ndarray = None
    cyclic: bool = False
    lag_phase: np.ndarray = None

    @property
    def r_k(self) -> float:
        return self.grid.r_k

    @property
    def n_atoms(self) -> int:
        return self.A.shape[1]

    # conjugate transposes, contiguous so that products against them hit BLAS directly
    @cached_property
    def AH(self):
        return _frozen_copy(self.A.conj().T)

    @cached_property
    def BH(self):
        return _frozen_copy(self.B.conj().T)

    @cached_property
    def TAH(self):
        return _frozen_copy(self.TA.conj().T)

    @cached_property
    def TBH(self):
        return _frozen_copy(self.TB.conj().T)


def _frozen_copy(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def build_dictionary(grid: VirtualGrid, x, cfg: AfdmConfig,
                     max_columns=DEFAULT_MAX_COLUMNS) -> Dictionary:
    if grid.size > max_columns:
        raise GridError(f"grid has {grid.size} points, cap is {max_columns}")
    x = np.array(x, dtype=np.complex128)
    if x.shape != (cfg.N,):
        raise DimensionError(f"data vector must have length {cfg.N}")
    if grid.ell_max > cfg.ell_max:
        raise GridError("grid delay span exceeds the configured ell_max")
    M = daft_matrix(cfg)
    TA = _time_columns(grid.ell_bar.astype(np.int64), grid.k_bar, x, cfg)
    TB = _doppler_slope(cfg.N)[:, None] * TA
    A = M @ TA
    B = M @ TB
    s = M.conj().T @ x
    # exp(-j 2 pi d k / N) for every lag d = -(N-1)..N-1 and Doppler row value k
    lags = np.arange(-(cfg.N - 1), cfg.N)
    lag_phase = np.exp(-2j * np.pi * np.outer(lags, grid.k_bar[:grid.K_nu]) / cfg.N)
    for arr in (x, A, B, s, TA, TB, lag_phase):
        arr.setflags(write=False)
    return Dictionary(x=x, A=A, B=B, grid=grid, s=s, TA=TA, TB=TB, daft=M,
                      cyclic=cfg.prefix_is_cyclic, lag_phase=lag_phase)


def check_kappa(kappa, dictionary: Dictionary):
    kappa = np.asarray(kappa, dtype=np.float64)
    if kappa.shape != (dictionary.n_atoms,):
        raise DimensionError(f"kappa must have length {dictionary.n_atoms}")
    half = dictionary.r_k / 2.0
    if np.any(np.abs(kappa) > half * (1 + 1e-12)):
        raise GridError(f"off-grid offsets must lie in [-{half}, {half}]")
    return kappa


def measurement_matrix(dictionary: Dictionary, kappa) -> np.ndarray:
    """A + B diag(kappa); never mutates the dictionary."""
    kappa = check_kappa(kappa, dictionary)
    return dictionary.A + dictionary.B * kappa[None, :]
