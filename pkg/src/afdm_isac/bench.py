"""Seeded Monte Carlo sweeps over SNR, grid resolution and target count.

A :class:`Scenario` names the radar configuration, the targets (fixed or
randomly drawn), the sweep axes and the estimators to compare.
:func:`run_scenario` turns it into one :class:`ResultRow` per
(method, r_k, snr, P) cell plus per-target scatter records.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml
from scipy.optimize import linear_sum_assignment

from . import channel
from .afdm import build_config
from .baselines import run_integer_cs_baseline
from .dictionary import build_dictionary, build_grids
from .errors import AfdmError, DimensionError
from .sbl import run_offgrid_sbl, run_ongrid_baseline

log = logging.getLogger(__name__)

METHODS = ("offgrid", "ongrid", "integer_cs")
RESULT_COLUMNS = ("method", "r_k", "snr_db", "P", "trials", "rmse_velocity_mps", "rmse_range_m",
                  "mean_iterations", "mean_wall_ms", "error")
SCATTER_COLUMNS = ("trial", "target_index", "true_range_m", "est_range_m", "true_velocity_mps",
                   "est_velocity_mps", "method", "r_k", "snr_db", "P")

# failures that abort a single cell rather than the whole sweep
CELL_ERRORS = (AfdmError, ArithmeticError, np.linalg.LinAlgError, RuntimeError)

REFERENCE_CONFIG = dict(N=128, delta_f=30e3, f_c=90e9, alpha_max=2, ell_max=10, k_v=1, c2=0.0,
                        N_cpp=12)
FIG2_TARGETS = ((39.0, -13.68), (78.0, 83.75), (195.0, 28.36))


@dataclass
class Scenario:
    """One experiment.

    ``targets`` is a list of ``{"range_m", "velocity_mps"}`` mappings (an
    optional complex ``gain`` pins the reflectivity, otherwise it is drawn
    per trial), or ``None`` to draw ``P`` random targets per trial for each
    entry of ``P``.
    """

    name: str = "custom"
    config: dict = field(default_factory=lambda: dict(REFERENCE_CONFIG))
    targets: list = None
    P: list = field(default_factory=lambda: [3])
    snr_db: list = field(default_factory=lambda: [5.0])
    r_k: list = field(default_factory=lambda: [0.5])
    methods: list = field(default_factory=lambda: list(METHODS))
    trials: int = 200
    seed: int = 2024
    eps: float = 1e-6
    max_iter: int = 200

    def __post_init__(self):
        if self.targets is not None:
            self.targets = [dict(t) for t in self.targets]
            self.P = [len(self.targets)]
        self.P = [int(p) for p in self.P]
        self.snr_db = [float(s) for s in self.snr_db]
        self.r_k = [float(r) for r in self.r_k]
        self.methods = list(self.methods)
        self.trials = int(self.trials)
        self.seed = int(self.seed)
        self.validate()

    def validate(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not (self.P and self.snr_db and self.r_k and self.methods):
            raise ValueError("scenario needs at least one P, SNR, r_k and method")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if min(self.P) < 1:
            raise ValueError("P must be >= 1")
        if min(self.r_k) <= 0:
            raise ValueError("r_k must be positive")
        if not all(math.isfinite(s) for s in self.snr_db):
            raise ValueError("SNR values must be finite")
        cfg = self.build_config()
        for t in self.targets or []:
            channel.target_from_physical(t["range_m"], t["velocity_mps"], cfg)

    def build_config(self):
        return build_config(**self.config)


@dataclass
class ResultRow:
    method: str
    r_k: float
    snr_db: float
    P: int
    trials: int
    rmse_velocity_mps: float
    rmse_range_m: float
    mean_iterations: float
    mean_wall_ms: float
    error: str = ""


def preset(name) -> Scenario:
    if name == "fig2":
        return Scenario(name="fig2",
                        targets=[dict(range_m=r, velocity_mps=v) for r, v in FIG2_TARGETS],
                        snr_db=[5.0], r_k=[0.5, 0.3, 0.1])
    if name == "fig3":
        return Scenario(name="fig3", P=[3], snr_db=list(np.arange(0.0, 15.01, 2.5)),
                        r_k=[0.5, 0.1])
    if name == "fig4":
        return Scenario(name="fig4", P=[1, 2, 3, 4, 5], snr_db=[0.0, 15.0], r_k=[0.1],
                        methods=["offgrid"])
    raise ValueError(f"unknown preset {name!r}; choose fig2, fig3 or fig4")


PRESETS = ("fig2", "fig3", "fig4")


def load_scenario(path) -> Scenario:
    """Read a scenario from a YAML (or JSON) document."""
    path = Path(path)
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    known = {f.name for f in fields(Scenario)}
    extra = set(doc) - known
    if extra:
        raise ValueError(f"{path}: unknown scenario keys {sorted(extra)}")
    if "config" in doc:
        doc["config"] = {**REFERENCE_CONFIG, **doc["config"]}
    return Scenario(**doc)


def pair_targets(est_ell, est_nu, true_ell, true_nu, cfg):
    """Minimum-cost matching of estimates to truths on normalized (delay, Doppler) error.

    Delay error is scaled by ``ell_max`` and Doppler error by the Doppler
    span so that neither axis dominates.  Returns ``perm`` with estimate
    ``perm[i]`` matched to truth ``i``.
    """
    est_ell, est_nu = np.asarray(est_ell, float), np.asarray(est_nu, float)
    true_ell, true_nu = np.asarray(true_ell, float), np.asarray(true_nu, float)
    if est_ell.size != true_ell.size:
        raise DimensionError(f"{est_ell.size} estimates for {true_ell.size} targets")
    d_scale = max(cfg.ell_max, 1)
    v_scale = 2 * cfg.alpha_max + 1
    cost = (((true_ell[:, None] - est_ell[None, :]) / d_scale) ** 2
            + ((true_nu[:, None] - est_nu[None, :]) / v_scale) ** 2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(true_ell.size, dtype=np.int64)
    perm[rows] = cols
    return perm


def rmse_velocity(estimates, truths, conventional=False):
    """Per-trial velocity RMSE of paired estimates.

    The default puts 1/P outside the root, ``(1/P) sqrt(sum e^2)``;
    ``conventional=True`` gives ``sqrt(sum e^2 / P)``.
    """
    est = np.asarray(estimates, dtype=np.float64).ravel()
    tru = np.asarray(truths, dtype=np.float64).ravel()
    if est.size != tru.size:
        raise DimensionError(f"{est.size} estimates for {tru.size} targets")
    if est.size == 0:
        raise DimensionError("no targets to score")
    sq = float(np.sum((est - tru) ** 2))
    if conventional:
        return math.sqrt(sq / est.size)
    return math.sqrt(sq) / est.size


def _trial_seeds(seed, P, trial):
    ss = np.random.SeedSequence(seed, spawn_key=(P, trial))
    return ss.spawn(3)


def draw_trial(scenario: Scenario, cfg, P, trial):
    """Targets, data symbols and noise seed for one trial.

    Depends only on (master seed, P, trial), so every SNR and r_k in the
    sweep sees the same targets, data and unit-variance noise draw.
    """
    ss_t, ss_x, ss_n = _trial_seeds(scenario.seed, P, trial)
    rng_t = np.random.default_rng(ss_t)
    if scenario.targets is None:
        targets = channel.random_targets(cfg, P, rng_t)
    else:
        targets = []
        for t in scenario.targets:
            gain = t.get("gain")
            if gain is None:
                gain = (rng_t.standard_normal() + 1j * rng_t.standard_normal()) / math.sqrt(2)
            targets.append(channel.target_from_physical(t["range_m"], t["velocity_mps"], cfg,
                                                        complex(gain)))
    x = channel.qam16(cfg.N, np.random.default_rng(ss_x))
    return targets, x, ss_n


class _Cell:
    def __init__(self):
        self.v, self.r, self.it, self.ms = [], [], [], []
        self.error = ""

    def row(self, method, r_k, snr, P, trials):
        if self.error:
            nan = float("nan")
            return ResultRow(method, r_k, snr, P, trials, nan, nan, nan, nan, self.error)
        return ResultRow(method, r_k, snr, P, trials, float(np.mean(self.v)),
                         float(np.mean(self.r)), float(np.mean(self.it)),
                         float(np.mean(self.ms)))


def run_scenario(scenario: Scenario, trace=False, conventional=False, progress=None):
    """Run every cell of ``scenario``.

    Returns ``(rows, scatter)``.  Rows follow the declaration order of
    methods, r_k, SNR and P.  A failing estimate marks its cell with an
    error message and the sweep carries on.
    """
    cfg = scenario.build_config()
    methods = scenario.methods
    cells = {(m, rk, snr, P): _Cell() for m in methods for rk in scenario.r_k
             for snr in scenario.snr_db for P in scenario.P}
    scatter = []
    kw = dict(eps=scenario.eps, max_iter=scenario.max_iter, trace=trace)
    int_grid = build_grids(cfg.ell_max, cfg.alpha_max, 1.0)
    grids = {rk: build_grids(cfg.ell_max, cfg.alpha_max, rk) for rk in scenario.r_k}
    for P in scenario.P:
        for trial in range(scenario.trials):
            try:
                targets, x, noise_seed = draw_trial(scenario, cfg, P, trial)
                frame = channel.simulate_echo(x, targets, cfg)
                dicts = {rk: build_dictionary(g, x, cfg) for rk, g in grids.items()}
                int_dict = build_dictionary(int_grid, x, cfg) if "integer_cs" in methods else None
            except CELL_ERRORS as exc:
                for key, cell in cells.items():
                    if key[3] == P and not cell.error:
                        cell.error = f"trial {trial}: {type(exc).__name__}: {exc}"
                continue
            t_ell = np.array([t.ell for t in targets])
            t_nu = np.array([t.nu for t in targets])
            t_vel = np.array([t.velocity for t in targets])
            t_rng = np.array([t.range for t in targets])
            for snr in scenario.snr_db:
                noisy, _ = channel.add_noise(frame, snr, noise_seed)
                y = channel.receive(noisy, cfg)
                cs_result = None
                for m in methods:
                    for rk in scenario.r_k:
                        cell = cells[(m, rk, snr, P)]
                        if cell.error:
                            continue
                        try:
                            if m == "integer_cs":
                                # integer-Doppler dictionary does not depend on r_k
                                if cs_result is None:
                                    cs_result = run_integer_cs_baseline(y, int_dict, cfg, P)
                                res = cs_result
                            elif m == "offgrid":
                                res = run_offgrid_sbl(y, dicts[rk], cfg, P, **kw)
                            else:
                                res = run_ongrid_baseline(y, dicts[rk], cfg, P, **kw)
                            perm = pair_targets(res.ell, res.nu, t_ell, t_nu, cfg)
                        except CELL_ERRORS as exc:
                            cell.error = f"trial {trial}: {type(exc).__name__}: {exc}"
                            log.warning("cell %s failed: %s", (m, rk, snr, P), cell.error)
                            continue
                        est_v, est_r = res.velocities[perm], res.ranges[perm]
                        cell.v.append(rmse_velocity(est_v, t_vel, conventional))
                        cell.r.append(rmse_velocity(est_r, t_rng, conventional))
                        cell.it.append(res.iterations)
                        cell.ms.append(res.wall_ms)
                        for i in range(P):
                            scatter.append(dict(trial=trial, target_index=i,
                                                true_range_m=float(t_rng[i]),
                                                est_range_m=float(est_r[i]),
                                                true_velocity_mps=float(t_vel[i]),
                                                est_velocity_mps=float(est_v[i]),
                                                method=m, r_k=rk, snr_db=snr, P=P))
            if progress is not None:
                progress(P, trial)
    rows = [cell.row(m, rk, snr, P, scenario.trials) for (m, rk, snr, P), cell in cells.items()]
    return rows, scatter


def _write_records(records, columns, path, fmt):
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            if fmt == "csv":
                w = csv.writer(fh)
                w.writerow(columns)
                for rec in records:
                    w.writerow([rec[c] for c in columns])
            elif fmt == "json":
                json.dump([{c: rec[c] for c in columns} for rec in records], fh, indent=1)
                fh.write("\n")
            else:
                raise ValueError(f"unknown format {fmt!r}; use csv or json")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_results(rows, path, fmt="csv", scatter=None, scatter_path=None):
    """Write the result table, and the scatter records if given.

    CSV floats use Python's shortest round-trip repr, so no precision is
    lost.  The scatter file defaults to ``<stem>_scatter.<fmt>`` next to
    ``path``.  Returns the list of paths written.
    """
    if not rows:
        raise ValueError("no result rows to write")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}; use csv or json")
    path = Path(path)
    _write_records([asdict(r) for r in rows], RESULT_COLUMNS, path, fmt)
    written = [path]
    if scatter is not None:
        if scatter_path is None:
            scatter_path = path.with_name(f"{path.stem}_scatter.{fmt}")
        _write_records(scatter, SCATTER_COLUMNS, scatter_path, fmt)
        written.append(Path(scatter_path))
    return written


def format_summary(rows):
    """Console table with display rounding."""
    lines = [f"{'method':<11}{'r_k':>6}{'snr_db':>8}{'P':>3}{'trials':>7}"
             f"{'rmse_v':>10}{'rmse_r':>9}{'iters':>8}{'ms':>9}"]
    for r in rows:
        if r.error:
            lines.append(f"{r.method:<11}{r.r_k:>6g}{r.snr_db:>8g}{r.P:>3}{r.trials:>7}  "
                         f"ERROR {r.error}")
            continue
        lines.append(f"{r.method:<11}{r.r_k:>6g}{r.snr_db:>8g}{r.P:>3}{r.trials:>7}"
                     f"{r.rmse_velocity_mps:>10.3f}{r.rmse_range_m:>9.3f}"
                     f"{r.mean_iterations:>8.1f}{r.mean_wall_ms:>9.1f}")
    return "\n".join(lines)

