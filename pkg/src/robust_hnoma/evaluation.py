"""Monte Carlo assessment of designs under sampled channel errors.

Achieved rates follow the uplink SINR model: in slot ``t`` the BS decodes
users ``t, t+1, ..., U-1`` in order, so user ``u`` sees the SIC residue of
users ``t..u-1`` and full interference from users ``u+1..U-1``.

Sampling is deterministic per seed. Draws come in fixed-size blocks and
block ``b`` uses its own child stream of the seed, so results do not depend
on how the blocks are distributed over workers. Standard normal variates are
drawn once and scaled by the configured std, which makes sweeps over the
error std use common random numbers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.stats import binomtest

from .optimizer import RobustDesign, SolveParams, StructuralInfeasibility, certified_gains, normalize, run_method
from .scenario import GenConfig, Scenario, generate_scenario, validate_scenario
from .uncertainty import sample_ball, sample_poly

log = logging.getLogger(__name__)

BLOCK = 512
G_STD_GRID = tuple(10.0 ** np.arange(-3.5, -0.99, 0.5))


@dataclass
class EvalConfig:
    h_std: float = 10.0 ** -2.5     # per-component std of the BS channel error
    g_std: float = 10.0 ** -2.5     # per-component std of the user-user channel error
    sic_scale: float = 1.0          # multiplies the scenario SIC residuals
    n: int = 2000
    seed: int = 0
    threshold: float | None = None  # None: take the design's threshold
    rate_tol: float = 1e-6          # b/s/Hz allowance when testing a rate
    confidence: float = 0.95

    def validate(self) -> EvalConfig:
        if not (self.h_std >= 0 and self.g_std >= 0 and self.sic_scale >= 0):
            raise ValueError("error stds and sic_scale must be nonnegative")
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 1):
            raise ValueError("n must be an integer >= 1")
        if self.threshold is not None and not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> EvalConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown eval fields: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class CdfGrid:
    x: np.ndarray   # sorted sample values
    p: np.ndarray   # empirical CDF at x

    def at(self, value: float) -> float:
        """Empirical ``P[X <= value]``."""
        return float(np.searchsorted(self.x, value, side="right")) / max(self.x.size, 1)

    def csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["rate", "probability"])
        for a, b in zip(self.x, self.p):
            wr.writerow([repr(float(a)), repr(float(b))])
        return buf.getvalue()


@dataclass
class EvalReport:
    pf: float
    pf_ci: tuple
    passes: int
    n: int
    user_passes: np.ndarray         # per-user pass counts
    user_rates: np.ndarray          # (n, U) total rate per user and draw
    total_power: float
    meta: dict = field(default_factory=dict)

    def cdf(self, user: int) -> CdfGrid:
        x = np.sort(self.user_rates[:, user])
        return CdfGrid(x, np.arange(1, x.size + 1) / x.size)

    def to_dict(self, include_samples: bool = False) -> dict:
        d = {
            "format": "robust-hnoma-eval",
            "version": 1,
            "pf": self.pf,
            "pf_ci": list(self.pf_ci),
            "passes": self.passes,
            "n": self.n,
            "user_passes": self.user_passes.tolist(),
            "total_power_W": self.total_power,
            "meta": self.meta,
        }
        if include_samples:
            d["user_rates"] = self.user_rates.tolist()
        return d

    def to_json(self, include_samples: bool = False) -> str:
        return json.dumps(self.to_dict(include_samples), indent=1, sort_keys=True)


# ----------------------------------------------------------------------
# rates


def achieved_rates(power, h_gain, g_gain, sic, noise_var: float) -> np.ndarray:
    """Per-link rates ``R[..., u, t]`` (b/s/Hz), zero for ``t > u``.

    ``power`` is a design or a ``(U, U)`` array in Watts; ``h_gain`` has
    shape ``(..., U)`` and ``g_gain`` shape ``(..., U, U)`` with a unit
    diagonal, so a batch of channel draws is evaluated at once.
    """
    P = power.power if isinstance(power, RobustDesign) else np.asarray(power, dtype=float)
    h = np.asarray(h_gain, dtype=float)
    g = np.asarray(g_gain, dtype=float)
    U = P.shape[0]
    low = np.tril(np.ones((U, U)))
    P = np.where(low > 0, np.nan_to_num(P), 0.0)
    gain = h[..., :, None] * g
    idx = np.arange(U)
    gain[..., idx, idx] = h            # own slot: no user-user factor
    rx = gain * P                      # received power of user j in slot t, [..., j, t]
    C = np.asarray(sic, dtype=float) * P
    # SIC residue of users t..u-1: exclusive prefix sum over j (C is zero for j < t)
    isic = np.cumsum(C, axis=0) - C
    # interference of users u+1..U-1: exclusive suffix sum over j
    tail = np.flip(np.cumsum(np.flip(rx, axis=-2), axis=-2), axis=-2) - rx
    sinr = rx / (isic + tail + noise_var)
    return np.where(low > 0, np.log2(1.0 + sinr), 0.0)


def user_rates(power, h_gain, g_gain, sic, noise_var: float) -> np.ndarray:
    """Total rate of each user summed over slots, shape ``(..., U)``."""
    return achieved_rates(power, h_gain, g_gain, sic, noise_var).sum(axis=-1)


# ----------------------------------------------------------------------
# channel sampling


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(block),)))


def _perturb(nominal_gain: np.ndarray, z: np.ndarray, std: float) -> np.ndarray:
    """``|h|^2 + 2 Re(h dh) + |dh|^2`` with real ``h = sqrt(gain)``, clamped at 0."""
    hb = np.sqrt(nominal_gain)
    dh = std * z
    val = nominal_gain + 2.0 * hb * dh.real + np.abs(dh) ** 2
    return np.maximum(val, 0.0)


def sample_channels(s: Scenario, h_std: float, g_std: float, n: int, seed: int):
    """``n`` draws of ``(h_gain (n, U), g_gain (n, U, U))`` around the nominal channels."""
    U = s.num_users
    hs, gs = [], []
    low = np.tril(np.ones((U, U)), -1) > 0
    for b in range(-(-n // BLOCK)):
        m = min(BLOCK, n - b * BLOCK)
        rng = _block_rng(seed, b)
        zh = rng.standard_normal((BLOCK, U)) + 1j * rng.standard_normal((BLOCK, U))
        zg = rng.standard_normal((BLOCK, U, U)) + 1j * rng.standard_normal((BLOCK, U, U))
        hs.append(_perturb(s.h_gain, zh[:m], h_std))
        g = np.broadcast_to(np.eye(U), (m, U, U)).copy()
        g[:, low] = _perturb(s.g_gain[low], zg[:m][:, low], g_std)
        gs.append(g)
    return np.concatenate(hs), np.concatenate(gs)


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def _config_hash(d: RobustDesign, s: Scenario, cfg: EvalConfig) -> str:
    blob = json.dumps({"cfg": asdict(cfg), "power": np.nan_to_num(d.power).tolist(),
                       "scenario": s.to_dict()}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def pf_montecarlo(d: RobustDesign, s: Scenario, cfg: EvalConfig | None = None) -> EvalReport:
    """Probability that every user meets the threshold under sampled errors."""
    cfg = (cfg or EvalConfig()).validate()
    T = cfg.threshold if cfg.threshold is not None else d.meta.get("threshold")
    if T is None:
        raise ValueError("no threshold given and none recorded in the design")
    U = s.num_users
    meta = {"method": d.method, "status": d.status, "scenario_seed": s.meta.get("seed"),
            "threshold": float(T), "config": asdict(cfg), "config_hash": _config_hash(d, s, cfg)}
    if not d.ok:
        return EvalReport(0.0, (0.0, 0.0), 0, cfg.n, np.zeros(U, dtype=int), np.zeros((cfg.n, U)),
                          float("nan"), meta)
    h, g = sample_channels(s, cfg.h_std, cfg.g_std, cfg.n, cfg.seed)
    rates = user_rates(d.power, h, g, cfg.sic_scale * s.sic, s.noise_var)
    ok_user = rates >= T - cfg.rate_tol
    ok_all = np.all(ok_user, axis=1)
    k = int(ok_all.sum())
    return EvalReport(pf=k / cfg.n, pf_ci=wilson_interval(k, cfg.n, cfg.confidence), passes=k, n=cfg.n,
                      user_passes=ok_user.sum(axis=0), user_rates=rates, total_power=d.total_power,
                      meta=meta)


def rate_cdf(d: RobustDesign, s: Scenario, cfg: EvalConfig | None = None, user: int = 0) -> CdfGrid:
    """Empirical CDF of one user's total rate over the sampled draws."""
    if not 0 <= user < s.num_users:
        raise IndexError(f"user {user} out of range")
    return pf_montecarlo(d, s, cfg).cdf(user)


# ----------------------------------------------------------------------
# in-set check of the robust guarantee


@dataclass
class RobustCheck:
    samples: int
    violations: int
    worst_margin: float     # smallest relative SINR margin seen (negative means violated)
    worst_link: tuple


def robust_rate_check(d: RobustDesign, s: Scenario, n: int = 100_000, seed: int = 0,
                      tol: float = 1e-7) -> RobustCheck:
    """Sample perturbations inside the uncertainty sets and test every link.

    Each draw takes one polyhedral vector per user (shifting ``|h_u|^2``)
    and one ball vector per user pair (shifting ``|g_ut|^2``). Link
    ``(u, t)`` passes when its SINR is at least ``(2^r - 1)(1 - tol)`` with
    ``r`` the design's rate share.
    """
    U, L = s.num_users, s.error_dims
    need = np.exp2(np.tril(d.rate_split)) - 1.0
    low = np.tril(np.ones((U, U)), -1) > 0
    violations = 0
    worst, worst_link = np.inf, None
    done = 0
    b = 0
    while done < n:
        m = min(BLOCK * 8, n - done)
        rng = _block_rng(seed, b)
        g1 = np.stack([sample_poly(s.poly[u], m, rng) for u in range(U)], axis=1)     # (m, U, L)
        g2 = sample_ball(s.rho, L, m * U * U, rng).reshape(m, U, U, L)
        h = s.h_gain + np.einsum("mul,ul->mu", g1, s.alpha)
        g = np.broadcast_to(np.eye(U), (m, U, U)).copy()
        g[:, low] = (s.g_gain + np.einsum("mutl,utl->mut", g2, s.kappa))[:, low]
        R = achieved_rates(d.power, h, g, s.sic, s.noise_var)
        sinr = np.exp2(R) - 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            margin = np.where(need > 0, sinr / need - 1.0, np.inf)
        margin = np.where(np.tril(np.ones((U, U))) > 0, margin, np.inf)
        violations += int(np.sum(np.any((margin < -tol).reshape(m, -1), axis=1)))
        i = np.unravel_index(np.argmin(margin), margin.shape)
        if margin[i] < worst:
            worst, worst_link = float(margin[i]), (int(i[1]), int(i[2]))
        done += m
        b += 1
    return RobustCheck(n, violations, worst, worst_link)


# ----------------------------------------------------------------------
# sweeps


def structurally_feasible(s: Scenario, params: SolveParams | None = None) -> bool:
    """True when every link keeps a positive worst-case gain (and the safe
    system can certify one)."""
    if not validate_scenario(s).ok:
        return False
    sn = normalize(s)[0]
    lower, _ = certified_gains(sn, (params or SolveParams()).dual_sharing)
    return all(v > 0 for v in lower.values())


def feasible_seeds(cfg: GenConfig, count: int, start: int = 0, max_scan: int = 100_000,
                   params: SolveParams | None = None) -> tuple[list, int]:
    """First ``count`` seeds from ``start`` whose scenarios are structurally
    feasible, plus the number of seeds skipped on the way."""
    seeds, skipped = [], 0
    seed = start
    while len(seeds) < count:
        if seed - start >= max_scan:
            raise RuntimeError(f"only {len(seeds)} feasible seeds in {max_scan} draws")
        if structurally_feasible(generate_scenario(replace(cfg, rng_seed=seed)), params):
            seeds.append(seed)
        else:
            skipped += 1
        seed += 1
    return seeds, skipped


AXES = ("threshold", "r_c", "g_std", "h_std")
SWEEP_COLUMNS = ["axis", "value", "method", "mean_power_W", "pf", "pf_lo", "pf_hi", "n_ok", "n_fail"]


@dataclass
class SweepResult:
    axis: str
    records: list           # one dict per (value, seed, method)
    table: list             # one dict per (value, method)

    def csv(self) -> str:
        buf = io.StringIO()
        wr = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        wr.writeheader()
        for row in self.table:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def records_csv(self, include_runtime: bool = False) -> str:
        """Per-run rows. Wall-clock times are left out unless asked for, so
        the file is byte-identical across reruns."""
        cols = ["axis", "value", "seed", "method", "status", "total_power_W", "pf", "iterations"]
        if include_runtime:
            cols.append("runtime_s")
        buf = io.StringIO()
        wr = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
        wr.writeheader()
        for row in self.records:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def power(self, value, method) -> dict:
        """``seed -> total power`` of the successful runs at one grid point."""
        return {r["seed"]: r["total_power_W"] for r in self.records
                if r["value"] == value and r["method"] == method and r["ok"]}


def _aggregate(axis: str, records: list, grid, methods) -> list:
    table = []
    for v in grid:
        for m in methods:
            rows = [r for r in records if r["value"] == v and r["method"] == m]
            ok = [r for r in rows if r["ok"]]
            row = {"axis": axis, "value": v, "method": m,
                   "mean_power_W": float(np.mean([r["total_power_W"] for r in ok])) if ok else float("nan"),
                   "pf": float("nan"), "pf_lo": float("nan"), "pf_hi": float("nan"),
                   "n_ok": len(ok), "n_fail": len(rows) - len(ok)}
            evald = [r for r in rows if r.get("passes") is not None]
            if evald:
                k = sum(r["passes"] for r in evald)
                n = sum(r["draws"] for r in evald)
                row["pf"] = k / n
                row["pf_lo"], row["pf_hi"] = wilson_interval(k, n)
            table.append(row)
    return table


def sweep(cfg: GenConfig, seeds, methods, axis: str, grid, params: SolveParams | None = None,
          eval_cfg: EvalConfig | None = None, progress=None) -> SweepResult:
    """Run every method on every seed at every grid point.

    ``axis`` is one of ``threshold``, ``r_c`` (scenario centre offset),
    ``g_std`` or ``h_std``. For the error-std axes the designs are solved
    once per seed and only the evaluation changes. Failed runs are recorded
    and skipped in the averages. With ``eval_cfg=None`` (and a design axis)
    no Monte Carlo evaluation is done.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    params = params or SolveParams()
    if axis in ("g_std", "h_std") and eval_cfg is None:
        eval_cfg = EvalConfig()
    grid = list(grid)
    records = []

    def run(scn, p):
        out = {}
        for m in methods:
            t0 = time.perf_counter()
            try:
                d = run_method(m, scn, p)
            except StructuralInfeasibility as exc:  # pragma: no cover - run_method reports it
                d = RobustDesign(m, "infeasible", np.full((scn.num_users,) * 2, np.nan),
                                 np.zeros((scn.num_users,) * 2), message=str(exc))
            out[m] = (d, time.perf_counter() - t0)
        return out

    def record(v, seed, m, d, dt, scn, ecfg):
        r = {"axis": axis, "value": v, "seed": seed, "method": m, "status": d.status, "ok": d.ok,
             "total_power_W": d.total_power if d.ok else float("nan"), "iterations": d.iterations,
             "runtime_s": dt, "pf": float("nan"), "passes": None, "draws": None}
        if ecfg is not None and d.ok:
            rep = pf_montecarlo(d, scn, ecfg)
            r.update(pf=rep.pf, passes=rep.passes, draws=rep.n)
        records.append(r)

    for seed in seeds:
        if axis in ("threshold", "r_c"):
            for v in grid:
                c = replace(cfg, rng_seed=seed, center_offset=v) if axis == "r_c" else replace(cfg, rng_seed=seed)
                p = replace(params, threshold=v) if axis == "threshold" else params
                scn = generate_scenario(c)
                for m, (d, dt) in run(scn, p).items():
                    record(v, seed, m, d, dt, scn, eval_cfg)
        else:
            scn = generate_scenario(replace(cfg, rng_seed=seed))
            designs = run(scn, params)
            for v in grid:
                ecfg = replace(eval_cfg, **{axis: v})
                for m, (d, dt) in designs.items():
                    record(v, seed, m, d, dt, scn, ecfg)
        if progress:
            progress(seed)
    return SweepResult(axis, records, _aggregate(axis, records, grid, methods))


def write_csv(text: str, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)
