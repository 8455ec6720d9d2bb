"""Problem instances: geometry, fading, SIC residuals and uncertainty data.

Users are indexed from 0 and sorted by decreasing nominal BS gain, so user 0
is decoded first. Pair quantities are stored as ``(U, U)`` arrays indexed
``[u, t]``; only ``t <= u`` is meaningful for BackCom links (``g[u, u] == 1``)
and only ``t <= j`` for SIC residuals ``Pi[j, t]``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .uncertainty import PolySet, gain_range, is_bounded, worst_gain_product

FORMAT_TAG = "robust-hnoma-scenario"
FORMAT_VERSION = 1
MIN_DISTANCE = 1e-3
MAX_RETRIES = 100


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class GenConfig:
    num_users: int = 4
    error_dims: int = 3
    square_side: float = 2.0
    center_offset: float = 15.0
    rician_K_dB: float = 10.0
    pathloss_exp_bs: float = 3.0
    pathloss_exp_uu: float = 2.0
    noise_var: float = 1e-9
    rng_seed: int = 0
    uncertainty_mode: str = "diagonal"
    ball_radius: float = 0.025
    sic_residual_range: tuple = (0.0, 0.1)
    shift_range: tuple = (0.05, 2.0)
    l_range: tuple = (0.5, 10.0)
    u_factor: float = 5.0
    gram_entry_range: tuple = (0.5, 20.0)
    # Shifts and SIC residuals are drawn as fractions of the nominal gains
    # they perturb; False takes the drawn numbers as absolute gains.
    relative_shifts: bool = True
    relative_sic: bool = True

    def validate(self) -> GenConfig:
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(name, msg)

        need(isinstance(self.num_users, int) and self.num_users >= 1, "num_users", "must be an integer >= 1")
        need(isinstance(self.error_dims, int) and self.error_dims >= 1, "error_dims", "must be an integer >= 1")
        need(self.square_side > 0, "square_side", "must be positive")
        need(self.center_offset > 0, "center_offset", "must be positive")
        need(self.noise_var > 0, "noise_var", "must be positive")
        need(self.ball_radius >= 0, "ball_radius", "must be nonnegative")
        need(self.u_factor > 0, "u_factor", "must be positive")
        need(self.uncertainty_mode in ("diagonal", "dense"), "uncertainty_mode", "must be 'diagonal' or 'dense'")
        for name in ("sic_residual_range", "shift_range", "l_range", "gram_entry_range"):
            rng = getattr(self, name)
            need(len(rng) == 2 and 0 <= rng[0] <= rng[1], name, "must be an interval [lo, hi] with 0 <= lo <= hi")
        need(0 <= int(self.rng_seed) < 2 ** 64, "rng_seed", "must fit in 64 bits")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> GenConfig:
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown field")
        kw = {}
        for k, v in d.items():
            kw[k] = tuple(v) if isinstance(v, list) else v
        try:
            return cls(**kw).validate()
        except TypeError as exc:
            raise ConfigError("scenario", str(exc)) from exc


@dataclass(frozen=True)
class Scenario:
    h_gain: np.ndarray          # (U,)   nominal |h_u|^2
    g_gain: np.ndarray          # (U, U) nominal |g_ut|^2, t < u; diagonal 1
    alpha: np.ndarray           # (U, L) shift of |h_u|^2
    kappa: np.ndarray           # (U, U, L) shift of |g_ut|^2; zero for t >= u
    poly: tuple                 # U PolySet objects
    rho: float
    sic: np.ndarray             # (U, U) Pi[j, t] for t <= j
    noise_var: float
    positions: np.ndarray = field(default=None)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("h_gain", "g_gain", "alpha", "kappa", "sic", "positions"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.array(val, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "poly", tuple(self.poly))

    @property
    def num_users(self) -> int:
        return self.h_gain.size

    @property
    def error_dims(self) -> int:
        return self.alpha.shape[1]

    def pairs(self):
        """Desired-signal links ``(u, t)`` with ``t <= u``."""
        return [(u, t) for u in range(self.num_users) for t in range(u + 1)]

    def interference_pairs(self):
        """Interference links ``(j, t)`` with ``j > t``."""
        return [(j, t) for j in range(self.num_users) for t in range(j)]

    def link_gain(self, u: int, t: int) -> float:
        """Nominal product gain of link ``(u, t)``."""
        return float(self.h_gain[u] * (1.0 if u == t else self.g_gain[u, t]))

    def replace(self, **kw) -> Scenario:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return Scenario(**d)

    def without_uncertainty(self) -> Scenario:
        """Same nominal channels with every uncertainty set collapsed."""
        return self.replace(alpha=np.zeros_like(self.alpha), kappa=np.zeros_like(self.kappa), rho=0.0)

    # --- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "num_users": self.num_users,
            "error_dims": self.error_dims,
            "h_gain": self.h_gain.tolist(),
            "g_gain": self.g_gain.tolist(),
            "alpha": self.alpha.tolist(),
            "kappa": self.kappa.tolist(),
            "poly": [p.to_dict() for p in self.poly],
            "rho": float(self.rho),
            "sic": self.sic.tolist(),
            "noise_var": float(self.noise_var),
            "positions": None if self.positions is None else self.positions.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        if d.get("format") != FORMAT_TAG:
            raise ValueError("not a scenario document")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported scenario version {d.get('version')}")
        U, L = d["num_users"], d["error_dims"]
        s = cls(
            h_gain=np.array(d["h_gain"]),
            g_gain=np.array(d["g_gain"]),
            alpha=np.array(d["alpha"]).reshape(U, L),
            kappa=np.array(d["kappa"]).reshape(U, U, L),
            poly=[PolySet.from_dict(p) for p in d["poly"]],
            rho=d["rho"],
            sic=np.array(d["sic"]).reshape(U, U),
            noise_var=d["noise_var"],
            positions=None if d.get("positions") is None else np.array(d["positions"]),
            meta=d.get("meta", {}),
        )
        return s

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> Scenario:
        return cls.from_dict(json.loads(text))


def _streams(seed: int, names):
    root = np.random.SeedSequence(int(seed))
    return {name: np.random.default_rng(child) for name, child in zip(names, root.spawn(len(names)))}


def _cn(rng, size=None):
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)


def _draw_positions(cfg: GenConfig, rng) -> np.ndarray:
    U = cfg.num_users
    pos = np.empty((U, 2))
    half = cfg.square_side / 2.0
    for u in range(U):
        for _ in range(MAX_RETRIES):
            p = cfg.center_offset + rng.uniform(-half, half, size=2)
            if np.hypot(*p) > MIN_DISTANCE:
                pos[u] = p
                break
        else:
            raise RuntimeError("could not place a user away from the base station")
    return pos


def _draw_poly(cfg: GenConfig, rng) -> PolySet:
    L = cfg.error_dims
    lo, hi = cfg.gram_entry_range
    for _ in range(MAX_RETRIES):
        Ab = rng.uniform(lo, hi, size=(L, L))
        Bb = rng.uniform(lo, hi, size=(L, L))
        l = rng.uniform(*cfg.l_range, size=L)
        u = cfg.u_factor * l
        A, B = Ab.T @ Ab, Bb.T @ Bb
        if cfg.uncertainty_mode == "diagonal":
            A, B = np.diag(np.linalg.eigvalsh(A)), np.diag(np.linalg.eigvalsh(B))
        s = PolySet(A, B, l, u)
        if np.all(np.linalg.eigvalsh(A) > 0) and np.all(np.linalg.eigvalsh(B) > 0) and is_bounded(s):
            return s
    raise RuntimeError("could not draw a bounded polyhedral set")


def generate_scenario(cfg: GenConfig) -> Scenario:
    """Draw one instance; deterministic for a fixed configuration."""
    cfg.validate()
    U, L = cfg.num_users, cfg.error_dims
    rngs = _streams(cfg.rng_seed, ["geometry", "bs", "uu", "sets", "shifts", "sic"])

    pos = _draw_positions(cfg, rngs["geometry"])
    d_bs = np.hypot(pos[:, 0], pos[:, 1])
    h = d_bs ** (-cfg.pathloss_exp_bs / 2.0) * _cn(rngs["bs"], U)
    h_gain = np.abs(h) ** 2
    order = np.lexsort((np.arange(U), -h_gain))
    pos, h_gain = pos[order], h_gain[order]

    K = 10.0 ** (cfg.rician_K_dB / 10.0)
    g_gain = np.eye(U)
    for u in range(U):
        for t in range(u):
            d = max(np.hypot(*(pos[u] - pos[t])), MIN_DISTANCE)
            fade = np.sqrt(K / (K + 1.0)) + np.sqrt(1.0 / (K + 1.0)) * _cn(rngs["uu"])
            g_gain[u, t] = np.abs(d ** (-cfg.pathloss_exp_uu / 2.0) * fade) ** 2

    poly = [_draw_poly(cfg, rngs["sets"]) for _ in range(U)]

    rs = rngs["shifts"]
    alpha = rs.uniform(*cfg.shift_range, size=(U, L))
    kappa = np.zeros((U, U, L))
    for u in range(U):
        for t in range(u):
            kappa[u, t] = rs.uniform(*cfg.shift_range, size=L)
    if cfg.relative_shifts:
        alpha = alpha * h_gain[:, None]
        kappa = kappa * g_gain[:, :, None] * (1.0 - np.eye(U))[:, :, None]

    sic = np.zeros((U, U))
    for j in range(U):
        for t in range(j + 1):
            sic[j, t] = rngs["sic"].uniform(*cfg.sic_residual_range)
    if cfg.relative_sic:
        sic = sic * h_gain[:, None] * g_gain

    meta = {"seed": int(cfg.rng_seed), "config": _config_dict(cfg)}
    return Scenario(h_gain=h_gain, g_gain=g_gain, alpha=alpha, kappa=kappa, poly=poly,
                    rho=float(cfg.ball_radius), sic=sic, noise_var=float(cfg.noise_var),
                    positions=pos, meta=meta)


def _config_dict(cfg: GenConfig) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}


@dataclass
class DiagnosticsReport:
    link_min: dict        # (u, t) -> worst-case (smallest) product gain, t <= u
    link_max: dict        # (j, t) -> largest product gain, j > t
    bs_min: np.ndarray    # per-user smallest |h_u|^2
    infeasible_links: list

    @property
    def ok(self) -> bool:
        return not self.infeasible_links

    def infeasible_users(self) -> list:
        return sorted({u for u, _ in self.infeasible_links})


def validate_scenario(s: Scenario) -> DiagnosticsReport:
    """Worst-case link gains via the exact oracles; flags links with gain <= 0."""
    link_min, link_max = {}, {}
    bs_min = np.empty(s.num_users)
    for u in range(s.num_users):
        bs_min[u] = gain_range(s.h_gain[u], s.alpha[u], s.poly[u])[0]
    bad = []
    for u, t in s.pairs():
        g = 1.0 if u == t else s.g_gain[u, t]
        val = worst_gain_product(s.h_gain[u], g, s.alpha[u], s.kappa[u, t], s.poly[u], s.rho, "min")
        # a negative g-factor together with a negative h-factor flips sign; the
        # link is unusable if either factor can reach zero
        lo_h = bs_min[u]
        lo_g = g - s.rho * float(np.linalg.norm(s.kappa[u, t]))
        if lo_h <= 0 or lo_g <= 0:
            val = min(val, 0.0)
        link_min[(u, t)] = val
        if val <= 0:
            bad.append((u, t))
    for j, t in s.interference_pairs():
        link_max[(j, t)] = worst_gain_product(s.h_gain[j], s.g_gain[j, t], s.alpha[j], s.kappa[j, t],
                                              s.poly[j], s.rho, "max")
    return DiagnosticsReport(link_min, link_max, bs_min, bad)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return Scenario.from_json(fh.read())


def save_scenario(s: Scenario, path) -> None:
    with open(path, "w") as fh:
        fh.write(s.to_json())
