"""
Network drops: macro/pico placement, user placement and large-scale link gains.

Default parameters follow the usual 3GPP HetNet evaluation setup (2 GHz,
10 MHz, 46/30 dBm macro/pico, 8/10 dB log-normal shadowing, no fast fading).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Sequence, Tuple

import numpy as np

MACRO = "macro"
PICO = "pico"
CELL_KINDS = (MACRO, PICO)

# deterministic pathloss: A + B*log10(d_km)
_PATHLOSS = {
    MACRO: (128.1, 37.6),
    PICO: (140.7, 36.7),
}

MAX_DROP_TRIES = 100_000


class ScenarioError(ValueError):
    """Raised for invalid configurations or geometrically infeasible drops."""


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(np.asarray(watt, dtype=float)) + 30.0


def pathloss_db(kind: str, distance_m: float) -> float:
    """Deterministic distance-dependent pathloss in dB.

    Parameters
    ----------
    kind : {"macro", "pico"}
        Transmitter tier.
    distance_m : float
        Link distance in meters (converted to km inside the model).

    Returns
    -------
    float
        Pathloss in dB, without shadowing, antenna gain or penetration loss.
    """
    if kind not in _PATHLOSS:
        raise ScenarioError(f"unknown cell kind {kind!r}")
    d = np.asarray(distance_m, dtype=float)
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise ScenarioError("distance must be positive and finite")
    a, b = _PATHLOSS[kind]
    out = a + b * np.log10(d / 1000.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class ScenarioConfig:
    num_macros: int = 3
    picos_per_macro: int = 4
    num_users: int = 50
    macro_power_dbm: float = 46.0
    pico_power_dbm: float = 30.0
    bandwidth_hz: float = 10e6
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 9.0
    antenna_gain_macro_db: float = 15.0
    antenna_gain_pico_db: float = 5.0
    penetration_loss_db: float = 20.0
    shadow_std_macro_db: float = 8.0
    shadow_std_pico_db: float = 10.0
    shadow_corr_macro: float = 1.0
    shadow_corr_pico: float = 0.5
    min_dist_macro_ue_m: float = 35.0
    min_dist_pico_ue_m: float = 10.0
    min_dist_macro_pico_m: float = 75.0
    min_dist_pico_pico_m: float = 40.0
    inter_site_distance_m: float = 500.0
    # None -> inter_site_distance / sqrt(3) (hexagon circumradius)
    drop_radius_m: Optional[float] = None
    # None -> regular polygon with side inter_site_distance
    macro_positions: Optional[List[Tuple[float, float]]] = None
    user_weights: Optional[List[float]] = None

    def validate(self) -> None:
        for name in ("num_macros", "picos_per_macro", "num_users"):
            if int(getattr(self, name)) < 1:
                raise ScenarioError(f"{name} must be >= 1")
        for name in ("min_dist_macro_ue_m", "min_dist_pico_ue_m",
                     "min_dist_macro_pico_m", "min_dist_pico_pico_m",
                     "inter_site_distance_m"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"{name} must be > 0")
        if self.drop_radius_m is not None and not self.drop_radius_m > 0:
            raise ScenarioError("drop_radius_m must be > 0")
        for name in ("shadow_corr_macro", "shadow_corr_pico"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ScenarioError(f"{name} must lie in [0, 1]")
        for name in ("shadow_std_macro_db", "shadow_std_pico_db"):
            if getattr(self, name) < 0:
                raise ScenarioError(f"{name} must be >= 0")
        if not self.bandwidth_hz > 0:
            raise ScenarioError("bandwidth_hz must be > 0")
        if self.macro_positions is not None and len(self.macro_positions) != self.num_macros:
            raise ScenarioError("macro_positions length must equal num_macros")
        if self.user_weights is not None:
            if len(self.user_weights) != self.num_users:
                raise ScenarioError("user_weights length must equal num_users")
            if any(not w > 0 for w in self.user_weights):
                raise ScenarioError("user weights must be positive")

    @property
    def radius(self) -> float:
        if self.drop_radius_m is not None:
            return float(self.drop_radius_m)
        return self.inter_site_distance_m / math.sqrt(3.0)

    def site_positions(self) -> np.ndarray:
        if self.macro_positions is not None:
            return np.asarray(self.macro_positions, dtype=float).reshape(-1, 2)
        m = self.num_macros
        if m == 1:
            return np.zeros((1, 2))
        # regular m-gon with side length = inter-site distance
        circ = self.inter_site_distance_m / (2.0 * math.sin(math.pi / m))
        ang = math.pi / 2 + 2 * math.pi * np.arange(m) / m
        return circ * np.column_stack((np.cos(ang), np.sin(ang)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if d.get("macro_positions") is not None:
            d["macro_positions"] = [tuple(p) for p in d["macro_positions"]]
        return cls(**d)


@dataclass(frozen=True)
class Cell:
    kind: str
    position: Tuple[float, float]
    tx_psd: float  # W/Hz
    parent: int  # owning macro index (a macro is its own parent)


@dataclass(frozen=True)
class User:
    position: Tuple[float, float]
    weight: float = 1.0


@dataclass
class Scenario:
    """A single network drop.

    ``gains[k, b]`` is the linear large-scale power gain from cell ``b`` to
    user ``k`` (pathloss, antenna gain, penetration loss and shadowing).
    Cells are ordered macros first, then picos grouped by parent macro.
    """

    cells: List[Cell]
    users: List[User]
    gains: np.ndarray
    noise_psd: float
    bandwidth_hz: float
    seed: Optional[int] = None
    config: Optional[ScenarioConfig] = field(default=None, compare=False)

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        if self.gains.shape != (len(self.users), len(self.cells)):
            raise ScenarioError("gains must be K x B")
        if not np.all(np.isfinite(self.gains)) or np.any(self.gains <= 0):
            raise ScenarioError("gains must be strictly positive and finite")

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def tx_psd(self) -> np.ndarray:
        return np.array([c.tx_psd for c in self.cells])

    @property
    def weights(self) -> np.ndarray:
        return np.array([u.weight for u in self.users])

    @property
    def macro_indices(self) -> List[int]:
        return [b for b, c in enumerate(self.cells) if c.kind == MACRO]

    @property
    def pico_indices(self) -> List[int]:
        return [b for b, c in enumerate(self.cells) if c.kind == PICO]

    def received_power_dbm(self) -> np.ndarray:
        """Total downlink received power per (user, cell) in dBm."""
        return watt_to_dbm(self.tx_psd[None, :] * self.bandwidth_hz * self.gains)

    def to_dict(self) -> dict:
        return {
            "cells": [
                {"kind": c.kind, "position": list(c.position),
                 "tx_psd": c.tx_psd, "parent": c.parent}
                for c in self.cells
            ],
            "users": [{"position": list(u.position), "weight": u.weight} for u in self.users],
            "gains_db": (10.0 * np.log10(self.gains)).tolist(),
            "noise_psd": self.noise_psd,
            "bandwidth_hz": self.bandwidth_hz,
            "seed": self.seed,
            "config": self.config.to_dict() if self.config is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        cells = [Cell(c["kind"], tuple(c["position"]), float(c["tx_psd"]), int(c["parent"]))
                 for c in d["cells"]]
        users = [User(tuple(u["position"]), float(u.get("weight", 1.0))) for u in d["users"]]
        gains = 10.0 ** (np.asarray(d["gains_db"], dtype=float) / 10.0)
        cfg = d.get("config")
        return cls(cells, users, gains, float(d["noise_psd"]), float(d["bandwidth_hz"]),
                   d.get("seed"), ScenarioConfig.from_dict(cfg) if cfg else None)


def _far_enough(p, others, dmin):
    if len(others) == 0:
        return True
    return bool(np.min(np.hypot(*(np.asarray(others) - p).T)) >= dmin)


def _uniform_in_disc(rng, center, radius):
    r = radius * math.sqrt(rng.random())
    th = 2 * math.pi * rng.random()
    return np.array([center[0] + r * math.cos(th), center[1] + r * math.sin(th)])


def _uniform_in_union(rng, centers, radius):
    lo = centers.min(axis=0) - radius
    hi = centers.max(axis=0) + radius
    while True:
        p = lo + (hi - lo) * rng.random(2)
        if np.min(np.hypot(*(centers - p).T)) <= radius:
            return p


def draw_shadowing(rng, num_users, kinds, std_macro, std_pico, corr_macro, corr_pico):
    """Log-normal shadowing in dB, shape (num_users, len(kinds)).

    Per user and tier, a common Gaussian component is shared by all cells of
    that tier, giving a cross-cell correlation coefficient ``corr`` within the
    tier. The two tiers are independent.
    """
    kinds = list(kinds)
    out = np.empty((num_users, len(kinds)))
    for kind, std, rho in ((MACRO, std_macro, corr_macro), (PICO, std_pico, corr_pico)):
        cols = [b for b, k in enumerate(kinds) if k == kind]
        if not cols:
            continue
        common = rng.standard_normal((num_users, 1))
        indep = rng.standard_normal((num_users, len(cols)))
        out[:, cols] = std * (math.sqrt(rho) * common + math.sqrt(1.0 - rho) * indep)
    return out


def generate_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """Drop picos and users at random and assemble the link gains.

    Identical ``(config, seed)`` produce identical scenarios.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    sites = config.site_positions()
    radius = config.radius

    picos = []  # (position, parent)
    for m, site in enumerate(sites):
        for _ in range(config.picos_per_macro):
            for _try in range(MAX_DROP_TRIES):
                p = _uniform_in_disc(rng, site, radius)
                if (_far_enough(p, sites, config.min_dist_macro_pico_m)
                        and _far_enough(p, [q for q, _ in picos], config.min_dist_pico_pico_m)):
                    picos.append((p, m))
                    break
            else:
                raise ScenarioError("could not place pico cells under the distance constraints")
    pico_pos = np.array([p for p, _ in picos]).reshape(-1, 2)

    users = []
    for _ in range(config.num_users):
        for _try in range(MAX_DROP_TRIES):
            p = _uniform_in_union(rng, sites, radius)
            if (_far_enough(p, sites, config.min_dist_macro_ue_m)
                    and _far_enough(p, pico_pos, config.min_dist_pico_ue_m)):
                users.append(p)
                break
        else:
            raise ScenarioError("could not place users under the distance constraints")
    user_pos = np.array(users)

    W = config.bandwidth_hz
    macro_psd = float(dbm_to_watt(config.macro_power_dbm)) / W
    pico_psd = float(dbm_to_watt(config.pico_power_dbm)) / W
    cells = [Cell(MACRO, (float(x), float(y)), macro_psd, m) for m, (x, y) in enumerate(sites)]
    cells += [Cell(PICO, (float(p[0]), float(p[1])), pico_psd, m) for p, m in picos]
    kinds = [c.kind for c in cells]
    cell_pos = np.array([c.position for c in cells])

    dist = np.hypot(user_pos[:, None, 0] - cell_pos[None, :, 0],
                    user_pos[:, None, 1] - cell_pos[None, :, 1])
    loss_db = np.empty_like(dist)
    ant = np.empty(len(cells))
    for b, kind in enumerate(kinds):
        loss_db[:, b] = pathloss_db(kind, dist[:, b])
        ant[b] = config.antenna_gain_macro_db if kind == MACRO else config.antenna_gain_pico_db
    shadow = draw_shadowing(rng, config.num_users, kinds,
                            config.shadow_std_macro_db, config.shadow_std_pico_db,
                            config.shadow_corr_macro, config.shadow_corr_pico)
    gain_db = -loss_db - config.penetration_loss_db + ant[None, :] + shadow
    noise_psd = float(dbm_to_watt(config.noise_psd_dbm_hz + config.noise_figure_db))

    weights = config.user_weights or [1.0] * config.num_users
    return Scenario(
        cells=cells,
        users=[User((float(x), float(y)), float(w)) for (x, y), w in zip(user_pos, weights)],
        gains=10.0 ** (gain_db / 10.0),
        noise_psd=noise_psd,
        bandwidth_hz=float(W),
        seed=seed,
        config=config,
    )


def scenario_from_gains(gains_db: Sequence, tx_psd: Sequence, kinds: Sequence[str] = None,
                        noise_psd: float = 1.0, bandwidth_hz: float = 1.0,
                        weights: Sequence[float] = None) -> Scenario:
    """Build a synthetic scenario directly from a gain matrix (testing helper)."""
    g = 10.0 ** (np.asarray(gains_db, dtype=float) / 10.0)
    K, B = g.shape
    kinds = list(kinds) if kinds is not None else [MACRO] * B
    cells = [Cell(k, (0.0, 0.0), float(p), b if k == MACRO else 0)
             for b, (k, p) in enumerate(zip(kinds, tx_psd))]
    w = weights if weights is not None else [1.0] * K
    users = [User((0.0, 0.0), float(x)) for x in w]
    return Scenario(cells, users, g, float(noise_psd), float(bandwidth_hz))
