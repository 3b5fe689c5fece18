"""Per-user, per-cell, per-pattern rate tensor."""

from __future__ import annotations

import hashlib
import logging
import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .patterns import PatternSet

log = logging.getLogger(__name__)

_CACHE_MAGIC = b"HNRT"
_CACHE_VERSION = 1
# patterns per block when filling the tensor; bounds peak temporary memory
_BLOCK = 2048


@dataclass(frozen=True)
class FadingOptions:
    mode: str = "deterministic"
    mc_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("deterministic", "rayleigh_mc"):
            raise ValueError(f"unknown fading mode {self.mode!r}")
        if self.mode == "rayleigh_mc" and self.mc_samples < 100:
            raise ValueError("rayleigh_mc needs at least 100 samples")


class RateMatrix:
    """Rates ``r[k, b, i]`` in bit/s, treated as constants by the solvers."""

    def __init__(self, r, patterns: Optional[PatternSet] = None):
        r = np.ascontiguousarray(r, dtype=float)
        if r.ndim != 3:
            raise ValueError("rate tensor must be K x B x I")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("rates must be finite and nonnegative")
        r.setflags(write=False)
        self.r = r
        self.patterns = patterns
        if patterns is not None:
            if len(patterns) != r.shape[2] or patterns.num_cells != r.shape[1]:
                raise ValueError("pattern set does not match tensor dims")

    @property
    def shape(self):
        return self.r.shape

    @property
    def K(self) -> int:
        return self.r.shape[0]

    @property
    def B(self) -> int:
        return self.r.shape[1]

    @property
    def I(self) -> int:  # noqa: E743
        return self.r.shape[2]

    def zero_users(self) -> np.ndarray:
        """Users with zero rate under every (cell, pattern); their log-utility is -inf."""
        return np.flatnonzero(~np.any(self.r > 0, axis=(1, 2)))

    def subset(self, idx) -> "RateMatrix":
        idx = np.asarray(idx, dtype=int)
        pats = None
        if self.patterns is not None:
            pats = PatternSet(tuple(self.patterns.masks[i] for i in idx), self.patterns.num_cells)
        return RateMatrix(self.r[:, :, idx], pats)

    def masked(self, mask) -> "RateMatrix":
        """Rates multiplied by a ``K x B`` 0/1 mask (zero where not associated)."""
        mask = np.asarray(mask, dtype=float)
        return RateMatrix(self.r * mask[:, :, None], self.patterns)

    def reuse1_index(self) -> Optional[int]:
        return self.patterns.reuse1_index() if self.patterns is not None else None


def compute_rate_matrix(scenario, patterns: PatternSet,
                        fading: FadingOptions = FadingOptions()) -> RateMatrix:
    """Fill the rate tensor for every user, cell and candidate pattern.

    In deterministic mode the fading gain is fixed to one; ``rayleigh_mc``
    averages the log-rate over i.i.d. Rayleigh draws on every link.
    """
    if patterns.num_cells != scenario.num_cells:
        raise ValueError("pattern set and scenario disagree on the number of cells")
    K, B, I = scenario.num_users, scenario.num_cells, len(patterns)
    W = scenario.bandwidth_hz
    noise = scenario.noise_psd
    rx = scenario.tx_psd[None, :] * scenario.gains  # K x B received PSD
    act = patterns.activity  # I x B
    r = np.zeros((K, B, I))

    if fading.mode == "deterministic":
        actf = act.astype(float)
        for s in range(0, I, _BLOCK):
            a = actf[s:s + _BLOCK]  # n x B
            total = rx @ a.T  # K x n
            sig = rx[:, :, None] * a.T[None, :, :]  # K x B x n
            interf = total[:, None, :] - sig
            # guard tiny negative residue from the subtraction
            np.maximum(interf, 0.0, out=interf)
            r[:, :, s:s + _BLOCK] = W * np.log2(1.0 + sig / (noise + interf))
    else:
        # unit-mean exponential |h|^2 per link and sample, fresh draws per pattern
        rng = np.random.default_rng(fading.seed)
        n = fading.mc_samples
        for i in range(I):
            on = np.flatnonzero(act[i])
            p = rx[None, :, on] * rng.exponential(size=(n, K, on.size))
            total = p.sum(axis=2, keepdims=True)
            sinr = p / (noise + np.maximum(total - p, 0.0))
            r[:, on, i] = W * np.log2(1.0 + sinr).mean(axis=0)

    rm = RateMatrix(r, patterns)
    zeros = rm.zero_users()
    if zeros.size:
        log.warning("users %s have zero rate under every candidate pattern", zeros.tolist())
    return rm


# ---------------------------------------------------------------- cache file

def cache_key(scenario, patterns: PatternSet, fading: FadingOptions) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(scenario.gains, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(scenario.tx_psd, dtype="<f8").tobytes())
    h.update(struct.pack("<dd", scenario.noise_psd, scenario.bandwidth_hz))
    h.update(np.asarray(patterns.masks, dtype="<i8").tobytes())
    h.update(repr((fading.mode, fading.mc_samples, fading.seed)).encode())
    return h.hexdigest()[:32]


def write_rate_cache(path, rates: RateMatrix) -> None:
    """Binary layout: magic ``HNRT``, uint32 version, uint64 K, B, I, then
    ``K*B*I`` little-endian float64 values in row-major (k, b, i) order."""
    K, B, I = rates.shape
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack("<IQQQ", _CACHE_VERSION, K, B, I))
        f.write(np.ascontiguousarray(rates.r, dtype="<f8").tobytes())
    os.replace(tmp, path)


def read_rate_cache(path, patterns: Optional[PatternSet] = None) -> RateMatrix:
    with open(path, "rb") as f:
        if f.read(4) != _CACHE_MAGIC:
            raise ValueError(f"{path}: not a rate cache file")
        version, K, B, I = struct.unpack("<IQQQ", f.read(28))
        if version != _CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        data = np.frombuffer(f.read(), dtype="<f8")
    if data.size != K * B * I:
        raise ValueError(f"{path}: truncated cache file")
    return RateMatrix(data.reshape(K, B, I).astype(float), patterns)


def cached_rate_matrix(scenario, patterns, fading=FadingOptions(), cache_dir=None) -> RateMatrix:
    if cache_dir is None:
        return compute_rate_matrix(scenario, patterns, fading)
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, f"rates_{cache_key(scenario, patterns, fading)}.bin")
    if os.path.exists(path):
        return read_rate_cache(path, patterns)
    rates = compute_rate_matrix(scenario, patterns, fading)
    write_rate_cache(path, rates)
    return rates
