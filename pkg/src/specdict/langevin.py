"""Overdamped Langevin dynamics in the two-well potential ``U_w(x) = (x^2 - w^2)^2 / w^4``."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import _backend
from .errors import InvalidInput, SimulationDiverged

log = logging.getLogger(__name__)

MAX_ABS_STATE = 1e3


@dataclass(frozen=True)
class TwoWellPotential:
    w: float = 1.0

    def __post_init__(self):
        if not self.w > 0:
            raise InvalidInput("well parameter w must be positive")


@dataclass(frozen=True)
class SimConfig:
    sigma: float = 0.5
    dt: float = 0.01
    n_samples: int = 40_000
    x0: float | None = None     # None starts at the right well bottom
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise InvalidInput("sigma must be non-negative")
        if not self.dt > 0:
            raise InvalidInput("dt must be positive")
        if self.n_samples < 1:
            raise InvalidInput("n_samples must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Trajectory:
    x: np.ndarray
    dt: float
    events: int = 0

    def __len__(self):
        return self.x.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_seconds", "x"])
        for k, v in enumerate(self.x):
            w.writerow([repr(k * self.dt), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        t = np.array([float(r[0]) for r in rows])
        x = np.array([float(r[1]) for r in rows])
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.01
        return cls(x, dt)


def potential_and_grad(pot: TwoWellPotential, x):
    w2 = pot.w * pot.w
    w4 = w2 * w2
    d = x * x - w2
    return d * d / w4, 4.0 * x * d / w4


def noise_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one independent noise stream."""
    ss = np.random.SeedSequence(seed, spawn_key=(stream,))
    return np.random.Generator(np.random.Philox(ss))


def _integrate(pot, x0, n_steps, cfg: SimConfig, stream: int):
    gen = noise_generator(cfg.seed, stream)
    inc = np.sqrt(2.0 * cfg.sigma * cfg.dt) * gen.standard_normal(n_steps)
    x, events, failed_at = _backend.em_integrate(float(x0), inc, float(pot.w), float(cfg.dt), MAX_ABS_STATE, 20)
    if failed_at >= 0:
        raise SimulationDiverged(f"state left [-{MAX_ABS_STATE:g}, {MAX_ABS_STATE:g}] at step {failed_at}")
    if events:
        log.info("w=%g: %d steps rejected and re-integrated with substeps", pot.w, events)
    return np.asarray(x), int(events)


def simulate(pot: TwoWellPotential, cfg: SimConfig, stream: int = 0) -> Trajectory:
    """Euler-Maruyama path ``X <- X - U'(X) dt + sqrt(2 sigma dt) xi`` with ``n_samples`` states (``x0`` included)."""
    x0 = pot.w if cfg.x0 is None else cfg.x0
    x, events = _integrate(pot, x0, cfg.n_samples - 1, cfg, stream)
    return Trajectory(x, cfg.dt, events)


def simulate_switching(regimes, cfg: SimConfig, stream_offset: int = 0):
    """Concatenate regimes ``[(potential, n_samples), ...]`` with a continuous state.

    Regime ``k`` draws noise from stream ``stream_offset + k``.  The first
    regime contributes ``n_0`` samples starting at ``x0``; later regimes
    continue from the last state.  Returns the trajectory and the sample
    indices where each new regime starts.
    """
    regimes = list(regimes)
    if not regimes:
        raise InvalidInput("need at least one regime")
    pieces, switches, events = [], [], 0
    first_pot, n0 = regimes[0]
    x0 = first_pot.w if cfg.x0 is None else cfg.x0
    x, ev = _integrate(first_pot, x0, n0 - 1, cfg, stream_offset)
    pieces.append(x)
    events += ev
    total = n0
    for k, (pot, n) in enumerate(regimes[1:], start=1):
        switches.append(total)
        x, ev = _integrate(pot, pieces[-1][-1], n, cfg, stream_offset + k)
        pieces.append(x[1:])
        events += ev
        total += n
    return Trajectory(np.concatenate(pieces), cfg.dt, events), switches


def switches_json(switches, regimes) -> str:
    return json.dumps(
        {"switch_indices": [int(s) for s in switches], "regimes": [{"w": float(p.w), "n_samples": int(n)} for p, n in regimes]},
        sort_keys=True,
    )
