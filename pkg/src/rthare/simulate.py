"""Stochastic stage-latency models and a deadline-aware pipeline simulator.

Each pipeline stage draws per-job latencies from a parametric model
(constant, floor-clamped Gaussian, or motion-dependent affine plus
Gaussian noise). Clip jobs arrive strictly periodically (every
1000*K/fps ms), run FIFO, and a job's service time is the sum over stage
groups of the slowest member (stages inside one parallel group run
concurrently on distinct devices) plus a fixed per-job overhead. A job
misses its deadline when completion minus arrival strictly exceeds the
clip period.

Simulations are single-threaded and fully determined by the plan seed;
running many plans in parallel with independent seeds is safe.
"""

from __future__ import annotations

import importlib.resources
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import fsolve
from scipy.special import erf

from .timing import TimingLog

__all__ = [
    "SimulationError",
    "StageLatencyModel",
    "SimStage",
    "SimPlan",
    "sample_latency",
    "fit_tvl1_model",
    "simulate",
    "miss_ratio",
    "load_plan",
    "load_preset",
    "preset_names",
]

_KINDS = ("constant", "gaussian", "motion_affine")
_COLUMNS = ("motion", "rgb", "recog", "post")


class SimulationError(ValueError):
    """Invalid simulation model, plan, or infeasible fit target."""


@dataclass(frozen=True)
class StageLatencyModel:
    """Latency distribution of one stage, truncated below at floor_ms.

    constant: always mean_ms. gaussian: N(mean_ms, std_ms). motion_affine:
    a + b * motion**p + N(0, std_ms). All draws are clamped to floor_ms.
    """

    kind: str
    mean_ms: float = 0.0
    std_ms: float = 0.0
    floor_ms: float = 0.0
    a: float = 0.0
    b: float = 0.0
    p: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SimulationError(f"unknown latency model kind {self.kind!r}")
        if self.std_ms < 0:
            raise SimulationError(f"std_ms must be >= 0, got {self.std_ms}")
        if self.floor_ms < 0:
            raise SimulationError(f"floor_ms must be >= 0, got {self.floor_ms}")

    def sample_array(self, motion: Optional[np.ndarray], rng: np.random.Generator,
                     n: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, max(self.mean_ms, self.floor_ms))
        if self.kind == "gaussian":
            draws = rng.normal(self.mean_ms, self.std_ms, size=n)
        else:
            m = np.zeros(n) if motion is None else np.asarray(motion, dtype=np.float64)
            if np.any(m < 0):
                raise SimulationError("motion intensities must be >= 0")
            draws = self.a + self.b * np.power(m, self.p) + rng.normal(0.0, self.std_ms, size=n)
        return np.maximum(draws, self.floor_ms)


def sample_latency(model: StageLatencyModel, motion: float,
                   rng: np.random.Generator) -> float:
    """One latency draw in milliseconds (clamped below at the model floor)."""
    if motion < 0:
        raise SimulationError(f"motion must be >= 0, got {motion}")
    return float(model.sample_array(np.array([motion]), rng, 1)[0])


@dataclass(frozen=True)
class SimStage:
    name: str
    column: str
    model: StageLatencyModel

    def __post_init__(self):
        if self.column not in _COLUMNS:
            raise SimulationError(
                f"stage {self.name!r}: column must be one of {_COLUMNS}, got {self.column!r}")


@dataclass
class SimPlan:
    """Ordered stage models plus arrival and seeding parameters."""

    stages: List[SimStage]
    parallel_groups: List[List[str]] = field(default_factory=list)
    overhead_ms: float = 4.0
    fps: float = 30.0
    clip_len: int = 6
    jobs: Optional[int] = None
    duration_s: Optional[float] = None
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if not self.stages:
            raise SimulationError("plan needs at least one stage")
        if self.overhead_ms < 0:
            raise SimulationError(f"overhead_ms must be >= 0, got {self.overhead_ms}")
        if self.fps <= 0 or self.clip_len < 1:
            raise SimulationError("fps must be > 0 and clip_len >= 1")
        names = [s.name for s in self.stages]
        if len(set(names)) != len(names):
            raise SimulationError(f"duplicate stage names in {names}")
        seen: set = set()
        for group in self.parallel_groups:
            for member in group:
                if member not in names:
                    raise SimulationError(f"parallel group member {member!r} is not a stage")
                if member in seen:
                    raise SimulationError(f"stage {member!r} appears in two parallel groups")
                seen.add(member)

    @property
    def n_jobs(self) -> int:
        if self.jobs is not None:
            if self.jobs < 1:
                raise SimulationError(f"jobs must be >= 1, got {self.jobs}")
            return self.jobs
        if self.duration_s is not None:
            n = int(self.duration_s * self.fps / self.clip_len)
            if n < 1:
                raise SimulationError(
                    f"duration {self.duration_s}s covers no complete clip at "
                    f"{self.fps} fps / K={self.clip_len}")
            return n
        raise SimulationError("plan must set either jobs or duration_s")

    @property
    def period_ms(self) -> float:
        return 1000.0 * self.clip_len / self.fps

    def groups_in_order(self) -> List[List[str]]:
        """Execution groups: explicit parallel groups at their first member's
        position, remaining stages as singletons, stage order preserved."""
        by_member = {}
        for group in self.parallel_groups:
            for member in group:
                by_member[member] = tuple(group)
        out: List[List[str]] = []
        emitted: set = set()
        for stage in self.stages:
            key = by_member.get(stage.name)
            if key is None:
                out.append([stage.name])
            elif key not in emitted:
                out.append(list(key))
                emitted.add(key)
        return out

    # -- JSON ---------------------------------------------------------------

    @classmethod
    def from_dict(cls, spec: dict, name: str = "") -> "SimPlan":
        try:
            stages = [
                SimStage(
                    name=s["name"],
                    column=s["column"],
                    model=StageLatencyModel(**{
                        k: v for k, v in s["model"].items() if not k.startswith("_")
                    }),
                )
                for s in spec["stages"]
            ]
            return cls(
                stages=stages,
                parallel_groups=[list(g) for g in spec.get("parallel_groups", [])],
                overhead_ms=spec.get("overhead_ms", 4.0),
                fps=spec.get("fps", 30.0),
                clip_len=spec.get("clip_len", 6),
                jobs=spec.get("jobs"),
                duration_s=spec.get("duration_s"),
                seed=spec.get("seed", 0),
                name=name or spec.get("name", ""),
            )
        except (KeyError, TypeError) as exc:
            raise SimulationError(f"bad plan spec: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "fps": self.fps,
            "clip_len": self.clip_len,
            "overhead_ms": self.overhead_ms,
            "jobs": self.jobs,
            "duration_s": self.duration_s,
            "seed": self.seed,
            "stages": [
                {"name": s.name, "column": s.column, "model": asdict(s.model)}
                for s in self.stages
            ],
            "parallel_groups": [list(g) for g in self.parallel_groups],
        }


def simulate(plan: SimPlan, trace: Optional[Sequence[float]] = None) -> TimingLog:
    """Run the plan; returns one timing row per clip job.

    Clip i (1-based) arrives at i * 1000*K/fps ms. Jobs are FIFO: a job
    starts at max(its arrival, previous job end). Per-job motion comes
    from the trace, cycled when shorter than the job count.
    """
    n = plan.n_jobs
    period = plan.period_ms
    arrivals = period * np.arange(1, n + 1, dtype=np.float64)
    rng = np.random.default_rng(plan.seed)
    motion = None
    if trace is not None:
        trace_arr = np.asarray(trace, dtype=np.float64)
        if trace_arr.size == 0:
            raise SimulationError("motion trace is empty")
        motion = np.resize(trace_arr, n)

    draws: Dict[str, np.ndarray] = {}
    column_ms = {col: np.zeros(n) for col in _COLUMNS}
    for stage in plan.stages:
        d = stage.model.sample_array(motion, rng, n)
        draws[stage.name] = d
        column_ms[stage.column] += d

    service = np.full(n, float(plan.overhead_ms))
    for group in plan.groups_in_order():
        service += np.maximum.reduce([draws[name] for name in group])

    prefix = np.cumsum(service)
    end = np.maximum.accumulate(arrivals - prefix + service) + prefix
    start = end - service
    missed = (end - arrivals) > period

    log = TimingLog()
    log.extend_columns(
        clip_index=np.arange(1, n + 1),
        arrival_ms=arrivals,
        start_ms=start,
        motion_ms=column_ms["motion"],
        rgb_ms=column_ms["rgb"],
        recog_ms=column_ms["recog"],
        post_ms=column_ms["post"],
        end_ms=end,
        deadline_ms=np.full(n, period),
        missed=missed.astype(np.int64),
    )
    return log


def miss_ratio(log: TimingLog, deadline_ms: float) -> float:
    """Fraction of jobs whose completion - arrival strictly exceeds the deadline."""
    if len(log) == 0:
        raise SimulationError("empty timing log")
    return float((log.latencies_ms() > deadline_ms).mean())


# ---------------------------------------------------------------------------
# Moment-matched motion model fitting


def _phi(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _cdf(z):
    return 0.5 * (1.0 + erf(z / math.sqrt(2.0)))


def _clamped_moments(mu, sigma, floor):
    """Mean and second moment of max(N(mu, sigma), floor), elementwise."""
    mu = np.asarray(mu, dtype=np.float64)
    if sigma <= 0:
        e1 = np.maximum(mu, floor)
        return e1, e1 * e1
    z = (floor - mu) / sigma
    cdf = _cdf(z)
    pdf = _phi(z)
    e1 = floor * cdf + mu * (1.0 - cdf) + sigma * pdf
    e2 = floor**2 * cdf + (mu * mu + sigma * sigma) * (1.0 - cdf) + sigma * (mu + floor) * pdf
    return e1, e2


# supremum of std/(mean - floor) for a floor-clamped Gaussian (sigma -> inf
# limit: std of max(Z,0) over its mean)
_CLAMP_RATIO_LIMIT = math.sqrt(0.5 - 1.0 / (2.0 * math.pi)) / (1.0 / math.sqrt(2.0 * math.pi))


def fit_tvl1_model(mean_ms: float, std_ms: float, floor_ms: float,
                   trace: Sequence[float], noise_frac: float = 0.5,
                   p: float = 1.0) -> StageLatencyModel:
    """Fit a motion-affine model whose clamped moments match the targets.

    latency = a + b * motion**p + N(0, sigma_n), clamped at floor_ms, with
    sigma_n fixed at noise_frac * std_ms and (a, b) solved so the mean and
    std over the trace's empirical motion distribution reproduce
    (mean_ms, std_ms). A zero-variance trace degrades to b = 0 with the
    noise absorbing all variance.
    """
    m = np.asarray(trace, dtype=np.float64)
    if m.size == 0:
        raise SimulationError("motion trace is empty")
    if np.any(m < 0):
        raise SimulationError("motion intensities must be >= 0")
    if std_ms < 0:
        raise SimulationError(f"target std must be >= 0, got {std_ms}")
    if mean_ms <= floor_ms and std_ms > 0:
        raise SimulationError(
            f"target mean {mean_ms} not above floor {floor_ms}: infeasible")
    if std_ms > 0 and std_ms / (mean_ms - floor_ms) >= _CLAMP_RATIO_LIMIT:
        raise SimulationError(
            f"target std {std_ms} too large for floor {floor_ms} at mean {mean_ms} "
            f"(clamped-Gaussian limit std/(mean-floor) < {_CLAMP_RATIO_LIMIT:.4f})")
    if not 0 <= noise_frac <= 1:
        raise SimulationError(f"noise_frac must be in [0, 1], got {noise_frac}")

    mp = np.power(m, p)
    sd_m = float(mp.std(ddof=0))

    if std_ms == 0:
        # degenerate: constant at the target mean
        return StageLatencyModel(kind="constant", mean_ms=mean_ms, floor_ms=floor_ms)

    def moments(a, b, sigma):
        e1, e2 = _clamped_moments(a + b * mp, sigma, floor_ms)
        mean = float(e1.mean())
        var = float(e2.mean()) - mean * mean
        return mean, math.sqrt(max(var, 0.0))

    if sd_m == 0:
        # motion carries no information: pure Gaussian noise (b = 0)
        b = 0.0

        def residual(x):
            mean, std = moments(x[0], 0.0, x[1])
            return [mean - mean_ms, std - std_ms]

        sol = fsolve(residual, x0=[mean_ms, std_ms], full_output=False)
        a, sigma_n = float(sol[0]), abs(float(sol[1]))
    else:
        sigma_n = noise_frac * std_ms
        b0 = math.sqrt(max(1.0 - noise_frac**2, 0.0)) * std_ms / sd_m
        a0 = mean_ms - b0 * float(mp.mean())

        def residual(x):
            mean, std = moments(x[0], x[1], sigma_n)
            return [mean - mean_ms, std - std_ms]

        sol = fsolve(residual, x0=[a0, b0], full_output=False)
        a, b = float(sol[0]), float(sol[1])

    got_mean, got_std = moments(a, b, sigma_n)
    if abs(got_mean - mean_ms) > 0.005 * mean_ms or abs(got_std - std_ms) > 0.02 * std_ms:
        raise SimulationError(
            f"moment matching failed: reached ({got_mean:.2f}, {got_std:.2f}) "
            f"for targets ({mean_ms}, {std_ms})")
    return StageLatencyModel(kind="motion_affine", mean_ms=mean_ms, std_ms=sigma_n,
                             floor_ms=floor_ms, a=a, b=b, p=p)


# ---------------------------------------------------------------------------
# Plan files and bundled presets


def load_plan(path) -> SimPlan:
    with open(path) as fp:
        spec = json.load(fp)
    return SimPlan.from_dict(spec)


def _preset_specs() -> dict:
    text = importlib.resources.files("rthare").joinpath("presets/plans.json").read_text()
    return json.loads(text)["presets"]


def preset_names() -> List[str]:
    return sorted(_preset_specs())


def load_preset(name: str) -> SimPlan:
    specs = _preset_specs()
    if name not in specs:
        raise SimulationError(f"unknown preset {name!r}; available: {sorted(specs)}")
    return SimPlan.from_dict(specs[name], name=name)
