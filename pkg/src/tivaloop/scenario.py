"""Simulation timelines: phases, surgical-stimulation events, and sensor noise.

Disturbances are additive on the BIS output (sensor side), applied before
noise and before the instrument clamp. The bundled standard profile realizes
the usual surgical narrative with eight labeled events A-H; none of its
amplitudes or timings are published values, so all of them live here as
configurable defaults and are echoed into every trace header.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

SHAPE_STEP = "step"
SHAPE_PULSE = "pulse"
SHAPE_RAMP = "ramp-up-hold-decay"
SHAPES = (SHAPE_STEP, SHAPE_PULSE, SHAPE_RAMP)

_RAMP_FRACTION = 0.2  # leading/trailing linear portion of the ramp shape


@dataclass(frozen=True)
class DisturbanceEvent:
    """One additive BIS disturbance. step and pulse are rectangular (pulse is
    the conventional label for short events); ramp-up-hold-decay rises and
    decays linearly over 20% of the duration at each end."""

    label: str
    start: float       # minutes
    duration: float    # minutes
    amplitude: float   # BIS units, positive = arousal
    shape: str = SHAPE_STEP

    def __post_init__(self):
        if self.start < 0:
            raise ValueError(f"event {self.label}: start must be >= 0")
        if self.duration <= 0:
            raise ValueError(f"event {self.label}: duration must be > 0")
        if self.shape not in SHAPES:
            raise ValueError(f"event {self.label}: unknown shape {self.shape!r}")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def value_at(self, t: float) -> float:
        if t < self.start or t >= self.end:
            return 0.0
        if self.shape != SHAPE_RAMP:
            return self.amplitude
        edge = _RAMP_FRACTION * self.duration
        into = t - self.start
        if into < edge:
            return self.amplitude * into / edge
        if into > self.duration - edge:
            return self.amplitude * (self.duration - into) / edge
        return self.amplitude


def disturbance_at(events, t):
    """Sum of active event contributions at time t (scalar or array, minutes)."""
    t_arr = np.asarray(t, dtype=float)
    out = np.zeros_like(t_arr)
    for ev in events:
        if ev.shape != SHAPE_RAMP:
            out = out + np.where((t_arr >= ev.start) & (t_arr < ev.end), ev.amplitude, 0.0)
        else:
            flat = np.atleast_1d(t_arr)
            vals = np.array([ev.value_at(ti) for ti in flat])
            out = out + vals.reshape(t_arr.shape)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class NoiseModel:
    """Band-limited measurement noise: first-order low-pass filtered Gaussian.

    The stream is stationary with standard deviation std from the first
    sample; cutoff is the low-pass corner in 1/min. std = 0 yields zeros.
    """

    std: float = 2.0      # BIS units
    cutoff: float = 6.0   # 1/min
    seed: int = 0

    def __post_init__(self):
        if self.std < 0:
            raise ValueError(f"noise std must be >= 0, got {self.std}")
        if self.cutoff <= 0:
            raise ValueError(f"noise cutoff must be > 0, got {self.cutoff}")

    def stream(self, n: int, sample_period: float, seed: int | None = None) -> np.ndarray:
        """n samples at the given period (minutes). seed overrides the model's."""
        if self.std == 0.0:
            return np.zeros(n)
        rng = np.random.default_rng(self.seed if seed is None else seed)
        a = math.exp(-2.0 * math.pi * self.cutoff * sample_period)
        z = rng.standard_normal(n)
        out = np.empty(n)
        out[0] = self.std * z[0]
        scale = self.std * math.sqrt(1.0 - a * a)
        for i in range(1, n):
            out[i] = a * out[i - 1] + scale * z[i]
        return out


def noise_sample(model: NoiseModel, t_index: int, sample_period: float = 1.0 / 60.0) -> float:
    """Value of the seeded stream at one index (materializes the prefix)."""
    if t_index < 0:
        raise ValueError("t_index must be >= 0")
    return float(model.stream(t_index + 1, sample_period)[t_index])


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation timeline: induction, then maintenance with events."""

    name: str = "induction"
    horizon: float = 10.0           # minutes
    target_bis: float = 50.0
    induction_end: float = 10.0     # minutes; events may start only after this
    events: tuple = ()
    noise: NoiseModel | None = None

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        """Schema violations as human-readable strings (empty when valid)."""
        out = []
        if self.horizon <= 0:
            out.append(f"horizon must be > 0, got {self.horizon}")
        if not 0 < self.target_bis < 100:
            out.append(f"target_bis must be in (0, 100), got {self.target_bis}")
        if self.induction_end > self.horizon:
            out.append(
                f"induction_end {self.induction_end} exceeds horizon {self.horizon}")
        for ev in self.events:
            if ev.start < self.induction_end:
                out.append(f"event {ev.label} starts at {ev.start} min, "
                           f"inside the induction phase (< {self.induction_end})")
            if ev.end > self.horizon:
                out.append(f"event {ev.label} ends at {ev.end} min, "
                           f"beyond the horizon ({self.horizon})")
        return out

    def with_noise(self, noise: NoiseModel | None) -> "ScenarioSpec":
        return replace(self, noise=noise)

    def disturbance(self, t):
        """Disturbance stream with the induction phase gated to zero."""
        d = disturbance_at(self.events, t)
        t_arr = np.asarray(t, dtype=float)
        gated = np.where(t_arr < self.induction_end, 0.0, d)
        return gated if gated.ndim else float(gated)


def standard_profile() -> tuple[DisturbanceEvent, ...]:
    """Eight-event surgical stimulation sequence for a 60-minute run.

    A intubation arousal pulse; B incision step followed by a quiet wait;
    C abrupt stimulus after the quiet period; D sustained surgical
    stimulation; E/F/G short larger stimuli superposed on D; H withdrawal of
    stimulation (cancels D) during closing. Amplitudes/timings are package
    defaults, not published values.
    """
    return (
        DisturbanceEvent("A", start=15.0, duration=1.0, amplitude=10.0, shape=SHAPE_PULSE),
        DisturbanceEvent("B", start=18.0, duration=3.0, amplitude=10.0, shape=SHAPE_STEP),
        DisturbanceEvent("C", start=26.0, duration=1.0, amplitude=15.0, shape=SHAPE_PULSE),
        DisturbanceEvent("D", start=30.0, duration=30.0, amplitude=8.0, shape=SHAPE_STEP),
        DisturbanceEvent("E", start=35.0, duration=1.0, amplitude=15.0, shape=SHAPE_PULSE),
        DisturbanceEvent("F", start=40.0, duration=1.0, amplitude=15.0, shape=SHAPE_PULSE),
        DisturbanceEvent("G", start=45.0, duration=1.0, amplitude=15.0, shape=SHAPE_PULSE),
        DisturbanceEvent("H", start=55.0, duration=5.0, amplitude=-8.0, shape=SHAPE_STEP),
    )


def induction_scenario(horizon: float = 10.0, target_bis: float = 50.0,
                       noise: NoiseModel | None = None) -> ScenarioSpec:
    """Induction-only run: no surgical events."""
    return ScenarioSpec(name="induction", horizon=horizon, target_bis=target_bis,
                        induction_end=horizon, events=(), noise=noise)


def standard_scenario(target_bis: float = 50.0,
                      noise: NoiseModel | None = None) -> ScenarioSpec:
    """Default 60-minute induction + maintenance run with the standard profile."""
    return ScenarioSpec(name="standard", horizon=60.0, target_bis=target_bis,
                        induction_end=10.0, events=standard_profile(), noise=noise)


BUILTIN_SCENARIOS = ("induction", "standard")


def builtin_scenario(name: str) -> ScenarioSpec:
    if name == "induction":
        return induction_scenario()
    if name == "standard":
        return standard_scenario()
    raise KeyError(f"unknown builtin scenario {name!r}; valid: {BUILTIN_SCENARIOS}")


def save_scenario(path, spec: ScenarioSpec) -> None:
    """Write one scenario as a JSON document (schema in the README)."""
    doc = {
        "name": spec.name,
        "horizon_min": spec.horizon,
        "target_bis": spec.target_bis,
        "induction_end_min": spec.induction_end,
        "events": [
            {"label": ev.label, "start_min": ev.start, "duration_min": ev.duration,
             "amplitude_bis": ev.amplitude, "shape": ev.shape}
            for ev in spec.events
        ],
    }
    if spec.noise is not None:
        doc["noise"] = {"std_bis": spec.noise.std, "cutoff_per_min": spec.noise.cutoff,
                        "seed": spec.noise.seed}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scenario(path) -> ScenarioSpec:
    """Read a scenario JSON document; raises ValueError with all schema problems."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        events = tuple(
            DisturbanceEvent(
                label=str(ev["label"]),
                start=float(ev["start_min"]),
                duration=float(ev["duration_min"]),
                amplitude=float(ev["amplitude_bis"]),
                shape=str(ev.get("shape", SHAPE_STEP)),
            )
            for ev in doc.get("events", [])
        )
        noise = None
        if "noise" in doc and doc["noise"] is not None:
            nd = doc["noise"]
            noise = NoiseModel(std=float(nd["std_bis"]),
                               cutoff=float(nd.get("cutoff_per_min", 6.0)),
                               seed=int(nd.get("seed", 0)))
        return ScenarioSpec(
            name=str(doc.get("name", "scenario")),
            horizon=float(doc["horizon_min"]),
            target_bis=float(doc.get("target_bis", 50.0)),
            induction_end=float(doc["induction_end_min"]),
            events=events,
            noise=noise,
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing required scenario key {exc}") from exc
