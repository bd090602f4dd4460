"""Three-compartment propofol kinetics, effect-site dynamics, and the BIS sensor.

The plant is linear time-invariant. States are physical concentrations
(µg/ml): x1 plasma, x2 fast peripheral, x3 slow peripheral, xe effect site.
Inter-compartment exchange follows clearance semantics (flux cl_i*(x1 - xi),
divided by the receiving compartment's volume), which makes the v-weighted
drug mass v1*x1 + v2*x2 + v3*x3 exactly conserved when metabolism (k10) is
switched off. Plasma and effect-site trajectories are identical to the
amount-form state space used elsewhere in the PK literature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from . import _kernels
from .patient import (
    MODE_CORRECTED,
    HillParams,
    PatientRecord,
    PkParams,
    derive_pk,
)

SCHEME_EXACT = "exact"  # closed-form zero-order-hold discretization
SCHEME_RK4 = "rk4"      # classical fixed-step Runge-Kutta
SCHEMES = (SCHEME_EXACT, SCHEME_RK4)

# Internal plant step: 0.1 s. Divides the 1 s control period exactly and
# oversamples the fastest PK time constant by two orders of magnitude.
DEFAULT_PLANT_DT = 1.0 / 600.0  # minutes


@dataclass(frozen=True)
class StepScheme:
    """Integration scheme plus internal step size (minutes)."""

    method: str = SCHEME_EXACT
    dt: float = DEFAULT_PLANT_DT

    def __post_init__(self):
        if self.method not in SCHEMES:
            raise ValueError(f"unknown scheme {self.method!r}; expected one of {SCHEMES}")
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")


class PkModel:
    """Augmented 4-state LTI plant (3 PK compartments + effect site) with Hill sensor.

    Immutable after construction; discretized transition operators are cached
    per step size.
    """

    def __init__(self, params: PkParams, hill: HillParams):
        self.params = params
        self.hill = hill
        p = params
        self.a = np.array([
            [-(p.k10 + p.k12 + p.k13), p.k12, p.k13, 0.0],
            [p.k21, -p.k21, 0.0, 0.0],
            [p.k31, 0.0, -p.k31, 0.0],
            [p.ke0, 0.0, 0.0, -p.ke0],
        ])
        self.b = np.array([1.0 / p.v1, 0.0, 0.0, 0.0])
        self._discrete_cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    @classmethod
    def from_patient(cls, record: PatientRecord, mode: str = MODE_CORRECTED) -> "PkModel":
        return cls(derive_pk(record.demographics, mode), record.hill)

    def discrete(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """Exact ZOH transition pair (Ad, Bd) so x(t+dt) = Ad @ x + Bd * u."""
        cached = self._discrete_cache.get(dt)
        if cached is None:
            cached = zoh_discretize(self.a, self.b, dt)
            self._discrete_cache[dt] = cached
        return cached


def zoh_discretize(a: np.ndarray, b: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form zero-order-hold discretization via the augmented exponential.

    Handles singular A (e.g. metabolism disabled), unlike the A^-1 (e^{A dt}-I) B
    shortcut.
    """
    n = a.shape[0]
    block = np.zeros((n + 1, n + 1))
    block[:n, :n] = a * dt
    block[:n, n] = b * dt
    full = expm(block)
    return np.ascontiguousarray(full[:n, :n]), np.ascontiguousarray(full[:n, n])


def zero_state() -> np.ndarray:
    return np.zeros(4)


def derivatives(model: PkModel, state: np.ndarray, infusion: float) -> np.ndarray:
    """Continuous-time state derivative under the given infusion (mg/min)."""
    return model.a @ state + model.b * infusion


def step(model: PkModel, state: np.ndarray, infusion: float, dt: float,
         scheme: str = SCHEME_EXACT) -> np.ndarray:
    """Advance one internal step with the infusion held constant (ZOH)."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if scheme == SCHEME_EXACT:
        ad, bd = model.discrete(dt)
        return ad @ state + bd * infusion
    if scheme == SCHEME_RK4:
        out = np.empty(4)
        _kernels.rk4_step(model.a, model.b, np.asarray(state, dtype=float),
                          infusion, dt, out)
        return out
    raise ValueError(f"unknown scheme {scheme!r}")


def hill_effect(hill: HillParams, ce) -> np.ndarray | float:
    """Unclamped Hill response E0 - Emax*ce^g/(ce^g + ec50^g); vectorized over ce."""
    ce = np.asarray(ce, dtype=float)
    cg = ce ** hill.gamma
    out = hill.e0 - hill.emax * cg / (cg + hill.ec50 ** hill.gamma)
    return out if out.ndim else float(out)


def bis(hill: HillParams, ce) -> np.ndarray | float:
    """Sensor-model BIS: Hill response clamped to the instrument range [0, 100]."""
    out = np.clip(hill_effect(hill, ce), 0.0, 100.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class OpenLoopTrace:
    """Open-loop simulation record on the internal grid."""

    t: np.ndarray            # minutes
    infusion: np.ndarray     # mg/min, ZOH on [t[i], t[i+1]); last entry unused
    x: np.ndarray            # (n, 4) concentrations
    bis_clean: np.ndarray    # unclamped Hill output
    bis_measured: np.ndarray  # clamped to [0, 100]

    @property
    def ce(self) -> np.ndarray:
        return self.x[:, 3]

    def total_infused(self) -> float:
        """Exact integral of the ZOH profile, mg."""
        dt = np.diff(self.t)
        return float(np.sum(self.infusion[:-1] * dt))


def simulate_open_loop(model: PkModel, infusion_profile, horizon: float,
                       scheme: StepScheme | None = None,
                       x0: np.ndarray | None = None) -> OpenLoopTrace:
    """Run the plant forward under a known infusion profile.

    infusion_profile may be a callable t -> mg/min (evaluated at the left edge
    of each internal step, ZOH) or an array of per-step rates of length
    ceil(horizon/dt). Rates must be nonnegative.
    """
    if horizon <= 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    scheme = scheme or StepScheme()
    n = int(round(horizon / scheme.dt))
    if abs(n * scheme.dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"internal dt {scheme.dt} does not divide horizon {horizon}")
    t = np.arange(n + 1) * scheme.dt
    if callable(infusion_profile):
        u = np.array([float(infusion_profile(ti)) for ti in t])
    else:
        u = np.asarray(infusion_profile, dtype=float)
        if u.shape == (n,):
            u = np.append(u, 0.0)
        elif u.shape != (n + 1,):
            raise ValueError(f"profile array must have {n} or {n + 1} entries, got {u.shape}")
    if np.any(u < 0):
        raise ValueError("infusion profile must be nonnegative")

    x = np.zeros((n + 1, 4))
    if x0 is not None:
        x[0] = np.asarray(x0, dtype=float)
    if scheme.method == SCHEME_EXACT:
        ad, bd = model.discrete(scheme.dt)
        a = np.zeros((4, 4))
        b = np.zeros(4)
        use_rk4 = 0
    else:
        ad = np.zeros((4, 4))
        bd = np.zeros(4)
        a, b = model.a, model.b
        use_rk4 = 1
    _kernels.open_loop(ad, bd, a, b, use_rk4, scheme.dt, u, x)

    clean = hill_effect(model.hill, x[:, 3])
    return OpenLoopTrace(t=t, infusion=u, x=x, bis_clean=clean,
                         bis_measured=np.clip(clean, 0.0, 100.0))
