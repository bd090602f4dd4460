"""Single-input TSK fuzzy controller with critic-driven online adaptation.

Three rules (Negative / Zero / Positive error) with affine consequents
u_i = a_i*e + b_i, blended by a partition-of-unity membership triple. A scalar
critic signal r = e drives steepest descent on the 3x2 consequent matrix.

Sign modes
----------
The published update law reads d(alpha)/dt = -eta*(-k*r + K*u) * mu^T X^T.
Reaching that form from the cost gradient requires the composed plant-error
gain d(r)/d(u) to be negative, but drug infusion *lowers* BIS while
r = (target - BIS)/100, so the true composed gain is positive: the printed
law pushes infusion away from the target and cannot close the loop from an
awake baseline. Both conventions are provided:

* "physical" (default): d(alpha)/dt = -eta*(+k*r + K*u) * mu^T X^T
* "paper":    d(alpha)/dt = -eta*(-k*r + K*u) * mu^T X^T  (as printed)

The composed gain magnitude (1/100 error normalization times the local Hill
slope) is absorbed into k, exactly as the published unit-gain simplification
absorbs it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

SIGN_PHYSICAL = "physical"
SIGN_PAPER = "paper"
SIGN_MODES = (SIGN_PHYSICAL, SIGN_PAPER)

PARAM_INIT_RANGE = 2.0   # consequents drawn uniformly from [-2, 2]
DIVERGENCE_LIMIT = 1e6   # |alpha| beyond this aborts the run

# Tuned defaults for the error and input weights (free parameters of the
# cost): k scales the normalized error into a drive strong enough to reach
# the 2-4 min induction window at eta = 2 and 1 s sampling; K_u adds a
# drug-minimization drag that also damps the post-induction trough.
DEFAULT_K = 160.0
DEFAULT_K_U = 0.1


class ControllerDivergence(RuntimeError):
    """Adaptation produced a non-finite or runaway parameter matrix."""


@dataclass(frozen=True)
class MembershipSet:
    """Shoulder-ramp Ne/Po plus central triangle Ze over normalized error."""

    em: float = 0.5  # half-width of the zero-error triangle

    def __post_init__(self):
        if self.em <= 0:
            raise ValueError(f"em must be > 0, got {self.em}")

    def grades(self, e: float) -> tuple[float, float, float]:
        return membership_grades(self.em, e)


@dataclass
class TskParams:
    """3x2 consequent matrix; rows (Ne, Ze, Po), columns (a_i, b_i)."""

    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha.shape != (3, 2):
            raise ValueError(f"alpha must be 3x2, got {self.alpha.shape}")

    def copy(self) -> "TskParams":
        return TskParams(self.alpha.copy())


@dataclass(frozen=True)
class ControllerConfig:
    """Hyperparameters of the adaptive loop."""

    eta: float = 2.0                # learning rate
    k: float = DEFAULT_K            # critic (error) weight in the cost
    k_u: float = DEFAULT_K_U        # control-effort weight in the cost
    em: float = 0.5                 # membership half-width
    u_min: float = 0.0              # pump lower bound, mg/min
    u_max: float = 50.0             # pump upper bound, mg/min
    sample_period: float = 1.0 / 60.0  # controller period, minutes (1 s)
    target_bis: float = 50.0
    seed: int = 0
    sign_mode: str = SIGN_PHYSICAL
    antiwindup: bool = True         # freeze adaptation pushing past saturation
    dead_zone: float = 0.0          # freeze adaptation while |e| is below this
    closing_threshold: float = 1e-4  # freeze while |e| shrinks faster than this per tick
    closing_band: float = 0.15      # near-target zone where the closing hold applies

    def __post_init__(self):
        if self.u_min >= self.u_max:
            raise ValueError(f"u_min must be < u_max, got [{self.u_min}, {self.u_max}]")
        if self.sample_period <= 0:
            raise ValueError(f"sample_period must be > 0, got {self.sample_period}")
        if self.em <= 0:
            raise ValueError(f"em must be > 0, got {self.em}")
        if self.k <= 0:
            raise ValueError(f"k must be > 0, got {self.k}")
        if self.k_u < 0:
            raise ValueError(f"k_u must be >= 0, got {self.k_u}")
        if self.dead_zone < 0:
            raise ValueError(f"dead_zone must be >= 0, got {self.dead_zone}")
        if self.closing_threshold < 0:
            raise ValueError(f"closing_threshold must be >= 0, got {self.closing_threshold}")
        if self.closing_band < 0:
            raise ValueError(f"closing_band must be >= 0, got {self.closing_band}")
        if self.sign_mode not in SIGN_MODES:
            raise ValueError(f"sign_mode must be one of {SIGN_MODES}, got {self.sign_mode!r}")

    def with_overrides(self, **kw) -> "ControllerConfig":
        return replace(self, **kw)


@dataclass
class ControllerState:
    """Mutable per-run controller state (one instance per simulation)."""

    params: TskParams
    last_u: float = 0.0
    last_e: float = 0.0


@dataclass(frozen=True)
class StepDiagnostics:
    e: float
    r: float
    j: float
    grades: tuple[float, float, float]
    u_raw: float
    u: float
    updated: bool


def init_params(seed: int) -> TskParams:
    """Seeded uniform draw of the six consequents from [-2, 2]."""
    rng = np.random.default_rng(seed)
    return TskParams(rng.uniform(-PARAM_INIT_RANGE, PARAM_INIT_RANGE, size=(3, 2)))


def fresh_state(cfg: ControllerConfig, seed: int | None = None) -> ControllerState:
    return ControllerState(params=init_params(cfg.seed if seed is None else seed))


def normalized_error(measured_bis: float, target_bis: float) -> float:
    """e = (target - measured)/100; in [-1, 1] for in-range BIS."""
    return (target_bis - measured_bis) / 100.0


def membership_grades(em: float, e: float) -> tuple[float, float, float]:
    """(mu_Ne, mu_Ze, mu_Po); sums to 1 for every e."""
    ze = max(0.0, 1.0 - abs(e) / em)
    ne = min(1.0, max(0.0, -e / em))
    po = min(1.0, max(0.0, e / em))
    return (ne, ze, po)


def tsk_output(params: TskParams, grades: tuple[float, float, float], e: float) -> float:
    """Blended rule output: sum_i mu_i * (a_i*e + b_i), mg/min before saturation."""
    a = params.alpha
    return (grades[0] * (a[0, 0] * e + a[0, 1])
            + grades[1] * (a[1, 0] * e + a[1, 1])
            + grades[2] * (a[2, 0] * e + a[2, 1]))


def saturate(u_raw: float, cfg: ControllerConfig) -> float:
    """Clamp to the pump's deliverable range."""
    return min(cfg.u_max, max(cfg.u_min, u_raw))


def critic_signal(e: float) -> float:
    """Reinforcement signal; the critic passes the normalized error through."""
    return e


def cost(r: float, u: float, cfg: ControllerConfig) -> float:
    """J = k*r^2/2 + K_u*u^2/2."""
    return 0.5 * cfg.k * r * r + 0.5 * cfg.k_u * u * u


def gradient_factor(r: float, u: float, cfg: ControllerConfig) -> float:
    """Scalar multiplying mu^T X^T in the update; sign set by the convention."""
    if cfg.sign_mode == SIGN_PAPER:
        return -cfg.k * r + cfg.k_u * u
    return cfg.k * r + cfg.k_u * u


def update_params(params: TskParams, grades: tuple[float, float, float], e: float,
                  r: float, u: float, cfg: ControllerConfig,
                  dt_ctrl: float | None = None) -> TskParams:
    """One explicit-Euler adaptation step: alpha <- alpha - eta*dt*factor*outer(mu, (e, 1)).

    u is the saturated (delivered) infusion. Raises ControllerDivergence when
    the result is non-finite or exceeds the runaway guard.
    """
    dt = cfg.sample_period if dt_ctrl is None else dt_ctrl
    g = gradient_factor(r, u, cfg)
    coef = cfg.eta * dt * g
    mu = np.asarray(grades, dtype=float)
    x = np.array([e, 1.0])
    new = TskParams(params.alpha - coef * np.outer(mu, x))
    flat = new.alpha.ravel()
    if not np.all(np.isfinite(flat)) or np.max(np.abs(flat)) > DIVERGENCE_LIMIT:
        raise ControllerDivergence(
            f"parameter matrix diverged (max |alpha| = {np.max(np.abs(flat)):.3e})"
        )
    return new


def controller_step(state: ControllerState, measured_bis: float,
                    cfg: ControllerConfig) -> tuple[float, StepDiagnostics]:
    """One sampling instant: error -> grades -> output -> saturation -> adaptation.

    Mutates state in place; returns the delivered infusion and diagnostics.
    Adaptation is gated three ways (all standard conditional-integration
    guards for integral-type adaptation driving a lagging plant):

    * antiwindup: an update that would push an already-saturated u_raw
      further outside the pump range is skipped;
    * closing hold: near the target (|e| < closing_band), while |e| is
      already shrinking faster than closing_threshold per tick the loop is
      converging on plant momentum and winding further would overshoot;
    * dead zone: |e| below dead_zone leaves the parameters at rest.
    """
    e = normalized_error(measured_bis, cfg.target_bis)
    grades = membership_grades(cfg.em, e)
    u_raw = tsk_output(state.params, grades, e)
    u = saturate(u_raw, cfg)
    r = critic_signal(e)
    g = gradient_factor(r, u, cfg)
    # factor < 0 raises u_raw, factor > 0 lowers it
    closing = (abs(e) < cfg.closing_band
               and (abs(e) - abs(state.last_e)) < -cfg.closing_threshold)
    frozen = closing or abs(e) < cfg.dead_zone or (
        cfg.antiwindup and ((u_raw >= cfg.u_max and g < 0.0)
                            or (u_raw <= cfg.u_min and g > 0.0)))
    if not frozen:
        state.params = update_params(state.params, grades, e, r, u, cfg)
    state.last_u = u
    state.last_e = e
    return u, StepDiagnostics(e=e, r=r, j=cost(r, u, cfg), grades=grades,
                              u_raw=u_raw, u=u, updated=not frozen)
