"""Model algebra: latent disease age, spatial decomposition, trajectories,
cause-specific Weibull hazards, survival and cumulative incidence.

Times are in years. Outcome values live in the open interval (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from .errors import DomainError, ValidationError


@dataclass(frozen=True)
class Hyperparameters:
    """Structural sizes and user-fixed prior scales of the latent fixed effects."""

    n_outcomes: int
    n_events: int
    n_sources: int
    sigma_g: float = 0.01
    sigma_v0: float = 0.01
    sigma_nu: float = 0.01
    sigma_rho: float = 0.01
    sigma_beta: float = 0.01
    sigma_zeta: float = 0.01

    def __post_init__(self):
        if self.n_outcomes < 2:
            raise ValidationError("n_outcomes must be at least 2")
        if self.n_events < 1:
            raise ValidationError("n_events must be positive")
        if not 1 <= self.n_sources <= self.n_outcomes - 1:
            raise ValidationError(
                f"n_sources must lie in [1, {self.n_outcomes - 1}], got {self.n_sources}"
            )
        for name in ("sigma_g", "sigma_v0", "sigma_nu", "sigma_rho", "sigma_beta", "sigma_zeta"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class FixedEffects:
    """Population parameters on their natural scale.

    Used both for the estimated parameters (where g, v0, nu, rho, beta, zeta
    are the population means of the latent fixed effects) and for an
    effective parameter set combining those with a sampled realisation.
    """

    t0: float
    sigma_tau: float
    sigma_xi: float
    g: np.ndarray
    v0: np.ndarray
    sigma_noise: np.ndarray
    nu: np.ndarray
    rho: np.ndarray
    beta: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        for name in ("g", "v0", "sigma_noise", "nu", "rho"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("beta", "zeta"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "sigma_tau", float(self.sigma_tau))
        object.__setattr__(self, "sigma_xi", float(self.sigma_xi))

    @property
    def n_outcomes(self) -> int:
        return self.g.size

    @property
    def n_events(self) -> int:
        return self.nu.size

    @property
    def n_sources(self) -> int:
        return self.beta.shape[1]

    def validate(self, allow_zero_noise: bool = False) -> None:
        K, L = self.n_outcomes, self.n_events
        if self.v0.shape != (K,) or self.sigma_noise.shape != (K,):
            raise ValidationError("g, v0 and sigma_noise must share length K")
        if self.rho.shape != (L,):
            raise ValidationError("nu and rho must share length L")
        if self.beta.shape[0] != K - 1:
            raise ValidationError(f"beta must have K-1={K - 1} rows, got {self.beta.shape[0]}")
        if self.zeta.shape != (L, self.n_sources):
            raise ValidationError(f"zeta must have shape {(L, self.n_sources)}, got {self.zeta.shape}")
        for name in ("g", "v0", "nu", "rho"):
            if not np.all(getattr(self, name) > 0):
                raise ValidationError(f"{name} must be strictly positive")
        noise_ok = self.sigma_noise >= 0 if allow_zero_noise else self.sigma_noise > 0
        if not np.all(noise_ok):
            raise ValidationError("sigma_noise must be strictly positive")
        if not (self.sigma_tau > 0 and self.sigma_xi > 0):
            raise ValidationError("sigma_tau and sigma_xi must be strictly positive")

    def with_latent(self, z: "LatentFixedEffects") -> "FixedEffects":
        """Effective parameters: population scalars of ``self``, sampled latents of ``z``."""
        return replace(
            self,
            g=np.exp(z.log_g),
            v0=np.exp(z.log_v0),
            nu=np.exp(-z.neg_log_nu),
            rho=np.exp(z.log_rho),
            beta=z.beta.copy(),
            zeta=z.zeta.copy(),
        )

    def as_dict(self) -> dict:
        return {
            "t0": self.t0,
            "sigma_tau": self.sigma_tau,
            "sigma_xi": self.sigma_xi,
            "g": self.g,
            "v0": self.v0,
            "sigma_noise": self.sigma_noise,
            "nu": self.nu,
            "rho": self.rho,
            "beta": self.beta,
            "zeta": self.zeta,
        }


@dataclass
class LatentFixedEffects:
    """Sampled population latents on their unconstrained scale."""

    log_g: np.ndarray
    log_v0: np.ndarray
    neg_log_nu: np.ndarray
    log_rho: np.ndarray
    beta: np.ndarray
    zeta: np.ndarray

    @classmethod
    def from_fixed(cls, fe: FixedEffects) -> "LatentFixedEffects":
        return cls(
            log_g=np.log(fe.g),
            log_v0=np.log(fe.v0),
            neg_log_nu=-np.log(fe.nu),
            log_rho=np.log(fe.rho),
            beta=fe.beta.copy(),
            zeta=fe.zeta.copy(),
        )

    def copy(self) -> "LatentFixedEffects":
        return LatentFixedEffects(**{k: v.copy() for k, v in self.__dict__.items()})


@dataclass
class RandomEffects:
    """Individual random effects.

    ``xi`` and ``tau`` are scalars for a single patient or shape (N,) for a
    cohort; ``sources`` is (Ns,) or (N, Ns) accordingly.
    """

    xi: np.ndarray
    tau: np.ndarray
    sources: np.ndarray

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float)
        self.sources = np.asarray(self.sources, dtype=float)

    def __len__(self):
        return self.xi.size

    def patient(self, i: int) -> "RandomEffects":
        return RandomEffects(self.xi[i], self.tau[i], self.sources[i])

    def copy(self) -> "RandomEffects":
        return RandomEffects(self.xi.copy(), self.tau.copy(), self.sources.copy())

    def take(self, index) -> "RandomEffects":
        return RandomEffects(self.xi[index], self.tau[index], self.sources[index])


def orthonormal_basis(v0) -> np.ndarray:
    """Orthonormal basis of the hyperplane orthogonal to ``v0`` (shape K x K-1).

    Built from the Householder reflector sending v0/|v0| onto the first
    canonical axis; the remaining columns of the reflector are the basis.
    """
    v = np.asarray(v0, dtype=float)
    norm = np.linalg.norm(v)
    if not norm > 0 or not np.all(np.isfinite(v)):
        raise ValidationError("v0 must be a finite non-zero vector")
    u = v / norm
    # sign choice avoids cancellation when u is close to e1
    sign = 1.0 if u[0] >= 0 else -1.0
    u = u.copy()
    u[0] += sign
    H = np.eye(v.size) - 2.0 * np.outer(u, u) / (u @ u)
    return H[:, 1:]


@dataclass(frozen=True)
class Geometry:
    basis: np.ndarray
    mixing: np.ndarray

    @classmethod
    def from_parameters(cls, v0, beta) -> "Geometry":
        B = orthonormal_basis(v0)
        beta = np.atleast_2d(np.asarray(beta, dtype=float))
        if beta.shape[0] != B.shape[1]:
            raise ValidationError(f"beta must have {B.shape[1]} rows, got {beta.shape[0]}")
        return cls(basis=B, mixing=B @ beta)

    @classmethod
    def from_effects(cls, fe: FixedEffects) -> "Geometry":
        return cls.from_parameters(fe.v0, fe.beta)


def latent_age(xi, tau, t0, t):
    return np.exp(xi) * (np.asarray(t, dtype=float) - tau) + t0


def space_shift(geometry: Geometry, sources) -> np.ndarray:
    s = np.asarray(sources, dtype=float)
    if s.shape[-1] != geometry.mixing.shape[1]:
        raise ValidationError(
            f"expected {geometry.mixing.shape[1]} sources, got {s.shape[-1]}"
        )
    return s @ geometry.mixing.T


def survival_shift(zeta, sources) -> np.ndarray:
    zeta = np.atleast_2d(np.asarray(zeta, dtype=float))
    s = np.asarray(sources, dtype=float)
    if s.shape[-1] != zeta.shape[1]:
        raise ValidationError(f"expected {zeta.shape[1]} sources, got {s.shape[-1]}")
    return s @ zeta.T


def _logistic(g, v0, x):
    # direct form keeps gamma = 1/(1+g) exact at x = 0; overflow gives the 0 limit
    a = (1.0 + g) ** 2 / g
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + g * np.exp(-a * x))


def population_trajectory(fe: FixedEffects, k, t):
    t = np.asarray(t, dtype=float)
    return _logistic(fe.g[k], fe.v0[k], fe.v0[k] * (t - fe.t0))


def individual_trajectory(fe: FixedEffects, re: RandomEffects, geometry: Geometry, k=None, t=0.0):
    """Individual logistic curve(s).

    With ``k=None`` returns an array of shape ``t.shape + (K,)``.
    """
    t = np.asarray(t, dtype=float)
    w = space_shift(geometry, re.sources)
    psi = latent_age(re.xi, re.tau, fe.t0, t)
    if k is None:
        x = fe.v0 * (psi[..., None] - fe.t0) + w
        return _logistic(fe.g, fe.v0, x)
    return _logistic(fe.g[k], fe.v0[k], fe.v0[k] * (psi - fe.t0) + w[k])


def _scaled_elapsed(fe, re, t):
    return np.exp(re.xi) * (np.asarray(t, dtype=float) - re.tau)


def hazard(fe: FixedEffects, re: RandomEffects, u, l, t):
    elapsed = _scaled_elapsed(fe, re, t)
    if np.any(elapsed <= 0):
        raise DomainError("hazard is only defined after the individual reference time")
    nu, rho = fe.nu[l], fe.rho[l]
    return rho * np.exp(re.xi) / nu * (elapsed / nu) ** (rho - 1.0) * np.exp(np.asarray(u)[l])


def cumulative_hazard(fe: FixedEffects, re: RandomEffects, u, l, t):
    elapsed = np.maximum(_scaled_elapsed(fe, re, t), 0.0)
    return (elapsed / fe.nu[l]) ** fe.rho[l] * np.exp(np.asarray(u)[l])


def survival(fe: FixedEffects, re: RandomEffects, u, l, t):
    """Cause-specific survival; equals 1 before the individual reference time."""
    return np.exp(-cumulative_hazard(fe, re, u, l, t))


def overall_survival(fe: FixedEffects, re: RandomEffects, u, t):
    total = sum(cumulative_hazard(fe, re, u, q, t) for q in range(fe.n_events))
    return np.exp(-total)


def _cif_scalar(fe, re, u, l, t, epsabs):
    tau = float(re.tau)
    if t <= tau:
        return 0.0
    speed = float(np.exp(re.xi))
    nu, rho = fe.nu, fe.rho
    eu = np.exp(np.asarray(u, dtype=float))

    # integrate over elapsed latent time r = e^xi (x - tau); dx = dr / e^xi
    def integrand(r):
        if r <= 0:
            return 0.0
        h = rho[l] / nu[l] * (r / nu[l]) ** (rho[l] - 1.0) * eu[l]
        return h * np.exp(-np.sum((r / nu) ** rho * eu))

    upper = speed * (t - tau)
    value, _ = integrate.quad(integrand, 0.0, upper, epsabs=epsabs, epsrel=1e-10, limit=200)
    return value


def cif(fe: FixedEffects, re: RandomEffects, u, l, t, epsabs: float = 1e-8):
    """Cumulative incidence of event ``l`` in presence of the competing events.

    Computed by adaptive quadrature of h_l(x) prod_q S_q(x) on [tau, t].
    """
    t_arr = np.asarray(t, dtype=float)
    out = np.array([_cif_scalar(fe, re, u, l, float(x), epsabs) for x in t_arr.ravel()])
    out = np.clip(out, 0.0, 1.0)
    return out.reshape(t_arr.shape) if t_arr.ndim else float(out[0])


@dataclass
class PatientRecord:
    id: str
    times: np.ndarray
    values: np.ndarray
    event_time: float
    event_code: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values.reshape(self.times.size, -1)
        self.event_time = float(self.event_time)
        self.event_code = int(self.event_code)

    @property
    def n_visits(self) -> int:
        return self.times.size


@dataclass
class Dataset:
    """A cohort: per-patient visits, outcome values and a single event record."""

    patients: list
    n_outcomes: int | None = None
    _flat: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.patients = list(self.patients)
        if self.n_outcomes is None:
            widths = {p.values.shape[1] for p in self.patients if p.n_visits}
            if len(widths) != 1:
                raise ValidationError("cannot infer the number of outcomes")
            self.n_outcomes = widths.pop()
        for p in self.patients:
            _check_patient(p, self.n_outcomes)

    def __len__(self):
        return len(self.patients)

    @property
    def n_patients(self) -> int:
        return len(self.patients)

    @property
    def n_events(self) -> int:
        return max((p.event_code for p in self.patients), default=0)

    def require_min_visits(self, n: int = 2) -> None:
        for p in self.patients:
            if p.n_visits < n:
                raise ValidationError(f"patient {p.id} has {p.n_visits} visit(s); at least {n} required")

    def subset(self, index) -> "Dataset":
        return Dataset([self.patients[i] for i in index], n_outcomes=self.n_outcomes)

    def flat(self) -> dict:
        """Concatenated arrays ordered by patient index (cached)."""
        if self._flat is None:
            counts = np.array([p.n_visits for p in self.patients], dtype=int)
            K = self.n_outcomes
            self._flat = {
                "counts": counts,
                "starts": np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(int),
                "patient": np.repeat(np.arange(len(self.patients)), counts),
                "times": np.concatenate([p.times for p in self.patients]) if counts.sum() else np.zeros(0),
                "values": (np.concatenate([p.values for p in self.patients], axis=0)
                           if counts.sum() else np.zeros((0, K))),
                "event_time": np.array([p.event_time for p in self.patients]),
                "event_code": np.array([p.event_code for p in self.patients], dtype=int),
            }
        return self._flat


def _check_patient(p: PatientRecord, K: int) -> None:
    if p.n_visits and p.values.shape != (p.n_visits, K):
        raise ValidationError(f"patient {p.id}: expected {K} outcome values per visit")
    if p.n_visits > 1 and not np.all(np.diff(p.times) > 0):
        raise ValidationError(f"patient {p.id}: visit times must be strictly increasing")
    if p.n_visits and not np.all((p.values > 0) & (p.values < 1)):
        raise ValidationError(f"patient {p.id}: outcome values must lie strictly inside (0, 1)")
    if not p.event_time > 0:
        raise ValidationError(f"patient {p.id}: event time must be positive")
    if p.event_code < 0:
        raise ValidationError(f"patient {p.id}: event code must be non-negative")
