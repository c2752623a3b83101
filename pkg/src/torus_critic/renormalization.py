"""Renormalization operator for torus existence: eliminate the non-resonant
modes by canonical Lie transforms, then reindex and rescale.

A step maps H to the eliminated Hamiltonian composed with the change of
coordinates (A, phi) -> (N^T A, N^{-1} phi) and the time/action rescalings
that restore the family normal form (unit coefficient on (Omega.A)^2/2, zero
average of f^(2), unit Omega).  Iterating classifies H: norms shrinking to
zero mean the invariant torus of frequency omega exists, norms blowing past a
large threshold mean it does not.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ft_algebra import (
    BracketEngine,
    FTHamiltonian,
    FrequencyData,
    GeneratingFunction,
    TermSet,
    mode_grid,
    norm,
    reindex_modes,
)

__all__ = [
    "RenormOutcome",
    "LieTransformError",
    "EliminationError",
    "SingularCountertermError",
    "DegenerateTwistError",
    "is_nonresonant",
    "nonresonant_mask",
    "build_generating_function",
    "lie_transform_time1",
    "lie_transform_adaptive",
    "eliminate",
    "rescale",
    "renorm_step",
    "iterate_renorm",
]

DEFAULT_SERIES_TOL = 1e-15
DEFAULT_SERIES_MAX = 60
DEFAULT_ABSTOL = 1e-12
DEFAULT_RELTOL = 1e-10
DEFAULT_MIN_STEP = 2.0 ** -10
DEFAULT_ELIM_TOL = 1e-12
DEFAULT_MAX_KAM = 30
DEFAULT_DIV_THRESHOLD = 1e10
DEFAULT_CONV_THRESHOLD = 1e-12


class LieTransformError(RuntimeError):
    """The exponential series for a Lie transform did not converge."""

    def __init__(self, reason: str):
        super().__init__(f"Lie transform failed: {reason}")
        self.reason = reason


class EliminationError(RuntimeError):
    """The KAM-style elimination loop did not reach its tolerance."""

    def __init__(self, reason: str):
        super().__init__(f"elimination failed: {reason}")
        self.reason = reason


class SingularCountertermError(ZeroDivisionError):
    """The shift constant a is undefined: vanishing twist with a nonzero
    linear average."""


class DegenerateTwistError(ZeroDivisionError):
    """1 + 2<f^(2)> vanished, the rescaling is singular."""


@dataclass
class RenormOutcome:
    status: str  # 'converged' | 'diverged' | 'indeterminate'
    iterations: int
    final_norm: float
    omega_history: list = field(default_factory=list)
    elimination_failed: bool = False

    def to_dict(self, include_history: bool = False) -> dict:
        rec = {
            "status": self.status,
            "iterations": self.iterations,
            "final_norm": self.final_norm,
        }
        if self.elimination_failed:
            rec["elimination_failed"] = True
        if include_history:
            rec["omega_history"] = [list(map(float, om)) for om in self.omega_history]
        return rec


# ---------------------------------------------------------------------------
# resonance classification
# ---------------------------------------------------------------------------

def is_nonresonant(freq: FrequencyData, nu, j: int) -> bool:
    """Cone condition |omega.nu| > sigma*|nu|_2 + j*kappa."""
    if j < 0:
        raise ValueError("Taylor order j must be >= 0")
    nu = np.asarray(nu, dtype=float)
    return bool(abs(freq.omega @ nu) > freq.sigma * np.linalg.norm(nu) + j * freq.kappa)


def nonresonant_mask(freq: FrequencyData, L: int, J: int) -> np.ndarray:
    """Boolean (J+1, modes) tensor of the non-resonant set."""
    nu = mode_grid(freq.d, L)
    om_nu = np.abs(np.einsum("i,i...->...", freq.omega, nu))
    nn = np.sqrt((nu.astype(float) ** 2).sum(axis=0))
    j = np.arange(J + 1).reshape((J + 1,) + (1,) * freq.d)
    return om_nu > freq.sigma * nn + j * freq.kappa


def nonresonant_norm(H: FTHamiltonian, freq: FrequencyData) -> float:
    """l1 norm of the non-resonant part of H."""
    return float(np.abs(H.coeffs[nonresonant_mask(freq, H.L, H.J)]).sum())


# ---------------------------------------------------------------------------
# generating function
# ---------------------------------------------------------------------------

def _full_quadratic_mean(H: FTHamiltonian) -> float:
    """Average of the full quadratic coefficient, 1/2 + <f^(2)>."""
    if H.J >= 2:
        return 0.5 + H.mean(2).real
    return 0.5


def build_generating_function(H: FTHamiltonian, freq: FrequencyData) -> GeneratingFunction:
    """S killing the order-epsilon non-resonant modes of H.

    In Fourier space, with c2 the average of the full quadratic coefficient,

        Y^(0)_nu = f^(0)_nu / (omega.nu),
        Y^(j)_nu = (f^(j)_nu - 2 c2 (Omega.nu) Y^(j-1)_nu) / (omega.nu)

    on non-resonant (nu, j), zero elsewhere, and a = -<f^(1)> / (2 |Omega|^2 c2)
    removes the average of the linear term.
    """
    mask = nonresonant_mask(freq, H.L, H.J)
    nu = mode_grid(H.d, H.L)
    om_nu = np.einsum("i,i...->...", freq.omega, nu)
    Om_nu = np.einsum("i,i...->...", H.Omega, nu)
    if np.any(mask & (om_nu == 0.0)):
        raise AssertionError("zero divisor on a non-resonant mode")

    c2 = _full_quadratic_mean(H)
    mean1 = H.mean(1).real if H.J >= 1 else 0.0
    if abs(c2) < 1e-14:
        if abs(mean1) > 1e-14:
            raise SingularCountertermError(
                "vanishing quadratic average with nonzero linear average")
        a = 0.0
    else:
        a = -mean1 / (2.0 * float(H.Omega @ H.Omega) * c2)

    Y = np.zeros_like(H.coeffs)
    for j in range(H.J + 1):
        num = H.coeffs[j]
        if j > 0:
            num = num - 2.0 * c2 * Om_nu * Y[j - 1]
        np.divide(num, om_nu, out=Y[j], where=mask[j])
    return GeneratingFunction(Y=Y, a=a, Omega=H.Omega.copy())


# ---------------------------------------------------------------------------
# Lie transforms
# ---------------------------------------------------------------------------

def _exp_series(H: FTHamiltonian, engine: BracketEngine, eps: float,
                series_tol: float, series_max: int) -> FTHamiltonian:
    """exp(eps) transform of H as the alternating series sum (-eps)^k L_S^k H / k!."""
    acc = H.coeffs.copy()
    term = TermSet.of(H)
    prev = np.inf
    growing = 0
    for k in range(1, series_max + 1):
        term = engine.apply(term, scale=-eps / k)
        acc += term.coeffs
        tn = norm(term)
        if not np.isfinite(tn):
            raise LieTransformError("diverged")
        if tn <= series_tol:
            center = (0,) + (H.L,) * H.d
            acc[center] = 0.0
            return H.with_coeffs(acc)
        if tn > prev:
            growing += 1
            if growing >= 5:
                raise LieTransformError("diverged")
        else:
            growing = 0
        prev = tn
    raise LieTransformError("max_terms")


def lie_transform_time1(H: FTHamiltonian, S: GeneratingFunction,
                        series_tol: float = DEFAULT_SERIES_TOL,
                        series_max: int = DEFAULT_SERIES_MAX) -> FTHamiltonian:
    """Time-1 transform by direct summation of the exponential series."""
    engine = BracketEngine(S, H.d, H.L, H.J)
    return _exp_series(H, engine, 1.0, series_tol, series_max)


def lie_transform_adaptive(H: FTHamiltonian, S: GeneratingFunction,
                           eps0: float = 1.0,
                           min_step: float = DEFAULT_MIN_STEP,
                           abstol: float = DEFAULT_ABSTOL,
                           reltol: float = DEFAULT_RELTOL,
                           series_tol: float = DEFAULT_SERIES_TOL,
                           series_max: int = DEFAULT_SERIES_MAX,
                           stats: dict | None = None) -> FTHamiltonian:
    """Adaptive-step transform: compare one step of size eps against two half
    steps, accept the blend 0.75*res1 + 0.25*res2 when they agree to
    abstol + reltol*|res1|, otherwise recurse on the half steps.  Steps below
    min_step are accepted unconditionally (counted in stats['underflow'])."""
    if not (0.0 < min_step <= eps0 <= 1.0):
        raise ValueError("need 0 < min_step <= eps0 <= 1")
    engine = BracketEngine(S, H.d, H.L, H.J)

    def go(Hc: FTHamiltonian, eps: float) -> FTHamiltonian:
        if eps < min_step:
            if stats is not None:
                stats["underflow"] = stats.get("underflow", 0) + 1
            return _exp_series(Hc, engine, eps, series_tol, series_max)
        try:
            res1 = _exp_series(Hc, engine, eps, series_tol, series_max)
            res2 = _exp_series(
                _exp_series(Hc, engine, 0.5 * eps, series_tol, series_max),
                engine, 0.5 * eps, series_tol, series_max)
        except LieTransformError:
            return go(go(Hc, 0.5 * eps), 0.5 * eps)
        if norm(res1.coeffs - res2.coeffs) < abstol + reltol * norm(res1):
            return res1.with_coeffs(0.75 * res1.coeffs + 0.25 * res2.coeffs)
        return go(go(Hc, 0.5 * eps), 0.5 * eps)

    return go(H, eps0)


def _apply_lie(H, S, lie_variant, lie_opts, stats):
    if lie_variant == "time1":
        opts = {k: v for k, v in lie_opts.items() if k in ("series_tol", "series_max")}
        return lie_transform_time1(H, S, **opts)
    if lie_variant == "adaptive":
        return lie_transform_adaptive(H, S, stats=stats, **lie_opts)
    raise ValueError(f"unknown Lie variant {lie_variant!r}")


# ---------------------------------------------------------------------------
# elimination, rescaling, the full step, and the iteration driver
# ---------------------------------------------------------------------------

def eliminate(H: FTHamiltonian, freq: FrequencyData, lie_variant: str = "adaptive",
              tol: float = DEFAULT_ELIM_TOL, max_kam: int = DEFAULT_MAX_KAM,
              stats: dict | None = None, **lie_opts) -> FTHamiltonian:
    """Iterate H <- Lie(H, S(H)) until the non-resonant l1 norm drops below tol.

    Failures (series divergence, no convergence within max_kam) raise and are
    treated upstream as divergence evidence.
    """
    history = []
    for _ in range(max_kam + 1):
        res = nonresonant_norm(H, freq)
        history.append(res)
        if stats is not None:
            stats["elimination_history"] = history
        if not np.isfinite(res):
            raise EliminationError("nonfinite")
        if res < tol:
            return H
        if res > 1e15:
            raise EliminationError("blowup")
        S = build_generating_function(H, freq)
        H = _apply_lie(H, S, lie_variant, lie_opts, stats)
    raise EliminationError("max_kam")


def rescale(H: FTHamiltonian, freq: FrequencyData) -> FTHamiltonian:
    """Reindex modes by N and rescale time/actions back to the normal form.

    With mu = 1/theta1 and lambda = mu |N Omega|^2 (1 + 2<f^(2)>), coefficients
    map as f'^(j) = mu lambda (|N Omega|/lambda)^j f^(j) o N^{-1}; the average
    of the quadratic coefficient is absorbed so <f'^(2)> = 0 exactly, and
    Omega' = N Omega / |N Omega|.
    """
    c2m = H.mean(2).real if H.J >= 2 else 0.0
    twist = 1.0 + 2.0 * c2m
    if abs(twist) < 1e-12:
        raise DegenerateTwistError("1 + 2<f^(2)> is numerically zero")
    mu = 1.0 / freq.theta1
    NOm = freq.N @ H.Omega
    nrm = float(np.linalg.norm(NOm))
    lam = mu * nrm ** 2 * twist
    Hr = reindex_modes(H, freq.N)
    jfac = mu * lam * (nrm / lam) ** np.arange(H.J + 1)
    coeffs = Hr.coeffs * jfac.reshape((H.J + 1,) + (1,) * H.d)
    if H.J >= 2:
        coeffs[(2,) + (H.L,) * H.d] = 0.0
    return FTHamiltonian(omega=H.omega, Omega=NOm / nrm, coeffs=coeffs)


def renorm_step(H: FTHamiltonian, freq: FrequencyData, lie_variant: str = "adaptive",
                tol: float = DEFAULT_ELIM_TOL, max_kam: int = DEFAULT_MAX_KAM,
                stats: dict | None = None, **lie_opts) -> FTHamiltonian:
    """One renormalization step: eliminate, then rescale."""
    H = eliminate(H, freq, lie_variant, tol=tol, max_kam=max_kam, stats=stats, **lie_opts)
    return rescale(H, freq)


def iterate_renorm(H: FTHamiltonian, freq: FrequencyData, lie_variant: str = "adaptive",
                   max_iter: int = 100,
                   div_threshold: float = DEFAULT_DIV_THRESHOLD,
                   conv_threshold: float = DEFAULT_CONV_THRESHOLD,
                   keep_omega_history: bool = True,
                   stats: dict | None = None, **step_opts) -> RenormOutcome:
    """Drive renorm_step until the perturbation norm crosses a threshold.

    Elimination failure is reported as divergence with a distinguishing flag;
    reaching max_iter without a verdict yields 'indeterminate'.
    """
    if not div_threshold > 100 * conv_threshold:
        raise ValueError("div_threshold must be far above conv_threshold")
    history = [np.array(H.Omega, dtype=float)] if keep_omega_history else []
    nn = norm(H)
    if nn < conv_threshold:
        return RenormOutcome("converged", 0, nn, history)
    for n in range(1, max_iter + 1):
        try:
            H = renorm_step(H, freq, lie_variant, stats=stats, **step_opts)
        except (LieTransformError, EliminationError,
                SingularCountertermError, DegenerateTwistError):
            return RenormOutcome("diverged", n, nn, history, elimination_failed=True)
        nn = norm(H)
        if keep_omega_history:
            history.append(np.array(H.Omega, dtype=float))
        if not np.isfinite(nn) or nn > div_threshold:
            return RenormOutcome("diverged", n, nn, history)
        if nn < conv_threshold:
            return RenormOutcome("converged", n, nn, history)
    return RenormOutcome("indeterminate", max_iter, nn, history)
