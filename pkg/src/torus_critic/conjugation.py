"""Newton iteration in configuration space for the conjugation function h.

The invariant torus phi = psi + Omega h(psi) of the Hamiltonian
omega.A + (Omega.A)^2/2 + V(phi) solves

    (omega.d/dpsi)^2 h + Omega.dV/dphi(psi + Omega h(psi)) = 0,

with the gauge <h> = 0.  A counterterm lambda is carried so that every Newton
linearization is solvable; it must return to zero at a true solution.  Each
step solves two cohomological equations by mode division and costs a handful
of FFTs on the (Lg)^d collocation grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft as sfft

__all__ = [
    "PotentialSpec",
    "ConjugationState",
    "NewtonResult",
    "CohomologicalError",
    "TorusDegenerateError",
    "NewtonSolver",
    "initial_guess",
    "residual",
    "solve_cohomological",
    "newton_step",
    "run_newton",
    "verify_conjugacy",
]

DEFAULT_ETA = 1e-10
DEFAULT_MAX_NEWTON = 50
DEFAULT_MODE_FLOOR = 1e-13
DEFAULT_TAIL_FRAC = 0.125
DEFAULT_TAIL_TOL = 1e-8
DEFAULT_BLOWUP = 1e2

_CHUNK_BYTES = 1 << 27  # forcing evaluation slab size


class CohomologicalError(ValueError):
    """Right-hand side of a cohomological equation has a nonzero average."""


class TorusDegenerateError(RuntimeError):
    """l(psi) = 1 + Omega.dh/dpsi lost its sign margin on the grid."""


@dataclass(eq=False)
class PotentialSpec:
    """Finite cosine potential V(phi) = sum amplitude * cos(nu.phi)."""

    Omega: np.ndarray
    modes: list  # (nu: int d-vector, amplitude: float)

    def __post_init__(self):
        self.Omega = np.asarray(self.Omega, dtype=float)
        if abs(np.linalg.norm(self.Omega) - 1.0) > 1e-12:
            raise ValueError("Omega must be a unit vector")
        cleaned = []
        for nu, amp in self.modes:
            nu = np.asarray(nu, dtype=int)
            if not nu.any():
                raise ValueError("potential modes must have nu != 0")
            cleaned.append((nu, float(amp)))
        self.modes = cleaned

    @property
    def d(self) -> int:
        return self.Omega.size

    def check_nonresonant(self, omega) -> None:
        omega = np.asarray(omega, dtype=float)
        for nu, _ in self.modes:
            if abs(omega @ nu) < 1e-12:
                raise ValueError(f"potential mode {nu} is resonant with omega")

    def forcing(self, phi: np.ndarray) -> np.ndarray:
        """Omega.dV/dphi evaluated at the (d, ...) stack of angles."""
        out = np.zeros(phi.shape[1:])
        for nu, amp in self.modes:
            arg = np.einsum("i,i...->...", nu.astype(float), phi)
            out -= amp * float(self.Omega @ nu) * np.sin(arg)
        return out


@dataclass(eq=False)
class ConjugationState:
    h: np.ndarray          # real field on the uniform (Lg,)*d grid
    lambda_c: float
    residual: float        # sup norm of the conjugation defect

    @property
    def d(self) -> int:
        return self.h.ndim

    @property
    def Lg(self) -> int:
        return self.h.shape[0]


@dataclass
class NewtonResult:
    converged: bool
    state: ConjugationState
    iterations: int
    reason: str | None = None
    history: list = field(default_factory=list)  # dicts: n, delta, residual, Lg

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("n,delta_sup,residual_sup,Lg\n")
            for rec in self.history:
                fh.write(f"{rec['n']},{rec['delta']:.6e},{rec['residual']:.6e},{rec['Lg']}\n")


def save_state(state: ConjugationState, path) -> None:
    """Spectral record of a converged state (binary .npz)."""
    np.savez_compressed(path, h_hat=sfft.fftn(state.h) / state.h.size,
                        lambda_c=state.lambda_c, residual=state.residual,
                        Lg=state.Lg, d=state.d)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

class NewtonSolver:
    """Owns the grid, the spectral multipliers, and one forcing callable.

    The forcing callable receives a (d, ...) stack of angle slabs and returns
    Omega.dV/dphi there; it is evaluated in row blocks to bound memory.
    """

    def __init__(self, forcing, omega, Omega, Lg: int,
                 mode_floor: float = DEFAULT_MODE_FLOOR,
                 min_l: float = 1e-6):
        if Lg & (Lg - 1):
            raise ValueError("Lg must be a power of two")
        self.forcing = forcing
        self.omega = np.asarray(omega, dtype=float)
        self.Omega = np.asarray(Omega, dtype=float)
        self.d = self.omega.size
        self.n = int(Lg)
        self.mode_floor = float(mode_floor)
        self.min_l = float(min_l)
        n, d = self.n, self.d
        self.shape = (n,) * d
        self.psi = [np.linspace(0.0, 2.0 * np.pi, n, endpoint=False) for _ in range(d)]
        modes = [sfft.fftfreq(n, d=1.0 / n) for _ in range(d - 1)]
        modes.append(np.arange(n // 2 + 1, dtype=float))
        self.om_nu = self._broadcast_dot(self.omega, modes)
        self.Om_nu = self._broadcast_dot(self.Omega, modes)
        nz = self.om_nu != 0.0
        self.inv_om = np.zeros_like(self.om_nu)
        np.divide(1.0, self.om_nu, out=self.inv_om, where=nz)

    def _broadcast_dot(self, vec, modes) -> np.ndarray:
        out = np.zeros((self.n,) * (self.d - 1) + (self.n // 2 + 1,))
        for ax, m in enumerate(modes):
            shape = [1] * self.d
            shape[ax] = m.size
            out += vec[ax] * m.reshape(shape)
        return out

    # -- transforms ---------------------------------------------------------

    def fft(self, field: np.ndarray) -> np.ndarray:
        return sfft.rfftn(field)

    def ifft(self, spec: np.ndarray, overwrite: bool = False) -> np.ndarray:
        return sfft.irfftn(spec, s=self.shape, overwrite_x=overwrite)

    # -- physics pieces ------------------------------------------------------

    def forcing_on_torus(self, h: np.ndarray) -> np.ndarray:
        """Omega.dV/dphi(psi + Omega h(psi)), evaluated in row blocks."""
        out = np.empty_like(h)
        block = max(1, _CHUNK_BYTES // (8 * (self.d + 2) * int(np.prod(self.shape[1:]))))
        n = self.n
        for i0 in range(0, n, block):
            sl = slice(i0, min(i0 + block, n))
            rows = out[sl].shape
            phi = np.empty((self.d,) + rows)
            for ax in range(self.d):
                shape = [1] * self.d
                shape[ax] = rows[ax] if ax == 0 else self.n
                base = self.psi[ax][sl] if ax == 0 else self.psi[ax]
                phi[ax] = base.reshape(shape)
                phi[ax] += self.Omega[ax] * h[sl]
            out[sl] = self.forcing(phi)
        return out

    def l_field(self, h_hat: np.ndarray) -> np.ndarray:
        return 1.0 + self.ifft(1j * self.Om_nu * h_hat)

    def defect(self, h: np.ndarray, h_hat: np.ndarray, lam: float) -> np.ndarray:
        """(omega.d)^2 h + forcing(psi + Omega h) + lambda."""
        eps = self.ifft(-(self.om_nu ** 2) * h_hat, overwrite=True)
        eps += self.forcing_on_torus(h)
        eps += lam
        return eps

    def solve_cohomological(self, g: np.ndarray, rel_mean_tol: float = 1e-10) -> np.ndarray:
        """Zero-mean W with omega.dW/dpsi = g, by division by i(omega.nu)."""
        sup = float(np.abs(g).max())
        mean = float(g.mean())
        if abs(mean) > rel_mean_tol * max(sup, 1.0):
            raise CohomologicalError(f"rhs mean {mean:.3e} exceeds tolerance")
        spec = self.fft(g)
        spec *= -1j * self.inv_om
        spec[(0,) * self.d] = 0.0
        return self.ifft(spec, overwrite=True)

    def initial_state(self) -> ConjugationState:
        """h0 = -(omega.d)^{-2} forcing(psi), the first-order guess."""
        g = self.forcing_on_torus(np.zeros(self.shape))
        spec = self.fft(g)
        inv_lk = np.zeros_like(self.om_nu)
        np.divide(1.0, self.om_nu ** 2, out=inv_lk, where=self.om_nu != 0.0)
        spec *= inv_lk
        spec[(0,) * self.d] = 0.0
        h = self.ifft(spec, overwrite=True)
        h_hat = self.fft(h)
        res = float(np.abs(self.defect(h, h_hat, 0.0)).max())
        return ConjugationState(h=h, lambda_c=0.0, residual=res)

    def step(self, state: ConjugationState) -> tuple[ConjugationState, float]:
        """One Newton update; returns (new state, sup|Delta|)."""
        h, lam = state.h, state.lambda_c
        h_hat = self.fft(h)
        l = self.l_field(h_hat)
        lmin = float(np.abs(l).min())
        if lmin < self.min_l:
            raise TorusDegenerateError(f"min |l| = {lmin:.3e}")
        eps = self.defect(h, h_hat, lam)
        del h_hat
        leps = l * eps
        delta = -float(leps.mean()) / float(l.mean())
        rhs = leps
        del eps
        rhs += delta * l
        W = self.solve_cohomological(rhs)
        del rhs
        il2 = l ** -2
        Wil2 = W * il2
        W0 = -float(Wil2.mean()) / float(il2.mean())
        rhs2 = Wil2
        del W, Wil2
        rhs2 += W0 * il2
        rhs2 *= -1.0
        del il2
        beta = self.solve_cohomological(rhs2)
        del rhs2
        beta *= l
        bl_mean = float(beta.mean()) / float(l.mean())
        beta -= bl_mean * l
        del l
        delta_sup = float(np.abs(beta).max())
        h = h + beta
        del beta
        lam = lam + delta
        # gauge + small-coefficient floor, applied every step
        h_hat = self.fft(h)
        h_hat[(0,) * self.d] = 0.0
        mx = float(np.abs(h_hat).max())
        if mx > 0.0 and self.mode_floor > 0.0:
            h_hat[np.abs(h_hat) < self.mode_floor * mx] = 0.0
        h = self.ifft(h_hat.copy())
        res = float(np.abs(self.defect(h, h_hat, lam)).max())
        del h_hat
        return ConjugationState(h=h, lambda_c=lam, residual=res), delta_sup

    # -- tail monitoring and spectral resampling -----------------------------

    def tail_fraction(self, h: np.ndarray, tail_frac: float) -> float:
        """l1 mass fraction of the outer tail_frac band of the spectrum."""
        spec = self.fft(h)
        n, d = self.n, self.d
        cut = (1.0 - tail_frac) * (n // 2)
        band = np.zeros(spec.shape, dtype=bool)
        for ax in range(d):
            m = np.abs(sfft.fftfreq(n, d=1.0 / n)) if ax < d - 1 else np.arange(n // 2 + 1, dtype=float)
            shape = [1] * d
            shape[ax] = m.size
            band |= m.reshape(shape) >= cut
        w = np.ones(spec.shape[-1])
        w[1:] = 2.0
        if n % 2 == 0:
            w[-1] = 1.0
        mags = np.abs(spec) * w
        total = float(mags.sum())
        return float(mags[band].sum()) / total if total > 0.0 else 0.0


def resample_double(h: np.ndarray) -> np.ndarray:
    """Trigonometric interpolation of h onto the doubled grid."""
    d = h.ndim
    n = h.shape[0]
    spec = sfft.fftshift(sfft.fftn(h))
    pad = d * ((n // 2, n // 2),)
    spec = np.pad(spec, pad)
    return sfft.ifftn(sfft.ifftshift(spec)).real * (2 ** d)


# ---------------------------------------------------------------------------
# module-level operations (thin wrappers over the solver)
# ---------------------------------------------------------------------------

def _solver_for(V: PotentialSpec, omega, Lg: int,
                mode_floor: float = DEFAULT_MODE_FLOOR) -> NewtonSolver:
    V.check_nonresonant(omega)
    return NewtonSolver(V.forcing, omega, V.Omega, Lg, mode_floor=mode_floor)


def initial_guess(V: PotentialSpec, omega, Lg: int) -> ConjugationState:
    """First-order guess h0 = -(omega.d)^{-2} Omega.dV/dphi, lambda = 0."""
    return _solver_for(V, omega, Lg).initial_state()


def residual(state: ConjugationState, V: PotentialSpec, omega):
    """(defect field eps(psi), l(psi) = 1 + Omega.dh/dpsi)."""
    solver = _solver_for(V, omega, state.Lg)
    h_hat = solver.fft(state.h)
    return solver.defect(state.h, h_hat, state.lambda_c), solver.l_field(h_hat)


def solve_cohomological(g: np.ndarray, omega, mean_tol: float = 1e-12) -> np.ndarray:
    """Zero-mean W with omega.dW/dpsi = g for a zero-mean field g."""
    omega = np.asarray(omega, dtype=float)
    if abs(float(np.mean(g))) > mean_tol * max(1.0, float(np.abs(g).max())):
        raise CohomologicalError("nonzero-mean right-hand side")
    n = g.shape[0]
    solver = NewtonSolver(lambda phi: np.zeros(phi.shape[1:]), omega,
                          np.eye(1, omega.size)[0], n)
    return solver.solve_cohomological(g, rel_mean_tol=np.inf)


def newton_step(state: ConjugationState, V: PotentialSpec, omega,
                mode_floor: float = DEFAULT_MODE_FLOOR) -> ConjugationState:
    """One Newton update of (h, lambda)."""
    solver = _solver_for(V, omega, state.Lg, mode_floor=mode_floor)
    new, _ = solver.step(state)
    return new


def run_newton(V: PotentialSpec, omega, Lg: int,
               eta: float = DEFAULT_ETA,
               max_newton: int = DEFAULT_MAX_NEWTON,
               tail_frac: float = DEFAULT_TAIL_FRAC,
               mode_floor: float = DEFAULT_MODE_FLOOR,
               Lg_max: int | None = None,
               tail_tol: float = DEFAULT_TAIL_TOL,
               blowup: float = DEFAULT_BLOWUP,
               forcing=None, Omega=None) -> NewtonResult:
    """Newton iteration from the first-order guess.

    Converges when sup|Delta| <= eta and the conjugation certificate holds
    (final defect and counterterm both below 10*eta).  The spectral tail is
    monitored every step: when the outer band holds more than tail_tol of the
    l1 mass the grid is doubled (up to Lg_max, default = Lg).

    A custom forcing callable (with its Omega) may replace the potential.
    """
    if forcing is None:
        V.check_nonresonant(omega)
        forcing, Omega = V.forcing, V.Omega
    Lg_max = Lg if Lg_max is None else Lg_max
    solver = NewtonSolver(forcing, omega, Omega, Lg, mode_floor=mode_floor)
    state = solver.initial_state()
    history = []
    if state.residual <= eta:
        return NewtonResult(True, state, 0, None, history)
    for n in range(1, max_newton + 1):
        try:
            state, delta_sup = solver.step(state)
        except TorusDegenerateError:
            return NewtonResult(False, state, n, "torus-degenerate", history)
        history.append({"n": n, "delta": delta_sup, "residual": state.residual,
                        "Lg": solver.n})
        if not np.isfinite(state.residual) or state.residual > blowup:
            return NewtonResult(False, state, n, "residual-blowup", history)
        if delta_sup <= eta:
            if abs(state.lambda_c) > 10.0 * eta or state.residual > 10.0 * eta:
                return NewtonResult(False, state, n, "counterterm-nonzero", history)
            return NewtonResult(True, state, n, None, history)
        if solver.tail_fraction(state.h, tail_frac) > tail_tol:
            if solver.n >= Lg_max:
                return NewtonResult(False, state, n, "grid-exhausted", history)
            h2 = resample_double(state.h)
            solver = NewtonSolver(forcing, omega, Omega, 2 * solver.n,
                                  mode_floor=mode_floor)
            h_hat = solver.fft(h2)
            res = float(np.abs(solver.defect(h2, h_hat, state.lambda_c)).max())
            state = ConjugationState(h=h2, lambda_c=state.lambda_c, residual=res)
    return NewtonResult(False, state, max_newton, "max-iterations", history)


# ---------------------------------------------------------------------------
# dynamical certificate
# ---------------------------------------------------------------------------

def spectral_interp(h: np.ndarray, psi_points: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric interpolant of h at (m, d) points."""
    d = h.ndim
    n = h.shape[0]
    spec = sfft.fftn(h) / h.size
    keep = np.abs(spec) > 1e-16 * max(1.0, float(np.abs(spec).max()))
    idx = np.argwhere(keep)
    nu = np.where(idx > n // 2, idx - n, idx).astype(float)
    coefs = spec[keep]
    phases = np.exp(1j * psi_points @ nu.T)
    return (phases @ coefs).real


def verify_conjugacy(state: ConjugationState, V: PotentialSpec, omega,
                     n_points: int = 20, tau: float = 1.0,
                     integ_tol: float = 1e-12, seed: int = 7) -> float:
    """Max angle defect of the parametrized torus pushed through the flow.

    Integrates Hamilton's equations from n_points torus samples over time tau
    and compares the angles with the parametrization at psi + omega*tau.
    Returns the sup distance (radians, wrapped).
    """
    from scipy.integrate import solve_ivp

    omega = np.asarray(omega, dtype=float)
    Om = V.Omega
    d = omega.size
    rng = np.random.default_rng(seed)
    psi0 = rng.uniform(0.0, 2.0 * np.pi, size=(n_points, d))

    n = state.Lg
    spec = sfft.fftn(state.h) / state.h.size

    def h_and_zdot(psi_pts):
        hv = spectral_interp(state.h, psi_pts)
        # omega.dh/dpsi via spectral differentiation
        keep = np.abs(spec) > 1e-16 * max(1.0, float(np.abs(spec).max()))
        idx = np.argwhere(keep)
        nu = np.where(idx > n // 2, idx - n, idx).astype(float)
        coefs = spec[keep] * (1j * (nu @ omega))
        phases = np.exp(1j * psi_pts @ nu.T)
        return hv, (phases @ coefs).real

    h0, z0 = h_and_zdot(psi0)
    phi0 = psi0 + Om[None, :] * h0[:, None]
    A0 = Om[None, :] * z0[:, None]

    def rhs(t, y):
        phi, A = y[:d], y[d:]
        dphi = omega + (Om @ A) * Om
        dA = np.zeros(d)
        for nu_m, amp in V.modes:
            # A' = -dV/dphi = +amp * sin(nu.phi) * nu for cosine modes
            dA += amp * np.sin(float(nu_m @ phi)) * nu_m
        return np.concatenate([dphi, dA])

    worst = 0.0
    for i in range(n_points):
        sol = solve_ivp(rhs, (0.0, tau), np.concatenate([phi0[i], A0[i]]),
                        method="DOP853", rtol=integ_tol, atol=integ_tol)
        phi_end = sol.y[:d, -1]
        psi_end = (psi0[i] + omega * tau).reshape(1, d)
        h_end = spectral_interp(state.h, psi_end)[0]
        target = psi_end[0] + Om * h_end
        defect = np.angle(np.exp(1j * (phi_end - target)))
        worst = max(worst, float(np.abs(defect).max()))
    return worst
