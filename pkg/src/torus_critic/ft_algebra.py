"""Truncated Fourier-Taylor algebra for Hamiltonians of the family

    H(A, phi) = omega.A + (Omega.A)^2/2 + sum_{j=0..J} f^(j)(phi) (Omega.A)^j,
    f^(j)(phi) = sum_{|nu|_inf <= L} f^(j)_nu exp(i nu.phi),

with phi on the d-torus (d = 2 or 3).  Coefficients are stored as a dense
complex tensor of shape (J+1, 2L+1, ..., 2L+1), mode axes indexed by nu + L.
Real-valued Hamiltonians have Hermitian tensors, f^(j)_{-nu} = conj(f^(j)_nu).

Products (Poisson brackets) are evaluated by collocation on a grid with at
least 4L+1 points per axis, so no product mode aliases back into the box and
truncation to the (L, J) box is the only approximation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

__all__ = [
    "FrequencyData",
    "FTHamiltonian",
    "TermSet",
    "GeneratingFunction",
    "mode_grid",
    "norm",
    "poisson_bracket",
    "evaluate",
    "evaluate_generating",
    "reindex_modes",
    "hamiltonian_to_dict",
    "hamiltonian_from_dict",
    "save_hamiltonian",
    "load_hamiltonian",
]


@lru_cache(maxsize=None)
def _mode_grid_cached(d: int, L: int) -> np.ndarray:
    axes = np.meshgrid(*(np.arange(-L, L + 1),) * d, indexing="ij")
    return np.ascontiguousarray(np.stack(axes))


def mode_grid(d: int, L: int) -> np.ndarray:
    """Integer mode vectors nu as an array of shape (d, 2L+1, ..., 2L+1)."""
    return _mode_grid_cached(d, L)


def _center(d: int, L: int) -> tuple:
    return (L,) * d


def hermitian_defect(coeffs: np.ndarray) -> float:
    """Max deviation from f_{-nu} = conj(f_nu) over the whole tensor."""
    mode_axes = tuple(range(1, coeffs.ndim))
    flipped = np.flip(coeffs, axis=mode_axes)
    return float(np.abs(coeffs - flipped.conj()).max())


@dataclass(frozen=True, eq=False)
class FrequencyData:
    """Arithmetic of the target frequency vector.

    omega is an eigenvector of the integer unimodular matrix N with eigenvalue
    theta1, |theta1| < 1; the remaining eigenvalues have modulus > 1 (they may
    form a complex pair, so they are stored as complex).  sigma and kappa set
    the resonance cone |omega.nu| > sigma*|nu| + j*kappa.
    """

    omega: np.ndarray
    N: np.ndarray
    theta1: float
    other_eigs: np.ndarray
    sigma: float = 0.6
    kappa: float = 0.1

    @property
    def d(self) -> int:
        return self.omega.size

    @classmethod
    def from_matrix(cls, omega, N, sigma: float = 0.6, kappa: float = 0.1):
        omega = np.asarray(omega, dtype=float)
        N = np.asarray(N)
        if not np.issubdtype(N.dtype, np.integer):
            Ni = np.rint(N).astype(int)
            if np.abs(N - Ni).max() > 1e-12:
                raise ValueError("N must be an integer matrix")
            N = Ni
        det = round(float(np.linalg.det(N)))
        if abs(det) != 1:
            raise ValueError(f"N must be unimodular, det = {det}")
        theta1 = float(N @ omega @ omega / (omega @ omega))
        if np.linalg.norm(N @ omega - theta1 * omega) > 1e-12 * np.linalg.norm(omega):
            raise ValueError("omega is not an eigenvector of N")
        if abs(theta1) >= 1:
            raise ValueError(f"|theta1| = {abs(theta1)} must be < 1")
        eigs = np.linalg.eigvals(N)
        others = np.delete(eigs, np.argmin(np.abs(eigs - theta1)))
        if np.abs(others).min() <= 1:
            raise ValueError("expanding eigenvalues of N must have modulus > 1")
        return cls(omega=omega, N=N, theta1=theta1, other_eigs=others,
                   sigma=sigma, kappa=kappa)


@dataclass(eq=False)
class FTHamiltonian:
    """Hamiltonian of the family, with the omega.A + (Omega.A)^2/2 part implicit.

    coeffs has shape (J+1,) + (2L+1,)*d and holds the explicit perturbation
    f^(j)_nu.  The constant term f^(0)_0 is kept at zero.
    """

    omega: np.ndarray
    Omega: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        self.Omega = np.asarray(self.Omega, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if abs(np.linalg.norm(self.Omega) - 1.0) > 1e-12:
            raise ValueError("Omega must be a unit vector")
        if self.coeffs.ndim != self.d + 1:
            raise ValueError("coeffs must have one Taylor axis plus d mode axes")

    @property
    def d(self) -> int:
        return self.omega.size

    @property
    def L(self) -> int:
        return (self.coeffs.shape[1] - 1) // 2

    @property
    def J(self) -> int:
        return self.coeffs.shape[0] - 1

    @classmethod
    def zeros(cls, omega, Omega, L: int, J: int) -> "FTHamiltonian":
        omega = np.asarray(omega, dtype=float)
        d = omega.size
        coeffs = np.zeros((J + 1,) + (2 * L + 1,) * d, dtype=complex)
        return cls(omega=omega, Omega=np.asarray(Omega, dtype=float), coeffs=coeffs)

    def add_cosine(self, nu, amplitude: float) -> "FTHamiltonian":
        """Add amplitude*cos(nu.phi) to f^(0), returning a new Hamiltonian."""
        nu = np.asarray(nu, dtype=int)
        if np.abs(nu).max() > self.L:
            raise ValueError(f"mode {nu} outside the |nu|_inf <= {self.L} box")
        coeffs = self.coeffs.copy()
        L = self.L
        coeffs[(0,) + tuple(nu + L)] += amplitude / 2.0
        coeffs[(0,) + tuple(-nu + L)] += amplitude / 2.0
        return replace(self, coeffs=coeffs)

    def mean(self, j: int) -> complex:
        """Torus average of f^(j), i.e. the nu = 0 coefficient."""
        return complex(self.coeffs[(j,) + _center(self.d, self.L)])

    def with_coeffs(self, coeffs: np.ndarray) -> "FTHamiltonian":
        return replace(self, coeffs=coeffs)


@dataclass(eq=False)
class TermSet:
    """A sum of terms f^(j)_nu e^{i nu.phi} (Omega.A)^j, optionally augmented
    with the implicit omega.A (when omega is given) and (Omega.A)^2/2 (when
    quad is set) pieces.  Poisson brackets consume and produce these."""

    coeffs: np.ndarray
    Omega: np.ndarray
    omega: np.ndarray | None = None
    quad: bool = False

    @classmethod
    def of(cls, H: "FTHamiltonian") -> "TermSet":
        return cls(coeffs=H.coeffs, Omega=H.Omega, omega=H.omega, quad=True)


@dataclass(eq=False)
class GeneratingFunction:
    """Elimination data S = i * sum_j Y^(j)(phi) (Omega.A)^j + a Omega.phi.

    Y is supported on non-resonant (nu, j) only; i*Y^(j) is real-valued, so Y
    itself is anti-Hermitian, Y^(j)_{-nu} = -conj(Y^(j)_nu).
    """

    Y: np.ndarray
    a: float
    Omega: np.ndarray

    def negated(self) -> "GeneratingFunction":
        return GeneratingFunction(Y=-self.Y, a=-self.a, Omega=self.Omega)


# ---------------------------------------------------------------------------
# collocation kit: exact products of box-truncated Fourier series
# ---------------------------------------------------------------------------

class _GridKit:
    """Transforms between centered mode boxes and real collocation grids.

    The grid has G >= 4L+1 points per axis, so the product of two box series
    is sampled exactly; Hermitian symmetry is enforced structurally by going
    through the half spectrum (irfftn/rfftn).
    """

    def __init__(self, d: int, L: int):
        self.d, self.L = d, L
        self.G = sfft.next_fast_len(4 * L + 1, real=True)
        G, nm = self.G, 2 * L + 1
        self.grid_shape = (G,) * d
        self.half_shape = (G,) * (d - 1) + (G // 2 + 1,)
        head = (np.arange(-L, L + 1)) % G
        self._half_ix = np.ix_(*([head] * (d - 1)), np.arange(L + 1))
        self._scale = float(G ** d)

    def synth(self, boxes: np.ndarray) -> np.ndarray:
        """Batched (B, box) Hermitian mode tensors -> (B, grid) real fields."""
        B = boxes.shape[0]
        half = np.zeros((B,) + self.half_shape, dtype=complex)
        half[(slice(None),) + self._half_ix] = boxes[..., self.L:]
        axes = tuple(range(1, self.d + 1))
        return sfft.irfftn(half, s=self.grid_shape, axes=axes) * self._scale

    def analyze(self, grids: np.ndarray) -> np.ndarray:
        """Batched (B, grid) real fields -> (B, box) mode tensors."""
        axes = tuple(range(1, self.d + 1))
        spec = sfft.rfftn(grids, axes=axes) / self._scale
        B = grids.shape[0]
        nm = 2 * self.L + 1
        out = np.zeros((B,) + (nm,) * self.d, dtype=complex)
        out[..., self.L:] = spec[(slice(None),) + self._half_ix]
        mode_axes = tuple(range(1, self.d + 1))
        mirr = np.flip(out, axis=mode_axes).conj()
        out[..., : self.L] = mirr[..., : self.L]
        return out


@lru_cache(maxsize=None)
def _grid_kit(d: int, L: int) -> _GridKit:
    return _GridKit(d, L)


class BracketEngine:
    """Poisson bracket with a fixed generating function S.

    Caches the collocation grids of the S-dependent factors so that Lie series
    (many brackets against the same S) pay the transforms of S only once.
    """

    def __init__(self, S: GeneratingFunction, d: int, L: int, J: int):
        self.S = S
        self.d, self.L, self.J = d, L, J
        self.kit = _grid_kit(d, L)
        nu = mode_grid(d, L)
        self.Om_nu = np.einsum("i,i...->...", S.Omega, nu)
        self.jw = np.arange(J + 1).reshape((J + 1,) + (1,) * d)
        s = 1j * S.Y
        self._s = s
        stack = np.concatenate([self.jw * s, -1j * self.Om_nu * s])
        grids = self.kit.synth(stack)
        self.d1r = grids[: J + 1]
        self.d2r = grids[J + 1:]
        self.Om2 = float(S.Omega @ S.Omega)

    def apply(self, F: TermSet, scale: float = 1.0) -> TermSet:
        """scale * {F, S} as a plain term set (implicit parts never survive)."""
        J, d, L = self.J, self.d, self.L
        f = F.coeffs
        stack = np.concatenate([-1j * self.Om_nu * f, self.jw * f])
        grids = self.kit.synth(stack)
        c1r, c2r = grids[: J + 1], grids[J + 1:]

        acc = np.zeros((J + 1,) + self.kit.grid_shape)
        for j1 in range(J + 1):
            for j2 in range(max(0, 1 - j1), min(J + 1 - j1, J) + 1):
                jout = j1 + j2 - 1
                acc[jout] += c2r[j1] * self.d2r[j2] - c1r[j1] * self.d1r[j2]
        out = self.kit.analyze(acc)

        a = self.S.a
        if a != 0.0 and J >= 1:
            out[:J] -= a * self.Om2 * (self.jw[1:] * f[1:])
        if F.omega is not None:
            om_nu = np.einsum("i,i...->...", np.asarray(F.omega, float), mode_grid(d, L))
            out += -1j * om_nu * self._s
        if F.quad:
            if J >= 1:
                out[1:] += -1j * self.Om_nu * self._s[:J]
                out[(1,) + _center(d, L)] += -a * self.Om2
        out[(0,) + _center(d, L)] = 0.0
        if scale != 1.0:
            out *= scale
        return TermSet(coeffs=out, Omega=F.Omega, omega=None, quad=False)


def _as_terms(F) -> TermSet:
    if isinstance(F, FTHamiltonian):
        return TermSet.of(F)
    if isinstance(F, TermSet):
        return F
    raise TypeError(f"cannot take a bracket of {type(F).__name__}")


def poisson_bracket(F, S: GeneratingFunction) -> TermSet:
    """{F, S} = dF/dphi . dS/dA - dF/dA . dS/dphi, truncated to F's box.

    F may be an FTHamiltonian (its implicit omega.A and (Omega.A)^2/2 parts are
    included) or a plain TermSet.  Taylor powers above J and modes outside the
    box are dropped; the constant output term is zeroed.
    """
    F = _as_terms(F)
    if F.coeffs.shape != S.Y.shape:
        raise ValueError("dimension mismatch between F and S")
    if not np.allclose(F.Omega, S.Omega, atol=1e-14):
        raise ValueError("F and S must share Omega")
    d = F.coeffs.ndim - 1
    L = (F.coeffs.shape[1] - 1) // 2
    J = F.coeffs.shape[0] - 1
    return BracketEngine(S, d, L, J).apply(F)


# ---------------------------------------------------------------------------
# pointwise oracle and mode reindexing
# ---------------------------------------------------------------------------

def norm(H) -> float:
    """l1 norm of the explicit coefficients (the implicit part is excluded)."""
    coeffs = H.coeffs if hasattr(H, "coeffs") else np.asarray(H)
    return float(np.abs(coeffs).sum())


def _phase(coeffs_shape, d, L, phi):
    nu = mode_grid(d, L)
    return np.exp(1j * np.einsum("i...,i->...", nu, np.asarray(phi, dtype=float)))


def evaluate(H: FTHamiltonian, A, phi) -> float:
    """Pointwise value omega.A + (Omega.A)^2/2 + sum f^(j)_nu e^{i nu.phi} z^j."""
    A = np.asarray(A, dtype=float)
    z = float(H.Omega @ A)
    ph = _phase(H.coeffs.shape, H.d, H.L, phi)
    per_j = np.einsum("j...,...->j", H.coeffs, ph)
    total = np.polynomial.polynomial.polyval(z, per_j)
    return float(H.omega @ A + 0.5 * z * z + total.real)


def evaluate_generating(S: GeneratingFunction, A, phi) -> float:
    """Pointwise value of S = i sum Y^(j)_nu e^{i nu.phi} z^j + a Omega.phi."""
    A = np.asarray(A, dtype=float)
    phi = np.asarray(phi, dtype=float)
    d = S.Y.ndim - 1
    L = (S.Y.shape[1] - 1) // 2
    z = float(S.Omega @ A)
    ph = _phase(S.Y.shape, d, L, phi)
    per_j = np.einsum("j...,...->j", 1j * S.Y, ph)
    total = np.polynomial.polynomial.polyval(z, per_j)
    return float(total.real + S.a * (S.Omega @ phi))


def reindex_modes(H: FTHamiltonian, N) -> FTHamiltonian:
    """Coefficients of phi -> H(A, N^{-1} phi); modes leaving the box are dropped.

    The output mode nu' draws from the input mode N^T nu', which realizes
    evaluate(reindex_modes(H, N), A, phi) == evaluate(H, A, N^{-1} phi) for all
    surviving modes.
    """
    N = np.asarray(N)
    det = round(float(np.linalg.det(N)))
    if abs(det) != 1:
        raise ValueError(f"N must be unimodular, det = {det}")
    N = np.rint(N).astype(int)
    d, L = H.d, H.L
    nu = mode_grid(d, L)
    src = np.einsum("ba,b...->a...", N, nu)
    inside = (np.abs(src) <= L).all(axis=0)
    flat_src = np.ravel_multi_index(tuple(src[:, inside] + L), (2 * L + 1,) * d)
    out = np.zeros_like(H.coeffs)
    nmodes = out[0].size
    out_flat = out.reshape(H.J + 1, nmodes)
    in_flat = H.coeffs.reshape(H.J + 1, nmodes)
    out_flat[:, inside.ravel()] = in_flat[:, flat_src]
    return H.with_coeffs(out_flat.reshape(H.coeffs.shape))


# ---------------------------------------------------------------------------
# serialization: self-describing JSON record
# ---------------------------------------------------------------------------

_INDEX_ORDER = "nu1 fastest (little-endian in nu1), then nu2 .. nu_d, Taylor order j slowest"


def hamiltonian_to_dict(H: FTHamiltonian) -> dict:
    flat = np.concatenate([H.coeffs[j].flatten(order="F") for j in range(H.J + 1)])
    return {
        "d": H.d,
        "L": H.L,
        "J": H.J,
        "omega": H.omega.tolist(),
        "Omega": H.Omega.tolist(),
        "index_order": _INDEX_ORDER,
        "coeffs_re": flat.real.tolist(),
        "coeffs_im": flat.imag.tolist(),
    }


def hamiltonian_from_dict(rec: dict) -> FTHamiltonian:
    d, L, J = rec["d"], rec["L"], rec["J"]
    nm = 2 * L + 1
    flat = np.asarray(rec["coeffs_re"], dtype=float) + 1j * np.asarray(rec["coeffs_im"], dtype=float)
    per_j = flat.reshape(J + 1, nm ** d)
    coeffs = np.stack([per_j[j].reshape((nm,) * d, order="F") for j in range(J + 1)])
    return FTHamiltonian(omega=np.asarray(rec["omega"], dtype=float),
                         Omega=np.asarray(rec["Omega"], dtype=float),
                         coeffs=coeffs)


def save_hamiltonian(H: FTHamiltonian, path) -> None:
    with open(path, "w") as fh:
        json.dump(hamiltonian_to_dict(H), fh)


def load_hamiltonian(path) -> FTHamiltonian:
    with open(path) as fh:
        return hamiltonian_from_dict(json.load(fh))
