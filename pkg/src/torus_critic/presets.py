"""Built-in frequency/Hamiltonian scenarios.

golden2d: omega = (g, -1) with g the golden mean, self-similar under
    N = [[1, 1], [1, 0]], potential mu1 cos(phi1) + mu2 cos(phi1 + phi2),
    Omega = (1, 0).
spiral3d: omega = (s, s^2, 1) with s the spiral mean (real root of
    s^3 = s + 1), self-similar under N = [[0,0,1],[1,0,0],[0,1,-1]],
    potential mu1 cos(phi1) + mu2 cos(phi2) + mu3 cos(phi3), Omega along
    (1, 1, -1).

Omega is normalized to a unit vector internally.  For a non-unit raw Omega
this is the exact canonical scaling (A, H) -> (A/|Omega|^2, |Omega|^2 H),
which multiplies the potential amplitudes by |Omega_raw|^2 and leaves the
existence question (and every threshold in mu) unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ft_algebra import FTHamiltonian, FrequencyData

__all__ = ["Scenario", "get_scenario", "SCENARIOS", "golden_mean", "spiral_mean"]


def golden_mean() -> float:
    return (np.sqrt(5.0) - 1.0) / 2.0


def spiral_mean() -> float:
    roots = np.roots([1.0, 0.0, -1.0, -1.0])
    return float(roots[np.argmin(np.abs(roots.imag))].real)


@dataclass(frozen=True)
class Scenario:
    name: str
    omega: tuple
    N: tuple
    Omega_raw: tuple
    modes: tuple  # potential modes, one per mu component
    mu3_default: float | None
    defaults: dict

    @property
    def d(self) -> int:
        return len(self.omega)

    @property
    def amplitude_factor(self) -> float:
        """|Omega_raw|^2, the canonical-scaling factor on the amplitudes."""
        v = np.asarray(self.Omega_raw, dtype=float)
        return float(v @ v)

    @property
    def Omega(self) -> np.ndarray:
        v = np.asarray(self.Omega_raw, dtype=float)
        return v / np.linalg.norm(v)

    def frequency_data(self, sigma: float = 0.6, kappa: float = 0.1) -> FrequencyData:
        return FrequencyData.from_matrix(self.omega, np.array(self.N), sigma, kappa)

    def mu_tuple(self, mu1: float, mu2: float, mu3: float | None = None) -> tuple:
        if self.d == 2:
            return (mu1, mu2)
        return (mu1, mu2, self.mu3_default if mu3 is None else mu3)

    def hamiltonian(self, mu, L: int = 5, J: int = 5) -> FTHamiltonian:
        mu = tuple(mu)
        if len(mu) != len(self.modes):
            raise ValueError(f"{self.name} expects {len(self.modes)} amplitudes")
        H = FTHamiltonian.zeros(np.asarray(self.omega, float), self.Omega, L, J)
        fac = self.amplitude_factor
        for nu, amp in zip(self.modes, mu):
            H = H.add_cosine(nu, fac * amp)
        return H

    def potential_modes(self, mu) -> list:
        """(nu, amplitude) pairs of the unit-Omega potential."""
        fac = self.amplitude_factor
        return [(np.array(nu, dtype=int), fac * amp) for nu, amp in zip(self.modes, mu)]


_g = golden_mean()
_s = spiral_mean()

SCENARIOS = {
    "golden2d": Scenario(
        name="golden2d",
        omega=(_g, -1.0),
        N=((1, 1), (1, 0)),
        Omega_raw=(1.0, 0.0),
        modes=((1, 0), (1, 1)),
        mu3_default=None,
        defaults={"L": 5, "J": 5, "grid_L": 2 ** 10},
    ),
    "spiral3d": Scenario(
        name="spiral3d",
        omega=(_s, _s ** 2, 1.0),
        N=((0, 0, 1), (1, 0, 0), (0, 1, -1)),
        Omega_raw=(1.0, 1.0, -1.0),
        modes=((1, 0, 0), (0, 1, 0), (0, 0, 1)),
        mu3_default=0.1,
        defaults={"L": 5, "J": 5, "grid_L": 2 ** 7},
    ),
}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
