"""Radau IIA tableaus, BDF coefficients and their stability checks."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

__all__ = [
    "ButcherTableau",
    "BdfCoefficients",
    "radau_iia",
    "bdf_delta",
    "bdf_gamma",
    "bdf_coefficients",
    "check_algebraic_stability",
    "algebraic_stability_matrix",
    "is_stiffly_accurate",
    "bdf_root_moduli",
    "check_zero_stability",
    "MAX_BDF_ORDER",
]

MAX_BDF_ORDER = 5


@dataclass(frozen=True)
class ButcherTableau:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int
    stage_order: int
    name: str = ""

    @property
    def s(self) -> int:
        return len(self.b)


def radau_iia(s: int) -> ButcherTableau:
    if s == 1:
        return ButcherTableau(np.array([[1.0]]), np.array([1.0]), np.array([1.0]), 1, 1, "radau1")
    if s == 2:
        A = np.array([[5 / 12, -1 / 12], [3 / 4, 1 / 4]])
        return ButcherTableau(A, A[-1].copy(), np.array([1 / 3, 1.0]), 3, 2, "radau2")
    if s == 3:
        r = np.sqrt(6.0)
        A = np.array(
            [
                [(88 - 7 * r) / 360, (296 - 169 * r) / 1800, (-2 + 3 * r) / 225],
                [(296 + 169 * r) / 1800, (88 + 7 * r) / 360, (-2 - 3 * r) / 225],
                [(16 - r) / 36, (16 + r) / 36, 1 / 9],
            ]
        )
        return ButcherTableau(A, A[-1].copy(), np.array([(4 - r) / 10, (4 + r) / 10, 1.0]), 5, 3, "radau3")
    raise ValueError(f"Radau IIA with s={s} stages is not available (choose 1, 2 or 3)")


def algebraic_stability_matrix(tab: ButcherTableau) -> np.ndarray:
    bA = tab.b[:, None] * tab.A
    return bA + bA.T - np.outer(tab.b, tab.b)


def check_algebraic_stability(tab: ButcherTableau, tol: float = 1e-12) -> tuple[bool, float]:
    """(b > 0 and b_i a_ij + b_j a_ji - b_i b_j is PSD, smallest eigenvalue)."""
    lam = float(np.linalg.eigvalsh(algebraic_stability_matrix(tab)).min())
    return bool(np.all(tab.b > 0) and lam >= -tol), lam


def is_stiffly_accurate(tab: ButcherTableau, tol: float = 1e-15) -> bool:
    return bool(np.allclose(tab.b, tab.A[-1], rtol=0, atol=tol) and abs(tab.c[-1] - 1.0) <= tol)


def _check_order(k: int, kmax: int = 6) -> None:
    if not 1 <= k <= kmax:
        raise ValueError(f"BDF order k={k} not supported (1 <= k <= {kmax})")


def bdf_delta(k: int) -> np.ndarray:
    """Coefficients delta_0..delta_k of sum_{l=1}^k (1 - z)^l / l in powers of z."""
    _check_order(k)
    delta = np.zeros(k + 1)
    for ell in range(1, k + 1):
        for j in range(ell + 1):
            delta[j] += (-1) ** j * comb(ell, j) / ell
    return delta


def bdf_gamma(k: int) -> np.ndarray:
    """Extrapolation weights gamma_1..gamma_k, exact on polynomials of degree < k."""
    _check_order(k)
    return np.array([(-1) ** (j - 1) * comb(k, j) for j in range(1, k + 1)], dtype=float)


@dataclass(frozen=True)
class BdfCoefficients:
    k: int
    delta: np.ndarray
    gamma: np.ndarray


def bdf_coefficients(k: int) -> BdfCoefficients:
    _check_order(k, MAX_BDF_ORDER)
    return BdfCoefficients(k, bdf_delta(k), bdf_gamma(k))


def bdf_root_moduli(k: int) -> np.ndarray:
    """Moduli of the roots of sum_j delta_j z^{k-j} (companion-matrix eigenvalues)."""
    delta = bdf_delta(k)
    if k == 1:
        return np.array([abs(-delta[1] / delta[0])])
    companion = np.zeros((k, k))
    companion[0, :] = -delta[1:] / delta[0]
    companion[1:, :-1] = np.eye(k - 1)
    return np.abs(np.linalg.eigvals(companion))


def check_zero_stability(k: int, tol: float = 1e-10) -> bool:
    """Root condition: roots in the closed unit disk, boundary roots simple."""
    delta = bdf_delta(k)
    roots = np.roots(delta)
    mod = np.abs(roots)
    if np.any(mod > 1 + tol):
        return False
    boundary = roots[mod > 1 - 1e-6]
    for i in range(len(boundary)):
        for j in range(i + 1, len(boundary)):
            if abs(boundary[i] - boundary[j]) < 1e-6:
                return False
    return True
