"""Sampled signals with online repeated integration, Wiener noise, and S-polynomials.

The integral operator ``S`` is discretized so that ``(S^j z)(t_m)`` never
depends on ``z(t_m)``: every interval is integrated with the trapezoid rule
except the newest one, which uses its left endpoint. This keeps equations
such as ``y = -a_1 (S y) + ...`` explicit at each grid point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class NonFiniteSignalError(FloatingPointError):
    """A non-finite sample was appended to a tape."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"non-finite sample at index {index}")


@dataclass(frozen=True)
class PolynomialInS:
    """``1 + c_1 S + ... + c_r S^r`` (monic) or ``b_1 + b_2 S + ... + b_q S^(q-1)``."""

    coeffs: tuple[float, ...] = ()
    monic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if not self.monic and not self.coeffs:
            raise ValueError("a non-monic polynomial needs at least one coefficient")

    @classmethod
    def one(cls) -> "PolynomialInS":
        return cls(())

    @property
    def degree(self) -> int:
        return len(self.coeffs)

    @property
    def max_order(self) -> int:
        """Highest power of S the polynomial applies."""
        return self.degree if self.monic else self.degree - 1

    def is_identity(self) -> bool:
        return self.monic and not any(self.coeffs)

    def __call__(self, sigma):
        sigma = np.asarray(sigma, dtype=complex)
        if self.monic:
            out = np.ones_like(sigma)
            powers = range(1, self.degree + 1)
        else:
            out = np.zeros_like(sigma)
            powers = range(self.degree)
        for c, k in zip(self.coeffs, powers):
            out = out + c * sigma**k
        return out

    def roots(self) -> np.ndarray:
        """Roots of ``s^r d(1/s)`` for a monic polynomial (poles of the filter ``1/d(S)``)."""
        if not self.monic:
            raise ValueError("roots are defined for monic polynomials only")
        if self.degree == 0:
            return np.array([], dtype=complex)
        return np.roots((1.0,) + self.coeffs)


class SignalTape:
    """Uniformly sampled signal with its repeated integrals ``S^1 z .. S^J z``.

    Samples may be vectors of fixed ``width`` (one entry per sensor, say).
    ``row(j)`` returns the reported ``(S^j z)(t_m)`` for all stored samples;
    ``lookahead(j)`` gives ``(S^j z)`` at the next grid point, which is known
    before that sample is appended.
    """

    def __init__(self, h: float, max_order: int, width: int | None = None, capacity: int = 256):
        if not h > 0:
            raise ValueError("step size h must be positive")
        if max_order < 0:
            raise ValueError("max_order must be non-negative")
        self.h = float(h)
        self.max_order = int(max_order)
        self.width = width
        shape = () if width is None else (int(width),)
        self._shape = shape
        cap = max(int(capacity), 2)
        # _full[j] is the pure cumulative trapezoid; _rows[j] the reported values
        self._full = np.zeros((self.max_order + 1, cap) + shape)
        self._rows = np.zeros((self.max_order + 1, cap) + shape)
        self.count = 0

    def __len__(self):
        return self.count

    def _grow(self):
        cap = self._full.shape[1]
        pad = np.zeros((self.max_order + 1, cap) + self._shape)
        self._full = np.concatenate([self._full, pad], axis=1)
        self._rows = np.concatenate([self._rows, pad], axis=1)

    def lookahead(self, j: int):
        """``(S^j z)`` at the grid point after the last stored sample (``j >= 1``)."""
        if not 1 <= j <= self.max_order:
            raise IndexError(f"order {j} outside 1..{self.max_order}")
        m = self.count
        if m == 0:
            return np.zeros(self._shape)[()]
        return self._full[j, m - 1] + self.h * self._full[j - 1, m - 1]

    def append(self, value) -> "SignalTape":
        value = np.asarray(value, dtype=float)
        if value.shape != self._shape:
            raise ValueError(f"sample shape {value.shape} does not match tape width {self._shape}")
        if not np.all(np.isfinite(value)):
            raise NonFiniteSignalError(self.count)
        m = self.count
        if m == self._full.shape[1]:
            self._grow()
        F, R, h = self._full, self._rows, self.h
        F[0, m] = value
        R[0, m] = value
        if m > 0:
            for j in range(1, self.max_order + 1):
                R[j, m] = F[j, m - 1] + h * F[j - 1, m - 1]
                F[j, m] = F[j, m - 1] + 0.5 * h * (F[j - 1, m - 1] + F[j - 1, m])
        self.count = m + 1
        return self

    def extend(self, values) -> "SignalTape":
        for v in values:
            self.append(v)
        return self

    def row(self, j: int) -> np.ndarray:
        if not 0 <= j <= self.max_order:
            raise IndexError(f"order {j} outside 0..{self.max_order}")
        return self._rows[j, : self.count]

    def value(self, j: int, m: int):
        if not 0 <= m < self.count:
            raise IndexError(f"sample {m} not stored (have {self.count})")
        return self.row(j)[m]


def apply_poly(poly: PolynomialInS, tape: SignalTape, m: int):
    """Evaluate ``poly(S) z`` at sample ``m`` from the stored integral rows."""
    if poly.max_order > tape.max_order:
        raise ValueError(
            f"polynomial needs S^{poly.max_order} but tape keeps only S^{tape.max_order}"
        )
    if poly.monic:
        out = tape.value(0, m)
        for k, c in enumerate(poly.coeffs, start=1):
            out = out + c * tape.value(k, m)
        return out
    out = 0.0
    for k, c in enumerate(poly.coeffs):
        out = out + c * tape.value(k, m)
    return out


@dataclass(frozen=True)
class NoiseStream:
    """Reproducible Wiener increments, one independent substream per (replication, sensor, channel)."""

    seed: int
    h: float
    replication: int = 0

    def generator(self, sensor: int, channel: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.replication, sensor, channel))
        return np.random.default_rng(ss)

    def increments(self, sensor: int, count: int, channel: int = 0) -> np.ndarray:
        """``count`` i.i.d. Normal(0, h) draws for ``sensor``."""
        return self.generator(sensor, channel).normal(0.0, np.sqrt(self.h), size=int(count))

    def path(self, sensor: int, count: int, channel: int = 0) -> np.ndarray:
        """Wiener path on ``count + 1`` grid points starting at 0."""
        return np.concatenate([[0.0], np.cumsum(self.increments(sensor, count, channel))])


def wiener_increments(stream: NoiseStream, sensor: int, count: int) -> np.ndarray:
    return stream.increments(sensor, count)


class SPRResult(NamedTuple):
    passed: bool
    min_margin: float
    margins: np.ndarray
    omega: np.ndarray
    offending_omega: float | None = None


def default_omega_grid(n: int = 2000, lo: float = 1e-3, hi: float = 1e3) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), n)


def spr_check(c: PolynomialInS, d: PolynomialInS, omega_grid=None) -> SPRResult:
    """Sampled check that ``d(S)/c(S) - 1/2`` is strictly positive real.

    The integral operator has frequency response ``1/(i w)``, so the margin at
    ``w`` is ``Re{d(sigma)/c(sigma)} - 1/2`` with ``sigma = 1/(i w)``.
    """
    omega = default_omega_grid() if omega_grid is None else np.asarray(omega_grid, dtype=float)
    if omega.ndim != 1 or omega.size == 0 or np.any(omega <= 0):
        raise ValueError("omega grid must be a non-empty sequence of positive frequencies")
    sigma = 1.0 / (1j * omega)
    cv, dv = c(sigma), d(sigma)
    # Re{d/c} = Re{d conj(c)} / |c|^2, written so that d == c gives exactly 1
    den = cv.real * cv.real + cv.imag * cv.imag
    bad = np.flatnonzero(den == 0)
    if bad.size:
        return SPRResult(False, -np.inf, np.full(omega.shape, np.nan), omega, float(omega[bad[0]]))
    margins = (dv.real * cv.real + dv.imag * cv.imag) / den - 0.5
    k = int(np.argmin(margins))
    min_margin = float(margins[k])
    passed = min_margin > 0
    return SPRResult(passed, min_margin, margins, omega, None if passed else float(omega[k]))
