"""Real sin/cos Fourier series in y on the period [-L0, L0).

A coefficient table ``a`` of shape ``(n_x, n_k)`` over a :class:`KGrid` stands for

    u(x, y) = a0(x) + sum_{k>0} a_k(x) sqrt(2) sin(k y) + sum_{k<0} a_k(x) sqrt(2) cos(k y)

so that the y-average of u^2 is ``a0^2 + sum_k a_k^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import KGrid, XGrid, diff_x

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class CoefficientSet:
    kgrid: KGrid
    a: np.ndarray
    a0: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.ndim != 2 or a.shape[1] != len(self.kgrid):
            raise ValueError(f"coefficient table shape {a.shape} does not match {len(self.kgrid)} frequencies")
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite coefficient")
        object.__setattr__(self, "a", a)
        if self.a0 is not None:
            a0 = np.asarray(self.a0, dtype=float)
            if a0.shape != (a.shape[0],):
                raise ValueError("a0 length does not match the coefficient table")
            object.__setattr__(self, "a0", a0)


@dataclass(frozen=True)
class YGrid:
    L0: float
    m: int
    nodes: np.ndarray = field(repr=False)

    @property
    def period(self) -> float:
        return 2.0 * self.L0


def make_y_grid(L0: float, m: int) -> YGrid:
    """``m`` equispaced samples ``-L0 + j * 2 L0 / m`` of one period."""
    if m < 2 or m % 2:
        raise ValueError(f"m must be even and >= 2, got {m}")
    if not L0 > 0:
        raise ValueError("L0 must be positive")
    return YGrid(L0=float(L0), m=int(m), nodes=-L0 + (2.0 * L0 / m) * np.arange(m))


@dataclass(frozen=True)
class FieldSamples:
    values: np.ndarray  # (n_x, m)
    ygrid: YGrid


def _check_compatible(kgrid: KGrid, ygrid: YGrid) -> None:
    if not np.isclose(kgrid.L_eff, ygrid.L0, rtol=1e-12, atol=0.0):
        raise ValueError(f"k-grid period 2*{kgrid.L_eff} differs from sample period 2*{ygrid.L0}")
    if ygrid.m <= 2 * kgrid.j_max:
        raise ValueError(f"aliasing: m={ygrid.m} must exceed 2*j_max={2 * kgrid.j_max}")


def basis_matrix(kgrid: KGrid, y: np.ndarray) -> np.ndarray:
    """Columns sqrt(2) sin(k y) for k > 0 and sqrt(2) cos(k y) for k < 0; shape (len(y), n_k)."""
    k = kgrid.k
    phase = np.outer(np.asarray(y, dtype=float), k)
    return SQRT2 * np.where(k > 0, np.sin(phase), np.cos(phase))


def basis_derivative_matrix(kgrid: KGrid, y: np.ndarray, order: int) -> np.ndarray:
    """``order``-th y-derivative of :func:`basis_matrix` columns."""
    k = kgrid.k
    phase = np.outer(np.asarray(y, dtype=float), k) + 0.5 * np.pi * order
    return SQRT2 * k**order * np.where(k > 0, np.sin(phase), np.cos(phase))


def synthesize(coeffs: CoefficientSet, ygrid: YGrid, y_order: int = 0) -> FieldSamples:
    """Sample u (or its ``y_order``-th y-derivative) on the y-grid."""
    _check_compatible(coeffs.kgrid, ygrid)
    B = basis_derivative_matrix(coeffs.kgrid, ygrid.nodes, y_order)
    values = coeffs.a @ B.T
    if coeffs.a0 is not None and y_order == 0:
        values = values + coeffs.a0[:, None]
    return FieldSamples(values=values, ygrid=ygrid)


def analyze(samples: FieldSamples, kgrid: KGrid) -> CoefficientSet:
    """Rectangle-rule projections onto the basis; exact for band-limited samples."""
    _check_compatible(kgrid, samples.ygrid)
    values = np.atleast_2d(np.asarray(samples.values, dtype=float))
    B = basis_matrix(kgrid, samples.ygrid.nodes)
    m = samples.ygrid.m
    return CoefficientSet(kgrid=kgrid, a=values @ B / m, a0=values.mean(axis=1))


def plancherel_norm(coeffs: CoefficientSet, order: tuple[int, int], grid: XGrid) -> np.ndarray:
    """y-average of (d_x^i d_y^j u)^2 at every x-node, from coefficients alone.

    x-derivatives use :func:`wrinkle.grids.diff_x`; y-derivatives are k factors.
    """
    ox, oy = order
    if ox not in (0, 1, 2) or oy < 0 or int(oy) != oy:
        raise ValueError(f"unsupported derivative order {order}")
    a = coeffs.a
    for _ in range(ox):
        a = diff_x(a, grid)
    out = np.sum((a * coeffs.kgrid.k**oy) ** 2, axis=1)
    if coeffs.a0 is not None and oy == 0:
        a0 = coeffs.a0
        for _ in range(ox):
            a0 = diff_x(a0, grid)
        out = out + a0**2
    return out


# -- helpers on raw periodic samples (complex FFT along the last axis) --


def _wavenumbers(m: int, L0: float) -> np.ndarray:
    return np.pi / L0 * np.fft.fftfreq(m, d=1.0 / m)


def _check_resolved(ghat: np.ndarray, tol: float = 1e-11) -> None:
    m = ghat.shape[-1]
    nyq = np.abs(ghat[..., m // 2])
    scale = np.max(np.abs(ghat)) if ghat.size else 0.0
    if scale > 0 and np.max(nyq) > tol * scale:
        raise ValueError("samples are not resolved: Nyquist mode is populated")


def diff_y(values: np.ndarray, L0: float) -> np.ndarray:
    """Spectral y-derivative of periodic samples taken at ``-L0 + j 2 L0 / m``."""
    values = np.asarray(values, dtype=float)
    m = values.shape[-1]
    omega = _wavenumbers(m, L0)
    omega[m // 2] = 0.0
    ghat = np.fft.fft(values, axis=-1)
    return np.real(np.fft.ifft(1j * omega * ghat, axis=-1))


@dataclass(frozen=True)
class Primitive:
    """Antiderivative from y = 0 of a band-limited periodic integrand h.

    ``mean * y + periodic(y)``; ``periodic`` is evaluated at the requested
    points and ``periodic_mean`` is its exact average over one period.
    """

    mean: np.ndarray
    periodic: np.ndarray
    periodic_mean: np.ndarray
    y: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.mean[..., None] * self.y + self.periodic


def primitive_y(values: np.ndarray, L0: float, y_eval: np.ndarray) -> Primitive:
    """Exact antiderivative of the trigonometric interpolant of ``values``.

    ``values`` has shape (..., m), sampled at ``-L0 + j 2 L0 / m``.
    """
    values = np.asarray(values, dtype=float)
    y_eval = np.asarray(y_eval, dtype=float)
    m = values.shape[-1]
    ghat = np.fft.fft(values, axis=-1) / m
    _check_resolved(ghat)
    omega = _wavenumbers(m, L0)
    nz = np.arange(m) != 0
    nz[m // 2] = False
    # sample j sits at y_j = -L0 + j*2L0/m, so mode n is exp(i omega_n (y + L0))
    c = ghat[..., nz] * np.exp(1j * omega[nz] * L0) / (1j * omega[nz])
    periodic = np.real(c @ (np.exp(1j * np.outer(omega[nz], y_eval)) - 1.0))
    return Primitive(
        mean=np.real(ghat[..., 0]),
        periodic=periodic,
        periodic_mean=-np.real(c.sum(axis=-1)),
        y=y_eval,
    )


def mean_y(values: np.ndarray) -> np.ndarray:
    return np.mean(values, axis=-1)
