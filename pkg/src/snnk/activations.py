"""Activation functions, their Fourier transforms, and nonnegative four-way splits.

All transforms use the convention  FT_f(xi) = int f(z) exp(-2*pi*i*xi*z) dz,
so the inverse is  f(z) = int FT_f(xi) exp(+2*pi*i*xi*z) dxi.  Closed forms
quoted in the angular convention  F(k) = int f(z) exp(-i*k*z) dz  map onto
this one by evaluating at k = 2*pi*xi (Dirac atoms additionally pick up the
1/(2*pi) change-of-variables weight).

A transform is split into four nonnegative parts,

    FT_f = R+ - R- + i*I+ - i*I-,

each stored as a ``FourierComponent`` (a list of Dirac atoms, or a tabulated
density with an optional analytic evaluator).  The split is what the random
feature sampler consumes: each part provides a sampling density and a signed
complex mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.special import expit, ndtr

TWO_PI = 2.0 * math.pi

AXES = ("re+", "re-", "im+", "im-")
# unit phase multiplying each component's mass in the reassembled transform
AXIS_PHASE = {"re+": 1.0 + 0j, "re-": -1.0 + 0j, "im+": 1j, "im-": -1j}


class UnsupportedClosedForm(ValueError):
    """No vetted closed-form transform for this activation."""


class QuadratureNonConvergent(ArithmeticError):
    """Richardson refinement levels disagree beyond tolerance."""


# ---------------------------------------------------------------------------
# activations


@dataclass(frozen=True)
class Activation:
    """A scalar activation, evaluable on real arrays.

    ``kind`` is one of sine, cosine, tanh, sigmoid, gelu, swish,
    smoothed_relu.  ``beta`` parametrizes swish (> 0) and ``width`` the
    Gaussian-mollified relu (> 0); both are ignored by the other kinds.
    """

    kind: str
    beta: float = 1.0
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in _EVALS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == "swish" and not self.beta > 0:
            raise ValueError("swish requires beta > 0")
        if self.kind == "smoothed_relu" and not self.width > 0:
            raise ValueError("smoothed_relu requires width > 0")

    def __call__(self, z):
        return _EVALS[self.kind](self, np.asarray(z, dtype=float))

    @property
    def parity(self) -> str:
        """'odd', 'even' or 'none'."""
        if self.kind in ("sine", "tanh"):
            return "odd"
        if self.kind == "cosine":
            return "even"
        return "none"


def _norm_pdf(u):
    return np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)


_EVALS: dict[str, Callable] = {
    "sine": lambda a, z: np.sin(z),
    "cosine": lambda a, z: np.cos(z),
    "tanh": lambda a, z: np.tanh(z),
    "sigmoid": lambda a, z: expit(z),
    "gelu": lambda a, z: z * ndtr(z),
    "swish": lambda a, z: z * expit(a.beta * z),
    # relu mollified by a centered Gaussian of std ``width``
    "smoothed_relu": lambda a, z: z * ndtr(z / a.width)
    + a.width * _norm_pdf(z / a.width),
}


def eval_activation(a: Activation, z):
    """Evaluate ``a`` pointwise; total on all finite real inputs."""
    return a(z)


# ---------------------------------------------------------------------------
# transform containers


@dataclass(frozen=True)
class AtomicFT:
    """A purely atomic transform: ((frequency, complex weight), ...)."""

    atoms: tuple[tuple[float, complex], ...]


@dataclass(frozen=True)
class TabulatedFT:
    """Complex transform values on a strictly increasing frequency grid."""

    grid: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class FourierComponent:
    """One nonnegative part of a transform.

    Exactly one of ``atoms`` / ``values`` is populated.  ``density_fn``,
    when present, is the closed-form evaluator of the tabulated values
    (vectorized, zero outside the support).  ``mass`` is the atom-weight
    sum, or the trapezoid integral of the tabulation; sampling ratios and
    signed masses both normalize by this same constant, so any tabulation
    error cancels out of the estimator.
    """

    axis: str
    atoms: tuple[tuple[float, float], ...] = ()
    grid: np.ndarray | None = None
    values: np.ndarray | None = None
    density_fn: Callable | None = None
    mass: float = 0.0

    @property
    def is_atomic(self) -> bool:
        return self.grid is None

    @property
    def is_active(self) -> bool:
        return self.mass > 0.0

    def density(self, xi):
        """Unnormalized component value at ``xi`` (0 outside support)."""
        xi = np.asarray(xi, dtype=float)
        if self.is_atomic:
            raise ValueError("atomic component has no density")
        if self.density_fn is not None:
            return self.density_fn(xi)
        out = np.interp(xi, self.grid, self.values, left=0.0, right=0.0)
        return out

    def second_moment(self) -> float:
        """E[xi^2] under the normalized component distribution."""
        if not self.is_active:
            return 0.0
        if self.is_atomic:
            w = np.array([w for _, w in self.atoms])
            x = np.array([x for x, _ in self.atoms])
            return float(np.sum(w * x * x) / np.sum(w))
        return float(np.trapezoid(self.grid**2 * self.values, self.grid) / self.mass)

    def support(self) -> tuple[float, float]:
        if self.is_atomic:
            if not self.atoms:
                return (0.0, 0.0)
            xs = [x for x, _ in self.atoms]
            return (min(xs), max(xs))
        return (float(self.grid[0]), float(self.grid[-1]))


def _atomic_component(axis, atoms) -> FourierComponent:
    atoms = tuple((float(x), float(w)) for x, w in atoms if w > 0.0)
    return FourierComponent(axis=axis, atoms=atoms, mass=float(sum(w for _, w in atoms)))


def _density_component(axis, grid, values, density_fn=None) -> FourierComponent:
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values < 0):
        raise ValueError("component values must be nonnegative")
    mass = float(np.trapezoid(values, grid))
    return FourierComponent(
        axis=axis, grid=grid, values=values, density_fn=density_fn, mass=mass
    )


@dataclass(frozen=True)
class FourierDecomposition:
    """The four-way split of one activation's transform."""

    label: str
    components: tuple[FourierComponent, ...]  # ordered as AXES

    def __post_init__(self):
        if tuple(c.axis for c in self.components) != AXES:
            raise ValueError("components must be ordered re+, re-, im+, im-")

    @property
    def masses(self) -> np.ndarray:
        """Signed complex masses c_j, axis order re+, re-, im+, im-."""
        return np.array(
            [AXIS_PHASE[c.axis] * c.mass for c in self.components], dtype=complex
        )

    def component(self, axis: str) -> FourierComponent:
        return self.components[AXES.index(axis)]

    def active(self) -> list[FourierComponent]:
        return [c for c in self.components if c.is_active]

    @property
    def all_atomic(self) -> bool:
        return all(c.is_atomic for c in self.active())


# ---------------------------------------------------------------------------
# closed forms

# Principal-value densities have a non-integrable 1/xi singularity at the
# origin; a symmetric interval (-XI_MIN, XI_MIN) is excised.  The dropped
# odd-mass contribution to the reconstruction is O(4*z*XI_MIN), so the
# default keeps it ~2e-4 over |z| <= 5.
XI_MIN = 1e-5
GRID_MAX = 8.0
GRID_POINTS = 4096


def _csch(u):
    # stable for large |u|; u is bounded away from 0 by the excision
    with np.errstate(over="ignore"):
        return 1.0 / np.sinh(u)


def _pv_grid(xi_min, xi_max, n_half):
    """One-sided composite grid resolving the 1/xi edge: log then linear."""
    n_log = n_half // 2
    knee = 0.25
    left = np.geomspace(xi_min, knee, n_log, endpoint=False)
    right = np.linspace(knee, xi_max, n_half - n_log)
    return np.concatenate([left, right])


def _pv_odd_imag_decomposition(label, rate, xi_min=XI_MIN) -> FourierDecomposition:
    """Split of an odd transform  -i*pi*csch(rate*xi)  (principal value).

    Im is negative for xi > 0, so 'im-' lives on (xi_min, inf) and 'im+'
    mirrors it on the negative side.
    """

    def half_density(xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros_like(xi)
        m = xi >= xi_min
        out[m] = math.pi * _csch(rate * xi[m])
        return out

    pos_grid = _pv_grid(xi_min, GRID_MAX, GRID_POINTS // 2)
    pos_vals = half_density(pos_grid)
    neg_grid = -pos_grid[::-1]
    neg_vals = pos_vals[::-1]

    im_minus = _density_component("im-", pos_grid, pos_vals, density_fn=half_density)
    im_plus = _density_component(
        "im+", neg_grid, neg_vals, density_fn=lambda xi: half_density(-np.asarray(xi))
    )
    return FourierDecomposition(
        label=label,
        components=(
            _atomic_component("re+", ()),
            _atomic_component("re-", ()),
            im_plus,
            im_minus,
        ),
    )


def closed_form_ft(a: Activation) -> FourierDecomposition:
    """Vetted closed-form decompositions (sine, cosine, tanh, sigmoid).

    sine:    FT(xi) = (i/2)[delta(xi + 1/(2 pi)) - delta(xi - 1/(2 pi))]
    cosine:  FT(xi) = (1/2)[delta(xi + 1/(2 pi)) + delta(xi - 1/(2 pi))]
    tanh:    FT(xi) = -i*pi*csch(pi^2 * xi)            (principal value)
    sigmoid: FT(xi) = (1/2)delta(xi) - i*pi*csch(2*pi^2*xi)

    The csch forms are the angular-convention results evaluated at
    k = 2*pi*xi; sigmoid's DC atom is the transform of its constant 1/2
    offset (sigmoid(z) = 1/2 + tanh(z/2)/2), absent from the csch part.
    """
    xi0 = 1.0 / TWO_PI
    if a.kind == "sine":
        return FourierDecomposition(
            label="sine",
            components=(
                _atomic_component("re+", ()),
                _atomic_component("re-", ()),
                _atomic_component("im+", [(-xi0, 0.5)]),
                _atomic_component("im-", [(+xi0, 0.5)]),
            ),
        )
    if a.kind == "cosine":
        return FourierDecomposition(
            label="cosine",
            components=(
                _atomic_component("re+", [(-xi0, 0.5), (+xi0, 0.5)]),
                _atomic_component("re-", ()),
                _atomic_component("im+", ()),
                _atomic_component("im-", ()),
            ),
        )
    if a.kind == "tanh":
        return _pv_odd_imag_decomposition("tanh", rate=math.pi**2)
    if a.kind == "sigmoid":
        d = _pv_odd_imag_decomposition("sigmoid", rate=2.0 * math.pi**2)
        return FourierDecomposition(
            label="sigmoid",
            components=(
                _atomic_component("re+", [(0.0, 0.5)]),
                d.components[1],
                d.components[2],
                d.components[3],
            ),
        )
    raise UnsupportedClosedForm(
        f"no closed-form transform for {a.kind}; use numeric_decomposition"
    )


# ---------------------------------------------------------------------------
# numeric transform oracle


@dataclass(frozen=True)
class TaperWindow:
    """w(z) = 1 on [-flat, flat], smooth (C-infinity) roll-off to 0 at
    flat + taper; the smoothness keeps spectral leakage super-polynomially
    small, which matters when comparing against exponentially small
    transform tails."""

    flat: float = 10.0
    taper: float = 30.0

    @property
    def cutoff(self) -> float:
        return self.flat + self.taper

    def __call__(self, z):
        z = np.abs(np.asarray(z, dtype=float))
        out = np.ones_like(z)
        roll = (z > self.flat) & (z < self.cutoff)
        t = (z[roll] - self.flat) / self.taper
        with np.errstate(over="ignore"):
            s = np.clip(1.0 / (1.0 - t) - 1.0 / t, -700.0, 700.0)
            out[roll] = 1.0 / (1.0 + np.exp(s))
        out[z >= self.cutoff] = 0.0
        return out


def numeric_ft(
    a,
    grid: np.ndarray,
    window: TaperWindow = TaperWindow(),
    step: float = 1.0 / 128.0,
    rtol: float = 1e-6,
) -> np.ndarray:
    """Windowed trapezoid quadrature of the transform on ``grid``.

    ``a`` is an Activation or any callable of a real array.  The integrand
    f(z) w(z) exp(-2 pi i xi z) is summed at steps ``step`` and ``step/2``
    and Richardson-extrapolated; if the two levels disagree by more than
    ``rtol`` relative to the transform's peak magnitude, raises
    QuadratureNonConvergent.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if not np.allclose(grid, -grid[::-1], atol=1e-12):
        raise ValueError("grid must be symmetric about 0")

    half = window.cutoff
    n = int(round(2 * half / (step / 2))) + 1
    z = np.linspace(-half, half, n)
    fz = (a(z) if callable(a) else np.asarray(a)) * window(z)

    fine = _trapezoid_ft(z, fz, grid)
    coarse = _trapezoid_ft(z[::2], fz[::2], grid)
    scale = np.max(np.abs(fine)) + 1e-300
    disagreement = np.max(np.abs(fine - coarse)) / scale
    if disagreement > rtol:
        raise QuadratureNonConvergent(
            f"refinement levels disagree by {disagreement:.2e} (> {rtol:.0e})"
        )
    # Richardson: trapezoid error is O(h^2), so (4*fine - coarse) / 3
    return (4.0 * fine - coarse) / 3.0


def _trapezoid_ft(z, fz, grid, chunk=256):
    h = z[1] - z[0]
    weights = np.full(len(z), h)
    weights[0] = weights[-1] = h / 2.0
    wf = weights * fz
    out = np.empty(len(grid), dtype=complex)
    for s in range(0, len(grid), chunk):
        xi = grid[s : s + chunk]
        out[s : s + chunk] = np.exp(-2j * math.pi * np.outer(xi, z)) @ wf
    return out


# ---------------------------------------------------------------------------
# decomposition and validation


def decompose(ft: AtomicFT | TabulatedFT, label: str = "custom") -> FourierDecomposition:
    """Split a transform into its four nonnegative parts.

    The split is the pointwise sign split max(+-Re, 0), max(+-Im, 0), so
    reassembling  R+ - R- + i I+ - i I-  reproduces the input exactly.
    """
    if isinstance(ft, AtomicFT):
        buckets: dict[str, list] = {ax: [] for ax in AXES}
        for x, w in ft.atoms:
            w = complex(w)
            if w.real > 0:
                buckets["re+"].append((x, w.real))
            elif w.real < 0:
                buckets["re-"].append((x, -w.real))
            if w.imag > 0:
                buckets["im+"].append((x, w.imag))
            elif w.imag < 0:
                buckets["im-"].append((x, -w.imag))
        return FourierDecomposition(
            label=label,
            components=tuple(_atomic_component(ax, buckets[ax]) for ax in AXES),
        )

    grid = np.asarray(ft.grid, dtype=float)
    vals = np.asarray(ft.values, dtype=complex)
    parts = {
        "re+": np.maximum(vals.real, 0.0),
        "re-": np.maximum(-vals.real, 0.0),
        "im+": np.maximum(vals.imag, 0.0),
        "im-": np.maximum(-vals.imag, 0.0),
    }
    return FourierDecomposition(
        label=label,
        components=tuple(_density_component(ax, grid, parts[ax]) for ax in AXES),
    )


def reassemble(d: FourierDecomposition, grid: np.ndarray) -> np.ndarray:
    """Evaluate R+ - R- + i I+ - i I- on ``grid`` (densities only)."""
    out = np.zeros(len(grid), dtype=complex)
    for c in d.components:
        if not c.is_active or c.is_atomic:
            continue
        out += AXIS_PHASE[c.axis] * np.interp(grid, c.grid, c.values, left=0.0, right=0.0)
    return out


def _component_inverse(c: FourierComponent, zs: np.ndarray) -> np.ndarray:
    """int component(xi) exp(2 pi i xi z) dxi for each z."""
    if c.is_atomic:
        out = np.zeros(len(zs), dtype=complex)
        for x, w in c.atoms:
            out += w * np.exp(2j * math.pi * x * zs)
        return out
    if c.density_fn is not None:
        lo, hi = c.support()
        out = np.empty(len(zs), dtype=complex)
        for i, z in enumerate(zs):
            re = quad(lambda xi: c.density_fn(xi) * math.cos(TWO_PI * xi * z),
                      lo, hi, limit=400)[0]
            im = quad(lambda xi: c.density_fn(xi) * math.sin(TWO_PI * xi * z),
                      lo, hi, limit=400)[0]
            out[i] = re + 1j * im
        return out
    kernel = np.exp(2j * math.pi * np.outer(zs, c.grid))
    return np.trapezoid(kernel * c.values, c.grid, axis=1)


def validate_decomposition(
    d: FourierDecomposition, a: Activation, zs: Sequence[float]
) -> float:
    """Max |reconstruction - f| over ``zs``; raises on imaginary residue.

    Reconstructs f(z) = sum_j c_j int p_j(xi) exp(2 pi i xi z) dxi with
    exact atom sums and quadrature for the densities.  The reconstruction
    must be real to 1e-8; the returned error compares its real part to f.
    """
    zs = np.asarray(zs, dtype=float)
    recon = np.zeros(len(zs), dtype=complex)
    for c in d.components:
        if c.is_active:
            recon += AXIS_PHASE[c.axis] * _component_inverse(c, zs)
    imag_residue = float(np.max(np.abs(recon.imag))) if len(zs) else 0.0
    if imag_residue > 1e-8:
        raise ValueError(f"imaginary residue {imag_residue:.2e} exceeds 1e-8")
    return float(np.max(np.abs(recon.real - a(zs))))


# ---------------------------------------------------------------------------
# dispatch

_NUMERIC_KINDS = ("gelu", "swish", "smoothed_relu")


def numeric_decomposition(a: Activation) -> FourierDecomposition:
    grid = np.linspace(-GRID_MAX, GRID_MAX, GRID_POINTS)
    values = numeric_ft(a, grid)
    return decompose(TabulatedFT(grid, values), label=a.kind)


@lru_cache(maxsize=32)
def _cached_decomposition(a: Activation) -> FourierDecomposition:
    if a.kind in _NUMERIC_KINDS:
        return numeric_decomposition(a)
    return closed_form_ft(a)


def decomposition_for(a: Activation) -> FourierDecomposition:
    """Closed form where vetted, tabulated numeric transform otherwise."""
    return _cached_decomposition(a)


# angular-convention helpers: F_ang(k) = FT(k / (2 pi)) and back.  Smooth
# values map by substitution alone; only Dirac atoms carry the 1/(2 pi)
# change-of-variables weight.


def angular_to_twopi(f_ang: Callable) -> Callable:
    return lambda xi: f_ang(TWO_PI * np.asarray(xi))


def twopi_to_angular(f_twopi: Callable) -> Callable:
    return lambda k: f_twopi(np.asarray(k) / TWO_PI)
