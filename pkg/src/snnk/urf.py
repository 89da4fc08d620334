"""Universal random features.

For an activation f with transform split into nonnegative parts p_j of
signed mass c_j, the value f(w.x + b) is an expectation over frequency /
Gaussian pairs (xi, g):

    f(w.x + b) = sum_j c_j E[ r(xi) exp(2 pi i xi b)
                              Lambda_g(rho(xi) x) Lambda_g(eta(xi) w) ]

with importance ratio r = p_j / proposal, the fixed policy rho(xi) =
2*pi*i*xi, eta(xi) = 1, and the bounded softmax-kernel feature

    Lambda_g(z) = (1-4A)^(d/4) exp(A|g|^2 + sqrt(1-4A) g.z - (z.z)/2),

where z.z is the bilinear (non-conjugated) square, so Lambda extends to
complex arguments by analytic continuation and E_g[Lambda_g(x) Lambda_g(y)]
= exp(x.y) holds exactly.  Feature vectors are the per-draw factors of the
summand, concatenated across active transform components; their bilinear
dot product is an unbiased estimate of f(w.x + b).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._seeds import G_STREAM, XI_STREAM, rng_for
from .activations import AXES, FourierComponent, FourierDecomposition

AXIS_ID = {ax: i for i, ax in enumerate(AXES)}


class ProposalMismatch(ValueError):
    """Proposal distribution cannot cover the component's support."""


class LayoutMismatch(ValueError):
    """Feature vectors built under different layouts."""


class NotAtomic(ValueError):
    """Operation requires a purely atomic decomposition."""


# ---------------------------------------------------------------------------
# proposals


@dataclass(frozen=True)
class ExactProposal:
    """Sample atoms from their own categorical distribution (ratio 1)."""


@dataclass(frozen=True)
class GaussianProposal:
    """Centered Gaussian; sigma=None scales to the component's second moment."""

    sigma: float | None = None


@dataclass(frozen=True)
class GridProposal:
    """Piecewise-uniform proposal over the component's tabulation cells."""


def default_proposal(component: FourierComponent):
    """Exact atoms; grid-categorical for densities.

    A moment-matched Gaussian proposal is available per-axis but loses to
    the exponential tails of the principal-value densities (the importance
    ratio is unbounded, giving a heavy-tailed estimator); the cell-based
    proposal keeps every ratio within a few percent of one.
    """
    return ExactProposal() if component.is_atomic else GridProposal()


# ---------------------------------------------------------------------------
# configuration and draws


@dataclass(frozen=True)
class UrfConfig:
    """Sampling configuration for one feature map.

    ``m`` random features per active transform component, shape parameter
    ``A <= 0`` (more negative trades variance for tighter boundedness),
    ``strategy`` either "iid" or "block" (one frequency shared inside each
    block of ``block_size`` Gaussians), and per-axis proposal overrides.
    """

    m: int
    A: float = -0.1
    strategy: str = "iid"
    block_size: int = 0
    seed: int = 0
    proposals: tuple[tuple[str, object], ...] = ()

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.A > 0:
            raise ValueError("A must be <= 0")
        if self.strategy not in ("iid", "block"):
            raise ValueError("strategy must be 'iid' or 'block'")
        if self.strategy == "block":
            if self.block_size < 1 or self.m % self.block_size != 0:
                raise ValueError("block_size must divide m")

    def proposal_for(self, component: FourierComponent):
        for axis, prop in self.proposals:
            if axis == component.axis:
                return prop
        return default_proposal(component)


@dataclass(frozen=True)
class AxisDraws:
    """Sampled (xi_i, g_i) pairs and importance ratios for one component."""

    axis: str
    sub: int  # atom index under per-atom concatenation, else 0
    c: complex  # signed component mass
    xi: np.ndarray  # (m,)
    g: np.ndarray  # (m, dim)
    ratio: np.ndarray  # (m,), p_j(xi)/proposal(xi), >= 0
    atom_probs: tuple[float, ...] = ()  # normalized atom probabilities, if atomic


@dataclass(frozen=True)
class UrfDraws:
    dim: int
    config: UrfConfig
    blocks: tuple[AxisDraws, ...]

    @property
    def layout(self) -> tuple[tuple[str, int, int], ...]:
        return tuple((b.axis, b.sub, len(b.xi)) for b in self.blocks)

    @property
    def total_features(self) -> int:
        return sum(len(b.xi) for b in self.blocks)


@dataclass(frozen=True)
class FeatureVector:
    entries: np.ndarray  # complex, (total_features,)
    layout: tuple[tuple[str, int, int], ...]


def _like_layouts(a: FeatureVector, b: FeatureVector):
    if a.layout != b.layout:
        raise LayoutMismatch(f"layouts differ: {a.layout} vs {b.layout}")


# ---------------------------------------------------------------------------
# sampling


def _sample_xi(component, proposal, n_xi, rng):
    """Frequencies plus importance ratios for one component."""
    if isinstance(proposal, ExactProposal):
        if not component.is_atomic:
            raise ProposalMismatch("exact proposal requires an atomic component")
        locs = np.array([x for x, _ in component.atoms])
        probs = np.array([w for _, w in component.atoms]) / component.mass
        if len(locs) == 1:
            xi = np.full(n_xi, locs[0])
        else:
            xi = locs[rng.choice(len(locs), size=n_xi, p=probs)]
        return xi, np.ones(n_xi)
    if component.is_atomic:
        raise ProposalMismatch("density proposal on an atomic component")
    if isinstance(proposal, GaussianProposal):
        sigma = proposal.sigma
        if sigma is None:
            sigma = math.sqrt(component.second_moment())
        xi = sigma * rng.standard_normal(n_xi)
        pbar = np.exp(-0.5 * (xi / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
        ratio = component.density(xi) / component.mass / pbar
        return xi, ratio
    if isinstance(proposal, GridProposal):
        grid, vals = component.grid, component.values
        cell_mass = 0.5 * (vals[1:] + vals[:-1]) * np.diff(grid)
        total = cell_mass.sum()
        if total <= 0:
            raise ProposalMismatch("grid proposal over an empty tabulation")
        idx = rng.choice(len(cell_mass), size=n_xi, p=cell_mass / total)
        u = rng.random(n_xi)
        xi = grid[idx] + u * (grid[idx + 1] - grid[idx])
        pbar = cell_mass[idx] / total / (grid[idx + 1] - grid[idx])
        ratio = component.density(xi) / component.mass / pbar
        return xi, ratio
    raise ProposalMismatch(f"unknown proposal {proposal!r}")


def _axis_block(component, dim, cfg, sub=0, fixed_xi=None, fixed_ratio=None):
    axis_id = AXIS_ID[component.axis]
    m = cfg.m
    if fixed_xi is not None:
        xi = np.full(m, fixed_xi)
        ratio = np.full(m, fixed_ratio)
    else:
        rng_xi = rng_for(cfg.seed, axis_id, sub, XI_STREAM)
        proposal = cfg.proposal_for(component)
        if cfg.strategy == "block":
            n_xi = m // cfg.block_size
            xi, ratio = _sample_xi(component, proposal, n_xi, rng_xi)
            xi = np.repeat(xi, cfg.block_size)
            ratio = np.repeat(ratio, cfg.block_size)
        else:
            xi, ratio = _sample_xi(component, proposal, m, rng_xi)
    g = rng_for(cfg.seed, axis_id, sub, G_STREAM).standard_normal((m, dim))
    probs = ()
    if component.is_atomic:
        probs = tuple(w / component.mass for _, w in component.atoms)
    return AxisDraws(
        axis=component.axis,
        sub=sub,
        c=complex(component.mass * _axis_phase(component.axis)),
        xi=xi,
        g=g,
        ratio=ratio,
        atom_probs=probs,
    )


def _axis_phase(axis):
    return {"re+": 1.0, "re-": -1.0, "im+": 1j, "im-": -1j}[axis]


def sample_draws(decomp: FourierDecomposition, dim: int, cfg: UrfConfig) -> UrfDraws:
    """Draw (xi_i, g_i) pairs for every active component.

    Deterministic in ``cfg.seed``; each component uses its own derived
    stream, so adding or removing components does not perturb the others.
    """
    blocks = tuple(_axis_block(c, dim, cfg) for c in decomp.active())
    return UrfDraws(dim=dim, config=cfg, blocks=blocks)


def atoms_concat_draws(
    decomp: FourierDecomposition, dim: int, cfg: UrfConfig
) -> UrfDraws:
    """Per-atom deterministic-frequency blocks, concatenated.

    Each atom of each active component becomes its own block of ``m``
    features with the frequency fixed at the atom and the importance ratio
    equal to the atom's normalized probability; the frequency integral is
    then handled exactly and only the Gaussian part is sampled.  With a
    single atom per component this reproduces ``sample_draws`` bit for bit.
    """
    if not decomp.all_atomic:
        raise NotAtomic("per-atom concatenation requires an atomic decomposition")
    blocks = []
    for comp in decomp.active():
        for k, (loc, w) in enumerate(comp.atoms):
            blocks.append(
                _axis_block(
                    comp, dim, cfg, sub=k, fixed_xi=loc, fixed_ratio=w / comp.mass
                )
            )
    return UrfDraws(dim=dim, config=cfg, blocks=tuple(blocks))


# ---------------------------------------------------------------------------
# feature maps


def lambda_feature(g: np.ndarray, z: np.ndarray, A: float) -> complex:
    """Bounded softmax-kernel feature; z.z is the bilinear square."""
    g = np.asarray(g, dtype=float)
    z = np.asarray(z)
    d = g.shape[-1]
    prefactor = (1.0 - 4.0 * A) ** (d / 4.0)
    exponent = (
        A * np.sum(g * g, axis=-1)
        + math.sqrt(1.0 - 4.0 * A) * np.sum(g * z, axis=-1)
        - np.sum(z * z, axis=-1) / 2.0
    )
    return prefactor * np.exp(exponent)


def _phi_block(x, block, A):
    m, d = block.g.shape
    gx = block.g @ x  # (m,)
    xx = np.sum(x * x)  # bilinear; complex-safe
    prefactor = (1.0 - 4.0 * A) ** (d / 4.0)
    exponent = (
        A * np.sum(block.g * block.g, axis=1)
        + math.sqrt(1.0 - 4.0 * A) * (2j * math.pi * block.xi) * gx
        + 2.0 * math.pi**2 * block.xi**2 * xx
    )
    return prefactor / math.sqrt(m) * np.exp(exponent)


def _psi_block(w, b, block, A):
    m, d = block.g.shape
    gw = block.g @ w
    ww = np.sum(w * w)
    prefactor = (1.0 - 4.0 * A) ** (d / 4.0)
    lam = prefactor * np.exp(
        A * np.sum(block.g * block.g, axis=1)
        + math.sqrt(1.0 - 4.0 * A) * gw
        - ww / 2.0
    )
    s = block.ratio * np.exp(2j * math.pi * block.xi * b)
    return block.c / math.sqrt(m) * s * lam


def phi(x: np.ndarray, draws: UrfDraws) -> FeatureVector:
    """Input-side feature vector; deterministic given the draws."""
    x = np.asarray(x)
    if x.shape != (draws.dim,):
        raise ValueError(f"expected input of dim {draws.dim}, got {x.shape}")
    A = draws.config.A
    entries = np.concatenate([_phi_block(x, b, A) for b in draws.blocks])
    return FeatureVector(entries=entries, layout=draws.layout)


def psi(w: np.ndarray, b: float, draws: UrfDraws) -> FeatureVector:
    """Parameter-side feature vector for one (weight row, bias) pair."""
    w = np.asarray(w)
    if w.shape != (draws.dim,):
        raise ValueError(f"expected weights of dim {draws.dim}, got {w.shape}")
    A = draws.config.A
    entries = np.concatenate([_psi_block(w, b, blk, A) for blk in draws.blocks])
    return FeatureVector(entries=entries, layout=draws.layout)


def phi_many(X: np.ndarray, draws: UrfDraws) -> np.ndarray:
    """Rows of Phi for each row of ``X``; (n, total_features) complex."""
    X = np.asarray(X)
    A = draws.config.A
    cols = []
    for blk in draws.blocks:
        m, d = blk.g.shape
        gx = X @ blk.g.T  # (n, m)
        xx = np.sum(X * X, axis=1)[:, None]
        prefactor = (1.0 - 4.0 * A) ** (d / 4.0)
        exponent = (
            A * np.sum(blk.g * blk.g, axis=1)[None, :]
            + math.sqrt(1.0 - 4.0 * A) * (2j * math.pi * blk.xi)[None, :] * gx
            + 2.0 * math.pi**2 * (blk.xi**2)[None, :] * xx
        )
        cols.append(prefactor / math.sqrt(m) * np.exp(exponent))
    return np.concatenate(cols, axis=1)


def psi_many(W: np.ndarray, b: np.ndarray, draws: UrfDraws) -> np.ndarray:
    """Rows of Psi for each (weight row, bias); (l, total_features) complex.

    Implemented as per-row psi calls so a derived feature-weight matrix is
    bit-identical to the row-by-row construction.
    """
    W = np.asarray(W)
    b = np.asarray(b)
    return np.stack([psi(W[i], float(b[i]), draws).entries for i in range(len(b))])


def kernel_estimate(px: FeatureVector, pw: FeatureVector) -> float:
    """Re of the bilinear feature dot product (the estimator proper)."""
    return kernel_estimate_complex(px, pw).real


def kernel_estimate_complex(px: FeatureVector, pw: FeatureVector) -> complex:
    """Full bilinear product; the imaginary part is a sampling diagnostic."""
    _like_layouts(px, pw)
    return complex((pw.entries[None, :] @ px.entries)[0])


def atoms_concat_phi(x, decomp, cfg) -> FeatureVector:
    return phi(np.asarray(x), atoms_concat_draws(decomp, len(np.asarray(x)), cfg))


def atoms_concat_psi(w, b, decomp, cfg) -> FeatureVector:
    return psi(np.asarray(w), b, atoms_concat_draws(decomp, len(np.asarray(w)), cfg))


# ---------------------------------------------------------------------------
# boundedness


def phi_entry_bound(draws: UrfDraws, max_norm_x: float) -> np.ndarray:
    """Per-entry magnitude bound for inputs with |x| <= max_norm_x, A <= 0.

    sup over g of exp(A|g|^2) is 1, the g.z term is purely imaginary for
    real inputs, and -(z.z)/2 = 2 pi^2 xi^2 |x|^2, so the bound is the
    prefactor times exp(2 pi^2 xi^2 R^2) at each drawn xi.
    """
    A = draws.config.A
    if A > 0:
        raise ValueError("bound requires A <= 0")
    out = []
    for blk in draws.blocks:
        m, d = blk.g.shape
        pref = (1.0 - 4.0 * A) ** (d / 4.0) / math.sqrt(m)
        out.append(pref * np.exp(2.0 * math.pi**2 * blk.xi**2 * max_norm_x**2))
    return np.concatenate(out)


def psi_entry_bound(draws: UrfDraws, max_norm_w: float) -> np.ndarray:
    """Per-entry magnitude bound for weights with |w| <= max_norm_w, A < 0.

    Maximizing A t^2 + sqrt(1-4A) t R - R^2/2 over t = |g| gives the
    exponent (1-4A) R^2 / (4|A|) - R^2/2; |exp(2 pi i xi b)| = 1 for any
    real bias, and the drawn importance ratio enters linearly.
    """
    A = draws.config.A
    if A >= 0:
        raise ValueError("parameter-side bound requires A < 0")
    R = max_norm_w
    exponent = (1.0 - 4.0 * A) * R * R / (4.0 * abs(A)) - R * R / 2.0
    out = []
    for blk in draws.blocks:
        m, d = blk.g.shape
        pref = (1.0 - 4.0 * A) ** (d / 4.0) / math.sqrt(m)
        out.append(pref * abs(blk.c) * blk.ratio * math.exp(exponent))
    return np.concatenate(out)


def per_term_bound(draws: UrfDraws, max_norm_x: float, max_norm_w: float) -> float:
    """Bound on one averaged estimator term |m * phi_i * psi_i| summed
    over components; usable as the bounded-increment constant in
    concentration bounds."""
    bphi = phi_entry_bound(draws, max_norm_x)
    bpsi = psi_entry_bound(draws, max_norm_w)
    m = draws.config.m
    per_block = []
    start = 0
    for blk in draws.blocks:
        n = len(blk.xi)
        per_block.append(m * np.max(bphi[start : start + n] * bpsi[start : start + n]))
        start += n
    return float(sum(per_block))


# ---------------------------------------------------------------------------
# batched instantiations (harness fast path)


@dataclass(frozen=True)
class BatchAxisDraws:
    axis: str
    sub: int
    c: complex
    xi: np.ndarray  # (n, m)
    g: np.ndarray  # (n, m, dim)
    ratio: np.ndarray  # (n, m)


@dataclass(frozen=True)
class BatchUrfDraws:
    dim: int
    config: UrfConfig
    n: int
    blocks: tuple[BatchAxisDraws, ...]


def sample_draws_batch(
    decomp: FourierDecomposition, dim: int, cfg: UrfConfig, n: int
) -> BatchUrfDraws:
    """``n`` independent instantiations drawn in one shot.

    Equivalent in distribution to ``n`` calls of sample_draws with derived
    seeds; the batch shares one stream per component, so it is its own
    deterministic scheme rather than a reshaping of the single-draw one.
    """
    blocks = []
    for comp in decomp.active():
        axis_id = AXIS_ID[comp.axis]
        rng_xi = rng_for(cfg.seed, axis_id, 0, XI_STREAM)
        proposal = cfg.proposal_for(comp)
        if cfg.strategy == "block":
            n_xi = cfg.m // cfg.block_size
            xi, ratio = _sample_xi(comp, proposal, n * n_xi, rng_xi)
            xi = np.repeat(xi.reshape(n, n_xi), cfg.block_size, axis=1)
            ratio = np.repeat(ratio.reshape(n, n_xi), cfg.block_size, axis=1)
        else:
            xi, ratio = _sample_xi(comp, proposal, n * cfg.m, rng_xi)
            xi = xi.reshape(n, cfg.m)
            ratio = ratio.reshape(n, cfg.m)
        g = rng_for(cfg.seed, axis_id, 0, G_STREAM).standard_normal((n, cfg.m, dim))
        blocks.append(
            BatchAxisDraws(
                axis=comp.axis,
                sub=0,
                c=complex(comp.mass * _axis_phase(comp.axis)),
                xi=xi,
                g=g,
                ratio=ratio,
            )
        )
    return BatchUrfDraws(dim=dim, config=cfg, n=n, blocks=tuple(blocks))


def kernel_estimate_batch(
    x: np.ndarray, w: np.ndarray, b: float, bdraws: BatchUrfDraws
) -> np.ndarray:
    """Complex estimator value per instantiation; (n,) array."""
    A = bdraws.config.A
    x = np.asarray(x)
    w = np.asarray(w)
    out = np.zeros(bdraws.n, dtype=complex)
    xx = np.sum(x * x)
    ww = np.sum(w * w)
    for blk in bdraws.blocks:
        n, m, d = blk.g.shape
        pref = (1.0 - 4.0 * A) ** (d / 2.0)  # one (d/4) power per side
        gx = blk.g @ x  # (n, m)
        gw = blk.g @ w
        gg = np.sum(blk.g * blk.g, axis=2)
        exponent = (
            2.0 * A * gg
            + math.sqrt(1.0 - 4.0 * A) * ((2j * math.pi * blk.xi) * gx + gw)
            + 2.0 * math.pi**2 * blk.xi**2 * xx
            - ww / 2.0
        )
        s = blk.ratio * np.exp(2j * math.pi * blk.xi * b)
        out += blk.c * pref * np.mean(s * np.exp(exponent), axis=1)
    return out
