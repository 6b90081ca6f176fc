"""Per-image retrieval signatures.

A signature is the full statistical description of one image patch: a
fitted marginal per directional subband plus one correlation matrix per
dependence group.  Six grouping schemes are supported, from a single
all-subband group down to no groups at all, including a bivariate
neighborhood scheme whose second member is the in-band neighbor with
maximal mutual information.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .copula import fit_sigma, gaussianize
from .errors import ConfigurationError, DegenerateSampleError, ShapeError
from .marginals import (FAMILY_GG, FAMILY_TLS, FitInfo, GgParams, MarginalModel,
                        TlsParams, fit_marginal_full)
from .nsst import NsstConfig, nsst_decompose, validate_plane

SCHEME_ALL = "scheme1"
SCHEME_PER_SCALE = "scheme2"
SCHEME_PER_DIRECTION = "scheme3"
SCHEME_PER_CHANNEL = "scheme4"
SCHEME_INTRA = "intra"
SCHEME_INDEPENDENT = "independent"

SCHEMES = (SCHEME_ALL, SCHEME_PER_SCALE, SCHEME_PER_DIRECTION,
           SCHEME_PER_CHANNEL, SCHEME_INTRA, SCHEME_INDEPENDENT)

CHANNELS = 3  # R, G, B

# Identifier of one subband: (channel 0..2, scale 1.., direction 1..)
SubbandId = tuple[int, int, int]

# Row-major 3x3 neighborhood offsets; index 4 is the center.
NEIGHBOR_OFFSETS = [(-1, -1), (-1, 0), (-1, 1),
                    (0, -1), (0, 0), (0, 1),
                    (1, -1), (1, 0), (1, 1)]

MI_BINS = 64

# 95% tolerance band constant for the dependence diagnostic plot.
CHI_BAND_CONSTANT = 1.78


def format_subband_id(sid: SubbandId) -> str:
    c, s, d = sid
    return f"c{c}_s{s}_d{d}"


def parse_subband_id(text: str) -> SubbandId:
    try:
        c, s, d = text.strip().split("_")
        if c[0] != "c" or s[0] != "s" or d[0] != "d":
            raise ValueError(text)
        return (int(c[1:]), int(s[1:]), int(d[1:]))
    except (ValueError, IndexError):
        raise ConfigurationError(f"bad subband id {text!r}; expected like c0_s2_d3")


def subband_order(config: NsstConfig) -> list[SubbandId]:
    """Canonical subband ordering: channel-major, then scale, then direction."""
    return [(c, s, d) for c in range(CHANNELS) for (s, d) in config.band_keys()]


@dataclass
class CopulaGroup:
    """One dependence group: its ordered members and their correlation matrix.

    For the bivariate neighborhood scheme the two members name the same
    subband and ``neighbor_offset`` records which in-band shift supplied
    the second column.
    """

    members: tuple[SubbandId, ...]
    sigma: np.ndarray
    neighbor_offset: tuple[int, int] | None = None


@dataclass
class Provenance:
    patch_id: str = ""
    stride: int = 1
    flags: list[str] = field(default_factory=list)


@dataclass
class Signature:
    scheme: str
    family: str
    config: NsstConfig
    marginals: list[MarginalModel]
    groups: list[CopulaGroup]
    provenance: Provenance = field(default_factory=Provenance)


def scheme_groups(scheme: str, config: NsstConfig) -> list[list[SubbandId]]:
    """Group membership lists for a scheme under a transform configuration.

    The bivariate neighborhood scheme returns singleton lists (the
    second member is derived per image); the independence scheme returns
    no groups.
    """
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    order = subband_order(config)
    dirs = config.directions_per_scale
    if scheme == SCHEME_ALL:
        return [order]
    if scheme == SCHEME_PER_SCALE:
        return [[sid for sid in order if sid[1] == s]
                for s in range(1, config.scales + 1)]
    if scheme == SCHEME_PER_DIRECTION:
        if len(set(dirs)) != 1:
            raise ConfigurationError(
                "per-direction grouping needs a uniform direction count across "
                f"scales, got {dirs}")
        return [[sid for sid in order if sid[2] == d]
                for d in range(1, dirs[0] + 1)]
    if scheme == SCHEME_PER_CHANNEL:
        return [[sid for sid in order if sid[0] == c] for c in range(CHANNELS)]
    if scheme == SCHEME_INTRA:
        return [[sid] for sid in order]
    return []


# ---------------------------------------------------------------------------
# Neighborhood machinery
# ---------------------------------------------------------------------------

@dataclass
class NeighborWindow:
    """Columns of a 3x3 sliding window over a subband (circular boundary).

    Column k holds, for every reference pixel, the coefficient at
    row-major offset ``NEIGHBOR_OFFSETS[k]``; column 4 is the subband's
    own vectorization.
    """

    columns: np.ndarray  # (pixels, 9)
    offsets: list[tuple[int, int]]


def build_neighbor_matrix(subband: np.ndarray) -> NeighborWindow:
    plane = np.asarray(subband, dtype=np.float64)
    if plane.ndim != 2 or plane.shape[0] < 3 or plane.shape[1] < 3:
        raise ShapeError("subband must be a 2-D plane of at least 3x3")
    cols = np.empty((plane.size, len(NEIGHBOR_OFFSETS)))
    for k, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
        cols[:, k] = np.roll(plane, (-dr, -dc), axis=(0, 1)).ravel()
    return NeighborWindow(columns=cols, offsets=list(NEIGHBOR_OFFSETS))


def mutual_information(a, b, bins: int = MI_BINS) -> float:
    """Plug-in mutual information (nats) from an equal-width joint histogram."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 1024:
        raise ShapeError(f"need at least 1024 samples, got {a.size}")
    joint, _, _ = np.histogram2d(a, b, bins=bins)
    n = joint.sum()
    p = joint / n
    pr = p.sum(axis=1)
    pc = p.sum(axis=0)
    terms = []
    rows, cols = np.nonzero(p)
    for i, j in zip(rows, cols):
        pij = p[i, j]
        terms.append(pij * math.log(pij / (pr[i] * pc[j])))
    # fsum gives an order-independent (correctly rounded) reduction, so the
    # estimate is exactly symmetric in its arguments.
    return math.fsum(terms)


def select_intra_scale_neighbor(subband: np.ndarray) -> tuple[tuple[int, int], np.ndarray]:
    """Pick the 3x3 neighbor offset with maximal mutual information.

    Returns the winning offset and the (pixels, 2) matrix of (center,
    neighbor) coefficient columns.  Ties break in row-major offset order.
    """
    window = build_neighbor_matrix(subband)
    center = window.columns[:, 4]
    best_k, best_mi = None, -np.inf
    for k, offset in enumerate(window.offsets):
        if offset == (0, 0):
            continue
        mi = mutual_information(center, window.columns[:, k])
        if mi > best_mi:
            best_k, best_mi = k, mi
    pair = np.column_stack([center, window.columns[:, best_k]])
    return window.offsets[best_k], pair


# ---------------------------------------------------------------------------
# Dependence diagnostics
# ---------------------------------------------------------------------------

@dataclass
class ChiPlotResult:
    lam: np.ndarray
    chi: np.ndarray
    pearson: float
    spearman: float
    kendall: float
    band_constant: float
    n: int

    @property
    def band_halfwidth(self) -> float:
        return self.band_constant / math.sqrt(self.n)


def chi_plot(a, b) -> ChiPlotResult:
    """Rank-based dependence diagnostic coordinates per observation.

    For each point, chi measures the local deviation of the empirical
    joint CDF from independence and lambda the distance from the
    marginal medians; independent data stays mostly inside the
    +-band_constant/sqrt(n) tolerance band.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    n = a.size
    if n < 100:
        raise ShapeError(f"need at least 100 samples, got {n}")

    F = np.empty(n)
    G = np.empty(n)
    H = np.empty(n)
    block = max(1, 2_000_000 // n)
    for start in range(0, n, block):
        stop = min(start + block, n)
        le_a = a[None, :] <= a[start:stop, None]
        le_b = b[None, :] <= b[start:stop, None]
        both = le_a & le_b
        F[start:stop] = (le_a.sum(axis=1) - 1) / (n - 1)
        G[start:stop] = (le_b.sum(axis=1) - 1) / (n - 1)
        H[start:stop] = (both.sum(axis=1) - 1) / (n - 1)

    denom = F * (1.0 - F) * G * (1.0 - G)
    with np.errstate(divide="ignore", invalid="ignore"):
        chi = (H - F * G) / np.sqrt(denom)
    chi[~np.isfinite(chi)] = 0.0
    Ft = F - 0.5
    Gt = G - 0.5
    lam = 4.0 * np.sign(Ft * Gt) * np.maximum(Ft ** 2, Gt ** 2)

    pearson = float(stats.pearsonr(a, b).statistic)
    spearman = float(stats.spearmanr(a, b).statistic)
    kendall = float(stats.kendalltau(a, b).statistic)
    return ChiPlotResult(lam=lam, chi=chi, pearson=pearson, spearman=spearman,
                         kendall=kendall, band_constant=CHI_BAND_CONSTANT, n=n)


# ---------------------------------------------------------------------------
# Signature extraction
# ---------------------------------------------------------------------------

def _fallback_marginal(family: str) -> MarginalModel:
    # Stand-in for a degenerate (constant) subband; flagged in provenance.
    if family == FAMILY_GG:
        return MarginalModel(FAMILY_GG, GgParams(alpha=1e-9, beta=2.0, mu=0.0))
    return MarginalModel(FAMILY_TLS, TlsParams(mu=0.0, sigma=1e-9, nu=100.0))


def _robust_sigma(y: np.ndarray, stride: int, flags: list[str],
                  members: tuple[SubbandId, ...]) -> np.ndarray:
    """Correlation fit that survives degenerate score columns.

    Constant columns (from degenerate subbands) are treated as
    independent: their rows in the result stay at identity, the rest is
    fitted normally.  Flagged so the condition is visible downstream.
    """
    try:
        return fit_sigma(y, stride=stride)
    except DegenerateSampleError:
        ys = y[::stride]
        good = np.flatnonzero(np.var(ys, axis=0) > 0.0)
        sigma = np.eye(y.shape[1])
        if good.size >= 2:
            sigma[np.ix_(good, good)] = fit_sigma(ys[:, good], stride=1)
        flags.append("degenerate-group:" + ",".join(
            format_subband_id(m) for m in members))
        return sigma


def extract_signature(channels, scheme: str, family: str, config: NsstConfig,
                      stride: int = 1, patch_id: str = "") -> Signature:
    """Build the retrieval signature of one 3-channel image patch.

    Each channel is decomposed, every directional subband is vectorized
    and centered, a marginal is fitted per subband, the Gaussian scores
    are formed, and one correlation matrix is fitted per scheme group.
    The lowpass residual is not modeled.
    """
    if family not in (FAMILY_GG, FAMILY_TLS):
        raise ConfigurationError(f"unknown marginal family {family!r}")
    group_ids = scheme_groups(scheme, config)  # validates scheme/config too
    if len(channels) != CHANNELS:
        raise ShapeError(f"expected {CHANNELS} channel planes, got {len(channels)}")
    planes = [validate_plane(ch) for ch in channels]
    if len({p.shape for p in planes}) != 1:
        raise ShapeError("channel planes differ in shape")

    order = subband_order(config)
    raw: dict[SubbandId, np.ndarray] = {}
    for c, plane in enumerate(planes):
        pyramid = nsst_decompose(plane, config)
        for (s, d), band in pyramid.bands.items():
            raw[(c, s, d)] = band

    flags: list[str] = []
    marginals: list[MarginalModel] = []
    scores: dict[SubbandId, np.ndarray] = {}
    for sid in order:
        vec = raw[sid].ravel()
        vec = vec - vec.mean()
        try:
            model, info = fit_marginal_full(vec, family)
            if family == FAMILY_GG:
                # the closed-form divergence requires exactly centered models;
                # the refit location on centered data is only rounding noise
                model = MarginalModel(FAMILY_GG, GgParams(
                    alpha=model.params.alpha, beta=model.params.beta, mu=0.0))
        except DegenerateSampleError:
            model, info = _fallback_marginal(family), FitInfo(converged=False,
                                                              clamped=True)
            flags.append(f"degenerate:{format_subband_id(sid)}")
        if info.clamped:
            flags.append(f"clamped:{format_subband_id(sid)}")
        marginals.append(model)
        if scheme != SCHEME_INDEPENDENT:
            scores[sid] = gaussianize([vec], [model])[:, 0]

    groups: list[CopulaGroup] = []
    if scheme == SCHEME_INTRA:
        shape = planes[0].shape
        for [sid] in group_ids:
            offset, _ = select_intra_scale_neighbor(raw[sid])
            y_center = scores[sid]
            y_neighbor = np.roll(y_center.reshape(shape),
                                 (-offset[0], -offset[1]), axis=(0, 1)).ravel()
            sigma = _robust_sigma(np.column_stack([y_center, y_neighbor]),
                                  stride, flags, (sid, sid))
            groups.append(CopulaGroup(members=(sid, sid), sigma=sigma,
                                      neighbor_offset=offset))
    elif scheme != SCHEME_INDEPENDENT:
        for ids in group_ids:
            y = np.column_stack([scores[sid] for sid in ids])
            sigma = _robust_sigma(y, stride, flags, tuple(ids))
            groups.append(CopulaGroup(members=tuple(ids), sigma=sigma))

    return Signature(scheme=scheme, family=family, config=config,
                     marginals=marginals, groups=groups,
                     provenance=Provenance(patch_id=patch_id, stride=stride,
                                           flags=flags))
