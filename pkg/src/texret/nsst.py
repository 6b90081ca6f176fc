"""Forward non-subsampled shearlet transform.

A single channel is split by a nonsubsampled (a trous) Laplacian pyramid
into one lowpass plane and one detail plane per scale, and each detail
plane is then split into directional subbands by smooth frequency-domain
wedge windows.  Every output plane keeps the full input resolution, all
boundary handling is circular, and the whole transform is linear and
exactly equivariant under circular shifts.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DecompositionError

SUPPORTED_DIRECTIONS = (2, 4, 8, 16, 32)

# Index key for one directional subband of a decomposed channel.
BandKey = tuple[int, int]  # (scale, direction), both 1-based


@dataclass(frozen=True)
class NsstConfig:
    """Transform configuration.

    ``directions_per_scale`` is ordered coarse to fine: entry 0 is the
    direction count of the scale right above the lowpass residual.
    """

    scales: int = 3
    directions_per_scale: tuple[int, ...] = (4, 8, 16)
    pyramid_filter_length: int = 8

    def __post_init__(self):
        if self.scales < 1:
            raise ConfigurationError(f"need at least one scale, got {self.scales}")
        dirs = tuple(int(d) for d in self.directions_per_scale)
        object.__setattr__(self, "directions_per_scale", dirs)
        if len(dirs) != self.scales:
            raise ConfigurationError(
                f"directions_per_scale has {len(dirs)} entries for {self.scales} scales"
            )
        for d in dirs:
            if d not in SUPPORTED_DIRECTIONS:
                raise ConfigurationError(
                    f"unsupported direction count {d}; choose from {SUPPORTED_DIRECTIONS}"
                )
        _validate_filter_length(self.pyramid_filter_length)

    @property
    def num_bands(self) -> int:
        return sum(self.directions_per_scale)

    def band_keys(self) -> list[BandKey]:
        """All (scale, direction) pairs, scale-major, coarse to fine."""
        return [
            (s, d)
            for s in range(1, self.scales + 1)
            for d in range(1, self.directions_per_scale[s - 1] + 1)
        ]


@dataclass
class SubbandPyramid:
    """Decomposition of one channel: lowpass residual plus directional bands.

    ``bands`` maps (scale, direction) to a full-resolution coefficient
    plane; scale 1 is the coarsest directional scale.
    """

    config: NsstConfig
    lowpass: np.ndarray
    bands: dict[BandKey, np.ndarray] = field(default_factory=dict)


def _validate_filter_length(length: int) -> int:
    # The contract accepts the degenerate length-2 design (Haar-like pair).
    if length % 2 != 0 or not (2 <= length <= 32):
        raise ConfigurationError(
            f"pyramid filter length must be even and in [2, 32], got {length}"
        )
    return length


def validate_plane(plane: np.ndarray) -> np.ndarray:
    """Check a channel plane: 2-D, at least 16x16, all values finite."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ConfigurationError(f"expected a 2-D plane, got ndim={plane.ndim}")
    h, w = plane.shape
    if h < 16 or w < 16:
        raise ConfigurationError(f"plane must be at least 16x16, got {h}x{w}")
    if not np.all(np.isfinite(plane)):
        raise ConfigurationError("plane contains non-finite values")
    return plane


# ---------------------------------------------------------------------------
# Maximally-flat half-band filter pair
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PyramidFilterPair:
    """Zero-phase analysis pair for the nonsubsampled pyramid.

    Both taps arrays have odd length with the center at ``len // 2``.
    ``highpass`` is the unit impulse minus ``lowpass``, so the two
    amplitude responses sum to one at every frequency and the additive
    synthesis identity (lowpass branch + highpass branch = input) holds.
    """

    lowpass: np.ndarray
    highpass: np.ndarray

    @property
    def center(self) -> int:
        return len(self.lowpass) // 2


def _maxflat_cosine_series(half_order: int) -> np.ndarray:
    """Cosine-series coefficients of the maximally flat half-band amplitude.

    The amplitude is ((1+x)/2)^K * P_K((1-x)/2) with x = cos(w) and
    P_K(y) = sum_k C(K-1+k, k) y^k, which satisfies A(w) + A(pi - w) = 1
    and is maximally flat at w = 0 and w = pi.
    """
    K = half_order
    ppoly = np.polynomial.polynomial
    p = np.zeros(1)
    y = np.array([0.5, -0.5])  # y = (1 - x) / 2
    for k in range(K):
        p = ppoly.polyadd(p, math.comb(K - 1 + k, k) * ppoly.polypow(y, k))
    a = ppoly.polymul(ppoly.polypow(np.array([0.5, 0.5]), K), p)
    return np.polynomial.chebyshev.poly2cheb(a)


def design_pyramid_filters(length: int = 8) -> PyramidFilterPair:
    """Design the maximally flat half-band lowpass of the given even length
    and its complementary highpass.
    """
    _validate_filter_length(length)
    K = length // 2
    c = _maxflat_cosine_series(K)
    n = len(c)  # == 2K
    taps = np.zeros(2 * n - 1)
    taps[n - 1] = c[0]
    for m in range(1, n):
        taps[n - 1 + m] = c[m] / 2.0
        taps[n - 1 - m] = c[m] / 2.0
    hi = -taps.copy()
    hi[n - 1] = 1.0 - taps[n - 1]
    taps.setflags(write=False)
    hi.setflags(write=False)
    return PyramidFilterPair(lowpass=taps, highpass=hi)


def filter_amplitude(taps: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Zero-phase amplitude response of symmetric taps at frequencies omega."""
    center = len(taps) // 2
    out = np.full_like(np.asarray(omega, dtype=np.float64), taps[center])
    for m in range(1, center + 1):
        out += 2.0 * taps[center + m] * np.cos(m * np.asarray(omega))
    return out


# ---------------------------------------------------------------------------
# Nonsubsampled Laplacian pyramid
# ---------------------------------------------------------------------------

def _lowpass_responses(filters: PyramidFilterPair, n: int, steps: int) -> list[np.ndarray]:
    """Cumulative 1-D lowpass responses after each a trous step.

    Step j filters with the lowpass upsampled by 2**(j-1); on a circular
    grid that is exactly an amplitude evaluation at the stretched
    frequency, so responses are built analytically instead of via padded
    FFTs of the kernels.
    """
    omega = 2.0 * np.pi * np.fft.fftfreq(n)
    responses = []
    cum = np.ones(n)
    for j in range(1, steps + 1):
        cum = cum * filter_amplitude(filters.lowpass, (2 ** (j - 1)) * omega)
        responses.append(cum)
    return responses


def _pyramid_spectra(plane: np.ndarray, steps: int,
                     filters: PyramidFilterPair) -> tuple[np.ndarray, list[np.ndarray]]:
    """FFT-domain lowpass spectrum after all steps plus per-step detail spectra.

    Detail spectra come out in processing order: index 0 is the finest
    ring (no filter upsampling), the last index sits right above the
    final lowpass.
    """
    h, w = plane.shape
    spec = np.fft.fft2(plane)
    resp_r = _lowpass_responses(filters, h, steps)
    resp_c = _lowpass_responses(filters, w, steps)
    details = []
    prev = spec
    for j in range(steps):
        cur = spec * np.outer(resp_r[j], resp_c[j])
        details.append(prev - cur)
        prev = cur
    return prev, details


def nonsubsampled_pyramid(plane: np.ndarray, scales: int,
                          filters: PyramidFilterPair) -> tuple[np.ndarray, list[np.ndarray]]:
    """Nonsubsampled Laplacian pyramid of a plane.

    Returns (lowpass, details) where details[j] is the detail plane of
    step j+1 (finest first) and every plane has the input's shape.  The
    step-j filters are the design pair upsampled a trous style by
    2**(j-1); convolution is circular.  The additive synthesis identity
    holds: lowpass + sum(details) reproduces the input.
    """
    plane = validate_plane(plane)
    if scales < 1:
        raise ConfigurationError(f"need at least one scale, got {scales}")
    low_spec, detail_specs = _pyramid_spectra(plane, scales, filters)
    lowpass = np.fft.ifft2(low_spec).real
    details = [np.fft.ifft2(d).real for d in detail_specs]
    return lowpass, details


# ---------------------------------------------------------------------------
# Shearing windows
# ---------------------------------------------------------------------------

def _meyer_ramp(t: np.ndarray) -> np.ndarray:
    """Smooth polynomial ramp on [0, 1] with ramp(t) + ramp(1 - t) = 1."""
    t = np.clip(t, 0.0, 1.0)
    return t ** 4 * (35.0 - 84.0 * t + 70.0 * t ** 2 - 20.0 * t ** 3)


_window_cache: dict[tuple[int, int, int], np.ndarray] = {}
_window_cache_lock = threading.Lock()


def _perimeter_coordinate(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Projective angular coordinate in [0, 4) per frequency bin.

    Each bin is mapped to the point where its ray through the origin
    crosses the unit square; the position along half the square's
    perimeter parameterizes direction.  Antipodal bins get the same
    coordinate, which makes every wedge an origin-symmetric pair.

    Returns (coordinate, ambiguous_mask); the mask marks DC and, on
    even-sized axes, the aliased Nyquist row/column where a single bin
    stands for two opposite frequencies and no direction is well defined.
    """
    fx = np.fft.fftfreq(width) * width    # frequency index along axis 1
    fy = np.fft.fftfreq(height) * height  # frequency index along axis 0
    X = np.broadcast_to(fx[None, :], (height, width)).astype(np.float64)
    Y = np.broadcast_to(fy[:, None], (height, width)).astype(np.float64)

    m = np.maximum(np.abs(X), np.abs(Y))
    ambiguous = m == 0
    if width % 2 == 0:
        ambiguous = ambiguous | (X == -(width // 2))
    if height % 2 == 0:
        ambiguous = ambiguous | (Y == -(height // 2))

    safe_m = np.where(m == 0, 1.0, m)
    xn = X / safe_m
    yn = Y / safe_m

    s = np.zeros((height, width))
    right = xn == 1.0
    top = (yn == 1.0) & ~right
    left = (xn == -1.0) & ~right & ~top
    bottom = (yn == -1.0) & ~right & ~top & ~left
    s[right] = yn[right]
    s[top] = 2.0 - xn[top]
    s[left] = 4.0 - yn[left]
    s[bottom] = 6.0 + xn[bottom]
    return np.mod(s, 4.0), ambiguous


def shear_filter_bank(num_directions: int, width: int, height: int) -> np.ndarray:
    """Frequency-domain direction windows tiling the plane into wedge pairs.

    Returns an array of shape (num_directions, height, width) of real
    windows whose squared magnitudes sum to one at every grid frequency.
    Bins with no well-defined direction (DC and the aliased Nyquist
    row/column of even grids, where origin symmetry and directionality
    cannot both hold) receive an equal 1/sqrt(D) split so that both the
    unity tiling and the symmetry are exact on the discrete grid.
    """
    if num_directions not in SUPPORTED_DIRECTIONS:
        raise ConfigurationError(
            f"unsupported direction count {num_directions}; "
            f"choose from {SUPPORTED_DIRECTIONS}"
        )
    if width < 16 or height < 16:
        raise ConfigurationError(f"grid must be at least 16x16, got {height}x{width}")

    key = (num_directions, width, height)
    with _window_cache_lock:
        cached = _window_cache.get(key)
    if cached is not None:
        return cached

    p, ambiguous = _perimeter_coordinate(width, height)
    delta = 4.0 / num_directions
    windows = np.empty((num_directions, height, width))
    for d in range(num_directions):
        dist = np.mod(p - d * delta + 2.0, 4.0) - 2.0
        r = np.abs(dist) / delta
        w = np.where(r < 1.0, np.cos(0.5 * np.pi * _meyer_ramp(r)), 0.0)
        windows[d] = w
    windows[:, ambiguous] = 1.0 / math.sqrt(num_directions)
    windows.setflags(write=False)

    with _window_cache_lock:
        _window_cache.setdefault(key, windows)
    return windows


# ---------------------------------------------------------------------------
# Full decomposition
# ---------------------------------------------------------------------------

def nsst_decompose(plane: np.ndarray, config: NsstConfig,
                   filters: PyramidFilterPair | None = None) -> SubbandPyramid:
    """Decompose one channel plane into its full subband pyramid.

    Scale s (1 = coarsest) takes the pyramid detail ring of step
    S + 1 - s and splits it with that scale's direction windows in the
    frequency domain.  All subbands keep the input resolution.
    """
    plane = validate_plane(plane)
    h, w = plane.shape
    S = config.scales
    if h < 2 ** S or w < 2 ** S:
        raise DecompositionError(
            f"plane {h}x{w} too small for {S} scales (needs at least {2 ** S} per axis)"
        )
    if filters is None:
        filters = design_pyramid_filters(config.pyramid_filter_length)

    low_spec, detail_specs = _pyramid_spectra(plane, S, filters)
    bands: dict[BandKey, np.ndarray] = {}
    for s in range(1, S + 1):
        num_dirs = config.directions_per_scale[s - 1]
        detail = detail_specs[S - s]  # coarse config scale <-> late pyramid step
        windows = shear_filter_bank(num_dirs, w, h)
        for d in range(1, num_dirs + 1):
            bands[(s, d)] = np.fft.ifft2(detail * windows[d - 1]).real
    lowpass = np.fft.ifft2(low_spec).real
    return SubbandPyramid(config=config, lowpass=lowpass, bands=bands)


def export_subbands(pyramids: list[SubbandPyramid], directory) -> None:
    """Debug dump: one raw little-endian float64 plane per directional band.

    Files are named ``c{channel}_s{scale}_d{direction}.f64`` and a
    ``manifest.txt`` records the dimensions and configuration.
    """
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for c, pyr in enumerate(pyramids):
        h, w = pyr.lowpass.shape
        cfg = pyr.config
        lines.append(
            f"channel={c} height={h} width={w} scales={cfg.scales} "
            f"directions={','.join(map(str, cfg.directions_per_scale))} "
            f"filter_length={cfg.pyramid_filter_length}"
        )
        for (s, d), band in sorted(pyr.bands.items()):
            name = f"c{c}_s{s}_d{d}.f64"
            band.astype("<f8").tofile(directory / name)
            lines.append(f"{name} rows={band.shape[0]} cols={band.shape[1]}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")
