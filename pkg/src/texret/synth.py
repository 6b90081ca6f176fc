"""Seeded synthetic texture corpus for dataset-free testing.

Each class is one 512x512 stationary color texture: seeded white noise
shaped by a class-specific anisotropic spectrum, mixed across channels
with class-specific weights, and modulated by a smooth random envelope
(the modulation makes the subband statistics heavy-tailed rather than
Gaussian).  Patches of one image share the class spectrum, so retrieval
quality reflects how well signatures capture it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class ClassSpectrum:
    theta: float
    kappa: float
    rho0: float
    rho_width: float
    slope: float
    floor: float


def _draw_spectrum(rng: np.random.Generator) -> ClassSpectrum:
    # Ranges are deliberately narrow so classes overlap spectrally and the
    # per-band energy profile alone does not give retrieval away; much of
    # the class identity sits in the cross-channel mixing instead.
    return ClassSpectrum(
        theta=float(rng.uniform(0.0, np.pi)),
        kappa=float(rng.uniform(0.6, 1.8)),
        rho0=float(rng.uniform(0.14, 0.17)),
        rho_width=float(rng.uniform(0.07, 0.09)),
        slope=float(rng.uniform(0.95, 1.05)),
        floor=float(rng.uniform(0.30, 0.38)),
    )


def _spectral_envelope(size: int, spec: ClassSpectrum) -> np.ndarray:
    f = np.fft.fftfreq(size)
    fy = f[:, None]
    fx = f[None, :]
    rho = np.hypot(fx, fy)
    phi = np.arctan2(fy, fx)
    radial = np.exp(-0.5 * ((rho - spec.rho0) / spec.rho_width) ** 2)
    with np.errstate(divide="ignore"):
        background = np.where(rho > 0.0, rho ** (-spec.slope), 0.0)
    background = background / max(background.max(), 1e-12)
    angular = np.exp(spec.kappa * (np.cos(2.0 * (phi - spec.theta)) - 1.0))
    env = radial * angular + spec.floor * background
    env[0, 0] = 0.0
    return env


def _shaped_field(rng: np.random.Generator, size: int,
                  env: np.ndarray) -> np.ndarray:
    white = rng.standard_normal((size, size))
    field = np.fft.ifft2(np.fft.fft2(white) * env).real
    return field / max(float(field.std()), 1e-12)


def _smooth_field(rng: np.random.Generator, size: int, cutoff: float) -> np.ndarray:
    f = np.fft.fftfreq(size)
    rho = np.hypot(f[None, :], f[:, None])
    env = np.exp(-0.5 * (rho / cutoff) ** 2)
    env[0, 0] = 0.0
    return _shaped_field(rng, size, env)


def synth_class_image(seed: int, class_index: int, size: int = 512) -> np.ndarray:
    """One (3, size, size) texture in [0, 1] for the given class."""
    rng = np.random.default_rng([seed, class_index])
    spec_a = _draw_spectrum(rng)
    spec_b = _draw_spectrum(rng)
    env_a = _spectral_envelope(size, spec_a)
    env_b = _spectral_envelope(size, spec_b)
    f_a = _shaped_field(rng, size, env_a)
    f_b = _shaped_field(rng, size, env_b)

    # Smooth shared amplitude modulation: a Gaussian scale mixture, so the
    # subband marginals come out leptokurtic like real textures.
    depth = float(rng.uniform(0.5, 0.9))
    envelope = 1.0 + depth * np.tanh(_smooth_field(rng, size, 0.02))

    channels = []
    for _ in range(3):
        wa, wb = rng.dirichlet((2.0, 2.0))
        wn = float(rng.uniform(0.2, 0.5))
        own = _shaped_field(rng, size, env_a if rng.random() < 0.5 else env_b)
        field = (wa * f_a + wb * f_b + wn * own) * envelope
        field = field / max(float(field.std()), 1e-12)
        channels.append(np.clip(0.5 + 0.16 * field, 0.0, 1.0))
    return np.stack(channels, axis=0)


def generate_corpus(out_dir, classes: int = 16, seed: int = 0,
                    size: int = 512) -> list[Path]:
    """Write one PNG per class; returns the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(classes):
        planes = synth_class_image(seed, k, size)
        rgb = np.round(planes.transpose(1, 2, 0) * 255.0).astype(np.uint8)
        path = out_dir / f"tex{k:02d}.png"
        Image.fromarray(rgb, mode="RGB").save(path)
        paths.append(path)
    return paths
