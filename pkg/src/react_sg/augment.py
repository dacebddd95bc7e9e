import numpy as np
from scipy import ndimage

from .config import AugmentConfig
from .errors import DimensionMismatchError
from .models import DescriptorMode


def to_patch(descriptor: np.ndarray, config: AugmentConfig) -> np.ndarray:
    shape = (config.patch_height, config.patch_width, config.patch_channels)
    if descriptor.size != int(np.prod(shape)):
        msg = (
            f"Patch dims {shape} do not fit a descriptor "
            f"of length {descriptor.size}"
        )
        raise DimensionMismatchError(msg)
    return descriptor.reshape(shape)


def flip_patch(patch: np.ndarray) -> np.ndarray:
    return patch[:, ::-1, :].copy()


def rotate_patch(patch: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate an (h, w, c) raster about its centre, bilinear, zero fill."""
    if angle_deg == 0.0:
        return patch.copy()
    theta = np.deg2rad(angle_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    rotation = np.array([[cos, -sin], [sin, cos]])
    height, width = patch.shape[:2]
    center = np.array([(height - 1) / 2.0, (width - 1) / 2.0])
    offset = center - rotation @ center
    channels = [
        ndimage.affine_transform(
            patch[..., ch],
            rotation,
            offset=offset,
            order=1,
            mode="grid-constant",
            cval=0.0,
        )
        for ch in range(patch.shape[2])
    ]
    return np.stack(channels, axis=-1)


def perturb_descriptor(
    descriptor: np.ndarray,
    rng: np.random.Generator,
    noise_amplitude: float,
    occlusion_fraction: float,
) -> np.ndarray:
    """Additive Gaussian noise, then a random coordinate subset zeroed."""
    out = descriptor + noise_amplitude * rng.standard_normal(descriptor.size)
    n_hidden = int(round(occlusion_fraction * descriptor.size))
    if n_hidden:
        out[rng.choice(descriptor.size, size=n_hidden, replace=False)] = 0.0
    return out


def augment(
    descriptor: object,
    config: AugmentConfig,
    rng: np.random.Generator,
    angle_deg: float | None = None,
) -> np.ndarray:
    data = np.asarray(descriptor, dtype=float).ravel()
    if config.mode == DescriptorMode.PATCH:
        patch = to_patch(data, config)
        if config.flip:
            patch = flip_patch(patch)
        if angle_deg is None:
            angle_deg = rng.uniform(
                -config.max_rotation_deg, config.max_rotation_deg
            )
        return rotate_patch(patch, angle_deg).reshape(-1)
    return perturb_descriptor(
        data, rng, config.noise_amplitude, config.occlusion_fraction
    )
