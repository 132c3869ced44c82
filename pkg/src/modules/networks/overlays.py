__all__ = ["time_mip", "render_overlay", "write_overlays"]

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from src.modules.tensor.volume import MaskVolume, TissueClass  # noqa: E402

LESION_COLORS = ListedColormap([(0.0, 0.0, 0.0, 0.0), (0.1, 0.8, 0.1, 0.45), (0.9, 0.1, 0.1, 0.6)])
"Transparent healthy tissue, green penumbra, red core"


def time_mip(volume: np.ndarray) -> np.ndarray:
    """Maximum intensity projection over time of an (X, Y, Z, T) volume."""
    return np.asarray(volume).max(axis=-1)


def render_overlay(image: np.ndarray, class_map: np.ndarray, path: Path, title: str = "") -> None:
    """
    Grayscale (X, Y) image with penumbra and core painted over it. X runs horizontally.
    """
    lesion = np.where(np.isin(class_map, [TissueClass.PENUMBRA, TissueClass.CORE]), class_map, 0)
    fig, ax = plt.subplots(figsize=(4, 4))
    try:
        ax.imshow(image.T, cmap="gray", origin="lower")
        ax.imshow(lesion.T, cmap=LESION_COLORS, vmin=0, vmax=2, origin="lower", interpolation="nearest")
        ax.set_title(title)
        ax.axis("off")
        fig.savefig(path, dpi=100, bbox_inches="tight")
    finally:
        plt.close(fig)


def write_overlays(volume: np.ndarray, mask: MaskVolume, out_dir: Path, stem: str) -> list[Path]:
    """
    One PNG per slice: `<stem>_slice<z>.png`.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    mip = time_mip(volume)
    paths = []
    for z in range(mask.depth):
        path = out_dir / f"{stem}_slice{z:02d}.png"
        render_overlay(mip[:, :, z], mask.labels[:, :, z], path, title=f"{stem} slice {z}")
        paths.append(path)
    return paths
