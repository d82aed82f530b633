"""Python access to the meshgs core: grids, isosurfaces, face Gaussians,
the splat rasterizer, image metrics and the training pipeline."""

from ._meshgs import (
    __version__,
    adaptive_transform,
    barycentric_table,
    chamfer,
    extract_isosurface,
    face_covariance,
    generate_harness,
    psnr,
    render_splats,
    run_gradcheck,
    ssim,
    train,
)

__all__ = [
    "__version__",
    "adaptive_transform",
    "barycentric_table",
    "chamfer",
    "extract_isosurface",
    "face_covariance",
    "generate_harness",
    "psnr",
    "render_splats",
    "run_gradcheck",
    "ssim",
    "train",
]
