"""
Field renderer for two-dimensional solutions.

This module rasterizes potentials and fluxes onto pygame surfaces and saves
them as PNG files. It never opens a window: surfaces are built from numpy
arrays with pygame.surfarray and written with pygame.image.save.
"""
import logging
import os
from typing import List, Optional, Tuple

import numpy as np

# no import banner on stdout
os.environ.setdefault("PYGAME_HIDE_SUPPORT_PROMPT", "1")
import pygame  # noqa: E402

from src.core.errors import GeometryError
from src.discretization.grid import FluxField, Grid, ScalarField

logger = logging.getLogger("congestion.render")

ARROW_COLOR = (20, 20, 20)


def _check_planar(grid: Grid) -> None:
    if grid.ndim != 2:
        raise GeometryError(f"Rendering needs a 2-D grid, got {grid.ndim}-D")


def _image_array(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Node values as a (width, height) array with axis 1 pointing up."""
    return np.asarray(values, dtype=float).reshape(grid.dims)[:, ::-1]


def diverging_colors(values: np.ndarray) -> np.ndarray:
    """
    Map values to blue (negative), white (zero) and red (positive).

    Returns:
        uint8 array with a trailing RGB axis.
    """
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    t = values / scale if scale > 0.0 else np.zeros_like(values)
    rgb = np.empty(values.shape + (3,))
    rgb[..., 0] = np.where(t < 0.0, 1.0 + t, 1.0)
    rgb[..., 1] = 1.0 - np.abs(t)
    rgb[..., 2] = np.where(t > 0.0, 1.0 - t, 1.0)
    return np.clip(255.0 * rgb, 0, 255).astype(np.uint8)


def intensity_colors(values: np.ndarray) -> np.ndarray:
    """Map nonnegative values to a dark-to-yellow ramp."""
    scale = float(np.max(values)) if values.size else 0.0
    t = values / scale if scale > 0.0 else np.zeros_like(values)
    rgb = np.stack([np.sqrt(t), t, 0.25 * (1.0 - t)], axis=-1)
    return np.clip(255.0 * rgb, 0, 255).astype(np.uint8)


def cell_vectors(flux: FluxField) -> np.ndarray:
    """
    Average the face fluxes around each cell into one vector per cell.

    Boundary faces carry no flux, so a cell next to the wall averages its
    single interior face with zero.

    Returns:
        Array of shape dims + (N,).
    """
    grid = flux.grid
    vectors = np.zeros(grid.dims + (grid.ndim,))
    offsets = grid.axis_offsets
    for axis in range(grid.ndim):
        shape = list(grid.dims)
        shape[axis] -= 1
        faces = flux.values[offsets[axis]:offsets[axis + 1]].reshape(shape)
        pad = [(0, 0)] * grid.ndim
        pad[axis] = (1, 1)
        padded = np.pad(faces, pad)
        low = [slice(None)] * grid.ndim
        high = [slice(None)] * grid.ndim
        low[axis] = slice(0, -1)
        high[axis] = slice(1, None)
        vectors[..., axis] = 0.5 * (padded[tuple(low)] + padded[tuple(high)])
    return vectors


def surface_size(grid: Grid, scale: int) -> Tuple[int, int]:
    """Pixel size of a rendered grid."""
    _check_planar(grid)
    if scale < 1:
        raise GeometryError(f"Render scale must be at least 1 pixel per cell, got {scale}")
    return grid.dims[0] * scale, grid.dims[1] * scale


def _scaled_surface(colors: np.ndarray, size: Tuple[int, int]) -> pygame.Surface:
    return pygame.transform.scale(pygame.surfarray.make_surface(colors), size)


def potential_surface(potential: ScalarField, scale: int = 8) -> pygame.Surface:
    """Render a potential with the diverging color map, one block per cell."""
    grid = potential.grid
    _check_planar(grid)
    values = _image_array(grid, potential.values - np.mean(potential.values))
    return _scaled_surface(diverging_colors(values), surface_size(grid, scale))


def flux_surface(flux: FluxField, scale: int = 8, arrows: bool = True) -> pygame.Surface:
    """
    Render |flux| per cell, optionally with a direction stroke per cell.

    Args:
        flux: Flux on a 2-D grid.
        scale: Pixels per cell.
        arrows: Draw direction strokes on cells carrying flow.
    """
    grid = flux.grid
    _check_planar(grid)
    vectors = cell_vectors(flux)
    magnitude = np.linalg.norm(vectors, axis=-1)
    surface = _scaled_surface(intensity_colors(magnitude[:, ::-1]), surface_size(grid, scale))

    largest = float(np.max(magnitude)) if magnitude.size else 0.0
    if arrows and largest > 0.0 and scale >= 4:
        height = grid.dims[1]
        for i, j in zip(*np.nonzero(magnitude > 1e-3 * largest)):
            direction = vectors[i, j] / magnitude[i, j]
            cx = (i + 0.5) * scale
            cy = (height - j - 0.5) * scale
            reach = 0.4 * scale
            start = (cx - reach * direction[0], cy + reach * direction[1])
            end = (cx + reach * direction[0], cy - reach * direction[1])
            pygame.draw.line(surface, ARROW_COLOR, start, end, 1)
    return surface


def save_surface(surface: pygame.Surface, path: str) -> bool:
    """
    Save a surface as an image file, creating the directory if needed.

    Returns:
        True if the image was written, False otherwise.
    """
    directory = os.path.dirname(path)
    if directory and not os.path.exists(directory):
        try:
            os.makedirs(directory)
        except OSError as e:
            logger.error(f"Cannot create {directory}: {e}")
            return False
    try:
        pygame.image.save(surface, path)
        return True
    except pygame.error as e:
        logger.error(f"Cannot save {path}: {e}")
        return False


def render_solution(flux: FluxField, potential: Optional[ScalarField], out_path: str,
                    scale: int = 8) -> List[str]:
    """
    Write PNG images of a solution.

    The flux image goes to out_path; when a potential is given it is written
    next to it with a '_potential' suffix.

    Returns:
        Paths of the images written.
    """
    written = []
    if save_surface(flux_surface(flux, scale), out_path):
        written.append(out_path)
    if potential is not None:
        root, ext = os.path.splitext(out_path)
        potential_path = f"{root}_potential{ext or '.png'}"
        if save_surface(potential_surface(potential, scale), potential_path):
            written.append(potential_path)
    logger.info(f"Rendered {len(written)} image(s): {', '.join(written)}")
    return written
