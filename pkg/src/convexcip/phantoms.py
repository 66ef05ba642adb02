"""Letter-shaped coefficients, the standard initial data and the reproduction scenarios."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np

from .grid import GridError, SpaceTimeGrid

BITMAP_SIZE = 16
LETTERS = ("A", "Omega")


def load_bitmap(letter: str) -> np.ndarray:
    """The stored 16x16 glyph as a (row, column) array of 0/1, row 0 at the top.

    Bitmap files hold 16 lines of 16 characters, '#' for 1 and '.' for 0.
    """
    if letter not in LETTERS:
        raise ValueError(f"unsupported letter {letter!r}; use one of {LETTERS} or a custom bitmap")
    text = resources.files("convexcip.data").joinpath(f"{letter}.txt").read_text()
    return parse_bitmap(text)


def parse_bitmap(text: str) -> np.ndarray:
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    if len(rows) != BITMAP_SIZE or any(len(r) != BITMAP_SIZE for r in rows):
        raise ValueError("bitmap must be 16 lines of 16 characters")
    if any(ch not in "#." for r in rows for ch in r):
        raise ValueError("bitmap may only contain '#' and '.'")
    return np.array([[ch == "#" for ch in r] for r in rows], dtype=np.int8)


def _to_grid_orientation(bitmap: np.ndarray) -> np.ndarray:
    # columns run along x1, rows run down along x2; fields are indexed [x1, x2]
    return bitmap[::-1, :].T


def letter_mask(letter: str, nx: int, bitmap: np.ndarray | None = None) -> np.ndarray:
    """Nearest-neighbour upsampling of the glyph to an nx-by-nx raster indexed [x1, x2]."""
    if nx < 8:
        raise ValueError("letter_mask needs nx >= 8")
    bm = load_bitmap(letter) if bitmap is None else np.asarray(bitmap, dtype=np.int8)
    cells = _to_grid_orientation(bm)
    idx = (np.arange(nx) * BITMAP_SIZE) // nx
    return cells[np.ix_(idx, idx)].astype(np.int8)


def mask_on_grid(letter: str, grid: SpaceTimeGrid, bitmap: np.ndarray | None = None) -> np.ndarray:
    """The glyph sampled at the grid's spatial nodes by the cell each node falls in.

    Unlike ``letter_mask`` this is tied to physical coordinates, so the same
    coefficient is seen by the forward and the inversion grids.
    """
    bm = load_bitmap(letter) if bitmap is None else np.asarray(bitmap, dtype=np.int8)
    cells = _to_grid_orientation(bm)
    s = (grid.x - grid.A) / (grid.B - grid.A) * BITMAP_SIZE
    idx = np.clip(np.floor(s + 1e-9).astype(int), 0, BITMAP_SIZE - 1)
    return cells[np.ix_(idx, idx)].astype(np.int8)


@dataclass(frozen=True)
class Phantom:
    letter: str = "A"
    background: float = 0.0
    amplitude: float = 1.0
    bitmap: tuple[str, ...] | None = None

    def _bitmap(self):
        return None if self.bitmap is None else parse_bitmap("\n".join(self.bitmap))

    def mask(self, grid: SpaceTimeGrid) -> np.ndarray:
        return mask_on_grid(self.letter, grid, self._bitmap())

    def fraction(self, grid: SpaceTimeGrid) -> np.ndarray:
        """Area fraction of each node's dual cell covered by the glyph, in [0, 1]."""
        cells = _to_grid_orientation(
            load_bitmap(self.letter) if self.bitmap is None else self._bitmap()
        ).astype(float)
        ov = _dual_overlap(grid)
        return ov @ cells @ ov.T

    def values(self, grid: SpaceTimeGrid, clip_nonnegative: bool = False) -> np.ndarray:
        """Nodal coefficient: background + amplitude * covered fraction of the dual cell."""
        c = self.background + self.amplitude * self.fraction(grid)
        return np.maximum(c, 0.0) if clip_nonnegative else c


def _dual_overlap(grid: SpaceTimeGrid) -> np.ndarray:
    # (nx, 16) matrix: share of node i's dual interval lying in bitmap column m
    h = grid.hx
    lo = np.maximum(grid.x - h / 2, grid.A)
    hi = np.minimum(grid.x + h / 2, grid.B)
    edges = grid.A + (grid.B - grid.A) * np.arange(BITMAP_SIZE + 1) / BITMAP_SIZE
    inter = np.clip(
        np.minimum(hi[:, None], edges[None, 1:]) - np.maximum(lo[:, None], edges[None, :-1]),
        0.0, None,
    )
    return inter / (hi - lo)[:, None]


def standard_initial(grid: SpaceTimeGrid) -> np.ndarray:
    """u(x, -T) = 1 + sin(pi (x1 - 1)) sin(pi (x2 - 1)) on (1, 2)^2."""
    if not (np.isclose(grid.A, 1.0) and np.isclose(grid.B, 2.0)):
        raise GridError("standard_initial is defined on the square (1, 2)^2")
    x1, x2 = grid.space_mesh()
    f = 1.0 + np.sin(np.pi * (x1 - 1.0)) * np.sin(np.pi * (x2 - 1.0))
    # the sines vanish on the boundary; remove rounding so f == g0 == 1 there
    f[0, :] = f[-1, :] = f[:, 0] = f[:, -1] = 1.0
    return f


# ---------------------------------------------------------------------------
# scenarios

SCENARIOS = ("test1_T1", "test1_T01", "test2_eps002", "test2_eps001", "test3_noisy")


@dataclass(frozen=True)
class Scenario:
    name: str
    T: float
    t0: float
    sigma: float = 0.0
    letter: str = "A"
    background: float = 0.0
    amplitude: float = 1.0
    A: float = 1.0
    B: float = 2.0
    g0: float = 1.0
    forward_nx: int = 129
    forward_nt: int = 129
    paper_forward_nx: int = 641
    paper_forward_nt: int = 513
    inverse_nx: int = 17
    inverse_nt: int = 17
    # detector layouts as node counts: 16 x 32 and 16 x 16 intervals
    g1_detectors: tuple[int, int] = (17, 33)
    f0_detectors: int = 17
    lam: float = 1.0
    beta: float = 0.01
    k: int = 3
    smoothing: bool = False
    seed: int = 20200101

    def forward_grid(self, paper_fine: bool = False) -> SpaceTimeGrid:
        if paper_fine:
            return SpaceTimeGrid(self.A, self.B, self.T, self.paper_forward_nx, self.paper_forward_nt)
        return SpaceTimeGrid(self.A, self.B, self.T, self.forward_nx, self.forward_nt)

    def inverse_grid(self) -> SpaceTimeGrid:
        return SpaceTimeGrid(self.A, self.B, self.T, self.inverse_nx, self.inverse_nt)

    def phantom(self) -> Phantom:
        return Phantom(self.letter, self.background, self.amplitude)

    def serialize(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()


def scenario(test: str, letter: str = "A") -> Scenario:
    if test == "test1_T1":
        return Scenario(test, T=1.0, t0=0.0, letter=letter)
    if test == "test1_T01":
        return Scenario(test, T=0.1, t0=0.0, letter=letter)
    if test == "test2_eps002":
        return Scenario(test, T=0.1, t0=-0.08, letter=letter)
    if test == "test2_eps001":
        return Scenario(test, T=0.1, t0=-0.09, letter=letter)
    if test == "test3_noisy":
        return Scenario(test, T=1.0, t0=0.0, sigma=0.05, letter=letter,
                        f0_detectors=161, smoothing=True)
    raise ValueError(f"unknown scenario {test!r}; choose from {SCENARIOS}")
