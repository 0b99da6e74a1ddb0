"""Time grids, 2-D tensor-product spatial grids, and grid transfers.

Refinement never moves existing nodes: time steps are bisected, and spatial
refinement bisects whole grid lines, so every coarse node survives into the
refined grid bitwise.  That containment is what lets restriction be plain
nodal injection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

EDGES = ("left", "right", "bottom", "top")
DIRICHLET = "dirichlet"
NEUMANN = "neumann"


class TransferError(ValueError):
    """Grids are not nested, so a transfer cannot be built."""


def _frozen_array(values) -> np.ndarray:
    a = np.asarray(values, dtype=float)
    a.setflags(write=False)
    return a


def trapezoid_weights(coords: np.ndarray) -> np.ndarray:
    """Composite trapezoid quadrature weights for sorted 1-D nodes."""
    h = np.diff(coords)
    w = np.zeros(len(coords))
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time nodes t_0 < t_1 < ... < t_N."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = _frozen_array(self.nodes)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise ValueError("need at least two time nodes")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("time nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, t0: float, t_final: float, dt: float) -> "TimeGrid":
        span = t_final - t0
        n = int(round(span / dt))
        if n < 1 or abs(n * dt - span) > 1e-9 * max(abs(span), 1.0):
            raise ValueError(f"dt={dt} does not evenly divide [{t0}, {t_final}]")
        nodes = t0 + dt * np.arange(n + 1)
        nodes[-1] = t_final
        return cls(nodes)

    @property
    def num_steps(self) -> int:
        return len(self.nodes) - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def t0(self) -> float:
        return float(self.nodes[0])

    @property
    def t_final(self) -> float:
        return float(self.nodes[-1])

    def halve_all_steps(self) -> "TimeGrid":
        """Insert the midpoint t_n + h_n/2 of every step; old nodes persist."""
        old = self.nodes
        out = np.empty(2 * len(old) - 1)
        out[::2] = old
        out[1::2] = old[:-1] + 0.5 * np.diff(old)
        return TimeGrid(out)

    def halve_marked(self, marked) -> "TimeGrid":
        """Bisect the steps whose indices appear in ``marked``."""
        marked = sorted(set(int(m) for m in marked))
        if marked and (marked[0] < 0 or marked[-1] >= self.num_steps):
            raise ValueError(f"step index out of range: {marked}")
        pieces = [self.nodes[:1]]
        for n in range(self.num_steps):
            if n in marked:
                pieces.append([self.nodes[n] + 0.5 * (self.nodes[n + 1]
                                                      - self.nodes[n])])
            pieces.append(self.nodes[n + 1:n + 2])
        return TimeGrid(np.concatenate(pieces))

    def locate(self, t: float) -> int:
        """Index of the node equal to t (bitwise or within round-off)."""
        idx = int(np.searchsorted(self.nodes, t))
        scale = max(abs(t), 1.0)
        for k in (idx - 1, idx, idx + 1):
            if 0 <= k < len(self.nodes) and abs(self.nodes[k] - t) <= 1e-12 * scale:
                return k
        raise KeyError(f"t={t!r} is not a node of this grid")

    def contains(self, other: "TimeGrid") -> bool:
        try:
            for t in other.nodes:
                self.locate(float(t))
        except KeyError:
            return False
        return True

    def to_json_dict(self) -> dict:
        return {"kind": "time_grid", "nodes": self.nodes.tolist()}

    @classmethod
    def from_json_dict(cls, data: dict) -> "TimeGrid":
        if data.get("kind") != "time_grid":
            raise ValueError("not a time_grid document")
        return cls(np.asarray(data["nodes"], dtype=float))


def _normalize_bc(bc) -> dict:
    if isinstance(bc, str):
        bc = {edge: bc for edge in EDGES}
    bc = dict(bc)
    for edge in EDGES:
        if bc.get(edge) not in (DIRICHLET, NEUMANN):
            raise ValueError(f"edge {edge!r} needs '{DIRICHLET}' or '{NEUMANN}'")
    return bc


@dataclass(frozen=True, eq=False)
class TensorGrid2D:
    """Tensor-product grid: x-lines times y-lines with per-edge BC tags.

    Unknowns are the nodes not lying on a Dirichlet edge, ordered row-major
    with y varying slowest (C order of an (ny+1, nx+1) nodal array).
    """

    xs: np.ndarray
    ys: np.ndarray
    bc: dict

    def __post_init__(self):
        xs, ys = _frozen_array(self.xs), _frozen_array(self.ys)
        for name, c in (("xs", xs), ("ys", ys)):
            if c.ndim != 1 or len(c) < 2:
                raise ValueError(f"{name} needs at least two coordinates")
            if not np.all(np.diff(c) > 0):
                raise ValueError(f"{name} must be strictly increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "bc", _normalize_bc(self.bc))

    @classmethod
    def uniform(cls, x0: float, x1: float, nx_cells: int,
                y0: float, y1: float, ny_cells: int, bc) -> "TensorGrid2D":
        return cls(np.linspace(x0, x1, nx_cells + 1),
                   np.linspace(y0, y1, ny_cells + 1), bc)

    @property
    def num_cells(self) -> tuple[int, int]:
        return len(self.xs) - 1, len(self.ys) - 1

    @property
    def node_shape(self) -> tuple[int, int]:
        """(rows, columns) = (len(ys), len(xs)) of the nodal array."""
        return len(self.ys), len(self.xs)

    def cell_areas(self) -> np.ndarray:
        return np.outer(np.diff(self.ys), np.diff(self.xs))

    def unknown_mask(self) -> np.ndarray:
        """Boolean (ny+1, nx+1) array marking non-Dirichlet nodes."""
        ny, nx = self.node_shape
        mask = np.ones((ny, nx), dtype=bool)
        if self.bc["left"] == DIRICHLET:
            mask[:, 0] = False
        if self.bc["right"] == DIRICHLET:
            mask[:, -1] = False
        if self.bc["bottom"] == DIRICHLET:
            mask[0, :] = False
        if self.bc["top"] == DIRICHLET:
            mask[-1, :] = False
        return mask

    def unknown_index(self) -> np.ndarray:
        """(ny+1, nx+1) int array: unknown id per node, -1 where excluded."""
        mask = self.unknown_mask()
        idx = np.full(mask.shape, -1, dtype=int)
        idx[mask] = np.arange(int(mask.sum()))
        return idx

    @property
    def num_unknowns(self) -> int:
        return int(self.unknown_mask().sum())

    def unknown_coords(self) -> np.ndarray:
        """(num_unknowns, 2) array of (x, y) per unknown."""
        mask = self.unknown_mask()
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.column_stack([X[mask], Y[mask]])

    def scatter(self, v: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Unknown vector -> full (ny+1, nx+1) nodal array."""
        mask = self.unknown_mask()
        out = np.full(mask.shape, fill)
        out[mask] = v
        return out

    def gather(self, nodal: np.ndarray) -> np.ndarray:
        """Full nodal array -> unknown vector."""
        return np.asarray(nodal)[self.unknown_mask()]

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights per unknown (Dirichlet nodes carry zero value)."""
        w = np.outer(trapezoid_weights(self.ys), trapezoid_weights(self.xs))
        return w[self.unknown_mask()]

    def refine_uniform(self) -> "TensorGrid2D":
        return TensorGrid2D(_bisect_all(self.xs), _bisect_all(self.ys), self.bc)

    def refine_marked(self, cells) -> "TensorGrid2D":
        """Bisect every x-line and y-line that passes through a marked cell.

        cells: iterable of (ix, iy) cell indices.  A grid line shared by
        several marked cells is bisected once.
        """
        nx, ny = self.num_cells
        x_marks, y_marks = set(), set()
        for ix, iy in cells:
            ix, iy = int(ix), int(iy)
            if not (0 <= ix < nx and 0 <= iy < ny):
                raise ValueError(f"cell ({ix},{iy}) outside {nx}x{ny} grid")
            x_marks.add(ix)
            y_marks.add(iy)
        return TensorGrid2D(_bisect_some(self.xs, x_marks),
                            _bisect_some(self.ys, y_marks), self.bc)

    def to_json_dict(self) -> dict:
        return {"kind": "tensor_grid", "xs": self.xs.tolist(),
                "ys": self.ys.tolist(), "bc": dict(self.bc)}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, data: dict) -> "TensorGrid2D":
        if data.get("kind") != "tensor_grid":
            raise ValueError("not a tensor_grid document")
        return cls(np.asarray(data["xs"], dtype=float),
                   np.asarray(data["ys"], dtype=float), data["bc"])

    @classmethod
    def from_json(cls, path) -> "TensorGrid2D":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def _bisect_all(coords: np.ndarray) -> np.ndarray:
    out = np.empty(2 * len(coords) - 1)
    out[::2] = coords
    out[1::2] = coords[:-1] + 0.5 * np.diff(coords)
    return out


def _bisect_some(coords: np.ndarray, intervals: set) -> np.ndarray:
    pieces = [coords[:1]]
    for i in range(len(coords) - 1):
        if i in intervals:
            pieces.append([coords[i] + 0.5 * (coords[i + 1] - coords[i])])
        pieces.append(coords[i + 1:i + 2])
    return np.concatenate(pieces)


def _match_indices(coarse: np.ndarray, fine: np.ndarray, axis: str) -> np.ndarray:
    """Index of each coarse coordinate inside the fine coordinate array."""
    idx = np.searchsorted(fine, coarse)
    out = np.empty(len(coarse), dtype=int)
    for k, (i, c) in enumerate(zip(idx, coarse)):
        scale = max(abs(c), 1.0)
        hit = -1
        for j in (i - 1, i, i + 1):
            if 0 <= j < len(fine) and abs(fine[j] - c) <= 1e-12 * scale:
                hit = j
                break
        if hit < 0:
            raise TransferError(f"coarse {axis}={c!r} is not a fine grid line")
        out[k] = hit
    return out


@dataclass(frozen=True, eq=False)
class GridTransfer:
    """Nodal injection (fine -> coarse) and bilinear prolongation
    (coarse -> fine) between nested tensor grids with matching edge tags.

    Both directions act on unknown vectors of their respective grids.
    """

    fine: TensorGrid2D
    coarse: TensorGrid2D
    restriction: sp.csr_matrix
    prolongation: sp.csr_matrix

    @classmethod
    def between(cls, fine: TensorGrid2D, coarse: TensorGrid2D) -> "GridTransfer":
        if fine.bc != coarse.bc:
            raise TransferError("edge tags differ between the two grids")
        ixs = _match_indices(coarse.xs, fine.xs, "x")
        iys = _match_indices(coarse.ys, fine.ys, "y")

        fine_idx = fine.unknown_index()
        coarse_idx = coarse.unknown_index()
        n_fine, n_coarse = fine.num_unknowns, coarse.num_unknowns

        rows, cols = [], []
        for jy, fy in enumerate(iys):
            for jx, fx in enumerate(ixs):
                c = coarse_idx[jy, jx]
                if c < 0:
                    continue
                f = fine_idx[fy, fx]
                if f < 0:
                    raise TransferError(
                        f"coarse unknown at ({coarse.xs[jx]}, {coarse.ys[jy]}) "
                        "maps to an excluded fine node")
                rows.append(c)
                cols.append(f)
        restriction = sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(n_coarse, n_fine))

        # bilinear weights from the coarse cell containing each fine node
        rows, cols, vals = [], [], []
        cxs, cys = coarse.xs, coarse.ys
        for fy, y in enumerate(fine.ys):
            jy = min(max(int(np.searchsorted(cys, y, side="right")) - 1, 0),
                     len(cys) - 2)
            ty = (y - cys[jy]) / (cys[jy + 1] - cys[jy])
            for fx, x in enumerate(fine.xs):
                f = fine_idx[fy, fx]
                if f < 0:
                    continue
                jx = min(max(int(np.searchsorted(cxs, x, side="right")) - 1, 0),
                         len(cxs) - 2)
                tx = (x - cxs[jx]) / (cxs[jx + 1] - cxs[jx])
                for (dy, wy) in ((0, 1.0 - ty), (1, ty)):
                    for (dx, wx) in ((0, 1.0 - tx), (1, tx)):
                        w = wx * wy
                        if w == 0.0:
                            continue
                        c = coarse_idx[jy + dy, jx + dx]
                        if c < 0:
                            continue  # Dirichlet corner contributes zero
                        rows.append(f)
                        cols.append(c)
                        vals.append(w)
        prolongation = sp.csr_matrix(
            (vals, (rows, cols)), shape=(n_fine, n_coarse))
        return cls(fine, coarse, restriction, prolongation)

    def restrict(self, v: np.ndarray) -> np.ndarray:
        return self.restriction @ v

    def prolong(self, v: np.ndarray) -> np.ndarray:
        return self.prolongation @ v

    def restrict_state(self, v: np.ndarray, num_species: int = 1) -> np.ndarray:
        """Restrict a species-major stacked state vector."""
        n = self.fine.num_unknowns
        blocks = [self.restrict(v[s * n:(s + 1) * n]) for s in range(num_species)]
        return np.concatenate(blocks)

    def prolong_state(self, v: np.ndarray, num_species: int = 1) -> np.ndarray:
        n = self.coarse.num_unknowns
        blocks = [self.prolong(v[s * n:(s + 1) * n]) for s in range(num_species)]
        return np.concatenate(blocks)
