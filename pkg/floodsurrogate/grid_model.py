"""
Study-area mesh: cells, watershed regions, and channel drainage links.

A grid is a flat list of cells with explicit areas and watershed labels, so
any geometry (a refined hydrodynamic mesh or a regular test grid) fits.
Drainage links exist only between channel cells and are consumed by the
synthetic oracle; the learning pipeline itself only reads areas and labels.
"""

from __future__ import annotations

import enum
import logging
import math
import os
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

logger = logging.getLogger('floodsurrogate.grid_model')

GRID_COLUMNS = ['cell_id', 'x', 'y', 'area_sqft', 'kind', 'watershed_id', 'downstream_id']
WATERSHED_COLUMNS = ['watershed_id', 'name']
WATERSHEDS_FILENAME = 'watersheds.csv'

DEFAULT_N_WATERSHEDS = 9
DEFAULT_CELL_SIZE_FT = 1200.0


class CellKind(str, enum.Enum):
    CHANNEL = 'channel'
    NON_CHANNEL = 'nonchannel'


class GridParseError(ValueError):
    """Malformed grid or watershed file. ``line`` is 1-based, header = 1."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GridValidationError(ValueError):
    """A parsed grid broke one or more invariants."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid grid: " + "; ".join(self.violations))


@dataclass(frozen=True)
class Cell:
    id: int
    x: float
    y: float
    area: float
    kind: CellKind
    watershed: int
    downstream: Optional[int] = None

    @property
    def centroid(self) -> Tuple[float, float]:
        return (self.x, self.y)

    @property
    def is_channel(self) -> bool:
        return self.kind == CellKind.CHANNEL


@dataclass(frozen=True)
class Watershed:
    id: int
    name: str
    area: float


@dataclass(frozen=True)
class Grid:
    """Immutable study-area mesh; safe to share across workers."""

    cells: Tuple[Cell, ...]
    watersheds: Tuple[Watershed, ...]

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_watersheds(self) -> int:
        return len(self.watersheds)

    @property
    def n_channel(self) -> int:
        return sum(1 for cell in self.cells if cell.is_channel)

    @property
    def n_non_channel(self) -> int:
        return self.n_cells - self.n_channel

    # Cached array views. Values live in the instance __dict__, so they do
    # not take part in equality.

    @cached_property
    def centroids(self) -> np.ndarray:
        arr = np.array([[c.x, c.y] for c in self.cells], dtype=np.float64).reshape(-1, 2)
        arr.setflags(write=False)
        return arr

    @cached_property
    def areas(self) -> np.ndarray:
        arr = np.array([c.area for c in self.cells], dtype=np.float64)
        arr.setflags(write=False)
        return arr

    @cached_property
    def channel_mask(self) -> np.ndarray:
        arr = np.array([c.is_channel for c in self.cells], dtype=bool)
        arr.setflags(write=False)
        return arr

    @cached_property
    def watershed_ids(self) -> np.ndarray:
        arr = np.array([c.watershed for c in self.cells], dtype=np.int64)
        arr.setflags(write=False)
        return arr

    @cached_property
    def watershed_members(self) -> Tuple[np.ndarray, ...]:
        ids = self.watershed_ids
        return tuple(np.flatnonzero(ids == w.id) for w in self.watersheds)

    @cached_property
    def upstream_map(self) -> Dict[int, Tuple[int, ...]]:
        """Direct upstream neighbours of every channel cell."""
        children: Dict[int, List[int]] = {c.id: [] for c in self.cells if c.is_channel}
        for cell in self.cells:
            if cell.downstream is not None and cell.downstream in children:
                children[cell.downstream].append(cell.id)
        return {k: tuple(sorted(v)) for k, v in children.items()}

    @cached_property
    def channel_order(self) -> Tuple[int, ...]:
        """Channel cells ordered so every cell comes after all its upstream cells."""
        pending = {cid: len(ups) for cid, ups in self.upstream_map.items()}
        ready = deque(sorted(cid for cid, n in pending.items() if n == 0))
        order: List[int] = []
        while ready:
            cid = ready.popleft()
            order.append(cid)
            down = self.cells[cid].downstream
            if down is not None and down in pending:
                pending[down] -= 1
                if pending[down] == 0:
                    ready.append(down)
        if len(order) != len(pending):
            raise GridValidationError(["drainage cycle among channel cells"])
        return tuple(order)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_grid(grid: Grid) -> List[str]:
    """Return every invariant violation of *grid*; an empty list means valid."""
    violations: List[str] = []
    n = grid.n_cells
    n_ws = grid.n_watersheds

    for pos, ws in enumerate(grid.watersheds):
        if ws.id != pos:
            violations.append(f"watershed at position {pos} has id {ws.id}")

    for pos, cell in enumerate(grid.cells):
        if cell.id != pos:
            violations.append(f"cell at position {pos} has id {cell.id}")
        if not (cell.area > 0):
            violations.append(f"cell {cell.id} has non-positive area {cell.area}")
        if not 0 <= cell.watershed < n_ws:
            violations.append(f"cell {cell.id} references unknown watershed {cell.watershed}")
        if cell.downstream is None:
            continue
        if not cell.is_channel:
            violations.append(f"non-channel cell {cell.id} has downstream")
            continue
        if not 0 <= cell.downstream < n:
            violations.append(f"cell {cell.id} drains into unknown cell {cell.downstream}")
        elif not grid.cells[cell.downstream].is_channel:
            violations.append(f"cell {cell.id} drains into non-channel cell {cell.downstream}")

    violations.extend(_drainage_cycles(grid))

    members: Dict[int, List[float]] = {ws.id: [] for ws in grid.watersheds}
    for cell in grid.cells:
        if cell.watershed in members:
            members[cell.watershed].append(cell.area)
    for ws in grid.watersheds:
        if not members.get(ws.id):
            violations.append(f"watershed {ws.id} has no cells")
            continue
        expected = math.fsum(members[ws.id])
        if not math.isclose(ws.area, expected, rel_tol=1e-9, abs_tol=1e-9):
            violations.append(
                f"watershed {ws.id} area {ws.area} != sum of member cell areas {expected}"
            )
    return violations


def _drainage_cycles(grid: Grid) -> List[str]:
    """Report drainage cycles over channel links, one message per cycle."""
    n = grid.n_cells
    state = [0] * n  # 0 unvisited, 1 on current path, 2 finished
    found: List[str] = []
    for start in range(n):
        if state[start] or not grid.cells[start].is_channel:
            continue
        path = []
        cur: Optional[int] = start
        while cur is not None and 0 <= cur < n and state[cur] == 0:
            cell = grid.cells[cur]
            if not cell.is_channel:
                break
            state[cur] = 1
            path.append(cur)
            cur = cell.downstream
        if cur is not None and 0 <= cur < n and state[cur] == 1:
            found.append(f"drainage cycle through cell {cur}")
        for cid in path:
            state[cid] = 2
    return found


def watershed_area(grid: Grid, w: int) -> float:
    """Exact sum of the member cell areas of watershed *w* (square feet)."""
    if not 0 <= w < grid.n_watersheds:
        raise ValueError(f"unknown watershed {w} (grid has {grid.n_watersheds})")
    return math.fsum(grid.areas[grid.watershed_members[w]].tolist())


def upstream_cells(grid: Grid, cell_id: int) -> List[int]:
    """All channel cells draining into *cell_id*, transitively, sorted by id."""
    seen = set()
    queue = deque(grid.upstream_map.get(cell_id, ()))
    while queue:
        cid = queue.popleft()
        if cid in seen:
            continue
        seen.add(cid)
        queue.extend(grid.upstream_map.get(cid, ()))
    return sorted(seen)


def nearest_cell(grid: Grid, point: Tuple[float, float]) -> int:
    """Id of the cell whose centroid is closest to *point*; ties to the lowest id."""
    if grid.n_cells == 0:
        raise ValueError("grid has no cells")
    d2 = np.sum((grid.centroids - np.asarray(point, dtype=np.float64)) ** 2, axis=1)
    return int(np.argmin(d2))


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _read_str_csv(path: str, expected: List[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise GridParseError(f"{path} is empty", line=1)
    except pd.errors.ParserError as exc:
        raise GridParseError(f"{path}: {exc}")
    columns = [c.strip() for c in frame.columns]
    if columns != expected:
        raise GridParseError(
            f"{path}: expected header {','.join(expected)}, got {','.join(columns)}", line=1
        )
    frame.columns = columns
    return frame


def _parse_int(value: str, name: str, line: int) -> int:
    try:
        return int(value.strip())
    except ValueError:
        raise GridParseError(f"{name} '{value}' is not an integer", line=line)


def _parse_float(value: str, name: str, line: int) -> float:
    try:
        parsed = float(value.strip())
    except ValueError:
        raise GridParseError(f"{name} '{value}' is not a number", line=line)
    if not math.isfinite(parsed):
        raise GridParseError(f"{name} '{value}' is not finite", line=line)
    return parsed


def _load_watershed_table(path: str) -> List[Tuple[int, str]]:
    frame = _read_str_csv(path, WATERSHED_COLUMNS)
    table = []
    for pos, row in enumerate(frame.itertuples(index=False)):
        line = pos + 2
        wid = _parse_int(row.watershed_id, 'watershed_id', line)
        if wid != pos:
            raise GridParseError(
                f"watershed ids must be dense and in file order (expected {pos}, got {wid})",
                line=line,
            )
        table.append((wid, row.name.strip()))
    return table


def load_grid(path: str, watersheds_path: Optional[str] = None) -> Grid:
    """Load and validate a grid CSV.

    The watershed table is read from *watersheds_path*, or from a sibling
    ``watersheds.csv`` when present. Without one, the watershed count is
    inferred from the largest referenced id.

    Raises:
        GridParseError: malformed rows (with the offending line number).
        GridValidationError: the parsed grid breaks an invariant.
    """
    if watersheds_path is None:
        sibling = os.path.join(os.path.dirname(os.path.abspath(path)), WATERSHEDS_FILENAME)
        if os.path.exists(sibling):
            watersheds_path = sibling
    table = _load_watershed_table(watersheds_path) if watersheds_path else None

    frame = _read_str_csv(path, GRID_COLUMNS)
    kinds = {k.value: k for k in CellKind}
    cells: List[Cell] = []
    for pos, row in enumerate(frame.itertuples(index=False)):
        line = pos + 2
        cid = _parse_int(row.cell_id, 'cell_id', line)
        if cid != pos:
            raise GridParseError(
                f"cell ids must be dense and in file order (expected {pos}, got {cid})", line=line
            )
        kind_text = row.kind.strip().lower()
        if kind_text not in kinds:
            raise GridParseError(f"unknown cell kind '{row.kind}'", line=line)
        wid = _parse_int(row.watershed_id, 'watershed_id', line)
        if wid < 0 or (table is not None and wid >= len(table)):
            limit = len(table) if table is not None else 'any'
            raise GridParseError(f"watershed {wid} out of range (watersheds: {limit})", line=line)
        downstream_text = row.downstream_id.strip()
        downstream = _parse_int(downstream_text, 'downstream_id', line) if downstream_text else None
        cells.append(
            Cell(
                id=cid,
                x=_parse_float(row.x, 'x', line),
                y=_parse_float(row.y, 'y', line),
                area=_parse_float(row.area_sqft, 'area_sqft', line),
                kind=kinds[kind_text],
                watershed=wid,
                downstream=downstream,
            )
        )

    if table is None:
        n_ws = max((c.watershed for c in cells), default=-1) + 1
        table = [(w, f"watershed_{w}") for w in range(n_ws)]

    grid = _assemble(cells, table)
    violations = validate_grid(grid)
    if violations:
        raise GridValidationError(violations)
    logger.info(
        f"Loaded grid {path}: {grid.n_cells} cells "
        f"({grid.n_channel} channel), {grid.n_watersheds} watersheds"
    )
    return grid


def _assemble(cells: Sequence[Cell], table: Sequence[Tuple[int, str]]) -> Grid:
    areas: Dict[int, List[float]] = {wid: [] for wid, _ in table}
    for cell in cells:
        areas.setdefault(cell.watershed, []).append(cell.area)
    watersheds = tuple(
        Watershed(id=wid, name=name, area=math.fsum(areas.get(wid, []))) for wid, name in table
    )
    return Grid(cells=tuple(cells), watersheds=watersheds)


def save_grid(grid: Grid, path: str) -> None:
    """Write the grid CSV and a sibling ``watersheds.csv``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    frame = pd.DataFrame(
        {
            'cell_id': [c.id for c in grid.cells],
            'x': [repr(c.x) for c in grid.cells],
            'y': [repr(c.y) for c in grid.cells],
            'area_sqft': [repr(c.area) for c in grid.cells],
            'kind': [c.kind.value for c in grid.cells],
            'watershed_id': [c.watershed for c in grid.cells],
            'downstream_id': ['' if c.downstream is None else str(c.downstream) for c in grid.cells],
        },
        columns=GRID_COLUMNS,
    )
    frame.to_csv(path, index=False)
    pd.DataFrame(
        {
            'watershed_id': [w.id for w in grid.watersheds],
            'name': [w.name for w in grid.watersheds],
        },
        columns=WATERSHED_COLUMNS,
    ).to_csv(os.path.join(directory, WATERSHEDS_FILENAME), index=False)


# ---------------------------------------------------------------------------
# Synthetic grids
# ---------------------------------------------------------------------------


def make_synthetic_grid(
    rows: int,
    cols: int,
    n_watersheds: int = DEFAULT_N_WATERSHEDS,
    channel_fraction: float = 0.1,
    cell_size_ft: float = DEFAULT_CELL_SIZE_FT,
) -> Grid:
    """Build a regular rows x cols grid with a west-to-east river network.

    Layout:
        - cell id = row * cols + col, centroid at the square's centre;
        - watersheds are column bands, numbered west to east, so the west
          bands are upstream of the east bands;
        - the main channel runs along the middle row and drains east;
        - tributaries grow north and south from evenly spaced main-channel
          columns, one cell per pass, until the channel fraction is met.

    Deterministic: equal arguments give equal grids.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    if not 1 <= n_watersheds <= cols:
        raise ValueError(f"n_watersheds must be in 1..cols ({cols}), got {n_watersheds}")
    if not 0.0 <= channel_fraction <= 1.0:
        raise ValueError(f"channel_fraction must be in [0, 1], got {channel_fraction}")
    if not cell_size_ft > 0:
        raise ValueError(f"cell_size_ft must be > 0, got {cell_size_ft}")

    n = rows * cols
    target = int(round(channel_fraction * n))
    main_row = rows // 2
    downstream: Dict[int, Optional[int]] = {}

    def cid(r: int, c: int) -> int:
        return r * cols + c

    # Main stem, ending at the east edge.
    main_len = min(cols, target)
    main_cols = list(range(cols - main_len, cols))
    for c in main_cols:
        downstream[cid(main_row, c)] = cid(main_row, c + 1) if c + 1 < cols else None

    # Tributaries: alternate north/south, grown round-robin.
    step = max(2, cols // 6)
    trib_cols = [c for c in range(1, cols - 1, step) if c in set(main_cols)]
    tribs = [(c, -1 if i % 2 == 0 else 1) for i, c in enumerate(trib_cols)]
    lengths = [0] * len(tribs)
    grew = True
    while len(downstream) < target and grew:
        grew = False
        for i, (c, direction) in enumerate(tribs):
            if len(downstream) >= target:
                break
            r = main_row + direction * (lengths[i] + 1)
            if not 0 <= r < rows:
                continue
            downstream[cid(r, c)] = cid(r - direction, c)
            lengths[i] += 1
            grew = True
    if len(downstream) < target:
        logger.warning(
            f"Synthetic grid {rows}x{cols}: only {len(downstream)} of {target} channel cells fit"
        )

    area = float(cell_size_ft) * float(cell_size_ft)
    cells = []
    for r in range(rows):
        for c in range(cols):
            i = cid(r, c)
            is_channel = i in downstream
            cells.append(
                Cell(
                    id=i,
                    x=(c + 0.5) * cell_size_ft,
                    y=(r + 0.5) * cell_size_ft,
                    area=area,
                    kind=CellKind.CHANNEL if is_channel else CellKind.NON_CHANNEL,
                    watershed=c * n_watersheds // cols,
                    downstream=downstream.get(i),
                )
            )
    table = [(w, f"watershed_{w}") for w in range(n_watersheds)]
    return _assemble(cells, table)
