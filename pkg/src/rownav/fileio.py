"""File formats: binary PGM occupancy grids with a georeference sidecar,
CSV point lists, and the 3-plane float32 waypoint-map container."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .field import OccupancyGrid


def write_pgm(path, grid: OccupancyGrid) -> None:
    h, w = grid.cells.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(grid.cells.tobytes())
    sidecar = Path(path).with_suffix(".georef")
    sidecar.write_text(
        f"resolution {grid.resolution!r}\n"
        f"origin_lat {grid.geo_origin[0]!r}\n"
        f"origin_lon {grid.geo_origin[1]!r}\n"
    )


def read_pgm(path) -> OccupancyGrid:
    with open(path, "rb") as f:
        data = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        nxt = data.find(b"\n", pos)
        line = data[pos:nxt]
        pos = nxt + 1
        if line.startswith(b"#"):
            continue
        fields.extend(line.split())
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: expected maxval 255, got {maxval}")
    cells = np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
    meta = {}
    sidecar = Path(path).with_suffix(".georef")
    for line in sidecar.read_text().splitlines():
        key, val = line.split()
        meta[key] = float(val)
    return OccupancyGrid(cells=cells.copy(), resolution=meta["resolution"],
                         geo_origin=(meta["origin_lat"], meta["origin_lon"]))


def write_points_csv(path, points, header) -> None:
    """Write an (n, k) array as CSV with the given column names."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in points:
            writer.writerow([repr(float(v)) for v in row])


def read_points_csv(path) -> np.ndarray:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    return np.array(rows, dtype=float)


def write_waymap(path, wmap) -> None:
    """Three-plane float32 dump (confidence, dx, dy) with a text header."""
    header = f"waymap {wmap.u_h} {wmap.u_w} {wmap.k}\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        for plane in (wmap.conf, wmap.dx, wmap.dy):
            f.write(np.ascontiguousarray(plane, dtype=np.float32).tobytes())


def read_waymap(path):
    from .waymap import WaypointMap

    with open(path, "rb") as f:
        header = f.readline().split()
        if header[0] != b"waymap":
            raise ValueError(f"{path}: not a waypoint map file")
        u_h, u_w, k = int(header[1]), int(header[2]), int(header[3])
        planes = np.frombuffer(f.read(), dtype=np.float32)
    planes = planes.reshape(3, u_h, u_w)
    return WaypointMap(conf=planes[0].copy(), dx=planes[1].copy(),
                       dy=planes[2].copy(), k=k)
