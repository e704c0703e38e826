"""ISO Well-Known Binary codec for point / linestring / polygon geometries.

Layout per geometry: one byte-order marker (0 big-endian, 1 little-endian),
a uint32 type code (1 point, 2 linestring, 3 polygon, plus 1000 for Z
variants), then counts and float64 coordinates. Encoding always emits
little-endian; decoding accepts both orders. Round-trips are exact.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .errors import MalformedWkb


class GeometryKind(str, enum.Enum):
    POINT = "point"
    LINESTRING = "linestring"
    POLYGON = "polygon"


_BASE_CODE = {GeometryKind.POINT: 1, GeometryKind.LINESTRING: 2, GeometryKind.POLYGON: 3}
_KIND_BY_CODE = {v: k for k, v in _BASE_CODE.items()}
_Z_OFFSET = 1000


@dataclass(frozen=True, eq=False)
class Geometry:
    """One geometry as float64 coordinate parts.

    ``parts`` holds one (N, dim) array for points (N=1) and linestrings, and
    one array per ring for polygons (exterior first, closed: first vertex ==
    last vertex). ``dim`` is 2 or 3. Equality is exact on values.
    """

    kind: GeometryKind
    parts: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        kind = GeometryKind(self.kind)
        parts = tuple(np.ascontiguousarray(p, dtype=np.float64) for p in self.parts)
        if not parts:
            raise ValueError("geometry needs at least one coordinate part")
        dim = parts[0].shape[-1] if parts[0].ndim == 2 else 0
        if dim not in (2, 3):
            raise ValueError("coordinates must be (N, 2) or (N, 3)")
        for p in parts:
            if p.ndim != 2 or p.shape[-1] != dim:
                raise ValueError("all parts must share one coordinate dimension")
            if not np.all(np.isfinite(p)):
                raise ValueError("coordinates must be finite")
        if kind is GeometryKind.POINT:
            if len(parts) != 1 or parts[0].shape[0] != 1:
                raise ValueError("point takes exactly one coordinate")
        elif kind is GeometryKind.LINESTRING:
            if len(parts) != 1 or parts[0].shape[0] < 2:
                raise ValueError("linestring needs one part with >= 2 vertices")
        else:
            for ring in parts:
                if ring.shape[0] < 4 or not np.array_equal(ring[0], ring[-1]):
                    raise ValueError("polygon rings must be closed with >= 4 vertices")
        for p in parts:
            p.flags.writeable = False
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "parts", parts)

    # -- constructors -----------------------------------------------------

    @classmethod
    def point(cls, coords) -> "Geometry":
        return cls(GeometryKind.POINT, (np.asarray(coords, dtype=np.float64).reshape(1, -1),))

    @classmethod
    def linestring(cls, coords) -> "Geometry":
        return cls(GeometryKind.LINESTRING, (np.asarray(coords, dtype=np.float64),))

    @classmethod
    def polygon(cls, exterior, holes=()) -> "Geometry":
        rings = [np.asarray(exterior, dtype=np.float64)]
        rings.extend(np.asarray(h, dtype=np.float64) for h in holes)
        closed = []
        for ring in rings:
            if ring.shape[0] >= 1 and not np.array_equal(ring[0], ring[-1]):
                ring = np.vstack([ring, ring[:1]])
            closed.append(ring)
        return cls(GeometryKind.POLYGON, tuple(closed))

    # -- views --------------------------------------------------------------

    @property
    def dim(self) -> int:
        return int(self.parts[0].shape[-1])

    @property
    def coords(self) -> np.ndarray:
        """Single coordinate array (point/linestring) or the exterior ring."""
        return self.parts[0]

    @property
    def rings(self) -> tuple[np.ndarray, ...]:
        if self.kind is not GeometryKind.POLYGON:
            raise ValueError("rings only defined for polygons")
        return self.parts

    def bounds(self) -> tuple[float, float, float, float]:
        """Planar (minx, miny, maxx, maxy)."""
        stacked = np.vstack([p[:, :2] for p in self.parts])
        mins = stacked.min(axis=0)
        maxs = stacked.max(axis=0)
        return float(mins[0]), float(mins[1]), float(maxs[0]), float(maxs[1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Geometry):
            return NotImplemented
        return (
            self.kind is other.kind
            and len(self.parts) == len(other.parts)
            and all(np.array_equal(a, b) for a, b in zip(self.parts, other.parts))
        )

    def __hash__(self) -> int:
        return hash((self.kind, tuple(p.tobytes() for p in self.parts)))


def encode(geometry: Geometry) -> bytes:
    """Encode to little-endian ISO WKB; byte-identical across runs."""
    code = _BASE_CODE[geometry.kind] + (_Z_OFFSET if geometry.dim == 3 else 0)
    out = bytearray()
    out += struct.pack("<BI", 1, code)
    if geometry.kind is GeometryKind.POINT:
        out += geometry.parts[0].astype("<f8").tobytes()
    elif geometry.kind is GeometryKind.LINESTRING:
        coords = geometry.parts[0]
        out += struct.pack("<I", coords.shape[0])
        out += coords.astype("<f8").tobytes()
    else:
        out += struct.pack("<I", len(geometry.parts))
        for ring in geometry.parts:
            out += struct.pack("<I", ring.shape[0])
            out += ring.astype("<f8").tobytes()
    return bytes(out)


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise MalformedWkb(f"truncated buffer at offset {self.pos}")
        values = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return values

    def take_coords(self, count: int, dim: int, byte_order: str) -> np.ndarray:
        size = count * dim * 8
        if self.pos + size > len(self.buf):
            raise MalformedWkb(f"truncated coordinates at offset {self.pos}")
        arr = np.frombuffer(self.buf, dtype=f"{byte_order}f8", count=count * dim, offset=self.pos)
        self.pos += size
        out = arr.astype(np.float64).reshape(count, dim)
        return out


def decode(buf: bytes) -> Geometry:
    """Decode ISO WKB (either byte order) into a Geometry."""
    cur = _Cursor(bytes(buf))
    (order_byte,) = cur.take("<B")
    if order_byte == 1:
        bo = "<"
    elif order_byte == 0:
        bo = ">"
    else:
        raise MalformedWkb(f"unknown byte-order marker {order_byte}")
    (code,) = cur.take(f"{bo}I")
    has_z = code >= _Z_OFFSET
    base = code - _Z_OFFSET if has_z else code
    kind = _KIND_BY_CODE.get(base)
    if kind is None:
        raise MalformedWkb(f"unsupported WKB type code {code}")
    dim = 3 if has_z else 2

    try:
        if kind is GeometryKind.POINT:
            coords = cur.take_coords(1, dim, bo)
            geometry = Geometry(kind, (coords,))
        elif kind is GeometryKind.LINESTRING:
            (count,) = cur.take(f"{bo}I")
            if count < 2:
                raise MalformedWkb("linestring needs >= 2 vertices")
            geometry = Geometry(kind, (cur.take_coords(count, dim, bo),))
        else:
            (nrings,) = cur.take(f"{bo}I")
            if nrings < 1:
                raise MalformedWkb("polygon needs >= 1 ring")
            rings = []
            for _ in range(nrings):
                (count,) = cur.take(f"{bo}I")
                rings.append(cur.take_coords(count, dim, bo))
            geometry = Geometry(kind, tuple(rings))
    except ValueError as exc:  # constructor invariants (e.g. unclosed ring)
        raise MalformedWkb(str(exc)) from exc
    if cur.pos != len(cur.buf):
        raise MalformedWkb(f"{len(cur.buf) - cur.pos} trailing bytes after geometry")
    return geometry
