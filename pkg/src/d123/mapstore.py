"""Vector HD-map container: layered objects, WKB storage, STR-tree queries.

A map is one columnar IPC file with a row per object: (id, layer, wkb,
attributes JSON, bbox). Loading bulk-reads the columns and builds the STR
tree from the bbox columns alone; geometries decode lazily per object, so
a query touches only its candidates.

All distances are planar (xy), also for 3D geometries: driving-map queries
are ground-plane queries.
"""
from __future__ import annotations

import base64
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pyarrow as pa

from . import wkb as wkb_codec
from .errors import (
    CorruptFile,
    DanglingReference,
    IoFailure,
    LayerEmpty,
    MalformedWkb,
    UnknownId,
    UnknownLayer,
)
from .logio import _open_ipc_file, write_ipc_file
from .records import FORMAT_VERSION_KEY, MAP_SCOPE_KEY
from .strtree import StrTree
from .wkb import Geometry, GeometryKind

POLYGON_LAYERS = (
    "lane",
    "lane_group",
    "intersection",
    "crosswalk",
    "carpark",
    "walkway",
    "generic_drivable",
    "stop_zone",
    "speed_bump",
)
POLYLINE_LAYERS = ("road_edge", "road_line")
ALL_LAYERS = POLYGON_LAYERS + POLYLINE_LAYERS

MAP_SCOPES = ("per_log", "dataset_wide")

DEFAULT_NODE_CAPACITY = 10

# Instrumentation for laziness tests: WKB decodes and full map loads.
DECODE_COUNT = 0
LOAD_COUNT = 0


def reset_map_counters() -> None:
    global DECODE_COUNT, LOAD_COUNT
    DECODE_COUNT = 0
    LOAD_COUNT = 0


def layer_geometry_kind(layer: str) -> GeometryKind:
    if layer in POLYGON_LAYERS:
        return GeometryKind.POLYGON
    if layer in POLYLINE_LAYERS:
        return GeometryKind.LINESTRING
    raise UnknownLayer(f"unknown map layer {layer!r}")


@dataclass(frozen=True)
class MapObject:
    id: str
    layer: str
    geometry: Geometry
    attributes: dict = field(default_factory=dict)


# Reference keys checked by validate(); every id they carry must resolve.
_LANE_SINGLE_REFS = ("left_boundary", "right_boundary", "left_neighbor", "right_neighbor")
_LANE_LIST_REFS = ("predecessors", "successors")


@dataclass(frozen=True)
class ValidationIssue:
    object_id: str
    field: str
    ref: str


# -- planar distance helpers ---------------------------------------------------


def _segments_min_dist(x: float, y: float, coords: np.ndarray) -> float:
    """Distance from (x, y) to the closest segment of one vertex chain."""
    a = coords[:-1, :2]
    b = coords[1:, :2]
    if len(a) == 0:
        dx = coords[0, 0] - x
        dy = coords[0, 1] - y
        return math.hypot(float(dx), float(dy))
    d = b - a
    l2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]
    t = ((x - a[:, 0]) * d[:, 0] + (y - a[:, 1]) * d[:, 1]) / np.where(l2 > 0, l2, 1.0)
    t = np.clip(t, 0.0, 1.0)
    cx = a[:, 0] + t * d[:, 0]
    cy = a[:, 1] + t * d[:, 1]
    dist2 = (cx - x) ** 2 + (cy - y) ** 2
    return float(math.sqrt(float(dist2.min())))


def _point_in_ring(x: float, y: float, ring: np.ndarray) -> bool:
    """Even-odd crossing test against one closed ring."""
    x0 = ring[:-1, 0]
    y0 = ring[:-1, 1]
    x1 = ring[1:, 0]
    y1 = ring[1:, 1]
    straddle = (y0 > y) != (y1 > y)
    if not np.any(straddle):
        return False
    xs0 = x0[straddle]
    ys0 = y0[straddle]
    xs1 = x1[straddle]
    ys1 = y1[straddle]
    xi = xs0 + (y - ys0) * (xs1 - xs0) / (ys1 - ys0)
    return bool(np.count_nonzero(xi > x) % 2 == 1)


def point_geometry_distance(geometry: Geometry, x: float, y: float) -> float:
    """Minimum xy-plane distance from a point to a geometry (0 inside polygons)."""
    if geometry.kind is GeometryKind.POINT:
        cx, cy = geometry.coords[0, 0], geometry.coords[0, 1]
        return math.hypot(float(cx - x), float(cy - y))
    if geometry.kind is GeometryKind.LINESTRING:
        return _segments_min_dist(x, y, geometry.coords)
    inside = _point_in_ring(x, y, geometry.parts[0]) and not any(
        _point_in_ring(x, y, hole) for hole in geometry.parts[1:]
    )
    if inside:
        return 0.0
    return min(_segments_min_dist(x, y, ring) for ring in geometry.parts)


# -- the store -----------------------------------------------------------------


class MapStore:
    """Immutable map object collection with an STR index over bboxes."""

    def __init__(
        self,
        ids: Sequence[str],
        layers: Sequence[str],
        wkbs: Sequence[bytes],
        attr_json: Sequence[str],
        bbox: np.ndarray,
        scope: str = "per_log",
        node_capacity: int = DEFAULT_NODE_CAPACITY,
    ):
        if scope not in MAP_SCOPES:
            raise ValueError(f"scope must be one of {MAP_SCOPES}")
        n = len(ids)
        if not (len(layers) == len(wkbs) == len(attr_json) == n and bbox.shape == (n, 4)):
            raise ValueError("column lengths must agree")
        self._ids = list(ids)
        self._layers = list(layers)
        self._wkbs = list(wkbs)
        self._attr_json = list(attr_json)
        self._bbox = np.asarray(bbox, dtype=np.float64)
        self.scope = scope
        self.node_capacity = node_capacity

        self._id_to_idx: dict[str, int] = {}
        for i, oid in enumerate(self._ids):
            if oid in self._id_to_idx:
                raise ValueError(f"duplicate map object id {oid!r}")
            self._id_to_idx[oid] = i
        for layer in self._layers:
            layer_geometry_kind(layer)  # raises UnknownLayer

        tie = np.array(self._ids, dtype=object) if n else None
        self._tree = StrTree(self._bbox, ids=tie, node_capacity=node_capacity)
        self._geom_cache: dict[int, Geometry] = {}
        self._attr_cache: dict[int, dict] = {}
        self._layer_positions: dict[str, np.ndarray] = {}

    # -- construction ----------------------------------------------------

    @classmethod
    def from_objects(
        cls,
        objects: Iterable[MapObject],
        scope: str = "per_log",
        node_capacity: int = DEFAULT_NODE_CAPACITY,
    ) -> "MapStore":
        ids: list[str] = []
        layers: list[str] = []
        wkbs: list[bytes] = []
        attrs: list[str] = []
        boxes: list[tuple[float, float, float, float]] = []
        for obj in objects:
            expected = layer_geometry_kind(obj.layer)
            if obj.geometry.kind is not expected:
                raise ValueError(
                    f"{obj.id!r}: layer {obj.layer!r} requires {expected.value}, "
                    f"got {obj.geometry.kind.value}"
                )
            ids.append(obj.id)
            layers.append(obj.layer)
            wkbs.append(wkb_codec.encode(obj.geometry))
            attrs.append(json.dumps(obj.attributes, sort_keys=True, separators=(",", ":")))
            boxes.append(obj.geometry.bounds())
        bbox = np.array(boxes, dtype=np.float64).reshape(-1, 4)
        store = cls(ids, layers, wkbs, attrs, bbox, scope=scope, node_capacity=node_capacity)
        return store

    # -- persistence -------------------------------------------------------

    def save(self, path: Path) -> Path:
        path = Path(path)
        table = pa.table(
            {
                "id": pa.array(self._ids, type=pa.string()),
                "layer": pa.array(self._layers, type=pa.string()),
                "wkb": pa.array(self._wkbs, type=pa.binary()),
                "attributes": pa.array(self._attr_json, type=pa.string()),
                "bbox_minx": pa.array(self._bbox[:, 0], type=pa.float64()),
                "bbox_miny": pa.array(self._bbox[:, 1], type=pa.float64()),
                "bbox_maxx": pa.array(self._bbox[:, 2], type=pa.float64()),
                "bbox_maxy": pa.array(self._bbox[:, 3], type=pa.float64()),
            }
        )
        write_ipc_file(path, table, {MAP_SCOPE_KEY: self.scope})
        return path

    @classmethod
    def load(cls, path: Path, node_capacity: int = DEFAULT_NODE_CAPACITY) -> "MapStore":
        """Bulk-read the map file; no WKB decoding happens here."""
        global LOAD_COUNT
        path = Path(path)
        if not path.exists():
            raise IoFailure(f"map file missing: {path}")
        source, reader = _open_ipc_file(path)
        try:
            table = reader.read_all()
        finally:
            source.close()
        meta = table.schema.metadata or {}
        scope = meta.get(MAP_SCOPE_KEY, b"per_log").decode()
        required = {"id", "layer", "wkb", "attributes", "bbox_minx", "bbox_miny", "bbox_maxx", "bbox_maxy"}
        if not required.issubset(table.column_names):
            raise CorruptFile(f"{path.name}: missing map columns {sorted(required - set(table.column_names))}")
        bbox = np.stack(
            [table.column(f"bbox_{k}").to_numpy() for k in ("minx", "miny", "maxx", "maxy")],
            axis=1,
        )
        LOAD_COUNT += 1
        return cls(
            table.column("id").to_pylist(),
            table.column("layer").to_pylist(),
            table.column("wkb").to_pylist(),
            table.column("attributes").to_pylist(),
            bbox,
            scope=scope,
            node_capacity=node_capacity,
        )

    # -- object access -----------------------------------------------------

    def __len__(self) -> int:
        return len(self._ids)

    def ids(self) -> list[str]:
        return list(self._ids)

    def layers_present(self) -> list[str]:
        return sorted(set(self._layers))

    def _index_of(self, object_id: str) -> int:
        try:
            return self._id_to_idx[object_id]
        except KeyError:
            raise UnknownId(f"no map object with id {object_id!r}") from None

    def _geometry_at(self, idx: int) -> Geometry:
        global DECODE_COUNT
        geom = self._geom_cache.get(idx)
        if geom is None:
            DECODE_COUNT += 1
            geom = wkb_codec.decode(self._wkbs[idx])
            self._geom_cache[idx] = geom
        return geom

    def _attributes_at(self, idx: int) -> dict:
        attrs = self._attr_cache.get(idx)
        if attrs is None:
            attrs = json.loads(self._attr_json[idx])
            self._attr_cache[idx] = attrs
        return attrs

    def _object_at(self, idx: int) -> MapObject:
        return MapObject(
            id=self._ids[idx],
            layer=self._layers[idx],
            geometry=self._geometry_at(idx),
            attributes=self._attributes_at(idx),
        )

    def get(self, object_id: str) -> MapObject:
        return self._object_at(self._index_of(object_id))

    def objects(self) -> Iterable[MapObject]:
        for i in range(len(self._ids)):
            yield self._object_at(i)

    def layer_positions(self, layer: str) -> np.ndarray:
        layer_geometry_kind(layer)  # validates the name
        if layer not in self._layer_positions:
            mask = np.array([l == layer for l in self._layers], dtype=bool)
            self._layer_positions[layer] = np.flatnonzero(mask)
        return self._layer_positions[layer]

    def layer_ids(self, layer: str) -> list[str]:
        return [self._ids[i] for i in self.layer_positions(layer)]

    # -- spatial queries -----------------------------------------------------

    def _resolve_layers(self, layers) -> np.ndarray | None:
        """Positions allowed by the layer filter; None means all."""
        if layers is None:
            return None
        names = list(layers)
        for name in names:
            layer_geometry_kind(name)
        if not names:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([self.layer_positions(name) for name in names])

    def objects_in_radius(self, point, radius: float, layers=None) -> list[MapObject]:
        """All objects of the given layers within planar distance <= radius.

        Results sort by (distance, id). The z of a 3D query point is ignored.
        """
        if radius < 0:
            raise ValueError("radius must be >= 0")
        allowed = self._resolve_layers(layers)
        x, y = float(point[0]), float(point[1])
        candidates = self._tree.query_point_radius(x, y, radius)
        if allowed is not None:
            candidates = np.intersect1d(candidates, allowed, assume_unique=False)
        scored: list[tuple[float, str, int]] = []
        for idx in candidates:
            dist = point_geometry_distance(self._geometry_at(int(idx)), x, y)
            if dist <= radius:
                scored.append((dist, self._ids[int(idx)], int(idx)))
        scored.sort(key=lambda item: (item[0], item[1]))
        return [self._object_at(idx) for _, _, idx in scored]

    def nearest(self, point, layer: str) -> tuple[MapObject, float]:
        """Closest object of one layer by exact planar distance, ties by id.

        Expanding-radius search over the STR tree: any candidate found within
        the current radius bounds the true nearest, which must itself be a
        candidate at that radius.
        """
        positions = self.layer_positions(layer)
        if len(positions) == 0:
            raise LayerEmpty(f"layer {layer!r} has no objects")
        x, y = float(point[0]), float(point[1])

        span = max(
            float(self._bbox[positions, 2].max() - self._bbox[positions, 0].min()),
            float(self._bbox[positions, 3].max() - self._bbox[positions, 1].min()),
            1.0,
        )
        radius = 1.0
        allowed = set(int(i) for i in positions)
        while True:
            candidates = [
                int(i) for i in self._tree.query_point_radius(x, y, radius) if int(i) in allowed
            ]
            best: tuple[float, str, int] | None = None
            for idx in candidates:
                dist = point_geometry_distance(self._geometry_at(idx), x, y)
                key = (dist, self._ids[idx], idx)
                if best is None or key[:2] < best[:2]:
                    best = key
            if best is not None and best[0] <= radius:
                return self._object_at(best[2]), best[0]
            if radius > 2 * span:  # fall back to scanning the whole layer once
                for idx in (int(i) for i in positions):
                    dist = point_geometry_distance(self._geometry_at(idx), x, y)
                    key = (dist, self._ids[idx], idx)
                    if best is None or key[:2] < best[:2]:
                        best = key
                assert best is not None
                return self._object_at(best[2]), best[0]
            radius *= 4.0

    def objects_in_rect(self, rect, layers=None) -> list[MapObject]:
        """Window query: objects whose bounding rectangle intersects ``rect``."""
        x0, y0, x1, y1 = (float(v) for v in rect)
        if x1 < x0 or y1 < y0:
            raise ValueError("rect must be (minx, miny, maxx, maxy)")
        allowed = self._resolve_layers(layers)
        hits = self._tree.query_rect((x0, y0, x1, y1))
        if allowed is not None:
            hits = np.intersect1d(hits, allowed, assume_unique=False)
        order = sorted((int(i) for i in hits), key=lambda i: self._ids[i])
        return [self._object_at(i) for i in order]

    def objects_containing_point(self, point, layers=None) -> list[MapObject]:
        """Polygon objects whose interior or boundary contains the point."""
        poly_layers = [l for l in (layers or POLYGON_LAYERS) if l in POLYGON_LAYERS]
        return self.objects_in_radius(point, 0.0, poly_layers)

    # -- lane graph ------------------------------------------------------------

    def _lane_attrs(self, lane_id: str) -> dict:
        idx = self._index_of(lane_id)
        if self._layers[idx] != "lane":
            raise UnknownId(f"{lane_id!r} is a {self._layers[idx]}, not a lane")
        return self._attributes_at(idx)

    def _resolve_ref(self, owner: str, field_name: str, ref: str) -> MapObject:
        if ref not in self._id_to_idx:
            raise DanglingReference(f"{owner}.{field_name} references missing id {ref!r}")
        return self._object_at(self._id_to_idx[ref])

    def lane_successors(self, lane_id: str) -> list[MapObject]:
        attrs = self._lane_attrs(lane_id)
        return [self._resolve_ref(lane_id, "successors", r) for r in attrs.get("successors", [])]

    def lane_predecessors(self, lane_id: str) -> list[MapObject]:
        attrs = self._lane_attrs(lane_id)
        return [self._resolve_ref(lane_id, "predecessors", r) for r in attrs.get("predecessors", [])]

    def lane_neighbors(self, lane_id: str) -> tuple[MapObject | None, MapObject | None]:
        attrs = self._lane_attrs(lane_id)
        left = attrs.get("left_neighbor")
        right = attrs.get("right_neighbor")
        return (
            self._resolve_ref(lane_id, "left_neighbor", left) if left else None,
            self._resolve_ref(lane_id, "right_neighbor", right) if right else None,
        )

    def lane_centerline(self, lane_id: str) -> np.ndarray:
        attrs = self._lane_attrs(lane_id)
        return np.asarray(attrs["centerline"], dtype=np.float64)

    def group_lanes(self, group_id: str) -> list[MapObject]:
        idx = self._index_of(group_id)
        if self._layers[idx] != "lane_group":
            raise UnknownId(f"{group_id!r} is not a lane_group")
        attrs = self._attributes_at(idx)
        return [self._resolve_ref(group_id, "lane_ids", r) for r in attrs.get("lane_ids", [])]

    # -- validation --------------------------------------------------------------

    def validate(self) -> list[ValidationIssue]:
        """Report every cross-reference that does not resolve to an object id."""
        issues: list[ValidationIssue] = []

        def check(owner: str, field_name: str, ref) -> None:
            if ref and ref not in self._id_to_idx:
                issues.append(ValidationIssue(object_id=owner, field=field_name, ref=ref))

        for i, layer in enumerate(self._layers):
            attrs = self._attributes_at(i)
            oid = self._ids[i]
            if layer == "lane":
                for key in _LANE_SINGLE_REFS:
                    check(oid, key, attrs.get(key))
                for key in _LANE_LIST_REFS:
                    for ref in attrs.get(key, []):
                        check(oid, key, ref)
            elif layer == "lane_group":
                for ref in attrs.get("lane_ids", []):
                    check(oid, "lane_ids", ref)
            elif layer == "intersection":
                for ref in attrs.get("lane_group_ids", []):
                    check(oid, "lane_group_ids", ref)
        return issues


# -- GeoJSON interop -------------------------------------------------------------


def _geometry_to_geojson(geometry: Geometry) -> dict:
    def positions(arr: np.ndarray) -> list:
        return [[float(v) for v in row] for row in arr]

    if geometry.kind is GeometryKind.POINT:
        return {"type": "Point", "coordinates": [float(v) for v in geometry.coords[0]]}
    if geometry.kind is GeometryKind.LINESTRING:
        return {"type": "LineString", "coordinates": positions(geometry.coords)}
    return {"type": "Polygon", "coordinates": [positions(r) for r in geometry.parts]}


def _geometry_from_geojson(obj: Mapping) -> Geometry:
    kind = obj["type"]
    coords = obj["coordinates"]
    if kind == "Point":
        return Geometry.point(coords)
    if kind == "LineString":
        return Geometry.linestring(coords)
    if kind == "Polygon":
        return Geometry.polygon(coords[0], holes=coords[1:])
    raise ValueError(f"unsupported GeoJSON geometry type {kind!r}")


def export_geojson(store: MapStore, out_dir: Path) -> list[Path]:
    """One FeatureCollection file per non-empty layer, Z-preserving."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for layer in store.layers_present():
        features = []
        for oid in sorted(store.layer_ids(layer)):
            obj = store.get(oid)
            features.append(
                {
                    "type": "Feature",
                    "id": obj.id,
                    "properties": {**obj.attributes, "layer": layer},
                    "geometry": _geometry_to_geojson(obj.geometry),
                }
            )
        doc = {"type": "FeatureCollection", "features": features}
        path = out_dir / f"{layer}.geojson"
        path.write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
        written.append(path)
    return written


def import_geojson(directory: Path, scope: str = "per_log") -> MapStore:
    """Build a MapStore from a directory of per-layer FeatureCollections."""
    directory = Path(directory)
    objects: list[MapObject] = []
    paths = sorted(directory.glob("*.geojson"))
    if not paths:
        raise IoFailure(f"no .geojson files in {directory}")
    for path in paths:
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CorruptFile(f"{path.name}: {exc}") from exc
        for feature in doc.get("features", []):
            props = dict(feature.get("properties") or {})
            layer = props.pop("layer", path.stem)
            objects.append(
                MapObject(
                    id=str(feature["id"]),
                    layer=layer,
                    geometry=_geometry_from_geojson(feature["geometry"]),
                    attributes=props,
                )
            )
    return MapStore.from_objects(objects, scope=scope)


# -- triangle meshes ---------------------------------------------------------------


def triangulate_polygon(geometry: Geometry) -> tuple[np.ndarray, np.ndarray]:
    """Ear-clip the exterior ring (xy outline) into triangles.

    Returns (vertices (N, 3), triangles (M, 3) int32). Holes are out of scope.
    """
    if geometry.kind is not GeometryKind.POLYGON:
        raise ValueError("triangulation needs a polygon")
    if len(geometry.parts) > 1:
        raise ValueError("polygons with holes are not triangulated")
    ring = geometry.parts[0][:-1]  # drop the closing vertex
    n = ring.shape[0]
    if n < 3:
        raise ValueError("degenerate polygon")
    verts = np.zeros((n, 3))
    verts[:, : geometry.dim] = ring

    xy = ring[:, :2]
    # signed area > 0 means counter-clockwise
    x, y = xy[:, 0], xy[:, 1]
    area2 = float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
    idx = list(range(n)) if area2 > 0 else list(range(n - 1, -1, -1))

    def cross(o, a, b) -> float:
        return float(
            (xy[a, 0] - xy[o, 0]) * (xy[b, 1] - xy[o, 1])
            - (xy[a, 1] - xy[o, 1]) * (xy[b, 0] - xy[o, 0])
        )

    def point_in_tri(p, a, b, c) -> bool:
        # closed test: a vertex on the ear's boundary still blocks the clip,
        # otherwise a chord through it double-covers part of the polygon
        d1 = cross(a, b, p)
        d2 = cross(b, c, p)
        d3 = cross(c, a, p)
        return d1 >= 0 and d2 >= 0 and d3 >= 0

    triangles: list[tuple[int, int, int]] = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 2 * n * n:
            raise ValueError("polygon could not be ear-clipped (self-intersecting?)")
        clipped = False
        for k in range(len(idx)):
            o, a, b = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            if cross(o, a, b) <= 0:
                continue  # reflex vertex, not an ear
            if any(point_in_tri(p, o, a, b) for p in idx if p not in (o, a, b)):
                continue
            triangles.append((o, a, b))
            idx.pop(k)
            clipped = True
            break
        if not clipped:
            raise ValueError("polygon could not be ear-clipped (degenerate ring)")
    triangles.append((idx[0], idx[1], idx[2]))
    return verts, np.array(triangles, dtype=np.int32)


def encode_mesh(vertices: np.ndarray, triangles: np.ndarray) -> bytes:
    """Opaque indexed-triangle blob: counts header, float64 verts, int32 tris."""
    v = np.ascontiguousarray(vertices, dtype="<f8").reshape(-1, 3)
    t = np.ascontiguousarray(triangles, dtype="<i4").reshape(-1, 3)
    return struct.pack("<II", v.shape[0], t.shape[0]) + v.tobytes() + t.tobytes()


def decode_mesh(blob: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(blob) < 8:
        raise ValueError("mesh blob too short")
    nv, nt = struct.unpack_from("<II", blob, 0)
    need = 8 + nv * 24 + nt * 12
    if len(blob) != need:
        raise ValueError(f"mesh blob length {len(blob)} != expected {need}")
    verts = np.frombuffer(blob, dtype="<f8", count=nv * 3, offset=8).reshape(nv, 3).copy()
    tris = np.frombuffer(blob, dtype="<i4", count=nt * 3, offset=8 + nv * 24).reshape(nt, 3).copy()
    return verts, tris


def mesh_attribute(geometry: Geometry) -> str:
    """Base64 mesh blob for a polygon, suitable for an attributes entry."""
    verts, tris = triangulate_polygon(geometry)
    return base64.b64encode(encode_mesh(verts, tris)).decode("ascii")
