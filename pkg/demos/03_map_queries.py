"""
HD-map store: spatial queries over WKB geometries behind an STR tree
====================================================================

Shows the query surface on a synthetic city map, then scales the same
queries to 20,000 random objects to make the index's point obvious.
"""

import tempfile
import time
from pathlib import Path

import numpy as np

from d123 import synthetic
from d123.mapstore import MapObject, MapStore, export_geojson, import_geojson, point_geometry_distance
from d123.wkb import Geometry

# -- a real map from the generator -------------------------------------------------

world = synthetic.build_world(synthetic.SyntheticScenarioConfig(seed=5, duration_s=10.0, rig="nuscenes"))
store = world.map_store
print("layers present:")
for layer in store.layers_present():
    print(f"  {layer:18s} x{len(store.layer_positions(layer))}")

ego_xy = world.ego[len(world.ego) // 2].pose.translation[:2]
print("\nquery point (mid-route ego):", np.round(ego_xy, 1))

near_lanes = store.objects_in_radius(ego_xy, 40.0, layers=["lane"])
print("lanes within 40 m, nearest first:")
for obj in near_lanes:
    d = point_geometry_distance(obj.geometry, ego_xy[0], ego_xy[1])
    print(f"  {obj.id:14s} d={d:5.1f}  successors={obj.attributes.get('successors')}")

crosswalk, d = store.nearest(ego_xy, "crosswalk")
print(f"nearest crosswalk: {crosswalk.id} at {d:.1f} m")

containing = store.objects_containing_point(ego_xy)
print("polygons containing the point:", [o.id for o in containing])

rect = (ego_xy[0] - 30, ego_xy[1] - 30, ego_xy[0] + 30, ego_xy[1] + 30)
print("objects whose bbox meets a 60x60 window:", len(store.objects_in_rect(rect)))

# round-trip through GeoJSON, one file per layer
out = Path(tempfile.mkdtemp(prefix="d123_demo_")) / "map_geojson"
export_geojson(store, out)
back = import_geojson(out)
print("geojson round trip object count:", len(back.ids()), "==", len(store.ids()))

# -- the index at scale -------------------------------------------------------------

rng = np.random.default_rng(0)
objects = []
for i in range(20_000):
    center = rng.uniform(0, 2000, size=2)
    seg = center + rng.uniform(-15, 15, size=(2, 2))
    objects.append(MapObject(f"seg_{i:05d}", "road_line", Geometry.linestring(seg)))
big = MapStore.from_objects(objects)

point = rng.uniform(500, 1500, size=2)
t0 = time.perf_counter()
hits = big.objects_in_radius(point, 50.0)
indexed = time.perf_counter() - t0

t0 = time.perf_counter()
brute = [o for o in objects if point_geometry_distance(o.geometry, point[0], point[1]) <= 50.0]
scanned = time.perf_counter() - t0

assert [o.id for o in hits] == sorted((o.id for o in brute),
                                      key=lambda i: (point_geometry_distance(big.get(i).geometry, *point), i))
print(f"\n20k objects, radius 50 m: {len(hits)} hits")
print(f"  indexed {indexed * 1e3:7.2f} ms   full scan {scanned * 1e3:7.2f} ms   ({scanned / indexed:.0f}x)")
