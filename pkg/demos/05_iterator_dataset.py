"""
A minimal map-style dataset over scenes
=======================================

Training loops only need `__len__` and `__getitem__` returning arrays, so
a dataset over this toolkit is a ~30 line adapter, not a framework
dependency. The class below plugs into torch's DataLoader unchanged
(numpy arrays collate out of the box), but runs here with plain Python.
"""

import tempfile
from pathlib import Path

import numpy as np

from d123 import synthetic
from d123.ingest import convert
from d123.scene import LogCache, SceneFilter, get_filtered_scenes


class SceneDataset:
    """Each item: past and future ego track for one scene, as float arrays."""

    def __init__(self, data_root: Path, scene_filter: SceneFilter):
        # one shared handle cache; scenes stay lazy until indexed
        self.scenes = get_filtered_scenes(scene_filter, data_root, cache=LogCache(capacity=16))

    def __len__(self) -> int:
        return len(self.scenes)

    def __getitem__(self, index: int) -> dict:
        view = self.scenes[index]
        track = np.array(
            [
                view.get_ego_state_at_iteration(it).pose.translation[:2]
                for it in view.iterations()
            ],
            dtype=np.float32,
        )
        return {
            "token": view.token,
            "ego_xy": track,
            "timestamps": np.array(
                [view.timestamp_at_iteration(it) for it in view.iterations()], dtype=np.int64
            ),
        }


work = Path(tempfile.mkdtemp(prefix="d123_demo_"))
root = work / "root"
for seed in (31, 32):
    config = synthetic.SyntheticScenarioConfig(seed=seed, duration_s=10.0, rig="wod_motion")
    source = synthetic.generate_source(config, work / f"src_{seed}")
    convert(source, root / "train" / f"wod_motion_{seed:04d}")

# 0.5 s grid, 1 s of history, 3 s of future, shuffled reproducibly
dataset = SceneDataset(root, SceneFilter.from_seconds(0.5, 1.0, 3.0, shuffle=True, seed=0))
print("dataset length:", len(dataset))

sample = dataset[0]
print("first item:", sample["token"])
print("  ego_xy shape:", sample["ego_xy"].shape, "dtype:", sample["ego_xy"].dtype)
print("  grid period:", np.unique(np.diff(sample["timestamps"])), "us")

# a plain batching loop; swap in torch.utils.data.DataLoader for real training
batch_size = 4
for start in range(0, len(dataset), batch_size):
    batch = [dataset[i] for i in range(start, min(start + batch_size, len(dataset)))]
    xy = np.stack([item["ego_xy"] for item in batch])
    displacement = np.linalg.norm(xy[:, -1] - xy[:, 0], axis=1)
    print(f"batch {start // batch_size}: ego displacement over scene "
          f"{np.round(displacement, 1)} m")
