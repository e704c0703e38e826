"""Shared builders for converted synthetic logs used across test modules."""

from pathlib import Path

from d123 import ingest, synthetic


def make_config(**kw) -> synthetic.SyntheticScenarioConfig:
    return synthetic.SyntheticScenarioConfig(**kw)


def build_log(base: Path, mode: str = "external", **config) -> Path:
    """Generate a JSONL source under ``base`` and convert it to a log dir."""
    cfg = make_config(**config)
    source = base / f"src_{cfg.resolved_log_id}"
    synthetic.generate_source(cfg, source)
    out = base / cfg.resolved_log_id
    ingest.convert(source, out, mode=mode)
    return out


def build_data_root(root: Path, src_base: Path, specs) -> Path:
    """Convert one log per (split, config-kwargs) pair into a data root."""
    for split, config in specs:
        cfg = make_config(**config)
        source = src_base / f"{split}_{cfg.resolved_log_id}"
        synthetic.generate_source(cfg, source)
        ingest.convert(source, root / split / cfg.resolved_log_id)
    return root
