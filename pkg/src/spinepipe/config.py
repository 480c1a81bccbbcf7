"""Pipeline configuration: mode presets plus JSON config files.

A config file is a JSON object whose top-level keys group options by
pipeline stage, for example::

    {
      "patch": {"edge_mm": 50.0, "overlap_frac": 0.3, "out_px": 224},
      "target": {"k_sigma": 0.002, "k_nbhd": 0.3},
      "detect": {"threshold": 0.5, "iou_threshold": 0.25},
      "label": {
        "softmax_T": 10.0,
        "expand_axial_coronal": 1.0,
        "expand_sagittal": 0.5,
        "beam_width": 100,
        "skip_penalty": 0.1
      }
    }

Unknown keys raise :class:`ConfigError`. Values from a file override the
mode preset.
"""

import dataclasses
import json

from .errors import ConfigError

# (section, key) -> attribute on PipelineConfig
_KEY_MAP = {
    ("patch", "edge_mm"): "edge_mm",
    ("patch", "overlap_frac"): "overlap_frac",
    ("patch", "out_px"): "out_px",
    ("target", "k_sigma"): "k_sigma",
    ("target", "k_nbhd"): "k_nbhd",
    ("detect", "threshold"): "detect_threshold",
    ("detect", "iou_threshold"): "iou_threshold",
    ("label", "softmax_T"): "softmax_temperature",
    ("label", "expand_axial_coronal"): "expand_axial_coronal",
    ("label", "expand_sagittal"): "expand_sagittal",
    ("label", "beam_width"): "beam_width",
    ("label", "skip_penalty"): "skip_penalty",
}

_INT_FIELDS = {"out_px", "beam_width"}


@dataclasses.dataclass
class PipelineConfig:
    """Every tunable the pipeline exposes, with whole-spine defaults."""

    edge_mm: float = 500.0
    overlap_frac: float = 0.40
    out_px: int = 224
    k_sigma: float = 0.002
    k_nbhd: float = 0.3
    detect_threshold: float = 0.5
    iou_threshold: float = 0.25
    softmax_temperature: float = 10.0
    expand_axial_coronal: float = 1.0
    expand_sagittal: float = 0.5
    beam_width: int = 100
    skip_penalty: float = 0.1

    @classmethod
    def for_mode(cls, mode: str) -> "PipelineConfig":
        """Preset for a scan mode.

        ``lumbar`` scans use 50 mm patches with 30% overlap; whole-spine
        scans use 500 mm patches with 40% overlap.
        """
        if mode == "lumbar":
            return cls(edge_mm=50.0, overlap_frac=0.30)
        if mode == "wholespine":
            return cls(edge_mm=500.0, overlap_frac=0.40)
        raise ConfigError(f"unknown mode {mode!r}")

    def with_file(self, path) -> "PipelineConfig":
        """Overlay settings from a JSON config file onto this config."""
        try:
            with open(path, "r", encoding="utf-8") as handle:
                data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config root must be a JSON object")
        updates = {}
        for section, entries in data.items():
            if not isinstance(entries, dict):
                raise ConfigError(f"{path}: section {section!r} must be an object")
            for key, value in entries.items():
                attr = _KEY_MAP.get((section, key))
                if attr is None:
                    raise ConfigError(f"{path}: unknown option {section}.{key}")
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise ConfigError(
                        f"{path}: option {section}.{key} must be a number"
                    )
                updates[attr] = int(value) if attr in _INT_FIELDS else float(value)
        return dataclasses.replace(self, **updates)
