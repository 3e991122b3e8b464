from __future__ import annotations

from pathlib import Path

# Default locations for generated data, run outputs and the feature cache
DEFAULT_DATA_DIR: Path = Path("data")
DEFAULT_RUNS_DIR: Path = Path("runs")
DEFAULT_CACHE_DIR: Path = Path(".leaklab-cache")

MOS_MIN: float = 1.0
MOS_MAX: float = 5.0

# Upper class bounds, VeryPoor .. Good; VeryGood closes at MOS_MAX
CLASS_UPPER_BOUNDS: tuple[float, ...] = (1.8, 2.6, 3.4, 4.2)

# Published fine-tuning constants (momentum beta, learning rate alpha)
PUBLISHED_MOMENTUM: float = 0.9
PUBLISHED_LEARNING_RATE: float = 1e-4

# Published end-to-end head
PUBLISHED_HEAD_LAYERS: tuple[int, ...] = (1024, 512, 32)
PUBLISHED_HEAD_DROPOUT: float = 0.25
PUBLISHED_HEAD_LR_MULTIPLIER: float = 10.0
PUBLISHED_LR_DECAY_PER_EPOCH: float = 0.75
PUBLISHED_HEAD_EPOCHS: int = 10

MANIFEST_HEADER: tuple[str, str, str] = ("video_id", "mos", "frame_file")

RESULTS_FILE = "results.jsonl"
TIMINGS_FILE = "timings.jsonl"
CLASS_DISTRIBUTION_FILE = "class_distribution.json"
CONFIG_ECHO_FILE = "config.json"
TRACES_DIR = "traces"

PROTOCOL_IDS: tuple[str, ...] = (
    "NoFinetune",
    "LeakyFt_TaintedTest",
    "CleanFt_TaintedTest",
    "LeakyFt_CleanTest",
    "Clean",
    "EndToEnd",
)
