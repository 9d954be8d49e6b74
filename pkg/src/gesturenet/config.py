"""Flat ``section.key = value`` run configuration.

Every key has a typed default; unknown keys, duplicate keys and unparsable
values are rejected. The defaults are the full-scale training settings (Adam
at 1e-5, batch 1, 25 or 7 epochs, stride 4, 240 resize, 224 crop, LSTM 64/128,
convLSTM with 256 channels). Presets are named bundles of overrides.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional

from . import __version__
from .flow import FlowConfig
from .model import ALEXNET, ModelSpec, RecurrentSpec, small_extractor, tiny_extractor
from .synth import GESTURE_CLASS_COUNTS, SynthSpec, scaled_counts
from .training import TASK_CLASSES, TrainConfig
from .video import PreprocessConfig


class ConfigError(ValueError):
    pass


def _fmt_float(x: float) -> str:
    text = repr(float(x))
    # 1e-05 -> 1e-5 so the echo reads the way the value is usually written
    return re.sub(r"e([+-])0*(\d)", lambda m: "e" + ("-" if m.group(1) == "-" else "") + m.group(2), text)


def _parse_int(text: str) -> int:
    return int(text)


def _parse_ints(text: str) -> tuple[int, ...]:
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(int(p) for p in parts)


def _fmt_ints(v: tuple) -> str:
    return ",".join(str(i) for i in v)


def _parse_size(text: str) -> tuple[int, int]:
    parts = re.split(r"[x,]", text.strip().lower())
    if len(parts) == 1:
        n = int(parts[0])
        return (n, n)
    if len(parts) != 2:
        raise ValueError("expected N or HxW")
    return (int(parts[0]), int(parts[1]))


def _fmt_size(v: tuple[int, int]) -> str:
    return str(v[0]) if v[0] == v[1] else f"{v[0]}x{v[1]}"


def _parse_counts(text: str) -> tuple[int, ...]:
    return _parse_ints(text)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError("expected true or false")


def _parse_choice(*choices: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in choices:
            raise ValueError(f"expected one of {', '.join(choices)}")
        return text

    return parse


def _parse_kinds(text: str) -> tuple[str, ...]:
    kinds = tuple(p for p in re.split(r"[,\s]+", text.strip()) if p)
    for k in kinds:
        if k not in ("lstm", "convlstm", "none"):
            raise ValueError(f"unknown recurrent kind {k!r}")
    if not kinds:
        raise ValueError("empty list")
    return kinds


@dataclass(frozen=True)
class Key:
    default: Any
    parse: Callable[[str], Any]
    fmt: Callable[[Any], str] = str


_TASKS = _parse_choice(*TASK_CLASSES)

SCHEMA: dict[str, Key] = {
    "run.task": Key("identification", _TASKS),
    "run.corpus": Key("corpus", str),
    "run.out": Key("runs", str),
    "run.seed": Key(0, _parse_int),
    "model.extractor": Key("alexnet", _parse_choice("alexnet", "small", "tiny")),
    "model.channels": Key((8, 16, 16), _parse_ints, _fmt_ints),
    "model.recurrent": Key("lstm", _parse_choice("lstm", "convlstm", "none")),
    "model.compare": Key(("lstm", "convlstm"), _parse_kinds, _fmt_ints),
    "model.reduction_dim": Key(128, _parse_int),
    "model.lstm_widths": Key((64, 128), _parse_ints, _fmt_ints),
    "model.convlstm_kernel": Key(3, _parse_int),
    "model.convlstm_channels": Key(256, _parse_int),
    "train.lr": Key(1e-5, float, _fmt_float),
    "train.batch_size": Key(1, _parse_int),
    "train.optimizer": Key("adam", str),
    "train.epochs_identification": Key(25, _parse_int),
    "train.epochs_classification": Key(7, _parse_int),
    "train.splits": Key(3, _parse_int),
    "train.train_fraction": Key(0.8, float, _fmt_float),
    "train.beta1": Key(0.9, float, _fmt_float),
    "train.beta2": Key(0.999, float, _fmt_float),
    "train.eps": Key(1e-8, float, _fmt_float),
    "train.clip_norm": Key(100.0, float, _fmt_float),
    "train.log_wall_seconds": Key(False, _parse_bool, lambda v: "true" if v else "false"),
    "preprocess.resize": Key((240, 240), _parse_size, _fmt_size),
    "preprocess.crop": Key((224, 224), _parse_size, _fmt_size),
    "preprocess.crop_mode": Key("random", _parse_choice("random", "center")),
    "preprocess.temporal_stride": Key(4, _parse_int),
    "preprocess.window_seconds": Key(4.0, float, _fmt_float),
    "flow.alpha": Key(0.2, float, _fmt_float),
    "flow.iterations": Key(100, _parse_int),
    "flow.pyramid_levels": Key(3, _parse_int),
    "flow.encode_max_magnitude": Key(8.0, float, _fmt_float),
    "synth.clips_per_class": Key((40,), _parse_counts, _fmt_ints),
    "synth.resolution": Key((240, 320), _parse_size, _fmt_size),
    "synth.fps": Key(30.0, float, _fmt_float),
    "synth.duration_min": Key(5.0, float, _fmt_float),
    "synth.duration_max": Key(13.0, float, _fmt_float),
    "synth.noise_sigma": Key(3.0, float, _fmt_float),
    "synth.speed_min": Key(1.0, float, _fmt_float),
    "synth.speed_max": Key(3.0, float, _fmt_float),
    "synth.speed_jitter": Key(0.0, float, _fmt_float),
    "synth.distractor_amplitude": Key(0.0, float, _fmt_float),
}

# Reduced-scale synthetic presets. Frames are rendered at 48x64 and motion is
# scaled with them (0.2-0.6 px/frame is the same fraction of the frame width
# as 1-3 px/frame at 320 px); the flow saturation scale follows the same ratio.
# Only the LSTM head is trained by default so a run fits on one CPU core; add
# convlstm back with ``--set model.compare=lstm,convlstm``.
_SYNTH_COMMON = {
    "synth.resolution": "48x64",
    "synth.speed_min": "0.2",
    "synth.speed_max": "0.6",
    "preprocess.resize": "36",
    "preprocess.crop": "32",
    "flow.encode_max_magnitude": "1.5",
    "model.extractor": "small",
    "model.channels": "8,16,16",
    "model.convlstm_channels": "16",
    "model.compare": "lstm",
    "train.epochs_identification": "25",
    "train.epochs_classification": "25",
}

PRESETS: dict[str, dict[str, str]] = {
    "synthetic-identification": {
        **_SYNTH_COMMON,
        "run.task": "identification",
        "synth.clips_per_class": "80",
    },
    "synthetic-classification": {
        **_SYNTH_COMMON,
        "run.task": "classification",
        "synth.clips_per_class": _fmt_ints(scaled_counts(GESTURE_CLASS_COUNTS, 1 / 5)),
    },
}


def parse_lines(lines: Iterable[str], origin: str = "<config>") -> dict[str, str]:
    """Raw ``key -> text`` pairs; rejects malformed lines, unknown and duplicate keys."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_override(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, value = (s.strip() for s in text.split("=", 1))
    if key not in SCHEMA:
        raise ConfigError(f"unknown key {key!r}")
    return key, value


class RunConfig:
    """Fully resolved configuration: every schema key has a typed value."""

    def __init__(self, values: Optional[Mapping[str, Any]] = None):
        self.values = {k: spec.default for k, spec in SCHEMA.items()}
        if values:
            for k, v in values.items():
                if k not in SCHEMA:
                    raise ConfigError(f"unknown key {k!r}")
                self.values[k] = v

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def resolve(
        cls,
        config_path=None,
        preset: Optional[str] = None,
        overrides: Iterable[str] = (),
        seed: Optional[int] = None,
    ) -> "RunConfig":
        """Defaults, then the preset, then the config file, then ``--set`` overrides and ``--seed``."""
        raw: dict[str, str] = {}
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(sorted(PRESETS))}")
            raw.update(PRESETS[preset])
        if config_path is not None:
            path = Path(config_path)
            if not path.is_file():
                raise ConfigError(f"config file {path} does not exist")
            raw.update(parse_lines(path.read_text().splitlines(), str(path)))
        for text in overrides:
            key, value = parse_override(text)
            raw[key] = value
        if seed is not None:
            raw["run.seed"] = str(seed)
        values = {}
        for key, text in raw.items():
            try:
                values[key] = SCHEMA[key].parse(text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None
        cfg = cls(values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.train_config()
            self.preprocess_config()
            self.flow_config()
            for kind in sorted(set(self["model.compare"]) | {self["model.recurrent"]}):
                self.model_spec(kind).validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # -- typed views ----------------------------------------------------------------

    @property
    def task(self) -> str:
        return self["run.task"]

    def epochs(self) -> int:
        return self[f"train.epochs_{self.task}"]

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            task=self.task,
            epochs=self.epochs(),
            lr=self["train.lr"],
            batch_size=self["train.batch_size"],
            optimizer=self["train.optimizer"],
            splits=self["train.splits"],
            train_fraction=self["train.train_fraction"],
            seed=self["run.seed"],
            beta1=self["train.beta1"],
            beta2=self["train.beta2"],
            eps=self["train.eps"],
            clip_norm=self["train.clip_norm"],
        )

    def preprocess_config(self) -> PreprocessConfig:
        return PreprocessConfig(
            resize_to=self["preprocess.resize"],
            crop_to=self["preprocess.crop"],
            crop_mode=self["preprocess.crop_mode"],
            temporal_stride=self["preprocess.temporal_stride"],
            window_seconds=self["preprocess.window_seconds"],
        )

    def flow_config(self) -> FlowConfig:
        return FlowConfig(
            alpha=self["flow.alpha"],
            iterations=self["flow.iterations"],
            pyramid_levels=self["flow.pyramid_levels"],
            encode_max_magnitude=self["flow.encode_max_magnitude"],
        )

    def model_spec(self, kind: Optional[str] = None) -> ModelSpec:
        name = self["model.extractor"]
        if name == "alexnet":
            extractor = ALEXNET
        elif name == "small":
            extractor = small_extractor(self["model.channels"])
        else:
            extractor = tiny_extractor(self["model.channels"][0])
        recurrent = RecurrentSpec(
            kind=kind or self["model.recurrent"],
            reduction_dim=self["model.reduction_dim"],
            lstm_widths=self["model.lstm_widths"],
            conv_kernel=self["model.convlstm_kernel"],
            hidden_channels=self["model.convlstm_channels"],
        )
        return ModelSpec(
            extractor=extractor,
            recurrent=recurrent,
            n_classes=TASK_CLASSES[self.task],
            input_size=self["preprocess.crop"],
        )

    def synth_spec(self) -> SynthSpec:
        counts = self["synth.clips_per_class"]
        return SynthSpec(
            task=self.task,
            clips_per_class=counts[0] if len(counts) == 1 else counts,
            resolution=self["synth.resolution"],
            fps=self["synth.fps"],
            duration_range=(self["synth.duration_min"], self["synth.duration_max"]),
            noise_sigma=self["synth.noise_sigma"],
            speed_range=(self["synth.speed_min"], self["synth.speed_max"]),
            speed_jitter=self["synth.speed_jitter"],
            distractor_amplitude=self["synth.distractor_amplitude"],
            seed=self["run.seed"],
        )

    # -- echo -----------------------------------------------------------------------

    def lines(self) -> list[str]:
        return [f"{k} = {SCHEMA[k].fmt(v)}" for k, v in self.values.items()]

    def render(self) -> str:
        header = ["# gesturenet resolved configuration", f"# code_version = {code_version()}"]
        return "\n".join(header + self.lines()) + "\n"

    def write(self, directory) -> Path:
        path = Path(directory) / "config.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.render())
        return path


def code_version() -> str:
    """Package version plus a digest of the package sources."""
    digest = hashlib.sha256()
    root = Path(__file__).resolve().parent
    for path in sorted(root.rglob("*.py")):
        digest.update(path.relative_to(root).as_posix().encode())
        digest.update(path.read_bytes())
    return f"{__version__}+{digest.hexdigest()[:12]}"
