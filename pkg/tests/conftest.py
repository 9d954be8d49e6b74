import pytest

# A configuration small enough to synthesise, train and evaluate in seconds.
TINY = {
    "synth.clips_per_class": "6",
    "synth.resolution": "24x32",
    "synth.fps": "8",
    "synth.duration_min": "1",
    "synth.duration_max": "1.5",
    "synth.speed_min": "0.2",
    "synth.speed_max": "0.5",
    "preprocess.resize": "20",
    "preprocess.crop": "16",
    "preprocess.window_seconds": "1",
    "preprocess.temporal_stride": "2",
    "flow.iterations": "10",
    "flow.encode_max_magnitude": "1.5",
    "model.extractor": "tiny",
    "model.channels": "4",
    "model.reduction_dim": "6",
    "model.lstm_widths": "4,5",
    "model.convlstm_channels": "4",
    "train.epochs_identification": "2",
    "train.splits": "2",
}


def write_config(path, extra=None):
    values = {**TINY, **(extra or {})}
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return path


@pytest.fixture
def tiny_config(tmp_path):
    return write_config(tmp_path / "tiny.cfg", {"run.corpus": str(tmp_path / "corpus"), "run.out": str(tmp_path / "out")})
