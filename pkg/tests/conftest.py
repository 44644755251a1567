import os
import sys

import pytest

# Add the project root to sys.path so tests import the packages without installation
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from tests.sample_recordings import (  # noqa: E402
    write_audio_recording,
    write_homestudy_recording,
    write_sensor_recording,
)


@pytest.fixture
def sensor_recording(tmp_path):
    """Time file + int16 samples, difference-encoded float32 seconds."""
    return write_sensor_recording(tmp_path / "sensor")


@pytest.fixture(scope="session")
def audio_recording(tmp_path_factory):
    # 5 MB of samples; tests must not modify it
    return write_audio_recording(tmp_path_factory.mktemp("audio"))


@pytest.fixture(scope="session")
def homestudy_recording(tmp_path_factory):
    # tests must not modify it
    return write_homestudy_recording(tmp_path_factory.mktemp("homestudy"))


@pytest.fixture(scope="session")
def recordings_root(tmp_path_factory):
    """Directory tree holding all three reference recordings."""
    root = tmp_path_factory.mktemp("recordings")
    write_sensor_recording(root / "sensor")
    write_audio_recording(root / "voice")
    write_homestudy_recording(root / "homestudy22")
    return root
