import pytest

from fewshot_sed.annotations import build_task
from fewshot_sed.synth import EventParams, SceneSpec, generate_scene

#: Scene used by detector and acceptance tests: 20 identical tone events over
#: white noise at 20 dB SNR. The jittered variant differs only in per-event
#: frequency jitter of +-20%.
STEREOTYPED_SPEC = SceneSpec(
    duration=60.0,
    sample_rate=16000,
    n_events=20,
    min_gap=0.6,
    event=EventParams(duration=0.4, f0=400.0, snr_db=20.0),
    seed=42,
)

JITTERED_SPEC = SceneSpec(
    duration=60.0,
    sample_rate=16000,
    n_events=20,
    min_gap=0.6,
    event=EventParams(duration=0.4, f0=400.0, snr_db=20.0, freq_jitter=0.2),
    seed=42,
)


@pytest.fixture(scope="session")
def stereotyped_scene():
    wave, table = generate_scene(STEREOTYPED_SPEC)
    return STEREOTYPED_SPEC, wave, table


@pytest.fixture(scope="session")
def jittered_scene():
    wave, table = generate_scene(JITTERED_SPEC)
    return JITTERED_SPEC, wave, table


@pytest.fixture(scope="session")
def stereotyped_task(stereotyped_scene):
    spec, wave, table = stereotyped_scene
    return build_task(table, spec.class_name, 5, audio_duration=wave.duration)


#: Scenes for the similarity/stereotypy checks: 32 events so that 30
#: comparison events can be drawn without replacement.
IDENTICAL_EVENTS_SPEC = SceneSpec(
    duration=40.0,
    sample_rate=16000,
    n_events=32,
    min_gap=0.3,
    event=EventParams(duration=0.3, f0=500.0, snr_db=30.0),
    seed=5,
)

#: Full-band white noise bursts, a fresh draw per event: zero stereotypy.
NOISE_EVENTS_SPEC = SceneSpec(
    duration=40.0,
    sample_rate=16000,
    n_events=32,
    min_gap=0.3,
    event_kind="NOISE_BURST",
    event=EventParams(duration=0.3, f0=0.0, f1=8000.0, snr_db=20.0),
    seed=5,
)


@pytest.fixture(scope="session")
def identical_events_scene():
    wave, table = generate_scene(IDENTICAL_EVENTS_SPEC)
    return IDENTICAL_EVENTS_SPEC, wave, table


@pytest.fixture(scope="session")
def noise_events_scene():
    wave, table = generate_scene(NOISE_EVENTS_SPEC)
    return NOISE_EVENTS_SPEC, wave, table
