import numpy as np
import pytest

from thermal_covert import synth
from thermal_covert.framing import parse_frame


def test_generators_are_seeded():
    assert synth.quiet_trace(3) == synth.quiet_trace(3)
    assert synth.quiet_trace(3) != synth.quiet_trace(4)
    assert synth.random_walk_trace(1) == synth.random_walk_trace(1)
    assert synth.random_frame(9) == synth.random_frame(9)


def test_random_frame_is_valid():
    frame = parse_frame(synth.random_frame(2, opcode=0b010), preamble=True, exact=True)
    assert frame.opcode == 0b010 and len(frame.payload) == 64


def test_quiet_trace_stays_quantized():
    t = synth.quiet_trace(0, hours=1.0)
    assert np.all(t.samples == np.floor(t.samples))
    assert t.duration == pytest.approx(3600.0, abs=1.0)


@pytest.mark.parametrize("kind", synth.ARTIFACT_KINDS)
def test_each_artifact_kind(kind):
    smoothed, bits, anchor, got = synth.artifact_then_frame(0, kind=kind)
    assert got == kind and len(bits) == 134
    assert smoothed.t0 < anchor < smoothed.t0 + smoothed.duration


def test_unknown_artifact_kind():
    with pytest.raises(ValueError):
        synth.artifact_profile("flood", 0, 3.3, None, None)


def test_server_room_injection_index():
    sensed, i0 = synth.server_room_trace(0, 3600.0, hours=4.0)
    assert i0 == round(3600 * 3.3)
    assert np.ptp(sensed.samples[: i0 - 10]) <= 2.0
