import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from thermal_covert import synth
from thermal_covert.errors import FrameError
from thermal_covert.framing import (
    DEFAULT_OPCODES, EventKind, Frame, FrameRejected, OpcodeTable, Receiver, ReceptionWindow, RejectReason,
    RxState, build_frame, default_rise_timeout, detect_preamble, even_parity, frame_length, majority_vote,
    parse_frame, payload_from_hex, preamble_schedule, rx_state_machine,
)
from thermal_covert.harness import transmit
from thermal_covert.modem import ChannelParams, maf_smooth
from thermal_covert.thermal_env import (
    EnvironmentModel, Segment, SensorModel, TargetSchedule, TemperatureTrace, sense, simulate_room,
)

P = ChannelParams()
ENV = EnvironmentModel()
SENSOR = SensorModel()


def accepted(events):
    return [e.detail for e in events if e.kind is EventKind.FRAME_ACCEPTED]


def rejected(events):
    return [e.detail for e in events if e.kind is EventKind.FRAME_REJECTED]


# --- frame format ---------------------------------------------------------

def test_key_frame_is_134_bits():
    bits = build_frame(0, [0] * 128)
    assert len(bits) == 134
    assert bits[:2] == [1, 0] and bits[2:5] == [0, 0, 0]
    assert bits[5] == 0  # even parity over zero ones


def test_parity_counts_ones():
    table = OpcodeTable({0b101: ("Test", 1)})
    bits = build_frame("101", [1], table=table)
    assert bits == [1, 0, 1, 0, 1, 1, 1]


def test_payload_length_must_match():
    with pytest.raises(FrameError):
        build_frame(0b011, [1] * 7)
    with pytest.raises(FrameError):
        build_frame(0b111, [1])


@given(st.sampled_from(sorted(DEFAULT_OPCODES.entries)), st.booleans(), st.data())
def test_build_parse_round_trip(code, parity, data):
    n = DEFAULT_OPCODES.payload_length(code)
    payload = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    bits = build_frame(code, payload, parity)
    assert len(bits) == 2 + 3 + int(parity) + n == frame_length(code, parity_present=parity)
    if parity:
        assert even_parity(bits[2:]) == 0
    frame = parse_frame(bits, parity_present=parity, preamble=True, exact=True)
    assert frame.opcode == code and list(frame.payload) == payload
    assert frame.bits() == bits


def test_parse_key_frame_fields():
    payload = np.random.default_rng(3).integers(0, 2, 128).tolist()
    frame = parse_frame(build_frame(0, payload)[2:])
    assert frame.opcode == 0 and list(frame.payload) == payload
    assert DEFAULT_OPCODES.name(frame.opcode) == "ChangeEncryptionKey"


def test_payload_flip_fails_parity():
    body = build_frame(0, [1, 0] * 64)[2:]
    body[50] ^= 1
    with pytest.raises(FrameRejected) as err:
        parse_frame(body)
    assert err.value.reason is RejectReason.PARITY_FAIL


def test_truncated_frame_reports_index():
    body = build_frame(0, [1] * 128)[2:]
    with pytest.raises(FrameRejected) as err:
        parse_frame(body[:60])
    assert err.value.reason is RejectReason.TRUNCATED and err.value.index == 60
    with pytest.raises(FrameRejected) as err:
        parse_frame(body[:2])
    assert err.value.reason is RejectReason.TRUNCATED


def test_unknown_opcode():
    with pytest.raises(FrameRejected) as err:
        parse_frame([1, 1, 1, 1, 0, 1])
    assert err.value.reason is RejectReason.UNKNOWN_OPCODE


def test_every_single_flip_is_rejected_when_length_is_known():
    frame = build_frame(0, np.random.default_rng(11).integers(0, 2, 128).tolist())
    for k in range(2, len(frame)):
        flipped = list(frame)
        flipped[k] ^= 1
        with pytest.raises(FrameRejected):
            parse_frame(flipped, preamble=True, exact=True)


def test_opcode_flip_to_shorter_frame_needs_length_check():
    # 000 -> 001 (SelfDestruct, 1-bit payload): the flip and the dropped payload
    # bits each change the ones count by one, so parity still holds
    frame = build_frame(0, [0, 1] + [0] * 126)
    flipped = list(frame)
    flipped[4] ^= 1
    short = parse_frame(flipped, preamble=True)
    assert short.opcode == 0b001
    with pytest.raises(FrameRejected) as err:
        parse_frame(flipped, preamble=True, exact=True)
    assert err.value.reason is RejectReason.LENGTH_MISMATCH


def test_payload_from_hex_is_msb_first():
    assert payload_from_hex("a5", 8) == [1, 0, 1, 0, 0, 1, 0, 1]
    assert payload_from_hex("0x1", 4) == [0, 0, 0, 1]
    with pytest.raises(ValueError):
        payload_from_hex("1ff", 8)
    with pytest.raises(ValueError):
        payload_from_hex("xyz", 8)


def test_hexdump_labels_fields():
    frame = Frame(0b011, tuple(payload_from_hex("c3", 8)))
    dump = frame.hexdump()
    assert "opcode:   011 (DisableAsset)" in dump
    assert "payload:  8 bits 0xc3" in dump
    assert "parity:   0 (even)" in dump


def test_frame_rejects_wrong_parity():
    with pytest.raises(ValueError):
        Frame(0, (1,) * 128, parity=1)


def test_opcode_table_config_round_trip():
    assert OpcodeTable.from_config(DEFAULT_OPCODES.to_config()) == DEFAULT_OPCODES
    with pytest.raises(ValueError):
        OpcodeTable({8: ("Wide", 1)})


# --- preamble -------------------------------------------------------------

def test_preamble_rise_then_one_slot_fall():
    room = simulate_room(preamble_schedule(P), ENV, 3.3)
    (s0, e0), (s1, e1) = room.meta["segment_times"]
    assert e0 - s0 == pytest.approx(3 / 1.23 * 60)  # about 146 s
    assert e1 - s1 == 90.0
    assert default_rise_timeout(P) == pytest.approx(3 * 3 / 1.23 * 60)


def test_preamble_from_h_has_minimal_rise():
    room = simulate_room(preamble_schedule(P), replace(ENV, ambient_temp=26.0), 3.3)
    (s0, e0), _ = room.meta["segment_times"]
    assert e0 - s0 <= 1 / 3.3 + 1e-9


def _smoothed(room_trace, env=ENV):
    return maf_smooth(sense(room_trace, SENSOR, env), P.maf_window_w)


def test_clean_preamble_anchor_aligned():
    sched = TargetSchedule([Segment(600.0, 23.0)]) + preamble_schedule(P) + TargetSchedule([Segment(900.0, 23.0)])
    room = simulate_room(sched, ENV, 3.3)
    det = detect_preamble(_smoothed(room), P)
    true_anchor = room.meta["segment_times"][1][1]
    assert det is not None
    assert abs(det.anchor_time - true_anchor) * 3.3 <= 2


def test_constant_trace_has_no_preamble():
    flat = TemperatureTrace(3.3, 0.0, np.full(6000, 27.0))
    assert detect_preamble(flat, P) is None
    assert rx_state_machine(flat, P) == []


def test_door_opened_drift_is_not_a_preamble():
    for target in (27.0, 20.0):
        sched = TargetSchedule([(600.0, 23.0), (3600.0, target)])
        assert detect_preamble(_smoothed(simulate_room(sched, ENV, 3.3)), P) is None


# --- receiver -------------------------------------------------------------

def test_one_valid_frame_one_acceptance():
    bits = synth.random_frame(4)
    tx = transmit(bits, P, ENV, SENSOR)
    events = rx_state_machine(tx.smoothed, P)
    assert [f.bits() for f in accepted(events)] == [bits]
    assert rejected(events) == []
    positions = [e.position for e in events]
    assert positions == sorted(positions)


@pytest.mark.parametrize("seed", range(8))
def test_artifact_then_frame(seed):
    smoothed, bits, _, kind = synth.artifact_then_frame(seed)
    events = rx_state_machine(smoothed, P)
    got = [f.bits() for f in accepted(events)]
    assert got == [bits], kind
    for f in accepted(events):
        assert len(f) == len(bits) and even_parity(f.bits()[2:]) == 0


def test_mimic_is_rejected_as_unknown_opcode():
    smoothed, _, _, kind = synth.artifact_then_frame(3, kind="mimic")
    reasons = [r.reason for r in rejected(rx_state_machine(smoothed, P))]
    assert RejectReason.UNKNOWN_OPCODE in reasons


def test_streaming_matches_offline():
    smoothed, bits, _, _ = synth.artifact_then_frame(7)
    offline = rx_state_machine(smoothed, P)
    rx = Receiver(P)
    step = 1000
    for a in range(0, len(smoothed), step):
        chunk = smoothed.samples[a:a + step]
        rx.feed(TemperatureTrace(smoothed.sample_rate, smoothed.t0 + a / smoothed.sample_rate, chunk,
                                 smoothed.kind))
    rx.finish()
    assert sorted(rx.events, key=lambda e: e.position) == offline
    assert rx.state is RxState.IDLE
    assert [f.bits() for f in rx.frames] == [bits]


def test_streaming_rejects_gaps():
    rx = Receiver(P)
    rx.feed(TemperatureTrace(3.3, 0.0, np.zeros(100)))
    with pytest.raises(ValueError):
        rx.feed(TemperatureTrace(3.3, 100.0, np.zeros(100)))


def test_reception_window_gates_detection():
    tx = transmit(synth.random_frame(1), P, ENV, SENSOR)
    inside = rx_state_machine(tx.smoothed, P, window=ReceptionWindow(0.0, 3600.0))
    outside = rx_state_machine(tx.smoothed, P, window=ReceptionWindow(7200.0, 3600.0))
    assert len(accepted(inside)) == 1
    # listening starts mid-frame: whatever looks like a preamble there is not a frame
    assert accepted(outside) == []
    assert all(e.detail.anchor_time % 86400 >= 7200 for e in outside if e.kind is EventKind.PREAMBLE_DETECTED)
    assert ReceptionWindow(23 * 3600.0, 7200.0).contains(3600.0 - 1)


def test_truncated_transmission_is_rejected():
    bits = synth.random_frame(2)
    tx = transmit(bits, P, ENV, SENSOR, tail_slots=0)
    cut = tx.smoothed.with_samples(tx.smoothed.samples[: len(tx.smoothed) // 2])
    events = rx_state_machine(cut, P)
    first = [e for e in events if e.candidate == 1 and e.kind is not EventKind.BIT]
    assert [e.kind for e in first] == [EventKind.PREAMBLE_DETECTED, EventKind.FRAME_REJECTED]
    assert first[1].detail.reason is RejectReason.TRUNCATED
    assert all(f.bits() != bits for f in accepted(events))


@pytest.mark.parametrize("shift", [-2.0, 0.0, 1.5, 3.0])
def test_next_frame_unaffected_by_ambient_shift(shift):
    first, second = synth.random_frame(1), synth.random_frame(2)
    t1 = transmit(first, P, ENV, SENSOR)
    p2 = replace(P, temp_H=P.temp_H + shift, temp_L=P.temp_L + shift, diff_D=None)
    t2 = transmit(second, p2, replace(ENV, ambient_temp=ENV.ambient_temp + shift), SENSOR)
    room = TemperatureTrace(3.3, 0.0, np.concatenate([t1.room.samples, t2.room.samples]))
    events = rx_state_machine(_smoothed(room), P)
    assert [f.bits() for f in accepted(events)] == [first, second]


def test_loopback_variants_warmup_and_no_parity():
    bits = build_frame(0b011, [1, 0, 0, 1, 1, 0, 1, 0], parity_present=False)
    tx = transmit(bits, P, ENV, SENSOR, warmup=True)
    events = rx_state_machine(tx.smoothed, P, parity_present=False)
    assert [f.bits() for f in accepted(events)] == [bits]


# --- majority vote --------------------------------------------------------

def test_majority_two_of_three():
    frame = build_frame(0b011, [1, 1, 0, 0, 1, 0, 1, 0])
    bad = list(frame)
    bad[7] ^= 1
    assert majority_vote([frame, bad, frame]) == frame


@given(st.integers(0, 2**32))
def test_majority_five_copies_distinct_flips(seed):
    rng = np.random.default_rng(seed)
    frame = build_frame(0, rng.integers(0, 2, 128).tolist())
    spots = rng.choice(np.arange(len(frame)), size=5, replace=False)
    copies = []
    for k in spots:
        c = list(frame)
        c[k] ^= 1
        copies.append(c)
    assert majority_vote(copies, len(frame)) == frame


def test_majority_tie_goes_to_parity_valid_copy():
    good = build_frame(0b011, [1, 0, 1, 0, 1, 0, 1, 0])
    bad = list(good)
    bad[9] ^= 1
    assert majority_vote([bad, good], parity_valid=[False, True]) == good
    assert majority_vote([good, bad], parity_valid=[True, False]) == good
    tie_zero = majority_vote([[1], [0]])
    assert tie_zero == [0]


def test_majority_input_checks():
    with pytest.raises(ValueError):
        majority_vote([[1, 0]])
    with pytest.raises(ValueError):
        majority_vote([[1, 0], [1, 0, 1]])
    with pytest.raises(ValueError):
        majority_vote([[1, 0], [1, 0]], expected_length=3)
    with pytest.raises(ValueError):
        majority_vote([[1, 0], [1, 0]], parity_valid=[True])


def test_majority_vote_exhaustive_three_copies_one_error():
    frame = [1, 0, 1, 1, 0, 0, 1]
    for i, j in itertools.product(range(7), repeat=2):
        a, b = list(frame), list(frame)
        a[i] ^= 1
        b[j] ^= 1
        if i != j:
            assert majority_vote([a, b, frame]) == frame
