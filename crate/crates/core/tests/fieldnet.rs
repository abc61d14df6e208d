use fieldlink_core::envsim::EnvState;
use fieldlink_core::fieldnet::{
    bpsk_bit_error, channel_transmit, crc16_ccitt_false, receive, Channel, ChannelParams, Flags, Frame, FrameError,
    NodeState, ScheduledFault, SensorNode, TestOutcome, TestStatus, Unit, FRAME_LEN,
};
use fieldlink_core::xducer::{AdcSpec, ChainRegistry, FaultState};
use fieldlink_core::SensorKind;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Bit-at-a-time CRC-16/CCITT-FALSE, kept separate from the table version.
fn crc_bitwise(data: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &byte in data {
        for i in (0..8).rev() {
            let bit = (byte >> i) & 1 == 1;
            let top = crc & 0x8000 != 0;
            crc <<= 1;
            if bit != top {
                crc ^= 0x1021;
            }
        }
    }
    crc
}

fn fixed_frame() -> [u8; FRAME_LEN] {
    Frame { node_id: 2, sensor_kind: 2, seq: 0x1234, value: 2.5, flags: Flags(0x03) }.encode()
}

#[test]
fn crc_check_value() {
    assert_eq!(crc16_ccitt_false(b"123456789"), 0x29B1);
    assert_eq!(crc_bitwise(b"123456789"), 0x29B1);
}

#[test]
fn every_single_and_double_flip_is_rejected() {
    let clean = fixed_frame();
    let bits = FRAME_LEN * 8;
    let flip = |b: &mut [u8; FRAME_LEN], i: usize| b[i / 8] ^= 0x80 >> (i % 8);
    let mut patterns = 0;
    for i in 0..bits {
        let mut b = clean;
        flip(&mut b, i);
        assert!(receive(&b).is_err(), "single flip {i} accepted");
        patterns += 1;
        for j in i + 1..bits {
            let mut b2 = b;
            flip(&mut b2, j);
            assert!(receive(&b2).is_err(), "double flip {i},{j} accepted");
            patterns += 1;
        }
    }
    assert_eq!(patterns, 96 + 96 * 95 / 2);
}

#[test]
fn wrong_length_and_sync_are_rejected() {
    let mut b = fixed_frame();
    assert_eq!(Frame::decode(&b[..11]), Err(FrameError::Length(11)));
    b[0] = 0x5A;
    assert_eq!(Frame::decode(&b), Err(FrameError::Sync(0x5A)));
}

#[test]
fn bpsk_at_zero_db() {
    // Q(sqrt 2) from the tabulated normal tail
    assert!((bpsk_bit_error(0.0) - 0.078_649_6).abs() < 1e-6);
}

#[test]
fn noiseless_channel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = fixed_frame();
    for _ in 0..1000 {
        assert_eq!(channel_transmit(&b, &ChannelParams::default(), &mut rng), Some(b));
    }
}

#[test]
fn channel_drop_rate_matches_p_drop() {
    let params = ChannelParams { p_drop: 0.2, ..ChannelParams::default() };
    let mut ch = Channel::new(params, ChaCha8Rng::seed_from_u64(9)).unwrap();
    let f = Frame { node_id: 0, sensor_kind: 0, seq: 0, value: 1.0, flags: Flags(0) };
    let n = 50_000;
    for i in 0..n {
        ch.send(&f, i as f64);
    }
    let s = ch.stats();
    let p = s.dropped as f64 / n as f64;
    // 5 sigma of a binomial proportion
    let sigma = (0.2f64 * 0.8 / n as f64).sqrt();
    assert!((p - 0.2).abs() < 5.0 * sigma, "drop rate {p}");
    assert_eq!(ch.deliver_until(f64::INFINITY).len() as u64, s.sent - s.dropped);
}

#[test]
fn noisy_channel_never_delivers_a_corrupted_frame() {
    let params = ChannelParams { p_bit: Some(0.01), ..ChannelParams::default() };
    let mut ch = Channel::new(params, ChaCha8Rng::seed_from_u64(4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut sent = Vec::new();
    for i in 0..20_000u32 {
        let f = Frame { node_id: (i % 10) as u8, sensor_kind: (i % 10) as u8, seq: i as u16, value: rng.random(), flags: Flags(0) };
        ch.send(&f, i as f64);
        sent.push(f);
    }
    let got = ch.deliver_until(f64::INFINITY);
    let stats = ch.stats();
    assert!(stats.rejected > 0);
    for (_, f) in got {
        assert!(sent[f.seq as usize].same_bits(&f));
    }
}

#[test]
fn delivery_order_is_emit_time_then_node() {
    let mut ch = Channel::new(ChannelParams::default(), ChaCha8Rng::seed_from_u64(1)).unwrap();
    for node in [7u8, 3, 5] {
        for t in [2.0, 1.0] {
            ch.send(&Frame { node_id: node, sensor_kind: node, seq: 0, value: 0.0, flags: Flags(0) }, t);
        }
    }
    let order: Vec<(f64, u8)> = ch.deliver_until(10.0).into_iter().map(|(at, f)| (at, f.node_id)).collect();
    let ids: Vec<u8> = order.iter().map(|x| x.1).collect();
    assert_eq!(ids, vec![3, 5, 7, 3, 5, 7]);
}

proptest! {
    #[test]
    fn frame_round_trip(node in any::<u8>(), kind in any::<u8>(), seq in any::<u16>(), bits in any::<u32>(), flags in 0u8..16) {
        let f = Frame { node_id: node, sensor_kind: kind, seq, value: f32::from_bits(bits), flags: Flags(flags) };
        let back = Frame::decode(&f.encode()).unwrap();
        prop_assert!(back.same_bits(&f));
    }

    #[test]
    fn table_crc_matches_bitwise(data in proptest::collection::vec(any::<u8>(), 0..64)) {
        prop_assert_eq!(crc16_ccitt_false(&data), crc_bitwise(&data));
    }
}

// ---------------------------------------------------------------------------
// Failover automaton
// ---------------------------------------------------------------------------

/// Reference automaton over the node's externally visible states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ref {
    /// On the primary; `spare_bad` once the standby has failed a test.
    Primary { ok: bool, spare_bad: bool },
    /// On the standby awaiting the manager's confirmation.
    Standby,
    Replace,
}

fn ref_step(s: Ref, primary_ok: bool, standby_ok: bool) -> Ref {
    use Ref::*;
    match (s, primary_ok, standby_ok) {
        (Replace, _, _) => Replace,
        (Standby, _, true) => Standby,
        (Standby, _, false) => Replace,
        (Primary { spare_bad, .. }, true, true) => Primary { ok: true, spare_bad },
        (Primary { .. }, true, false) => Primary { ok: false, spare_bad: true },
        (Primary { spare_bad: false, .. }, false, true) => Standby,
        (Primary { .. }, false, _) => Replace,
    }
}

fn ref_view(s: Ref) -> (Unit, TestStatus) {
    match s {
        Ref::Primary { ok: true, .. } => (Unit::Primary, TestStatus::Ok),
        Ref::Primary { ok: false, .. } => (Unit::Primary, TestStatus::Error),
        Ref::Standby => (Unit::Standby, TestStatus::Error),
        Ref::Replace => (Unit::Standby, TestStatus::NeedsReplacement),
    }
}

#[test]
fn node_matches_reference_automaton_on_all_sequences() {
    let mut checked = 0;
    for code in 0u32..4096 {
        let mut node = NodeState::new(0, SensorKind::TankLevel);
        let mut r = Ref::Primary { ok: true, spare_bad: false };
        let mut ever_standby = false;
        for step in 0..6 {
            let o = (code >> (2 * step)) & 3;
            let outcome = TestOutcome { primary_ok: o & 1 == 1, standby_ok: o & 2 == 2 };
            node.apply_test(outcome, step as f64 * 30.0);
            r = ref_step(r, outcome.primary_ok, outcome.standby_ok);
            assert_eq!((node.active_unit, node.test_status), ref_view(r), "sequence {code:012b} step {step}");
            if ever_standby {
                assert_eq!(node.active_unit, Unit::Standby, "returned to primary");
            }
            ever_standby |= node.active_unit == Unit::Standby;
            if node.test_status == TestStatus::NeedsReplacement {
                assert!(node.primary_failed && node.standby_failed);
            }
            if node.active_unit == Unit::Standby {
                assert!(node.primary_failed);
            }
        }
        checked += 1;
    }
    assert_eq!(checked, 4096);
}

#[test]
fn confirmed_standby_reports_ok() {
    let mut node = NodeState::new(0, SensorKind::TankLevel);
    assert!(node.connect_standby().is_err());
    node.apply_test(TestOutcome { primary_ok: false, standby_ok: true }, 30.0);
    assert_eq!(node.test_status, TestStatus::Error);
    node.connect_standby().unwrap();
    node.apply_test(TestOutcome { primary_ok: false, standby_ok: true }, 60.0);
    assert_eq!((node.active_unit, node.test_status), (Unit::Standby, TestStatus::Ok));
}

fn tank_node(faults: Vec<ScheduledFault>) -> SensorNode {
    let chain = ChainRegistry::builtin().default_for(SensorKind::TankLevel).unwrap();
    SensorNode::new(2, chain, AdcSpec::default(), 0.0, 0.02, faults, ChaCha8Rng::seed_from_u64(3))
}

#[test]
fn failover_within_one_test_period() {
    let env = EnvState { tank_level: 2.5, ..EnvState::default() };
    let period = 30.0;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let at_s = rng.random_range(0.0..600.0);
        let fault = ScheduledFault { unit: Unit::Primary, at_s, fault: FaultState::OpenCircuit };
        let mut node = tank_node(vec![fault]);
        let mut t = 0.0;
        let switched = loop {
            node.inject_due_faults(t);
            node.self_test(&env, t);
            if node.state.active_unit == Unit::Standby {
                break t;
            }
            t += period;
        };
        assert!(switched >= at_s && switched - at_s <= period, "fault {at_s}, switched {switched}");
    }
}

#[test]
fn stuck_then_open_circuit_needs_replacement() {
    let env = EnvState { tank_level: 2.5, ..EnvState::default() };
    let mut node = tank_node(vec![]);
    node.set_fault(Unit::Primary, FaultState::Stuck { at: Some(0.2) });
    node.self_test(&env, 30.0);
    assert_eq!(node.state.test_status, TestStatus::Error);
    node.set_fault(Unit::Standby, FaultState::OpenCircuit);
    node.self_test(&env, 60.0);
    assert_eq!(node.state.test_status, TestStatus::NeedsReplacement);
    let f = node.sample_and_emit(&env);
    assert!(f.flags.needs_replacement() && f.flags.standby());
}

#[test]
fn seq_wraps() {
    let env = EnvState::default();
    let mut node = tank_node(vec![]);
    node.state.seq = u16::MAX;
    assert_eq!(node.sample_and_emit(&env).seq, u16::MAX);
    assert_eq!(node.sample_and_emit(&env).seq, 0);
}
