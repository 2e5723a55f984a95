use lll_core::medium::{resolve_collisions, LinkModel, OnAirTransmission, Position, Target};
use lll_core::phy_energy::{
    self, CadTimers, CorrectionDivisor, Frame, LadingPair, OffloadLink, RadioPowerProfile, TransmissionParams,
};
use proptest::prelude::*;

fn params(sf: u8, preamble: u32) -> TransmissionParams {
    TransmissionParams::new(sf, 125_000, 14, preamble).unwrap()
}

fn pair(tau_s: f64, conv_sf: u8) -> LadingPair {
    let listen = params(7, 57).with_power(2);
    let conv = params(conv_sf, 8);
    LadingPair { tau_s, link: OffloadLink { offload: listen, conv, payload_bytes: 2, t_rx_s: 5.0 * conv.symbol_duration().unwrap() } }
}

proptest! {
    #[test]
    fn symbol_duration_doubles_per_sf(sf in 7u8..12) {
        let a = phy_energy::symbol_duration(sf, 125_000).unwrap();
        let b = phy_energy::symbol_duration(sf + 1, 125_000).unwrap();
        prop_assert!((b - 2.0 * a).abs() < 1e-15);
    }

    #[test]
    fn airtime_monotone_in_payload(sf in 7u8..=12, payload in 0u32..200, preamble in 6u32..100) {
        let p = params(sf, preamble);
        let a = phy_energy::airtime(&p, Frame::Data(payload)).unwrap();
        let b = phy_energy::airtime(&p, Frame::Data(payload + 1)).unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn each_preamble_symbol_costs_one_symbol(sf in 7u8..=12, payload in 0u32..64, preamble in 6u32..200) {
        let a = phy_energy::airtime(&params(sf, preamble), Frame::Data(payload)).unwrap();
        let b = phy_energy::airtime(&params(sf, preamble + 1), Frame::Data(payload)).unwrap();
        let t = phy_energy::symbol_duration(sf, 125_000).unwrap();
        prop_assert!((b - a - t).abs() < 1e-12);
    }

    #[test]
    fn ack_is_never_longer_than_data(sf in 7u8..=12, payload in 0u32..64, preamble in 6u32..64) {
        let p = params(sf, preamble);
        prop_assert!(phy_energy::airtime(&p, Frame::Ack).unwrap() <= phy_energy::airtime(&p, Frame::Data(payload)).unwrap());
    }

    #[test]
    fn lading_energy_linear_in_time(t in 0.0f64..50_000.0, k in 0.0f64..4.0, tau in 60.0f64..3600.0, sf in 9u8..=10) {
        let prof = RadioPowerProfile::default();
        let timers = CadTimers { t1_s: 0.05, t2_s: 0.0041 };
        let listen = pair(tau, sf).link.offload;
        let e = |x: f64| phy_energy::lading_energy(&prof, x, &timers, &listen, 2.0, &[pair(tau, sf)], CorrectionDivisor::CadPeriod).unwrap();
        let (a, b) = (e(t), e(k * t));
        prop_assert!((b - k * a).abs() <= 1e-9 * b.abs().max(1.0));
    }

    #[test]
    fn lading_power_grows_with_gamma_and_rate(g in 1.0f64..4.0, tau in 60.0f64..3600.0) {
        let prof = RadioPowerProfile::default();
        let timers = CadTimers { t1_s: 0.05, t2_s: 0.0041 };
        let listen = pair(tau, 10).link.offload;
        let p = |g: f64, tau: f64| phy_energy::lading_power(&prof, &timers, &listen, g, &[pair(tau, 10)], CorrectionDivisor::CadPeriod).unwrap();
        prop_assert!(p(g + 0.5, tau) >= p(g, tau));
        prop_assert!(p(g, tau / 2.0) >= p(g, tau));
        let cad_w = phy_energy::cad_cycle_energy(&prof, &timers, &listen).unwrap() / timers.period();
        prop_assert!(p(g, tau) > cad_w);
    }

    #[test]
    fn min_preamble_always_detected(t1_ms in 4.1f64..120.0, phase in 0.0f64..1.0) {
        let timers = CadTimers { t1_s: t1_ms / 1e3, t2_s: 0.0041 };
        let n = phy_energy::min_preamble_symbols(&timers, 7, 125_000).unwrap();
        let p = params(7, n);
        let sched = lll_core::medium::CadSchedule { epoch_s: 0.0, timers, probe_s: phy_energy::cad_probe_duration(7, 125_000).unwrap() };
        let start = 10.0 + phase * timers.period();
        let tx = on_air(0, p, start);
        prop_assert!(sched.first_detection(&tx).is_some(), "missed with {n} symbols at T1 = {t1_ms} ms");
    }

    #[test]
    fn collision_outcome_ignores_order(
        (frames, order) in prop::collection::vec((0.0f64..2.0, 0u8..2, 7u8..=8), 1..8).prop_flat_map(|v| {
            let n = v.len();
            (Just(v), Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
        }),
    ) {
        let link = LinkModel::default();
        let txs: Vec<OnAirTransmission> = frames
            .iter()
            .enumerate()
            .map(|(i, &(start, ch, sf))| {
                let mut p = params(sf, 8);
                p.channel = ch;
                on_air(i as u64, p, start)
            })
            .collect();
        let base = resolve_collisions(&txs, &link);
        let shuffled: Vec<OnAirTransmission> = order.iter().map(|&i| txs[i].clone()).collect();
        let out = resolve_collisions(&shuffled, &link);
        for (k, &i) in order.iter().enumerate() {
            prop_assert_eq!(out[k], base[i]);
        }
    }
}

fn on_air(id: u64, params: TransmissionParams, start_s: f64) -> OnAirTransmission {
    let t_sym = params.symbol_duration().unwrap();
    let end = start_s + phy_energy::airtime(&params, Frame::Data(2)).unwrap();
    OnAirTransmission {
        id,
        sender: id as u32,
        sender_pos: Position::new(100.0 * id as f64, 0.0),
        params,
        start_s,
        preamble_end_s: start_s + params.preamble_symbols as f64 * t_sym,
        end_s: end,
        packet_id: id,
        payload_bytes: 2,
        target: Target::Gateway,
    }
}
