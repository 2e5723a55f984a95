//! LoRa airtime and radio energy model.
//!
//! Everything here is a pure function of the radio configuration and a
//! [`RadioPowerProfile`]. The lading-mode overhead functions
//! ([`cad_cycle_energy`], [`forward_energy`], [`ack_energy`],
//! [`correction_energy`], [`lading_energy`]) are what the network server uses
//! to budget how long an affluent node can afford to relay traffic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Symbol time above which low-data-rate optimisation is switched on.
pub const LOW_DATA_RATE_SYMBOL_S: f64 = 0.016;

/// Reference path loss at 1 m, dB.
pub const REFERENCE_LOSS_DB: f64 = 7.7;
/// Log-distance path loss exponent.
pub const PATH_LOSS_EXPONENT: f64 = 3.76;
/// Reference distance for the path loss model, metres.
pub const REFERENCE_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("spreading factor {0} outside [6, 12]")]
    InvalidSpreadingFactor(u8),
    #[error("bandwidth {0} Hz not supported (expected 125000 or 500000)")]
    InvalidBandwidth(u32),
    #[error("sf - 2*de must be positive (sf {sf}, de {de})")]
    NonPositiveSymbolDivisor { sf: u8, de: u8 },
    #[error("no transmit power entry for {0} dBm")]
    UnknownPowerLevel(i32),
    #[error("negative duration {0} s")]
    NegativeDuration(f64),
    #[error("CAD probe of {probe_s} s does not fit in T2 = {t2_s} s")]
    ProbeExceedsWindow { probe_s: f64, t2_s: f64 },
    #[error("CAD timers must be positive (t1 {t1_s}, t2 {t2_s})")]
    InvalidTimers { t1_s: f64, t2_s: f64 },
    #[error("minimum inter-arrival time must be positive, got {0}")]
    NonPositiveInterArrival(f64),
    #[error("retransmission overhead must be >= 1, got {0}")]
    GammaBelowOne(f64),
    #[error("distance {0} m is below the 1 m reference distance")]
    DistanceBelowReference(f64),
    #[error("invalid power profile: {0}")]
    InvalidProfile(String),
}

pub type Result<T> = std::result::Result<T, PhyError>;

/// LoRa coding rate 4/(4+n). Stored by its airtime multiplier 1/CR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum CodingRate {
    #[default]
    #[serde(rename = "4/5")]
    Cr4_5,
    #[serde(rename = "4/6")]
    Cr4_6,
    #[serde(rename = "4/7")]
    Cr4_7,
    #[serde(rename = "4/8")]
    Cr4_8,
}

impl CodingRate {
    pub const ALL: [CodingRate; 4] = [
        CodingRate::Cr4_5,
        CodingRate::Cr4_6,
        CodingRate::Cr4_7,
        CodingRate::Cr4_8,
    ];

    /// Denominator of 4/x.
    pub fn denominator(self) -> u32 {
        match self {
            CodingRate::Cr4_5 => 5,
            CodingRate::Cr4_6 => 6,
            CodingRate::Cr4_7 => 7,
            CodingRate::Cr4_8 => 8,
        }
    }

    /// The 1/CR multiplier applied to the payload symbol count.
    pub fn inverse(self) -> f64 {
        self.denominator() as f64 / 4.0
    }
}

/// One radio configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmissionParams {
    pub sf: u8,
    pub bw_hz: u32,
    #[serde(default)]
    pub cr: CodingRate,
    pub power_dbm: i32,
    #[serde(default)]
    pub channel: u8,
    pub preamble_symbols: u32,
    #[serde(default)]
    pub iq_inverted: bool,
    /// Low data rate optimisation (DE).
    #[serde(default)]
    pub low_data_rate: bool,
}

impl TransmissionParams {
    /// Builds a parameter set with DE derived from the symbol time.
    pub fn new(sf: u8, bw_hz: u32, power_dbm: i32, preamble_symbols: u32) -> Result<Self> {
        let p = TransmissionParams {
            sf,
            bw_hz,
            cr: CodingRate::Cr4_5,
            power_dbm,
            channel: 0,
            preamble_symbols,
            iq_inverted: false,
            low_data_rate: low_data_rate_flag(sf, bw_hz)?,
        };
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        validate_sf_bw(self.sf, self.bw_hz)?;
        if (self.sf as i32) - 2 * self.de() as i32 <= 0 {
            return Err(PhyError::NonPositiveSymbolDivisor { sf: self.sf, de: self.de() });
        }
        Ok(())
    }

    pub fn de(&self) -> u8 {
        self.low_data_rate as u8
    }

    pub fn symbol_duration(&self) -> Result<f64> {
        symbol_duration(self.sf, self.bw_hz)
    }

    pub fn symbols(&self, frame: Frame) -> Result<f64> {
        packet_symbols(frame, self.sf, self.cr, self.de(), self.preamble_symbols)
    }

    pub fn with_preamble(mut self, preamble_symbols: u32) -> Self {
        self.preamble_symbols = preamble_symbols;
        self
    }

    pub fn with_power(mut self, power_dbm: i32) -> Self {
        self.power_dbm = power_dbm;
        self
    }
}

fn validate_sf_bw(sf: u8, bw_hz: u32) -> Result<()> {
    if !(6..=12).contains(&sf) {
        return Err(PhyError::InvalidSpreadingFactor(sf));
    }
    if bw_hz != 125_000 && bw_hz != 500_000 {
        return Err(PhyError::InvalidBandwidth(bw_hz));
    }
    Ok(())
}

/// What is being sent: a data frame with a payload, or a payload-free ACK
/// (header only, no CRC).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Data(u32),
    Ack,
}

/// Power draw per radio state, watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioPowerProfile {
    /// Transmit power level (dBm) -> electrical power (W).
    pub p_tx_w: BTreeMap<i32, f64>,
    pub p_rx_w: f64,
    pub p_rc_osc_w: f64,
    #[serde(default)]
    pub p_sleep_w: f64,
}

impl Default for RadioPowerProfile {
    /// 3.3 V supply; receive 11 mA; RC-oscillator idle at half the receive
    /// draw; transmit currents 24/25/25/32/44 mA at 2/5/8/11/14 dBm.
    fn default() -> Self {
        const VDD: f64 = 3.3;
        let p_tx_w = [(2, 24.0), (5, 25.0), (8, 25.0), (11, 32.0), (14, 44.0)]
            .into_iter()
            .map(|(dbm, ma)| (dbm, ma * 1e-3 * VDD))
            .collect();
        let p_rx_w = 11.0e-3 * VDD;
        RadioPowerProfile { p_tx_w, p_rx_w, p_rc_osc_w: p_rx_w / 2.0, p_sleep_w: 0.0 }
    }
}

impl RadioPowerProfile {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .p_tx_w
            .values()
            .chain([&self.p_rx_w, &self.p_rc_osc_w, &self.p_sleep_w]);
        for p in all {
            if !p.is_finite() || *p < 0.0 {
                return Err(PhyError::InvalidProfile(format!("power {p} W is not a non-negative number")));
            }
        }
        if !(self.p_rx_w >= self.p_rc_osc_w && self.p_rc_osc_w >= self.p_sleep_w) {
            return Err(PhyError::InvalidProfile("expected p_rx >= p_rc_osc >= p_sleep".into()));
        }
        if self.p_tx_w.is_empty() {
            return Err(PhyError::InvalidProfile("empty transmit power table".into()));
        }
        Ok(())
    }

    pub fn tx_power(&self, power_dbm: i32) -> Result<f64> {
        self.p_tx_w.get(&power_dbm).copied().ok_or(PhyError::UnknownPowerLevel(power_dbm))
    }

    pub fn min_level(&self) -> i32 {
        *self.p_tx_w.keys().next().expect("validated profile has levels")
    }

    pub fn max_level(&self) -> i32 {
        *self.p_tx_w.keys().next_back().expect("validated profile has levels")
    }

    /// Smallest configured level that is at least `dbm`, if any.
    pub fn level_at_least(&self, dbm: f64) -> Option<i32> {
        self.p_tx_w.keys().copied().find(|&l| l as f64 >= dbm - 1e-9)
    }
}

/// Sleep and probe sub-intervals of one lading-mode CAD cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CadTimers {
    pub t1_s: f64,
    pub t2_s: f64,
}

impl Default for CadTimers {
    fn default() -> Self {
        CadTimers { t1_s: 0.0041, t2_s: 0.0041 }
    }
}

impl CadTimers {
    pub fn period(&self) -> f64 {
        self.t1_s + self.t2_s
    }

    /// Checks the timers against the probe length at the listening parameters.
    pub fn validate_for(&self, sf: u8, bw_hz: u32) -> Result<()> {
        if !(self.t1_s > 0.0 && self.t2_s > 0.0) || !self.t1_s.is_finite() || !self.t2_s.is_finite() {
            return Err(PhyError::InvalidTimers { t1_s: self.t1_s, t2_s: self.t2_s });
        }
        let probe_s = cad_probe_duration(sf, bw_hz)?;
        if self.t2_s + 1e-15 < probe_s {
            return Err(PhyError::ProbeExceedsWindow { probe_s, t2_s: self.t2_s });
        }
        Ok(())
    }
}

pub fn symbol_duration(sf: u8, bw_hz: u32) -> Result<f64> {
    validate_sf_bw(sf, bw_hz)?;
    Ok((1u64 << sf) as f64 / bw_hz as f64)
}

/// Duration of a two-symbol CAD probe.
pub fn cad_probe_duration(sf: u8, bw_hz: u32) -> Result<f64> {
    Ok(2.0 * symbol_duration(sf, bw_hz)?)
}

fn ceil_div(num: i64, den: i64) -> i64 {
    debug_assert!(den > 0);
    let q = num.div_euclid(den);
    if num.rem_euclid(den) == 0 {
        q
    } else {
        q + 1
    }
}

/// Number of symbols in a frame, header and preamble included.
///
/// Data frames use `8*payload - 4*sf + 24` in the numerator; ACK frames carry
/// no payload and no CRC and use `8 - 4*sf`.
pub fn packet_symbols(frame: Frame, sf: u8, cr: CodingRate, de: u8, preamble_symbols: u32) -> Result<f64> {
    let divisor = sf as i64 - 2 * de as i64;
    if divisor <= 0 {
        return Err(PhyError::NonPositiveSymbolDivisor { sf, de });
    }
    let numerator = match frame {
        Frame::Data(payload) => 8 * payload as i64 - 4 * sf as i64 + 24,
        Frame::Ack => 8 - 4 * sf as i64,
    };
    let blocks = ceil_div(numerator, divisor) as f64;
    let payload_symbols = (blocks * cr.inverse()).max(0.0);
    Ok(preamble_symbols as f64 + 4.25 + 8.0 + payload_symbols)
}

pub fn airtime(params: &TransmissionParams, frame: Frame) -> Result<f64> {
    params.validate()?;
    Ok(params.symbols(frame)? * params.symbol_duration()?)
}

pub fn tx_energy(profile: &RadioPowerProfile, params: &TransmissionParams, frame: Frame) -> Result<f64> {
    Ok(profile.tx_power(params.power_dbm)? * airtime(params, frame)?)
}

pub fn rx_energy(profile: &RadioPowerProfile, duration_s: f64) -> Result<f64> {
    if duration_s < 0.0 || duration_s.is_nan() {
        return Err(PhyError::NegativeDuration(duration_s));
    }
    Ok(profile.p_rx_w * duration_s)
}

/// Energy of one lading CAD cycle: idle on the RC oscillator for T2 with the
/// two-symbol probe drawn at receive power. Sleep during T1 is free.
pub fn cad_cycle_energy(profile: &RadioPowerProfile, timers: &CadTimers, offload: &TransmissionParams) -> Result<f64> {
    timers.validate_for(offload.sf, offload.bw_hz)?;
    let probe = cad_probe_duration(offload.sf, offload.bw_hz)?;
    Ok(timers.t2_s * profile.p_rc_osc_w + probe * (profile.p_rx_w - profile.p_rc_osc_w))
}

/// One depleting-to-affluent relay relationship, as seen by the energy model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffloadLink {
    /// Depleting node's offload configuration (its preamble is the
    /// CAD-compatible one).
    pub offload: TransmissionParams,
    /// Affluent node's conventional configuration.
    pub conv: TransmissionParams,
    pub payload_bytes: u32,
    /// Length of one of the affluent node's gateway receive windows.
    pub t_rx_s: f64,
}

impl OffloadLink {
    fn upload_airtime(&self) -> Result<f64> {
        airtime(&self.offload, Frame::Data(self.payload_bytes))
    }

    /// The forwarded frame keeps the offloaded packet's preamble.
    fn forward_airtime(&self) -> Result<f64> {
        let fwd = self.conv.with_preamble(self.offload.preamble_symbols);
        airtime(&fwd, Frame::Data(self.payload_bytes))
    }

    fn ack_airtime(&self) -> Result<f64> {
        airtime(&self.offload, Frame::Ack)
    }
}

/// Energy for the affluent node to receive one offloaded packet and forward
/// it to the gateway.
pub fn forward_energy(profile: &RadioPowerProfile, link: &OffloadLink) -> Result<f64> {
    let receive = profile.p_rx_w * link.upload_airtime()?;
    let forward = profile.tx_power(link.conv.power_dbm)? * link.forward_airtime()?;
    Ok(receive + forward)
}

/// Energy for sending the two offload ACKs and listening for the gateway ACK
/// in two windows of `t_rx_s` each.
pub fn ack_energy(profile: &RadioPowerProfile, offload: &TransmissionParams, t_rx_s: f64) -> Result<f64> {
    if t_rx_s < 0.0 || t_rx_s.is_nan() {
        return Err(PhyError::NegativeDuration(t_rx_s));
    }
    let ack_tx = profile.tx_power(offload.power_dbm)? * airtime(offload, Frame::Ack)?;
    Ok(2.0 * profile.p_rx_w * t_rx_s + 2.0 * ack_tx)
}

/// Time base used to turn busy time into displaced CAD cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionDivisor {
    /// One CAD cycle per T_CAD of busy time.
    #[default]
    CadPeriod,
    /// One CAD cycle per offload symbol time of busy time.
    OffloadSymbol,
}

/// Total time per relayed packet during which the affluent node does not
/// run CAD: two gateway windows, two ACKs, the reception and the forward.
pub fn busy_time_per_packet(link: &OffloadLink) -> Result<f64> {
    if link.t_rx_s < 0.0 || link.t_rx_s.is_nan() {
        return Err(PhyError::NegativeDuration(link.t_rx_s));
    }
    Ok(2.0 * link.t_rx_s + 2.0 * link.ack_airtime()? + link.upload_airtime()? + link.forward_airtime()?)
}

/// CAD energy not spent while the node is busy relaying one packet.
pub fn correction_energy(
    profile: &RadioPowerProfile,
    timers: &CadTimers,
    link: &OffloadLink,
    divisor: CorrectionDivisor,
) -> Result<f64> {
    let e_cad = cad_cycle_energy(profile, timers, &link.offload)?;
    let base = match divisor {
        CorrectionDivisor::CadPeriod => timers.period(),
        CorrectionDivisor::OffloadSymbol => link.offload.symbol_duration()?,
    };
    Ok(e_cad / base * busy_time_per_packet(link)?)
}

/// A depleting node served by an affluent node, with its minimum
/// inter-arrival time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadingPair {
    pub tau_s: f64,
    pub link: OffloadLink,
}

/// Net energy per offloaded packet at the affluent node:
/// forward + ACK - displaced CAD.
pub fn per_packet_overhead(
    profile: &RadioPowerProfile,
    timers: &CadTimers,
    link: &OffloadLink,
    divisor: CorrectionDivisor,
) -> Result<f64> {
    Ok(forward_energy(profile, link)? + ack_energy(profile, &link.offload, link.t_rx_s)?
        - correction_energy(profile, timers, link, divisor)?)
}

/// Lading-mode energy rate in watts: CAD plus the expected relaying load of
/// every served depleting node. Multiplying by T_LM gives the total overhead.
pub fn lading_power(
    profile: &RadioPowerProfile,
    timers: &CadTimers,
    listen: &TransmissionParams,
    gamma: f64,
    pairs: &[LadingPair],
    divisor: CorrectionDivisor,
) -> Result<f64> {
    if gamma.is_nan() || gamma < 1.0 {
        return Err(PhyError::GammaBelowOne(gamma));
    }
    let mut rate = cad_cycle_energy(profile, timers, listen)? / timers.period();
    for pair in pairs {
        if !(pair.tau_s > 0.0) {
            return Err(PhyError::NonPositiveInterArrival(pair.tau_s));
        }
        rate += gamma / pair.tau_s * per_packet_overhead(profile, timers, &pair.link, divisor)?;
    }
    Ok(rate)
}

/// Total lading-mode overhead for a granted lading time `t_lm_s`.
pub fn lading_energy(
    profile: &RadioPowerProfile,
    t_lm_s: f64,
    timers: &CadTimers,
    listen: &TransmissionParams,
    gamma: f64,
    pairs: &[LadingPair],
    divisor: CorrectionDivisor,
) -> Result<f64> {
    if t_lm_s < 0.0 || t_lm_s.is_nan() {
        return Err(PhyError::NegativeDuration(t_lm_s));
    }
    Ok(t_lm_s * lading_power(profile, timers, listen, gamma, pairs, divisor)?)
}

/// Energy for a depleting node to push one packet to its affluent partner.
pub fn offload_packet_energy(profile: &RadioPowerProfile, offload: &TransmissionParams, payload_bytes: u32) -> Result<f64> {
    tx_energy(profile, offload, Frame::Data(payload_bytes))
}

/// Shortest preamble a lading listener is guaranteed to catch.
pub fn min_preamble_symbols(timers: &CadTimers, sf: u8, bw_hz: u32) -> Result<u32> {
    validate_sf_bw(sf, bw_hz)?;
    let x = (timers.t1_s + 2.0 * timers.t2_s) * bw_hz as f64 / (1u64 << sf) as f64;
    let rounded = x.round();
    let n = if (x - rounded).abs() < 1e-9 { rounded } else { x.ceil() };
    Ok(n.max(0.0) as u32)
}

/// Log-distance path loss; distances below 1 m are treated as 1 m.
pub fn path_loss_db(distance_m: f64) -> f64 {
    let d = distance_m.max(REFERENCE_DISTANCE_M);
    REFERENCE_LOSS_DB + 10.0 * PATH_LOSS_EXPONENT * (d / REFERENCE_DISTANCE_M).log10()
}

/// Transmit power that lands exactly at the receiver sensitivity, clamped to
/// the hardware range.
pub fn initial_offload_power(sensitivity_dbm: f64, distance_m: f64, range_dbm: (f64, f64)) -> Result<f64> {
    if distance_m.is_nan() || distance_m < REFERENCE_DISTANCE_M {
        return Err(PhyError::DistanceBelowReference(distance_m));
    }
    Ok((sensitivity_dbm + path_loss_db(distance_m)).clamp(range_dbm.0, range_dbm.1))
}

pub fn low_data_rate_flag(sf: u8, bw_hz: u32) -> Result<bool> {
    Ok(symbol_duration(sf, bw_hz)? > LOW_DATA_RATE_SYMBOL_S)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
    }

    fn sf7() -> TransmissionParams {
        TransmissionParams::new(7, 125_000, 2, 13).unwrap()
    }

    #[test]
    fn symbol_duration_examples() {
        assert!(close(symbol_duration(7, 125_000).unwrap(), 0.001024));
        assert!(close(symbol_duration(8, 125_000).unwrap(), 0.002048));
        assert!(close(symbol_duration(12, 500_000).unwrap(), 0.008192));
        assert_eq!(symbol_duration(13, 125_000), Err(PhyError::InvalidSpreadingFactor(13)));
        assert_eq!(symbol_duration(7, 250_000), Err(PhyError::InvalidBandwidth(250_000)));
    }

    #[test]
    fn packet_symbol_examples() {
        let cr = CodingRate::Cr4_5;
        assert_eq!(packet_symbols(Frame::Data(2), 7, cr, 0, 13).unwrap(), 27.75);
        assert_eq!(packet_symbols(Frame::Data(2), 10, cr, 0, 13).unwrap(), 25.25);
        assert_eq!(packet_symbols(Frame::Ack, 7, cr, 0, 13).unwrap(), 25.25);
        assert_eq!(packet_symbols(Frame::Data(0), 7, cr, 0, 0).unwrap(), 12.25);
        assert!(matches!(
            packet_symbols(Frame::Data(2), 6, cr, 3, 8),
            Err(PhyError::NonPositiveSymbolDivisor { .. })
        ));
    }

    #[test]
    fn airtime_and_tx_energy() {
        let p = sf7();
        assert!(close(airtime(&p, Frame::Data(2)).unwrap(), 0.028416));
        assert!(close(airtime(&p, Frame::Ack).unwrap(), 0.025856));
        assert!(close(airtime(&p.with_preamble(0), Frame::Data(0)).unwrap(), 12.25 * 0.001024));

        let mut profile = RadioPowerProfile::default();
        profile.p_tx_w.insert(2, 0.1);
        assert!(close(tx_energy(&profile, &p, Frame::Data(2)).unwrap(), 2.8416e-3));
        profile.p_tx_w.insert(2, 0.0);
        assert_eq!(tx_energy(&profile, &p, Frame::Data(2)).unwrap(), 0.0);
        assert_eq!(
            tx_energy(&profile, &p.with_power(3), Frame::Data(2)),
            Err(PhyError::UnknownPowerLevel(3))
        );
    }

    #[test]
    fn rx_energy_examples() {
        let profile = RadioPowerProfile { p_rx_w: 0.0264, p_rc_osc_w: 0.0132, ..Default::default() };
        assert!(close(rx_energy(&profile, 1.0).unwrap(), 0.0264));
        assert_eq!(rx_energy(&profile, 0.0).unwrap(), 0.0);
        assert!((rx_energy(&profile, 0.028416).unwrap() - 750.2e-6).abs() < 0.05e-6);
        assert!(rx_energy(&profile, -1.0).is_err());
    }

    #[test]
    fn cad_cycle_examples() {
        let mut profile = RadioPowerProfile { p_rx_w: 0.0264, p_rc_osc_w: 0.0132, ..Default::default() };
        let timers = CadTimers::default();
        let e = cad_cycle_energy(&profile, &timers, &sf7()).unwrap();
        assert!((e - 81.1536e-6).abs() < 1e-12, "{e}");
        profile.p_rc_osc_w = profile.p_rx_w;
        assert!(close(cad_cycle_energy(&profile, &timers, &sf7()).unwrap(), 0.0041 * 0.0264));
        profile.p_rc_osc_w = 0.0;
        assert!(close(cad_cycle_energy(&profile, &timers, &sf7()).unwrap(), 0.002048 * 0.0264));

        let short = CadTimers { t1_s: 0.0041, t2_s: 0.001 };
        assert!(matches!(
            cad_cycle_energy(&profile, &short, &sf7()),
            Err(PhyError::ProbeExceedsWindow { .. })
        ));
    }

    #[test]
    fn preamble_bound() {
        let t = CadTimers::default();
        assert_eq!(min_preamble_symbols(&t, 7, 125_000).unwrap(), 13);
        assert_eq!(min_preamble_symbols(&t, 8, 125_000).unwrap(), 7);
        let zero = CadTimers { t1_s: 0.0, t2_s: 0.0 };
        assert_eq!(min_preamble_symbols(&zero, 7, 125_000).unwrap(), 0);
    }

    #[test]
    fn path_loss_and_offload_power() {
        assert!(close(path_loss_db(1.0), 7.7));
        assert!((path_loss_db(100.0) - 82.9).abs() < 1e-12);
        assert!(close(path_loss_db(0.2), 7.7));
        let wide = (f64::NEG_INFINITY, f64::INFINITY);
        assert!(close(initial_offload_power(-123.0, 1.0, wide).unwrap(), -115.3));
        assert_eq!(initial_offload_power(-123.0, 100.0, (2.0, 14.0)).unwrap(), 2.0);
        assert!(initial_offload_power(-123.0, 0.5, (2.0, 14.0)).is_err());
    }

    #[test]
    fn low_data_rate_rule() {
        assert!(low_data_rate_flag(12, 125_000).unwrap());
        assert!(!low_data_rate_flag(7, 125_000).unwrap());
        assert!(!low_data_rate_flag(11, 500_000).unwrap());
    }

    #[test]
    fn default_profile_shape() {
        let p = RadioPowerProfile::default();
        p.validate().unwrap();
        assert!(close(p.p_rx_w, 2.0 * p.p_rc_osc_w));
        assert_eq!(p.level_at_least(2.0), Some(2));
        assert_eq!(p.level_at_least(2.5), Some(5));
        assert_eq!(p.level_at_least(14.1), None);
    }

    #[test]
    fn ack_energy_ignores_payload() {
        let profile = RadioPowerProfile::default();
        assert_eq!(
            ack_energy(&RadioPowerProfile { p_tx_w: [(2, 0.0)].into(), ..profile.clone() }, &sf7(), 0.0).unwrap(),
            0.0
        );
        let e = ack_energy(&profile, &sf7(), 0.1).unwrap();
        let expected = 2.0 * 0.0363 * 0.1 + 2.0 * profile.tx_power(2).unwrap() * 25.25 * 0.001024;
        assert!((e - expected).abs() < 1e-15);
    }

    #[test]
    fn lading_energy_edges() {
        let profile = RadioPowerProfile::default();
        let t = CadTimers::default();
        let listen = sf7();
        let cad = cad_cycle_energy(&profile, &t, &listen).unwrap();
        let e = lading_energy(&profile, 600.0, &t, &listen, 2.0, &[], CorrectionDivisor::CadPeriod).unwrap();
        assert!(close(e, 600.0 / t.period() * cad));
        assert_eq!(lading_energy(&profile, 0.0, &t, &listen, 2.0, &[], CorrectionDivisor::CadPeriod).unwrap(), 0.0);
        let conv = TransmissionParams::new(10, 125_000, 14, 8).unwrap();
        let link = OffloadLink { offload: listen, conv, payload_bytes: 2, t_rx_s: 0.04 };
        let bad = [LadingPair { tau_s: 0.0, link }];
        assert!(lading_energy(&profile, 1.0, &t, &listen, 2.0, &bad, CorrectionDivisor::CadPeriod).is_err());
        assert!(lading_energy(&profile, 1.0, &t, &listen, 0.5, &[], CorrectionDivisor::CadPeriod).is_err());
    }
}
