//! The eavesdropper: full intercept at Alice's output, faked-state resend
//! into the gate aftermath, and rate calibration.
//!
//! Eve measures every pulse train with her own BB84 analyzer, then re-injects
//! bright pulses timed after Bob's gates so that only the linear-mode
//! threshold response decides the outcome. She cannot raise Bob's click rate
//! above what the dead time allows, so she attacks only the last `chi` gates
//! of each frame and tunes `chi` until Bob's rate matches the unattacked one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{quantum_detect, FakedState, PhaseSetting, ThresholdTable};
use crate::protocol::{run_frame, AliceFrame, ChannelConfig, FrameConfig, FrameOutcome, Receiver};
use crate::rng::{Rng, SeedKey, STREAM_CALIBRATE, STREAM_VALIDATE};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EveParams {
    /// Eve's overall detection efficiency (her line + detectors).
    pub detector_efficiency: f64,
    /// Dark count probability per gate in Eve's apparatus.
    pub dark_prob: f64,
    /// Longest run of consecutive-gate pulses Eve allows herself before
    /// pausing (DEADTIME_RESPECTED only).
    pub memory_depth: u32,
    /// Peak power of a basis-matched faked state at Bob's input, in uW.
    pub peak_power_uw: f64,
    /// Pulse delay after the gate, in ns.
    pub pulse_delay_ns: f64,
}

impl EveParams {
    /// Lossless, noiseless Eve.
    pub fn perfect() -> Self {
        EveParams {
            detector_efficiency: 1.0,
            dark_prob: 0.0,
            memory_depth: 3,
            peak_power_uw: 575.0,
            pulse_delay_ns: 7.75,
        }
    }

    /// Eve with achievable hardware: 50% efficiency, 1e-5 dark counts.
    pub fn realistic() -> Self {
        EveParams {
            detector_efficiency: 0.5,
            dark_prob: 1e-5,
            ..EveParams::perfect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.detector_efficiency > 0.0 && self.detector_efficiency <= 1.0) {
            return Err(Error::config(format!(
                "eve detector_efficiency {} outside (0, 1]",
                self.detector_efficiency
            )));
        }
        if !(0.0..1.0).contains(&self.dark_prob) {
            return Err(Error::config(format!(
                "eve dark_prob {} outside [0, 1)",
                self.dark_prob
            )));
        }
        if self.memory_depth == 0 {
            return Err(Error::config("eve memory_depth must be >= 1"));
        }
        if !(self.peak_power_uw > 0.0) {
            return Err(Error::config("eve peak_power_uw must be > 0"));
        }
        if !(self.pulse_delay_ns >= 0.0 && self.pulse_delay_ns.is_finite()) {
            return Err(Error::config("eve pulse_delay_ns must be >= 0"));
        }
        Ok(())
    }

    /// Faked states only control Bob deterministically when the matched-basis
    /// power clears every 100% threshold and the mismatched half power stays
    /// under every 0% threshold at the chosen delay.
    pub fn validate_against_thresholds(&self, table: &ThresholdTable) -> Result<()> {
        let d = self.pulse_delay_ns;
        let p100 = table.d0.p100_at(d)?.max(table.d1.p100_at(d)?);
        let p0 = table.d0.p0_at(d)?.min(table.d1.p0_at(d)?);
        if self.peak_power_uw < p100 {
            return Err(Error::config(format!(
                "full power {} uW below the 100% threshold {p100:.1} uW at {d} ns",
                self.peak_power_uw
            )));
        }
        let half = self.peak_power_uw / 2.0;
        if half > p0 {
            return Err(Error::config(format!(
                "half power {half} uW above the 0% threshold {p0:.1} uW at {d} ns"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Eve imitates legitimate dead-time statistics: short bursts, then a
    /// pause of at least the dead time.
    DeadtimeRespected,
    /// Eve resends every detection; the receiver's accept-and-extend
    /// behavior registers clicks far faster than gated operation could.
    DeadtimeExploit,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::DeadtimeRespected => "deadtime-respected",
            Strategy::DeadtimeExploit => "deadtime-exploit",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One gate where Eve's analyzer registered a result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EveDetection {
    pub gate: u32,
    pub basis: u8,
    pub bit: u8,
}

/// Eve's intercept of one frame. She sits at Alice's output, so the mean
/// photon number she sees is Alice's, before line loss.
pub fn eve_measure_frame(
    ch: &ChannelConfig,
    eve: &EveParams,
    alice: &AliceFrame,
    rng: &mut Rng,
) -> Vec<EveDetection> {
    let mut dets = Vec::new();
    for g in 0..alice.len() {
        let basis = rng.bit();
        let phase = PhaseSetting::from_choices(alice.bits[g], alice.bases[g], basis);
        let bit = match quantum_detect(
            ch.alice_mean_photons,
            phase,
            eve.detector_efficiency,
            1.0,
            rng,
        ) {
            Some(id) => id.bit(),
            None if eve.dark_prob > 0.0 && rng.bernoulli(eve.dark_prob) => rng.bit(),
            None => continue,
        };
        dets.push(EveDetection {
            gate: g as u32,
            basis,
            bit,
        });
    }
    dets
}

fn faked(d: &EveDetection, eve: &EveParams) -> FakedState {
    FakedState {
        target_gate: d.gate,
        basis: d.basis,
        bit_value: d.bit,
        peak_power_uw: eve.peak_power_uw,
        delay_after_gate_ns: eve.pulse_delay_ns,
    }
}

fn attack_window_start(fc: &FrameConfig, chi: u32) -> u32 {
    fc.gates_per_frame.saturating_sub(chi)
}

/// Strategy DEADTIME_RESPECTED: resend in bursts of at most `memory_depth`
/// consecutive-gate pulses, then stay silent for at least Bob's dead time.
/// Detections falling inside a pause are dropped.
pub fn schedule_deadtime_respected(
    detections: &[EveDetection],
    chi: u32,
    eve: &EveParams,
    fc: &FrameConfig,
    bob_dead_time_ns: i64,
) -> Vec<FakedState> {
    let start = attack_window_start(fc, chi);
    let cap = eve.memory_depth.max(1) as usize;
    let window: Vec<&EveDetection> = detections.iter().filter(|d| d.gate >= start).collect();
    let mut out = Vec::new();
    let mut pause_until = i64::MIN;
    let mut i = 0usize;
    while i < window.len() {
        let t_gate = fc.gate_time_ns(window[i].gate);
        if t_gate < pause_until {
            i += 1;
            continue;
        }
        let mut end = i;
        while end + 1 < window.len()
            && end - i + 1 < cap
            && window[end + 1].gate == window[end].gate + 1
        {
            end += 1;
        }
        for d in &window[i..=end] {
            out.push(faked(d, eve));
        }
        let last_pulse =
            fc.gate_time_ns(window[end].gate) + eve.pulse_delay_ns.round() as i64;
        pause_until = last_pulse + bob_dead_time_ns;
        i = end + 1;
    }
    out
}

/// Strategy DEADTIME_EXPLOIT: resend every detection in the window and let
/// the receiver's dead-time handling do what it will.
pub fn schedule_deadtime_exploit(
    detections: &[EveDetection],
    chi: u32,
    eve: &EveParams,
    fc: &FrameConfig,
) -> Vec<FakedState> {
    let start = attack_window_start(fc, chi);
    detections
        .iter()
        .filter(|d| d.gate >= start)
        .map(|d| faked(d, eve))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackPlan {
    pub chi: u32,
    pub strategy: Strategy,
    pub schedule: Vec<FakedState>,
}

pub fn build_plan(
    detections: &[EveDetection],
    chi: u32,
    strategy: Strategy,
    eve: &EveParams,
    fc: &FrameConfig,
    bob_dead_time_ns: i64,
) -> AttackPlan {
    let schedule = match strategy {
        Strategy::DeadtimeRespected => {
            schedule_deadtime_respected(detections, chi, eve, fc, bob_dead_time_ns)
        }
        Strategy::DeadtimeExploit => schedule_deadtime_exploit(detections, chi, eve, fc),
    };
    AttackPlan {
        chi,
        strategy,
        schedule,
    }
}

/// Drive one frame of faked states into the receiver. The genuine quantum
/// signal never reaches Bob - Eve's intercept is total.
pub fn apply_attack_frame(
    fc: &FrameConfig,
    plan: &AttackPlan,
    rx: &mut Receiver,
    rng: &mut Rng,
) -> Result<FrameOutcome> {
    run_frame(fc, rx, None, &plan.schedule, rng)
}

/// Full attacked frame: Alice's choices, Eve's intercept, scheduling, and
/// Bob's response, all driven by one frame-scoped seed.
pub fn run_attack_frame(
    fc: &FrameConfig,
    ch: &ChannelConfig,
    eve: &EveParams,
    strategy: Strategy,
    chi: u32,
    rx: &mut Receiver,
    frame_key: SeedKey,
) -> Result<(FrameOutcome, AliceFrame, AttackPlan)> {
    let mut rng = frame_key.rng();
    let alice = AliceFrame::draw(fc.gates_per_frame, &mut rng);
    let dets = eve_measure_frame(ch, eve, &alice, &mut rng);
    let plan = build_plan(&dets, chi, strategy, eve, fc, rx.max_dead_time_ns());
    let out = apply_attack_frame(fc, &plan, rx, &mut rng)?;
    Ok((out, alice, plan))
}

/// Lengths of consecutive-gate pulse runs in a schedule.
pub fn burst_lengths(schedule: &[FakedState]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut iter = schedule.iter();
    let Some(first) = iter.next() else {
        return runs;
    };
    let mut prev = first.target_gate;
    let mut len = 1u32;
    for fs in iter {
        if fs.target_gate == prev + 1 {
            len += 1;
        } else {
            runs.push(len);
            len = 1;
        }
        prev = fs.target_gate;
    }
    runs.push(len);
    runs
}

// -------------------------------------------------------------- calibration

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChiCalibration {
    pub chi: u32,
    pub target_rate: f64,
    /// Rate measured on the calibration stream at the chosen chi.
    pub calibrated_rate: f64,
    /// Rate re-measured on a fresh stream.
    pub validated_rate: f64,
    pub feasible: bool,
}

pub const RATE_MATCH_TOLERANCE: f64 = 0.05;

/// Find the smallest attack window whose click rate matches `target_rate`
/// (Bob's unattacked clicks per frame) within 5%.
///
/// The rate grows with `chi`, so a bisection over common-random-number
/// evaluations (the same frame seeds for every candidate) brackets the
/// crossing; the bracket endpoint closer to the target wins, preferring the
/// smaller window on a tie. A fresh-seed validation run then re-measures the
/// final rate. If even `chi = N` falls more than 5% short the cell is
/// infeasible: the dead time caps what Eve can fake.
pub fn calibrate_chi(
    fc: &FrameConfig,
    ch: &ChannelConfig,
    eve: &EveParams,
    strategy: Strategy,
    rx: &mut Receiver,
    target_rate: f64,
    frames_per_eval: u32,
    cell_key: SeedKey,
) -> Result<ChiCalibration> {
    if frames_per_eval == 0 {
        return Err(Error::config("frames_per_eval must be >= 1"));
    }
    let n = fc.gates_per_frame;
    let tol = RATE_MATCH_TOLERANCE;

    let mut measure = |chi: u32, stream: u64, frames: u32| -> Result<f64> {
        let key = cell_key.derive(stream);
        let mut clicks = 0u64;
        for i in 0..frames {
            let (out, _, _) =
                run_attack_frame(fc, ch, eve, strategy, chi, rx, key.derive(i as u64))?;
            clicks += out.clicks.len() as u64;
        }
        Ok(clicks as f64 / frames as f64)
    };

    if target_rate <= 0.0 {
        let validated = measure(0, STREAM_VALIDATE, frames_per_eval)?;
        return Ok(ChiCalibration {
            chi: 0,
            target_rate,
            calibrated_rate: 0.0,
            validated_rate: validated,
            feasible: true,
        });
    }

    let rate_full = measure(n, STREAM_CALIBRATE, frames_per_eval)?;
    if rate_full < (1.0 - tol) * target_rate {
        return Ok(ChiCalibration {
            chi: n,
            target_rate,
            calibrated_rate: rate_full,
            validated_rate: rate_full,
            feasible: false,
        });
    }

    let (chi, calibrated_rate) = if rate_full < target_rate {
        (n, rate_full)
    } else {
        let mut lo = 0u32;
        let mut r_lo = measure(0, STREAM_CALIBRATE, frames_per_eval)?;
        let mut hi = n;
        let mut r_hi = rate_full;
        if r_lo >= target_rate {
            (0, r_lo)
        } else {
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                let r = measure(mid, STREAM_CALIBRATE, frames_per_eval)?;
                if r >= target_rate {
                    hi = mid;
                    r_hi = r;
                } else {
                    lo = mid;
                    r_lo = r;
                }
            }
            if (target_rate - r_lo).abs() <= (r_hi - target_rate).abs() {
                (lo, r_lo)
            } else {
                (hi, r_hi)
            }
        }
    };

    let validation_frames = frames_per_eval.max(250) * 4;
    let validated_rate = measure(chi, STREAM_VALIDATE, validation_frames)?;
    let feasible = (validated_rate - target_rate).abs() <= tol * target_rate + 1e-12;
    Ok(ChiCalibration {
        chi,
        target_rate,
        calibrated_rate,
        validated_rate,
        feasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use crate::config::presets;
    use crate::protocol::{sift_frame, ClickOrigin, DoubleClickPolicy};
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn receiver() -> Receiver {
        Receiver::new(
            presets::clavis2_d0(),
            presets::clavis2_d1(),
            0.412,
            DoubleClickPolicy::RandomBit,
        )
        .unwrap()
    }

    fn quiet_receiver() -> Receiver {
        let mut rx = receiver();
        for p in &mut rx.params {
            p.dark_prob = 0.0;
            p.traps[0].amplitude = 0.0;
            p.traps[1].amplitude = 0.0;
        }
        rx
    }

    fn fc_5mhz() -> FrameConfig {
        FrameConfig {
            gates_per_frame: 1075,
            gate_period_ns: 200,
            interframe_gap_ns: 50_000,
        }
    }

    fn dets_at(gates: &[u32]) -> Vec<EveDetection> {
        gates
            .iter()
            .map(|&gate| EveDetection {
                gate,
                basis: (gate % 2) as u8,
                bit: ((gate / 2) % 2) as u8,
            })
            .collect()
    }

    #[test]
    fn eve_detection_rate_matches_poisson_oracle() {
        let ch = ChannelConfig {
            transmittance: 0.5,
            alice_mean_photons: 0.5,
        };
        let eve = EveParams::perfect();
        let mut rng = Rng::new(31);
        let mut hits = 0u64;
        let frames = 500u64;
        let alice_gates = 1000u32;
        for _ in 0..frames {
            let alice = AliceFrame::draw(alice_gates, &mut rng);
            hits += eve_measure_frame(&ch, &eve, &alice, &mut rng).len() as u64;
        }
        let total = (frames * alice_gates as u64) as f64;
        let p = hits as f64 / total;
        let expect = 0.3934693402873666; // 1 - exp(-0.5)
        let sigma = (expect * (1.0 - expect) / total).sqrt();
        assert!((p - expect).abs() < 4.0 * sigma, "rate {p} vs {expect}");
    }

    #[test]
    fn eve_darks_fire_without_signal() {
        let ch = ChannelConfig {
            transmittance: 1.0,
            alice_mean_photons: 1e-12,
        };
        let eve = EveParams {
            dark_prob: 0.01,
            ..EveParams::perfect()
        };
        let mut rng = Rng::new(5);
        let alice = AliceFrame::draw(100_000, &mut rng);
        let dets = eve_measure_frame(&ch, &eve, &alice, &mut rng);
        let p = dets.len() as f64 / 100_000.0;
        assert!((p - 0.01).abs() < 0.003, "dark rate {p}");
    }

    #[test]
    fn exploit_schedule_keeps_window_only() {
        let fc = fc_5mhz();
        let eve = EveParams::perfect();
        let dets = dets_at(&[0, 500, 974, 975, 1000, 1074]);
        let plan = schedule_deadtime_exploit(&dets, 100, &eve, &fc);
        let gates: Vec<u32> = plan.iter().map(|f| f.target_gate).collect();
        assert_eq!(gates, vec![975, 1000, 1074]);
        for fs in &plan {
            assert_eq!(fs.peak_power_uw, 575.0);
            assert_eq!(fs.delay_after_gate_ns, 7.75);
        }
        // chi >= N attacks everything
        let plan = schedule_deadtime_exploit(&dets, 5000, &eve, &fc);
        assert_eq!(plan.len(), dets.len());
    }

    #[test]
    fn respected_schedule_caps_bursts_and_pauses() {
        let fc = fc_5mhz();
        let eve = EveParams::perfect();
        let dead = 10_000i64;
        // 6 consecutive detections: burst of 3, the rest inside the pause
        let dets = dets_at(&[100, 101, 102, 103, 104, 105, 900]);
        let plan = schedule_deadtime_respected(&dets, 1075, &eve, &fc, dead);
        let gates: Vec<u32> = plan.iter().map(|f| f.target_gate).collect();
        // pause runs from gate 102's pulse for 10 us = 50 gates; gate 900 is
        // far past it
        assert_eq!(gates, vec![100, 101, 102, 900]);
        assert!(burst_lengths(&plan).iter().all(|&l| l <= 3));
    }

    #[test]
    fn respected_schedule_honors_dead_time_between_bursts() {
        let fc = fc_5mhz();
        let eve = EveParams::perfect();
        let dead = 10_000i64;
        let dets = dets_at(&(0..1075).collect::<Vec<_>>());
        let plan = schedule_deadtime_respected(&dets, 1075, &eve, &fc, dead);
        assert!(!plan.is_empty());
        let times: Vec<i64> = plan
            .iter()
            .map(|f| fc.gate_time_ns(f.target_gate) + f.delay_after_gate_ns.round() as i64)
            .collect();
        for w in times.windows(2) {
            let consecutive_gates = w[1] - w[0] == fc.gate_period_ns;
            assert!(
                consecutive_gates || w[1] - w[0] >= dead,
                "spacing {} ns",
                w[1] - w[0]
            );
        }
        assert!(burst_lengths(&plan).iter().all(|&l| l <= 3));
        assert!(burst_lengths(&plan).iter().any(|&l| l == 3));
    }

    #[test]
    fn perfect_exploit_attack_is_error_free_on_quiet_receiver() {
        let fc = fc_5mhz();
        let ch = ChannelConfig::coupled(1.0);
        let eve = EveParams::perfect();
        let mut rx = quiet_receiver();
        let key = SeedKey::new(99);
        let mut sifted = 0u64;
        let mut errors = 0u64;
        let mut clicks = 0u64;
        for i in 0..50u64 {
            let (out, alice, _) = run_attack_frame(
                &fc,
                &ch,
                &eve,
                Strategy::DeadtimeExploit,
                fc.gates_per_frame,
                &mut rx,
                key.derive(i),
            )
            .unwrap();
            for c in &out.clicks {
                assert_eq!(c.origin, ClickOrigin::Bright);
            }
            let t = sift_frame(&out, &alice).unwrap();
            sifted += t.sifted;
            errors += t.errors;
            clicks += out.clicks.len() as u64;
        }
        assert!(sifted > 1000, "sifted {sifted}");
        assert_eq!(errors, 0);
        assert!(clicks > 0);
    }

    #[test]
    fn exploit_pulses_mostly_land_in_dead_time() {
        let fc = fc_5mhz();
        let ch = ChannelConfig::coupled(1.0);
        let eve = EveParams::perfect();
        let mut rx = receiver();
        let key = SeedKey::new(17);
        let mut sent = 0u64;
        let mut in_dead = 0u64;
        for i in 0..20u64 {
            let (out, _, _) = run_attack_frame(
                &fc,
                &ch,
                &eve,
                Strategy::DeadtimeExploit,
                fc.gates_per_frame,
                &mut rx,
                key.derive(i),
            )
            .unwrap();
            sent += out.bright_sent as u64;
            in_dead += out.bright_in_dead as u64;
        }
        assert!(sent > 0);
        let frac = in_dead as f64 / sent as f64;
        assert!(frac > 0.5, "in-dead fraction {frac}");
    }

    #[test]
    fn click_rate_grows_with_window() {
        let fc = fc_5mhz();
        let ch = ChannelConfig::coupled(1.0);
        let eve = EveParams::perfect();
        let mut rx = receiver();
        let key = SeedKey::new(4);
        let mut rate = |chi: u32| -> f64 {
            let mut clicks = 0u64;
            for i in 0..60u64 {
                let (out, _, _) = run_attack_frame(
                    &fc,
                    &ch,
                    &eve,
                    Strategy::DeadtimeRespected,
                    chi,
                    &mut rx,
                    key.derive(i),
                )
                .unwrap();
                clicks += out.clicks.len() as u64;
            }
            clicks as f64 / 60.0
        };
        let r_small = rate(50);
        let r_big = rate(800);
        assert!(
            r_big > r_small,
            "rate(800) = {r_big} <= rate(50) = {r_small}"
        );
    }

    #[test]
    fn calibration_matches_baseline_rate() {
        let fc = fc_5mhz();
        let ch = ChannelConfig::coupled(1.0);
        let eve = EveParams::perfect();
        let mut rx = receiver();
        let key = SeedKey::new(2_024);

        // measure the unattacked rate first
        let mut clicks = 0u64;
        let frames = 400u32;
        for i in 0..frames {
            let mut rng = key.derive(1_000_000 + i as u64).rng();
            let (out, _) =
                crate::protocol::run_baseline_frame(&fc, &ch, &mut rx, &mut rng).unwrap();
            clicks += out.clicks.len() as u64;
        }
        let target = clicks as f64 / frames as f64;

        let cal = calibrate_chi(
            &fc,
            &ch,
            &eve,
            Strategy::DeadtimeRespected,
            &mut rx,
            target,
            250,
            key,
        )
        .unwrap();
        assert!(cal.feasible, "calibration infeasible: {cal:?}");
        assert!(cal.chi > 0 && cal.chi <= fc.gates_per_frame);
        let err = (cal.validated_rate - target).abs() / target;
        assert!(err <= 0.05, "validated {} vs target {target}", cal.validated_rate);
    }

    #[test]
    fn calibration_reports_unreachable_targets() {
        let fc = fc_5mhz();
        let ch = ChannelConfig::coupled(1.0);
        let eve = EveParams::perfect();
        let mut rx = receiver();
        let cal = calibrate_chi(
            &fc,
            &ch,
            &eve,
            Strategy::DeadtimeRespected,
            &mut rx,
            1_000.0, // no strategy reaches 1000 clicks/frame through dead time
            120,
            SeedKey::new(8),
        )
        .unwrap();
        assert!(!cal.feasible);
        assert_eq!(cal.chi, fc.gates_per_frame);
    }

    #[test]
    fn threshold_validation_flags_bad_powers() {
        let table = presets::thresholds();
        assert!(EveParams::perfect().validate_against_thresholds(&table).is_ok());
        let weak = EveParams {
            peak_power_uw: 500.0,
            ..EveParams::perfect()
        };
        assert!(weak.validate_against_thresholds(&table).is_err());
        let hot = EveParams {
            peak_power_uw: 800.0,
            ..EveParams::perfect()
        };
        assert!(hot.validate_against_thresholds(&table).is_err());
    }

    proptest! {
        #[test]
        fn respected_schedule_never_violates_pause(
            gates in proptest::collection::btree_set(0u32..1075, 0..200),
            memory in 1u32..6,
        ) {
            let fc = fc_5mhz();
            let eve = EveParams { memory_depth: memory, ..EveParams::perfect() };
            let dets = dets_at(&gates.into_iter().collect::<Vec<_>>());
            let dead = 10_000i64;
            let plan = schedule_deadtime_respected(&dets, 1075, &eve, &fc, dead);
            let times: Vec<i64> = plan
                .iter()
                .map(|f| fc.gate_time_ns(f.target_gate) + f.delay_after_gate_ns.round() as i64)
                .collect();
            for w in times.windows(2) {
                prop_assert!(w[1] - w[0] == fc.gate_period_ns || w[1] - w[0] >= dead);
            }
            for len in burst_lengths(&plan) {
                prop_assert!(len <= memory);
            }
        }
    }
}
