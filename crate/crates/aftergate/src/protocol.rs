//! BB84 plug-and-play frame mechanics on Bob's side.
//!
//! A frame is a train of `gates_per_frame` gates at fixed period. Both APDs
//! share one dead-time domain: a click on either suspends gating on both (the
//! receiver stops its bias pulses), so gates are simply skipped while dead.
//! Bright pulses are still processed during dead time - the linear-mode
//! response and the carrier traps don't stop existing when gating does.

use serde::{Deserialize, Serialize};

use crate::detector::{CarrierSource, DetectorParams, DetectorState};
use crate::error::{Error, Result};
use crate::optics::{quantum_detect, route_faked_state, DetectorId, FakedState, PhaseSetting};
use crate::rng::Rng;

// ------------------------------------------------------------- configuration

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FrameConfig {
    pub gates_per_frame: u32,
    pub gate_period_ns: i64,
    pub interframe_gap_ns: i64,
}

impl FrameConfig {
    pub const DEFAULT_GATES: u32 = 1075;
    pub const DEFAULT_GAP_NS: i64 = 50_000;

    /// Frame layout for a gate frequency in Hz (period rounded to whole ns).
    pub fn from_frequency_hz(f_hz: f64, gates_per_frame: u32, interframe_gap_ns: i64) -> Result<Self> {
        if !(f_hz > 0.0) {
            return Err(Error::config(format!("gate frequency {f_hz} Hz must be > 0")));
        }
        let period = (1e9 / f_hz).round() as i64;
        let cfg = FrameConfig {
            gates_per_frame,
            gate_period_ns: period.max(1),
            interframe_gap_ns,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gates_per_frame == 0 {
            return Err(Error::config("gates_per_frame must be >= 1"));
        }
        if self.gate_period_ns <= 0 {
            return Err(Error::config("gate_period_ns must be > 0"));
        }
        if self.interframe_gap_ns < 0 {
            return Err(Error::config("interframe_gap_ns must be >= 0"));
        }
        Ok(())
    }

    pub fn gate_frequency_hz(&self) -> f64 {
        1e9 / self.gate_period_ns as f64
    }

    pub fn gate_time_ns(&self, gate: u32) -> i64 {
        gate as i64 * self.gate_period_ns
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub transmittance: f64,
    pub alice_mean_photons: f64,
}

impl ChannelConfig {
    /// Source convention: Alice's mean photon number tracks the line
    /// transmittance (mu = T).
    pub fn coupled(transmittance: f64) -> Self {
        ChannelConfig {
            transmittance,
            alice_mean_photons: transmittance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.transmittance > 0.0 && self.transmittance <= 1.0) {
            return Err(Error::config(format!(
                "transmittance {} outside (0, 1]",
                self.transmittance
            )));
        }
        if !(self.alice_mean_photons > 0.0) {
            return Err(Error::config("alice_mean_photons must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DoubleClickPolicy {
    /// Both detectors fired in one slot: record a uniformly random bit.
    RandomBit,
    /// Drop the slot from the raw key (clicks still happened).
    Discard,
}

// --------------------------------------------------------------- frame state

/// Alice's per-frame random choices.
#[derive(Clone, Debug)]
pub struct AliceFrame {
    pub bits: Vec<u8>,
    pub bases: Vec<u8>,
}

impl AliceFrame {
    pub fn draw(gates: u32, rng: &mut Rng) -> Self {
        let n = gates as usize;
        let mut bits = Vec::with_capacity(n);
        let mut bases = Vec::with_capacity(n);
        for _ in 0..n {
            bits.push(rng.bit());
            bases.push(rng.bit());
        }
        AliceFrame { bits, bases }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClickOrigin {
    /// Geiger-mode gate click (photon, dark count, or afterpulse).
    Gate,
    /// Linear-mode response to a bright pulse.
    Bright,
}

/// One registered detection event.
#[derive(Clone, Copy, Debug)]
pub struct ClickRecord {
    pub gate: u32,
    pub time_ns: i64,
    pub detector: DetectorId,
    pub bob_basis: u8,
    pub origin: ClickOrigin,
}

/// The bit value Bob's electronics assign to a gate slot that clicked.
#[derive(Clone, Copy, Debug)]
pub struct BitDecision {
    pub gate: u32,
    pub bob_basis: u8,
    pub bit: u8,
    pub double: bool,
}

#[derive(Clone, Debug, Default)]
pub struct FrameOutcome {
    pub clicks: Vec<ClickRecord>,
    pub decisions: Vec<BitDecision>,
    pub dead_intervals: Vec<(i64, i64)>,
    pub gates_live: u32,
    /// Faked states Eve fired into this frame / how many arrived while the
    /// receiver was already dead (diagnostics for the exploit strategy).
    pub bright_sent: u32,
    pub bright_in_dead: u32,
}

// ----------------------------------------------------------------- receiver

/// Bob's two detector channels plus receiver-level policy. The dead-time
/// domain is shared: after any click both channels' windows are synced.
#[derive(Clone, Debug)]
pub struct Receiver {
    pub params: [DetectorParams; 2],
    pub state: [DetectorState; 2],
    pub t_bob: f64,
    pub double_click: DoubleClickPolicy,
}

impl Receiver {
    pub fn new(
        d0: DetectorParams,
        d1: DetectorParams,
        t_bob: f64,
        double_click: DoubleClickPolicy,
    ) -> Result<Self> {
        d0.validate()?;
        d1.validate()?;
        if !(t_bob > 0.0 && t_bob <= 1.0) {
            return Err(Error::config(format!("t_bob {t_bob} outside (0, 1]")));
        }
        Ok(Receiver {
            params: [d0, d1],
            state: [DetectorState::new(), DetectorState::new()],
            t_bob,
            double_click,
        })
    }

    /// Frames are statistically independent (the inter-frame gap exceeds
    /// both the dead time and the trap prune horizon), so each one starts
    /// from fresh detector state and a frame-local clock.
    pub fn begin_frame(&mut self) {
        self.state = [DetectorState::new(), DetectorState::new()];
    }

    pub fn live_at(&self, t_ns: i64) -> bool {
        !self.state[0].is_dead_at(t_ns) && !self.state[1].is_dead_at(t_ns)
    }

    fn sync_dead(&mut self) {
        let m = self.state[0].dead_until_ns.max(self.state[1].dead_until_ns);
        if let Some(m) = m {
            self.state[0].extend_dead(m);
            self.state[1].extend_dead(m);
        }
    }

    pub fn max_dead_time_ns(&self) -> i64 {
        self.params[0].dead_time_ns().max(self.params[1].dead_time_ns())
    }
}

fn push_dead_interval(intervals: &mut Vec<(i64, i64)>, start: i64, until: i64) {
    if let Some(last) = intervals.last_mut() {
        if start <= last.1 {
            last.1 = last.1.max(until);
            return;
        }
    }
    intervals.push((start, until));
}

// --------------------------------------------------------------- frame runs

/// Core gate loop shared by the baseline and attacked paths. `quantum`
/// carries the genuine dim signal (absent under full intercept), `pulses`
/// the faked states sorted by target gate.
pub(crate) fn run_frame(
    fc: &FrameConfig,
    rx: &mut Receiver,
    quantum: Option<(&ChannelConfig, &AliceFrame)>,
    pulses: &[FakedState],
    rng: &mut Rng,
) -> Result<FrameOutcome> {
    debug_assert!(pulses.windows(2).all(|w| w[0].target_gate <= w[1].target_gate));
    rx.begin_frame();
    let mut out = FrameOutcome::default();
    let mut next_pulse = 0usize;

    for gate in 0..fc.gates_per_frame {
        let t = fc.gate_time_ns(gate);
        let bob_basis = rng.bit();
        let mut slot = [false; 2]; // clicks per detector in this gate slot

        if rx.live_at(t) {
            out.gates_live += 1;
            let mut mu = [0.0f64; 2];
            if let Some((ch, alice)) = quantum {
                let g = gate as usize;
                let target = if alice.bases[g] == bob_basis {
                    alice.bits[g]
                } else {
                    rng.bit()
                };
                mu[target as usize] =
                    ch.alice_mean_photons * ch.transmittance * rx.t_bob;
            }
            for d in 0..2 {
                let clicked = rx.state[d].process_gate(&rx.params[d], t, mu[d], rng)?;
                if clicked {
                    slot[d] = true;
                    out.clicks.push(ClickRecord {
                        gate,
                        time_ns: t,
                        detector: DetectorId::from_bit(d as u8),
                        bob_basis,
                        origin: ClickOrigin::Gate,
                    });
                }
            }
            if slot[0] || slot[1] {
                rx.sync_dead();
                let until = rx.state[0].dead_until_ns.unwrap();
                push_dead_interval(&mut out.dead_intervals, t, until);
            }
        }

        while next_pulse < pulses.len() && pulses[next_pulse].target_gate == gate {
            let fs = &pulses[next_pulse];
            next_pulse += 1;
            out.bright_sent += 1;
            let t_pulse = t + fs.delay_after_gate_ns.round() as i64;
            if !rx.live_at(t_pulse) {
                out.bright_in_dead += 1;
            }
            let (p0, p1) = route_faked_state(fs, bob_basis);
            let matched = fs.basis & 1 == bob_basis & 1;
            let deposit = if matched {
                CarrierSource::FullPower
            } else {
                CarrierSource::HalfPower
            };
            for (d, power) in [(0usize, p0), (1usize, p1)] {
                if power <= 0.0 {
                    continue;
                }
                let clicked = rx.state[d].process_bright_pulse(
                    &rx.params[d],
                    t,
                    power,
                    fs.delay_after_gate_ns,
                    deposit,
                    rng,
                )?;
                if clicked {
                    slot[d] = true;
                    rx.sync_dead();
                    let until = rx.state[d].dead_until_ns.unwrap();
                    push_dead_interval(&mut out.dead_intervals, t_pulse, until);
                    out.clicks.push(ClickRecord {
                        gate,
                        time_ns: t_pulse,
                        detector: DetectorId::from_bit(d as u8),
                        bob_basis,
                        origin: ClickOrigin::Bright,
                    });
                }
            }
        }

        match slot {
            [false, false] => {}
            [true, false] => out.decisions.push(BitDecision {
                gate,
                bob_basis,
                bit: 0,
                double: false,
            }),
            [false, true] => out.decisions.push(BitDecision {
                gate,
                bob_basis,
                bit: 1,
                double: false,
            }),
            [true, true] => match rx.double_click {
                DoubleClickPolicy::RandomBit => out.decisions.push(BitDecision {
                    gate,
                    bob_basis,
                    bit: rng.bit(),
                    double: true,
                }),
                DoubleClickPolicy::Discard => {}
            },
        }
    }
    Ok(out)
}

/// One honest frame: Alice sends dim coherent states, no eavesdropper.
pub fn run_baseline_frame(
    fc: &FrameConfig,
    ch: &ChannelConfig,
    rx: &mut Receiver,
    rng: &mut Rng,
) -> Result<(FrameOutcome, AliceFrame)> {
    let alice = AliceFrame::draw(fc.gates_per_frame, rng);
    let out = run_frame(fc, rx, Some((ch, &alice)), &[], rng)?;
    Ok((out, alice))
}

// ------------------------------------------------------------------ sifting

#[derive(Clone, Copy, Debug, Default)]
pub struct SiftTally {
    pub sifted: u64,
    pub errors: u64,
}

/// Basis-match decisions of one frame against Alice's record.
pub fn sift_frame(outcome: &FrameOutcome, alice: &AliceFrame) -> Result<SiftTally> {
    let mut tally = SiftTally::default();
    for d in &outcome.decisions {
        let g = d.gate as usize;
        if g >= alice.len() {
            return Err(Error::domain(format!(
                "decision at gate {g} beyond Alice's record ({} gates)",
                alice.len()
            )));
        }
        if alice.bases[g] == d.bob_basis {
            tally.sifted += 1;
            if d.bit != alice.bits[g] {
                tally.errors += 1;
            }
        }
    }
    Ok(tally)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QberEstimate {
    pub qber: f64,
    pub sifted_total: u64,
    pub error_total: u64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub raw_rate_per_frame: f64,
}

impl QberEstimate {
    pub fn from_counts(sifted: u64, errors: u64, raw_rate_per_frame: f64) -> Self {
        let qber = if sifted == 0 {
            0.0
        } else {
            errors as f64 / sifted as f64
        };
        let (wilson_low, wilson_high) = wilson_interval(errors, sifted, 1.96);
        QberEstimate {
            qber,
            sifted_total: sifted,
            error_total: errors,
            wilson_low,
            wilson_high,
            raw_rate_per_frame,
        }
    }
}

/// Wilson score interval for `successes`/`n` at critical value `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Aggregate QBER across frames from raw outcomes + Alice records.
pub fn sift_and_count(frames: &[(FrameOutcome, AliceFrame)]) -> Result<QberEstimate> {
    if frames.is_empty() {
        return Err(Error::domain("no frames to sift"));
    }
    let mut sifted = 0u64;
    let mut errors = 0u64;
    let mut clicks = 0u64;
    for (out, alice) in frames {
        let t = sift_frame(out, alice)?;
        sifted += t.sifted;
        errors += t.errors;
        clicks += out.clicks.len() as u64;
    }
    Ok(QberEstimate::from_counts(
        sifted,
        errors,
        clicks as f64 / frames.len() as f64,
    ))
}

// ------------------------------------------------------------------- bounds

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// QBER below the 11% Shor-Preskill bound: the attack defeats systems
    /// proven secure under that bound.
    SecureViolated11,
    /// QBER in [11%, 20%): still below the Chau bound.
    SecureViolated20,
    /// QBER >= 20%: the eavesdropper is exposed.
    AttackDetected,
}

pub const QBER_BOUND_SHOR_PRESKILL: f64 = 0.11;
pub const QBER_BOUND_CHAU: f64 = 0.20;

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::SecureViolated11 => "SECURE_VIOLATED_11",
            Verdict::SecureViolated20 => "SECURE_VIOLATED_20",
            Verdict::AttackDetected => "ATTACK_DETECTED",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn compare_to_bounds(q: &QberEstimate) -> Result<Verdict> {
    if q.sifted_total == 0 {
        return Err(Error::domain("cannot classify QBER with zero sifted bits"));
    }
    Ok(if q.qber < QBER_BOUND_SHOR_PRESKILL {
        Verdict::SecureViolated11
    } else if q.qber < QBER_BOUND_CHAU {
        Verdict::SecureViolated20
    } else {
        Verdict::AttackDetected
    })
}

// ------------------------------------------------------------------ monitor

#[derive(Clone, Copy, Debug)]
pub struct SpacingAnomaly {
    pub first_time_ns: i64,
    pub second_time_ns: i64,
    pub gap_ns: i64,
}

/// Countermeasure scan: consecutive registered clicks closer than the dead
/// time. A gap of exactly zero is a simultaneous double click (one avalanche
/// seen on both arms), not a dead-time violation, and is not flagged.
pub fn monitor_click_spacing(outcome: &FrameOutcome, dead_time_us: f64) -> Vec<SpacingAnomaly> {
    let dead_ns = (dead_time_us * 1000.0).round() as i64;
    let mut anomalies = Vec::new();
    for w in outcome.clicks.windows(2) {
        let gap = w[1].time_ns - w[0].time_ns;
        if gap > 0 && gap < dead_ns {
            anomalies.push(SpacingAnomaly {
                first_time_ns: w[0].time_ns,
                second_time_ns: w[1].time_ns,
                gap_ns: gap,
            });
        }
    }
    anomalies
}

// --------------------------------------------------- intercept-resend check

/// Classic intercept-resend with quantum (not faked) resend states: Eve
/// measures in a random basis and resends her result as a fresh dim state.
/// Returns the sifted QBER over `gates` gates; `raw_rate_per_frame` holds
/// Bob's clicks per gate. The sifted error rate converges to 25%.
pub fn run_intercept_resend(
    gates: u64,
    mu_at_eve: f64,
    mu_at_bob: f64,
    rng: &mut Rng,
) -> QberEstimate {
    let mut sifted = 0u64;
    let mut errors = 0u64;
    let mut clicks = 0u64;
    for _ in 0..gates {
        let alice_bit = rng.bit();
        let alice_basis = rng.bit();
        let eve_basis = rng.bit();
        let Some(eve_click) = quantum_detect(
            mu_at_eve,
            PhaseSetting::from_choices(alice_bit, alice_basis, eve_basis),
            1.0,
            1.0,
            rng,
        ) else {
            continue;
        };
        let eve_bit = eve_click.bit();
        let bob_basis = rng.bit();
        let Some(bob_click) = quantum_detect(
            mu_at_bob,
            PhaseSetting::from_choices(eve_bit, eve_basis, bob_basis),
            1.0,
            1.0,
            rng,
        ) else {
            continue;
        };
        clicks += 1;
        if bob_basis == alice_basis {
            sifted += 1;
            if bob_click.bit() != alice_bit {
                errors += 1;
            }
        }
    }
    QberEstimate::from_counts(sifted, errors, clicks as f64 / gates as f64)
}
