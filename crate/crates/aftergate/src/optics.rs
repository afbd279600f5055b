//! Receiver optics abstraction: linear-mode click thresholds, the theta(t)
//! attack-feasibility ratio, faked-state power routing through the phase
//! interferometer, and quantum detection of genuine (dim) signal states.
//!
//! Interference visibility is ideal: all simulated attack errors come from
//! afterpulses and dark counts, never from imperfect optics.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Which APD channel clicked / is addressed. D0 decodes as bit 0, D1 as bit 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectorId {
    D0,
    D1,
}

impl DetectorId {
    pub fn bit(self) -> u8 {
        match self {
            DetectorId::D0 => 0,
            DetectorId::D1 => 1,
        }
    }

    pub fn from_bit(bit: u8) -> Self {
        if bit & 1 == 0 {
            DetectorId::D0
        } else {
            DetectorId::D1
        }
    }

    pub fn index(self) -> usize {
        self.bit() as usize
    }
}

// ---------------------------------------------------------------- thresholds

/// One sampled point of a detector's linear-mode response: the highest power
/// that never clicks (p0) and the lowest power that always clicks (p100).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ThresholdSample {
    pub delay_ns: f64,
    pub p0_uw: f64,
    pub p100_uw: f64,
}

/// Click thresholds of one detector as a function of delay after the gate,
/// linearly interpolated between samples. Queries outside the sampled delay
/// range are errors: the detector response there was never characterized.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<ThresholdSample>", into = "Vec<ThresholdSample>")]
pub struct ThresholdCurve {
    samples: Vec<ThresholdSample>,
}

impl TryFrom<Vec<ThresholdSample>> for ThresholdCurve {
    type Error = Error;

    fn try_from(samples: Vec<ThresholdSample>) -> Result<Self> {
        ThresholdCurve::new(samples)
    }
}

impl From<ThresholdCurve> for Vec<ThresholdSample> {
    fn from(curve: ThresholdCurve) -> Self {
        curve.samples
    }
}

impl ThresholdCurve {
    pub fn new(samples: Vec<ThresholdSample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::config("threshold curve needs at least 2 samples"));
        }
        for w in samples.windows(2) {
            if w[1].delay_ns <= w[0].delay_ns {
                return Err(Error::config(format!(
                    "threshold delays must be strictly increasing (got {} after {})",
                    w[1].delay_ns, w[0].delay_ns
                )));
            }
        }
        for s in &samples {
            if !(s.p0_uw > 0.0 && s.p100_uw >= s.p0_uw) {
                return Err(Error::config(format!(
                    "threshold sample at {} ns violates 0 < p0 <= p100 ({} / {})",
                    s.delay_ns, s.p0_uw, s.p100_uw
                )));
            }
        }
        Ok(ThresholdCurve { samples })
    }

    pub fn domain_ns(&self) -> (f64, f64) {
        (
            self.samples[0].delay_ns,
            self.samples[self.samples.len() - 1].delay_ns,
        )
    }

    fn interp(&self, delay_ns: f64, pick: impl Fn(&ThresholdSample) -> f64) -> Result<f64> {
        let (lo, hi) = self.domain_ns();
        if !(delay_ns >= lo && delay_ns <= hi) {
            return Err(Error::DelayOutOfRange {
                delay_ns,
                min_ns: lo,
                max_ns: hi,
            });
        }
        let idx = self
            .samples
            .partition_point(|s| s.delay_ns <= delay_ns)
            .min(self.samples.len() - 1);
        let (a, b) = (&self.samples[idx - 1], &self.samples[idx]);
        let f = (delay_ns - a.delay_ns) / (b.delay_ns - a.delay_ns);
        Ok(pick(a) + f * (pick(b) - pick(a)))
    }

    pub fn p0_at(&self, delay_ns: f64) -> Result<f64> {
        self.interp(delay_ns, |s| s.p0_uw)
    }

    pub fn p100_at(&self, delay_ns: f64) -> Result<f64> {
        self.interp(delay_ns, |s| s.p100_uw)
    }

    /// Linear-mode click probability: 0 below p0, 1 above p100, linear ramp
    /// between. Attack operating points always sit outside the ramp.
    pub fn click_probability(&self, power_uw: f64, delay_ns: f64) -> Result<f64> {
        let p0 = self.p0_at(delay_ns)?;
        let p100 = self.p100_at(delay_ns)?;
        Ok(if power_uw <= p0 {
            0.0
        } else if power_uw >= p100 {
            1.0
        } else {
            (power_uw - p0) / (p100 - p0)
        })
    }
}

/// Threshold curves for both detectors, as shipped in `thresholds.dat`
/// (columns: delay_ns p0_d0 p100_d0 p0_d1 p100_d1).
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdTable {
    pub d0: ThresholdCurve,
    pub d1: ThresholdCurve,
}

impl ThresholdTable {
    pub fn new(d0: ThresholdCurve, d1: ThresholdCurve) -> Self {
        ThresholdTable { d0, d1 }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut s0 = Vec::new();
        let mut s1 = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(origin, format!("line {}: {e}", lineno + 1)))?;
            if cols.len() != 5 {
                return Err(Error::parse(
                    origin,
                    format!("line {}: expected 5 columns, got {}", lineno + 1, cols.len()),
                ));
            }
            s0.push(ThresholdSample {
                delay_ns: cols[0],
                p0_uw: cols[1],
                p100_uw: cols[2],
            });
            s1.push(ThresholdSample {
                delay_ns: cols[0],
                p0_uw: cols[3],
                p100_uw: cols[4],
            });
        }
        Ok(ThresholdTable::new(
            ThresholdCurve::new(s0)?,
            ThresholdCurve::new(s1)?,
        ))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Overlap of both curves' sampled delay ranges.
    pub fn domain_ns(&self) -> (f64, f64) {
        let (a0, b0) = self.d0.domain_ns();
        let (a1, b1) = self.d1.domain_ns();
        (a0.max(a1), b0.min(b1))
    }

    /// theta(t) = min{P0_d0, P0_d1} / max{P100_d0, P100_d1}. An attack with a
    /// full/half power pair at delay t can work deterministically iff > 0.5.
    pub fn theta(&self, delay_ns: f64) -> Result<f64> {
        let lo = self.d0.p0_at(delay_ns)?.min(self.d1.p0_at(delay_ns)?);
        let hi = self.d0.p100_at(delay_ns)?.max(self.d1.p100_at(delay_ns)?);
        Ok(lo / hi)
    }

    pub fn attack_feasible(&self, delay_ns: f64) -> Result<bool> {
        Ok(self.theta(delay_ns)? > 0.5)
    }

    /// Contiguous delay regions with theta > 0.5, scanned at `step_ns`.
    pub fn feasible_windows(&self, step_ns: f64) -> Result<Vec<(f64, f64)>> {
        assert!(step_ns > 0.0);
        let (lo, hi) = self.domain_ns();
        let mut windows = Vec::new();
        let mut open: Option<f64> = None;
        let n = ((hi - lo) / step_ns).round() as usize;
        for i in 0..=n {
            let t = (lo + i as f64 * step_ns).min(hi);
            if self.theta(t)? > 0.5 {
                open.get_or_insert(t);
            } else if let Some(start) = open.take() {
                windows.push((start, lo + (i - 1) as f64 * step_ns));
            }
        }
        if let Some(start) = open {
            windows.push((start, hi));
        }
        Ok(windows)
    }

    /// Delay maximizing theta, scanned at `step_ns`.
    pub fn best_delay(&self, step_ns: f64) -> Result<(f64, f64)> {
        assert!(step_ns > 0.0);
        let (lo, hi) = self.domain_ns();
        let n = ((hi - lo) / step_ns).round() as usize;
        let mut best = (lo, self.theta(lo)?);
        for i in 1..=n {
            let t = (lo + i as f64 * step_ns).min(hi);
            let th = self.theta(t)?;
            if th > best.1 {
                best = (t, th);
            }
        }
        Ok(best)
    }
}

// ------------------------------------------------------------ phase encoding

/// Alice/Bob phase choice pair. Phases are stored in quarter turns (pi/2
/// units): Alice encodes bit b in basis a as phase (2b + a), Bob measures
/// with phase 0 or 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseSetting {
    alice_quarters: u8,
    bob_quarters: u8,
}

impl PhaseSetting {
    pub fn from_choices(alice_bit: u8, alice_basis: u8, bob_basis: u8) -> Self {
        PhaseSetting {
            alice_quarters: (2 * (alice_bit & 1) + (alice_basis & 1)) & 3,
            bob_quarters: bob_basis & 1,
        }
    }

    /// Interferometer phase difference in quarter turns: 0 -> D0, 2 -> D1,
    /// odd -> conjugate bases (random outcome).
    pub fn delta_quarters(self) -> u8 {
        (4 + self.alice_quarters - self.bob_quarters) & 3
    }

    pub fn bases_match(self) -> bool {
        self.delta_quarters() % 2 == 0
    }
}

/// Detection of a dim quantum state through the receiver: Poissonian photon
/// statistics with mean mu * t_optics * eta, deterministic routing for phase
/// difference 0/pi, a fair coin for conjugate bases. Double clicks can only
/// arise from simultaneous afterpulses and are composed by the caller.
pub fn quantum_detect(
    mu: f64,
    phase: PhaseSetting,
    eta: f64,
    t_optics: f64,
    rng: &mut Rng,
) -> Option<DetectorId> {
    debug_assert!(mu >= 0.0 && eta >= 0.0 && t_optics >= 0.0);
    let p = 1.0 - (-mu * t_optics * eta).exp();
    if !rng.bernoulli(p) {
        return None;
    }
    Some(match phase.delta_quarters() {
        0 => DetectorId::D0,
        2 => DetectorId::D1,
        _ => DetectorId::from_bit(rng.bit()),
    })
}

// -------------------------------------------------------------- faked states

/// One bright pulse Eve sends at a specific gate of the frame.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FakedState {
    pub target_gate: u32,
    pub basis: u8,
    pub bit_value: u8,
    pub peak_power_uw: f64,
    pub delay_after_gate_ns: f64,
}

/// Power arriving at each detector when `fs` meets Bob's basis choice:
/// matching bases send the full peak to the detector selected by the bit,
/// conflicting bases split the power 50:50.
pub fn route_faked_state(fs: &FakedState, bob_basis: u8) -> (f64, f64) {
    if fs.basis & 1 == bob_basis & 1 {
        match fs.bit_value & 1 {
            0 => (fs.peak_power_uw, 0.0),
            _ => (0.0, fs.peak_power_uw),
        }
    } else {
        (fs.peak_power_uw / 2.0, fs.peak_power_uw / 2.0)
    }
}
