//! Behavioral model of one gated APD channel.
//!
//! Geiger-mode gates click on photons, dark counts, and afterpulses from
//! trapped carriers; bright pulses after the gate are detected in linear mode
//! against power thresholds and populate the carrier traps whether or not
//! they click. Trap bookkeeping is an explicit event log: collapsing events
//! into decaying accumulators would be wrong because contributions compose as
//! a union, p = 1 - (1-P_dark) * prod_k (1 - c_k), not as a sum.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::ThresholdCurve;
use crate::rng::Rng;

pub const NS_PER_US: f64 = 1000.0;

/// One trap level of the double-exponential decay model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapLevel {
    pub amplitude: f64,
    pub lifetime_us: f64,
}

/// Carrier-population corrections for the three illumination classes.
/// A full-power pulse is modeled as `full_power_applications` unit deposits
/// (two by default) rather than one double-strength deposit: the two differ
/// under union composition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaTable {
    pub half_power: f64,
    pub full_power_applications: u32,
    pub avalanche: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeadtimeMode {
    /// Clicks during dead time are discarded.
    Reject,
    /// Clicks during dead time register (with prob `deadtime_detection_prob`)
    /// and restart the dead-time window.
    AcceptAndExtend,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CarrierSource {
    HalfPower,
    FullPower,
    Avalanche,
}

/// All physical constants of one detector channel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectorParams {
    pub name: String,
    pub dark_prob: f64,
    pub traps: [TrapLevel; 2],
    pub gamma: GammaTable,
    pub quantum_efficiency: f64,
    pub dead_time_us: f64,
    pub deadtime_mode: DeadtimeMode,
    pub deadtime_detection_prob: f64,
    pub thresholds: ThresholdCurve,
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64, what: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{}: {what} = {v} outside [0,1]", self.name)))
            }
        };
        prob(self.dark_prob, "dark_prob")?;
        prob(self.quantum_efficiency, "quantum_efficiency")?;
        prob(self.deadtime_detection_prob, "deadtime_detection_prob")?;
        for t in &self.traps {
            prob(t.amplitude, "trap amplitude")?;
            if t.lifetime_us <= 0.0 {
                return Err(Error::config(format!(
                    "{}: trap lifetime {} us must be > 0",
                    self.name, t.lifetime_us
                )));
            }
        }
        if self.dead_time_us <= 0.0 {
            return Err(Error::config(format!(
                "{}: dead_time {} us must be > 0",
                self.name, self.dead_time_us
            )));
        }
        if self.gamma.half_power < 0.0 || self.gamma.avalanche < 0.0 {
            return Err(Error::config(format!("{}: gamma must be >= 0", self.name)));
        }
        if self.gamma.full_power_applications == 0 {
            return Err(Error::config(format!(
                "{}: full_power_applications must be >= 1",
                self.name
            )));
        }
        Ok(())
    }

    pub fn dead_time_ns(&self) -> i64 {
        (self.dead_time_us * NS_PER_US).round() as i64
    }

    /// Events older than this contribute < e^-12 of their amplitude and are
    /// dropped from the log.
    pub fn prune_horizon_ns(&self) -> i64 {
        let max_tau = self.traps[0].lifetime_us.max(self.traps[1].lifetime_us);
        (12.0 * max_tau * NS_PER_US).round() as i64
    }
}

/// One illumination event: a scaled copy of the trap population deposited at
/// `time_ns`. `scale` already folds in the gamma correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CarrierEvent {
    pub time_ns: i64,
    pub scale: f64,
}

/// Mutable per-detector simulation state.
#[derive(Clone, Debug, Default)]
pub struct DetectorState {
    events: VecDeque<CarrierEvent>,
    pub dead_until_ns: Option<i64>,
    now_ns: i64,
}

impl DetectorState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_ns(&self) -> i64 {
        self.now_ns
    }

    pub fn events(&self) -> impl Iterator<Item = &CarrierEvent> {
        self.events.iter()
    }

    pub fn is_dead_at(&self, t_ns: i64) -> bool {
        self.dead_until_ns.is_some_and(|d| t_ns < d)
    }

    /// Start or extend a dead-time window; nested windows keep the max.
    pub fn extend_dead(&mut self, until_ns: i64) {
        self.dead_until_ns = Some(match self.dead_until_ns {
            Some(d) => d.max(until_ns),
            None => until_ns,
        });
    }

    fn advance(&mut self, t_ns: i64) {
        assert!(
            t_ns >= self.now_ns,
            "detector time must not run backwards ({} < {})",
            t_ns,
            self.now_ns
        );
        self.now_ns = t_ns;
    }

    /// Deposit trapped carriers for an illumination event at `t_ns`.
    pub fn register_carriers(&mut self, params: &DetectorParams, t_ns: i64, source: CarrierSource) {
        self.advance(t_ns);
        let horizon = params.prune_horizon_ns();
        while let Some(front) = self.events.front() {
            if self.now_ns - front.time_ns >= horizon {
                self.events.pop_front();
            } else {
                break;
            }
        }
        let (scale, count) = match source {
            CarrierSource::HalfPower => (params.gamma.half_power, 1),
            CarrierSource::FullPower => (1.0, params.gamma.full_power_applications),
            CarrierSource::Avalanche => (params.gamma.avalanche, 1),
        };
        if scale > 0.0 {
            for _ in 0..count {
                self.events.push_back(CarrierEvent {
                    time_ns: t_ns,
                    scale,
                });
            }
        }
    }

    /// Probability that a gate at `t_query_ns` clicks from dark counts or
    /// afterpulses alone: p = 1 - (1-P_dark) * prod_k (1 - c_k) with
    /// c_k = clamp(scale_k * sum_i A_i exp(-(t-t_k)/tau_i), 0, 1).
    pub fn afterpulse_probability(&self, params: &DetectorParams, t_query_ns: i64) -> Result<f64> {
        let inv_tau = [
            1.0 / (params.traps[0].lifetime_us * NS_PER_US),
            1.0 / (params.traps[1].lifetime_us * NS_PER_US),
        ];
        let a = [params.traps[0].amplitude, params.traps[1].amplitude];
        let mut survive = 1.0 - params.dark_prob;
        for ev in &self.events {
            debug_assert!(t_query_ns >= ev.time_ns);
            let dt = (t_query_ns - ev.time_ns) as f64;
            let c = ev.scale * (a[0] * (-dt * inv_tau[0]).exp() + a[1] * (-dt * inv_tau[1]).exp());
            survive *= 1.0 - c.clamp(0.0, 1.0);
        }
        if !survive.is_finite() {
            return Err(Error::NonFinite {
                what: "afterpulse probability",
            });
        }
        Ok(1.0 - survive)
    }

    /// One Geiger-mode gate at `t_ns` receiving a coherent signal of
    /// `mu_eff` mean photons (already attenuated down to Bob's detector
    /// input; quantum efficiency is applied here). Gates must not be issued
    /// during dead time - the bias pulses are suspended.
    pub fn process_gate(
        &mut self,
        params: &DetectorParams,
        t_ns: i64,
        mu_eff: f64,
        rng: &mut Rng,
    ) -> Result<bool> {
        if let Some(dead_until) = self.dead_until_ns {
            if t_ns < dead_until {
                return Err(Error::GateDuringDeadTime {
                    t_ns,
                    dead_until_ns: dead_until,
                });
            }
        }
        if mu_eff < 0.0 {
            return Err(Error::domain(format!("mu_eff {mu_eff} must be >= 0")));
        }
        let p_ap = self.afterpulse_probability(params, t_ns)?;
        let p_photon = 1.0 - (-mu_eff * params.quantum_efficiency).exp();
        let p_click = 1.0 - (1.0 - p_photon) * (1.0 - p_ap);
        let click = rng.bernoulli(p_click);
        if click {
            self.register_carriers(params, t_ns, CarrierSource::Avalanche);
            self.extend_dead(t_ns + params.dead_time_ns());
        } else {
            self.advance(t_ns);
        }
        Ok(click)
    }

    /// Decide whether a linear-mode click arriving inside dead time
    /// registers. ACCEPT_AND_EXTEND restarts the dead window on success.
    pub fn handle_deadtime_click(
        &mut self,
        params: &DetectorParams,
        t_ns: i64,
        rng: &mut Rng,
    ) -> bool {
        match params.deadtime_mode {
            DeadtimeMode::Reject => false,
            DeadtimeMode::AcceptAndExtend => {
                if rng.bernoulli(params.deadtime_detection_prob) {
                    self.extend_dead(t_ns + params.dead_time_ns());
                    true
                } else {
                    false
                }
            }
        }
    }

    /// A bright pulse of `power_uw` arriving `delay_after_gate_ns` after the
    /// gate at `gate_time_ns`. Clicks are decided by the linear-mode
    /// threshold ramp; carriers are deposited per `deposit` regardless of
    /// whether the pulse registers.
    pub fn process_bright_pulse(
        &mut self,
        params: &DetectorParams,
        gate_time_ns: i64,
        power_uw: f64,
        delay_after_gate_ns: f64,
        deposit: CarrierSource,
        rng: &mut Rng,
    ) -> Result<bool> {
        if power_uw < 0.0 {
            return Err(Error::domain(format!("pulse power {power_uw} must be >= 0")));
        }
        if power_uw == 0.0 {
            return Ok(false);
        }
        let p_click = params
            .thresholds
            .click_probability(power_uw, delay_after_gate_ns)?;
        let t_ns = gate_time_ns + delay_after_gate_ns.round() as i64;
        let click = if !rng.bernoulli(p_click) {
            false
        } else if self.is_dead_at(t_ns) {
            self.handle_deadtime_click(params, t_ns, rng)
        } else {
            self.extend_dead(t_ns + params.dead_time_ns());
            true
        };
        self.register_carriers(params, t_ns, deposit);
        Ok(click)
    }
}
