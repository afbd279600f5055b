//! Afterpulse characterization. A half-power probe pulse deposits carriers
//! in both detectors at t = 0 (it never clicks itself - that is what
//! half power means); gating then resumes and the distribution of the first
//! click over gate index maps out the trap decay. Each detector quenches on
//! its own click, so one run yields the either-detector curve and the two
//! labeled per-detector curves. `fit_decay_params` recovers dark counts,
//! amplitudes, and lifetimes from such a curve by simplex descent over the
//! Monte Carlo surface under common random numbers.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{CarrierSource, DetectorParams, DetectorState, TrapLevel};
use crate::error::{Error, Result};
use crate::optim::nelder_mead;
use crate::rng::SeedKey;

// -------------------------------------------------------------------- curve

/// Cumulative first-click probability, indexed by gate (1-based): `points[k]`
/// is the probability that the first click in either detector fell on gate
/// `k + 1` or earlier. When the click record kept detector labels (the
/// simulator always does; loaded files may not), `by_detector[i][k]` is the
/// probability that detector i's own first click fell on gate `k + 1` or
/// earlier — each detector observed to its own click, independent of the
/// other. Labels matter to fitting: the either-detector curve is invariant
/// under swapping the two detectors' parameter sets, so it cannot say which
/// dark rate or trap pair belongs to which detector; the labeled pair can.
#[derive(Clone, Debug, PartialEq)]
pub struct CumulativeCurve {
    pub gate_period_ns: i64,
    pub trials: u64,
    pub points: Vec<f64>,
    pub by_detector: Option<[Vec<f64>; 2]>,
}

fn check_cdf(points: &[f64], what: &str) -> Result<()> {
    let mut prev = 0.0;
    for (i, &p) in points.iter().enumerate() {
        if !(p >= prev && p <= 1.0) {
            return Err(Error::config(format!(
                "{what} probability at gate {} is {p}, previous {prev}",
                i + 1
            )));
        }
        prev = p;
    }
    Ok(())
}

impl CumulativeCurve {
    pub fn new(gate_period_ns: i64, trials: u64, points: Vec<f64>) -> Result<Self> {
        if gate_period_ns <= 0 {
            return Err(Error::config("gate_period_ns must be > 0"));
        }
        if points.is_empty() {
            return Err(Error::config("cumulative curve needs at least one gate"));
        }
        check_cdf(&points, "cumulative")?;
        Ok(CumulativeCurve {
            gate_period_ns,
            trials,
            points,
            by_detector: None,
        })
    }

    pub fn with_labels(
        gate_period_ns: i64,
        trials: u64,
        points: Vec<f64>,
        by_detector: [Vec<f64>; 2],
    ) -> Result<Self> {
        let mut curve = CumulativeCurve::new(gate_period_ns, trials, points)?;
        for (i, d) in by_detector.iter().enumerate() {
            if d.len() != curve.points.len() {
                return Err(Error::config(format!(
                    "detector {i} curve has {} gates, either-detector curve has {}",
                    d.len(),
                    curve.points.len()
                )));
            }
            check_cdf(d, &format!("detector {i} cumulative"))?;
        }
        // first click in either detector is at or before either own first
        // click, and no later than both combined
        for (k, &p) in curve.points.iter().enumerate() {
            let (a, b) = (by_detector[0][k], by_detector[1][k]);
            if p < a.max(b) - 1e-9 || p > (a + b).min(1.0) + 1e-9 {
                return Err(Error::config(format!(
                    "gate {}: either-detector probability {p} inconsistent with labels {a}, {b}",
                    k + 1
                )));
            }
        }
        curve.by_detector = Some(by_detector);
        Ok(curve)
    }

    pub fn gates(&self) -> usize {
        self.points.len()
    }

    /// Cumulative probability at a 1-based gate index.
    pub fn at_gate(&self, gate: usize) -> Option<f64> {
        if gate == 0 {
            None
        } else {
            self.points.get(gate - 1).copied()
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::from("# cumulative first-click probability after a half-power probe\n");
        s.push_str(&format!("# gate_period_ns {}\n", self.gate_period_ns));
        s.push_str(&format!("# trials {}\n", self.trials));
        match &self.by_detector {
            Some([d0, d1]) => {
                s.push_str("# columns: gate p_either p_d0 p_d1\n");
                for (i, p) in self.points.iter().enumerate() {
                    s.push_str(&format!("{}\t{}\t{}\t{}\n", i + 1, p, d0[i], d1[i]));
                }
            }
            None => {
                s.push_str("# columns: gate p_either\n");
                for (i, p) in self.points.iter().enumerate() {
                    s.push_str(&format!("{}\t{}\n", i + 1, p));
                }
            }
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut gate_period_ns = 0i64;
        let mut trials = 0u64;
        let mut points = Vec::new();
        let mut labels: Option<(Vec<f64>, Vec<f64>)> = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::parse(path, format!("line {}: {msg}", lineno + 1));
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                match it.next() {
                    Some("gate_period_ns") => {
                        gate_period_ns = it
                            .next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| err("bad gate_period_ns header".into()))?;
                    }
                    Some("trials") => {
                        trials = it
                            .next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| err("bad trials header".into()))?;
                    }
                    _ => {} // free-form comment
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 && fields.len() != 4 {
                return Err(err(format!(
                    "expected 'gate p_either' or 'gate p_either p_d0 p_d1', got {} fields",
                    fields.len()
                )));
            }
            let idx: usize = fields[0]
                .parse()
                .map_err(|_| err("bad gate index".into()))?;
            if idx != points.len() + 1 {
                return Err(err(format!(
                    "gate indices must be contiguous from 1 (got {idx}, expected {})",
                    points.len() + 1
                )));
            }
            let mut probs = fields[1..]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| err("bad probability".into())));
            points.push(probs.next().unwrap()?);
            if fields.len() == 4 {
                let (d0, d1) = labels.get_or_insert_with(Default::default);
                d0.push(probs.next().unwrap()?);
                d1.push(probs.next().unwrap()?);
            }
            if labels.as_ref().is_some_and(|(d0, _)| d0.len() != points.len()) {
                return Err(err("mixed labeled and unlabeled rows".into()));
            }
        }
        if gate_period_ns == 0 {
            return Err(Error::parse(path, "missing '# gate_period_ns' header"));
        }
        match labels {
            Some((d0, d1)) => {
                CumulativeCurve::with_labels(gate_period_ns, trials, points, [d0, d1])
            }
            None => CumulativeCurve::new(gate_period_ns, trials, points),
        }
    }
}

// --------------------------------------------------------------- simulation

/// Per-gate click probabilities of each detector after the probe deposit.
/// The event log is the same for every trial (nothing new is deposited
/// while waiting for the first click), so these are computed once and
/// reused.
fn per_detector_gate_probabilities(
    d0: &DetectorParams,
    d1: &DetectorParams,
    gates: usize,
    gate_period_ns: i64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut s0 = DetectorState::new();
    let mut s1 = DetectorState::new();
    s0.register_carriers(d0, 0, CarrierSource::HalfPower);
    s1.register_carriers(d1, 0, CarrierSource::HalfPower);
    let mut a = Vec::with_capacity(gates);
    let mut b = Vec::with_capacity(gates);
    for j in 1..=gates {
        let t = j as i64 * gate_period_ns;
        a.push(s0.afterpulse_probability(d0, t)?);
        b.push(s1.afterpulse_probability(d1, t)?);
    }
    Ok((a, b))
}

/// Exact (infinite-trials) either-detector cumulative curve from the product
/// formula; reference for tests and for judging Monte Carlo scatter.
pub fn analytic_cumulative(
    d0: &DetectorParams,
    d1: &DetectorParams,
    gates: usize,
    gate_period_ns: i64,
) -> Result<Vec<f64>> {
    let (a, b) = per_detector_gate_probabilities(d0, d1, gates, gate_period_ns)?;
    let mut out = Vec::with_capacity(gates);
    let mut survive = 1.0;
    for (pa, pb) in a.into_iter().zip(b) {
        survive *= (1.0 - pa) * (1.0 - pb);
        out.push(1.0 - survive);
    }
    Ok(out)
}

/// Exact first-click cumulative curve of one detector on its own.
pub fn analytic_detector_cumulative(
    d: &DetectorParams,
    gates: usize,
    gate_period_ns: i64,
) -> Result<Vec<f64>> {
    let mut s = DetectorState::new();
    s.register_carriers(d, 0, CarrierSource::HalfPower);
    let mut out = Vec::with_capacity(gates);
    let mut survive = 1.0;
    for j in 1..=gates {
        let t = j as i64 * gate_period_ns;
        survive *= 1.0 - s.afterpulse_probability(d, t)?;
        out.push(1.0 - survive);
    }
    Ok(out)
}

/// Monte Carlo cumulative first-click curve: per trial, deposit half-power
/// carriers on both detectors at t = 0, then gate each detector until its
/// own first click (dark counts included; a click quenches only the detector
/// that fired, so both first-click times are observed in the same trial).
/// The either-detector curve comes from the earlier of the two, and the
/// labeled per-detector curves ride along in `by_detector`. Each detector
/// draws from its own per-trial stream, so under a small parameter change
/// the same gate sees the same uniform draw — maximal coupling for common
/// random numbers. Trials run in parallel with per-trial seeds and integer
/// tallies, so the result is thread-count invariant.
pub fn simulate_cumulative(
    d0: &DetectorParams,
    d1: &DetectorParams,
    probe_power_uw: f64,
    probe_delay_ns: f64,
    gates: usize,
    gate_period_ns: i64,
    trials: u64,
    seed: SeedKey,
) -> Result<CumulativeCurve> {
    d0.validate()?;
    d1.validate()?;
    if gates == 0 || gate_period_ns <= 0 {
        return Err(Error::config("need gates >= 1 and a positive gate period"));
    }
    if trials == 0 {
        return Err(Error::config("trials must be >= 1"));
    }
    if !(probe_power_uw > 0.0) {
        return Err(Error::config("probe power must be > 0"));
    }
    for d in [d0, d1] {
        let p0 = d.thresholds.p0_at(probe_delay_ns)?;
        if probe_power_uw > p0 {
            return Err(Error::config(format!(
                "probe power {probe_power_uw} uW exceeds {}'s never-click threshold {p0} uW at {probe_delay_ns} ns",
                d.name
            )));
        }
    }

    let (pa, pb) = per_detector_gate_probabilities(d0, d1, gates, gate_period_ns)?;
    // histogram layout: [either | detector 0 | detector 1], first-click gate
    let hist = (0..trials)
        .into_par_iter()
        .fold(
            || vec![0u64; 3 * gates],
            |mut h, i| {
                let trial = seed.derive(i);
                let mut r0 = trial.derive(0).rng();
                let mut r1 = trial.derive(1).rng();
                let g0 = pa.iter().position(|&p| r0.bernoulli(p));
                let g1 = pb.iter().position(|&p| r1.bernoulli(p));
                if let Some(j) = g0 {
                    h[gates + j] += 1;
                }
                if let Some(j) = g1 {
                    h[2 * gates + j] += 1;
                }
                match (g0, g1) {
                    (Some(x), Some(y)) => h[x.min(y)] += 1,
                    (Some(x), None) => h[x] += 1,
                    (None, Some(y)) => h[y] += 1,
                    (None, None) => {}
                }
                h
            },
        )
        .reduce(
            || vec![0u64; 3 * gates],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );

    let cdf = |counts: &[u64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(gates);
        let mut acc = 0u64;
        for &c in counts {
            acc += c;
            out.push(acc as f64 / trials as f64);
        }
        out
    };
    CumulativeCurve::with_labels(
        gate_period_ns,
        trials,
        cdf(&hist[..gates]),
        [cdf(&hist[gates..2 * gates]), cdf(&hist[2 * gates..])],
    )
}

// ---------------------------------------------------------------------- fit

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FitConfig {
    pub trials_per_eval: u64,
    pub max_evaluations: u32,
    pub ftol: f64,
    /// Initial simplex displacement in ln-space (0.25 ~ 28% multiplicative).
    pub step: f64,
    pub probe_power_uw: f64,
    pub probe_delay_ns: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            trials_per_eval: 100_000,
            max_evaluations: 2_000,
            ftol: 1e-8,
            step: 0.25,
            probe_power_uw: 287.5,
            probe_delay_ns: 7.75,
        }
    }
}

/// The five fitted constants of one detector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedDetector {
    pub name: String,
    pub dark_prob: f64,
    pub traps: [TrapLevel; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub d0: FittedDetector,
    pub d1: FittedDetector,
    /// Sum of squared deviations from the measured curve at the optimum and
    /// at the starting point.
    pub residual: f64,
    pub initial_residual: f64,
    pub evaluations: u32,
    /// False = the evaluation budget ran out first (flagged NOT_CONVERGED in
    /// reports); the returned parameters are still the best point visited.
    pub converged: bool,
}

fn apply_vector(x: &[f64], init_d0: &DetectorParams, init_d1: &DetectorParams) -> (DetectorParams, DetectorParams) {
    let mut d0 = init_d0.clone();
    let mut d1 = init_d1.clone();
    for (d, chunk) in [(&mut d0, &x[0..5]), (&mut d1, &x[5..10])] {
        d.dark_prob = chunk[0].exp();
        d.traps[0] = TrapLevel {
            amplitude: chunk[1].exp(),
            lifetime_us: chunk[2].exp(),
        };
        d.traps[1] = TrapLevel {
            amplitude: chunk[3].exp(),
            lifetime_us: chunk[4].exp(),
        };
    }
    (d0, d1)
}

fn to_vector(d0: &DetectorParams, d1: &DetectorParams) -> Vec<f64> {
    let mut x = Vec::with_capacity(10);
    for d in [d0, d1] {
        x.push(d.dark_prob.ln());
        x.push(d.traps[0].amplitude.ln());
        x.push(d.traps[0].lifetime_us.ln());
        x.push(d.traps[1].amplitude.ln());
        x.push(d.traps[1].lifetime_us.ln());
    }
    x
}

/// Recover dark counts and both trap levels of both detectors from a
/// measured cumulative curve. When the curve carries detector labels the
/// objective is the summed squared deviation over both per-detector curves,
/// which pins each parameter to its detector; a bare either-detector curve
/// is invariant under swapping the detectors and fits only up to that
/// exchange, so labeled data is strongly preferred. The search runs in
/// ln-space (positivity for free, multiplicative steps); every objective
/// evaluation re-simulates the curve with the caller's `seed`, so the
/// surface is deterministic and the minimum is the model, not the noise. A
/// consequence worth knowing: a synthetic curve produced by
/// `simulate_cumulative` with this same seed and trial count makes the
/// generating parameters an exact zero of the objective, so the round trip
/// recovers them instead of chasing the residual noise along weakly
/// identified directions. Trap pairs are returned sorted by lifetime.
pub fn fit_decay_params(
    measured: &CumulativeCurve,
    init_d0: &DetectorParams,
    init_d1: &DetectorParams,
    cfg: &FitConfig,
    seed: SeedKey,
) -> Result<FitResult> {
    if measured.gates() < 10 {
        return Err(Error::config(
            "measured curve too short to constrain the model (need >= 10 gates)",
        ));
    }
    let gates = measured.gates();
    let period = measured.gate_period_ns;
    let eval_seed = seed;

    let objective = |x: &[f64]| -> f64 {
        let (d0, d1) = apply_vector(x, init_d0, init_d1);
        match simulate_cumulative(
            &d0,
            &d1,
            cfg.probe_power_uw,
            cfg.probe_delay_ns,
            gates,
            period,
            cfg.trials_per_eval,
            eval_seed,
        ) {
            Ok(curve) => match (&measured.by_detector, &curve.by_detector) {
                (Some(m), Some(s)) => m[0]
                    .iter()
                    .zip(&s[0])
                    .chain(m[1].iter().zip(&s[1]))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum(),
                _ => curve
                    .points
                    .iter()
                    .zip(&measured.points)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum(),
            },
            Err(_) => f64::INFINITY, // out-of-model vertex (e.g. amplitude > 1)
        }
    };

    let x0 = to_vector(init_d0, init_d1);
    let initial_residual = objective(&x0);
    let nm = nelder_mead(objective, &x0, cfg.step, cfg.max_evaluations, cfg.ftol);
    let (mut f0, mut f1) = apply_vector(&nm.x, init_d0, init_d1);
    for d in [&mut f0, &mut f1] {
        if d.traps[0].lifetime_us > d.traps[1].lifetime_us {
            d.traps.swap(0, 1);
        }
    }
    Ok(FitResult {
        d0: FittedDetector {
            name: f0.name.clone(),
            dark_prob: f0.dark_prob,
            traps: f0.traps,
        },
        d1: FittedDetector {
            name: f1.name.clone(),
            dark_prob: f1.dark_prob,
            traps: f1.traps,
        },
        residual: nm.fx,
        initial_residual,
        evaluations: nm.evaluations + 1, // + the explicit x0 evaluation
        converged: nm.converged,
    })
}
