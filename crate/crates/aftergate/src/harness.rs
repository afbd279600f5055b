//! Attack sweeps over the (gate frequency, line transmittance) grid.
//!
//! Each grid cell is keyed by `base_seed -> f -> T`, with separate derived
//! streams for baseline measurement, calibration, validation, and the
//! production run. Frames are independent, so the per-cell frame loop runs
//! in parallel; all cross-frame statistics are integer tallies, which makes
//! the reduction order irrelevant and every run bit-identical for a given
//! seed, whatever the thread count.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Manifest, RunConfig};
use crate::detector::DetectorParams;
use crate::error::{Error, Result};
use crate::eve::{burst_lengths, calibrate_chi, run_attack_frame, EveParams, Strategy};
use crate::protocol::{
    compare_to_bounds, monitor_click_spacing, run_baseline_frame, sift_frame, ChannelConfig,
    DoubleClickPolicy, FrameConfig, QberEstimate, Receiver, Verdict,
};
use crate::rng::{SeedKey, STREAM_BASELINE, STREAM_MAIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// No eavesdropper; measures the honest system.
    Baseline,
    DeadtimeRespected,
    DeadtimeExploit,
}

impl SweepMode {
    pub fn strategy(&self) -> Option<Strategy> {
        match self {
            SweepMode::Baseline => None,
            SweepMode::DeadtimeRespected => Some(Strategy::DeadtimeRespected),
            SweepMode::DeadtimeExploit => Some(Strategy::DeadtimeExploit),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepMode::Baseline => "baseline",
            SweepMode::DeadtimeRespected => "deadtime-respected",
            SweepMode::DeadtimeExploit => "deadtime-exploit",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSpec {
    pub frequencies_hz: Vec<f64>,
    pub transmittances: Vec<f64>,
    pub frames_per_cell: u32,
    pub calibration_frames: u32,
    pub mode: SweepMode,
    pub base_seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frequencies_hz.is_empty() || self.transmittances.is_empty() {
            return Err(Error::config("sweep grid must have at least one cell"));
        }
        for &f in &self.frequencies_hz {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::config(format!("gate frequency {f} Hz must be > 0")));
            }
        }
        for &t in &self.transmittances {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::config(format!("transmittance {t} outside (0, 1]")));
            }
        }
        if self.frames_per_cell == 0 || self.calibration_frames == 0 {
            return Err(Error::config("frame counts must be >= 1"));
        }
        Ok(())
    }
}

/// Receiver hardware plus Eve's equipment: everything that stays fixed
/// across the grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemConfig {
    pub d0: DetectorParams,
    pub d1: DetectorParams,
    pub t_bob: f64,
    pub double_click: DoubleClickPolicy,
    pub gates_per_frame: u32,
    pub interframe_gap_ns: i64,
    pub eve: EveParams,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        self.receiver()?;
        self.eve.validate()?;
        if self.gates_per_frame == 0 {
            return Err(Error::config("gates_per_frame must be >= 1"));
        }
        if self.interframe_gap_ns < 0 {
            return Err(Error::config("interframe_gap_ns must be >= 0"));
        }
        Ok(())
    }

    pub fn receiver(&self) -> Result<Receiver> {
        Receiver::new(
            self.d0.clone(),
            self.d1.clone(),
            self.t_bob,
            self.double_click,
        )
    }

    pub fn frame_config(&self, f_hz: f64) -> Result<FrameConfig> {
        FrameConfig::from_frequency_hz(f_hz, self.gates_per_frame, self.interframe_gap_ns)
    }

    pub fn dead_time_us(&self) -> f64 {
        self.d0.dead_time_us.max(self.d1.dead_time_us)
    }
}

#[derive(Clone, Debug)]
pub struct CellStats {
    pub chi: u32,
    pub target_rate: f64,
    pub calibrated_rate: f64,
    pub validated_rate: f64,
    pub mean_burst_length: f64,
    pub qber: QberEstimate,
    pub verdict: Verdict,
    pub anomalies_per_frame: f64,
    pub frames_with_anomalies: u32,
    pub frames: u32,
}

#[derive(Clone, Debug)]
pub enum CellOutcome {
    Computed(Box<CellStats>),
    /// Even attacking every gate leaves Bob's rate > 5% short of baseline:
    /// the dead time caps what this strategy can deliver here.
    Infeasible { target_rate: f64, max_rate: f64 },
}

#[derive(Clone, Debug)]
pub struct SweepCell {
    pub frequency_hz: f64,
    pub transmittance: f64,
    pub cell_seed: u64,
    pub outcome: CellOutcome,
}

#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    clicks: u64,
    sifted: u64,
    errors: u64,
    anomalies: u64,
    frames_with_anomalies: u32,
    burst_len_sum: u64,
    burst_count: u64,
}

impl Tally {
    fn merge(a: Tally, b: Tally) -> Tally {
        Tally {
            clicks: a.clicks + b.clicks,
            sifted: a.sifted + b.sifted,
            errors: a.errors + b.errors,
            anomalies: a.anomalies + b.anomalies,
            frames_with_anomalies: a.frames_with_anomalies + b.frames_with_anomalies,
            burst_len_sum: a.burst_len_sum + b.burst_len_sum,
            burst_count: a.burst_count + b.burst_count,
        }
    }
}

fn cell_key(base_seed: u64, f_hz: f64, t: f64) -> SeedKey {
    SeedKey::new(base_seed)
        .derive(f_hz.to_bits())
        .derive(t.to_bits())
}

/// Mean clicks per frame of the honest system, measured on the cell's
/// baseline stream.
fn measure_baseline_rate(
    fc: &FrameConfig,
    ch: &ChannelConfig,
    proto_rx: &Receiver,
    frames: u32,
    key: SeedKey,
) -> Result<f64> {
    let clicks = (0..frames)
        .into_par_iter()
        .fold(
            || (proto_rx.clone(), Ok(0u64)),
            |(mut rx, acc), i| {
                let acc = acc.and_then(|a: u64| {
                    let mut rng = key.derive(i as u64).rng();
                    let (out, _) = run_baseline_frame(fc, ch, &mut rx, &mut rng)?;
                    Ok(a + out.clicks.len() as u64)
                });
                (rx, acc)
            },
        )
        .map(|(_, acc)| acc)
        .reduce(
            || Ok(0u64),
            |a, b| a.and_then(|x| b.map(|y| x + y)),
        )?;
    Ok(clicks as f64 / frames as f64)
}

fn run_cell(run: &RunConfig, f_hz: f64, t: f64) -> Result<SweepCell> {
    let sys = &run.system;
    let spec = &run.sweep;
    let fc = sys.frame_config(f_hz)?;
    let ch = ChannelConfig::coupled(t);
    ch.validate()?;
    let key = cell_key(spec.base_seed, f_hz, t);
    let proto_rx = sys.receiver()?;
    let dead_us = sys.dead_time_us();

    let (chi, target_rate, calibrated_rate, validated_rate) = match spec.mode.strategy() {
        None => (0, f64::NAN, f64::NAN, f64::NAN), // baseline: filled from main run
        Some(strategy) => {
            let target = measure_baseline_rate(
                &fc,
                &ch,
                &proto_rx,
                spec.calibration_frames,
                key.derive(STREAM_BASELINE),
            )?;
            let mut cal_rx = proto_rx.clone();
            let cal = calibrate_chi(
                &fc,
                &ch,
                &sys.eve,
                strategy,
                &mut cal_rx,
                target,
                spec.calibration_frames,
                key,
            )?;
            if !cal.feasible {
                return Ok(SweepCell {
                    frequency_hz: f_hz,
                    transmittance: t,
                    cell_seed: key.raw(),
                    outcome: CellOutcome::Infeasible {
                        target_rate: cal.target_rate,
                        max_rate: cal.validated_rate,
                    },
                });
            }
            (cal.chi, cal.target_rate, cal.calibrated_rate, cal.validated_rate)
        }
    };

    let main_key = key.derive(STREAM_MAIN);
    let frames = spec.frames_per_cell;
    let tally = (0..frames)
        .into_par_iter()
        .fold(
            || (proto_rx.clone(), Ok(Tally::default())),
            |(mut rx, acc), i| {
                let acc = acc.and_then(|mut tl: Tally| {
                    let frame_key = main_key.derive(i as u64);
                    let (out, alice, schedule_bursts) = match spec.mode.strategy() {
                        None => {
                            let mut rng = frame_key.rng();
                            let (out, alice) = run_baseline_frame(&fc, &ch, &mut rx, &mut rng)?;
                            (out, alice, Vec::new())
                        }
                        Some(strategy) => {
                            let (out, alice, plan) = run_attack_frame(
                                &fc, &ch, &sys.eve, strategy, chi, &mut rx, frame_key,
                            )?;
                            (out, alice, burst_lengths(&plan.schedule))
                        }
                    };
                    let s = sift_frame(&out, &alice)?;
                    tl.clicks += out.clicks.len() as u64;
                    tl.sifted += s.sifted;
                    tl.errors += s.errors;
                    let anomalies = monitor_click_spacing(&out, dead_us).len() as u64;
                    tl.anomalies += anomalies;
                    tl.frames_with_anomalies += (anomalies > 0) as u32;
                    tl.burst_len_sum += schedule_bursts.iter().map(|&l| l as u64).sum::<u64>();
                    tl.burst_count += schedule_bursts.len() as u64;
                    Ok(tl)
                });
                (rx, acc)
            },
        )
        .map(|(_, acc)| acc)
        .reduce(|| Ok(Tally::default()), |a, b| Ok(Tally::merge(a?, b?)))?;

    let qber = QberEstimate::from_counts(
        tally.sifted,
        tally.errors,
        tally.clicks as f64 / frames as f64,
    );
    let verdict = compare_to_bounds(&qber)?;
    let mean_burst_length = if tally.burst_count == 0 {
        0.0
    } else {
        tally.burst_len_sum as f64 / tally.burst_count as f64
    };
    let (target_rate, calibrated_rate, validated_rate) = if spec.mode.strategy().is_none() {
        let r = qber.raw_rate_per_frame;
        (r, r, r)
    } else {
        (target_rate, calibrated_rate, validated_rate)
    };
    Ok(SweepCell {
        frequency_hz: f_hz,
        transmittance: t,
        cell_seed: key.raw(),
        outcome: CellOutcome::Computed(Box::new(CellStats {
            chi,
            target_rate,
            calibrated_rate,
            validated_rate,
            mean_burst_length,
            qber,
            verdict,
            anomalies_per_frame: tally.anomalies as f64 / frames as f64,
            frames_with_anomalies: tally.frames_with_anomalies,
            frames,
        })),
    })
}

/// Run the full grid. Cells execute sequentially (frames inside each cell
/// are parallel); results come back in grid order, frequencies outer.
pub fn run_sweep(run: &RunConfig) -> Result<Vec<SweepCell>> {
    run.sweep.validate()?;
    run.system.validate()?;
    let mut cells = Vec::new();
    for &f in &run.sweep.frequencies_hz {
        for &t in &run.sweep.transmittances {
            cells.push(run_cell(run, f, t)?);
        }
    }
    Ok(cells)
}

/// Same, inside a dedicated rayon pool of `threads` workers (None = rayon's
/// default). Results are identical either way; this exists for benchmarking
/// and for proving exactly that.
pub fn run_sweep_with_threads(run: &RunConfig, threads: Option<usize>) -> Result<Vec<SweepCell>> {
    match threads {
        None => run_sweep(run),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?;
            pool.install(|| run_sweep(run))
        }
    }
}

// ------------------------------------------------------------------- export

/// Render the per-cell table. Floats print in shortest round-trip form, so
/// identical runs yield identical bytes.
pub fn render_results_tsv(cells: &[SweepCell]) -> String {
    let mut s = String::from(
        "frequency_hz\ttransmittance\tchi\tmean_burst_length\ttarget_rate\tachieved_rate\t\
         qber\twilson_low\twilson_high\tsifted_bits\tverdict\tanomalies_per_frame\tcell_seed\n",
    );
    for c in cells {
        match &c.outcome {
            CellOutcome::Computed(st) => {
                s.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    c.frequency_hz,
                    c.transmittance,
                    st.chi,
                    st.mean_burst_length,
                    st.target_rate,
                    st.qber.raw_rate_per_frame,
                    st.qber.qber,
                    st.qber.wilson_low,
                    st.qber.wilson_high,
                    st.qber.sifted_total,
                    st.verdict,
                    st.anomalies_per_frame,
                    c.cell_seed,
                ));
            }
            CellOutcome::Infeasible {
                target_rate,
                max_rate,
            } => {
                s.push_str(&format!(
                    "{}\t{}\t-\t-\t{}\t{}\t-\t-\t-\t-\tINFEASIBLE\t-\t{}\n",
                    c.frequency_hz, c.transmittance, target_rate, max_rate, c.cell_seed,
                ));
            }
        }
    }
    s
}

/// Write `results.tsv` and `manifest.toml` into `out_dir`.
pub fn export_results(
    run: &RunConfig,
    cells: &[SweepCell],
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results_path = out_dir.join("results.tsv");
    fs::write(&results_path, render_results_tsv(cells))
        .map_err(|e| Error::io(&results_path, e))?;
    let manifest_path = out_dir.join("manifest.toml");
    fs::write(&manifest_path, Manifest::new(run).to_toml()?)
        .map_err(|e| Error::io(&manifest_path, e))?;
    Ok((results_path, manifest_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::presets;

    fn small_run(mode: SweepMode, frames: u32, cal_frames: u32) -> RunConfig {
        RunConfig {
            sweep: SweepSpec {
                frequencies_hz: vec![5e6],
                transmittances: vec![1.0],
                frames_per_cell: frames,
                calibration_frames: cal_frames,
                mode,
                base_seed: 11,
            },
            system: SystemConfig {
                d0: presets::clavis2_d0(),
                d1: presets::clavis2_d1(),
                t_bob: 0.412,
                double_click: DoubleClickPolicy::RandomBit,
                gates_per_frame: 1075,
                interframe_gap_ns: 50_000,
                eve: EveParams::perfect(),
            },
        }
    }

    fn stats(cell: &SweepCell) -> &CellStats {
        match &cell.outcome {
            CellOutcome::Computed(st) => st,
            CellOutcome::Infeasible { .. } => panic!("unexpected infeasible cell"),
        }
    }

    #[test]
    fn baseline_cell_is_clean_and_quiet() {
        let run = small_run(SweepMode::Baseline, 60, 1);
        let cells = run_sweep(&run).unwrap();
        assert_eq!(cells.len(), 1);
        let st = stats(&cells[0]);
        assert_eq!(st.chi, 0);
        assert_eq!(st.verdict, Verdict::SecureViolated11);
        assert_eq!(st.anomalies_per_frame, 0.0);
        assert_eq!(st.frames_with_anomalies, 0);
        assert!(st.qber.raw_rate_per_frame > 10.0);
    }

    #[test]
    fn exploit_cell_produces_low_qber_and_anomalies() {
        let run = small_run(SweepMode::DeadtimeExploit, 50, 60);
        let cells = run_sweep(&run).unwrap();
        let st = stats(&cells[0]);
        assert!(st.chi > 0);
        assert!(st.qber.qber < 0.11, "qber {}", st.qber.qber);
        assert_eq!(st.frames_with_anomalies, st.frames);
        assert!(st.anomalies_per_frame >= 1.0);
        // rate calibration held on the production stream too
        let rel = (st.qber.raw_rate_per_frame - st.target_rate).abs() / st.target_rate;
        assert!(rel < 0.12, "main-run rate off target by {rel}");
    }

    #[test]
    fn respected_cell_has_capped_bursts() {
        let run = small_run(SweepMode::DeadtimeRespected, 40, 60);
        let cells = run_sweep(&run).unwrap();
        let st = stats(&cells[0]);
        assert!(st.mean_burst_length >= 1.0 && st.mean_burst_length <= 3.0);
        assert!(st.qber.sifted_total > 0);
    }

    #[test]
    fn weak_eve_is_infeasible() {
        let mut run = small_run(SweepMode::DeadtimeRespected, 30, 50);
        run.system.eve.detector_efficiency = 0.01;
        let cells = run_sweep(&run).unwrap();
        match &cells[0].outcome {
            CellOutcome::Infeasible {
                target_rate,
                max_rate,
            } => {
                assert!(max_rate < target_rate);
            }
            CellOutcome::Computed(st) => panic!("expected infeasible, got {st:?}"),
        }
    }

    #[test]
    fn sweep_is_thread_count_invariant() {
        let run = small_run(SweepMode::DeadtimeExploit, 30, 40);
        let a = run_sweep_with_threads(&run, Some(1)).unwrap();
        let b = run_sweep_with_threads(&run, Some(4)).unwrap();
        let ta = render_results_tsv(&a);
        let tb = render_results_tsv(&b);
        assert_eq!(ta, tb);
        let (qa, qb) = (stats(&a[0]).qber.qber, stats(&b[0]).qber.qber);
        assert_eq!(qa.to_bits(), qb.to_bits());
    }

    #[test]
    fn export_writes_tsv_and_manifest() {
        let run = small_run(SweepMode::Baseline, 10, 1);
        let cells = run_sweep(&run).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (tsv, manifest) = export_results(&run, &cells, dir.path()).unwrap();
        let text = fs::read_to_string(&tsv).unwrap();
        assert_eq!(text.lines().count(), 1 + cells.len());
        assert!(text.starts_with("frequency_hz\t"));
        let reloaded = crate::config::load_run_config(&manifest).unwrap();
        assert_eq!(reloaded.sweep.base_seed, run.sweep.base_seed);
        let cells2 = run_sweep(&reloaded).unwrap();
        assert_eq!(render_results_tsv(&cells2), render_results_tsv(&cells));
    }
}
