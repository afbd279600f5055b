//! On-disk formats: detector parameter files (TOML), threshold tables, sweep
//! configs, and run manifests.
//!
//! A raw sweep config references detector files by path; a manifest embeds
//! every resolved parameter plus the base seed, so re-running it reproduces
//! the sweep bit for bit with no external files. `load_run_config` accepts
//! either and tells them apart by the `[manifest]` table.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::{DeadtimeMode, DetectorParams, GammaTable, TrapLevel};
use crate::error::{Error, Result};
use crate::eve::EveParams;
use crate::harness::{SweepMode, SweepSpec, SystemConfig};
use crate::optics::{ThresholdCurve, ThresholdTable};
use crate::protocol::{DoubleClickPolicy, FrameConfig};

// ------------------------------------------------------------ detector files

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectorFile {
    name: String,
    dark_prob: f64,
    quantum_efficiency: f64,
    dead_time_us: f64,
    deadtime_mode: DeadtimeMode,
    deadtime_detection_prob: f64,
    gamma: GammaTable,
    traps: Vec<TrapLevel>,
}

/// Parse a detector TOML file; the linear-mode threshold curve is supplied
/// separately because one table file characterizes both detectors.
pub fn parse_detector(
    text: &str,
    origin: &Path,
    thresholds: ThresholdCurve,
) -> Result<DetectorParams> {
    let file: DetectorFile =
        toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
    let n = file.traps.len();
    let traps: [TrapLevel; 2] = file
        .traps
        .try_into()
        .map_err(|_| Error::parse(origin, format!("expected exactly 2 trap levels, got {n}")))?;
    let params = DetectorParams {
        name: file.name,
        dark_prob: file.dark_prob,
        traps,
        gamma: file.gamma,
        quantum_efficiency: file.quantum_efficiency,
        dead_time_us: file.dead_time_us,
        deadtime_mode: file.deadtime_mode,
        deadtime_detection_prob: file.deadtime_detection_prob,
        thresholds,
    };
    params.validate()?;
    Ok(params)
}

pub fn load_detector(path: &Path, thresholds: ThresholdCurve) -> Result<DetectorParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detector(&text, path, thresholds)
}

/// Parameter sets compiled into the binary from `data/`, so every command
/// works without locating files first. The files remain the source of truth.
pub mod presets {
    use super::*;

    const D0_CFG: &str = include_str!("../../../data/clavis2_d0.cfg");
    const D1_CFG: &str = include_str!("../../../data/clavis2_d1.cfg");
    const THRESHOLDS: &str = include_str!("../../../data/thresholds.dat");

    pub fn thresholds() -> ThresholdTable {
        ThresholdTable::parse(THRESHOLDS, Path::new("data/thresholds.dat"))
            .expect("bundled threshold table parses")
    }

    pub fn clavis2_d0_with(curve: ThresholdCurve) -> DetectorParams {
        parse_detector(D0_CFG, Path::new("data/clavis2_d0.cfg"), curve)
            .expect("bundled d0 config parses")
    }

    pub fn clavis2_d1_with(curve: ThresholdCurve) -> DetectorParams {
        parse_detector(D1_CFG, Path::new("data/clavis2_d1.cfg"), curve)
            .expect("bundled d1 config parses")
    }

    pub fn clavis2_d0() -> DetectorParams {
        clavis2_d0_with(thresholds().d0)
    }

    pub fn clavis2_d1() -> DetectorParams {
        clavis2_d1_with(thresholds().d1)
    }
}

// --------------------------------------------------------------- sweep files

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    system: SystemSection,
    #[serde(default)]
    eve: EveSection,
    sweep: SweepSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    /// Detector / threshold files, relative to this config file. Omitted
    /// entries fall back to the bundled presets.
    d0: Option<PathBuf>,
    d1: Option<PathBuf>,
    thresholds: Option<PathBuf>,
    #[serde(default = "defaults::t_bob")]
    t_bob: f64,
    #[serde(default = "defaults::double_click")]
    double_click: DoubleClickPolicy,
    #[serde(default = "defaults::gates_per_frame")]
    gates_per_frame: u32,
    #[serde(default = "defaults::interframe_gap_ns")]
    interframe_gap_ns: i64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EveSection {
    detector_efficiency: f64,
    dark_prob: f64,
    memory_depth: u32,
    peak_power_uw: f64,
    pulse_delay_ns: f64,
}

impl Default for EveSection {
    fn default() -> Self {
        let e = EveParams::perfect();
        EveSection {
            detector_efficiency: e.detector_efficiency,
            dark_prob: e.dark_prob,
            memory_depth: e.memory_depth,
            peak_power_uw: e.peak_power_uw,
            pulse_delay_ns: e.pulse_delay_ns,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    strategy: SweepMode,
    #[serde(default = "defaults::frequencies_mhz")]
    frequencies_mhz: Vec<f64>,
    #[serde(default = "defaults::transmittances")]
    transmittances: Vec<f64>,
    #[serde(default = "defaults::frames_per_cell")]
    frames_per_cell: u32,
    #[serde(default = "defaults::calibration_frames")]
    calibration_frames: u32,
    #[serde(default = "defaults::base_seed")]
    base_seed: u64,
}

mod defaults {
    use super::DoubleClickPolicy;

    pub fn t_bob() -> f64 {
        0.412
    }
    pub fn double_click() -> DoubleClickPolicy {
        DoubleClickPolicy::RandomBit
    }
    pub fn gates_per_frame() -> u32 {
        super::FrameConfig::DEFAULT_GATES
    }
    pub fn interframe_gap_ns() -> i64 {
        super::FrameConfig::DEFAULT_GAP_NS
    }
    pub fn frequencies_mhz() -> Vec<f64> {
        vec![0.2, 0.5, 1.0, 2.0, 5.0, 10.0]
    }
    pub fn transmittances() -> Vec<f64> {
        (1..=20).map(|i| i as f64 * 0.05).collect()
    }
    pub fn frames_per_cell() -> u32 {
        10_000
    }
    pub fn calibration_frames() -> u32 {
        1_000
    }
    pub fn base_seed() -> u64 {
        1
    }
}

/// Everything a sweep needs, fully resolved.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub sweep: SweepSpec,
    pub system: SystemConfig,
}

fn resolve_path(dir: Option<&Path>, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.map(|d| d.join(p)).unwrap_or_else(|| p.to_path_buf())
    }
}

fn resolve(raw: SweepFile, dir: Option<&Path>) -> Result<RunConfig> {
    let table = match &raw.system.thresholds {
        Some(p) => ThresholdTable::load(&resolve_path(dir, p))?,
        None => presets::thresholds(),
    };
    let d0 = match &raw.system.d0 {
        Some(p) => load_detector(&resolve_path(dir, p), table.d0.clone())?,
        None => presets::clavis2_d0_with(table.d0.clone()),
    };
    let d1 = match &raw.system.d1 {
        Some(p) => load_detector(&resolve_path(dir, p), table.d1.clone())?,
        None => presets::clavis2_d1_with(table.d1.clone()),
    };
    let eve = EveParams {
        detector_efficiency: raw.eve.detector_efficiency,
        dark_prob: raw.eve.dark_prob,
        memory_depth: raw.eve.memory_depth,
        peak_power_uw: raw.eve.peak_power_uw,
        pulse_delay_ns: raw.eve.pulse_delay_ns,
    };
    eve.validate()?;
    eve.validate_against_thresholds(&table)?;
    let sweep = SweepSpec {
        frequencies_hz: raw.sweep.frequencies_mhz.iter().map(|f| f * 1e6).collect(),
        transmittances: raw.sweep.transmittances,
        frames_per_cell: raw.sweep.frames_per_cell,
        calibration_frames: raw.sweep.calibration_frames,
        mode: raw.sweep.strategy,
        base_seed: raw.sweep.base_seed,
    };
    sweep.validate()?;
    let system = SystemConfig {
        d0,
        d1,
        t_bob: raw.system.t_bob,
        double_click: raw.system.double_click,
        gates_per_frame: raw.system.gates_per_frame,
        interframe_gap_ns: raw.system.interframe_gap_ns,
        eve,
    };
    system.validate()?;
    Ok(RunConfig { sweep, system })
}

// ------------------------------------------------------------------ manifest

pub const MANIFEST_KIND: &str = "aftergate-sweep";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub kind: String,
    pub code_version: String,
}

/// A frozen run: resolved parameters plus provenance header.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest: ManifestMeta,
    pub sweep: SweepSpec,
    pub system: SystemConfig,
}

impl Manifest {
    pub fn new(run: &RunConfig) -> Self {
        Manifest {
            manifest: ManifestMeta {
                kind: MANIFEST_KIND.to_string(),
                code_version: env!("CARGO_PKG_VERSION").to_string(),
            },
            sweep: run.sweep.clone(),
            system: run.system.clone(),
        }
    }

    pub fn into_run_config(self) -> RunConfig {
        RunConfig {
            sweep: self.sweep,
            system: self.system,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("manifest serialization failed: {e}")))
    }
}

/// Load either a raw sweep config or a previously written manifest.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: toml::Value =
        toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    if value.get("manifest").is_some() {
        let manifest: Manifest = value
            .try_into()
            .map_err(|e| Error::parse(path, e.to_string()))?;
        if manifest.manifest.kind != MANIFEST_KIND {
            return Err(Error::parse(
                path,
                format!(
                    "unknown manifest kind {:?} (expected {MANIFEST_KIND:?})",
                    manifest.manifest.kind
                ),
            ));
        }
        let run = manifest.into_run_config();
        run.sweep.validate()?;
        run.system.validate()?;
        Ok(run)
    } else {
        let raw: SweepFile = value
            .try_into()
            .map_err(|e| Error::parse(path, e.to_string()))?;
        resolve(raw, path.parent())
    }
}
