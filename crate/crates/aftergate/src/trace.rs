//! Click trace files: one TSV row per registered click, carrying enough
//! context (Alice's choices, the slot decision) to audit sifting and to run
//! the dead-time spacing monitor offline.

use std::io::{self, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::protocol::{AliceFrame, ClickOrigin, FrameOutcome};

pub const TRACE_HEADER: &str =
    "# frame\tgate\ttime_ns\tdetector\tbob_basis\talice_basis\talice_bit\tdecoded_bit\tflags";

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub frame: u64,
    pub gate: u32,
    pub time_ns: i64,
    pub detector: u8,
    pub bob_basis: u8,
    pub alice_basis: u8,
    pub alice_bit: u8,
    /// The slot's decoded bit; None when the slot was discarded (double
    /// click under the discard policy).
    pub decoded_bit: Option<u8>,
    pub flags: Vec<String>,
}

impl TraceRow {
    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }
}

/// Append one frame's clicks to a trace.
pub fn write_frame<W: Write>(
    w: &mut W,
    frame_index: u64,
    outcome: &FrameOutcome,
    alice: &AliceFrame,
) -> io::Result<()> {
    for c in &outcome.clicks {
        let g = c.gate as usize;
        let decision = outcome
            .decisions
            .binary_search_by_key(&c.gate, |d| d.gate)
            .ok()
            .map(|i| &outcome.decisions[i]);
        let mut flags: Vec<&str> = vec![match c.origin {
            ClickOrigin::Gate => "gate",
            ClickOrigin::Bright => "bright",
        }];
        let sifted = alice.bases[g] == c.bob_basis;
        if sifted {
            flags.push("sifted");
        }
        if let Some(d) = decision {
            if d.double {
                flags.push("double");
            }
            if sifted && d.bit != alice.bits[g] {
                flags.push("error");
            }
        }
        let decoded = decision
            .map(|d| d.bit.to_string())
            .unwrap_or_else(|| "-".to_string());
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            frame_index,
            c.gate,
            c.time_ns,
            c.detector.bit(),
            c.bob_basis,
            alice.bases[g],
            alice.bits[g],
            decoded,
            flags.join(",")
        )?;
    }
    Ok(())
}

/// Write a complete trace (header + frames).
pub fn write_trace<W: Write>(
    w: &mut W,
    frames: &[(FrameOutcome, AliceFrame)],
) -> io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for (i, (out, alice)) in frames.iter().enumerate() {
        write_frame(w, i as u64, out, alice)?;
    }
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| Error::parse(path, format!("line {}: {msg}", lineno + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 9 {
            return Err(err(&format!("expected 9 columns, got {}", cols.len())));
        }
        let parse_u8 = |s: &str, what: &str| -> Result<u8> {
            s.parse().map_err(|_| err(&format!("bad {what} {s:?}")))
        };
        rows.push(TraceRow {
            frame: cols[0].parse().map_err(|_| err("bad frame index"))?,
            gate: cols[1].parse().map_err(|_| err("bad gate index"))?,
            time_ns: cols[2].parse().map_err(|_| err("bad time"))?,
            detector: parse_u8(cols[3], "detector")?,
            bob_basis: parse_u8(cols[4], "bob_basis")?,
            alice_basis: parse_u8(cols[5], "alice_basis")?,
            alice_bit: parse_u8(cols[6], "alice_bit")?,
            decoded_bit: match cols[7] {
                "-" => None,
                s => Some(parse_u8(s, "decoded_bit")?),
            },
            flags: cols[8].split(',').map(str::to_string).collect(),
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug)]
pub struct TraceAnomaly {
    pub frame: u64,
    pub first_time_ns: i64,
    pub second_time_ns: i64,
    pub gap_ns: i64,
}

#[derive(Clone, Debug, Default)]
pub struct TraceScan {
    pub frames: u64,
    pub clicks: u64,
    pub frames_with_anomalies: u64,
    pub anomalies: Vec<TraceAnomaly>,
}

/// Dead-time spacing scan over a trace. Click pairs within one frame closer
/// than the dead time are flagged; zero gaps are simultaneous double clicks
/// and pass. Frames never overlap in time, so cross-frame pairs are ignored.
pub fn scan_trace(rows: &[TraceRow], dead_time_us: f64) -> TraceScan {
    let dead_ns = (dead_time_us * 1000.0).round() as i64;
    let mut scan = TraceScan {
        clicks: rows.len() as u64,
        ..Default::default()
    };
    let mut i = 0usize;
    while i < rows.len() {
        let frame = rows[i].frame;
        let mut j = i;
        let mut frame_anomalies = 0u64;
        while j + 1 < rows.len() && rows[j + 1].frame == frame {
            let gap = rows[j + 1].time_ns - rows[j].time_ns;
            if gap > 0 && gap < dead_ns {
                scan.anomalies.push(TraceAnomaly {
                    frame,
                    first_time_ns: rows[j].time_ns,
                    second_time_ns: rows[j + 1].time_ns,
                    gap_ns: gap,
                });
                frame_anomalies += 1;
            }
            j += 1;
        }
        scan.frames += 1;
        scan.frames_with_anomalies += (frame_anomalies > 0) as u64;
        i = j + 1;
    }
    scan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::presets;
    use crate::eve::{run_attack_frame, EveParams, Strategy};
    use crate::protocol::{run_baseline_frame, ChannelConfig, DoubleClickPolicy, FrameConfig, Receiver};
    use crate::rng::SeedKey;

    fn receiver() -> Receiver {
        Receiver::new(
            presets::clavis2_d0(),
            presets::clavis2_d1(),
            0.412,
            DoubleClickPolicy::RandomBit,
        )
        .unwrap()
    }

    fn fc() -> FrameConfig {
        FrameConfig {
            gates_per_frame: 1075,
            gate_period_ns: 200,
            interframe_gap_ns: 50_000,
        }
    }

    fn baseline_frames(n: u64) -> Vec<(FrameOutcome, AliceFrame)> {
        let mut rx = receiver();
        let ch = ChannelConfig::coupled(1.0);
        let key = SeedKey::new(6);
        (0..n)
            .map(|i| {
                let mut rng = key.derive(i).rng();
                run_baseline_frame(&fc(), &ch, &mut rx, &mut rng).unwrap()
            })
            .collect()
    }

    #[test]
    fn trace_round_trips_through_text() {
        let frames = baseline_frames(5);
        let mut buf = Vec::new();
        write_trace(&mut buf, &frames).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.tsv");
        std::fs::write(&path, &buf).unwrap();
        let rows = read_trace(&path).unwrap();
        let clicks: usize = frames.iter().map(|(o, _)| o.clicks.len()).sum();
        assert_eq!(rows.len(), clicks);
        assert!(rows.iter().all(|r| r.has_flag("gate")));
        assert!(rows.iter().any(|r| r.has_flag("sifted")));
        // every row's alice fields agree with the frame record
        for r in &rows {
            let (_, alice) = &frames[r.frame as usize];
            assert_eq!(r.alice_bit, alice.bits[r.gate as usize]);
            assert_eq!(r.alice_basis, alice.bases[r.gate as usize]);
        }
    }

    #[test]
    fn baseline_trace_scans_clean() {
        let frames = baseline_frames(20);
        let mut buf = Vec::new();
        write_trace(&mut buf, &frames).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.tsv");
        std::fs::write(&path, &buf).unwrap();
        let scan = scan_trace(&read_trace(&path).unwrap(), 10.0);
        assert_eq!(scan.frames, 20);
        assert!(scan.clicks > 0);
        assert!(scan.anomalies.is_empty());
        assert_eq!(scan.frames_with_anomalies, 0);
    }

    #[test]
    fn exploit_trace_shows_anomalies() {
        let mut rx = receiver();
        let ch = ChannelConfig::coupled(1.0);
        let eve = EveParams::perfect();
        let key = SeedKey::new(12);
        let frames: Vec<(FrameOutcome, AliceFrame)> = (0..5u64)
            .map(|i| {
                let (out, alice, _) = run_attack_frame(
                    &fc(),
                    &ch,
                    &eve,
                    Strategy::DeadtimeExploit,
                    1075,
                    &mut rx,
                    key.derive(i),
                )
                .unwrap();
                (out, alice)
            })
            .collect();
        let mut buf = Vec::new();
        write_trace(&mut buf, &frames).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.tsv");
        std::fs::write(&path, &buf).unwrap();
        let scan = scan_trace(&read_trace(&path).unwrap(), 10.0);
        assert_eq!(scan.frames, 5);
        assert_eq!(scan.frames_with_anomalies, 5);
        assert!(scan.anomalies.len() >= 5);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "0\t1\t200\n").unwrap();
        assert!(read_trace(&path).is_err());
        std::fs::write(&path, "0\t1\t200\t0\t0\t0\t0\tx\tgate\n").unwrap();
        assert!(read_trace(&path).is_err());
    }
}
