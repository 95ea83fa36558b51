//! Dataset manifest: one header line with the sweep settings, then one
//! record per sample.
//!
//! ```text
//! # spinodal manifest v1 samples=2 seed=7 grid=16x16 dx=1 dy=1 dt=0.01 ...
//! 0 0.61 1.37 0.42 1234 ok
//! 1 0.33 0.95 0.71 5678 failed numerical blowup at step 12: ...
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so every value
//! parses back to the same `f64`.

use std::fmt::Write as _;

use spinodal::phasefield::{SampleRecord, SampleStatus, SweepSpec};

use crate::error::{CliError, Result};

pub const MANIFEST_HEADER: &str = "# spinodal manifest v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub sample_id: usize,
    pub x0: f64,
    pub mobility: f64,
    pub kappa: f64,
    pub seed: u64,
    /// `None` when the simulation succeeded.
    pub failure: Option<String>,
}

impl ManifestRecord {
    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }

    pub fn params(&self) -> [f64; 3] {
        [self.x0, self.mobility, self.kappa]
    }
}

impl From<&SampleRecord> for ManifestRecord {
    fn from(r: &SampleRecord) -> Self {
        ManifestRecord {
            sample_id: r.sample_id,
            x0: r.params.x0,
            mobility: r.params.mobility,
            kappa: r.params.kappa,
            seed: r.params.seed,
            failure: match &r.status {
                SampleStatus::Ok => None,
                SampleStatus::Failed(m) => Some(m.replace('\n', " ")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// `key=value` settings from the header line, in order.
    pub settings: Vec<(String, String)>,
    pub records: Vec<ManifestRecord>,
}

/// Header settings describing a sweep; resuming requires an exact match.
pub fn sweep_settings(sweep: &SweepSpec) -> Vec<(String, String)> {
    let n = &sweep.numerics;
    let g = &sweep.grid;
    vec![
        ("samples".into(), sweep.n_samples.to_string()),
        ("seed".into(), sweep.base_seed.to_string()),
        ("grid".into(), format!("{}x{}", g.nx, g.ny)),
        ("dx".into(), format!("{:?}", g.dx)),
        ("dy".into(), format!("{:?}", g.dy)),
        ("dt".into(), format!("{:?}", n.dt)),
        ("steps".into(), n.n_steps.to_string()),
        ("stride".into(), n.snapshot_stride.to_string()),
        ("noise".into(), format!("{:?}", n.noise_amp)),
        ("barrier".into(), format!("{:?}", n.barrier_a)),
        ("potential".into(), n.potential_form.name().to_string()),
        ("x0".into(), format!("{:?}:{:?}", sweep.x0.min, sweep.x0.max)),
        ("mobility".into(), format!("{:?}:{:?}", sweep.mobility.min, sweep.mobility.max)),
        ("kappa".into(), format!("{:?}:{:?}", sweep.kappa.min, sweep.kappa.max)),
    ]
}

impl Manifest {
    pub fn emit(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        for (k, v) in &self.settings {
            write!(out, " {k}={v}").unwrap();
        }
        out.push('\n');
        for r in &self.records {
            write!(
                out,
                "{} {:?} {:?} {:?} {} ",
                r.sample_id, r.x0, r.mobility, r.kappa, r.seed
            )
            .unwrap();
            match &r.failure {
                None => out.push_str("ok\n"),
                Some(m) => writeln!(out, "failed {m}").unwrap(),
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, m: &str| CliError::Format(format!("manifest line {}: {m}", line + 1));
        let mut lines = text.lines().enumerate();
        let header = match lines.next() {
            Some((_, h)) if h.starts_with(MANIFEST_HEADER) => h,
            _ => return Err(bad(0, "missing manifest header")),
        };
        let settings = header[MANIFEST_HEADER.len()..]
            .split_whitespace()
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| bad(0, "header settings must be key=value"))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut records = Vec::new();
        for (no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(7, ' ');
            let mut field = |name: &str| parts.next().ok_or_else(|| bad(no, &format!("missing {name}")));
            let sample_id: usize = field("sample_id")?.parse().map_err(|_| bad(no, "bad sample_id"))?;
            let x0: f64 = field("x0")?.parse().map_err(|_| bad(no, "bad x0"))?;
            let mobility: f64 = field("mobility")?.parse().map_err(|_| bad(no, "bad mobility"))?;
            let kappa: f64 = field("kappa")?.parse().map_err(|_| bad(no, "bad kappa"))?;
            let seed: u64 = field("seed")?.parse().map_err(|_| bad(no, "bad seed"))?;
            let failure = match field("status")? {
                "ok" => None,
                "failed" => Some(parts.next().unwrap_or("").to_string()),
                other => return Err(bad(no, &format!("unknown status '{other}'"))),
            };
            if sample_id != records.len() {
                return Err(bad(no, "sample ids must be dense and ordered from 0"));
            }
            records.push(ManifestRecord {
                sample_id,
                x0,
                mobility,
                kappa,
                seed,
                failure,
            });
        }
        Ok(Manifest { settings, records })
    }

    pub fn setting(&self, key: &str) -> Option<&str> {
        self.settings
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Records of successful samples, in container row order.
    pub fn ok_records(&self) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.is_ok()).collect()
    }
}
