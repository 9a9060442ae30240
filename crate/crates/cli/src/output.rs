//! Result files and the manifest that lists them.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uav_isac_core::channel::beampattern_map_over;
use uav_isac_core::static_design::StaticSolution;
use uav_isac_core::{BeamformerSet, ComplexVector, HermitianMatrix, Point, RateReport, Rect, Scenario};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of `config` serialized as compact JSON.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub exit_code: i32,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_hex(config.to_string().as_bytes())
}

/// Output directory of one run. Files are recorded as they are written and
/// listed in the manifest by [`OutputDir::finish`].
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    /// Refuses a non-empty directory unless `force` is set, in which case the
    /// files of the previous run (as listed in its manifest) are removed.
    pub fn create(root: &Path, force: bool) -> Result<Self> {
        if root.exists() {
            let listed = fs::read_dir(root).with_context(|| format!("reading {}", root.display()))?;
            if listed.count() > 0 {
                if !force {
                    bail!("output directory {} is not empty (use --force to replace a previous run)", root.display());
                }
                clear_previous_run(root)?;
            }
        }
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if self.files.iter().any(|f| f.path == name) {
            bail!("output file {name} written twice");
        }
        let path = self.root.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    /// Writes a header line even when there are no rows.
    pub fn write_csv<R: Serialize + Default>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut empty = true;
        for r in rows {
            w.serialize(r)?;
            empty = false;
        }
        let mut bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        if empty {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.serialize(R::default())?;
            let full = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
            let end = full.iter().position(|&b| b == b'\n').map_or(full.len(), |i| i + 1);
            bytes = full[..end].to_vec();
        }
        self.write_bytes(name, &bytes)
    }

    pub fn finish(self, command: &str, config: serde_json::Value, exit_code: i32) -> Result<()> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: config_hash(&config),
            config,
            exit_code,
            files: self.files,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let path = self.root.join(MANIFEST);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    }
}

fn clear_previous_run(root: &Path) -> Result<()> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| {
        format!("{} has files but no {MANIFEST}; refusing to overwrite", root.display())
    })?;
    let old: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    for f in &old.files {
        let p = root.join(&f.path);
        if p.exists() {
            fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
        }
    }
    fs::remove_file(&path)?;
    if fs::read_dir(root)?.count() > 0 {
        bail!("{} holds files that no manifest lists; refusing to overwrite", root.display());
    }
    Ok(())
}

/// Complex numbers as `[re, im]`.
pub type Pair = [f64; 2];

#[derive(Debug, Serialize)]
pub struct BeamsOut {
    pub total_power: f64,
    pub info_beams: Vec<Vec<Pair>>,
    /// Full sensing covariance, row by row.
    pub sensing_cov: Vec<Vec<Pair>>,
}

fn vector(v: &ComplexVector) -> Vec<Pair> {
    v.as_slice().iter().map(|z| [z.re, z.im]).collect()
}

fn matrix(h: &HermitianMatrix) -> Vec<Vec<Pair>> {
    let n = h.dim();
    (0..n)
        .map(|p| {
            (0..n)
                .map(|q| {
                    let z = h.get(p, q);
                    [z.re, z.im]
                })
                .collect()
        })
        .collect()
}

impl BeamsOut {
    pub fn new(b: &BeamformerSet) -> Self {
        Self {
            total_power: b.total_power(),
            info_beams: b.info_beams.iter().map(vector).collect(),
            sensing_cov: matrix(&b.sensing_cov),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RatesOut {
    pub weighted_sum: f64,
    pub per_user_rate: Vec<f64>,
    pub per_user_sinr: Vec<f64>,
}

impl RatesOut {
    pub fn new(r: &RateReport) -> Self {
        Self {
            weighted_sum: r.weighted_sum,
            per_user_rate: r.per_user_rate.clone(),
            per_user_sinr: r.per_user_sinr.clone(),
        }
    }
}

#[derive(Debug, Serialize, Default)]
pub struct ScaStepOut {
    pub iteration: usize,
    pub bound: f64,
    pub objective: f64,
}

#[derive(Debug, Serialize)]
pub struct StaticOut {
    pub benchmark: String,
    pub location: Pair,
    pub objective: f64,
    pub rates: RatesOut,
    pub beams: BeamsOut,
    pub sca_trace: Vec<ScaStepOut>,
}

impl StaticOut {
    pub fn new(benchmark: &str, s: &StaticSolution) -> Self {
        Self {
            benchmark: benchmark.to_string(),
            location: [s.location.x, s.location.y],
            objective: s.objective,
            rates: RatesOut::new(&s.rates),
            beams: BeamsOut::new(&s.beams),
            sca_trace: sca_trace(s),
        }
    }
}

pub fn sca_trace(s: &StaticSolution) -> Vec<ScaStepOut> {
    s.trace
        .iter()
        .enumerate()
        .map(|(i, t)| ScaStepOut {
            iteration: i + 1,
            bound: t.bound,
            objective: t.objective,
        })
        .collect()
}

/// One row of a beampattern map file. Grid samples carry gains; user rows
/// carry the rate the user achieves; the UAV and sensing rows mark positions.
#[derive(Debug, Serialize, Default)]
pub struct MapRow {
    pub kind: &'static str,
    pub index: Option<usize>,
    pub x: f64,
    pub y: f64,
    pub tx_gain: Option<f64>,
    pub rx_gain: Option<f64>,
    pub rate: Option<f64>,
}

pub fn map_rows(q: Point, beams: &BeamformerSet, rates: &RateReport, scenario: &Scenario, area: &Rect, resolution: f64) -> Vec<MapRow> {
    let map = beampattern_map_over(q, beams, &scenario.uav, area, resolution);
    let mut rows = vec![MapRow {
        kind: "uav",
        index: None,
        x: q.x,
        y: q.y,
        tx_gain: None,
        rx_gain: None,
        rate: None,
    }];
    rows.extend(scenario.users.iter().enumerate().map(|(k, u)| MapRow {
        kind: "user",
        index: Some(k),
        x: u.position.x,
        y: u.position.y,
        tx_gain: None,
        rx_gain: None,
        rate: Some(rates.per_user_rate[k]),
    }));
    rows.extend(scenario.sensing.points.iter().enumerate().map(|(j, p)| MapRow {
        kind: "sensing",
        index: Some(j),
        x: p.x,
        y: p.y,
        tx_gain: Some(uav_isac_core::channel::beampattern_gain(q, *p, beams, &scenario.uav)),
        rx_gain: None,
        rate: None,
    }));
    rows.extend(map.samples.iter().map(|s| MapRow {
        kind: "sample",
        index: None,
        x: s.position.x,
        y: s.position.y,
        tx_gain: Some(s.tx_gain),
        rx_gain: Some(s.rx_gain),
        rate: None,
    }));
    rows
}

#[derive(Debug, Serialize, Default)]
pub struct PointRow {
    pub n: usize,
    pub x: f64,
    pub y: f64,
}
