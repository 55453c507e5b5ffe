//! On-disk artifacts of a run.
//!
//! ```text
//! out_dir/
//!   manifest.json            run metadata and the frame index
//!   config.toml              resolved configuration
//!   iterations.csv           one row per sweep
//!   diagnostics.json         energies and cross-checks (optional)
//!   frames/rho_{i}_{kkkk}.f64
//!   potentials/u_{i}_{kkkk}.f64
//! ```
//!
//! Frames and potentials are flat arrays of little-endian `f64` in grid
//! row-major order (last axis fastest). Population indices in file names
//! and the manifest are 1-based.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::EnergyBreakdown;
use crate::mmot::{MarginalSet, MessageMode, PotentialStack};
use crate::solver::{IterationRecord, ProblemSpec, SolveStatus};
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const ITERATIONS: &str = "iterations.csv";
pub const DIAGNOSTICS: &str = "diagnostics.json";
pub const PARTIAL: &str = "PARTIAL";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn encode_frame(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_frame(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Artifact(format!(
            "frame length {} is not a multiple of 8 bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn read_frame(path: &Path) -> Result<Vec<f64>> {
    decode_frame(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub points: Vec<usize>,
    pub extent: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    /// 1-based population index.
    pub population: usize,
    pub step: usize,
    pub time: f64,
    /// Path relative to the run directory.
    pub file: String,
    /// Byte offset of the first value; frames start at 0.
    pub offset: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub grid: GridMeta,
    pub populations: usize,
    pub steps: usize,
    pub horizon: f64,
    pub epsilon: f64,
    pub config_sha256: String,
    pub message_mode: MessageMode,
    pub status: SolveStatus,
    pub iterations: usize,
    pub frame_stride: usize,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
    pub frames: Vec<FrameEntry>,
    pub potentials: Vec<FrameEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
    }

    /// Checks every listed file against its checksum; returns the
    /// offending entries, one message per file.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        let mut problems = Vec::new();
        for entry in self.frames.iter().chain(&self.potentials) {
            let path = dir.join(&entry.file);
            match fs::read(&path) {
                Ok(bytes) if sha256_hex(&bytes) == entry.sha256 => {}
                Ok(_) => problems.push(format!("{}: checksum mismatch", entry.file)),
                Err(e) => problems.push(format!("{}: {e}", entry.file)),
            }
        }
        problems
    }
}

/// Time indices written for a stride: every `stride`-th plus the last.
pub fn frame_steps(steps: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut ks: Vec<usize> = (0..=steps).step_by(stride).collect();
    if ks.last() != Some(&steps) {
        ks.push(steps);
    }
    ks
}

pub fn frame_name(i: usize, k: usize) -> String {
    format!("frames/rho_{}_{:04}.f64", i + 1, k)
}

pub fn potential_name(i: usize, k: usize) -> String {
    format!("potentials/u_{}_{:04}.f64", i + 1, k)
}

/// Everything a run leaves on disk.
pub struct RunArtifacts<'a> {
    pub problem: &'a ProblemSpec<f64>,
    pub config_text: &'a str,
    pub mode: MessageMode,
    pub status: SolveStatus,
    pub iterations: &'a [IterationRecord<f64>],
    pub marginals: &'a MarginalSet<f64>,
    pub potentials: &'a PotentialStack<f64>,
    pub frame_stride: usize,
    pub diagnostics: Option<&'a DiagnosticsReport>,
}

/// Writes all artifacts into `dir`; on failure leaves a `PARTIAL` marker
/// holding the error message.
pub fn write_run(dir: &Path, run: &RunArtifacts<'_>) -> Result<Manifest> {
    let result = write_run_inner(dir, run);
    if let Err(e) = &result {
        let _ = fs::create_dir_all(dir);
        let _ = fs::write(dir.join(PARTIAL), format!("{e}\n"));
    }
    result
}

fn write_run_inner(dir: &Path, run: &RunArtifacts<'_>) -> Result<Manifest> {
    for sub in [dir.to_path_buf(), dir.join("frames"), dir.join("potentials")] {
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    }
    let stale = dir.join(PARTIAL);
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    let p = run.problem;
    let dt = p.dt();
    let entry = |i: usize, k: usize, file: String, values: &[f64]| -> Result<FrameEntry> {
        let bytes = encode_frame(values);
        write_file(&dir.join(&file), &bytes)?;
        Ok(FrameEntry {
            population: i + 1,
            step: k,
            time: dt * k as f64,
            file,
            offset: 0,
            sha256: sha256_hex(&bytes),
        })
    };
    let mut frames = Vec::new();
    let mut potentials = Vec::new();
    for i in 0..p.populations() {
        for k in frame_steps(p.steps, run.frame_stride) {
            frames.push(entry(i, k, frame_name(i, k), run.marginals.get(i, k)?)?);
        }
        for k in 0..=p.steps {
            potentials.push(entry(i, k, potential_name(i, k), run.potentials.get(i, k).values())?);
        }
    }
    write_file(&dir.join(CONFIG), run.config_text.as_bytes())?;
    write_file(&dir.join(ITERATIONS), iteration_csv(p.populations(), run.iterations).as_bytes())?;
    if let Some(d) = run.diagnostics {
        let text = serde_json::to_string_pretty(d).map_err(|e| Error::Artifact(e.to_string()))?;
        write_file(&dir.join(DIAGNOSTICS), text.as_bytes())?;
    }
    let manifest = Manifest {
        version: VERSION.to_string(),
        grid: GridMeta {
            points: p.grid.points().to_vec(),
            extent: p.grid.extent().iter().map(|&(lo, hi)| [lo, hi]).collect(),
        },
        populations: p.populations(),
        steps: p.steps,
        horizon: p.horizon,
        epsilon: p.epsilon,
        config_sha256: sha256_hex(run.config_text.as_bytes()),
        message_mode: run.mode,
        status: run.status,
        iterations: run.iterations.len(),
        frame_stride: run.frame_stride,
        dtype: "f64".into(),
        byte_order: "little".into(),
        layout: "row-major, last axis fastest".into(),
        frames,
        potentials,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Artifact(e.to_string()))?;
    let path = dir.join(MANIFEST);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// One CSV row per sweep.
pub fn iteration_csv(populations: usize, iterations: &[IterationRecord<f64>]) -> String {
    let mut out = String::from("index");
    for i in 1..=populations {
        let _ = write!(out, ",marginal_error_{i}");
    }
    out.push_str(",max_potential_change,convergence_error");
    for i in 1..=populations {
        let _ = write!(out, ",entropic_{i}");
    }
    out.push_str(",interaction,final_cost,total,wall_time\n");
    for r in iterations {
        let _ = write!(out, "{}", r.index);
        for e in &r.marginal_errors {
            let _ = write!(out, ",{e:e}");
        }
        let _ = write!(out, ",{:e},{:e}", r.max_potential_change, r.convergence_error);
        match &r.energies {
            Some(en) => {
                for s in &en.entropic {
                    let _ = write!(out, ",{s:e}");
                }
                let _ = write!(out, ",{:e},{:e},{:e}", en.interaction, en.final_cost, en.total);
            }
            None => {
                out.push_str(&",".repeat(populations + 3));
            }
        }
        let _ = writeln!(out, ",{:.6}", r.wall_time);
    }
    out
}

/// Per-population figure metrics at the final time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationReport {
    pub population: usize,
    pub barycenter_final: Vec<f64>,
    pub second_moment_final: f64,
    pub fp_residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub status: SolveStatus,
    pub energies: EnergyBreakdown<f64>,
    pub populations: Vec<PopulationReport>,
    /// `max_k` separation at the interaction radius for every pair `i < j`
    /// (1-based), when the kernel has one.
    pub separation: Vec<SeparationEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationEntry {
    pub i: usize,
    pub j: usize,
    pub radius: f64,
    pub max: f64,
}

impl DiagnosticsReport {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(DIAGNOSTICS);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
    }
}

/// Reads the potentials listed in a manifest.
pub fn read_potentials(dir: &Path, manifest: &Manifest) -> Result<PotentialStack<f64>> {
    let mut u = vec![vec![None; manifest.steps + 1]; manifest.populations];
    let cells: usize = manifest.grid.points.iter().product();
    for entry in &manifest.potentials {
        let values = read_frame(&dir.join(&entry.file))?;
        if values.len() != cells {
            return Err(Error::Artifact(format!("{}: expected {cells} values, found {}", entry.file, values.len())));
        }
        let slot = u
            .get_mut(entry.population.wrapping_sub(1))
            .and_then(|p| p.get_mut(entry.step))
            .ok_or_else(|| Error::Artifact(format!("{}: index out of range", entry.file)))?;
        *slot = Some(crate::grid::ScalarField::new(values)?);
    }
    let fields = u
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.into_iter()
                .enumerate()
                .map(|(k, f)| f.ok_or_else(|| Error::Artifact(format!("missing {}", potential_name(i, k)))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PotentialStack::from_fields(fields))
}
