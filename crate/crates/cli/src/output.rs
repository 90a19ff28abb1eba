//! Deterministic artifact writing and the reproducibility manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use bsch_core::stepper::{Sample, StepRecord};

/// Bumped whenever a CSV layout changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const SAMPLE_COLUMNS: &[&str] = &[
    "t",
    "step",
    "energy",
    "energy_bulk_dirichlet",
    "energy_bulk_potential",
    "energy_surface_dirichlet",
    "energy_surface_potential",
    "energy_k_penalty",
    "mass_1",
    "mass_2",
    "chemical_norm",
    "rate_dual_norm",
    "velocity_norm",
    "margin",
    "h1_norm",
];

pub const STEP_COLUMNS: &[&str] =
    &["t", "energy", "dissipation", "work", "velocity_norm_sq", "newton_iterations", "upwinded", "margin"];

pub const PULLBACK_COLUMNS: &[&str] = &["offset", "tau", "member", "h1_sq"];

pub const CERTIFY_COLUMNS: &[&str] = &["id", "name", "passed", "measure", "value", "rule", "ok"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of every CSV layout, so that the manifest pins the column schema.
pub fn column_schema_hash() -> String {
    let mut text = format!("v{CSV_SCHEMA_VERSION}\n");
    for cols in [SAMPLE_COLUMNS, STEP_COLUMNS, PULLBACK_COLUMNS, CERTIFY_COLUMNS] {
        text += &cols.join(",");
        text.push('\n');
    }
    sha256_hex(text.as_bytes())
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    if v == 0.0 || (1e-4..1e6).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub struct Artifacts {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), files: BTreeMap::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        self.write(name, &bytes)
    }

    pub fn samples(&mut self, name: &str, samples: &[Sample]) -> Result<()> {
        let rows = samples.iter().map(|s| {
            let m = s.mass.components();
            let e = &s.energy;
            vec![
                num(s.t),
                s.step.to_string(),
                num(e.total),
                num(e.bulk_dirichlet),
                num(e.bulk_potential),
                num(e.surface_dirichlet),
                num(e.surface_potential),
                num(e.k_penalty),
                num(m[0]),
                m.get(1).map(|v| num(*v)).unwrap_or_default(),
                num(s.chemical_norm),
                num(s.rate_dual_norm),
                num(s.velocity_norm),
                num(s.margin),
                num(s.h1_norm),
            ]
        });
        self.csv(name, SAMPLE_COLUMNS, rows)
    }

    pub fn steps(&mut self, name: &str, steps: &[StepRecord]) -> Result<()> {
        let rows = steps.iter().map(|s| {
            vec![
                num(s.t),
                num(s.energy),
                num(s.dissipation),
                num(s.work),
                num(s.velocity_norm_sq),
                s.newton_iterations.to_string(),
                s.upwinded.to_string(),
                num(s.margin),
            ]
        });
        self.csv(name, STEP_COLUMNS, rows)
    }

    /// Writes `manifest.json` covering every file written so far.
    pub fn finish(mut self, header: ManifestHeader) -> Result<()> {
        let manifest = Manifest {
            tool: "bsch",
            version: env!("CARGO_PKG_VERSION"),
            csv_schema_version: CSV_SCHEMA_VERSION,
            column_schema_sha256: column_schema_hash(),
            header,
            files: std::mem::take(&mut self.files),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}

#[derive(Serialize)]
pub struct ManifestHeader {
    pub verb: String,
    pub preset: Option<String>,
    pub seed: u64,
    pub config_sha256: String,
    pub mesh_sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    csv_schema_version: u32,
    column_schema_sha256: String,
    #[serde(flatten)]
    header: ManifestHeader,
    files: BTreeMap<String, String>,
}
