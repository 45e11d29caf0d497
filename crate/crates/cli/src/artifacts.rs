use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use spm_core::Certificate;

use crate::config::ExperimentConfig;
use crate::{CliError, TOOL, VERSION};

/// A CSV table; cells are preformatted so floats keep their shortest round-trip form.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Curve {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn render(&self, hash: &str) -> String {
        let mut s = format!("# {TOOL} {VERSION} config {hash}\n{}\n", self.header.join(","));
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Everything an experiment produced; written by [`write_artifacts`].
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub kind: &'static str,
    pub passed: bool,
    pub results: Value,
    pub curves: Vec<Curve>,
    pub certificates: Vec<Certificate>,
    pub snapshots: Option<Vec<u8>>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the resolved config, ignoring the output directory.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output.directory = None;
    sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
}

fn certificate_hash(c: &Certificate) -> String {
    sha256_hex(&serde_json::to_vec(c).expect("certificate serializes"))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

/// Writes `summary.json`, one CSV per curve, `certificates.json` and optional snapshots.
pub fn write_artifacts(cfg: &ExperimentConfig, report: &Report, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    let hash = config_hash(cfg);
    let mut artifacts = Vec::new();
    let mut emit = |name: String, bytes: Vec<u8>| -> Result<(), CliError> {
        artifacts.push(json!({ "file": name, "sha256": sha256_hex(&bytes) }));
        fs::write(out.join(&name), bytes)?;
        Ok(())
    };
    for c in &report.curves {
        emit(format!("{}.csv", c.name), c.render(&hash).into_bytes())?;
    }
    let certs: Vec<Value> = report
        .certificates
        .iter()
        .map(|c| json!({ "sha256": certificate_hash(c), "certificate": c }))
        .collect();
    if !certs.is_empty() {
        let doc = json!({ "tool": TOOL, "version": VERSION, "config_hash": hash, "certificates": certs });
        emit("certificates.json".into(), pretty(&doc).into_bytes())?;
    }
    if let Some(bytes) = &report.snapshots {
        // The binary header is fixed, so the hash goes in the file name.
        emit(format!("snapshots-{}.bin", &hash[..16]), bytes.clone())?;
    }
    let summary = json!({
        "tool": TOOL,
        "version": VERSION,
        "schema_version": cfg.schema_version,
        "config_hash": hash,
        "experiment": report.kind,
        "passed": report.passed,
        "config": cfg_without_dir(cfg),
        "certificates": report.certificates.iter().map(|c| json!({
            "hypothesis": c.hypothesis,
            "passed": c.passed,
            "sha256": certificate_hash(c),
        })).collect::<Vec<_>>(),
        "artifacts": artifacts,
        "results": report.results,
    });
    fs::write(out.join("summary.json"), pretty(&summary))?;
    Ok(())
}

fn cfg_without_dir(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.output.directory = None;
    c
}
