//! Provenance attached to every output, and the writers that attach it.
//!
//! The manifest holds no wall-clock time or host detail, so identical
//! manifests give identical output bytes.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub inputs: Vec<InputFile>,
    /// every resolved flag except output paths
    pub parameters: Value,
    pub seed: Option<u64>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(subcommand: &'static str, parameters: &impl Serialize, seed: Option<u64>) -> anyhow::Result<Self> {
        Ok(RunManifest {
            tool: "rollout-stab",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            inputs: Vec::new(),
            parameters: serde_json::to_value(parameters)?,
            seed,
        })
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(InputFile {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("manifest serialises")
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            let mut f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            f.write_all(text.as_bytes())?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

/// `{"manifest": …, "units": …, "result": …}`, pretty printed.
pub fn write_json(
    path: Option<&Path>,
    manifest: &RunManifest,
    units: &[(&str, &str)],
    result: &impl Serialize,
) -> anyhow::Result<()> {
    let units: serde_json::Map<String, Value> = units
        .iter()
        .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
        .collect();
    let doc = serde_json::json!({
        "manifest": manifest,
        "units": units,
        "result": result,
    });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_or_print(path, &text)
}

/// CSV body preceded by `#` lines carrying the manifest and column units.
pub fn write_csv(
    path: Option<&Path>,
    manifest: &RunManifest,
    units: &[(&str, &str)],
    body: &str,
) -> anyhow::Result<()> {
    let mut text = format!("# manifest: {}\n", serde_json::to_string(manifest)?);
    if !units.is_empty() {
        let u: Vec<String> = units.iter().map(|(k, v)| format!("{k}={v}")).collect();
        text.push_str(&format!("# units: {}\n", u.join("; ")));
    }
    text.push_str(body);
    write_or_print(path, &text)
}
