use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context as _;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Non-finite values print as `NA`; finite ones use the shortest round-trip form.
pub fn real(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "NA".into()
    }
}

pub fn opt_real(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), real)
}

/// Keeps a TSV cell on one line.
pub fn cell(s: &str) -> String {
    s.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
        .replace('\r', "\\r")
}

pub fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p != Path::new("-") => {
            let f = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            Box::new(BufWriter::new(f))
        }
        _ => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest_file(path: &Path) -> anyhow::Result<InputDigest> {
    let mut f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut h = Sha256::new();
    io::copy(&mut f, &mut h).with_context(|| format!("cannot read {}", path.display()))?;
    let hex = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex,
    })
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub elapsed_seconds: f64,
}

/// Provenance record for one run. Everything except `timing` is a pure function
/// of the invocation and the input bytes.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub output: Option<String>,
    pub timing: Timing,
}

pub struct ManifestBuilder {
    command: &'static str,
    started: Instant,
}

impl ManifestBuilder {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
        }
    }

    pub fn finish(
        self,
        config: serde_json::Value,
        inputs: &[&Path],
        output: Option<&Path>,
    ) -> anyhow::Result<RunManifest> {
        Ok(RunManifest {
            tool: "exon",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config,
            inputs: inputs.iter().map(|p| digest_file(p)).collect::<anyhow::Result<_>>()?,
            output: output.filter(|p| *p != Path::new("-")).map(|p| p.display().to_string()),
            timing: Timing {
                elapsed_seconds: self.started.elapsed().as_secs_f64(),
            },
        })
    }
}

/// Explicit path, else next to the output file, else one JSON line on stderr.
pub fn emit_manifest(m: &RunManifest, explicit: Option<&Path>, out: Option<&Path>) -> anyhow::Result<()> {
    let target: Option<PathBuf> = explicit.map(Path::to_path_buf).or_else(|| {
        out.filter(|p| *p != Path::new("-")).map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    match target {
        Some(p) => {
            let mut text = serde_json::to_string_pretty(m)?;
            text.push('\n');
            std::fs::write(&p, text).with_context(|| format!("cannot write manifest {}", p.display()))
        }
        None => {
            eprintln!("manifest: {}", serde_json::to_string(m)?);
            Ok(())
        }
    }
}
