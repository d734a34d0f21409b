//! Experiment orchestration: a validated configuration becomes a job, the job
//! runs, and its output is written atomically with a metadata line.

mod config;
mod jobs;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Value, json};

pub use config::ExperimentConfig;
pub use jobs::{KeySpec, keys_for};

use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Front,
    Persistence,
    Barriers,
    Bootstrap,
    Spectrum,
    Logsob,
    Mixing,
    Duality,
    DfpErgodicity,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        ExperimentKind::Simulate,
        ExperimentKind::Front,
        ExperimentKind::Persistence,
        ExperimentKind::Barriers,
        ExperimentKind::Bootstrap,
        ExperimentKind::Spectrum,
        ExperimentKind::Logsob,
        ExperimentKind::Mixing,
        ExperimentKind::Duality,
        ExperimentKind::DfpErgodicity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Front => "front",
            ExperimentKind::Persistence => "persistence",
            ExperimentKind::Barriers => "barriers",
            ExperimentKind::Bootstrap => "bootstrap",
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::Logsob => "logsob",
            ExperimentKind::Mixing => "mixing",
            ExperimentKind::Duality => "duality",
            ExperimentKind::DfpErgodicity => "dfp-ergodicity",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "Run the graphical construction on a finite window",
            ExperimentKind::Front => "Track the infection fronts from a finite initial infection set",
            ExperimentKind::Persistence => "Estimate the probability that a region stays healthy",
            ExperimentKind::Barriers => "Good-point grid and barrier search for the delta-West process",
            ExperimentKind::Bootstrap => "Bootstrap closure and stable-configuration class",
            ExperimentKind::Spectrum => "Spectral gap of a finite-window chain",
            ExperimentKind::Logsob => "Log-Sobolev constant of a finite-window chain",
            ExperimentKind::Mixing => "Total-variation mixing profile",
            ExperimentKind::Duality => "BABP self-duality or BABP/DFP quasi-duality",
            ExperimentKind::DfpErgodicity => "Relaxation trace of the double flip process",
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().replace('_', "-");
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment kind '{s}'")))
    }
}

/// File payload of a job.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Csv { header: String, rows: Vec<String> },
    Jsonl(Vec<Value>),
}

/// Result of a job: a summary for standard output plus an optional file body.
#[derive(Clone, Debug, PartialEq)]
pub struct JobOutput {
    pub summary: Value,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<PathBuf>,
    pub summary: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobMeta {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

/// A validated, ready-to-run experiment.
pub struct Job {
    pub meta: JobMeta,
    run: Box<dyn FnOnce() -> Result<JobOutput> + Send>,
}

impl std::fmt::Debug for Job {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Job").field("meta", &self.meta).finish_non_exhaustive()
    }
}

/// Validates `cfg` for `kind`. Every failure here is an [`Error::Config`].
pub fn prepare(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<Job> {
    let allowed: Vec<&str> = keys_for(kind).iter().map(|k| k.key).chain(["kind", "workers"]).collect();
    cfg.check_keys(&allowed)?;
    if let Some(k) = cfg.get::<ExperimentKind>("kind")? {
        if k != kind {
            return Err(cfg.error("kind", format!("file is for '{k}', not '{kind}'")));
        }
    }
    let seed = cfg.get_or("seed", 0u64)?;
    let output = cfg.get::<PathBuf>("output")?;
    let run = jobs::plan(kind, cfg, seed)?;
    Ok(Job { meta: JobMeta { kind, config_hash: cfg.hash(), seed, output }, run })
}

/// Validates a configuration whose kind is given by its `kind` key.
pub fn prepare_from_file_config(cfg: &ExperimentConfig) -> Result<Job> {
    let kind = cfg.require::<ExperimentKind>("kind")?;
    prepare(kind, cfg)
}

fn metadata(meta: &JobMeta) -> Value {
    json!({
        "kind": meta.kind,
        "config_hash": meta.config_hash,
        "seed": meta.seed,
        "version": VERSION,
    })
}

/// File contents: a metadata line, then the payload.
pub fn render(meta: &JobMeta, payload: &Payload) -> String {
    let meta = metadata(meta);
    let mut s = String::new();
    match payload {
        Payload::Csv { header, rows } => {
            s.push_str(&format!("# {meta}\n{header}\n"));
            for r in rows {
                s.push_str(r);
                s.push('\n');
            }
        }
        Payload::Jsonl(records) => {
            s.push_str(&json!({ "meta": meta }).to_string());
            s.push('\n');
            for r in records {
                s.push_str(&r.to_string());
                s.push('\n');
            }
        }
    }
    s
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

/// Runs a prepared job and writes its output file, if any.
pub fn execute(job: Job) -> Result<RunRecord> {
    let start = Instant::now();
    let Job { meta, run } = job;
    let out = run()?;
    let mut outputs = Vec::new();
    if let Some(path) = &meta.output {
        write_atomic(path, &render(&meta, &out.payload))?;
        outputs.push(path.clone());
    }
    Ok(RunRecord {
        kind: meta.kind,
        config_hash: meta.config_hash,
        seed: meta.seed,
        version: VERSION.to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs,
        summary: out.summary,
    })
}

/// `prepare` followed by `execute`.
pub fn run(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<RunRecord> {
    execute(prepare(kind, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(s: &str) -> ExperimentConfig {
        ExperimentConfig::parse(s).unwrap()
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!("nope".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn spectrum_gap_positive() {
        let r = run(ExperimentKind::Spectrum, &cfg("model = fa1f\nn = 6\nq = 0.5\nbc = infected,infected\n")).unwrap();
        assert!(r.summary["gap"].as_f64().unwrap() > 0.0);
        assert_eq!(r.summary["states"], 64);
    }

    #[test]
    fn validation_errors_are_config_errors() {
        let e = prepare(ExperimentKind::Spectrum, &cfg("model = fa1f\nn = 6\nq = 1.5\n")).unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }), "{e}");
        let e = prepare(ExperimentKind::Spectrum, &cfg("model = fa1f\nn = 6\nq = 0.5\nbogus = 1\n")).unwrap_err();
        assert!(matches!(e, Error::Config { line: 4, .. }), "{e}");
        let e = prepare(ExperimentKind::Spectrum, &cfg("kind = mixing\nmodel = fa1f\nn = 6\nq = 0.5\n")).unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }), "{e}");
        let e = prepare_from_file_config(&cfg("model = fa1f\n")).unwrap_err();
        assert!(matches!(e, Error::Config { .. }), "{e}");
    }

    #[test]
    fn outputs_are_reproducible_and_tagged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("front.csv");
        let text = format!(
            "kind = front\nmodel = fa1f\nq = 0.5\nhorizon = 5\nsample_dt = 1\nreplicas = 3\nseed = 7\noutput = {}\n",
            path.display()
        );
        let c = cfg(&text);
        let r1 = run_and_read(&c, &path);
        let r2 = run_and_read(&c, &path);
        assert_eq!(r1, r2);
        let first = r1.lines().next().unwrap();
        assert!(first.starts_with("# {"));
        assert!(first.contains(&c.hash()) && first.contains("\"seed\":7"));
    }

    fn run_and_read(c: &ExperimentConfig, path: &Path) -> String {
        let rec = prepare_from_file_config(c).and_then(execute).unwrap();
        assert_eq!(rec.outputs, vec![path.to_path_buf()]);
        std::fs::read_to_string(path).unwrap()
    }
}
