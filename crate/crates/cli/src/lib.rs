//! Command layer behind the `kwb` binary: per-verb parameter schemas,
//! dispatch into `kwb-core`, and report serialization.
//!
//! Every verb is a pure function of its parameters and seed. Reports carry a
//! SHA-256 digest of the canonical parameter JSON, so two runs can be compared
//! byte for byte; wall-clock time is only recorded when asked for.

use std::time::Instant;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use kwb_core::indep_ba::AlgebraError;
use kwb_core::patterns::PatternError;
use kwb_core::tf_structures::StructureError;
use kwb_core::tf_types::TypeError;
use kwb_core::tnk::TnkError;
use kwb_core::trees::TreeError;

mod verbs;

pub use verbs::Verb;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Deepest leaf level any verb will work at.
pub const MAX_LEAF_LEVEL: usize = 30;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid parameters: {0}")]
    Schema(String),
    #[error("refused: {0}")]
    Guard(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Guard(_) => 3,
        }
    }
}

fn tree_is_guard(e: &TreeError) -> bool {
    matches!(e, TreeError::TooLarge { .. })
}

fn algebra_is_guard(e: &AlgebraError) -> bool {
    matches!(e, AlgebraError::TooManyAtoms(_))
}

fn pattern_is_guard(e: &PatternError) -> bool {
    match e {
        PatternError::TooLarge { .. } | PatternError::SearchSpaceTooLarge(_) => true,
        PatternError::Tree(t) => tree_is_guard(t),
        PatternError::Algebra(a) => algebra_is_guard(a),
        _ => false,
    }
}

fn classify(guard: bool, msg: String) -> CliError {
    if guard {
        CliError::Guard(msg)
    } else {
        CliError::Schema(msg)
    }
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> Self {
        classify(tree_is_guard(&e), e.to_string())
    }
}

impl From<AlgebraError> for CliError {
    fn from(e: AlgebraError) -> Self {
        classify(algebra_is_guard(&e), e.to_string())
    }
}

impl From<PatternError> for CliError {
    fn from(e: PatternError) -> Self {
        classify(pattern_is_guard(&e), e.to_string())
    }
}

impl From<StructureError> for CliError {
    fn from(e: StructureError) -> Self {
        let guard = matches!(&e, StructureError::Tree(t) if tree_is_guard(t));
        classify(guard, e.to_string())
    }
}

impl From<TypeError> for CliError {
    fn from(e: TypeError) -> Self {
        let guard = match &e {
            TypeError::Tree(t) => tree_is_guard(t),
            TypeError::Structure(StructureError::Tree(t)) => tree_is_guard(t),
            _ => false,
        };
        classify(guard, e.to_string())
    }
}

impl From<TnkError> for CliError {
    fn from(e: TnkError) -> Self {
        let guard = match &e {
            TnkError::Pattern(p) => pattern_is_guard(p),
            TnkError::Algebra(a) => algebra_is_guard(a),
            _ => false,
        };
        classify(guard, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Schema(e.to_string())
    }
}

/// One invocation: a verb, its JSON parameters and an optional seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub verb: Verb,
    pub params: Value,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub verb: String,
    pub input_digest: String,
    pub seed: Option<u64>,
    pub elapsed_ms: Option<u64>,
    #[serde(rename = "toolVersion")]
    pub tool_version: String,
    pub result: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Hex SHA-256 of the parameters with object keys sorted.
pub fn input_digest(params: &Value) -> String {
    // serde_json's default map is ordered, so this serialization is canonical.
    let bytes = serde_json::to_vec(params).expect("values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// Runs `cmd` without recording elapsed time.
pub fn run(cmd: &Command) -> Result<RunReport, CliError> {
    run_with(cmd, false)
}

pub fn run_with(cmd: &Command, timing: bool) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let result = verbs::dispatch(cmd.verb, &cmd.params, cmd.seed)?;
    Ok(RunReport {
        verb: cmd.verb.name().to_string(),
        input_digest: input_digest(&cmd.params),
        seed: cmd.seed,
        elapsed_ms: timing.then(|| start.elapsed().as_millis() as u64),
        tool_version: TOOL_VERSION.to_string(),
        result,
    })
}

pub const CSV_HEADER: [&str; 5] = ["verb", "input_digest", "result", "elapsed_ms", "seed"];

/// Serializes a report. CSV output is a header plus one row whose `result`
/// cell holds the compact result JSON.
pub fn emit_report(report: &RunReport, format: Format) -> Vec<u8> {
    match format {
        Format::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("reports always serialize");
            out.push(b'\n');
            out
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let opt = |x: Option<u64>| x.map(|v| v.to_string()).unwrap_or_default();
            w.write_record(CSV_HEADER).expect("in-memory write");
            w.write_record([
                report.verb.clone(),
                report.input_digest.clone(),
                report.result.to_string(),
                opt(report.elapsed_ms),
                opt(report.seed),
            ])
            .expect("in-memory write");
            w.into_inner().expect("in-memory flush")
        }
    }
}
