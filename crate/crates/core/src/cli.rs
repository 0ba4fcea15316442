//! Command-line front end: `run`, `trace`, `verify-log` and `report`.
//!
//! Exit codes:
//!
//! | command    | 0         | 1                      | 2                    | 3                 |
//! |------------|-----------|------------------------|----------------------|-------------------|
//! | run        | completed | output not writable    | invalid scenario     | invariant breach  |
//! | trace      | found     | tx id not found        | unreadable output    |                   |
//! | verify-log | log ok    | verification failure   | parse failure        |                   |
//! | report     | printed   |                        | unreadable output    |                   |

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{DividendSet, FindingKind, Percentiles};
use crate::crypto::Digest;
use crate::ledger::Block;
use crate::simnet::output::{write_outputs, FaultsFile};
use crate::simnet::{run_with, RunOptions, Scenario, SimError, TraceRecord, TxRecord, TxStatus};
use crate::tamper_log::{LogEntry, LogExport, VerificationReport};

#[derive(Debug, Parser)]
#[command(name = "cpos", version, about = "Cooperative proof-of-stake simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its outputs.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Show the hop chronology of one transaction.
    Trace {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        txid: String,
    },
    /// Verify an exported tamper-evident log.
    VerifyLog { file: PathBuf },
    /// Summarize a run's outputs.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("transaction {0} not found")]
    NotFound(String),
    #[error("bad transaction id: {0}")]
    BadTxid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl CliError {
    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_owned(),
            source,
        }
    }

    fn parse(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::parse(path, e))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::parse(path, e)))
        .collect()
}

// ---- trace ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHop {
    pub t: i64,
    pub node: u32,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TerminalStatus {
    Confirmed { height: u64 },
    Rejected { reason: String },
    Pending,
}

impl std::fmt::Display for TerminalStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TerminalStatus::Confirmed { height } => write!(f, "confirmed at height {height}"),
            TerminalStatus::Rejected { reason } => write!(f, "rejected({reason})"),
            TerminalStatus::Pending => write!(f, "pending"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceQueryResult {
    pub txid: Digest,
    pub hops: Vec<TraceHop>,
    pub round_trip_hops: Option<u32>,
    pub status: TerminalStatus,
}

/// Hop chronology of `txid` from a run's output directory.
pub fn trace_transaction(dir: &Path, txid: &str) -> Result<TraceQueryResult, CliError> {
    let id = Digest::from_hex(txid).map_err(|_| CliError::BadTxid(txid.into()))?;
    let txs: Vec<TxRecord> = read_json(&dir.join("txs.json"))?;
    let rec = txs
        .iter()
        .find(|t| t.txid == id)
        .ok_or_else(|| CliError::NotFound(txid.into()))?;
    let records: Vec<TraceRecord> = read_lines(&dir.join("trace.jsonl"))?;
    let mut hops = Vec::new();
    for r in records.iter().filter(|r| r.tx == Some(id)) {
        let dir = serde_json::to_value(r.dir).ok().and_then(|v| v.as_str().map(str::to_owned));
        let dir = dir.unwrap_or_default();
        let mut action = format!("{dir} {}", r.kind);
        if let Some(p) = r.peer {
            action.push_str(&format!(" peer {p}"));
        }
        if let Some(d) = &r.detail {
            action.push_str(&format!(" ({d})"));
        }
        hops.push(TraceHop {
            t: r.t,
            node: r.node,
            action,
        });
        if let Some(route) = &r.route {
            // The route excludes the sender; its last hop is the receiver.
            let inner = route.len().saturating_sub(1);
            for h in route.iter().take(inner) {
                hops.push(TraceHop {
                    t: h.t,
                    node: h.node,
                    action: format!("relay {}", r.kind),
                });
            }
        }
    }
    let blocks: Vec<Block> = read_lines(&dir.join("chain.jsonl"))?;
    let included = blocks.iter().find(|b| b.txs.iter().any(|a| a.tx.id == id));
    let status = match (included, rec.status) {
        (Some(b), _) => {
            hops.push(TraceHop {
                t: b.timestamp,
                node: rec.issuer,
                action: format!("included height {}", b.height),
            });
            TerminalStatus::Confirmed { height: b.height }
        }
        (None, TxStatus::Rejected) => TerminalStatus::Rejected {
            reason: rec.reject_reason.clone().unwrap_or_default(),
        },
        _ => TerminalStatus::Pending,
    };
    // Stable on time; records are already in emission order.
    hops.sort_by_key(|h| h.t);
    Ok(TraceQueryResult {
        txid: id,
        hops,
        round_trip_hops: rec.round_trip_hops,
        status,
    })
}

// ---- verify-log ----

/// Accepted shapes: a log export object, a per-node log file (with an
/// `export` field), or a bare array of entries.
#[derive(Deserialize)]
#[serde(untagged)]
enum LogFile {
    Export(LogExport),
    Node { export: LogExport },
    Entries(Vec<LogEntry>),
}

pub fn verify_log_file(path: &Path) -> Result<VerificationReport, CliError> {
    let text = read(path)?;
    let file: LogFile = serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))?;
    Ok(match file {
        LogFile::Export(e) | LogFile::Node { export: e } => e.verify(),
        LogFile::Entries(entries) => LogExport {
            // Only the hash chain is checked without a head, so the owner is moot.
            owner: crate::crypto::Address::from_label("anonymous"),
            head: None,
            entries,
        }
        .verify(),
    })
}

// ---- report ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DividendTotals {
    pub days: usize,
    pub block_total: u64,
    pub paid_total: u64,
    pub mint_total: u64,
    pub carried_out: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub blocks: u64,
    pub txs_issued: usize,
    pub txs_confirmed: usize,
    pub txs_rejected: usize,
    pub ack_latency_ms: Percentiles,
    pub dividends: DividendTotals,
    pub findings: BTreeMap<String, usize>,
    pub bans: Vec<u32>,
    /// Round-trip hop count → number of transactions.
    pub hop_histogram: BTreeMap<u32, usize>,
}

pub fn build_report(dir: &Path) -> Result<Report, CliError> {
    let blocks: Vec<Block> = read_lines(&dir.join("chain.jsonl"))?;
    let txs: Vec<TxRecord> = read_json(&dir.join("txs.json"))?;
    let dividends: Vec<DividendSet> = read_json(&dir.join("dividends.json"))?;
    let faults: FaultsFile = read_json(&dir.join("faults.json"))?;
    let confirmed: std::collections::BTreeSet<Digest> =
        blocks.iter().flat_map(|b| b.txs.iter().map(|a| a.tx.id)).collect();
    let latencies: Vec<i64> = txs
        .iter()
        .filter_map(|t| t.acked_at_ms.map(|a| a - t.issued_at_ms))
        .collect();
    let mut hop_histogram = BTreeMap::new();
    for h in txs.iter().filter_map(|t| t.round_trip_hops) {
        *hop_histogram.entry(h).or_insert(0) += 1;
    }
    let mut findings = BTreeMap::new();
    for f in &faults.findings {
        let kind = match f.finding.kind {
            FindingKind::HeadHashMismatch => "head-hash-mismatch",
            FindingKind::MissingBytes => "missing-bytes",
            FindingKind::LogTamper => "log-tamper",
            FindingKind::Unresponsive => "unresponsive",
        };
        *findings.entry(kind.to_string()).or_insert(0) += 1;
    }
    Ok(Report {
        blocks: blocks.iter().map(|b| b.height).max().unwrap_or(0),
        txs_issued: txs.len(),
        txs_confirmed: txs.iter().filter(|t| confirmed.contains(&t.txid)).count(),
        txs_rejected: txs.iter().filter(|t| t.status == TxStatus::Rejected).count(),
        ack_latency_ms: Percentiles::of(&latencies),
        dividends: DividendTotals {
            days: dividends.len(),
            block_total: dividends.iter().map(|d| d.block_total).sum(),
            paid_total: dividends.iter().map(DividendSet::paid_total).sum(),
            mint_total: dividends.iter().map(|d| d.mint_total).sum(),
            carried_out: dividends.last().map_or(0, |d| d.carried_out),
        },
        findings,
        bans: faults.bans.iter().map(|b| b.node).collect(),
        hop_histogram,
    })
}

fn print_report(r: &Report, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "blocks: {}", r.blocks)?;
    writeln!(
        out,
        "transactions: {} issued, {} confirmed, {} rejected",
        r.txs_issued, r.txs_confirmed, r.txs_rejected
    )?;
    let p = &r.ack_latency_ms;
    writeln!(
        out,
        "ack latency ms: n={} p50={} p90={} p99={} max={}",
        p.count, p.p50, p.p90, p.p99, p.max
    )?;
    let d = &r.dividends;
    writeln!(
        out,
        "dividends: {} days, blocks {} paid {} (mint {}) carried {}",
        d.days, d.block_total, d.paid_total, d.mint_total, d.carried_out
    )?;
    if r.findings.is_empty() {
        writeln!(out, "findings: none")?;
    }
    for (k, n) in &r.findings {
        writeln!(out, "findings: {k} {n}")?;
    }
    writeln!(out, "bans: {:?}", r.bans)?;
    writeln!(out, "hop histogram:")?;
    for (h, n) in &r.hop_histogram {
        writeln!(out, "  {h:>3} {n}")?;
    }
    Ok(())
}

// ---- dispatch ----

fn cmd_run(scenario: &Path, seed: Option<u64>, dir: &Path, out: &mut dyn Write, err: &mut dyn Write) -> io::Result<i32> {
    let text = match fs::read_to_string(scenario) {
        Ok(t) => t,
        Err(e) => {
            writeln!(err, "invalid scenario: {}: {e}", scenario.display())?;
            return Ok(2);
        }
    };
    let mut sc = match Scenario::from_json(&text) {
        Ok(sc) => sc,
        Err(e) => {
            writeln!(err, "invalid scenario: {e}")?;
            return Ok(2);
        }
    };
    if let Some(s) = seed {
        sc.seed = s;
    }
    let opts = RunOptions { keep_trace_lines: true };
    let result = match run_with(&sc, &opts) {
        Ok(r) => r,
        Err(SimError::InvalidScenario(e)) => {
            writeln!(err, "invalid scenario: {e}")?;
            return Ok(2);
        }
        Err(e) => {
            writeln!(err, "invalid scenario: {e}")?;
            return Ok(2);
        }
    };
    if let Err(e) = write_outputs(&result, dir) {
        writeln!(err, "{}: {e}", dir.display())?;
        return Ok(1);
    }
    let s = &result.summary;
    writeln!(
        out,
        "{}: height {} sealed {} txs {}/{} trace {}",
        if s.name.is_empty() { "scenario" } else { &s.name },
        s.final_height,
        s.sealed,
        s.txs_included,
        s.txs_issued,
        s.trace_digest
    )?;
    if result.violations.is_empty() {
        return Ok(0);
    }
    for v in &result.violations {
        writeln!(err, "invariant violated: {} at {} ms: {}", v.invariant, v.at_ms, v.detail)?;
    }
    Ok(3)
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> io::Result<i32> {
    match cli.command {
        Command::Run { scenario, seed, out: dir } => cmd_run(&scenario, seed, &dir, out, err),
        Command::Trace { out: dir, txid } => match trace_transaction(&dir, &txid) {
            Ok(r) => {
                writeln!(out, "tx {}", r.txid)?;
                for h in &r.hops {
                    writeln!(out, "  {:>12} node {:>4}  {}", h.t, h.node, h.action)?;
                }
                match r.round_trip_hops {
                    Some(n) => writeln!(out, "round trip: {n} hops")?,
                    None => writeln!(out, "round trip: none")?,
                }
                writeln!(out, "status: {}", r.status)?;
                Ok(0)
            }
            Err(e @ (CliError::NotFound(_) | CliError::BadTxid(_))) => {
                writeln!(err, "NotFound: {e}")?;
                Ok(1)
            }
            Err(e) => {
                writeln!(err, "{e}")?;
                Ok(2)
            }
        },
        Command::VerifyLog { file } => match verify_log_file(&file) {
            Ok(r) if r.ok => {
                writeln!(out, "ok")?;
                Ok(0)
            }
            Ok(r) => {
                let idx = r.first_bad_index.map_or("-".to_string(), |i| i.to_string());
                writeln!(out, "not ok: first_bad_index {idx} reason {:?}", r.reason)?;
                Ok(1)
            }
            Err(e) => {
                writeln!(err, "parse failure: {e}")?;
                Ok(2)
            }
        },
        Command::Report { out: dir, json } => match build_report(&dir) {
            Ok(r) if json => {
                serde_json::to_writer_pretty(&mut *out, &r).map_err(io::Error::other)?;
                writeln!(out)?;
                Ok(0)
            }
            Ok(r) => {
                print_report(&r, out)?;
                Ok(0)
            }
            Err(e) => {
                writeln!(err, "{e}")?;
                Ok(2)
            }
        },
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    dispatch(cli, out, err).unwrap_or_else(|e| {
        let _ = writeln!(err, "{e}");
        1
    })
}
