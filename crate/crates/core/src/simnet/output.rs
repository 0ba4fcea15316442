//! Writes a run's output directory.
//!
//! ```text
//! trace.jsonl          one trace record per line
//! chain.jsonl          final committed chain, one block per line
//! txs.json             per-transaction records
//! topology/NNNN.json   overlay snapshots
//! metrics.json         netops snapshots
//! dividends.json       dividend sets per day
//! faults.json          injected faults, audit findings, bans, recoveries
//! logs/node-<id>.json  tamper-evident log export per node
//! summary.json         run summary
//! ```

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fault::FaultRecord;
use super::record::{BanRecord, FindingRecord, RecoveryRecord, RunOutput};

/// Contents of `faults.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaultsFile {
    pub injected: Vec<FaultRecord>,
    pub findings: Vec<FindingRecord>,
    pub bans: Vec<BanRecord>,
    pub recoveries: Vec<RecoveryRecord>,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T) -> io::Result<()> {
    let f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(f, v).map_err(io::Error::other)
}

fn write_lines<I, S>(path: &Path, lines: I) -> io::Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut f = BufWriter::new(fs::File::create(path)?);
    for l in lines {
        f.write_all(l.as_ref().as_bytes())?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

/// Writes everything under `dir`, creating it if needed. `trace.jsonl` is
/// only written if the run kept its trace lines.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir.join("topology"))?;
    fs::create_dir_all(dir.join("logs"))?;
    if let Some(lines) = &out.trace_lines {
        write_lines(&dir.join("trace.jsonl"), lines)?;
    }
    let blocks = out
        .final_chain
        .blocks()
        .iter()
        .map(|b| serde_json::to_string(b).map_err(io::Error::other))
        .collect::<io::Result<Vec<_>>>()?;
    write_lines(&dir.join("chain.jsonl"), blocks)?;
    write_json(&dir.join("txs.json"), &out.txs)?;
    for (i, snap) in out.topologies.iter().enumerate() {
        write_json(&dir.join("topology").join(format!("{i:04}.json")), snap)?;
    }
    write_json(&dir.join("metrics.json"), &out.metrics)?;
    write_json(&dir.join("dividends.json"), &out.dividends)?;
    write_json(
        &dir.join("faults.json"),
        &FaultsFile {
            injected: out.faults.clone(),
            findings: out.findings.clone(),
            bans: out.bans.clone(),
            recoveries: out.recoveries.clone(),
        },
    )?;
    for log in &out.logs {
        write_json(&dir.join("logs").join(format!("node-{}.json", log.id)), log)?;
    }
    write_json(&dir.join("summary.json"), &out.summary)
}
