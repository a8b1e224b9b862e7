//! Line-delimited `taintflow-chain/1` interchange format.
//!
//! The first line is the literal version tag; every following non-blank line
//! is one JSON object describing a transaction:
//!
//! ```text
//! taintflow-chain/1
//! {"txid":"…","timestamp":1600000000,"block_height":0,"tx_index":0,"size_bytes":134,"inputs":"coinbase","outputs":[{"address":"a1","value_sat":5000000000}]}
//! ```
//!
//! Export order is ascending `(block_height, tx_index)`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainError, ChainView, OutPoint, Transaction, TxOutput, Txid, ValidationReport};
use crate::par::Exec;

pub const CHAIN_FORMAT: &str = "taintflow-chain/1";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate transaction id {0}")]
    DuplicateTxid(Txid),
    #[error("index build failed: {0}")]
    IndexBuild(ValidationReport),
    #[error(transparent)]
    Chain(ChainError),
}

impl From<ChainError> for IngestError {
    fn from(e: ChainError) -> Self {
        match e {
            ChainError::DuplicateTxid(t) => IngestError::DuplicateTxid(t),
            other => IngestError::Chain(other),
        }
    }
}

#[derive(Serialize, Deserialize, Debug, PartialEq, Eq)]
#[serde(untagged)]
enum Inputs {
    Marker(String),
    Spends(Vec<OutPoint>),
}

#[derive(Serialize, Deserialize, Debug)]
struct Record {
    txid: Txid,
    timestamp: i64,
    block_height: u64,
    tx_index: u32,
    size_bytes: u32,
    inputs: Inputs,
    outputs: Vec<TxOutput>,
    #[serde(flatten, skip_serializing)]
    extra: BTreeMap<String, serde_json::Value>,
}

impl Record {
    fn from_tx(tx: &Transaction) -> Self {
        Record {
            txid: tx.txid,
            timestamp: tx.timestamp,
            block_height: tx.block_height,
            tx_index: tx.tx_index,
            size_bytes: tx.size_bytes,
            inputs: if tx.is_coinbase() {
                Inputs::Marker("coinbase".into())
            } else {
                Inputs::Spends(tx.inputs.clone())
            },
            outputs: tx.outputs.clone(),
            extra: BTreeMap::new(),
        }
    }

    fn into_tx(self) -> Result<(Transaction, usize), String> {
        let inputs = match self.inputs {
            Inputs::Marker(m) if m == "coinbase" => Vec::new(),
            Inputs::Marker(m) => return Err(format!("unknown inputs marker {m:?}")),
            Inputs::Spends(v) if v.is_empty() => return Err("empty input list; use the \"coinbase\" marker".into()),
            Inputs::Spends(v) => v,
        };
        if self.outputs.is_empty() {
            return Err("transaction has no outputs".into());
        }
        if self.size_bytes == 0 {
            return Err("size_bytes must be positive".into());
        }
        if self.outputs.iter().any(|o| o.address.is_empty()) {
            return Err("empty output address".into());
        }
        Ok((
            Transaction {
                txid: self.txid,
                timestamp: self.timestamp,
                block_height: self.block_height,
                tx_index: self.tx_index,
                size_bytes: self.size_bytes,
                inputs,
                outputs: self.outputs,
            },
            self.extra.len(),
        ))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// Abort on validation problems instead of dropping offenders.
    pub strict: bool,
    pub exec: Exec,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            strict: true,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug)]
pub struct LoadOutcome {
    pub chain: ChainView,
    /// Number of unrecognised fields skipped across all records.
    pub unknown_fields: usize,
    /// Problems found before any transaction was dropped.
    pub validation: ValidationReport,
    /// Transactions removed in lenient mode.
    pub dropped: Vec<Txid>,
}

/// Loads a chain file in strict mode.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<ChainView, IngestError> {
    Ok(load_dataset_with(path, LoadOptions::default())?.chain)
}

pub fn load_dataset_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<LoadOutcome, IngestError> {
    let path = path.as_ref();
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>().map_err(io_err)?;
    parse_lines(&lines, opts)
}

/// Parses an in-memory chain document.
pub fn parse_dataset(text: &str, opts: LoadOptions) -> Result<LoadOutcome, IngestError> {
    let lines: Vec<&str> = text.lines().collect();
    parse_lines(&lines, opts)
}

fn parse_lines<S: AsRef<str> + Sync>(lines: &[S], opts: LoadOptions) -> Result<LoadOutcome, IngestError> {
    match lines.first().map(|l| l.as_ref().trim()) {
        Some(CHAIN_FORMAT) => {}
        Some(other) => {
            return Err(IngestError::Parse {
                line: 1,
                reason: format!("expected version line {CHAIN_FORMAT:?}, found {other:?}"),
            })
        }
        None => {
            return Err(IngestError::Parse {
                line: 1,
                reason: "missing version line".into(),
            })
        }
    }

    let body = &lines[1..];
    let parsed = opts.exec.map_range(body.len(), |i| {
        let line = body[i].as_ref().trim();
        if line.is_empty() {
            return Ok(None);
        }
        serde_json::from_str::<Record>(line)
            .map_err(|e| e.to_string())
            .and_then(Record::into_tx)
            .map(Some)
            .map_err(|reason| IngestError::Parse { line: i + 2, reason })
    });

    let mut txs = Vec::with_capacity(parsed.len());
    let mut unknown_fields = 0;
    for item in parsed {
        if let Some((tx, extra)) = item? {
            unknown_fields += extra;
            txs.push(tx);
        }
    }
    if unknown_fields > 0 {
        log::warn!("ignored {unknown_fields} unknown field(s)");
    }

    let mut chain = ChainView::build(txs)?;
    let validation = chain.validate();
    let mut dropped = Vec::new();
    if !validation.is_empty() {
        if opts.strict {
            return Err(IngestError::IndexBuild(validation));
        }
        // Dropping a transaction can orphan its spenders, so repeat until clean.
        let mut report = validation.clone();
        while !report.is_empty() {
            let offenders = report.offending_txids();
            dropped.extend_from_slice(&offenders);
            chain = chain.without(&offenders)?;
            report = chain.validate();
        }
        dropped.sort();
        log::warn!("dropped {} transaction(s) failing validation", dropped.len());
    }

    Ok(LoadOutcome {
        chain,
        unknown_fields,
        validation,
        dropped,
    })
}

/// Writes `chain` in interchange format; returns the record count.
pub fn write_dataset<W: Write>(chain: &ChainView, mut out: W) -> io::Result<usize> {
    writeln!(out, "{CHAIN_FORMAT}")?;
    for tx in chain.transactions() {
        serde_json::to_writer(&mut out, &Record::from_tx(tx))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(chain.len())
}

pub fn export_dataset(chain: &ChainView, path: impl AsRef<Path>) -> Result<usize, IngestError> {
    let path = path.as_ref();
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_dataset(chain, BufWriter::new(file)).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"taintflow-chain/1
{"txid":"0000000000000000000000000000000000000000000000000000000000000001","timestamp":1000,"block_height":0,"tx_index":0,"size_bytes":120,"inputs":"coinbase","outputs":[{"address":"a","value_sat":5000}]}
{"txid":"0000000000000000000000000000000000000000000000000000000000000002","timestamp":1600,"block_height":1,"tx_index":0,"size_bytes":200,"inputs":[{"txid":"0000000000000000000000000000000000000000000000000000000000000001","vout":0}],"outputs":[{"address":"b","value_sat":3000},{"address":"c","value_sat":1900}]}
{"txid":"0000000000000000000000000000000000000000000000000000000000000003","timestamp":1700,"block_height":1,"tx_index":1,"size_bytes":150,"inputs":[{"txid":"0000000000000000000000000000000000000000000000000000000000000002","vout":1}],"outputs":[{"address":"d","value_sat":1800}]}
"#;

    #[test]
    fn loads_three_tx_fixture() {
        let out = parse_dataset(FIXTURE, LoadOptions::default()).unwrap();
        assert_eq!(out.chain.len(), 3);
        assert!(out.validation.is_empty());
        assert_eq!(out.unknown_fields, 0);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let bad = FIXTURE.replacen("\"timestamp\":1000", "\"timestamp\":\"x\"", 1);
        match parse_dataset(&bad, LoadOptions::default()) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_version_line() {
        let body: String = FIXTURE.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            parse_dataset(&body, LoadOptions::default()),
            Err(IngestError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_fields_are_counted() {
        let extra = FIXTURE.replacen(
            "\"size_bytes\":120,",
            "\"size_bytes\":120,\"version\":2,\"locktime\":0,",
            1,
        );
        let out = parse_dataset(&extra, LoadOptions::default()).unwrap();
        assert_eq!(out.unknown_fields, 2);
    }

    #[test]
    fn duplicate_txid_rejected() {
        let mut lines: Vec<&str> = FIXTURE.lines().collect();
        let dup = lines[1].replace("\"block_height\":0", "\"block_height\":7");
        lines.push(&dup);
        let text = lines.join("\n");
        assert!(matches!(
            parse_dataset(&text, LoadOptions::default()),
            Err(IngestError::DuplicateTxid(_))
        ));
    }

    #[test]
    fn strict_vs_lenient() {
        // tx 3 now spends an unknown output; tx 4 spends tx 3.
        let bad = FIXTURE.replacen("\"vout\":1}", "\"vout\":9}", 1).trim_end().to_string()
            + "\n{\"txid\":\"0000000000000000000000000000000000000000000000000000000000000004\",\"timestamp\":1800,\"block_height\":2,\"tx_index\":0,\"size_bytes\":100,\"inputs\":[{\"txid\":\"0000000000000000000000000000000000000000000000000000000000000003\",\"vout\":0}],\"outputs\":[{\"address\":\"e\",\"value_sat\":1700}]}";
        assert!(matches!(
            parse_dataset(&bad, LoadOptions::default()),
            Err(IngestError::IndexBuild(_))
        ));
        let out = parse_dataset(
            &bad,
            LoadOptions {
                strict: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.chain.len(), 2);
        assert_eq!(out.dropped, vec![Txid::from_u64(3), Txid::from_u64(4)]);
        assert!(out.chain.validate().is_empty());
    }

    #[test]
    fn empty_chain_exports_version_line_only() {
        let chain = ChainView::build(vec![]).unwrap();
        let mut buf = Vec::new();
        assert_eq!(write_dataset(&chain, &mut buf).unwrap(), 0);
        assert_eq!(String::from_utf8(buf).unwrap(), "taintflow-chain/1\n");
    }

    #[test]
    fn export_matches_fixture_bytes() {
        let chain = parse_dataset(FIXTURE, LoadOptions::default()).unwrap().chain;
        let mut buf = Vec::new();
        write_dataset(&chain, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), FIXTURE);
    }

    #[test]
    fn permuted_lines_load_identically() {
        let mut lines: Vec<&str> = FIXTURE.lines().collect();
        lines[1..].reverse();
        let permuted = lines.join("\n");
        let a = parse_dataset(FIXTURE, LoadOptions::default()).unwrap().chain;
        let b = parse_dataset(&permuted, LoadOptions::default()).unwrap().chain;
        assert_eq!(a.transactions(), b.transactions());
    }
}
