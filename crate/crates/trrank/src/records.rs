//! JSON Lines persistence for evaluation records and the enumeration ranking.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use trrank_core::evolve::{EvalRecord, Evaluator, Objectives};
use trrank_core::{Error, RankVector, Result};

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(row);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| io(path, e))
}

/// Loss, then params, then lexicographic genome.
pub fn record_order(a: &EvalRecord, b: &EvalRecord) -> Ordering {
    a.loss
        .total_cmp(&b.loss)
        .then(a.params.cmp(&b.params))
        .then_with(|| a.genome.cmp(&b.genome))
}

pub fn sorted(records: &[EvalRecord]) -> Vec<EvalRecord> {
    let mut out = records.to_vec();
    out.sort_by(record_order);
    out
}

/// 1-based position of `genome` in the sorted records.
pub fn rank_of(genome: &RankVector, records: &[EvalRecord]) -> Result<usize> {
    let target = records
        .iter()
        .find(|r| &r.genome == genome)
        .ok_or_else(|| Error::Argument(format!("genome {genome} is not in the enumeration")))?;
    Ok(1 + records
        .iter()
        .filter(|r| record_order(r, target) == Ordering::Less)
        .count())
}

/// Enumeration results indexed by genome, with precomputed ranks.
#[derive(Clone, Debug)]
pub struct RankTable {
    by_genome: HashMap<RankVector, (usize, Objectives)>,
}

impl RankTable {
    pub fn new(records: &[EvalRecord]) -> Result<Self> {
        let mut by_genome = HashMap::with_capacity(records.len());
        for (pos, r) in sorted(records).iter().enumerate() {
            if by_genome
                .insert(r.genome.clone(), (pos + 1, Objectives::new(r.loss, r.params)))
                .is_some()
            {
                return Err(Error::Format(format!("genome {} appears twice", r.genome)));
            }
        }
        Ok(RankTable { by_genome })
    }

    pub fn len(&self) -> usize {
        self.by_genome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_genome.is_empty()
    }

    pub fn rank_of(&self, genome: &RankVector) -> Result<usize> {
        self.by_genome
            .get(genome)
            .map(|e| e.0)
            .ok_or_else(|| Error::Argument(format!("genome {genome} is not in the enumeration")))
    }
}

/// Answers evaluations from the table. Valid because every genome's
/// training is seeded from the genome itself.
impl Evaluator for RankTable {
    fn evaluate(&self, genome: &RankVector) -> Result<Objectives> {
        self.by_genome
            .get(genome)
            .map(|e| e.1)
            .ok_or_else(|| Error::Argument(format!("genome {genome} is not in the enumeration")))
    }
}
