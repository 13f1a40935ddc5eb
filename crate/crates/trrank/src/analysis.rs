//! Interest regions and co-occurrence counts over the best records.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use trrank_core::evolve::EvalRecord;
use trrank_core::{Error, Result};

use crate::records::sorted;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterestRegion {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub low: f64,
    pub high: f64,
}

impl InterestRegion {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("interest region of no values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self::new(mean, var.sqrt()))
    }

    pub fn new(mean: f64, std: f64) -> Self {
        InterestRegion {
            mean,
            std,
            low: mean - std,
            high: mean + std,
        }
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementStats {
    pub element: usize,
    pub region: InterestRegion,
    pub sensitive: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cooccurrence {
    pub element_i: usize,
    pub element_j: usize,
    pub value_i: usize,
    pub value_j: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub top: usize,
    pub records: usize,
    pub range: (usize, usize),
    pub sensitive_threshold: f64,
    pub per_element: Vec<ElementStats>,
    pub pooled: InterestRegion,
    pub cooccurrence: Vec<Cooccurrence>,
}

/// Statistics of the `top` lowest-loss records. An element is sensitive when
/// its standard deviation is at most a sixth of the rank range.
pub fn analyze(records: &[EvalRecord], top: usize, range: (usize, usize)) -> Result<AnalysisReport> {
    if top == 0 || records.len() < top {
        return Err(Error::Argument(format!(
            "need at least {top} records (and top >= 1), found {}",
            records.len()
        )));
    }
    let best = &sorted(records)[..top];
    let d = best[0].genome.len();
    if best.iter().any(|r| r.genome.len() != d) {
        return Err(Error::Format("records mix genome lengths".into()));
    }
    let threshold = (range.1 - range.0) as f64 / 6.0;
    let per_element = (0..d)
        .map(|e| {
            let values: Vec<f64> = best.iter().map(|r| r.genome.as_slice()[e] as f64).collect();
            let region = InterestRegion::from_values(&values)?;
            Ok(ElementStats {
                element: e,
                region,
                sensitive: region.std <= threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled_values: Vec<f64> = best
        .iter()
        .flat_map(|r| r.genome.as_slice().iter().map(|&v| v as f64))
        .collect();
    let pooled = InterestRegion::from_values(&pooled_values)?;

    let mut counts: BTreeMap<(usize, usize, usize, usize), usize> = BTreeMap::new();
    for r in best {
        let g = r.genome.as_slice();
        for i in 0..d {
            for j in i + 1..d {
                *counts.entry((i, j, g[i], g[j])).or_default() += 1;
            }
        }
    }
    let cooccurrence = counts
        .into_iter()
        .map(|((element_i, element_j, value_i, value_j), count)| Cooccurrence {
            element_i,
            element_j,
            value_i,
            value_j,
            count,
        })
        .collect();
    Ok(AnalysisReport {
        top,
        records: records.len(),
        range,
        sensitive_threshold: threshold,
        per_element,
        pooled,
        cooccurrence,
    })
}

/// Smallest and largest rank value appearing anywhere in the records.
pub fn observed_range(records: &[EvalRecord]) -> Result<(usize, usize)> {
    let values = records.iter().flat_map(|r| r.genome.as_slice().iter().copied());
    let (lo, hi) = values.fold((usize::MAX, 0), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return Err(Error::Argument("no records".into()));
    }
    Ok((lo, hi))
}

pub fn write_cooccurrence_csv(path: &Path, rows: &[Cooccurrence]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
