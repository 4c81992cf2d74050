//! Observed `(A, Y, Yhat)` count tables.

use num_rational::BigRational;
use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts over the eight `(a, y, yhat)` cells. `Y` is the measured outcome
/// (the proxy under proxy bias).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedTable {
    /// Indexed by `4a + 2y + yhat`.
    counts: [u64; 8],
    /// Counts were collected conditional on selection (`S = 1`).
    #[serde(default)]
    pub conditional_on_selection: bool,
}

#[inline]
fn cell(a: u8, y: u8, yhat: u8) -> usize {
    ((a as usize) << 2) | ((y as usize) << 1) | yhat as usize
}

impl ObservedTable {
    pub fn zeros() -> Self {
        ObservedTable { counts: [0; 8], conditional_on_selection: false }
    }

    /// Build from counts in `4a + 2y + yhat` order.
    pub fn from_counts(counts: [u64; 8]) -> Result<Self> {
        let t = ObservedTable { counts, conditional_on_selection: false };
        if t.total() == 0 {
            return Err(Error::Table("table has no rows".into()));
        }
        Ok(t)
    }

    pub fn count(&self, a: u8, y: u8, yhat: u8) -> u64 {
        self.counts[cell(a, y, yhat)]
    }

    pub fn set(&mut self, a: u8, y: u8, yhat: u8, n: u64) {
        self.counts[cell(a, y, yhat)] = n;
    }

    pub fn counts(&self) -> &[u64; 8] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Exact cell frequency.
    pub fn frequency(&self, a: u8, y: u8, yhat: u8) -> BigRational {
        BigRational::new(BigInt::from(self.count(a, y, yhat)), BigInt::from(self.total()))
    }

    /// All eight `((a, y, yhat), frequency)` pairs in cell order.
    pub fn cells(&self) -> Vec<((u8, u8, u8), f64)> {
        let total = self.total() as f64;
        (0..8)
            .map(|i| (((i >> 2) as u8, ((i >> 1) & 1) as u8, (i & 1) as u8), self.counts[i] as f64 / total))
            .collect()
    }

    /// Canonical CSV text (all eight rows, header `A,Y,Yhat,count`).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("A,Y,Yhat,count\n");
        for ((a, y, yh), _) in self.cells() {
            s.push_str(&format!("{a},{y},{yh},{}\n", self.count(a, y, yh)));
        }
        s
    }
}

/// Parse `A,Y,Yhat,count` CSV text. Missing cells count as zero.
pub fn read_table(text: &str) -> Result<ObservedTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Table(e.to_string()))?.clone();
    let fields: Vec<&str> = header.iter().collect();
    if fields != ["A", "Y", "Yhat", "count"] {
        return Err(Error::Table(format!("bad header {:?}; expected A,Y,Yhat,count", fields.join(","))));
    }
    let mut table = ObservedTable::zeros();
    let mut seen = [false; 8];
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Table(e.to_string()))?;
        let row = line + 2;
        let bit = |i: usize| -> Result<u8> {
            match rec.get(i) {
                Some("0") => Ok(0),
                Some("1") => Ok(1),
                other => Err(Error::Table(format!("row {row}: value {other:?} is not 0 or 1"))),
            }
        };
        let (a, y, yh) = (bit(0)?, bit(1)?, bit(2)?);
        let n: u64 = rec
            .get(3)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::Table(format!("row {row}: count {:?} is not a nonnegative integer", rec.get(3))))?;
        let c = cell(a, y, yh);
        if seen[c] {
            return Err(Error::Table(format!("row {row}: duplicate cell ({a},{y},{yh})")));
        }
        seen[c] = true;
        table.counts[c] = n;
    }
    if table.total() == 0 {
        return Err(Error::Table("table is empty".into()));
    }
    Ok(table)
}
