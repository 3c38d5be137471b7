//! Test-vector file for the `K=5, d=3, s=1` worked example.
//!
//! JSON, 1-based indices. `encoders[m][k]` is `w_{m,k}` (or `null` when relay
//! `m` does not hear client `k`); `combos` lists one matrix per straggler
//! pattern; `expected_*` sections hold the displayed messages, decodes and
//! rates; `errata` lists displayed coefficients that are known to be wrong,
//! with the value the rest of the example forces.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HsaError, Result};
use crate::ff::{FieldConfig, FieldMatrix, FieldVector};
use crate::gc_code::GcCode;
use crate::topology::Topology;

pub const BUNDLED_EXAMPLE: &str = include_str!("../vectors/example_k5_d3_s1.json");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleVectors {
    #[serde(default)]
    pub description: String,
    pub p: u64,
    pub q: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    pub s: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub mask_coord: usize,
    #[serde(rename = "G_S")]
    pub generator: Vec<Vec<u64>>,
    pub encoders: Vec<Vec<Option<Vec<u64>>>>,
    pub combos: Vec<ComboEntry>,
    pub expected_messages: ExpectedMessages,
    #[serde(default)]
    pub expected_decodes: Vec<ExpectedDecode>,
    pub expected_rates: ExpectedRates,
    #[serde(default)]
    pub errata: Vec<Erratum>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComboEntry {
    pub pattern: Vec<usize>,
    pub matrix: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedMessages {
    pub keys: Vec<ExpectedKey>,
    pub client: Vec<ExpectedClientMessage>,
    pub relay: Vec<ExpectedRelayMessage>,
    pub key_mixing: Vec<Vec<u64>>,
}

/// `S_k` as coefficients over the source symbols.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedKey {
    pub client: usize,
    pub source: Vec<u64>,
}

/// `X_{m,k}` = `theta . Theta_k` + `key * S_k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedClientMessage {
    pub relay: usize,
    pub client: usize,
    pub theta: Vec<u64>,
    pub key: u64,
}

/// `Y_m` = sum over clients of `theta[k] . Theta_k` + `keys[k] * S_k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedRelayMessage {
    pub relay: usize,
    pub theta: Vec<Vec<u64>>,
    pub keys: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedDecode {
    pub missing: Vec<usize>,
    pub rows: Vec<DecodeRow>,
}

/// `sum_m coefficients[m] Y_m` equals coordinate `coordinate` of the all-client sum.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeRow {
    pub coefficients: Vec<u64>,
    pub coordinate: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationalValue {
    pub num: u64,
    pub den: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedRates {
    #[serde(rename = "R1")]
    pub r1: RationalValue,
    #[serde(rename = "R2")]
    pub r2: RationalValue,
    #[serde(rename = "RS")]
    pub rs: RationalValue,
    #[serde(rename = "RSsum")]
    pub rs_sum: RationalValue,
}

/// A displayed `theta` coefficient (`message` is `"X"` or `"Y"`) that the
/// rest of the example contradicts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Erratum {
    pub message: String,
    pub relay: usize,
    pub client: usize,
    pub coordinate: usize,
    pub displayed: u64,
    pub corrected: u64,
    #[serde(default)]
    pub reason: String,
}

fn bad(msg: impl Into<String>) -> HsaError {
    HsaError::VectorFile(msg.into())
}

impl ExampleVectors {
    pub fn bundled() -> Result<Self> {
        Self::parse(BUNDLED_EXAMPLE)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let v: Self = serde_json::from_str(text)?;
        v.check_shape()?;
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn check_shape(&self) -> Result<()> {
        if self.generator.len() != self.k {
            return Err(bad(format!("G_S has {} rows, expected K={}", self.generator.len(), self.k)));
        }
        if self.encoders.len() != self.k || self.encoders.iter().any(|r| r.len() != self.k) {
            return Err(bad("encoders must be a K x K table"));
        }
        if self.d <= self.s || !self.l.is_multiple_of(self.d - self.s) {
            return Err(bad("L must be a multiple of d-s with s < d"));
        }
        if self.mask_coord == 0 || self.mask_coord > self.d - self.s {
            return Err(bad("mask_coord out of range"));
        }
        Ok(())
    }

    pub fn config(&self) -> Result<FieldConfig> {
        FieldConfig::new(self.p, self.q, self.k)
    }

    pub fn topology(&self) -> Result<Topology> {
        Topology::build(self.k, self.d)
    }

    pub fn generator(&self) -> Result<FieldMatrix> {
        let cols = self.generator.first().map_or(0, Vec::len);
        FieldMatrix::from_rows(self.config()?.field(), cols, &self.generator)
    }

    pub fn code(&self) -> Result<GcCode> {
        let cfg = self.config()?;
        let f = cfg.field();
        let mut encoders = BTreeMap::new();
        for (m, row) in self.encoders.iter().enumerate() {
            for (k, w) in row.iter().enumerate() {
                if let Some(w) = w {
                    encoders.insert((m, k), FieldVector::from_values(f, w.iter().copied()));
                }
            }
        }
        let mut combos = BTreeMap::new();
        for entry in &self.combos {
            if entry.pattern.iter().any(|&m| m == 0 || m > self.k) {
                return Err(bad(format!("pattern {:?} out of range", entry.pattern)));
            }
            let mut pattern: Vec<usize> = entry.pattern.iter().map(|m| m - 1).collect();
            pattern.sort_unstable();
            combos.insert(pattern, FieldMatrix::from_rows(f, self.k, &entry.matrix)?);
        }
        GcCode::from_parts(f, self.topology()?, self.s, encoders, combos, vec![self.mask_coord - 1; self.k])
    }

    /// Displayed `theta` coefficient after applying any matching erratum.
    pub fn corrected(&self, message: &str, relay: usize, client: usize, coordinate: usize, displayed: u64) -> u64 {
        self.errata
            .iter()
            .find(|e| e.message == message && e.relay == relay && e.client == client && e.coordinate == coordinate)
            .map_or(displayed, |e| e.corrected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_file_parses() {
        let v = ExampleVectors::bundled().unwrap();
        assert_eq!((v.p, v.k, v.d, v.s, v.l), (13, 5, 3, 1, 2));
        assert_eq!(v.expected_messages.client.len(), 15);
        assert_eq!(v.combos.len(), 5);
        assert!(v.code().unwrap().verify_recovery());
    }

    #[test]
    fn displayed_coefficient_breaks_four_patterns() {
        // Reverting the erratum reproduces the literal display; only the
        // pattern that never uses relay 1 still decodes.
        let mut v = ExampleVectors::bundled().unwrap();
        v.encoders[0][1] = Some(vec![3, 3]);
        let code = v.code().unwrap();
        let a = code.coefficient_matrix();
        let t = code.sum_targets();
        let ok: Vec<Vec<usize>> =
            code.combos().iter().filter(|(_, c)| c.mul(&a).unwrap() == t).map(|(p, _)| p.clone()).collect();
        assert_eq!(ok, vec![vec![0]]);
    }

    #[test]
    fn corrected_value_is_forced() {
        let mut v = ExampleVectors::bundled().unwrap();
        let mut good = Vec::new();
        for x in 0..13 {
            v.encoders[0][1] = Some(vec![3, x]);
            if v.code().unwrap().verify_recovery() {
                good.push(x);
            }
        }
        assert_eq!(good, vec![10]);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(BUNDLED_EXAMPLE).unwrap();
        v["G_S"].as_array_mut().unwrap().pop();
        assert!(matches!(ExampleVectors::parse(&v.to_string()), Err(HsaError::VectorFile(_))));
        assert!(ExampleVectors::parse("{").is_err());
    }
}
