//! A complete, audited instance: field, topology, key schedule and code.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit;
use crate::error::{HsaError, Result};
use crate::ff::{FieldConfig, FieldVector};
use crate::gc_code::{construct_code, GcCode};
use crate::keygen::{build_gs, expand_keys, seed_width, KeySchedule, SourceRandomness};
use crate::protocol::{layout_for, padded_len, TraceLayout};
use crate::topology::Topology;
use crate::vectors::ExampleVectors;

const SCHEME_ATTEMPTS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub clients: usize,
    pub degree: usize,
    pub stragglers: usize,
    pub alphabet: u64,
    /// Defaults to the smallest prime above `K(q-1)`.
    pub prime: Option<u64>,
    pub model_len: usize,
}

impl SchemeParams {
    pub fn new(clients: usize, degree: usize, stragglers: usize, alphabet: u64, model_len: usize) -> Self {
        Self { clients, degree, stragglers, alphabet, prime: None, model_len }
    }

    pub fn with_prime(mut self, p: u64) -> Self {
        self.prime = Some(p);
        self
    }

    pub fn validate(&self) -> Result<FieldConfig> {
        let cfg = match self.prime {
            Some(p) => FieldConfig::new(p, self.alphabet, self.clients)?,
            None => FieldConfig::with_default_prime(self.alphabet, self.clients)?,
        };
        if self.degree == 0 || self.degree >= self.clients {
            return Err(HsaError::InvalidParams(format!(
                "need 1 <= d <= K-1, got d={}, K={}",
                self.degree, self.clients
            )));
        }
        if self.stragglers >= self.degree {
            return Err(HsaError::InvalidParams(format!("need s < d, got s={}, d={}", self.stragglers, self.degree)));
        }
        if self.model_len == 0 {
            return Err(HsaError::InvalidParams("model length L must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn segment_len(&self) -> usize {
        self.degree - self.stragglers
    }

    pub fn segments(&self) -> usize {
        padded_len(self.model_len, self.segment_len()) / self.segment_len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scheme {
    pub cfg: FieldConfig,
    pub topology: Topology,
    pub schedule: KeySchedule,
    pub code: GcCode,
    pub model_len: usize,
    /// Construction attempts consumed before the audit accepted the scheme.
    pub attempts: usize,
}

impl Scheme {
    /// Draws generator, code and source symbols from `seed`, and redraws
    /// until relay and full-observation server audits report zero leakage.
    pub fn build(params: &SchemeParams, seed: u64) -> Result<Self> {
        let cfg = params.validate()?;
        let topology = Topology::build(params.clients, params.degree)?;
        let segments = params.segments();
        let width = seed_width(params.clients, params.degree);
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        for attempt in 1..=SCHEME_ATTEMPTS {
            let generator = build_gs(&cfg, params.degree, seeds.next_u64())?;
            let code = construct_code(&cfg, &topology, params.stragglers, seeds.next_u64())?;
            let source = SourceRandomness::draw(cfg.field(), segments * width, seeds.next_u64());
            let schedule = expand_keys(&generator, &source, segments)?;
            let scheme = Self {
                cfg,
                topology: topology.clone(),
                schedule,
                code,
                model_len: params.model_len,
                attempts: attempt,
            };
            if audit::scheme_is_secure(&scheme)? {
                return Ok(scheme);
            }
        }
        Err(HsaError::ConstructionFailed {
            stage: "scheme",
            attempts: SCHEME_ATTEMPTS,
            reason: format!("no draw passed the security audit over Z_{}; raise p", cfg.p()),
        })
    }

    /// The worked example from its vector file, with source symbols drawn from `source_seed`.
    pub fn from_example(v: &ExampleVectors, source_seed: u64) -> Result<Self> {
        let cfg = v.config()?;
        let topology = v.topology()?;
        let generator = v.generator()?;
        let code = v.code()?;
        let segments = v.l / (v.d - v.s);
        let source = SourceRandomness::draw(cfg.field(), segments * generator.cols(), source_seed);
        let schedule = expand_keys(&generator, &source, segments)?;
        Ok(Self { cfg, topology, schedule, code, model_len: v.l, attempts: 1 })
    }

    pub fn params(&self) -> SchemeParams {
        SchemeParams {
            clients: self.cfg.clients(),
            degree: self.topology.degree(),
            stragglers: self.code.stragglers(),
            alphabet: self.cfg.q(),
            prime: Some(self.cfg.p()),
            model_len: self.model_len,
        }
    }

    pub fn layout(&self) -> TraceLayout {
        layout_for(&self.code, &self.schedule, self.model_len)
    }

    pub fn segments(&self) -> usize {
        self.schedule.segments()
    }

    /// Same scheme with the source symbols redrawn.
    pub fn with_source_seed(&self, seed: u64) -> Result<Self> {
        let source = SourceRandomness::draw(self.cfg.field(), self.schedule.source.len(), seed);
        let schedule = expand_keys(&self.schedule.generator, &source, self.segments())?;
        Ok(Self { schedule, ..self.clone() })
    }

    /// Same scheme with explicit source symbols.
    pub fn with_source(&self, symbols: Vec<u64>) -> Result<Self> {
        let source = SourceRandomness { symbols: FieldVector::from_values(self.cfg.field(), symbols), seed: 0 };
        let schedule = expand_keys(&self.schedule.generator, &source, self.segments())?;
        Ok(Self { schedule, ..self.clone() })
    }

    pub fn with_code(&self, code: GcCode) -> Self {
        Self { code, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_deterministic() {
        let p = SchemeParams::new(6, 3, 1, 3, 4);
        assert_eq!(Scheme::build(&p, 99).unwrap(), Scheme::build(&p, 99).unwrap());
    }

    #[test]
    fn params_are_validated() {
        assert!(SchemeParams::new(5, 5, 0, 3, 2).validate().is_err());
        assert!(SchemeParams::new(5, 3, 3, 3, 2).validate().is_err());
        assert!(SchemeParams::new(5, 3, 1, 3, 0).validate().is_err());
        assert!(SchemeParams::new(5, 3, 1, 3, 2).with_prime(7).validate().is_err());
        assert_eq!(SchemeParams::new(5, 3, 1, 3, 2).validate().unwrap().p(), 11);
    }

    #[test]
    fn example_loads() {
        let s = Scheme::from_example(&ExampleVectors::bundled().unwrap(), 0).unwrap();
        assert_eq!(s.segments(), 1);
        assert_eq!(s.schedule.source.len(), 3);
        assert!(audit::scheme_is_secure(&s).unwrap());
    }

    #[test]
    fn segments_round_up() {
        let p = SchemeParams::new(5, 4, 1, 3, 4);
        assert_eq!(p.segments(), 2);
    }
}
