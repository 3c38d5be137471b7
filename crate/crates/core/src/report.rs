//! Experiment configuration and the JSON report.
//!
//! Reports use 1-based relay and client ids, field elements as integers and
//! rationals as `{num, den}`. Everything is ordered, so identical
//! configurations give byte-identical reports.

use std::collections::BTreeSet;
use std::path::PathBuf;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::audit::{
    self, brute_force_mi, relay_leakage, relay_observation, server_leakage, server_observation, ENUMERATION_LIMIT,
};
use crate::error::{HsaError, Result};
use crate::ff::FieldMatrix;
use crate::metrics::{check_in_region, measured_rates, RateReport, RegionCheck};
use crate::netsim::{
    random_models, realize_links, sweep_patterns, AuditCache, DropKind, DropModel, EpisodeResult, Outcome,
};
use crate::scheme::{Scheme, SchemeParams};

/// Server sets are enumerated up to this many relays, sampled beyond.
pub const EXHAUSTIVE_MAX_K: usize = 6;
pub const SAMPLED_REALIZATIONS: usize = 1000;
pub const DEFAULT_BUDGET: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    pub s: usize,
    pub q: u64,
    #[serde(default)]
    pub p: Option<u64>,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_drop")]
    pub drop: String,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub vectors: Option<PathBuf>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Test hook: zero the key coefficient of this (relay, client) pair, 1-based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unmask: Option<(usize, usize)>,
}

fn default_drop() -> String {
    "none".into()
}

fn default_trials() -> usize {
    1
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

impl ExperimentConfig {
    pub fn new(k: usize, d: usize, s: usize, q: u64, l: usize) -> Self {
        Self {
            k,
            d,
            s,
            q,
            p: None,
            l,
            seed: 0,
            drop: default_drop(),
            trials: default_trials(),
            vectors: None,
            budget: DEFAULT_BUDGET,
            unmask: None,
        }
    }

    /// Flat `key = value` lines (`#` comments) or a JSON object.
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_value(Value::Object(parse_fields(text)?))?)
    }

    pub fn params(&self) -> SchemeParams {
        let p = SchemeParams::new(self.k, self.d, self.s, self.q, self.l);
        match self.p {
            Some(prime) => p.with_prime(prime),
            None => p,
        }
    }

    pub fn drop_model(&self) -> Result<DropModel> {
        parse_drop(&self.drop, self.k, self.seed)
    }

    /// Checks everything that can be checked before construction.
    pub fn validate(&self) -> Result<()> {
        let params = self.params();
        params.validate()?;
        let topo = crate::topology::Topology::build(self.k, self.d)?;
        self.drop_model()?.validate(&topo)?;
        if let Some((m, k)) = self.unmask {
            if m == 0 || k == 0 || !topo.hears(m - 1, k - 1) {
                return Err(HsaError::InvalidParams(format!("unmask: relay {m} does not hear client {k}")));
            }
        }
        Ok(())
    }
}

/// Config file fields as JSON values, for merging with flags.
pub fn parse_fields(text: &str) -> Result<Map<String, Value>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        return match serde_json::from_str(trimmed)? {
            Value::Object(m) => Ok(m),
            _ => unreachable!(),
        };
    }
    let mut map = Map::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| HsaError::InvalidParams(format!("config line {}: expected key = value", n + 1)))?;
        let value = value.trim();
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        map.insert(key.trim().to_string(), parsed);
    }
    Ok(map)
}

/// `none`, `bernoulli:P1,P2`, `fixed:r2s=1,3;c2r=2-1` (client-relay pairs)
/// or `exhaustive[:r2s=N;c2r=N]`. Ids are 1-based.
pub fn parse_drop(spec: &str, clients: usize, seed: u64) -> Result<DropModel> {
    let bad = |why: &str| HsaError::InvalidParams(format!("drop model {spec:?}: {why}"));
    let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
    let fields = || -> Result<Vec<(&str, &str)>> {
        args.split(';')
            .filter(|f| !f.trim().is_empty())
            .map(|f| f.split_once('=').ok_or_else(|| bad("expected name=value")))
            .collect()
    };
    let id = |t: &str| -> Result<usize> {
        match t.trim().parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v - 1),
            _ => Err(bad("ids are positive integers")),
        }
    };
    let kind = match kind.trim() {
        "none" => DropKind::Fixed { failed_c2r: vec![], failed_r2s: vec![] },
        "bernoulli" => {
            let probs: Vec<f64> = args
                .split(',')
                .map(|t| t.trim().parse().map_err(|_| bad("expected two probabilities")))
                .try_collect()?;
            match probs[..] {
                [client_relay, relay_server] => DropKind::Bernoulli { client_relay, relay_server },
                _ => return Err(bad("expected two probabilities")),
            }
        }
        "fixed" => {
            let (mut failed_c2r, mut failed_r2s) = (vec![], vec![]);
            for (name, value) in fields()? {
                let items = value.split(',').filter(|t| !t.trim().is_empty());
                match name.trim() {
                    "r2s" => failed_r2s = items.map(id).try_collect()?,
                    "c2r" => {
                        failed_c2r = items
                            .map(|t| {
                                let (c, m) = t.split_once('-').ok_or_else(|| bad("c2r links are client-relay"))?;
                                Ok((id(c)?, id(m)?))
                            })
                            .collect::<Result<_>>()?
                    }
                    other => return Err(bad(&format!("unknown field {other}"))),
                }
            }
            DropKind::Fixed { failed_c2r, failed_r2s }
        }
        "exhaustive" => {
            let (mut r2s_max, mut c2r_depth) = (clients, 0);
            for (name, value) in fields()? {
                let n = value.trim().parse().map_err(|_| bad("expected a count"))?;
                match name.trim() {
                    "r2s" => r2s_max = n,
                    "c2r" => c2r_depth = n,
                    other => return Err(bad(&format!("unknown field {other}"))),
                }
            }
            DropKind::Exhaustive { r2s_max, c2r_depth }
        }
        _ => return Err(bad("unknown kind")),
    };
    Ok(DropModel { kind, seed })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub p: u64,
    pub segments: usize,
    pub segment_len: usize,
    pub source_len: usize,
    pub mask_coord: usize,
    pub attempts: usize,
    #[serde(rename = "G_S")]
    pub generator: Vec<Vec<u64>>,
    pub generator_sha256: String,
    pub code_sha256: String,
    /// Relay-client pairs whose key coefficient was zeroed by the test hook.
    pub unmasked: Vec<(usize, usize)>,
}

fn matrix_bytes(m: &FieldMatrix, out: &mut Vec<u8>) {
    out.extend((m.rows() as u64).to_le_bytes());
    out.extend((m.cols() as u64).to_le_bytes());
    for r in 0..m.rows() {
        for &v in m.row(r) {
            out.extend(v.to_le_bytes());
        }
    }
}

pub fn generator_digest(g: &FieldMatrix) -> String {
    let mut bytes = Vec::new();
    matrix_bytes(g, &mut bytes);
    hex::encode(Sha256::digest(&bytes))
}

/// Digest over encoders, combination matrices, mask coordinates and unmasked pairs, in key order.
pub fn code_digest(code: &crate::gc_code::GcCode) -> String {
    let mut bytes = Vec::new();
    for (&(m, k), w) in code.encoders() {
        bytes.extend((m as u64).to_le_bytes());
        bytes.extend((k as u64).to_le_bytes());
        for &v in w.as_slice() {
            bytes.extend(v.to_le_bytes());
        }
        bytes.extend(code.mask_coefficient(m, k).to_le_bytes());
    }
    for (pattern, c) in code.combos() {
        for &m in pattern {
            bytes.extend((m as u64).to_le_bytes());
        }
        matrix_bytes(c, &mut bytes);
    }
    for k in 0..code.clients() {
        bytes.extend((code.mask_coord(k) as u64).to_le_bytes());
    }
    hex::encode(Sha256::digest(&bytes))
}

pub fn summarize(scheme: &Scheme) -> SchemeSummary {
    SchemeSummary {
        p: scheme.cfg.p(),
        segments: scheme.segments(),
        segment_len: scheme.code.segment_len(),
        source_len: scheme.schedule.source_len,
        mask_coord: scheme.code.mask_coord(0) + 1,
        attempts: scheme.attempts,
        generator: scheme.schedule.generator.to_rows(),
        generator_sha256: generator_digest(&scheme.schedule.generator),
        code_sha256: code_digest(&scheme.code),
        unmasked: scheme.code.unmasked_pairs().iter().map(|&(m, k)| (m + 1, k + 1)).collect(),
    }
}

fn one_based(v: impl IntoIterator<Item = usize>) -> Vec<usize> {
    v.into_iter().map(|x| x + 1).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub trial: usize,
    /// (client, relay) pairs.
    pub failed_c2r: Vec<(usize, usize)>,
    pub failed_r2s: Vec<usize>,
    #[serde(rename = "V1")]
    pub v1: Vec<usize>,
    #[serde(rename = "V2")]
    pub v2: Vec<usize>,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finite_sum: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integer_sum: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub used_pattern: Option<Vec<usize>>,
    pub oracle_match: Option<bool>,
    pub relay_leakage: Vec<usize>,
    pub server_leakage: usize,
}

impl From<&EpisodeResult> for EpisodeReport {
    fn from(e: &EpisodeResult) -> Self {
        let r = &e.realization;
        let (status, finite_sum, integer_sum, used_pattern) = match &e.outcome {
            Outcome::Decoded(a) => (
                "decoded",
                Some(a.finite_sum.as_slice().to_vec()),
                Some(a.integer_sum.clone()),
                Some(one_based(a.used_pattern.iter().copied())),
            ),
            Outcome::InsufficientRelays { .. } => ("insufficient_relays", None, None, None),
        };
        Self {
            trial: e.trial,
            failed_c2r: r.failed_c2r.iter().map(|&(k, m)| (k + 1, m + 1)).collect(),
            failed_r2s: one_based(r.failed_r2s.iter().copied()),
            v1: one_based(r.v1.iter().copied()),
            v2: one_based(r.v2.iter().copied()),
            status: status.into(),
            finite_sum,
            integer_sum,
            used_pattern,
            oracle_match: e.oracle_match,
            relay_leakage: e.audit.relay_leakage.clone(),
            server_leakage: e.audit.server_leakage,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerAudit {
    /// `exhaustive` over every relay subset, or `sampled` link realizations.
    pub mode: String,
    pub checked: usize,
    pub max_leakage: usize,
    /// Relay sets (1-based) with nonzero leakage.
    pub leaking: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BruteForceCheck {
    pub observer: String,
    /// `agreement`, `disagreement` or `skipped`.
    pub status: String,
    pub rank_leakage: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutual_information: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub relay_leakage: Vec<usize>,
    pub server: ServerAudit,
    pub brute_force: Vec<BruteForceCheck>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub decodes_when_sufficient: bool,
    pub insufficient_when_short: bool,
    pub relay_secure: bool,
    pub server_secure: bool,
    pub brute_force_agreement: Option<bool>,
    pub rates_in_region: bool,
    pub rates_optimal: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub config: ExperimentConfig,
    pub scheme: SchemeSummary,
    pub episodes: Vec<EpisodeReport>,
    pub audit: AuditReport,
    pub rates: RateReport,
    pub region: RegionCheck,
    pub verdicts: Verdicts,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Builds the scheme a config describes, with the unmask hook applied.
pub fn build_scheme(config: &ExperimentConfig) -> Result<Scheme> {
    config.validate()?;
    let scheme = match &config.vectors {
        Some(path) => {
            let v = crate::vectors::ExampleVectors::load(path)?;
            if (v.k, v.d, v.s, v.q, v.l) != (config.k, config.d, config.s, config.q, config.l) {
                return Err(HsaError::InvalidParams("vector file parameters differ from the config".into()));
            }
            Scheme::from_example(&v, config.seed)?
        }
        None => Scheme::build(&config.params(), config.seed)?,
    };
    Ok(match config.unmask {
        Some((m, k)) => scheme.with_code(scheme.code.with_unmasked(m - 1, k - 1)),
        None => scheme,
    })
}

/// Server leakage over every relay subset for small `K`, or over sampled
/// lossy realizations otherwise.
pub fn audit_server(scheme: &Scheme, seed: u64, cache: &AuditCache) -> Result<ServerAudit> {
    let k = scheme.cfg.clients();
    let (mode, sets): (&str, BTreeSet<Vec<usize>>) = if k <= EXHAUSTIVE_MAX_K {
        ("exhaustive", (0..=k).flat_map(|n| (0..k).combinations(n)).collect())
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sets = BTreeSet::new();
        for t in 0..SAMPLED_REALIZATIONS {
            let model = DropModel {
                kind: DropKind::Bernoulli {
                    client_relay: rng.gen_range(0.0..0.3),
                    relay_server: rng.gen_range(0.0..0.6),
                },
                seed: rng.gen(),
            };
            sets.insert(realize_links(&model, &scheme.topology, t).v2);
        }
        ("sampled", sets)
    };
    let mut leaking = Vec::new();
    let mut max_leakage = 0;
    for set in &sets {
        let l = cache.server(scheme, set)?;
        max_leakage = max_leakage.max(l);
        if l > 0 {
            leaking.push(one_based(set.iter().copied()));
        }
    }
    let checked = if mode == "exhaustive" { sets.len() } else { SAMPLED_REALIZATIONS };
    Ok(ServerAudit { mode: mode.into(), checked, max_leakage, leaking })
}

/// Enumeration cross-check for every relay and the full-view server.
pub fn brute_force_checks(scheme: &Scheme) -> Result<Vec<BruteForceCheck>> {
    let k = scheme.cfg.clients();
    let p = scheme.cfg.p();
    let targets = audit::sum_targets(scheme.cfg.field(), k, scheme.model_len);
    let mut out = Vec::new();
    let all: Vec<usize> = (0..k).collect();
    let observations = (0..k)
        .map(|m| relay_observation(scheme, m).map(|o| (format!("relay {}", m + 1), o, None)))
        .chain(std::iter::once(
            server_observation(scheme, &all).map(|o| ("server, all relays".to_string(), o, Some(&targets))),
        ));
    for item in observations {
        let (observer, obs, cond) = item?;
        let rank = match cond {
            None => relay_leakage(&obs)?,
            Some(t) => server_leakage(&obs, t)?,
        };
        let check = match brute_force_mi(&obs, scheme.cfg.q(), cond, ENUMERATION_LIMIT) {
            Ok(mi) => {
                let agree = (rank == 0) == mi.is_zero() && mi.at_most_log_units(rank, p);
                BruteForceCheck {
                    observer,
                    status: if agree { "agreement" } else { "disagreement" }.into(),
                    rank_leakage: rank,
                    mutual_information: Some(audit::describe(&mi, p)),
                    reason: None,
                }
            }
            Err(HsaError::TooLarge { size, limit }) => BruteForceCheck {
                observer,
                status: "skipped".into(),
                rank_leakage: rank,
                mutual_information: None,
                reason: Some(format!("enumeration size {size} exceeds budget {limit}")),
            },
            Err(e) => return Err(e),
        };
        out.push(check);
    }
    Ok(out)
}

/// Runs the configured episodes and audits. `brute_force` adds the enumeration cross-check.
pub fn build_report(command: &str, config: &ExperimentConfig, run_episodes: bool, brute_force: bool) -> Result<Report> {
    let scheme = build_scheme(config)?;
    let cache = AuditCache::new(&scheme)?;
    let episodes = if run_episodes && config.trials > 0 {
        let models = random_models(&scheme, config.seed ^ 0x6d6f_6465_6c73);
        sweep_patterns(&scheme, &models, &config.drop_model()?, config.trials, config.budget)?
    } else {
        Vec::new()
    };
    let server = audit_server(&scheme, config.seed, &cache)?;
    let brute = if brute_force { brute_force_checks(&scheme)? } else { Vec::new() };
    let rates = measured_rates(&scheme)?;
    let region = check_in_region(&rates);
    let required = config.k - config.s;
    let decodes_when_sufficient =
        episodes.iter().filter(|e| e.realization.v2.len() >= required).all(|e| e.oracle_match == Some(true));
    let insufficient_when_short = episodes
        .iter()
        .filter(|e| e.realization.v2.len() < required)
        .all(|e| matches!(e.outcome, Outcome::InsufficientRelays { .. }));
    let relay_secure = cache.relay().iter().all(|&l| l == 0);
    let server_secure = server.max_leakage == 0 && episodes.iter().all(|e| e.audit.server_leakage == 0);
    let checked: Vec<&BruteForceCheck> = brute.iter().filter(|c| c.status != "skipped").collect();
    let brute_force_agreement = (!checked.is_empty()).then(|| checked.iter().all(|c| c.status == "agreement"));
    let verdicts = Verdicts {
        decodes_when_sufficient,
        insufficient_when_short,
        relay_secure,
        server_secure,
        brute_force_agreement,
        rates_in_region: region.in_region.all(),
        rates_optimal: region.equal.all(),
        pass: decodes_when_sufficient
            && insufficient_when_short
            && relay_secure
            && server_secure
            && brute_force_agreement != Some(false)
            && region.in_region.all(),
    };
    Ok(Report {
        command: command.into(),
        config: config.clone(),
        scheme: summarize(&scheme),
        episodes: episodes.iter().map(EpisodeReport::from).collect(),
        audit: AuditReport { relay_leakage: cache.relay().to_vec(), server, brute_force: brute },
        rates,
        region,
        verdicts,
    })
}
