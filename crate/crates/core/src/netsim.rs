//! Link failures and episode orchestration.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit;
use crate::error::{HsaError, Result};
use crate::protocol::{client_encode, relay_aggregate, server_decode, AggregateResult, ClientMessage, LocalModel};
use crate::scheme::Scheme;
use crate::topology::Topology;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DropKind {
    /// Every client-to-relay link fails with `client_relay`, every
    /// relay-to-server link with `relay_server`, independently.
    Bernoulli {
        client_relay: f64,
        relay_server: f64,
    },
    Fixed {
        failed_c2r: Vec<(usize, usize)>,
        failed_r2s: Vec<usize>,
    },
    /// All relay-to-server failure sets of size at most `r2s_max`, crossed
    /// with all client-to-relay failure sets of size at most `c2r_depth`.
    Exhaustive {
        r2s_max: usize,
        c2r_depth: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropModel {
    pub kind: DropKind,
    pub seed: u64,
}

impl DropModel {
    pub fn none() -> Self {
        Self { kind: DropKind::Fixed { failed_c2r: vec![], failed_r2s: vec![] }, seed: 0 }
    }

    pub fn validate(&self, topo: &Topology) -> Result<()> {
        let k = topo.nodes();
        match &self.kind {
            DropKind::Bernoulli { client_relay, relay_server } => {
                for p in [client_relay, relay_server] {
                    if !(0.0..=1.0).contains(p) {
                        return Err(HsaError::InvalidParams(format!("drop probability {p} outside [0, 1]")));
                    }
                }
            }
            DropKind::Fixed { failed_c2r, failed_r2s } => {
                if let Some(&(c, m)) = failed_c2r.iter().find(|&&(c, m)| c >= k || m >= k || !topo.hears(m, c)) {
                    return Err(HsaError::InvalidParams(format!("no link from client {} to relay {}", c + 1, m + 1)));
                }
                if let Some(m) = failed_r2s.iter().find(|&&m| m >= k) {
                    return Err(HsaError::InvalidParams(format!("relay {} out of range", m + 1)));
                }
            }
            DropKind::Exhaustive { .. } => {}
        }
        Ok(())
    }
}

/// Which transmissions failed, and the relay sets that follow.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRealization {
    pub failed_c2r: BTreeSet<(usize, usize)>,
    pub failed_r2s: BTreeSet<usize>,
    pub v1: Vec<usize>,
    pub v2: Vec<usize>,
}

impl LinkRealization {
    pub fn derive(topo: &Topology, failed_c2r: BTreeSet<(usize, usize)>, failed_r2s: BTreeSet<usize>) -> Self {
        let v1: Vec<usize> =
            (0..topo.nodes()).filter(|&m| topo.clients_of(m).iter().all(|&k| !failed_c2r.contains(&(k, m)))).collect();
        let v2 = v1.iter().copied().filter(|m| !failed_r2s.contains(m)).collect();
        Self { failed_c2r, failed_r2s, v1, v2 }
    }

    pub fn lossless(topo: &Topology) -> Self {
        Self::derive(topo, BTreeSet::new(), BTreeSet::new())
    }
}

fn links(topo: &Topology) -> Vec<(usize, usize)> {
    (0..topo.nodes()).flat_map(|k| topo.relays_of(k).iter().map(move |&m| (k, m))).sorted().collect()
}

/// The realizations an exhaustive model walks through, in trial order.
pub fn enumerate_exhaustive(topo: &Topology, r2s_max: usize, c2r_depth: usize) -> Vec<LinkRealization> {
    let all_links = links(topo);
    let k = topo.nodes();
    let mut out = Vec::new();
    for c_size in 0..=c2r_depth.min(all_links.len()) {
        for c2r in all_links.iter().copied().combinations(c_size) {
            for r_size in 0..=r2s_max.min(k) {
                for r2s in (0..k).combinations(r_size) {
                    out.push(LinkRealization::derive(topo, c2r.iter().copied().collect(), r2s.into_iter().collect()));
                }
            }
        }
    }
    out
}

pub fn exhaustive_count(topo: &Topology, r2s_max: usize, c2r_depth: usize) -> usize {
    let binom = |n: usize, r: usize| -> usize { (0..r).fold(1usize, |acc, i| acc * (n - i) / (i + 1)) };
    let l = links(topo).len();
    let k = topo.nodes();
    let c: usize = (0..=c2r_depth.min(l)).map(|i| binom(l, i)).sum();
    let r: usize = (0..=r2s_max.min(k)).map(|i| binom(k, i)).sum();
    c * r
}

/// Deterministic in `(model, trial)`.
pub fn realize_links(model: &DropModel, topo: &Topology, trial: usize) -> LinkRealization {
    match &model.kind {
        DropKind::Bernoulli { client_relay, relay_server } => {
            let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
            rng.set_stream(trial as u64);
            let failed_c2r = links(topo).into_iter().filter(|_| rng.gen_bool(*client_relay)).collect();
            let failed_r2s = (0..topo.nodes()).filter(|_| rng.gen_bool(*relay_server)).collect();
            LinkRealization::derive(topo, failed_c2r, failed_r2s)
        }
        DropKind::Fixed { failed_c2r, failed_r2s } => {
            LinkRealization::derive(topo, failed_c2r.iter().copied().collect(), failed_r2s.iter().copied().collect())
        }
        DropKind::Exhaustive { r2s_max, c2r_depth } => {
            let all = enumerate_exhaustive(topo, *r2s_max, *c2r_depth);
            all[trial % all.len()].clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Decoded(AggregateResult),
    InsufficientRelays { received: usize, required: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeAudit {
    pub relay_leakage: Vec<usize>,
    pub server_leakage: usize,
}

impl EpisodeAudit {
    pub fn is_clean(&self) -> bool {
        self.server_leakage == 0 && self.relay_leakage.iter().all(|&l| l == 0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub trial: usize,
    pub realization: LinkRealization,
    pub outcome: Outcome,
    /// Decoded integer sum equals the plaintext sum; `None` when nothing was decoded.
    pub oracle_match: Option<bool>,
    pub audit: EpisodeAudit,
}

/// Relay audits depend only on the scheme; server audits only on `V_2`.
pub struct AuditCache {
    relay: Vec<usize>,
    server: Mutex<BTreeMap<Vec<usize>, usize>>,
}

impl AuditCache {
    pub fn new(scheme: &Scheme) -> Result<Self> {
        Ok(Self { relay: audit::relay_leakages(scheme)?, server: Mutex::new(BTreeMap::new()) })
    }

    pub fn relay(&self) -> &[usize] {
        &self.relay
    }

    pub fn server(&self, scheme: &Scheme, v2: &[usize]) -> Result<usize> {
        if let Some(&l) = self.server.lock().expect("audit cache poisoned").get(v2) {
            return Ok(l);
        }
        let l = audit::server_leakage_for(scheme, v2)?;
        self.server.lock().expect("audit cache poisoned").insert(v2.to_vec(), l);
        Ok(l)
    }
}

/// Uniform models over `{0..q-1}`.
pub fn random_models(scheme: &Scheme, seed: u64) -> Vec<LocalModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..scheme.cfg.clients())
        .map(|k| LocalModel {
            owner: k,
            entries: (0..scheme.model_len).map(|_| rng.gen_range(0..scheme.cfg.q())).collect(),
        })
        .collect()
}

pub fn plaintext_sum(models: &[LocalModel]) -> Vec<u64> {
    let len = models.first().map_or(0, LocalModel::len);
    (0..len).map(|l| models.iter().map(|m| m.entries[l]).sum()).collect()
}

/// Encodes every client once; episodes only differ in what gets dropped.
pub fn encode_all(scheme: &Scheme, models: &[LocalModel]) -> Result<Vec<ClientMessage>> {
    let mut out = Vec::new();
    for model in models {
        out.extend(client_encode(&scheme.cfg, model, &scheme.schedule, &scheme.code, &scheme.topology)?);
    }
    Ok(out)
}

/// Encode, drop, aggregate, drop, decode; the audit runs regardless of the outcome.
pub fn run_episode(
    scheme: &Scheme,
    models: &[LocalModel],
    realization: &LinkRealization,
    trial: usize,
    cache: &AuditCache,
) -> Result<EpisodeResult> {
    let messages = encode_all(scheme, models)?;
    episode_from_messages(scheme, models, &messages, realization, trial, cache)
}

fn episode_from_messages(
    scheme: &Scheme,
    models: &[LocalModel],
    messages: &[ClientMessage],
    realization: &LinkRealization,
    trial: usize,
    cache: &AuditCache,
) -> Result<EpisodeResult> {
    let delivered: Vec<ClientMessage> =
        messages.iter().filter(|m| !realization.failed_c2r.contains(&(m.from, m.to))).cloned().collect();
    let forwarded: Vec<_> = (0..scheme.cfg.clients())
        .filter_map(|m| relay_aggregate(m, &delivered, &scheme.topology))
        .filter(|y| !realization.failed_r2s.contains(&y.from))
        .collect();
    debug_assert_eq!(forwarded.iter().map(|y| y.from).collect::<Vec<_>>(), realization.v2);
    let (outcome, oracle_match) = match server_decode(&forwarded, &scheme.code, &scheme.cfg, scheme.model_len) {
        Ok(result) => {
            let matched = result.integer_sum == plaintext_sum(models);
            (Outcome::Decoded(result), Some(matched))
        }
        Err(HsaError::InsufficientRelays { received, required }) => {
            (Outcome::InsufficientRelays { received, required }, None)
        }
        Err(e) => return Err(e),
    };
    let audit =
        EpisodeAudit { relay_leakage: cache.relay().to_vec(), server_leakage: cache.server(scheme, &realization.v2)? };
    Ok(EpisodeResult { trial, realization: realization.clone(), outcome, oracle_match, audit })
}

/// Number of episodes a sweep would run.
pub fn sweep_size(model: &DropModel, topo: &Topology, trials: usize) -> usize {
    match model.kind {
        DropKind::Exhaustive { r2s_max, c2r_depth } => exhaustive_count(topo, r2s_max, c2r_depth),
        _ => trials,
    }
}

/// One episode per realization, ordered by trial. A budget of 0 runs nothing.
pub fn sweep_patterns(
    scheme: &Scheme,
    models: &[LocalModel],
    model: &DropModel,
    trials: usize,
    budget: usize,
) -> Result<Vec<EpisodeResult>> {
    model.validate(&scheme.topology)?;
    if budget == 0 {
        return Ok(Vec::new());
    }
    let required = sweep_size(model, &scheme.topology, trials);
    if required > budget {
        return Err(HsaError::BudgetExceeded { required, budget });
    }
    let realizations: Vec<LinkRealization> = match model.kind {
        DropKind::Exhaustive { r2s_max, c2r_depth } => enumerate_exhaustive(&scheme.topology, r2s_max, c2r_depth),
        _ => (0..trials).map(|t| realize_links(model, &scheme.topology, t)).collect(),
    };
    let cache = AuditCache::new(scheme)?;
    let messages = encode_all(scheme, models)?;
    realizations
        .par_iter()
        .enumerate()
        .map(|(t, r)| episode_from_messages(scheme, models, &messages, r, t, &cache))
        .collect()
}
