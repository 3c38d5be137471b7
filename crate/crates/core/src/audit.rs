//! Security audits.
//!
//! An observation is a linear map of the models plus a linear map of the
//! uniform source symbols. For such observations leakage is a rank question:
//! a combination `v` of observed symbols that cancels all randomness
//! (`v M_z = 0`) reveals `v M_theta`. Relay security needs every such
//! combination to reveal nothing; server security allows it to reveal only
//! sums of all clients. `brute_force_mi` enumerates tiny instances exactly as
//! an independent check on the rank arithmetic.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigUint;
use num_integer::Integer;
use num_rational::Ratio;
use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::error::{HsaError, Result};
use crate::ff::{FieldMatrix, Fp};
use crate::protocol::{client_trace, MessageTrace, TraceLayout};
use crate::scheme::Scheme;

/// Default ceiling on `alphabet^{#theta} * p^{#z}` for exact enumeration.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observer {
    Relay(usize),
    /// Server holding the relay messages from this set.
    Server(Vec<usize>),
}

/// Observed symbols as `M_theta . Theta + M_z . Z`. Theta columns cover the
/// real (unpadded) model entries, `k * L + l`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearObservation {
    pub theta: FieldMatrix,
    pub source: FieldMatrix,
    pub observer: Observer,
}

impl LinearObservation {
    fn from_traces(layout: &TraceLayout, field: Fp, traces: &[MessageTrace], observer: Observer) -> Result<Self> {
        let real = layout.real_theta_cols();
        let mut theta = FieldMatrix::zeros(field, 0, real.len());
        let mut source = FieldMatrix::zeros(field, 0, layout.source_len);
        for t in traces {
            theta = theta.vstack(&t.theta.select_cols(&real))?;
            source = source.vstack(&t.source)?;
        }
        Ok(Self { theta, source, observer })
    }

    pub fn rows(&self) -> usize {
        self.theta.rows()
    }
}

/// Everything relay `m` would receive: `X_{m,k}` for every `k` in `U_m`.
pub fn relay_observation(scheme: &Scheme, relay: usize) -> Result<LinearObservation> {
    let layout = scheme.layout();
    let traces = scheme
        .topology
        .clients_of(relay)
        .iter()
        .map(|&k| client_trace(&scheme.cfg, &layout, &scheme.schedule, &scheme.code, relay, k))
        .collect::<Result<Vec<_>>>()?;
    LinearObservation::from_traces(&layout, scheme.cfg.field(), &traces, Observer::Relay(relay))
}

/// Everything the server sees when the relays in `relays` get through.
pub fn server_observation(scheme: &Scheme, relays: &[usize]) -> Result<LinearObservation> {
    let layout = scheme.layout();
    let mut traces = Vec::with_capacity(relays.len());
    for &m in relays {
        let mut acc: Option<MessageTrace> = None;
        for &k in scheme.topology.clients_of(m) {
            let t = client_trace(&scheme.cfg, &layout, &scheme.schedule, &scheme.code, m, k)?;
            acc = Some(match acc {
                None => t,
                Some(prev) => MessageTrace { theta: add(&prev.theta, &t.theta), source: add(&prev.source, &t.source) },
            });
        }
        traces.extend(acc);
    }
    let mut sorted = relays.to_vec();
    sorted.sort_unstable();
    LinearObservation::from_traces(&layout, scheme.cfg.field(), &traces, Observer::Server(sorted))
}

fn add(a: &FieldMatrix, b: &FieldMatrix) -> FieldMatrix {
    let f = a.field();
    let mut out = a.clone();
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            out.set(r, c, f.add(a.get(r, c), b.get(r, c)));
        }
    }
    out
}

/// Rows `l`: coefficient 1 on `Theta_k(l)` for every client, nothing else.
pub fn sum_targets(field: Fp, clients: usize, model_len: usize) -> FieldMatrix {
    let mut t = FieldMatrix::zeros(field, model_len, clients * model_len);
    for l in 0..model_len {
        for k in 0..clients {
            t.set(l, k * model_len + l, 1);
        }
    }
    t
}

/// Dimension of the randomness-free combinations that still depend on the
/// models: `rank([M_theta | M_z]) - rank(M_z)`. Zero means no leakage.
pub fn relay_leakage(obs: &LinearObservation) -> Result<usize> {
    if obs.rows() == 0 {
        return Ok(0);
    }
    let joint = obs.theta.hstack(&obs.source)?;
    Ok(joint.rank() - obs.source.rank())
}

/// Dimension of the randomness-free combinations whose model part lies
/// outside the span of the all-client sums.
pub fn server_leakage(obs: &LinearObservation, sum_targets: &FieldMatrix) -> Result<usize> {
    let rows = obs.rows();
    if rows == 0 {
        return Ok(0);
    }
    let cancelling = rows - obs.source.rank();
    let joint = obs.theta.hstack(&obs.source)?;
    let targets = sum_targets.hstack(&FieldMatrix::zeros(obs.source.field(), sum_targets.rows(), obs.source.cols()))?;
    // dim{v : v J in rowspace(targets)} = dim ker(J^T) + dim(rowspace J cap rowspace targets)
    let benign = (rows - joint.rank()) + joint.row_space_intersection_dim(&targets)?;
    Ok(cancelling - benign)
}

/// Relay leakage for every relay.
pub fn relay_leakages(scheme: &Scheme) -> Result<Vec<usize>> {
    (0..scheme.cfg.clients()).map(|m| relay_leakage(&relay_observation(scheme, m)?)).collect()
}

pub fn server_leakage_for(scheme: &Scheme, relays: &[usize]) -> Result<usize> {
    let obs = server_observation(scheme, relays)?;
    server_leakage(&obs, &sum_targets(scheme.cfg.field(), scheme.cfg.clients(), scheme.model_len))
}

/// Zero leakage at every relay and at a server that hears every relay. The
/// latter covers every smaller relay set: a cancelling combination over a
/// subset is also one over the full set.
pub fn scheme_is_secure(scheme: &Scheme) -> Result<bool> {
    if relay_leakages(scheme)?.iter().any(|&l| l > 0) {
        return Ok(false);
    }
    let all: Vec<usize> = (0..scheme.cfg.clients()).collect();
    Ok(server_leakage_for(scheme, &all)? == 0)
}

/// Mutual information as an exact sum `(1/N) sum_r e_r ln r` over primes `r`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactInformation {
    /// Prime -> integer exponent, zero exponents removed.
    pub exponents: BTreeMap<u64, i64>,
    pub denominator: u64,
}

impl ExactInformation {
    pub fn is_zero(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn nats(&self) -> f64 {
        self.exponents.iter().map(|(&r, &e)| e as f64 * (r as f64).ln()).sum::<f64>() / self.denominator as f64
    }

    pub fn bits(&self) -> f64 {
        self.nats() / std::f64::consts::LN_2
    }

    /// The value in units of `log base`, when that is rational.
    pub fn in_log_units(&self, base: u64) -> Option<Ratio<i64>> {
        if self.is_zero() {
            return Some(Ratio::from_integer(0));
        }
        match self.exponents.iter().collect::<Vec<_>>().as_slice() {
            [(&r, &e)] if r == base => Some(Ratio::new(e, self.denominator as i64)),
            _ => None,
        }
    }

    /// Exact test of `self <= dof * log p`, i.e. `prod r^{e_r} <= p^{dof N}`.
    pub fn at_most_log_units(&self, dof: usize, p: u64) -> bool {
        let mut g = self.denominator as i64 * dof as i64;
        for &e in self.exponents.values() {
            g = g.gcd(&e);
        }
        let g = g.max(1);
        let mut lhs = BigUint::one();
        let mut rhs = BigUint::from(p).pow(((self.denominator as i64 * dof as i64) / g) as u32);
        for (&r, &e) in &self.exponents {
            let pw = BigUint::from(r).pow((e.unsigned_abs() / g as u64) as u32);
            if e > 0 {
                lhs *= pw;
            } else {
                rhs *= pw;
            }
        }
        lhs <= rhs
    }
}

fn factorize(mut n: u64, cache: &mut HashMap<u64, Vec<(u64, i64)>>) -> Vec<(u64, i64)> {
    if let Some(f) = cache.get(&n) {
        return f.clone();
    }
    let key = n;
    let mut out = Vec::new();
    let mut d = 2;
    while d * d <= n {
        let mut e = 0;
        while n.is_multiple_of(d) {
            n /= d;
            e += 1;
        }
        if e > 0 {
            out.push((d, e));
        }
        d += 1;
    }
    if n > 1 {
        out.push((n, 1));
    }
    cache.insert(key, out.clone());
    out
}

/// Accumulates `weight * ln(num / den)` with every factor factorized.
struct LogAccumulator {
    exponents: BTreeMap<u64, i64>,
    cache: HashMap<u64, Vec<(u64, i64)>>,
}

impl LogAccumulator {
    fn new() -> Self {
        Self { exponents: BTreeMap::new(), cache: HashMap::new() }
    }

    fn add(&mut self, weight: u64, num: &[u64], den: &[u64]) {
        for (&n, sign) in num.iter().map(|n| (n, 1i64)).chain(den.iter().map(|d| (d, -1i64))) {
            for (r, e) in factorize(n, &mut self.cache) {
                *self.exponents.entry(r).or_insert(0) += sign * e * weight as i64;
            }
        }
    }

    fn finish(mut self, denominator: u64) -> ExactInformation {
        self.exponents.retain(|_, e| *e != 0);
        ExactInformation { exponents: self.exponents, denominator }
    }
}

/// Exact `I(Theta; obs)` (or `I(Theta; obs | sums)` when `conditioning` is
/// given) by enumerating every model assignment over `{0..alphabet-1}` and
/// every source assignment over `Z_p`, all uniform.
pub fn brute_force_mi(
    obs: &LinearObservation,
    alphabet: u64,
    conditioning: Option<&FieldMatrix>,
    limit: u128,
) -> Result<ExactInformation> {
    let f = obs.theta.field();
    let p = f.modulus();
    let n_theta = obs.theta.cols();
    let n_z = obs.source.cols();
    let rows = obs.rows();
    let size = (alphabet as u128)
        .checked_pow(n_theta as u32)
        .and_then(|a| (p as u128).checked_pow(n_z as u32).and_then(|b| a.checked_mul(b)));
    let size = size.ok_or(HsaError::TooLarge { size: u128::MAX, limit })?;
    if size > limit {
        return Err(HsaError::TooLarge { size, limit });
    }
    let key_of = |v: &[u64]| -> u128 { v.iter().fold(0u128, |acc, &x| acc * p as u128 + x as u128) };
    if (p as f64).log2() * rows as f64 >= 127.0 {
        return Err(HsaError::TooLarge { size, limit });
    }

    let z_count = (p as u128).pow(n_z as u32) as u64;
    let z_contrib: Vec<Vec<u64>> = (0..z_count).map(|i| obs.source.apply(&digits(i, p, n_z))).collect();
    let theta_count = (alphabet as u128).pow(n_theta as u32) as u64;
    let total = theta_count * z_count;

    // (condition key, observation key) -> count, plus per-theta tallies.
    let mut joint_y: HashMap<(u128, u128), u64> = HashMap::new();
    let mut cond_count: HashMap<u128, u64> = HashMap::new();
    let mut per_theta: Vec<(u128, Vec<(u128, u64)>)> = Vec::with_capacity(theta_count as usize);
    for t in 0..theta_count {
        let theta = digits(t, alphabet, n_theta);
        let base = obs.theta.apply(&theta);
        let c = conditioning.map_or(0, |m| key_of(&m.apply(&theta)));
        *cond_count.entry(c).or_insert(0) += z_count;
        let mut local: HashMap<u128, u64> = HashMap::new();
        for zc in &z_contrib {
            let y: Vec<u64> = base.iter().zip(zc).map(|(&a, &b)| f.add(a, b)).collect();
            *local.entry(key_of(&y)).or_insert(0) += 1;
        }
        for (&y, &n) in &local {
            *joint_y.entry((c, y)).or_insert(0) += n;
        }
        per_theta.push((c, local.into_iter().collect()));
    }

    // I = (1/N) sum n(t,y) ln( n(t,y) n(c) / (n(t) n(c,y)) ); without
    // conditioning c is constant and n(c) = N.
    let mut acc = LogAccumulator::new();
    for (c, local) in &per_theta {
        let n_c = cond_count[c];
        for &(y, n_ty) in local {
            acc.add(n_ty, &[n_ty, n_c], &[z_count, joint_y[&(*c, y)]]);
        }
    }
    Ok(acc.finish(total))
}

fn digits(mut i: u64, base: u64, len: usize) -> Vec<u64> {
    let mut out = vec![0; len];
    for d in out.iter_mut() {
        *d = i % base;
        i /= base;
    }
    out
}

/// Rational helper for reports: exponent of `p` over `N`, as `f64` when irrational.
pub fn describe(info: &ExactInformation, p: u64) -> String {
    match info.in_log_units(p) {
        Some(r) if *r.numer() == 0 => "0".to_string(),
        Some(r) => format!("{}/{} log p", r.numer(), r.denom()),
        None => format!("{:.6} bits", info.bits()),
    }
}
