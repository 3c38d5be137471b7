//! Client encoding, relay aggregation and server decoding.
//!
//! Every message carries a symbolic trace: its coefficients over all model
//! entries (padded layout, column `k * L_padded + l`) and over all source
//! symbols. Evaluating the trace on the episode's models and source symbols
//! reproduces the payload.

use serde::{Deserialize, Serialize};

use crate::error::{HsaError, Result};
use crate::ff::{FieldConfig, FieldMatrix, FieldVector};
use crate::gc_code::GcCode;
use crate::keygen::KeySchedule;
use crate::topology::Topology;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalModel {
    pub owner: usize,
    pub entries: Vec<u64>,
}

impl LocalModel {
    pub fn new(owner: usize, entries: Vec<u64>, cfg: &FieldConfig) -> Result<Self> {
        if let Some((i, &v)) = entries.iter().enumerate().find(|(_, &v)| v >= cfg.q()) {
            return Err(HsaError::InvalidParams(format!(
                "model {} entry {i} is {v}, outside the alphabet 0..{}",
                owner + 1,
                cfg.q()
            )));
        }
        Ok(Self { owner, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Column layout of message traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceLayout {
    pub clients: usize,
    pub model_len: usize,
    pub padded_len: usize,
    pub source_len: usize,
}

impl TraceLayout {
    pub fn theta_cols(&self) -> usize {
        self.clients * self.padded_len
    }

    pub fn theta_col(&self, client: usize, entry: usize) -> usize {
        client * self.padded_len + entry
    }

    /// Trace columns that correspond to real (unpadded) model entries.
    pub fn real_theta_cols(&self) -> Vec<usize> {
        (0..self.clients).flat_map(|k| (0..self.model_len).map(move |l| k * self.padded_len + l)).collect()
    }
}

/// Coefficients of each payload symbol over the model entries and source symbols.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageTrace {
    pub theta: FieldMatrix,
    pub source: FieldMatrix,
}

impl MessageTrace {
    pub fn zeros(cfg: &FieldConfig, layout: &TraceLayout, rows: usize) -> Self {
        Self {
            theta: FieldMatrix::zeros(cfg.field(), rows, layout.theta_cols()),
            source: FieldMatrix::zeros(cfg.field(), rows, layout.source_len),
        }
    }

    /// Evaluates on flattened padded models and the source symbols.
    pub fn evaluate(&self, theta: &[u64], source: &[u64]) -> Vec<u64> {
        let f = self.theta.field();
        let a = self.theta.apply(theta);
        let b = self.source.apply(source);
        a.into_iter().zip(b).map(|(x, y)| f.add(x, y)).collect()
    }

    fn add_assign(&mut self, other: &MessageTrace) {
        let f = self.theta.field();
        for (dst, src) in [(&mut self.theta, &other.theta), (&mut self.source, &other.source)] {
            for r in 0..dst.rows() {
                for c in 0..dst.cols() {
                    let v = f.add(dst.get(r, c), src.get(r, c));
                    dst.set(r, c, v);
                }
            }
        }
    }
}

/// `X_{m,k}`: one symbol per segment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub from: usize,
    pub to: usize,
    pub payload: FieldVector,
    pub trace: MessageTrace,
}

/// `Y_m`: segment-wise sum of the client messages relay `m` received.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayMessage {
    pub from: usize,
    pub payload: FieldVector,
    pub trace: MessageTrace,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub finite_sum: FieldVector,
    pub integer_sum: Vec<u64>,
    /// Straggler pattern whose combination matrix was applied (0-based).
    pub used_pattern: Vec<usize>,
    /// Trailing zeros appended to reach a multiple of `d-s`.
    pub padding: usize,
}

/// Model length rounded up to a whole number of segments.
pub fn padded_len(model_len: usize, segment_len: usize) -> usize {
    model_len.div_ceil(segment_len) * segment_len
}

pub fn layout_for(code: &GcCode, sched: &KeySchedule, model_len: usize) -> TraceLayout {
    TraceLayout {
        clients: code.clients(),
        model_len,
        padded_len: sched.segments() * code.segment_len(),
        source_len: sched.source.len(),
    }
}

/// Symbolic trace of `X_{relay,client}`.
pub fn client_trace(
    cfg: &FieldConfig,
    layout: &TraceLayout,
    sched: &KeySchedule,
    code: &GcCode,
    relay: usize,
    client: usize,
) -> Result<MessageTrace> {
    let w = code
        .encoder(relay, client)
        .ok_or_else(|| HsaError::ShapeMismatch(format!("relay {} does not hear client {}", relay + 1, client + 1)))?;
    let lt = code.segment_len();
    let segments = sched.segments();
    let mask = code.mask_coefficient(relay, client);
    let f = cfg.field();
    let mut trace = MessageTrace::zeros(cfg, layout, segments);
    for x in 0..segments {
        for l in 0..lt {
            trace.theta.set(x, layout.theta_col(client, x * lt + l), w.get(l));
        }
        for (col, g) in sched.key_coefficients(client, x) {
            trace.source.set(x, col, f.mul(mask, g));
        }
    }
    Ok(trace)
}

fn check_shapes(model_len: usize, sched: &KeySchedule, code: &GcCode) -> Result<usize> {
    let padded = sched.segments() * code.segment_len();
    if padded_len(model_len, code.segment_len()) != padded {
        return Err(HsaError::ShapeMismatch(format!(
            "model length {model_len} does not fit {} segments of length {}",
            sched.segments(),
            code.segment_len()
        )));
    }
    if sched.keys.len() != code.clients() {
        return Err(HsaError::ShapeMismatch("key schedule and code disagree on K".into()));
    }
    Ok(padded)
}

/// Client `k`'s messages to every relay in `R_k`:
/// `X_{m,k}(x) = w_{m,k} . (segment x of Theta_k + S_{k,x} e_{l0})`.
pub fn client_encode(
    cfg: &FieldConfig,
    model: &LocalModel,
    sched: &KeySchedule,
    code: &GcCode,
    topo: &Topology,
) -> Result<Vec<ClientMessage>> {
    let padded = check_shapes(model.len(), sched, code)?;
    let f = cfg.field();
    let k = model.owner;
    let lt = code.segment_len();
    let mut theta = model.entries.clone();
    theta.resize(padded, 0);
    let layout = layout_for(code, sched, model.len());
    topo.relays_of(k)
        .iter()
        .map(|&m| {
            let w = code
                .encoder(m, k)
                .ok_or_else(|| HsaError::ShapeMismatch(format!("no encoder for ({}, {})", m + 1, k + 1)))?;
            let payload = (0..sched.segments()).map(|x| {
                let seg = &theta[x * lt..(x + 1) * lt];
                let plain = w.dot(seg);
                f.add(plain, f.mul(code.mask_coefficient(m, k), sched.keys[k].get(x)))
            });
            Ok(ClientMessage {
                from: k,
                to: m,
                payload: FieldVector::from_values(f, payload),
                trace: client_trace(cfg, &layout, sched, code, m, k)?,
            })
        })
        .collect()
}

/// Sums the inbox if it covers every client in `U_m`; otherwise the relay
/// stays silent. Messages addressed to other relays are ignored.
pub fn relay_aggregate(relay: usize, inbox: &[ClientMessage], topo: &Topology) -> Option<RelayMessage> {
    let mine: Vec<&ClientMessage> = inbox.iter().filter(|msg| msg.to == relay).collect();
    let mut parts = Vec::with_capacity(topo.degree());
    for &k in topo.clients_of(relay) {
        parts.push(*mine.iter().find(|msg| msg.from == k)?);
    }
    let (first, rest) = parts.split_first()?;
    let mut payload = first.payload.clone();
    let mut trace = first.trace.clone();
    for msg in rest {
        payload.add_assign(&msg.payload);
        trace.add_assign(&msg.trace);
    }
    Some(RelayMessage { from: relay, payload, trace })
}

/// Decodes the all-client sum from any `K-s` relay messages.
pub fn server_decode(
    received: &[RelayMessage],
    code: &GcCode,
    cfg: &FieldConfig,
    model_len: usize,
) -> Result<AggregateResult> {
    let k = code.clients();
    let mut present = vec![false; k];
    for msg in received {
        present[msg.from] = true;
    }
    let have = present.iter().filter(|&&b| b).count();
    let required = k - code.stragglers();
    if have < required {
        return Err(HsaError::InsufficientRelays { received: have, required });
    }
    let missing: Vec<usize> = (0..k).filter(|&m| !present[m]).collect();
    let (pattern, combo) = code.combination_matrix(&missing)?;
    let f = cfg.field();
    let lt = code.segment_len();
    let segments = received.first().map_or(0, |m| m.payload.len());
    let mut finite = vec![0u64; segments * lt];
    for msg in received {
        if pattern.contains(&msg.from) {
            continue;
        }
        for l in 0..lt {
            let c = combo.get(l, msg.from);
            if c == 0 {
                continue;
            }
            for x in 0..segments {
                let idx = x * lt + l;
                finite[idx] = f.add(finite[idx], f.mul(c, msg.payload.get(x)));
            }
        }
    }
    if model_len > finite.len() {
        return Err(HsaError::ShapeMismatch(format!("decoded {} entries, model has {model_len}", finite.len())));
    }
    let padding = finite.len() - model_len;
    finite.truncate(model_len);
    let finite_sum = FieldVector::from_values(f, finite);
    let integer_sum = lift_to_integers(&finite_sum, cfg)?;
    Ok(AggregateResult { finite_sum, integer_sum, used_pattern: pattern.to_vec(), padding })
}

/// Canonical representatives, checked against the largest possible true sum.
pub fn lift_to_integers(finite_sum: &FieldVector, cfg: &FieldConfig) -> Result<Vec<u64>> {
    let max = cfg.max_sum();
    finite_sum
        .as_slice()
        .iter()
        .enumerate()
        .map(|(index, &value)| if value > max { Err(HsaError::OutOfRange { index, value, max }) } else { Ok(value) })
        .collect()
}
