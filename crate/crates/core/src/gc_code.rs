//! Communication-efficient, straggler-tolerant gradient code over `Z_p`.
//!
//! Relay `m` forwards one symbol per segment: the plain sum of
//! `w_{m,k} . u_k` over the clients `k` it hears, where `u_k` is client `k`'s
//! masked segment of length `d-s`. For every set `f` of `s` relays the
//! combination matrix `C_f` (zero on `f`) maps the surviving relay symbols to
//! the coordinate-wise sum of all segments.
//!
//! Construction is polynomial. Relays get distinct nonzero evaluation points
//! `a_m`. Client `k` encodes its segment `u` as a polynomial of degree at most
//! `K-s-1` that vanishes on every relay it does not talk to and whose low
//! `d-s` coefficients are `H u` for a random invertible mixing `H`. The sum of
//! these polynomials is then interpolable from any `K-s` relay evaluations.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HsaError, Result};
use crate::ff::{FieldConfig, FieldMatrix, FieldVector, Fp};
use crate::keygen::distinct_nonzero;
use crate::topology::Topology;

const CODE_ATTEMPTS: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GcCode {
    field: Fp,
    topology: Topology,
    stragglers: usize,
    segment_len: usize,
    /// `w_{m,k}` keyed by `(relay, client)`.
    encoders: BTreeMap<(usize, usize), FieldVector>,
    /// `C_f` keyed by the sorted straggler pattern `f`.
    combos: BTreeMap<Vec<usize>, FieldMatrix>,
    /// Segment coordinate carrying each client's key.
    mask_coord: Vec<usize>,
    /// Pairs whose key has been stripped (audit test hook).
    unmasked: BTreeSet<(usize, usize)>,
}

impl GcCode {
    /// Assembles a code from explicit parts. Shapes are checked; the recovery
    /// identity is not (see [`GcCode::verify_recovery`]).
    pub fn from_parts(
        field: Fp,
        topology: Topology,
        stragglers: usize,
        encoders: BTreeMap<(usize, usize), FieldVector>,
        combos: BTreeMap<Vec<usize>, FieldMatrix>,
        mask_coord: Vec<usize>,
    ) -> Result<Self> {
        let k = topology.nodes();
        let d = topology.degree();
        if stragglers >= d {
            return Err(HsaError::InvalidParams(format!("need s < d, got s={stragglers}, d={d}")));
        }
        let segment_len = d - stragglers;
        for m in 0..k {
            for &c in topology.clients_of(m) {
                match encoders.get(&(m, c)) {
                    Some(w) if w.len() == segment_len => {}
                    Some(w) => {
                        return Err(HsaError::ShapeMismatch(format!(
                            "encoder ({}, {}) has length {}, expected {segment_len}",
                            m + 1,
                            c + 1,
                            w.len()
                        )))
                    }
                    None => return Err(HsaError::ShapeMismatch(format!("missing encoder ({}, {})", m + 1, c + 1))),
                }
            }
        }
        if encoders.keys().any(|&(m, c)| m >= k || !topology.hears(m, c)) {
            return Err(HsaError::ShapeMismatch("encoder for a pair outside the topology".into()));
        }
        for (pattern, c) in &combos {
            if pattern.len() != stragglers || c.shape() != (segment_len, k) {
                return Err(HsaError::ShapeMismatch(format!(
                    "combination matrix for pattern {pattern:?} has wrong shape"
                )));
            }
        }
        if mask_coord.len() != k || mask_coord.iter().any(|&l| l >= segment_len) {
            return Err(HsaError::ShapeMismatch("mask coordinates out of range".into()));
        }
        Ok(Self { field, topology, stragglers, segment_len, encoders, combos, mask_coord, unmasked: BTreeSet::new() })
    }

    pub fn field(&self) -> Fp {
        self.field
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn clients(&self) -> usize {
        self.topology.nodes()
    }

    pub fn degree(&self) -> usize {
        self.topology.degree()
    }

    pub fn stragglers(&self) -> usize {
        self.stragglers
    }

    /// Segment length `d - s`.
    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn encoder(&self, relay: usize, client: usize) -> Option<&FieldVector> {
        self.encoders.get(&(relay, client))
    }

    pub fn encoders(&self) -> &BTreeMap<(usize, usize), FieldVector> {
        &self.encoders
    }

    pub fn combos(&self) -> &BTreeMap<Vec<usize>, FieldMatrix> {
        &self.combos
    }

    pub fn mask_coord(&self, client: usize) -> usize {
        self.mask_coord[client]
    }

    /// Coefficient of `S_k` in `X_{m,k}`: the encoder entry at the key coordinate.
    pub fn mask_coefficient(&self, relay: usize, client: usize) -> u64 {
        if self.unmasked.contains(&(relay, client)) {
            return 0;
        }
        self.encoders.get(&(relay, client)).map_or(0, |w| w.get(self.mask_coord[client]))
    }

    /// Copy of this code in which `X_{relay,client}` carries no key.
    pub fn with_unmasked(&self, relay: usize, client: usize) -> Self {
        let mut c = self.clone();
        c.unmasked.insert((relay, client));
        c
    }

    pub fn unmasked_pairs(&self) -> &BTreeSet<(usize, usize)> {
        &self.unmasked
    }

    /// Per-segment relay coefficient matrix: row `m`, column `k*(d-s) + l`
    /// holds the weight of `u_k(l)` in `Y_m`.
    pub fn coefficient_matrix(&self) -> FieldMatrix {
        let k = self.clients();
        let lt = self.segment_len;
        let mut a = FieldMatrix::zeros(self.field, k, k * lt);
        for (&(m, c), w) in &self.encoders {
            for l in 0..lt {
                a.set(m, c * lt + l, w.get(l));
            }
        }
        a
    }

    /// The `d-s` target rows: coordinate `l` of the all-client sum.
    pub fn sum_targets(&self) -> FieldMatrix {
        let k = self.clients();
        let lt = self.segment_len;
        let mut t = FieldMatrix::zeros(self.field, lt, k * lt);
        for l in 0..lt {
            for c in 0..k {
                t.set(l, c * lt + l, 1);
            }
        }
        t
    }

    /// `C_f` for the lexicographically smallest stored pattern covering `missing`.
    pub fn combination_matrix(&self, missing: &[usize]) -> Result<(&[usize], &FieldMatrix)> {
        let missing: BTreeSet<usize> = missing.iter().copied().collect();
        if missing.len() > self.stragglers {
            return Err(HsaError::TooManyMissing { missing: missing.len(), tolerated: self.stragglers });
        }
        self.combos
            .iter()
            .find(|(pattern, _)| missing.iter().all(|m| pattern.contains(m)))
            .map(|(p, c)| (p.as_slice(), c))
            .ok_or_else(|| HsaError::InvalidParams(format!("no stored pattern covers {missing:?}")))
    }

    /// Recovery identity for every pattern: `C_f` vanishes on `f` and
    /// `C_f A = [I I .. I]`. Also requires all `C(K, s)` patterns to be present.
    pub fn verify_recovery(&self) -> bool {
        let k = self.clients();
        if self.combos.len() != (0..k).combinations(self.stragglers).count() {
            return false;
        }
        let a = self.coefficient_matrix();
        let targets = self.sum_targets();
        self.combos.iter().all(|(pattern, c)| {
            pattern.iter().all(|&m| c.column(m).iter().all(|&v| v == 0))
                && c.mul(&a).map(|prod| prod == targets).unwrap_or(false)
        })
    }

    /// Every transmitted symbol carries its client's key, and all clients
    /// place the key on the same coordinate so the keys cancel in the sum.
    pub fn verify_masks(&self) -> bool {
        let common = self.mask_coord.windows(2).all(|w| w[0] == w[1]);
        common
            && (0..self.clients()).all(|c| self.topology.relays_of(c).iter().all(|&m| self.mask_coefficient(m, c) != 0))
    }
}

/// Builds a verified `(K, d-s, s)` code for the cyclic topology.
pub fn construct_code(cfg: &FieldConfig, topology: &Topology, stragglers: usize, seed: u64) -> Result<GcCode> {
    let k = topology.nodes();
    let d = topology.degree();
    if k != cfg.clients() {
        return Err(HsaError::InvalidParams(format!("topology has {k} nodes but K={}", cfg.clients())));
    }
    if stragglers >= d || d >= k {
        return Err(HsaError::InvalidParams(format!("need 0 <= s < d <= K-1, got s={stragglers}, d={d}, K={k}")));
    }
    let f = cfg.field();
    if f.modulus() - 1 < k as u64 {
        return Err(HsaError::ConstructionFailed {
            stage: "gradient code",
            attempts: 0,
            reason: format!("p={} has fewer than K={k} nonzero evaluation points", f.modulus()),
        });
    }
    let lt = d - stragglers;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..CODE_ATTEMPTS {
        let points = distinct_nonzero(f, k, &mut rng);
        let mixing = random_invertible(f, lt, &mut rng);
        let encoders = polynomial_encoders(f, topology, lt, &points, &mixing);
        let mask_coord = vec![0; k];
        let mut code = GcCode::from_parts(f, topology.clone(), stragglers, encoders, BTreeMap::new(), mask_coord)?;
        if !code.verify_masks() {
            continue;
        }
        let Some(combos) = solve_combinations(&code)? else {
            continue;
        };
        code.combos = combos;
        if code.verify_recovery() {
            return Ok(code);
        }
    }
    Err(HsaError::ConstructionFailed {
        stage: "gradient code",
        attempts: CODE_ATTEMPTS,
        reason: format!("no code with nonzero masks found over Z_{}; raise p", f.modulus()),
    })
}

/// Solves `C_f A_{[K] \ f} = T` for every straggler pattern.
fn solve_combinations(code: &GcCode) -> Result<Option<BTreeMap<Vec<usize>, FieldMatrix>>> {
    let k = code.clients();
    let lt = code.segment_len;
    let a = code.coefficient_matrix();
    let targets = code.sum_targets();
    let mut combos = BTreeMap::new();
    for pattern in (0..k).combinations(code.stragglers) {
        let alive: Vec<usize> = (0..k).filter(|m| !pattern.contains(m)).collect();
        let Some(partial) = a.select_rows(&alive).solve_left(&targets)? else {
            return Ok(None);
        };
        let mut c = FieldMatrix::zeros(code.field, lt, k);
        for l in 0..lt {
            for (j, &m) in alive.iter().enumerate() {
                c.set(l, m, partial.get(l, j));
            }
        }
        combos.insert(pattern, c);
    }
    Ok(Some(combos))
}

fn random_invertible(f: Fp, n: usize, rng: &mut ChaCha8Rng) -> FieldMatrix {
    loop {
        let rows: Vec<Vec<u64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(0..f.modulus())).collect()).collect();
        let m = FieldMatrix::from_rows(f, n, &rows).expect("square");
        if m.rank() == n {
            return m;
        }
    }
}

fn poly_mul(f: Fp, a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = vec![0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] = f.add(out[i + j], f.mul(x, y));
        }
    }
    out
}

fn poly_eval(f: Fp, poly: &[u64], x: u64) -> u64 {
    poly.iter().rev().fold(0, |acc, &c| f.add(f.mul(acc, x), c))
}

/// First `n` coefficients of `1 / z(x)` as a power series; needs `z(0) != 0`.
fn series_inverse(f: Fp, z: &[u64], n: usize) -> Vec<u64> {
    let z0_inv = f.inv(z[0]).expect("vanishing polynomial has nonzero constant term");
    let mut out = vec![0; n];
    for i in 0..n {
        let mut acc = if i == 0 { 1 } else { 0 };
        for j in 1..=i.min(z.len() - 1) {
            acc = f.sub(acc, f.mul(z[j], out[i - j]));
        }
        out[i] = f.mul(acc, z0_inv);
    }
    out
}

fn polynomial_encoders(
    f: Fp,
    topology: &Topology,
    lt: usize,
    points: &[u64],
    mixing: &FieldMatrix,
) -> BTreeMap<(usize, usize), FieldVector> {
    let k = topology.nodes();
    let mut encoders = BTreeMap::new();
    for c in 0..k {
        let relays = topology.relays_of(c);
        // Vanishes on every relay client c does not reach.
        let vanishing =
            (0..k).filter(|m| !relays.contains(m)).fold(vec![1u64], |acc, m| poly_mul(f, &acc, &[f.neg(points[m]), 1]));
        let inv = series_inverse(f, &vanishing, lt);
        // Column l: the polynomial whose low coefficients are e_l.
        let basis: Vec<Vec<u64>> = (0..lt)
            .map(|l| {
                let mut q = vec![0; lt];
                q[l..].copy_from_slice(&inv[..lt - l]);
                poly_mul(f, &vanishing, &q)
            })
            .collect();
        for &m in relays {
            let raw: Vec<u64> = basis.iter().map(|poly| poly_eval(f, poly, points[m])).collect();
            encoders.insert((m, c), FieldVector::from_values(f, mixing.left_apply(&raw)));
        }
    }
    encoders
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vectors::ExampleVectors;

    fn build(k: usize, d: usize, s: usize, q: u64, seed: u64) -> GcCode {
        let cfg = FieldConfig::with_default_prime(q, k).unwrap();
        let t = Topology::build(k, d).unwrap();
        construct_code(&cfg, &t, s, seed).unwrap()
    }

    #[test]
    fn example_code_encoders_match_display() {
        let ex = ExampleVectors::bundled().unwrap();
        let code = ex.code().unwrap();
        assert_eq!(code.encoder(3, 0).unwrap().as_slice(), &[11, 0]);
        assert_eq!(code.encoder(4, 0).unwrap().as_slice(), &[3, 3]);
        assert_eq!(code.encoder(0, 0).unwrap().as_slice(), &[1, 10]);
        assert_eq!(code.mask_coefficient(3, 0), 11);
        assert!(code.verify_recovery());
        assert!(code.verify_masks());
    }

    #[test]
    fn example_combination_lookup() {
        let code = ExampleVectors::bundled().unwrap().code().unwrap();
        let (pattern, c1) = code.combination_matrix(&[0]).unwrap();
        assert_eq!(pattern, &[0]);
        assert_eq!(c1.to_rows(), vec![vec![0, 7, 11, 6, 0], vec![0, 2, 1, 7, 9]]);
        let (tie, _) = code.combination_matrix(&[]).unwrap();
        assert_eq!(tie, &[0]);
        assert!(matches!(code.combination_matrix(&[0, 1]), Err(HsaError::TooManyMissing { missing: 2, tolerated: 1 })));
    }

    #[test]
    fn example_decode_row_sums_first_coordinate() {
        // 7 Y_2 + 11 Y_3 + 6 Y_4 has coefficient 1 on every Theta_k(1).
        let code = ExampleVectors::bundled().unwrap().code().unwrap();
        let a = code.coefficient_matrix();
        let combo = a.left_apply(&[0, 7, 11, 6, 0]);
        for c in 0..5 {
            assert_eq!(combo[c * 2], 1);
            assert_eq!(combo[c * 2 + 1], 0);
        }
    }

    #[test]
    fn solve_left_on_example_relays_two_to_five() {
        let code = ExampleVectors::bundled().unwrap().code().unwrap();
        let a = code.coefficient_matrix().select_rows(&[1, 2, 3, 4]);
        let b = code.sum_targets();
        let c = a.solve_left(&b).unwrap().expect("relays 2..5 suffice");
        assert_eq!(c.mul(&a).unwrap(), b);
        // Same decoding functionals as C_1 restricted to those relays.
        let c1 = code.combination_matrix(&[0]).unwrap().1.select_cols(&[1, 2, 3, 4]);
        assert_eq!(c1.mul(&a).unwrap(), c.mul(&a).unwrap());
    }

    #[test]
    fn perturbed_combination_fails_verification() {
        let ex = ExampleVectors::bundled().unwrap();
        let mut combos = ex.code().unwrap().combos().clone();
        let c1 = combos.get_mut(&vec![0]).unwrap();
        c1.set(0, 1, (c1.get(0, 1) + 1) % 13);
        let code = GcCode::from_parts(
            Fp::new(13).unwrap(),
            Topology::build(5, 3).unwrap(),
            1,
            ex.code().unwrap().encoders().clone(),
            combos,
            vec![0; 5],
        )
        .unwrap();
        assert!(!code.verify_recovery());
    }

    #[test]
    fn three_two_one_scalars() {
        let code = build(3, 2, 1, 2, 9);
        assert_eq!(code.segment_len(), 1);
        assert_eq!(code.combos().len(), 3);
        for (pattern, c) in code.combos() {
            assert_eq!(c.shape(), (1, 3));
            assert_eq!(c.get(0, pattern[0]), 0);
        }
        for w in code.encoders().values() {
            assert_ne!(w.get(0), 0);
        }
        assert!(code.verify_recovery());
    }

    #[test]
    fn no_stragglers_single_pattern() {
        let code = build(3, 2, 0, 3, 1);
        assert_eq!(code.combos().len(), 1);
        let (pattern, c) = code.combination_matrix(&[]).unwrap();
        assert!(pattern.is_empty());
        assert!((0..3).all(|m| c.column(m).iter().any(|&v| v != 0)));
    }

    #[test]
    fn construction_is_deterministic() {
        assert_eq!(build(6, 4, 2, 3, 42), build(6, 4, 2, 3, 42));
    }

    #[test]
    fn residual_key_is_the_key_sum() {
        // After any C_f, each client's key appears with weight exactly 1 on
        // the mask coordinate and 0 elsewhere, so the residual is sum_k S_k.
        let code = build(6, 4, 1, 3, 5);
        for c in code.combos().values() {
            for client in 0..6 {
                let mask: Vec<u64> = (0..6).map(|m| code.mask_coefficient(m, client)).collect();
                let applied = c.apply(&mask);
                for (l, v) in applied.iter().enumerate() {
                    assert_eq!(*v, u64::from(l == code.mask_coord(client)));
                }
            }
        }
    }

    #[test]
    fn grid_codes_verify() {
        for k in 3..=8usize {
            for d in 2..k {
                for s in 0..d {
                    let code = build(k, d, s, 3, (k * 100 + d * 10 + s) as u64);
                    assert!(code.verify_recovery(), "K={k} d={d} s={s}");
                    assert!(code.verify_masks());
                }
            }
        }
    }

    #[test]
    fn unmasking_zeroes_exactly_one_coefficient() {
        let code = build(4, 2, 1, 3, 0).with_unmasked(1, 1);
        assert_eq!(code.mask_coefficient(1, 1), 0);
        assert!(!code.verify_masks());
        assert!(code.verify_recovery());
    }

    #[test]
    fn rejects_bad_parameters() {
        let cfg = FieldConfig::with_default_prime(3, 5).unwrap();
        let t = Topology::build(5, 3).unwrap();
        assert!(construct_code(&cfg, &t, 3, 0).is_err());
        let full = Topology::build(5, 5).unwrap();
        assert!(construct_code(&cfg, &full, 0, 0).is_err());
    }
}
