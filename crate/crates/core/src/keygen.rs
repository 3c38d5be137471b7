//! Zero-sum secret keys derived linearly from a pool of uniform source symbols.
//!
//! A `K x max(d, K-d)` generator mixes one block of source symbols per segment
//! into one key symbol per client. Its columns sum to zero, so the keys cancel
//! in the all-client sum; any `d` rows are independent, so every relay sees
//! jointly uniform keys; any `K-d` rows are independent, which leaves the
//! server no key-cancelling combination beyond the decoding ones.

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HsaError, Result};
use crate::ff::{FieldConfig, FieldMatrix, FieldVector, Fp};

const GS_ATTEMPTS: usize = 64;

/// Number of source symbols consumed per segment.
pub fn seed_width(clients: usize, degree: usize) -> usize {
    degree.max(clients - degree)
}

/// Uniform source symbols `Z_1, .., Z_n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRandomness {
    pub symbols: FieldVector,
    pub seed: u64,
}

impl SourceRandomness {
    pub fn draw(field: Fp, len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let symbols = FieldVector::from_values(field, (0..len).map(|_| rng.gen_range(0..field.modulus())));
        Self { symbols, seed }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Generator plus the expanded per-client keys (`keys[k][segment]`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySchedule {
    pub generator: FieldMatrix,
    pub keys: Vec<FieldVector>,
    pub source: SourceRandomness,
    /// Source symbols charged to the scheme; normally `source.len()`.
    pub source_len: usize,
}

impl KeySchedule {
    pub fn segments(&self) -> usize {
        self.keys.first().map_or(0, FieldVector::len)
    }

    /// Key symbol `S_{k, segment}` as a coefficient row over the source symbols.
    pub fn key_coefficients(&self, client: usize, segment: usize) -> Vec<(usize, u64)> {
        let width = self.generator.cols();
        (0..width).map(|c| (segment * width + c, self.generator.get(client, c))).filter(|&(_, g)| g != 0).collect()
    }
}

/// Builds a verified generator: `K-1` Vandermonde rows over random distinct
/// nonzero points, then the negated row sum.
pub fn build_gs(cfg: &FieldConfig, degree: usize, seed: u64) -> Result<FieldMatrix> {
    let k = cfg.clients();
    if degree == 0 || degree >= k {
        return Err(HsaError::InvalidParams(format!("generator needs 1 <= d <= K-1, got d={degree}, K={k}")));
    }
    let f = cfg.field();
    let width = seed_width(k, degree);
    if (f.modulus() - 1) < (k - 1) as u64 {
        return Err(HsaError::ConstructionFailed {
            stage: "key generator",
            attempts: 0,
            reason: format!("p={} has fewer than K-1={} nonzero evaluation points", f.modulus(), k - 1),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..GS_ATTEMPTS {
        let points = distinct_nonzero(f, k - 1, &mut rng);
        let mut rows: Vec<Vec<u64>> =
            points.iter().map(|&a| (0..width as u64).map(|e| f.pow(a, e)).collect()).collect();
        let last = (0..width).map(|c| f.neg(rows.iter().fold(0, |acc, r| f.add(acc, r[c])))).collect();
        rows.push(last);
        let g = FieldMatrix::from_rows(f, width, &rows)?;
        if verify_gs(&g, degree) {
            return Ok(g);
        }
    }
    Err(HsaError::ConstructionFailed {
        stage: "key generator",
        attempts: GS_ATTEMPTS,
        reason: format!("no admissible generator found over Z_{}; raise p", f.modulus()),
    })
}

/// Zero column sums, every `d` rows of rank `d`, every `K-d` rows of rank `K-d`.
pub fn verify_gs(g: &FieldMatrix, degree: usize) -> bool {
    let f = g.field();
    let k = g.rows();
    if degree == 0 || degree >= k {
        return false;
    }
    let zero_sums = (0..g.cols()).all(|c| g.column(c).into_iter().fold(0, |acc, v| f.add(acc, v)) == 0);
    zero_sums && all_subsets_full_rank(g, degree) && all_subsets_full_rank(g, k - degree)
}

fn all_subsets_full_rank(g: &FieldMatrix, size: usize) -> bool {
    (0..g.rows()).combinations(size).all(|rows| g.select_rows(&rows).rank() == size)
}

/// Expands per-segment keys: column `(S_{1,x}, .., S_{K,x})` is the generator
/// applied to the `x`-th block of source symbols.
pub fn expand_keys(generator: &FieldMatrix, source: &SourceRandomness, segments: usize) -> Result<KeySchedule> {
    let width = generator.cols();
    let expected = segments * width;
    if source.len() != expected {
        return Err(HsaError::LengthMismatch { expected, actual: source.len() });
    }
    let f = generator.field();
    let mut keys = vec![FieldVector::zeros(f, segments); generator.rows()];
    for x in 0..segments {
        let block = &source.symbols.as_slice()[x * width..(x + 1) * width];
        for (k, v) in generator.apply(block).into_iter().enumerate() {
            keys[k].set(x, v);
        }
    }
    Ok(KeySchedule { generator: generator.clone(), keys, source: source.clone(), source_len: source.len() })
}

/// Draws `count` distinct values from `1..p` (helper shared with the code builder).
pub(crate) fn distinct_nonzero(field: Fp, count: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let candidates: Vec<u64> = (1..field.modulus()).collect();
    candidates.choose_multiple(rng, count).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_generator() -> FieldMatrix {
        FieldMatrix::from_literal(Fp::new(13).unwrap(), &[[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 2, 4], [11, 10, 8]])
    }

    #[test]
    fn example_generator_is_admissible() {
        assert!(verify_gs(&example_generator(), 3));
    }

    #[test]
    fn duplicated_row_is_rejected() {
        let mut rows = example_generator().to_rows();
        rows[3] = rows[0].clone();
        let g = FieldMatrix::from_rows(Fp::new(13).unwrap(), 3, &rows).unwrap();
        assert!(!verify_gs(&g, 3));
    }

    #[test]
    fn nonzero_column_sum_is_rejected() {
        let mut g = example_generator();
        g.set(4, 0, 12);
        assert!(!verify_gs(&g, 3));
    }

    #[test]
    fn two_clients_one_relay() {
        let cfg = FieldConfig::new(5, 2, 2).unwrap();
        let g = build_gs(&cfg, 1, 3).unwrap();
        assert_eq!(g.shape(), (2, 1));
        assert_ne!(g.get(0, 0), 0);
        assert_eq!((g.get(0, 0) + g.get(1, 0)) % 5, 0);
    }

    #[test]
    fn six_four_over_17_is_verified() {
        let cfg = FieldConfig::new(17, 3, 6).unwrap();
        let g = build_gs(&cfg, 4, 7).unwrap();
        assert_eq!(g.shape(), (6, 4));
        assert!(verify_gs(&g, 4));
        assert_eq!(g.rank(), 4);
        assert_eq!(build_gs(&cfg, 4, 7).unwrap(), g);
    }

    #[test]
    fn generator_rank_equals_seed_width_across_grid() {
        for k in 3..=8usize {
            let cfg = FieldConfig::with_default_prime(3, k).unwrap();
            for d in 1..k {
                let g = build_gs(&cfg, d, 11).unwrap();
                assert_eq!(g.rank(), seed_width(k, d), "K={k} d={d}");
                for m in 0..k {
                    let heard: Vec<usize> = (0..d).map(|i| (m + i) % k).collect();
                    assert_eq!(g.select_rows(&heard).rank(), d);
                }
            }
        }
    }

    #[test]
    fn full_degree_is_rejected() {
        let cfg = FieldConfig::new(13, 3, 5).unwrap();
        assert!(matches!(build_gs(&cfg, 5, 0), Err(HsaError::InvalidParams(_))));
    }

    #[test]
    fn example_key_display() {
        let g = example_generator();
        let f = g.field();
        let src = SourceRandomness { symbols: FieldVector::from_values(f, [4, 9, 2]), seed: 0 };
        let sched = expand_keys(&g, &src, 1).unwrap();
        let z = [4u64, 9, 2];
        assert_eq!(sched.keys[3].get(0), (z[0] + 2 * z[1] + 4 * z[2]) % 13);
        assert_eq!(sched.keys[4].get(0), (11 * z[0] + 10 * z[1] + 8 * z[2]) % 13);
        let total = sched.keys.iter().fold(0, |acc, s| f.add(acc, s.get(0)));
        assert_eq!(total, 0);
    }

    #[test]
    fn zero_source_gives_zero_keys() {
        let g = example_generator();
        let src = SourceRandomness { symbols: FieldVector::zeros(g.field(), 6), seed: 0 };
        let sched = expand_keys(&g, &src, 2).unwrap();
        assert!(sched.keys.iter().all(FieldVector::is_zero));
    }

    #[test]
    fn length_mismatch() {
        let g = example_generator();
        let src = SourceRandomness::draw(g.field(), 5, 1);
        assert!(matches!(expand_keys(&g, &src, 2), Err(HsaError::LengthMismatch { expected: 6, actual: 5 })));
    }

    #[test]
    fn keys_cancel_for_random_sources() {
        let cfg = FieldConfig::new(17, 3, 7).unwrap();
        let g = build_gs(&cfg, 3, 5).unwrap();
        for seed in 0..20 {
            let src = SourceRandomness::draw(cfg.field(), 4 * g.cols(), seed);
            let sched = expand_keys(&g, &src, 4).unwrap();
            for x in 0..4 {
                let total = sched.keys.iter().fold(0, |acc, s| cfg.field().add(acc, s.get(x)));
                assert_eq!(total, 0);
            }
        }
    }
}
