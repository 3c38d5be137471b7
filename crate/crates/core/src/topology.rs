//! Cyclic client-to-relay association.
//!
//! Indices are 0-based in the API and 1-based in every serialized form.
//! Client `k` sends to relays `k, k-1, .., k-d+1` and relay `m` hears
//! clients `m, m+1, .., m+d-1` (all mod `K`).

use serde::{Deserialize, Serialize};

use crate::error::{HsaError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    nodes: usize,
    degree: usize,
    relay_sets: Vec<Vec<usize>>,
    client_sets: Vec<Vec<usize>>,
}

impl Topology {
    pub fn build(nodes: usize, degree: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(HsaError::InvalidParams(format!("K={nodes} must be at least 2")));
        }
        if degree == 0 || degree > nodes {
            return Err(HsaError::InvalidParams(format!("d={degree} must lie in 1..=K={nodes}")));
        }
        let relay_sets = (0..nodes).map(|k| (0..degree).map(|i| (k + nodes - i) % nodes).collect()).collect();
        let client_sets = (0..nodes).map(|m| (0..degree).map(|i| (m + i) % nodes).collect()).collect();
        Ok(Self { nodes, degree, relay_sets, client_sets })
    }

    /// Assembles a topology from explicit sets without validating them.
    pub fn from_sets(nodes: usize, degree: usize, relay_sets: Vec<Vec<usize>>, client_sets: Vec<Vec<usize>>) -> Self {
        Self { nodes, degree, relay_sets, client_sets }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Relays client `k` sends to.
    pub fn relays_of(&self, client: usize) -> &[usize] {
        &self.relay_sets[client]
    }

    /// Clients relay `m` hears from.
    pub fn clients_of(&self, relay: usize) -> &[usize] {
        &self.client_sets[relay]
    }

    pub fn hears(&self, relay: usize, client: usize) -> bool {
        self.client_sets[relay].contains(&client)
    }

    /// `m` in `R_k` iff `k` in `U_m`, for every pair, plus the size invariants.
    pub fn check_duality(&self) -> bool {
        if self.relay_sets.len() != self.nodes || self.client_sets.len() != self.nodes {
            return false;
        }
        if self.relay_sets.iter().chain(&self.client_sets).any(|s| s.len() != self.degree) {
            return false;
        }
        (0..self.nodes)
            .all(|k| (0..self.nodes).all(|m| self.relay_sets[k].contains(&m) == self.client_sets[m].contains(&k)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_based(s: &[usize]) -> Vec<usize> {
        s.iter().map(|x| x + 1).collect()
    }

    #[test]
    fn five_three_matches_worked_example() {
        let t = Topology::build(5, 3).unwrap();
        assert_eq!(one_based(t.relays_of(0)), vec![1, 5, 4]);
        assert_eq!(one_based(t.clients_of(0)), vec![1, 2, 3]);
        assert_eq!(one_based(t.clients_of(1)), vec![2, 3, 4]);
        assert_eq!(one_based(t.clients_of(4)), vec![5, 1, 2]);
        assert!(t.check_duality());
    }

    #[test]
    fn complete_case() {
        let t = Topology::build(3, 3).unwrap();
        for k in 0..3 {
            let mut r = t.relays_of(k).to_vec();
            r.sort();
            assert_eq!(r, vec![0, 1, 2]);
            let mut u = t.clients_of(k).to_vec();
            u.sort();
            assert_eq!(u, vec![0, 1, 2]);
        }
    }

    #[test]
    fn degree_one_is_identity() {
        let t = Topology::build(4, 1).unwrap();
        assert!(t.check_duality());
        for k in 0..4 {
            assert_eq!(t.relays_of(k), &[k]);
        }
    }

    #[test]
    fn broken_topology_fails_duality() {
        let t = Topology::build(5, 3).unwrap();
        let mut relays = t.relay_sets.clone();
        relays[2].pop();
        let broken = Topology::from_sets(5, 3, relays, t.client_sets.clone());
        assert!(!broken.check_duality());
    }

    #[test]
    fn invalid_params() {
        assert!(Topology::build(1, 1).is_err());
        assert!(Topology::build(4, 5).is_err());
        assert!(Topology::build(4, 0).is_err());
    }

    #[test]
    fn duality_and_coverage_for_all_small_sizes() {
        for k in 2..=12 {
            for d in 1..=k {
                let t = Topology::build(k, d).unwrap();
                assert!(t.check_duality(), "K={k} d={d}");
                for m in 0..k {
                    let count = (0..k).filter(|&c| t.relays_of(c).contains(&m)).count();
                    assert_eq!(count, d);
                }
                for c in 0..k {
                    assert!(t.relays_of(c).contains(&c));
                }
            }
        }
    }
}
