use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{derive_seed, seeded};

/// Per-unit partition of the fan-in into `d` branches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchMasks {
    fan_in: usize,
    units: usize,
    branches: usize,
    /// `assignment[u * fan_in + j]` is the branch of input `j` at unit `u`.
    assignment: Vec<u16>,
}

/// Uniformly random partition of `0..fan_in` into `d` groups of size
/// `floor(fan_in / d)` or `ceil(fan_in / d)`, independently per unit.
pub fn build_masks(fan_in: usize, units: usize, d: usize, seed: u64) -> Result<BranchMasks> {
    if d == 0 {
        return invalid("branch count must be at least 1");
    }
    if d > fan_in {
        return invalid(format!("branch count {d} exceeds fan-in {fan_in}"));
    }
    if d > u16::MAX as usize {
        return invalid("branch count too large");
    }
    let base = fan_in / d;
    let extra = fan_in % d;
    let mut assignment = vec![0u16; units * fan_in];
    let mut order: Vec<usize> = (0..fan_in).collect();
    for u in 0..units {
        order.sort_unstable();
        order.shuffle(&mut seeded(derive_seed(seed, u as u64)));
        let row = &mut assignment[u * fan_in..(u + 1) * fan_in];
        let mut pos = 0;
        for l in 0..d {
            let size = base + usize::from(l < extra);
            for &j in &order[pos..pos + size] {
                row[j] = l as u16;
            }
            pos += size;
        }
    }
    Ok(BranchMasks { fan_in, units, branches: d, assignment })
}

impl BranchMasks {
    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn branches(&self) -> usize {
        self.branches
    }

    pub fn branch_of(&self, unit: usize, input: usize) -> usize {
        self.assignment[unit * self.fan_in + input] as usize
    }

    /// The binary vector `S_l` of unit `unit`.
    pub fn mask(&self, unit: usize, branch: usize) -> Vec<bool> {
        (0..self.fan_in).map(|j| self.branch_of(unit, j) == branch).collect()
    }

    pub fn group_sizes(&self, unit: usize) -> Vec<usize> {
        let mut sizes = vec![0; self.branches];
        for j in 0..self.fan_in {
            sizes[self.branch_of(unit, j)] += 1;
        }
        sizes
    }

    /// Relabels inputs: new input `i` is old input `perm[i]`.
    pub fn permute_inputs(&self, perm: &[usize]) -> Self {
        let mut assignment = vec![0u16; self.assignment.len()];
        for u in 0..self.units {
            for (i, &p) in perm.iter().enumerate() {
                assignment[u * self.fan_in + i] = self.assignment[u * self.fan_in + p];
            }
        }
        Self { assignment, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_into_three() {
        let m = build_masks(6, 2, 3, 1).unwrap();
        for u in 0..2 {
            assert_eq!(m.group_sizes(u), vec![2, 2, 2]);
        }
    }

    #[test]
    fn single_branch_is_all_ones() {
        let m = build_masks(5, 3, 1, 9).unwrap();
        assert!((0..3).all(|u| m.mask(u, 0).iter().all(|&b| b)));
    }

    #[test]
    fn rejects_bad_counts() {
        assert!(build_masks(3, 1, 4, 0).is_err());
        assert!(build_masks(3, 1, 0, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(build_masks(20, 4, 3, 5).unwrap(), build_masks(20, 4, 3, 5).unwrap());
        assert_ne!(build_masks(20, 4, 3, 5).unwrap(), build_masks(20, 4, 3, 6).unwrap());
    }
}
