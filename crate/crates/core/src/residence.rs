//! Inter-event time model: one empirical tail distribution per environment.
//!
//! The probability that environment `M` produced a gap `tau` is the
//! posterior-predictive `(b + 1) / (n + K)`, where `b` counts stored gaps
//! strictly greater than `tau` and `n` is the number of stored gaps.

use serde::{Deserialize, Serialize};

use crate::windows::WindowSet;

/// Sorted inter-event times per environment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EccdfTable {
    tables: Vec<Vec<f64>>,
}

impl EccdfTable {
    /// Empty tables for `k` environments.
    pub fn empty(k: usize) -> Self {
        Self { tables: vec![Vec::new(); k] }
    }

    /// Takes per-environment gap lists in any order.
    pub fn from_tables(mut tables: Vec<Vec<f64>>) -> Self {
        for t in &mut tables {
            t.sort_unstable_by(f64::total_cmp);
        }
        Self { tables }
    }

    /// Collects every gap of every assigned window into its environment.
    pub fn rebuild(windows: &WindowSet, assignments: &[u32], k: usize) -> Self {
        let mut tables = vec![Vec::new(); k];
        if windows.timestamped() {
            for (w, &z) in windows.iter().zip(assignments) {
                if let Some(t) = tables.get_mut(z as usize) {
                    t.extend_from_slice(w.taus);
                }
            }
        }
        Self::from_tables(tables)
    }

    pub fn k(&self) -> usize {
        self.tables.len()
    }

    pub fn env(&self, env: usize) -> &[f64] {
        &self.tables[env]
    }

    pub fn tables(&self) -> &[Vec<f64>] {
        &self.tables
    }

    /// Stored gaps of an environment (`n_M`).
    pub fn n(&self, env: usize) -> usize {
        self.tables[env].len()
    }

    /// Number of stored gaps strictly greater than `tau`.
    pub fn tail_count(&self, env: usize, tau: f64) -> usize {
        let t = &self.tables[env];
        t.len() - t.partition_point(|&x| x <= tau)
    }

    /// Predictive probability of one gap under environment `env` when there
    /// are `k` environments.
    pub fn tau_likelihood(&self, env: usize, tau: f64, k: usize) -> f64 {
        (self.tail_count(env, tau) as f64 + 1.0) / (self.n(env) as f64 + k as f64)
    }

    /// Sum of log predictive probabilities of a window's gaps.
    pub fn log_window_likelihood(&self, env: usize, taus: &[f64], k: usize) -> f64 {
        let denom = (self.n(env) as f64 + k as f64).ln();
        taus.iter()
            .map(|&tau| (self.tail_count(env, tau) as f64 + 1.0).ln() - denom)
            .sum()
    }

    pub fn insert(&mut self, env: usize, taus: &[f64]) {
        let t = &mut self.tables[env];
        for &tau in taus {
            let at = t.partition_point(|&x| x < tau);
            t.insert(at, tau);
        }
    }

    /// Removes one copy of each gap; returns false if some gap was missing.
    pub fn remove(&mut self, env: usize, taus: &[f64]) -> bool {
        let t = &mut self.tables[env];
        let mut ok = true;
        for &tau in taus {
            let at = t.partition_point(|&x| x < tau);
            if at < t.len() && t[at] == tau {
                t.remove(at);
            } else {
                ok = false;
            }
        }
        ok
    }

    /// Applies sorted insertions and removals to one environment in a single
    /// merge. Returns false if some removal had no matching gap.
    pub fn apply_sorted(&mut self, env: usize, insert: &[f64], remove: &[f64]) -> bool {
        let (_, kept) = sorted_diff(remove, &self.tables[env]);
        let missing = kept.len() + remove.len() != self.tables[env].len();
        let mut merged = Vec::with_capacity(kept.len() + insert.len());
        let (mut i, mut j) = (0, 0);
        while i < kept.len() && j < insert.len() {
            if kept[i].total_cmp(&insert[j]).is_le() {
                merged.push(kept[i]);
                i += 1;
            } else {
                merged.push(insert[j]);
                j += 1;
            }
        }
        merged.extend_from_slice(&kept[i..]);
        merged.extend_from_slice(&insert[j..]);
        self.tables[env] = merged;
        !missing
    }
}

/// Multiset difference of two sorted slices: `(old - new, new - old)`.
pub(crate) fn sorted_diff(old: &[f64], new: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (mut only_old, mut only_new) = (Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < old.len() && j < new.len() {
        match old[i].total_cmp(&new[j]) {
            std::cmp::Ordering::Less => {
                only_old.push(old[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                only_new.push(new[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    only_old.extend_from_slice(&old[i..]);
    only_new.extend_from_slice(&new[j..]);
    (only_old, only_new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rebuild_sorts() {
        let ws = WindowSet::from_parts(
            1,
            1,
            3,
            &[(0, vec![0, 1], vec![3.0]), (0, vec![1, 2], vec![1.0]), (0, vec![2, 0], vec![2.0])],
        )
        .unwrap();
        let t = EccdfTable::rebuild(&ws, &[0, 0, 0], 2);
        assert_eq!(t.env(0), &[1.0, 2.0, 3.0]);
        assert_eq!(t.n(0), 3);
        assert!(t.env(1).is_empty());
    }

    #[test]
    fn tail_counts() {
        let t = EccdfTable::from_tables(vec![vec![1.0, 2.0, 3.0]]);
        assert_eq!(t.tail_count(0, 2.0), 1);
        assert_eq!(t.tail_count(0, 0.5), 3);
        assert_eq!(t.tail_count(0, 3.0), 0);
    }

    #[test]
    fn likelihood_examples() {
        let t = EccdfTable::from_tables(vec![(1..=10).map(f64::from).collect(), vec![]]);
        // five gaps above 5.0, ten stored, three environments
        assert!((t.tau_likelihood(0, 5.0, 3) - 6.0 / 13.0).abs() < 1e-15);
        assert!((t.tau_likelihood(1, 42.0, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert!((t.tau_likelihood(0, -0.0, 3) - 11.0 / 13.0).abs() < 1e-15);
    }

    #[test]
    fn tail_count_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // coarse values force plenty of ties
        let gaps: Vec<f64> = (0..10_000).map(|_| f64::from(rng.random_range(0..500u32))).collect();
        let t = EccdfTable::from_tables(vec![gaps.clone()]);
        for _ in 0..100 {
            let q = f64::from(rng.random_range(0..520u32)) - 10.0;
            let oracle = gaps.iter().filter(|&&x| x > q).count();
            assert_eq!(t.tail_count(0, q), oracle);
        }
    }

    #[test]
    fn outlier_less_likely_than_median() {
        let t = EccdfTable::from_tables(vec![(0..101).map(f64::from).collect()]);
        assert!(t.tau_likelihood(0, 1e6, 2) < t.tau_likelihood(0, 50.0, 2));
    }

    #[test]
    fn insert_remove_roundtrip() {
        let mut t = EccdfTable::from_tables(vec![vec![5.0, 1.0, 3.0]]);
        let before = t.clone();
        t.insert(0, &[2.0, 3.0, 9.0]);
        assert_eq!(t.env(0), &[1.0, 2.0, 3.0, 3.0, 5.0, 9.0]);
        assert!(t.remove(0, &[9.0, 3.0, 2.0]));
        assert_eq!(t, before);
        assert!(!t.remove(0, &[4.0]));
    }

    #[test]
    fn batch_apply_matches_single_steps() {
        let mut a = EccdfTable::from_tables(vec![vec![1.0, 2.0, 2.0, 3.0, 7.0]]);
        let mut b = a.clone();
        assert!(a.apply_sorted(0, &[0.5, 2.0, 8.0], &[2.0, 7.0]));
        b.insert(0, &[0.5, 2.0, 8.0]);
        assert!(b.remove(0, &[2.0, 7.0]));
        assert_eq!(a, b);
        assert!(!a.apply_sorted(0, &[], &[100.0]));
        let (gone, added) = sorted_diff(&[1.0, 2.0, 2.0, 5.0], &[2.0, 3.0, 5.0, 5.0]);
        assert_eq!(gone, vec![1.0, 2.0]);
        assert_eq!(added, vec![3.0, 5.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone_in_tau(gaps in prop::collection::vec(0.0f64..100.0, 0..50), t1 in 0.0f64..120.0, t2 in 0.0f64..120.0, k in 1usize..10) {
                let t = EccdfTable::from_tables(vec![gaps]);
                let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                let (l1, l2) = (t.tau_likelihood(0, lo, k), t.tau_likelihood(0, hi, k));
                prop_assert!(l1 >= l2);
                prop_assert!(l2 > 0.0 && l1 <= 1.0);
            }
        }
    }
}
