//! Sampler sufficient statistics and the frozen model built from them.
//!
//! Count matrices are dense and row-major with the environment as the fast
//! axis, so scoring one window against every environment reads contiguous
//! memory. Rows are padded to a capacity (`stride`) so environments can be
//! added during split proposals without reshaping.

use serde::{Deserialize, Serialize};

use crate::corpus::Dictionary;
use crate::error::{Error, Result};
use crate::residence::EccdfTable;
use crate::windows::{Window, WindowSet};

/// Marker for a window that currently has no environment.
pub const UNASSIGNED: u32 = u32::MAX;

/// Dirichlet prior settings.
///
/// The per-user concentration is `alpha_mass / K`, recomputed whenever the
/// number of environments changes, with uniform base weights over
/// environments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha_mass: f64,
    pub beta: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha_mass: 50.0,
            beta: 0.001,
        }
    }
}

impl Hyperparams {
    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha_mass / k as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_mass > 0.0 && self.alpha_mass.is_finite()) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("beta must be positive".into()));
        }
        Ok(())
    }
}

/// Probability that a no-revisit walk at an item with weight `phi_src` moves
/// to an item with weight `phi_dst`: `phi_dst / (1 - phi_src)`.
pub fn walk_transition(phi_src: f64, phi_dst: f64) -> Result<f64> {
    let stay = 1.0 - phi_src;
    if !(stay > 0.0) {
        return Err(Error::Numeric(format!(
            "source item weight {phi_src} leaves no mass for other items"
        )));
    }
    Ok(phi_dst / stay)
}

/// Live counts of the collapsed Gibbs sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    k: usize,
    stride: usize,
    b: usize,
    n_users: usize,
    n_items: usize,
    hyper: Hyperparams,
    /// `e[u * stride + m]`: windows of user `u` in environment `m`.
    e: Vec<u32>,
    /// `c[i * stride + m]`: item slots holding `i` across windows in `m`.
    c: Vec<u32>,
    /// Windows per environment.
    a: Vec<u32>,
    /// Assigned windows per user.
    n: Vec<u32>,
    assignments: Vec<u32>,
}

impl ModelState {
    /// An empty state with `k` environments and every window unassigned.
    pub fn new(windows: &WindowSet, k: usize, hyper: Hyperparams) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("need at least one environment".into()));
        }
        hyper.validate()?;
        let stride = k.next_power_of_two();
        Ok(Self {
            k,
            stride,
            b: windows.b(),
            n_users: windows.n_users(),
            n_items: windows.n_items(),
            hyper,
            e: vec![0; windows.n_users() * stride],
            c: vec![0; windows.n_items() * stride],
            a: vec![0; stride],
            n: vec![0; windows.n_users()],
            assignments: vec![UNASSIGNED; windows.len()],
        })
    }

    /// Rebuilds counts from an explicit assignment vector.
    pub fn from_assignments(
        windows: &WindowSet,
        k: usize,
        hyper: Hyperparams,
        assignments: &[u32],
    ) -> Result<Self> {
        if assignments.len() != windows.len() {
            return Err(Error::Invariant(format!(
                "{} assignments for {} windows",
                assignments.len(),
                windows.len()
            )));
        }
        let mut state = Self::new(windows, k, hyper)?;
        for (idx, &env) in assignments.iter().enumerate().filter(|p| *p.1 != UNASSIGNED) {
            state.assign(idx, windows.get(idx), env)?;
        }
        Ok(state)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn hyper(&self) -> Hyperparams {
        self.hyper
    }

    pub fn alpha(&self) -> f64 {
        self.hyper.alpha(self.k)
    }

    pub fn beta(&self) -> f64 {
        self.hyper.beta
    }

    pub fn assignments(&self) -> &[u32] {
        &self.assignments
    }

    pub fn e(&self, env: usize, user: usize) -> u32 {
        self.e[user * self.stride + env]
    }

    pub fn c(&self, item: usize, env: usize) -> u32 {
        self.c[item * self.stride + env]
    }

    pub fn a(&self, env: usize) -> u32 {
        self.a[env]
    }

    pub fn n(&self, user: usize) -> u32 {
        self.n[user]
    }

    /// Environment counts of one user, length `K`.
    pub fn e_row(&self, user: usize) -> &[u32] {
        &self.e[user * self.stride..user * self.stride + self.k]
    }

    /// Environment counts of one item, length `K`.
    pub fn c_row(&self, item: usize) -> &[u32] {
        &self.c[item * self.stride..item * self.stride + self.k]
    }

    pub fn a_row(&self) -> &[u32] {
        &self.a[..self.k]
    }

    /// Item-slot total of an environment, `(B + 1) * a`.
    pub fn slots(&self, env: usize) -> u64 {
        (self.b as u64 + 1) * u64::from(self.a[env])
    }

    pub fn assign(&mut self, idx: usize, w: Window<'_>, env: u32) -> Result<()> {
        let m = env as usize;
        if m >= self.k {
            return Err(Error::Invariant(format!("environment {m} out of range (K = {})", self.k)));
        }
        if self.assignments[idx] != UNASSIGNED {
            return Err(Error::Invariant(format!("window {idx} is already assigned")));
        }
        let u = w.user as usize;
        self.e[u * self.stride + m] += 1;
        for &i in w.items {
            self.c[i as usize * self.stride + m] += 1;
        }
        self.a[m] += 1;
        self.n[u] += 1;
        self.assignments[idx] = env;
        Ok(())
    }

    /// Removes a window from its environment and returns that environment.
    pub fn unassign(&mut self, idx: usize, w: Window<'_>) -> Result<u32> {
        let env = self.assignments[idx];
        if env == UNASSIGNED {
            return Err(Error::Invariant(format!("window {idx} is not assigned")));
        }
        let m = env as usize;
        let u = w.user as usize;
        let underflow = || Error::Invariant(format!("count underflow removing window {idx}"));
        let e = &mut self.e[u * self.stride + m];
        *e = e.checked_sub(1).ok_or_else(underflow)?;
        for &i in w.items {
            let c = &mut self.c[i as usize * self.stride + m];
            *c = c.checked_sub(1).ok_or_else(underflow)?;
        }
        self.a[m] = self.a[m].checked_sub(1).ok_or_else(underflow)?;
        self.n[u] = self.n[u].checked_sub(1).ok_or_else(underflow)?;
        self.assignments[idx] = UNASSIGNED;
        Ok(env)
    }

    /// Moves an assigned window to another environment.
    pub fn reassign(&mut self, idx: usize, w: Window<'_>, env: u32) -> Result<u32> {
        let prev = self.unassign(idx, w)?;
        self.assign(idx, w, env)?;
        Ok(prev)
    }

    /// Posterior mean of `pi_{env|user}`.
    pub fn pi(&self, env: usize, user: usize) -> f64 {
        let alpha = self.alpha();
        (f64::from(self.e(env, user)) + alpha) / (f64::from(self.n[user]) + self.k as f64 * alpha)
    }

    /// Posterior mean of `phi_env(item)`.
    pub fn phi(&self, env: usize, item: usize) -> f64 {
        let beta = self.hyper.beta;
        (f64::from(self.c(item, env)) + beta) / (self.slots(env) as f64 + self.n_items as f64 * beta)
    }

    /// Random-walk step probability `src -> dst` in `env`; zero for `src == dst`.
    pub fn transition_prob(&self, env: usize, src: usize, dst: usize) -> Result<f64> {
        if src == dst {
            return Ok(0.0);
        }
        walk_transition(self.phi(env, src), self.phi(env, dst))
    }

    pub(crate) fn adjust_e(&mut self, env: usize, user: usize, by: i64) -> Result<()> {
        adjust(&mut self.e[user * self.stride + env], by)
    }

    pub(crate) fn adjust_c(&mut self, item: usize, env: usize, by: i64) -> Result<()> {
        adjust(&mut self.c[item * self.stride + env], by)
    }

    pub(crate) fn adjust_a(&mut self, env: usize, by: i64) -> Result<()> {
        adjust(&mut self.a[env], by)
    }

    pub(crate) fn adjust_n(&mut self, user: usize, by: i64) -> Result<()> {
        adjust(&mut self.n[user], by)
    }

    /// Keeps the counts but tracks a different set of windows.
    pub(crate) fn with_assignments(&self, assignments: Vec<u32>) -> Self {
        Self { assignments, ..self.clone() }
    }

    /// Appends an empty environment and returns its index.
    pub fn add_env(&mut self) -> usize {
        if self.k == self.stride {
            let stride = self.stride * 2;
            self.e = restride(&self.e, self.n_users, self.stride, stride);
            self.c = restride(&self.c, self.n_items, self.stride, stride);
            self.a.resize(stride, 0);
            self.stride = stride;
        }
        self.k += 1;
        self.k - 1
    }

    /// Deletes an empty environment. The last environment takes its index.
    pub fn remove_env(&mut self, env: usize) -> Result<()> {
        if env >= self.k {
            return Err(Error::Invariant(format!("environment {env} out of range")));
        }
        if self.a[env] != 0 {
            return Err(Error::Invariant(format!("environment {env} is not empty")));
        }
        if self.k == 1 {
            return Err(Error::Invariant("cannot remove the last environment".into()));
        }
        let last = self.k - 1;
        if env != last {
            for row in self.e.chunks_exact_mut(self.stride).chain(self.c.chunks_exact_mut(self.stride)) {
                row[env] = row[last];
                row[last] = 0;
            }
            self.a[env] = self.a[last];
            self.a[last] = 0;
            for z in &mut self.assignments {
                if *z == last as u32 {
                    *z = env as u32;
                }
            }
        }
        self.k -= 1;
        Ok(())
    }

    /// Recounts everything from the assignments and checks the identities
    /// `sum_u e = a`, `sum_i c = (B + 1) a` and `sum_M e = n`.
    pub fn check_consistency(&self, windows: &WindowSet) -> Result<()> {
        let fresh = Self::from_assignments(windows, self.k, self.hyper, &self.assignments)?;
        for m in 0..self.k {
            let e_sum: u64 = (0..self.n_users).map(|u| u64::from(self.e(m, u))).sum();
            let c_sum: u64 = (0..self.n_items).map(|i| u64::from(self.c(i, m))).sum();
            if e_sum != u64::from(self.a[m]) {
                return Err(Error::Invariant(format!("sum_u e[{m}] = {e_sum} != a = {}", self.a[m])));
            }
            if c_sum != self.slots(m) {
                return Err(Error::Invariant(format!("sum_i c[{m}] = {c_sum} != (B+1)a = {}", self.slots(m))));
            }
        }
        for u in 0..self.n_users {
            let s: u32 = self.e_row(u).iter().sum();
            if s != self.n[u] {
                return Err(Error::Invariant(format!("sum_M e[u={u}] = {s} != n = {}", self.n[u])));
            }
        }
        let same = (0..self.n_users).all(|u| self.e_row(u) == fresh.e_row(u))
            && (0..self.n_items).all(|i| self.c_row(i) == fresh.c_row(i))
            && self.a_row() == fresh.a_row()
            && self.n == fresh.n;
        if !same {
            return Err(Error::Invariant("counts differ from a recount of the assignments".into()));
        }
        Ok(())
    }
}

fn adjust(count: &mut u32, by: i64) -> Result<()> {
    let next = i64::from(*count) + by;
    *count = u32::try_from(next)
        .map_err(|_| Error::Invariant(format!("count {count} adjusted by {by} leaves the valid range")))?;
    Ok(())
}

fn restride(data: &[u32], rows: usize, old: usize, new: usize) -> Vec<u32> {
    let mut out = vec![0; rows * new];
    for r in 0..rows {
        out[r * new..r * new + old].copy_from_slice(&data[r * old..(r + 1) * old]);
    }
    out
}

/// Immutable point estimates used for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub k: usize,
    pub b: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub timestamped: bool,
    pub hyper: Hyperparams,
    pub users: Dictionary,
    pub items: Dictionary,
    /// `pi[u * k + m]`.
    pub pi: Vec<f64>,
    /// `phi[i * k + m]`.
    pub phi: Vec<f64>,
    /// `P[M]`, proportional to the number of windows in each environment.
    pub env_weights: Vec<f64>,
    /// `phi` of an item never seen in an environment.
    pub phi_floor: Vec<f64>,
    /// Training windows per user; zero marks users the model knows nothing about.
    pub user_windows: Vec<u32>,
    pub eccdf: EccdfTable,
}

impl Model {
    /// Freezes the current counts. Dictionaries default to the decimal ids.
    pub fn from_state(state: &ModelState, eccdf: EccdfTable, timestamped: bool) -> Self {
        let k = state.k();
        let mut pi = Vec::with_capacity(state.n_users() * k);
        for u in 0..state.n_users() {
            pi.extend((0..k).map(|m| state.pi(m, u)));
        }
        let mut phi = Vec::with_capacity(state.n_items() * k);
        for i in 0..state.n_items() {
            phi.extend((0..k).map(|m| state.phi(m, i)));
        }
        let total: f64 = state.a_row().iter().map(|&a| f64::from(a)).sum();
        let env_weights = state
            .a_row()
            .iter()
            .map(|&a| if total > 0.0 { f64::from(a) / total } else { 1.0 / k as f64 })
            .collect();
        let beta = state.beta();
        let phi_floor = (0..k)
            .map(|m| beta / (state.slots(m) as f64 + state.n_items() as f64 * beta))
            .collect();
        let numbered = |n: usize| Dictionary::from((0..n).map(|i| i.to_string()).collect::<Vec<_>>());
        Self {
            k,
            b: state.b(),
            n_users: state.n_users(),
            n_items: state.n_items(),
            timestamped,
            hyper: state.hyper(),
            users: numbered(state.n_users()),
            items: numbered(state.n_items()),
            pi,
            phi,
            env_weights,
            phi_floor,
            user_windows: (0..state.n_users()).map(|u| state.n(u)).collect(),
            eccdf,
        }
    }

    /// Replaces the numeric placeholder dictionaries with real ids.
    pub fn with_dictionaries(mut self, users: Dictionary, items: Dictionary) -> Result<Self> {
        if users.len() != self.n_users || items.len() != self.n_items {
            return Err(Error::Config(format!(
                "dictionary sizes {}x{} do not match model {}x{}",
                users.len(),
                items.len(),
                self.n_users,
                self.n_items
            )));
        }
        self.users = users;
        self.items = items;
        Ok(self)
    }

    pub fn pi(&self, env: usize, user: usize) -> f64 {
        self.pi[user * self.k + env]
    }

    pub fn phi(&self, env: usize, item: usize) -> f64 {
        self.phi[item * self.k + env]
    }

    pub fn phi_row(&self, item: usize) -> &[f64] {
        &self.phi[item * self.k..(item + 1) * self.k]
    }

    pub fn pi_row(&self, user: usize) -> &[f64] {
        &self.pi[user * self.k..(user + 1) * self.k]
    }

    pub fn transition_prob(&self, env: usize, src: usize, dst: usize) -> Result<f64> {
        if src == dst {
            return Ok(0.0);
        }
        walk_transition(self.phi(env, src), self.phi(env, dst))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus() -> WindowSet {
        WindowSet::from_parts(
            1,
            3,
            4,
            &[
                (0, vec![0, 1], vec![1.0]),
                (0, vec![1, 2], vec![2.0]),
                (1, vec![2, 3], vec![3.0]),
                (2, vec![3, 0], vec![4.0]),
                (2, vec![0, 3], vec![5.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn assign_unassign_is_identity() {
        let ws = corpus();
        let mut st = ModelState::new(&ws, 3, Hyperparams::default()).unwrap();
        st.assign(0, ws.get(0), 1).unwrap();
        let before = st.clone();
        st.assign(3, ws.get(3), 2).unwrap();
        assert_eq!(st.unassign(3, ws.get(3)).unwrap(), 2);
        assert_eq!(st, before);
    }

    #[test]
    fn assign_one_window() {
        let ws = corpus();
        let mut st = ModelState::new(&ws, 2, Hyperparams::default()).unwrap();
        st.assign(0, ws.get(0), 1).unwrap();
        assert_eq!(st.a(1), 1);
        assert_eq!(st.c(0, 1) + st.c(1, 1), 2);
        assert_eq!(st.slots(1), 2);
    }

    #[test]
    fn bookkeeping_errors() {
        let ws = corpus();
        let mut st = ModelState::new(&ws, 2, Hyperparams::default()).unwrap();
        assert!(st.unassign(0, ws.get(0)).is_err());
        st.assign(0, ws.get(0), 0).unwrap();
        assert!(st.assign(0, ws.get(0), 1).is_err());
        assert!(st.assign(1, ws.get(1), 5).is_err());
        assert!(ModelState::new(&ws, 0, Hyperparams::default()).is_err());
    }

    #[test]
    fn random_assigns_keep_invariants() {
        let ws = WindowSet::from_parts(
            2,
            10,
            8,
            &(0..200)
                .map(|j| {
                    let u = (j * 7) % 10;
                    let items = vec![(j % 8) as u32, ((j + 1) % 8) as u32, ((j + 3) % 8) as u32];
                    (u as u32, items, vec![j as f64, 1.0])
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut st = ModelState::new(&ws, 4, Hyperparams::default()).unwrap();
        let mut order: Vec<usize> = (0..ws.len()).collect();
        for _ in 0..100 {
            let idx = order.swap_remove(rng.random_range(0..order.len()));
            st.assign(idx, ws.get(idx), rng.random_range(0..4)).unwrap();
        }
        st.check_consistency(&ws).unwrap();
    }

    #[test]
    fn pi_examples() {
        // e = 2, n = 4, K = 2, alpha = 25 -> 27 / 54
        let ws = WindowSet::from_parts(1, 1, 3, &[(0, vec![0, 1], vec![]), (0, vec![1, 2], vec![]), (0, vec![2, 0], vec![]), (0, vec![0, 2], vec![])]).unwrap();
        let st = ModelState::from_assignments(&ws, 2, Hyperparams::default(), &[0, 0, 1, 1]).unwrap();
        assert_eq!(st.alpha(), 25.0);
        assert!((st.pi(0, 0) - 27.0 / 54.0).abs() < 1e-15);

        let empty = WindowSet::from_parts(1, 2, 3, &[(0, vec![0, 1], vec![])]).unwrap();
        let st = ModelState::from_assignments(&empty, 4, Hyperparams::default(), &[0]).unwrap();
        for m in 0..4 {
            assert!((st.pi(m, 1) - 0.25).abs() < 1e-15);
        }

        let st = ModelState::from_assignments(&ws, 1, Hyperparams::default(), &[0, 0, 0, 0]).unwrap();
        assert_eq!(st.pi(0, 0), 1.0);
    }

    #[test]
    fn phi_examples() {
        // c = 3 in a 10-slot environment over 4 items
        let ws = WindowSet::from_parts(
            1,
            1,
            4,
            &[
                (0, vec![0, 1], vec![]),
                (0, vec![0, 2], vec![]),
                (0, vec![0, 3], vec![]),
                (0, vec![1, 2], vec![]),
                (0, vec![2, 3], vec![]),
            ],
        )
        .unwrap();
        let st = ModelState::from_assignments(&ws, 2, Hyperparams::default(), &[0; 5]).unwrap();
        assert_eq!(st.c(0, 0), 3);
        assert_eq!(st.slots(0), 10);
        assert!((st.phi(0, 0) - 3.001 / 10.004).abs() < 1e-15);
        assert!((st.phi(1, 0) - 0.25).abs() < 1e-15);
        let total: f64 = (0..4).map(|i| st.phi(0, i)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transition_examples() {
        let phi = [0.2, 0.3, 0.5];
        assert!((walk_transition(phi[0], phi[2]).unwrap() - 0.625).abs() < 1e-15);
        assert!(walk_transition(1.0, 0.0).is_err());

        let ws = corpus();
        let st = ModelState::from_assignments(&ws, 2, Hyperparams::default(), &[0, 1, 0, 1, 0]).unwrap();
        for m in 0..2 {
            for s in 0..4 {
                assert_eq!(st.transition_prob(m, s, s).unwrap(), 0.0);
                let row: f64 = (0..4).map(|d| st.transition_prob(m, s, d).unwrap()).sum();
                assert!((row - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn walk_converges_to_stationary() {
        // detailed balance: stationary mass is proportional to phi(s) (1 - phi(s))
        let phi = [0.1, 0.2, 0.3, 0.4];
        let p = |s: usize, d: usize| if s == d { 0.0 } else { walk_transition(phi[s], phi[d]).unwrap() };
        let mut dist = [1.0, 0.0, 0.0, 0.0];
        for _ in 0..500 {
            let mut next = [0.0; 4];
            for s in 0..4 {
                for d in 0..4 {
                    next[d] += dist[s] * p(s, d);
                }
            }
            dist = next;
        }
        let z: f64 = phi.iter().map(|f| f * (1.0 - f)).sum();
        for s in 0..4 {
            assert!((dist[s] - phi[s] * (1.0 - phi[s]) / z).abs() < 1e-9, "{dist:?}");
        }
    }

    #[test]
    fn estimates_move_toward_empirical_with_more_data() {
        let ws = corpus();
        let assignments = [0, 0, 0, 1, 1];
        let st1 = ModelState::from_assignments(&ws, 2, Hyperparams::default(), &assignments).unwrap();
        // duplicate every window: doubled counts
        let doubled: Vec<_> = ws
            .iter()
            .chain(ws.iter())
            .map(|w| (w.user, w.items.to_vec(), w.taus.to_vec()))
            .collect();
        let ws2 = WindowSet::from_parts(1, 3, 4, &doubled).unwrap();
        let half = Hyperparams { alpha_mass: 25.0, beta: 0.0005 };
        let assign2: Vec<u32> = assignments.iter().chain(assignments.iter()).copied().collect();
        let st2 = ModelState::from_assignments(&ws2, 2, half, &assign2).unwrap();
        for m in 0..2 {
            for u in 0..3 {
                if st1.n(u) > 0 {
                    let emp = f64::from(st1.e(m, u)) / f64::from(st1.n(u));
                    assert!((st2.pi(m, u) - emp).abs() <= (st1.pi(m, u) - emp).abs());
                }
            }
            for i in 0..4 {
                let emp = f64::from(st1.c(i, m)) / st1.slots(m) as f64;
                assert!((st2.phi(m, i) - emp).abs() <= (st1.phi(m, i) - emp).abs());
            }
        }
    }

    #[test]
    fn add_and_remove_envs() {
        let ws = corpus();
        let mut st = ModelState::from_assignments(&ws, 2, Hyperparams::default(), &[0, 1, 0, 1, 0]).unwrap();
        let snapshot = st.clone();
        for _ in 0..5 {
            st.add_env();
        }
        assert_eq!(st.k(), 7);
        st.check_consistency(&ws).unwrap();
        // move window 1 to the new last env then drop the now-empty env 1
        st.reassign(1, ws.get(1), 6).unwrap();
        st.reassign(3, ws.get(3), 6).unwrap();
        st.remove_env(1).unwrap();
        assert_eq!(st.assignments()[1], 1);
        assert_eq!(st.assignments()[3], 1);
        while st.k() > 2 {
            st.remove_env(st.k() - 1).unwrap();
        }
        st.check_consistency(&ws).unwrap();
        assert_eq!(st.assignments(), snapshot.assignments());
        assert!(st.remove_env(0).is_err());
    }

    #[test]
    fn frozen_model_is_normalized() {
        let ws = corpus();
        let st = ModelState::from_assignments(&ws, 3, Hyperparams::default(), &[0, 1, 2, 1, 0]).unwrap();
        let eccdf = EccdfTable::rebuild(&ws, st.assignments(), st.k());
        let model = Model::from_state(&st, eccdf, true);
        for u in 0..3 {
            assert!((model.pi_row(u).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for m in 0..3 {
            let s: f64 = (0..4).map(|i| model.phi(m, i)).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert!((model.env_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
