//! Merge and split moves that change the number of environments.
//!
//! Both moves are scored with the same log posterior of assignments and
//! data, with the Dirichlet-distributed parameters integrated out:
//!
//! * per user, a Dirichlet-multinomial over environments with
//!   concentration `alpha_mass / K` per environment;
//! * per environment, a Dirichlet-multinomial over the items in its slots,
//!   plus the no-revisit correction `-ln(1 - phi(src))` of every step;
//! * per environment, the marginal likelihood of `ln(1 + tau)` over all its
//!   inter-event times under a normal model with a conjugate
//!   normal-inverse-gamma prior (skipped without timestamps). An environment
//!   whose gaps split into tight clusters gains from separating them.
//!
//! Moves are applied provisionally through the live counts and undone if
//! they do not raise the objective.

use std::fmt;

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::Result;
use crate::state::ModelState;
use crate::windows::WindowSet;

/// Normal-inverse-gamma prior `(mean, kappa, shape, scale)` on log gaps.
pub const TAU_PRIOR: (f64, f64, f64, f64) = (0.0, 0.01, 1.0, 1.0);
/// Candidate pairs tried per merge sweep.
pub const MERGE_CANDIDATES: usize = 10;
/// Smallest environment a split is attempted on.
pub const MIN_SPLIT_WINDOWS: u32 = 40;

/// Log marginal likelihood of `xs` under a normal with unknown mean and
/// variance and the [`TAU_PRIOR`].
pub fn log_gap_evidence(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let (mu0, kappa0, a0, b0) = TAU_PRIOR;
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let kappa = kappa0 + n;
    let a = a0 + n / 2.0;
    let b = b0 + ss / 2.0 + kappa0 * n * (mean - mu0) * (mean - mu0) / (2.0 * kappa);
    ln_gamma(a) - ln_gamma(a0) + a0 * b0.ln() - a * b.ln() + 0.5 * (kappa0 / kappa).ln()
        - n / 2.0 * (2.0 * std::f64::consts::PI).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeAction {
    pub kept: usize,
    pub absorbed: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitAction {
    pub env: usize,
    pub new_env: usize,
    pub moved: usize,
    pub delta: f64,
}

/// What one adaptation barrier changed. Environment indices refer to the
/// labels in use while the sweep ran.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AdaptReport {
    pub k_before: usize,
    pub k_after: usize,
    pub merges: Vec<MergeAction>,
    pub splits: Vec<SplitAction>,
}

impl fmt::Display for AdaptReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "adapt K {} -> {}", self.k_before, self.k_after)?;
        for m in &self.merges {
            write!(f, "; merge {}+{} delta={:.4}", m.kept, m.absorbed, m.delta)?;
        }
        for s in &self.splits {
            write!(f, "; split {}->{} moved={} delta={:.4}", s.env, s.new_env, s.moved, s.delta)?;
        }
        Ok(())
    }
}

/// The objective, with per-environment terms cached between moves.
struct Objective<'a> {
    windows: &'a WindowSet,
    timed: bool,
    members: Vec<Vec<u32>>,
    terms: Vec<f64>,
}

impl<'a> Objective<'a> {
    fn new(state: &ModelState, windows: &'a WindowSet, timed: bool) -> Self {
        let mut members = vec![Vec::new(); state.k()];
        for (idx, &z) in state.assignments().iter().enumerate() {
            members[z as usize].push(idx as u32);
        }
        let mut obj = Self { windows, timed, members, terms: Vec::new() };
        obj.terms = (0..state.k()).map(|m| obj.env_term(state, m)).collect();
        obj
    }

    fn env_term(&self, state: &ModelState, env: usize) -> f64 {
        if state.a(env) == 0 {
            return 0.0;
        }
        let beta = state.beta();
        let n_beta = state.n_items() as f64 * beta;
        let slots = state.slots(env) as f64;
        let mut items = ln_gamma(n_beta) - ln_gamma(slots + n_beta);
        let ln_gamma_beta = ln_gamma(beta);
        for i in 0..state.n_items() {
            let c = state.c(i, env);
            if c > 0 {
                items += ln_gamma(f64::from(c) + beta) - ln_gamma_beta;
            }
        }
        let mut steps = 0.0;
        let mut gaps = Vec::new();
        for &idx in &self.members[env] {
            let w = self.windows.get(idx as usize);
            for &src in &w.items[..w.items.len() - 1] {
                let stay = slots + n_beta - f64::from(state.c(src as usize, env)) - beta;
                steps -= (stay / (slots + n_beta)).ln();
            }
            if self.timed {
                gaps.extend(w.taus.iter().map(|t| t.max(0.0).ln_1p()));
            }
        }
        items + steps + log_gap_evidence(&gaps)
    }

    fn total(&self, state: &ModelState, k_eff: usize) -> f64 {
        user_term(state, k_eff) + self.terms.iter().sum::<f64>()
    }

    fn move_windows(&self, state: &mut ModelState, idxs: &[u32], env: usize) -> Result<()> {
        for &idx in idxs {
            state.reassign(idx as usize, self.windows.get(idx as usize), env as u32)?;
        }
        Ok(())
    }
}

/// User-side term for `k_eff` live environments; empty environments add nothing.
fn user_term(state: &ModelState, k_eff: usize) -> f64 {
    let mass = state.hyper().alpha_mass;
    let alpha = mass / k_eff as f64;
    let ln_gamma_alpha = ln_gamma(alpha);
    let ln_gamma_mass = ln_gamma(mass);
    let mut total = 0.0;
    for u in 0..state.n_users() {
        let n = state.n(u);
        if n == 0 {
            continue;
        }
        total += ln_gamma_mass - ln_gamma(f64::from(n) + mass);
        for &e in state.e_row(u).iter().filter(|&&e| e > 0) {
            total += ln_gamma(f64::from(e) + alpha) - ln_gamma_alpha;
        }
    }
    total
}

/// Log posterior of the current assignments and the data.
pub fn joint_log_posterior(state: &ModelState, windows: &WindowSet, timed: bool) -> f64 {
    Objective::new(state, windows, timed).total(state, state.k())
}

/// Cosine similarity of the item distributions of two environments.
fn phi_cosine(state: &ModelState, x: usize, y: usize) -> f64 {
    let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
    for i in 0..state.n_items() {
        let (p, q) = (state.phi(x, i), state.phi(y, i));
        dot += p * q;
        nx += p * p;
        ny += q * q;
    }
    dot / (nx.sqrt() * ny.sqrt())
}

/// Tries to merge the most similar environment pairs.
pub fn merge_sweep(state: &mut ModelState, windows: &WindowSet, timed: bool) -> Result<Vec<MergeAction>> {
    let k = state.k();
    if k < 2 {
        return Ok(Vec::new());
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(k * (k - 1) / 2);
    for x in 0..k {
        for y in x + 1..k {
            pairs.push((phi_cosine(state, x, y), x, y));
        }
    }
    pairs.sort_by(|p, q| q.0.total_cmp(&p.0).then((p.1, p.2).cmp(&(q.1, q.2))));
    pairs.truncate(MERGE_CANDIDATES);

    let mut obj = Objective::new(state, windows, timed);
    let mut live = vec![true; k];
    let mut k_eff = k;
    let mut base = obj.total(state, k_eff);
    let mut actions = Vec::new();
    for (_, keep, gone) in pairs {
        if !live[keep] || !live[gone] || k_eff < 2 {
            continue;
        }
        let moved = std::mem::take(&mut obj.members[gone]);
        let kept_len = obj.members[keep].len();
        obj.move_windows(state, &moved, keep)?;
        obj.members[keep].extend_from_slice(&moved);
        let saved = (obj.terms[keep], obj.terms[gone]);
        obj.terms[keep] = obj.env_term(state, keep);
        obj.terms[gone] = 0.0;
        let candidate = obj.total(state, k_eff - 1);
        if candidate > base {
            actions.push(MergeAction { kept: keep, absorbed: gone, delta: candidate - base });
            base = candidate;
            live[gone] = false;
            k_eff -= 1;
        } else {
            obj.move_windows(state, &moved, gone)?;
            obj.members[keep].truncate(kept_len);
            obj.members[gone] = moved;
            (obj.terms[keep], obj.terms[gone]) = saved;
        }
    }
    let mut dead: Vec<usize> = (0..k).filter(|&m| !live[m]).collect();
    dead.sort_unstable_by(|a, b| b.cmp(a));
    for m in dead {
        state.remove_env(m)?;
    }
    Ok(actions)
}

/// Tries to move the longest-gap tail of each large environment into a new
/// environment of its own.
pub fn split_sweep(state: &mut ModelState, windows: &WindowSet, timed: bool) -> Result<Vec<SplitAction>> {
    if !timed || !windows.timestamped() {
        return Ok(Vec::new());
    }
    let mut obj = Objective::new(state, windows, timed);
    let mut base = obj.total(state, state.k());
    let mut actions = Vec::new();
    for env in 0..state.k() {
        let a = state.a(env);
        if a < MIN_SPLIT_WINDOWS {
            continue;
        }
        let n_tail = a as usize * 5 / 100;
        let original = obj.members[env].clone();
        let mut order: Vec<(f64, u32)> = original
            .iter()
            .map(|&idx| (windows.get(idx as usize).max_tau(), idx))
            .collect();
        order.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)));
        let mut tail: Vec<u32> = order[..n_tail].iter().map(|p| p.1).collect();
        tail.sort_unstable();

        let new_env = state.add_env();
        obj.move_windows(state, &tail, new_env)?;
        obj.members[env].retain(|idx| tail.binary_search(idx).is_err());
        obj.members.push(tail);
        let saved = obj.terms[env];
        obj.terms[env] = obj.env_term(state, env);
        obj.terms.push(obj.env_term(state, new_env));
        let candidate = obj.total(state, state.k());
        if candidate > base {
            actions.push(SplitAction { env, new_env, moved: n_tail, delta: candidate - base });
            base = candidate;
        } else {
            let tail = obj.members.pop().unwrap_or_default();
            obj.terms.pop();
            obj.move_windows(state, &tail, env)?;
            state.remove_env(new_env)?;
            obj.members[env] = original;
            obj.terms[env] = saved;
        }
    }
    Ok(actions)
}

/// One adaptation barrier: a merge sweep followed by a split sweep.
pub fn adapt(state: &mut ModelState, windows: &WindowSet, timed: bool) -> Result<AdaptReport> {
    let k_before = state.k();
    let merges = merge_sweep(state, windows, timed)?;
    let splits = split_sweep(state, windows, timed)?;
    Ok(AdaptReport { k_before, k_after: state.k(), merges, splits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Hyperparams;

    fn lg(x: f64) -> f64 {
        ln_gamma(x)
    }

    /// Chain rule over Student-t posterior predictives.
    fn sequential_evidence(xs: &[f64]) -> f64 {
        let (mut mu, mut kappa, mut a, mut b) = TAU_PRIOR;
        let mut total = 0.0;
        for &x in xs {
            let nu = 2.0 * a;
            let scale2 = b * (kappa + 1.0) / (a * kappa);
            let z = (x - mu) * (x - mu) / (nu * scale2);
            total += lg((nu + 1.0) / 2.0) - lg(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI * scale2).ln()
                - (nu + 1.0) / 2.0 * z.ln_1p();
            b += kappa * (x - mu) * (x - mu) / (2.0 * (kappa + 1.0));
            mu = (kappa * mu + x) / (kappa + 1.0);
            kappa += 1.0;
            a += 0.5;
        }
        total
    }

    #[test]
    fn gap_evidence_matches_chain_rule() {
        assert_eq!(log_gap_evidence(&[]), 0.0);
        for xs in [vec![1.3], vec![0.0, 2.0, 2.5], vec![13.8; 5], vec![0.1, 7.0, 3.3, 3.3, 9.9, 0.0]] {
            let (got, want) = (log_gap_evidence(&xs), sequential_evidence(&xs));
            assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{xs:?}: {got} vs {want}");
        }
    }

    #[test]
    fn single_window_by_hand() {
        // one window u0: items 0 -> 1, gap 3, over 3 items, K = 1
        let ws = WindowSet::from_parts(1, 1, 3, &[(0, vec![0, 1], vec![3.0])]).unwrap();
        let st = ModelState::from_assignments(&ws, 1, Hyperparams::default(), &[0]).unwrap();
        let beta = 0.001;
        let user = lg(50.0) - lg(51.0) + lg(51.0) - lg(50.0);
        let items = lg(3.0 * beta) - lg(2.0 + 3.0 * beta) + 2.0 * (lg(1.0 + beta) - lg(beta));
        let phi_src = (1.0 + beta) / (2.0 + 3.0 * beta);
        let step = -(1.0 - phi_src).ln();
        let taus = sequential_evidence(&[4f64.ln()]);
        let expected = user + items + step + taus;
        let got = joint_log_posterior(&st, &ws, true);
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    fn mixed() -> WindowSet {
        let windows: Vec<_> = (0..30u32)
            .map(|j| {
                let base = if j % 2 == 0 { 0 } else { 3 };
                (j % 4, vec![base + j % 3, base + (j + 1) % 3], vec![f64::from(j % 5)])
            })
            .collect();
        WindowSet::from_parts(1, 4, 6, &windows).unwrap()
    }

    #[test]
    fn label_permutation_invariant() {
        let ws = mixed();
        let z: Vec<u32> = (0..30).map(|j| (j * 7 % 3) as u32).collect();
        let permuted: Vec<u32> = z.iter().map(|&m| [2, 0, 1][m as usize]).collect();
        let a = ModelState::from_assignments(&ws, 3, Hyperparams::default(), &z).unwrap();
        let b = ModelState::from_assignments(&ws, 3, Hyperparams::default(), &permuted).unwrap();
        let (la, lb) = (joint_log_posterior(&a, &ws, true), joint_log_posterior(&b, &ws, true));
        assert!((la - lb).abs() < 1e-9 * la.abs());
    }

    #[test]
    fn empty_env_only_changes_user_prior() {
        let ws = mixed();
        let z: Vec<u32> = (0..30).map(|j| (j % 2) as u32).collect();
        let mut st = ModelState::from_assignments(&ws, 2, Hyperparams::default(), &z).unwrap();
        let before = joint_log_posterior(&st, &ws, true);
        // recompute the user prior part independently for both K
        let prior = |st: &ModelState, k: f64| {
            let alpha = 50.0 / k;
            (0..4)
                .map(|u| {
                    let n = f64::from(st.n(u));
                    let mut t = lg(50.0) - lg(n + 50.0);
                    for m in 0..2 {
                        t += lg(f64::from(st.e(m, u)) + alpha) - lg(alpha);
                    }
                    t
                })
                .sum::<f64>()
        };
        let expected = prior(&st, 3.0) - prior(&st, 2.0);
        st.add_env();
        let after = joint_log_posterior(&st, &ws, true);
        assert!((after - before - expected).abs() < 1e-9);
    }

    /// Windows of a shared item vocabulary cloned into two environments.
    fn duplicated() -> (WindowSet, Vec<u32>) {
        let windows: Vec<_> = (0..60u32)
            .map(|j| (j % 6, vec![j % 4, (j + 1) % 4], vec![f64::from(10 + j % 3)]))
            .collect();
        let z = (0..60).map(|j| (j % 2) as u32).collect();
        (WindowSet::from_parts(1, 6, 4, &windows).unwrap(), z)
    }

    #[test]
    fn duplicate_envs_merge() {
        let (ws, z) = duplicated();
        let mut st = ModelState::from_assignments(&ws, 2, Hyperparams::default(), &z).unwrap();
        let before = joint_log_posterior(&st, &ws, true);
        let merged = ModelState::from_assignments(&ws, 1, Hyperparams::default(), &[0; 60]).unwrap();
        let oracle = joint_log_posterior(&merged, &ws, true) - before;
        assert!(oracle > 0.0);
        let actions = merge_sweep(&mut st, &ws, true).unwrap();
        assert_eq!(actions.len(), 1);
        assert!((actions[0].delta - oracle).abs() < 1e-6 * oracle.abs().max(1.0));
        assert_eq!(st.k(), 1);
        st.check_consistency(&ws).unwrap();
    }

    #[test]
    fn disjoint_envs_stay_apart() {
        let ws = mixed();
        let z: Vec<u32> = (0..30).map(|j| (j % 2) as u32).collect();
        let mut st = ModelState::from_assignments(&ws, 2, Hyperparams::default(), &z).unwrap();
        let before = joint_log_posterior(&st, &ws, true);
        let merged = ModelState::from_assignments(&ws, 1, Hyperparams::default(), &[0; 30]).unwrap();
        assert!(joint_log_posterior(&merged, &ws, true) < before);
        assert!(merge_sweep(&mut st, &ws, true).unwrap().is_empty());
        assert_eq!(st.assignments(), &z[..]);
        st.check_consistency(&ws).unwrap();
    }

    #[test]
    fn single_env_merge_is_noop() {
        let (ws, _) = duplicated();
        let mut st = ModelState::from_assignments(&ws, 1, Hyperparams::default(), &[0; 60]).unwrap();
        assert!(merge_sweep(&mut st, &ws, true).unwrap().is_empty());
    }

    fn with_gaps(gaps: impl Fn(u32) -> f64) -> WindowSet {
        let windows: Vec<_> = (0..100u32)
            .map(|j| (j % 10, vec![j % 3, (j + 1) % 3], vec![gaps(j)]))
            .collect();
        WindowSet::from_parts(1, 10, 3, &windows).unwrap()
    }

    #[test]
    fn bimodal_gaps_split() {
        let ws = with_gaps(|j| if j % 20 == 7 { 1e6 } else { 1.0 });
        let mut st = ModelState::from_assignments(&ws, 1, Hyperparams::default(), &[0; 100]).unwrap();
        let before = joint_log_posterior(&st, &ws, true);
        let mut z = vec![0u32; 100];
        for j in (7..100).step_by(20) {
            z[j] = 1;
        }
        let split = ModelState::from_assignments(&ws, 2, Hyperparams::default(), &z).unwrap();
        let oracle = joint_log_posterior(&split, &ws, true) - before;
        let actions = split_sweep(&mut st, &ws, true).unwrap();
        assert_eq!(actions.len(), 1);
        assert_eq!(actions[0].moved, 5);
        assert!(oracle > 0.0);
        assert!((actions[0].delta - oracle).abs() < 1e-6 * oracle.abs().max(1.0));
        assert_eq!(st.assignments(), &z[..]);
    }

    #[test]
    fn constant_gaps_do_not_split() {
        let ws = with_gaps(|_| 5.0);
        let mut st = ModelState::from_assignments(&ws, 1, Hyperparams::default(), &[0; 100]).unwrap();
        let before = st.clone();
        assert!(split_sweep(&mut st, &ws, true).unwrap().is_empty());
        assert_eq!(st.assignments(), before.assignments());
        assert_eq!(st.k(), 1);
        st.check_consistency(&ws).unwrap();
    }

    #[test]
    fn no_splits_without_timestamps() {
        let ws = with_gaps(|j| if j % 20 == 7 { 1e6 } else { 1.0 });
        let mut st = ModelState::from_assignments(&ws, 1, Hyperparams::default(), &[0; 100]).unwrap();
        assert!(split_sweep(&mut st, &ws, false).unwrap().is_empty());
    }
}
