//! Multi-worker training.
//!
//! Users are split into contiguous shards, one per worker. Each worker keeps
//! a full replica of the counts, samples its own windows against it and
//! publishes a versioned snapshot of its own contribution. After every pass
//! workers are paired at random and each side pulls the snapshots the other
//! has newer versions of, applying the difference as a [`CountDelta`]. At
//! adaptation barriers the master rebuilds the global state, runs the merge
//! and split sweeps and hands every worker a fresh replica.

use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adapt;
use crate::error::{Error, Result};
use crate::residence::{sorted_diff, EccdfTable};
use crate::sampler::{gibbs_pass, initialize, stream_rng, uses_taus, Progress, TrainConfig};
use crate::state::{Model, ModelState};
use crate::windows::WindowSet;

/// The windows owned by one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub users: Range<u32>,
    pub windows: WindowSet,
    /// Index of each shard window in the full set.
    pub indices: Vec<u32>,
}

/// Splits windows by contiguous user ranges with balanced window counts.
pub fn shard(windows: &WindowSet, parts: usize) -> Result<Vec<Shard>> {
    let active = windows.per_user().iter().filter(|&&n| n > 0).count();
    if parts == 0 || parts > active {
        return Err(Error::Config(format!(
            "cannot split {active} users with windows into {parts} shards"
        )));
    }
    let per_user = windows.per_user();
    let mut cum = Vec::with_capacity(per_user.len() + 1);
    cum.push(0u64);
    for &n in per_user {
        cum.push(cum.last().copied().unwrap_or(0) + u64::from(n));
    }
    let largest = per_user.iter().copied().max().map_or(0, u64::from);
    let cuts = balanced_cuts(&cum, parts, largest).ok_or_else(|| Error::Invariant("no balanced shard cut".into()))?;

    let mut indices = vec![Vec::new(); parts];
    for (idx, w) in windows.iter().enumerate() {
        let p = cuts.partition_point(|&c| c <= w.user as usize) - 1;
        indices[p].push(idx as u32);
    }
    Ok(indices
        .into_iter()
        .enumerate()
        .map(|(p, idx)| Shard {
            users: cuts[p] as u32..cuts[p + 1] as u32,
            windows: windows.select(&idx),
            indices: idx,
        })
        .collect())
}

/// Indices into the prefix sums `cum` that split it into `parts` ranges whose
/// totals all lie in `[lo, lo + span]`, for the largest such `lo >= 1`.
///
/// With every step of `cum` at most `span`, the prefix sums reachable as the
/// end of the `p`-th range are exactly those inside an interval, so
/// feasibility of a given `lo` is a walk over `parts` intervals and the
/// feasible `lo` form a range.
fn balanced_cuts(cum: &[u64], parts: usize, span: u64) -> Option<Vec<usize>> {
    let total = *cum.last()?;
    let reach = |lo: u64| -> Option<Vec<(u64, u64)>> {
        let mut out = vec![(0u64, 0u64)];
        for _ in 0..parts {
            let (a, b) = out[out.len() - 1];
            let lo_idx = cum.partition_point(|&x| x < a + lo);
            let hi_idx = cum.partition_point(|&x| x <= b + lo + span);
            if lo_idx >= hi_idx {
                return None;
            }
            out.push((cum[lo_idx], cum[hi_idx - 1]));
        }
        Some(out)
    };
    let fits = |lo: u64| reach(lo).is_some_and(|r| r[parts].0 <= total);
    if !fits(1) {
        return None;
    }
    let (mut good, mut bad) = (1u64, total + 1);
    while bad - good > 1 {
        let mid = good + (bad - good) / 2;
        if fits(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    let lo = good;
    let bounds = reach(lo)?;
    if bounds[parts].1 < total {
        return None;
    }
    let mut values = vec![total];
    for p in (1..parts).rev() {
        let next = values[values.len() - 1];
        let from = bounds[p].0.max(next.saturating_sub(lo + span));
        let to = bounds[p].1.min(next - lo);
        let target = (total as f64 * p as f64 / parts as f64).round() as u64;
        let want = target.clamp(from, to);
        // nearest prefix sum to `want` within [from, to]
        let i = cum.partition_point(|&x| x < want);
        let above = cum.get(i).copied().filter(|&x| x <= to);
        let below = i.checked_sub(1).map(|j| cum[j]).filter(|&x| x >= from);
        let v = match (below, above) {
            (Some(b), Some(a)) => if want - b <= a - want { b } else { a },
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => return None,
        };
        values.push(v);
    }
    values.push(0);
    values.reverse();
    let mut cuts: Vec<usize> = values.iter().map(|&v| cum.partition_point(|&x| x < v)).collect();
    cuts[parts] = cum.len() - 1;
    Some(cuts)
}

/// One worker's share of the counts at some version.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub version: u64,
    pub k: usize,
    pub users: Range<u32>,
    /// `e[(u - users.start) * k + m]`.
    pub e: Vec<u32>,
    /// `c[i * k + m]`.
    pub c: Vec<u32>,
    pub a: Vec<u32>,
    pub n: Vec<u32>,
    /// Sorted inter-event times per environment.
    pub taus: Vec<Vec<f64>>,
}

impl Contribution {
    pub fn from_assignments(shard: &Shard, assignments: &[u32], k: usize, timed: bool, version: u64) -> Self {
        let ws = &shard.windows;
        let base = shard.users.start as usize;
        let rows = shard.users.len();
        let mut out = Self {
            version,
            k,
            users: shard.users.clone(),
            e: vec![0; rows * k],
            c: vec![0; ws.n_items() * k],
            a: vec![0; k],
            n: vec![0; rows],
            taus: vec![Vec::new(); k],
        };
        for (w, &z) in ws.iter().zip(assignments) {
            let m = z as usize;
            let u = w.user as usize - base;
            out.e[u * k + m] += 1;
            out.n[u] += 1;
            out.a[m] += 1;
            for &i in w.items {
                out.c[i as usize * k + m] += 1;
            }
            if timed {
                out.taus[m].extend_from_slice(w.taus);
            }
        }
        for t in &mut out.taus {
            t.sort_unstable_by(f64::total_cmp);
        }
        out
    }
}

/// Sparse count changes plus inter-event times to insert and remove.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountDelta {
    /// `(env, user, change)`.
    pub e: Vec<(u32, u32, i64)>,
    /// `(item, env, change)`.
    pub c: Vec<(u32, u32, i64)>,
    pub a: Vec<(u32, i64)>,
    pub n: Vec<(u32, i64)>,
    /// Sorted per environment.
    pub tau_insert: Vec<Vec<f64>>,
    pub tau_remove: Vec<Vec<f64>>,
}

fn diff_into<T>(old: &[u32], new: &[u32], out: &mut Vec<T>, make: impl Fn(usize, i64) -> T) {
    for (idx, (&o, &n)) in old.iter().zip(new).enumerate() {
        if o != n {
            out.push(make(idx, i64::from(n) - i64::from(o)));
        }
    }
}

impl CountDelta {
    /// The change that turns contribution `old` into `new`.
    pub fn between(old: &Contribution, new: &Contribution) -> Result<Self> {
        if old.k != new.k || old.users != new.users || old.c.len() != new.c.len() {
            return Err(Error::Invariant("contributions have different shapes".into()));
        }
        let k = new.k;
        let base = new.users.start;
        let mut d = Self::default();
        diff_into(&old.e, &new.e, &mut d.e, |idx, v| ((idx % k) as u32, base + (idx / k) as u32, v));
        diff_into(&old.c, &new.c, &mut d.c, |idx, v| ((idx / k) as u32, (idx % k) as u32, v));
        diff_into(&old.a, &new.a, &mut d.a, |idx, v| (idx as u32, v));
        diff_into(&old.n, &new.n, &mut d.n, |idx, v| (base + idx as u32, v));
        for (o, n) in old.taus.iter().zip(&new.taus) {
            let (gone, added) = sorted_diff(o, n);
            d.tau_remove.push(gone);
            d.tau_insert.push(added);
        }
        Ok(d)
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
            && self.c.is_empty()
            && self.a.is_empty()
            && self.n.is_empty()
            && self.tau_insert.iter().chain(&self.tau_remove).all(Vec::is_empty)
    }

    pub fn negated(&self) -> Self {
        Self {
            e: self.e.iter().map(|&(m, u, v)| (m, u, -v)).collect(),
            c: self.c.iter().map(|&(i, m, v)| (i, m, -v)).collect(),
            a: self.a.iter().map(|&(m, v)| (m, -v)).collect(),
            n: self.n.iter().map(|&(u, v)| (u, -v)).collect(),
            tau_insert: self.tau_remove.clone(),
            tau_remove: self.tau_insert.clone(),
        }
    }

    /// Adds the change to a replica's counts and inter-event tables.
    pub fn apply(&self, state: &mut ModelState, eccdf: &mut EccdfTable) -> Result<()> {
        self.apply_counts(state)?;
        self.apply_taus(eccdf)
    }

    pub fn apply_counts(&self, state: &mut ModelState) -> Result<()> {
        for &(m, u, v) in &self.e {
            state.adjust_e(m as usize, u as usize, v)?;
        }
        for &(i, m, v) in &self.c {
            state.adjust_c(i as usize, m as usize, v)?;
        }
        for &(m, v) in &self.a {
            state.adjust_a(m as usize, v)?;
        }
        for &(u, v) in &self.n {
            state.adjust_n(u as usize, v)?;
        }
        Ok(())
    }

    pub fn apply_taus(&self, eccdf: &mut EccdfTable) -> Result<()> {
        for (m, (ins, rem)) in self.tau_insert.iter().zip(&self.tau_remove).enumerate() {
            if (!ins.is_empty() || !rem.is_empty()) && !eccdf.apply_sorted(m, ins, rem) {
                return Err(Error::Invariant(format!("removing unknown inter-event time from environment {m}")));
            }
        }
        Ok(())
    }
}

/// A worker: its shard, its replica of the global counts and the latest
/// snapshot it has seen from every worker.
#[derive(Debug, Clone)]
pub struct Worker {
    pub id: usize,
    pub shard: Shard,
    pub replica: ModelState,
    pub eccdf: EccdfTable,
    pub known: Vec<Arc<Contribution>>,
    rng: ChaCha8Rng,
    timed: bool,
}

impl Worker {
    /// Workers holding replicas of `global`, all knowing the same snapshots.
    pub fn spawn_all(
        shards: &[Shard],
        global: &ModelState,
        timed: bool,
        version: u64,
        mut rngs: Vec<ChaCha8Rng>,
    ) -> Vec<Worker> {
        let eccdf = rebuild_global(global, shards, timed);
        let known: Vec<Arc<Contribution>> = shards
            .iter()
            .map(|s| Arc::new(Contribution::from_assignments(s, &local(global, s), global.k(), timed, version)))
            .collect();
        shards
            .iter()
            .zip(rngs.drain(..))
            .enumerate()
            .map(|(id, (s, rng))| Worker {
                id,
                shard: s.clone(),
                replica: global.with_assignments(local(global, s)),
                eccdf: eccdf.clone(),
                known: known.clone(),
                rng,
                timed,
            })
            .collect()
    }

    /// Resamples the shard's windows against the replica.
    pub fn estep(&mut self) -> Result<()> {
        let eccdf = self.timed.then_some(&self.eccdf);
        gibbs_pass(&mut self.replica, eccdf, &self.shard.windows, &mut self.rng)
    }

    /// Snapshots the worker's own contribution. The replica counts already
    /// hold the new assignments, so only the inter-event tables catch up.
    pub fn publish(&mut self) -> Result<()> {
        let old = &self.known[self.id];
        let new = Contribution::from_assignments(
            &self.shard,
            self.replica.assignments(),
            self.replica.k(),
            self.timed,
            old.version + 1,
        );
        CountDelta::between(old, &new)?.apply_taus(&mut self.eccdf)?;
        self.known[self.id] = Arc::new(new);
        Ok(())
    }

    /// Pulls every snapshot the partner has a newer version of.
    pub fn sync_from(&mut self, partner: &[Arc<Contribution>]) -> Result<()> {
        for (v, theirs) in partner.iter().enumerate() {
            let mine = &self.known[v];
            if theirs.version <= mine.version {
                continue;
            }
            if theirs.k != mine.k {
                // dimensions diverged; the next barrier reconciles them
                continue;
            }
            CountDelta::between(mine, theirs)?.apply(&mut self.replica, &mut self.eccdf)?;
            self.known[v] = Arc::clone(theirs);
        }
        Ok(())
    }
}

/// Exchanges snapshots so both workers end with identical counts.
pub fn sync_pair(a: &mut Worker, b: &mut Worker) -> Result<()> {
    let from_b = b.known.clone();
    let from_a = a.known.clone();
    a.sync_from(&from_b)?;
    b.sync_from(&from_a)
}

fn local(global: &ModelState, shard: &Shard) -> Vec<u32> {
    shard.indices.iter().map(|&i| global.assignments()[i as usize]).collect()
}

fn rebuild_global(global: &ModelState, shards: &[Shard], timed: bool) -> EccdfTable {
    if !timed {
        return EccdfTable::empty(global.k());
    }
    let mut tables = vec![Vec::new(); global.k()];
    for s in shards {
        for (w, &i) in s.windows.iter().zip(&s.indices) {
            tables[global.assignments()[i as usize] as usize].extend_from_slice(w.taus);
        }
    }
    EccdfTable::from_tables(tables)
}

/// Reassembles the global state from the workers' assignments.
pub fn gather(windows: &WindowSet, workers: &[Worker], k: usize, config: &TrainConfig) -> Result<ModelState> {
    let mut z = vec![0u32; windows.len()];
    for w in workers {
        for (&i, &m) in w.shard.indices.iter().zip(w.replica.assignments()) {
            z[i as usize] = m;
        }
    }
    ModelState::from_assignments(windows, k, config.hyper, &z)
}

/// Trains with `config.workers` workers.
pub fn run_parallel(
    windows: &WindowSet,
    config: &TrainConfig,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<Model> {
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::Insufficient("no training windows".into()));
    }
    let timed = uses_taus(windows, config);
    let parts = config.workers;
    let shards = shard(windows, parts)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parts)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;

    let mut global = initialize(windows, config.k_init, config.hyper, &mut stream_rng(config.seed, 0))?;
    let rngs = (0..parts).map(|p| stream_rng(config.seed, 1 + p as u64)).collect();
    let mut workers = Worker::spawn_all(&shards, &global, timed, 0, rngs);
    let mut schedule = stream_rng(config.seed, u64::MAX);
    let mut order: Vec<usize> = (0..parts).collect();
    let posterior = |state: &ModelState| adapt::joint_log_posterior(state, windows, timed);
    progress(Progress::Iteration { iter: 0, k: global.k(), log_posterior: posterior(&global) });

    for iter in 1..=config.iterations {
        pool.install(|| workers.par_iter_mut().try_for_each(|w| w.estep().and_then(|()| w.publish())))?;
        if parts > 1 {
            order.shuffle(&mut schedule);
            let mut partner = vec![None; parts];
            for pair in order.chunks_exact(2) {
                partner[pair[0]] = Some(pair[1]);
                partner[pair[1]] = Some(pair[0]);
            }
            let snapshots: Vec<Vec<Arc<Contribution>>> = workers.iter().map(|w| w.known.clone()).collect();
            pool.install(|| {
                workers.par_iter_mut().try_for_each(|w| match partner[w.id] {
                    Some(p) => w.sync_from(&snapshots[p]),
                    None => Ok(()),
                })
            })?;
        }
        let k = workers[0].replica.k();
        let barrier = timed && config.adapt_every > 0 && iter % config.adapt_every == 0;
        let log = iter == config.iterations || (config.log_every > 0 && iter % config.log_every == 0);
        if barrier || log {
            global = gather(windows, &workers, k, config)?;
        }
        if barrier {
            let report = adapt::adapt(&mut global, windows, timed)?;
            progress(Progress::Adapt { iter, report: &report });
            let rngs = workers.drain(..).map(|w| w.rng).collect();
            workers = Worker::spawn_all(&shards, &global, timed, iter as u64 * 2, rngs);
        }
        if log {
            progress(Progress::Iteration { iter, k: global.k(), log_posterior: posterior(&global) });
        }
    }
    let k = workers[0].replica.k();
    let global = gather(windows, &workers, k, config)?;
    let eccdf = rebuild_global(&global, &shards, timed);
    Ok(Model::from_state(&global, eccdf, timed))
}
