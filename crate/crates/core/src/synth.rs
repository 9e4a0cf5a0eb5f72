//! Synthetic trajectories with known user groups.
//!
//! Every group has its own lognormal popularity over a shared catalog of
//! `groups * items_per_group` items, or over a private block of
//! `items_per_group` items when `disjoint` is set. Users are dealt to groups
//! round-robin and walk without revisits: each next item is drawn from their
//! group's popularity (or, with probability `noise`, from another group's)
//! until it differs from the current item. Gaps between plays are exponential
//! with a per-group rate.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal, Normal};

use crate::baselines::{GeoTable, LatLon};
use crate::corpus::{Dictionary, EventLog, Visit};
use crate::error::{Error, Result};

const DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub groups: usize,
    pub items_per_group: usize,
    pub plays_per_day: usize,
    pub days: usize,
    /// Days between the join times of successive user cohorts.
    pub stagger_days: usize,
    /// Lognormal `(mu, sigma)` of item popularity per group; empty for defaults.
    pub popularity: Vec<(f64, f64)>,
    /// Exponential gap rate (per second) per group; empty for defaults.
    pub rates: Vec<f64>,
    pub noise: f64,
    pub seed: u64,
    /// Give every group its own block of items instead of a shared catalog.
    pub disjoint: bool,
    /// Attach per-group coordinate clusters to the items; an item sits in
    /// the cluster of the group that favours it most.
    pub geo: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 50,
            groups: 5,
            items_per_group: 20,
            plays_per_day: 100,
            days: 5,
            stagger_days: 1,
            popularity: Vec::new(),
            rates: Vec::new(),
            noise: 0.01,
            seed: 0,
            disjoint: false,
            geo: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("users", self.users),
            ("groups", self.groups),
            ("plays per day", self.plays_per_day),
            ("days", self.days),
        ];
        if let Some((name, _)) = positive.iter().find(|p| p.1 == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.items_per_group < 2 {
            return Err(Error::Config("each group needs at least 2 items".into()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::Config("noise must be in [0, 1)".into()));
        }
        if !self.popularity.is_empty() && self.popularity.len() != self.groups {
            return Err(Error::Config("one popularity setting per group".into()));
        }
        if !self.rates.is_empty() && (self.rates.len() != self.groups || self.rates.iter().any(|r| !(*r > 0.0))) {
            return Err(Error::Config("one positive rate per group".into()));
        }
        Ok(())
    }

    fn popularity_of(&self, g: usize) -> (f64, f64) {
        self.popularity.get(g).copied().unwrap_or((0.0, 1.0 + 0.25 * g as f64))
    }

    /// Defaults keep `plays_per_day` plays per day on average, with groups
    /// ranging from half to one and a half times that pace.
    fn rate_of(&self, g: usize) -> f64 {
        self.rates.get(g).copied().unwrap_or_else(|| {
            let spread = if self.groups > 1 { g as f64 / (self.groups - 1) as f64 } else { 0.5 };
            self.plays_per_day as f64 / DAY * (0.5 + spread)
        })
    }
}

/// A generated corpus with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub log: EventLog,
    /// Group of each user, by user id.
    pub groups: Vec<usize>,
    /// Popularity over each group's block (the whole catalog unless disjoint).
    pub popularity: Vec<Vec<f64>>,
    /// Distribution the next item is drawn from, per group, over all items.
    pub mixtures: Vec<Vec<f64>>,
    pub geo: Option<GeoTable>,
}

impl SynthData {
    /// Probability that a user of group `g` at `src` moves to `dst`.
    pub fn transition_prob(&self, g: usize, src: u32, dst: u32) -> f64 {
        if src == dst {
            return 0.0;
        }
        let m = &self.mixtures[g];
        m[dst as usize] / (1.0 - m[src as usize])
    }

    /// Expected `(src, dst)` counts given the realized departures of every user.
    pub fn expected_flows(&self) -> Vec<f64> {
        let n = self.log.n_items();
        let mut departures = vec![vec![0.0; n]; self.mixtures.len()];
        for (u, seq) in self.log.sequences.iter().enumerate() {
            for v in seq.iter().take(seq.len().saturating_sub(1)) {
                departures[self.groups[u]][v.item as usize] += 1.0;
            }
        }
        let mut flows = vec![0.0; n * n];
        for (g, dep) in departures.iter().enumerate() {
            for (s, &count) in dep.iter().enumerate().filter(|p| *p.1 > 0.0) {
                for d in 0..n {
                    flows[s * n + d] += count * self.transition_prob(g, s as u32, d as u32);
                }
            }
        }
        flows
    }

    /// Smallest Jensen-Shannon divergence between two groups' next-item
    /// distributions.
    pub fn separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (g, p) in self.mixtures.iter().enumerate() {
            for q in &self.mixtures[g + 1..] {
                best = best.min(js_divergence(p, q));
            }
        }
        best
    }

    pub fn write_groups<W: Write>(&self, mut out: W) -> Result<()> {
        for (u, g) in self.groups.iter().enumerate() {
            writeln!(out, "{}\t{g}", self.log.users.name(u as u32).unwrap_or_default())?;
        }
        Ok(())
    }

    pub fn write_geo<W: Write>(&self, mut out: W) -> Result<()> {
        if let Some(geo) = &self.geo {
            for (i, name) in self.log.items.iter().enumerate() {
                if let Some(p) = geo.get(i as u32) {
                    writeln!(out, "{name}\t{}\t{}", p.lat, p.lon)?;
                }
            }
        }
        Ok(())
    }
}

/// Jensen-Shannon divergence in nats.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = (a + b) / 2.0;
            (kl(a, m) + kl(b, m)) / 2.0
        })
        .sum()
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_items = config.groups * config.items_per_group;
    let bad = |e: &dyn std::fmt::Display| Error::Config(e.to_string());

    let block_len = if config.disjoint { config.items_per_group } else { n_items };
    let mut popularity = Vec::with_capacity(config.groups);
    for g in 0..config.groups {
        let (mu, sigma) = config.popularity_of(g);
        let dist = LogNormal::new(mu, sigma).map_err(|e| bad(&e))?;
        let w: Vec<f64> = (0..block_len).map(|_| dist.sample(&mut rng)).collect();
        let total: f64 = w.iter().sum();
        popularity.push(w.into_iter().map(|x| x / total).collect::<Vec<f64>>());
    }
    let block = |g: usize| if config.disjoint { g * config.items_per_group } else { 0 };
    let noisy = config.groups > 1 && config.noise > 0.0;
    let mixtures: Vec<Vec<f64>> = (0..config.groups)
        .map(|g| {
            let mut m = vec![0.0; n_items];
            for h in 0..config.groups {
                let share = match (h == g, noisy) {
                    (true, true) => 1.0 - config.noise,
                    (true, false) => 1.0,
                    (false, true) => config.noise / (config.groups - 1) as f64,
                    (false, false) => 0.0,
                };
                for (j, p) in popularity[h].iter().enumerate() {
                    m[block(h) + j] += share * p;
                }
            }
            m
        })
        .collect();
    let pickers: Vec<WeightedIndex<f64>> = popularity
        .iter()
        .map(|p| WeightedIndex::new(p).map_err(|e| bad(&e)))
        .collect::<Result<_>>()?;
    let gaps: Vec<Exp<f64>> = (0..config.groups)
        .map(|g| Exp::new(config.rate_of(g)).map_err(|e| bad(&e)))
        .collect::<Result<_>>()?;

    let plays = config.plays_per_day * config.days;
    let mut groups = Vec::with_capacity(config.users);
    let mut sequences = Vec::with_capacity(config.users);
    for u in 0..config.users {
        let g = u % config.groups;
        groups.push(g);
        let cohort = (u / config.groups) % 3;
        let mut time = (cohort * config.stagger_days) as f64 * DAY;
        let mut seq: Vec<Visit> = Vec::with_capacity(plays);
        for _ in 0..plays {
            let prev = seq.last().map(|v| v.item);
            let item = loop {
                let h = if noisy && rng.random_bool(config.noise) {
                    let other = rng.random_range(0..config.groups - 1);
                    if other >= g {
                        other + 1
                    } else {
                        other
                    }
                } else {
                    g
                };
                let item = (block(h) + pickers[h].sample(&mut rng)) as u32;
                if Some(item) != prev {
                    break item;
                }
            };
            if prev.is_some() {
                // strictly increasing timestamps
                time += gaps[g].sample(&mut rng).max(1e-3);
            }
            seq.push(Visit { item, time });
        }
        sequences.push(seq);
    }

    let geo = if config.geo {
        let mut table = GeoTable::new(n_items);
        let spread = Normal::new(0.0, 0.05).map_err(|e| bad(&e))?;
        let centres: Vec<(f64, f64)> = (0..config.groups)
            .map(|g| {
                // on a ring of radius 2 degrees
                let angle = std::f64::consts::TAU * g as f64 / config.groups as f64;
                (40.0 + 2.0 * angle.sin(), -75.0 + 2.0 * angle.cos())
            })
            .collect();
        for i in 0..n_items {
            let home = (0..config.groups)
                .max_by(|&g, &h| mixtures[g][i].total_cmp(&mixtures[h][i]).then(h.cmp(&g)))
                .unwrap_or(0);
            let (lat0, lon0) = centres[home];
            let at = LatLon { lat: lat0 + spread.sample(&mut rng), lon: lon0 + spread.sample(&mut rng) };
            table.set(i as u32, at)?;
        }
        Some(table)
    } else {
        None
    };

    let log = EventLog {
        users: Dictionary::from((0..config.users).map(|u| format!("u{u}")).collect::<Vec<_>>()),
        items: Dictionary::from((0..n_items).map(|i| format!("i{i}")).collect::<Vec<_>>()),
        sequences,
        timestamped: true,
    };
    Ok(SynthData { log, groups, popularity, mixtures, geo })
}
