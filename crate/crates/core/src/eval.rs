//! Evaluation: reciprocal rank, precision, predictive log-likelihood, flow
//! error and the two-sample Kolmogorov-Smirnov statistic.

use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::baselines::{FlowCounts, GeoTable, GravityModel, McMle, Popularity};
use crate::corpus::{Dictionary, EventLog};
use crate::error::{Error, Result};
use crate::predict::{self, Query};
use crate::state::Model;

/// Anything that can score every item as the next step of a query.
pub trait Scorer: Sync {
    fn n_items(&self) -> usize;
    /// Writes one score per item into `out`; higher is better.
    fn score(&self, query: &Query, out: &mut [f64]) -> Result<()>;
}

impl Scorer for Model {
    fn n_items(&self) -> usize {
        self.n_items
    }

    fn score(&self, query: &Query, out: &mut [f64]) -> Result<()> {
        predict::score_all(self, query, out)
    }
}

impl Scorer for McMle {
    fn n_items(&self) -> usize {
        McMle::n_items(self)
    }

    fn score(&self, query: &Query, out: &mut [f64]) -> Result<()> {
        self.score_all(query.current(), out);
        Ok(())
    }
}

impl Scorer for Popularity {
    fn n_items(&self) -> usize {
        self.counts.len()
    }

    fn score(&self, _: &Query, out: &mut [f64]) -> Result<()> {
        for (o, &c) in out.iter_mut().zip(&self.counts) {
            *o = c as f64;
        }
        Ok(())
    }
}

/// A test transition: the query before it and the item actually chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalQuery {
    pub query: Query,
    pub target: u32,
}

/// Turns every transition of a test log into a query, mapping ids through the
/// model's dictionaries. The history holds up to `b` preceding visits; the
/// gaps include the one leading to the target. Transitions touching an item
/// the model has never seen are skipped; the second value counts them.
pub fn build_queries(
    test: &EventLog,
    users: &Dictionary,
    items: &Dictionary,
    b: usize,
    use_taus: bool,
) -> (Vec<EvalQuery>, usize) {
    let item_map: Vec<Option<u32>> = test.items.iter().map(|name| items.get(name)).collect();
    let mut out = Vec::new();
    let mut skipped = 0;
    for (u, seq) in test.sequences.iter().enumerate() {
        let user = test.users.name(u as u32).and_then(|name| users.get(name));
        for t in 1..seq.len() {
            let span = &seq[t.saturating_sub(b)..=t];
            let mapped: Option<Vec<u32>> = span.iter().map(|v| item_map[v.item as usize]).collect();
            let Some(mut mapped) = mapped else {
                skipped += 1;
                continue;
            };
            let target = mapped.pop().unwrap_or_default();
            let taus = if use_taus && test.timestamped {
                span.windows(2).map(|p| (p[1].time - p[0].time).max(0.0)).collect()
            } else {
                Vec::new()
            };
            out.push(EvalQuery {
                query: Query { user, history: mapped, taus, candidates: None },
                target,
            });
        }
    }
    (out, skipped)
}

/// Rank of `target` among all items except `exclude`, counting ties
/// pessimistically: every item scoring at least as high ranks ahead.
pub fn pessimistic_rank(scores: &[f64], target: usize, exclude: Option<usize>) -> usize {
    let s = scores[target];
    scores
        .iter()
        .enumerate()
        .filter(|&(i, &x)| Some(i) != exclude && i != target && x >= s)
        .count()
        + 1
}

/// Reciprocal rank of `target` in a scored candidate list; `None` if the
/// target is not a candidate.
pub fn reciprocal_rank(candidates: &[(u32, f64)], target: u32) -> Option<f64> {
    let s = candidates.iter().find(|c| c.0 == target)?.1;
    let rank = candidates.iter().filter(|c| c.1 >= s).count();
    Some(1.0 / rank as f64)
}

/// Ranks of the true next items, one per query. Candidates are every item
/// except the current one.
pub fn ranks<S: Scorer + ?Sized>(scorer: &S, queries: &[EvalQuery]) -> Result<Vec<usize>> {
    let n = scorer.n_items();
    queries
        .par_iter()
        .map_init(
            || vec![0.0; n],
            |buf, q| {
                scorer.score(&q.query, buf)?;
                Ok(pessimistic_rank(buf, q.target as usize, Some(q.query.current() as usize)))
            },
        )
        .collect()
}

pub fn mrr(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

/// Fraction of queries whose target ranks in the top `k`.
pub fn precision_at(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Total and mean log-probability of a sequence of transition probabilities.
pub fn pred_ll(probs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut total, mut n) = (0.0, 0usize);
    for p in probs {
        total += p.ln();
        n += 1;
    }
    (total, if n == 0 { 0.0 } else { total / n as f64 })
}

/// Mean absolute difference of `(estimate, observed)` pairs.
pub fn flow_mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Insufficient("no flow pairs to compare".into()));
    }
    Ok(pairs.iter().map(|(e, o)| (e - o).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Largest gap between the empirical CDFs of two samples.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Insufficient("KS statistic needs two non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Pairs of a flow comparison: test pairs between distinct items, optionally
/// restricted to those with a positive distance in `geo`.
pub fn flow_support(test: &FlowCounts, geo: Option<&GeoTable>) -> Vec<(u32, u32, f64)> {
    test.pairs
        .iter()
        .copied()
        .filter(|&(s, d, _)| s != d && geo.is_none_or(|g| g.distance(s, d).is_some_and(|x| x > 0.0)))
        .collect()
}

fn volume_scale(train: &FlowCounts, test: &FlowCounts) -> f64 {
    let train_total: f64 = train.out.iter().sum();
    let test_total: f64 = test.out.iter().sum();
    if train_total > 0.0 {
        test_total / train_total
    } else {
        0.0
    }
}

/// Flow error of the model: departures from each source are the training
/// departures rescaled to the test volume, spread by the pairwise likelihood.
pub fn model_flow_mae(model: &Model, train: &FlowCounts, test: &FlowCounts, support: &[(u32, u32, f64)]) -> Result<f64> {
    let scale = volume_scale(train, test);
    let pairs: Vec<(f64, f64)> = support
        .iter()
        .map(|&(s, d, n)| (predict::flow_estimate(model, s, d, train.out[s as usize] * scale), n))
        .collect();
    flow_mae(&pairs)
}

/// Flow error of a gravity model fitted on the training pairs, rescaled to
/// the test volume.
pub fn gravity_flow_mae(gm: &GravityModel, geo: &GeoTable, test: &FlowCounts, support: &[(u32, u32, f64)]) -> Result<f64> {
    let scale = volume_scale(&gm.counts, test);
    let pairs = support
        .iter()
        .map(|&(s, d, n)| {
            let masses = gm.counts.out[s as usize] > 0.0 && gm.counts.arrivals[d as usize] > 0.0;
            let f = if masses { gm.flow(geo, s, d)? * scale } else { 0.0 };
            Ok((f, n))
        })
        .collect::<Result<Vec<_>>>()?;
    flow_mae(&pairs)
}

/// Counts of the test transitions whose endpoints are both in `items`,
/// expressed in that dictionary's ids.
pub fn mapped_counts(log: &EventLog, items: &Dictionary) -> FlowCounts {
    let map: Vec<Option<u32>> = log.items.iter().map(|name| items.get(name)).collect();
    let transitions = log.transitions().filter_map(|mut t| {
        t.src = map[t.src as usize]?;
        t.dst = map[t.dst as usize]?;
        Some(t)
    });
    FlowCounts::from_transitions(items.len(), transitions)
}

/// Ranks items by the gravity flow out of the current item.
pub struct GravityScorer<'a> {
    pub model: &'a GravityModel,
    pub geo: &'a GeoTable,
}

impl Scorer for GravityScorer<'_> {
    fn n_items(&self) -> usize {
        self.model.counts.out.len()
    }

    fn score(&self, query: &Query, out: &mut [f64]) -> Result<()> {
        let s = query.current();
        for (d, o) in out.iter_mut().enumerate() {
            *o = self.model.flow(self.geo, s, d as u32).unwrap_or(0.0);
        }
        Ok(())
    }
}

/// Full report for a trained model on a test log. Flow error needs the
/// training log for the departure masses; `geo` restricts its support to
/// pairs with a positive distance.
pub fn evaluate_model(model: &Model, test: &EventLog, train: Option<&EventLog>, geo: Option<&GeoTable>) -> Result<EvalReport> {
    let (queries, skipped) = build_queries(test, &model.users, &model.items, model.b, model.timestamped);
    if queries.is_empty() {
        return Err(Error::Insufficient("no test transitions between known items".into()));
    }
    let r = ranks(model, &queries)?;
    let mut report = EvalReport::from_ranks("tribeflow", &r, skipped);
    report.pred_ll = Some(pred_ll(
        queries.iter().map(|q| predict::pairwise_likelihood(model, q.query.current(), q.target)),
    ));
    if let Some(train) = train {
        let train_counts = mapped_counts(train, &model.items);
        let test_counts = mapped_counts(test, &model.items);
        let support = flow_support(&test_counts, geo);
        if !support.is_empty() {
            report.flow_mae = Some(model_flow_mae(model, &train_counts, &test_counts, &support)?);
        }
    }
    Ok(report)
}

/// Baselines selectable for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    McMle,
    Gravity,
    Popularity,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::McMle => "mcmle",
            Baseline::Gravity => "gravity",
            Baseline::Popularity => "popularity",
        }
    }
}

/// Fits a baseline on `train` and reports it on `test`. When `reference` RR
/// values are given the report carries the KS statistic against them.
pub fn evaluate_baseline(
    baseline: Baseline,
    train: &EventLog,
    test: &EventLog,
    geo: Option<&GeoTable>,
    reference: Option<&[f64]>,
) -> Result<EvalReport> {
    let (queries, skipped) = build_queries(test, &train.users, &train.items, 1, false);
    if queries.is_empty() {
        return Err(Error::Insufficient("no test transitions between known items".into()));
    }
    let mut report = match baseline {
        Baseline::McMle => {
            let mc = McMle::fit(train, crate::baselines::MC_EPSILON)?;
            let mut report = EvalReport::from_ranks(baseline.name(), &ranks(&mc, &queries)?, skipped);
            report.pred_ll = Some(pred_ll(queries.iter().map(|q| mc.prob(q.query.current(), q.target))));
            report
        }
        Baseline::Popularity => EvalReport::from_ranks(baseline.name(), &ranks(&Popularity::fit(train), &queries)?, skipped),
        Baseline::Gravity => {
            let geo = geo.ok_or_else(|| Error::Config("the gravity baseline needs a geo table".into()))?;
            let gm = crate::baselines::fit_gravity(train, geo)?;
            let scorer = GravityScorer { model: &gm, geo };
            let mut report = EvalReport::from_ranks(baseline.name(), &ranks(&scorer, &queries)?, skipped);
            let test_counts = mapped_counts(test, &train.items);
            let support = flow_support(&test_counts, Some(geo));
            if !support.is_empty() {
                report.flow_mae = Some(gravity_flow_mae(&gm, geo, &test_counts, &support)?);
            }
            report
        }
    };
    if let Some(reference) = reference {
        report.ks_statistic = Some(ks_statistic(reference, &report.rr)?);
    }
    Ok(report)
}

/// Precision cut-offs reported by [`EvalReport`].
pub const PRECISION_AT: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub queries: usize,
    pub skipped: usize,
    pub mrr: f64,
    pub precision: [f64; 3],
    /// Total and per-transition mean.
    pub pred_ll: Option<(f64, f64)>,
    pub flow_mae: Option<f64>,
    pub ks_statistic: Option<f64>,
    pub rr: Vec<f64>,
}

impl EvalReport {
    pub fn from_ranks(method: &str, ranks: &[usize], skipped: usize) -> Self {
        Self {
            method: method.to_string(),
            queries: ranks.len(),
            skipped,
            mrr: mrr(ranks),
            precision: PRECISION_AT.map(|k| precision_at(ranks, k)),
            pred_ll: None,
            flow_mae: None,
            ks_statistic: None,
            rr: ranks.iter().map(|&r| 1.0 / r as f64).collect(),
        }
    }

    /// `key=value` lines, optionally limited to the named metrics.
    pub fn key_values(&self, only: &[String]) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("method".into(), self.method.clone()),
            ("queries".into(), self.queries.to_string()),
            ("skipped".into(), self.skipped.to_string()),
            ("mrr".into(), format!("{:.6}", self.mrr)),
        ];
        for (k, p) in PRECISION_AT.iter().zip(self.precision) {
            rows.push((format!("precision@{k}"), format!("{p:.6}")));
        }
        if let Some((total, mean)) = self.pred_ll {
            rows.push(("predll".into(), format!("{total:.6}")));
            rows.push(("predll_mean".into(), format!("{mean:.6}")));
        }
        if let Some(m) = self.flow_mae {
            rows.push(("flow_mae".into(), format!("{m:.6}")));
        }
        if let Some(ks) = self.ks_statistic {
            rows.push(("ks_statistic".into(), format!("{ks:.6}")));
        }
        let mut out = String::new();
        for (k, v) in rows {
            let keep = only.is_empty() || only.iter().any(|m| k == *m || k.starts_with(&format!("{m}@")) || k.starts_with(&format!("{m}_")));
            if keep {
                let _ = writeln!(out, "{k}={v}");
            }
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16}{}", "method", self.method)?;
        writeln!(f, "{:<16}{} ({} skipped)", "queries", self.queries, self.skipped)?;
        writeln!(f, "{:<16}{:.4}", "MRR", self.mrr)?;
        for (k, p) in PRECISION_AT.iter().zip(self.precision) {
            writeln!(f, "{:<16}{:.4}", format!("precision@{k}"), p)?;
        }
        if let Some((total, mean)) = self.pred_ll {
            writeln!(f, "{:<16}{:.4} (mean {:.4})", "PredLL", total, mean)?;
        }
        if let Some(m) = self.flow_mae {
            writeln!(f, "{:<16}{:.4}", "flow MAE", m)?;
        }
        if let Some(ks) = self.ks_statistic {
            writeln!(f, "{:<16}{:.4}", "KS", ks)?;
        }
        Ok(())
    }
}
