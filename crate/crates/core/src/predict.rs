//! Next-item scoring, ranking and pairwise flows from a frozen model.

use crate::error::{Error, Result};
use crate::state::Model;

/// A prediction request.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Query {
    /// `None` for a user the model has never seen.
    pub user: Option<u32>,
    /// Recent items, oldest first; the last one is the current item.
    pub history: Vec<u32>,
    /// Gaps between consecutive history items, optionally followed by the
    /// time elapsed since the current item. May be empty.
    pub taus: Vec<f64>,
    /// Items to score; `None` means every item.
    pub candidates: Option<Vec<u32>>,
}

impl Query {
    pub fn current(&self) -> u32 {
        self.history[self.history.len() - 1]
    }

    fn validate(&self, model: &Model) -> Result<()> {
        if self.history.is_empty() {
            return Err(Error::Config("query history is empty".into()));
        }
        if self.history.len() > model.b + 1 {
            return Err(Error::Config(format!(
                "query history has {} items, at most {} allowed",
                self.history.len(),
                model.b + 1
            )));
        }
        if let Some(&i) = self.history.iter().find(|&&i| i as usize >= model.n_items) {
            return Err(Error::UnknownItem(format!("item id {i}")));
        }
        if self.history.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::Config("query history contains a revisit".into()));
        }
        if self.taus.len() > self.history.len() || self.taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config("query inter-event times are invalid".into()));
        }
        if let Some(c) = &self.candidates {
            if c.is_empty() {
                return Err(Error::Config("candidate set is empty".into()));
            }
            if let Some(&i) = c.iter().find(|&&i| i as usize >= model.n_items) {
                return Err(Error::UnknownItem(format!("item id {i}")));
            }
        }
        Ok(())
    }
}

/// Posterior over environments given the query's user, history and gaps.
pub fn env_posterior(model: &Model, query: &Query) -> Result<Vec<f64>> {
    query.validate(model)?;
    let k = model.k;
    let known = query
        .user
        .filter(|&u| (u as usize) < model.n_users && model.user_windows[u as usize] > 0);
    let mut logw: Vec<f64> = match known {
        Some(u) => model.pi_row(u as usize).iter().map(|p| p.ln()).collect(),
        None => model.env_weights.iter().map(|p| p.ln()).collect(),
    };
    for step in query.history.windows(2) {
        for (m, lw) in logw.iter_mut().enumerate() {
            *lw += model.transition_prob(m, step[0] as usize, step[1] as usize)?.ln();
        }
    }
    if model.timestamped {
        for (m, lw) in logw.iter_mut().enumerate() {
            *lw += model.eccdf.log_window_likelihood(m, &query.taus, k);
        }
    }
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric("query has zero probability under every environment".into()));
    }
    let mut total = 0.0;
    for lw in &mut logw {
        *lw = (*lw - max).exp();
        total += *lw;
    }
    for lw in &mut logw {
        *lw /= total;
    }
    Ok(logw)
}

/// Per-environment factor `P[M | query] / (1 - phi_M(current))`; the score of
/// item `d` is `sum_M phi_M(d) * factor[M]`.
fn step_factors(model: &Model, query: &Query) -> Result<Vec<f64>> {
    let post = env_posterior(model, query)?;
    let cur = query.current() as usize;
    post.iter()
        .enumerate()
        .map(|(m, p)| {
            let stay = 1.0 - model.phi(m, cur);
            if stay > 0.0 {
                Ok(p / stay)
            } else {
                Err(Error::Numeric(format!("environment {m} puts all its mass on the current item")))
            }
        })
        .collect()
}

/// Scores every item; the current item scores 0.
pub fn score_all(model: &Model, query: &Query, out: &mut [f64]) -> Result<()> {
    let g = step_factors(model, query)?;
    for (d, o) in out.iter_mut().enumerate().take(model.n_items) {
        *o = model.phi_row(d).iter().zip(&g).map(|(f, w)| f * w).sum();
    }
    out[query.current() as usize] = 0.0;
    Ok(())
}

/// Score of an item the model has never seen.
pub fn unknown_item_score(model: &Model, query: &Query) -> Result<f64> {
    let g = step_factors(model, query)?;
    Ok(model.phi_floor.iter().zip(&g).map(|(f, w)| f * w).sum())
}

fn candidate_scores(model: &Model, query: &Query) -> Result<Vec<(u32, f64)>> {
    let mut all = vec![0.0; model.n_items];
    score_all(model, query, &mut all)?;
    Ok(match &query.candidates {
        Some(c) => c.iter().map(|&i| (i, all[i as usize])).collect(),
        None => all.into_iter().enumerate().map(|(i, s)| (i as u32, s)).collect(),
    })
}

/// Probability of each candidate being the next item.
pub fn next_item_likelihood(model: &Model, query: &Query) -> Result<Vec<(u32, f64)>> {
    let mut scores = candidate_scores(model, query)?;
    let total: f64 = scores.iter().map(|s| s.1).sum();
    if !(total > 0.0) {
        return Err(Error::Config("no candidate other than the current item".into()));
    }
    for s in &mut scores {
        s.1 /= total;
    }
    Ok(scores)
}

/// Candidates by descending score, ties by ascending item id.
pub fn rank_candidates(model: &Model, query: &Query) -> Result<Vec<(u32, f64)>> {
    let mut scores = candidate_scores(model, query)?;
    sort_ranking(&mut scores);
    Ok(scores)
}

pub fn sort_ranking(scores: &mut [(u32, f64)]) {
    scores.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
}

/// Non-personalized probability of moving from `src` to `dst`.
pub fn pairwise_likelihood(model: &Model, src: u32, dst: u32) -> f64 {
    if src == dst {
        return 0.0;
    }
    let (s, d) = (src as usize, dst as usize);
    let mut num = 0.0;
    let mut denom = 0.0;
    for m in 0..model.k {
        let (ps, w) = (model.phi(m, s), model.env_weights[m]);
        num += model.phi(m, d) * ps * w;
        denom += ps * w * (1.0 - ps);
    }
    if denom > 0.0 {
        num / denom
    } else {
        0.0
    }
}

/// Expected number of `src -> dst` moves out of `total_outflow` departures.
pub fn flow_estimate(model: &Model, src: u32, dst: u32, total_outflow: f64) -> f64 {
    if total_outflow == 0.0 {
        return 0.0;
    }
    total_outflow * pairwise_likelihood(model, src, dst)
}
