//! Comparison methods: a gravity model of flows, a smoothed first-order
//! Markov chain, and global popularity.

use std::io::BufRead;

use nalgebra::{Matrix4, Vector4};
use statrs::function::gamma::ln_gamma;

use crate::corpus::{Dictionary, EventLog, Transition};
use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

/// Great-circle distance in kilometres.
pub fn haversine(p: LatLon, q: LatLon) -> f64 {
    let (phi1, phi2) = (p.lat.to_radians(), q.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (q.lon - p.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Coordinates per item id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GeoTable {
    coords: Vec<Option<LatLon>>,
}

impl GeoTable {
    pub fn new(n_items: usize) -> Self {
        Self { coords: vec![None; n_items] }
    }

    pub fn set(&mut self, item: u32, at: LatLon) -> Result<()> {
        if !(-90.0..=90.0).contains(&at.lat) || !(-180.0..=180.0).contains(&at.lon) {
            return Err(Error::Config(format!("coordinates ({}, {}) out of range", at.lat, at.lon)));
        }
        self.coords[item as usize] = Some(at);
        Ok(())
    }

    pub fn get(&self, item: u32) -> Option<LatLon> {
        self.coords.get(item as usize).copied().flatten()
    }

    pub fn distance(&self, a: u32, b: u32) -> Option<f64> {
        Some(haversine(self.get(a)?, self.get(b)?))
    }

    /// Reads `item \t lat \t lon` lines; items missing from `items` are ignored.
    pub fn parse<R: BufRead>(reader: R, items: &Dictionary) -> Result<Self> {
        let mut table = Self::new(items.len());
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [item, lat, lon] = fields.as_slice() else {
                return Err(Error::parse(idx + 1, "expected `item \\t lat \\t lon`"));
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(idx + 1, format!("bad coordinate `{s}`")));
            let at = LatLon { lat: num(lat)?, lon: num(lon)? };
            if let Some(id) = items.get(item) {
                table.set(id, at).map_err(|e| Error::parse(idx + 1, e.to_string()))?;
            }
        }
        Ok(table)
    }
}

/// `log mu = theta0 + theta1 log r_s + theta2 log n_d - theta3 log dist`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityParams {
    pub theta0: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl GravityParams {
    fn from_vector(v: &Vector4<f64>) -> Self {
        Self { theta0: v[0], theta1: v[1], theta2: v[2], theta3: v[3] }
    }

    /// Expected flow between a source of mass `r_s` and a destination of mass
    /// `n_d` that lie `dist` kilometres apart.
    pub fn flow(&self, r_s: f64, n_d: f64, dist: f64) -> Result<f64> {
        if !(dist > 0.0) {
            return Err(Error::Config("gravity flow needs a positive distance".into()));
        }
        Ok((self.theta0 + self.theta1 * r_s.ln() + self.theta2 * n_d.ln() - self.theta3 * dist.ln()).exp())
    }
}

/// One observed pair for the Poisson regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityObs {
    pub count: f64,
    pub src_mass: f64,
    pub dst_mass: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GravityFit {
    pub params: GravityParams,
    pub iterations: usize,
    /// Poisson log-likelihood after each iteration, starting with the initial guess.
    pub log_likelihoods: Vec<f64>,
}

const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITERS: usize = 100;

fn design_row(o: &GravityObs) -> Vector4<f64> {
    Vector4::new(1.0, o.src_mass.ln(), o.dst_mass.ln(), -o.distance.ln())
}

fn poisson_ll(obs: &[GravityObs], theta: &Vector4<f64>) -> f64 {
    obs.iter()
        .map(|o| {
            let eta = design_row(o).dot(theta);
            o.count * eta - eta.exp() - ln_gamma(o.count + 1.0)
        })
        .sum()
}

/// Poisson regression by iteratively reweighted least squares, with step
/// halving whenever a full step would lower the likelihood.
pub fn fit_gravity_obs(obs: &[GravityObs]) -> Result<GravityFit> {
    if obs.len() < 4 {
        return Err(Error::Insufficient(format!("gravity fit needs at least 4 pairs, got {}", obs.len())));
    }
    if obs.iter().any(|o| !(o.src_mass > 0.0 && o.dst_mass > 0.0 && o.distance > 0.0 && o.count >= 0.0)) {
        return Err(Error::Config("gravity observations need positive masses and distances".into()));
    }
    let rows: Vec<Vector4<f64>> = obs.iter().map(design_row).collect();
    // start from a weighted least-squares fit of log(count + 0.5)
    let mut xtx = Matrix4::zeros();
    let mut xty = Vector4::zeros();
    for (x, o) in rows.iter().zip(obs) {
        xtx += x * x.transpose();
        xty += x * (o.count + 0.5).ln();
    }
    let mut theta = solve(&xtx, &xty)?;
    let mut ll = poisson_ll(obs, &theta);
    let mut lls = vec![ll];
    let mut iterations = 0;
    while iterations < IRLS_MAX_ITERS {
        iterations += 1;
        let mut xwx = Matrix4::zeros();
        let mut xwz = Vector4::zeros();
        for (x, o) in rows.iter().zip(obs) {
            let eta = x.dot(&theta);
            let mu = eta.exp();
            let z = eta + (o.count - mu) / mu;
            xwx += x * x.transpose() * mu;
            xwz += x * (mu * z);
        }
        let target = solve(&xwx, &xwz)?;
        let mut step = target - theta;
        let mut next = theta + step;
        let mut next_ll = poisson_ll(obs, &next);
        let mut halvings = 0;
        while !(next_ll >= ll) && halvings < 30 {
            step /= 2.0;
            next = theta + step;
            next_ll = poisson_ll(obs, &next);
            halvings += 1;
        }
        if !(next_ll >= ll) {
            break;
        }
        let change = step.amax();
        theta = next;
        ll = next_ll;
        lls.push(ll);
        if change < IRLS_TOL {
            break;
        }
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numeric("gravity fit diverged".into()));
    }
    Ok(GravityFit { params: GravityParams::from_vector(&theta), iterations, log_likelihoods: lls })
}

fn solve(a: &Matrix4<f64>, b: &Vector4<f64>) -> Result<Vector4<f64>> {
    let singular = || Error::Numeric("singular gravity design; masses or distances do not vary".into());
    let chol = a.cholesky().ok_or_else(singular)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d.abs()), hi.max(d.abs())));
    if !(lo > hi * 1e-7) {
        return Err(singular());
    }
    Ok(chol.solve(b))
}

/// Masses and pair counts of a set of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowCounts {
    /// Departures per item.
    pub out: Vec<f64>,
    /// Arrivals per item.
    pub arrivals: Vec<f64>,
    /// `(src, dst, count)` for every observed pair, sorted.
    pub pairs: Vec<(u32, u32, f64)>,
}

impl FlowCounts {
    pub fn from_transitions(n_items: usize, transitions: impl IntoIterator<Item = Transition>) -> Self {
        let mut out = vec![0.0; n_items];
        let mut arrivals = vec![0.0; n_items];
        let mut raw: Vec<(u32, u32)> = Vec::new();
        for t in transitions {
            out[t.src as usize] += 1.0;
            arrivals[t.dst as usize] += 1.0;
            raw.push((t.src, t.dst));
        }
        raw.sort_unstable();
        let mut pairs: Vec<(u32, u32, f64)> = Vec::new();
        for (s, d) in raw {
            match pairs.last_mut() {
                Some(p) if p.0 == s && p.1 == d => p.2 += 1.0,
                _ => pairs.push((s, d, 1.0)),
            }
        }
        Self { out, arrivals, pairs }
    }
}

/// A fitted gravity model together with the masses it was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct GravityModel {
    pub fit: GravityFit,
    pub counts: FlowCounts,
    /// Observed pairs left out for lacking coordinates or a positive distance.
    pub excluded: usize,
}

impl GravityModel {
    /// Predicted flow for a pair, on the scale of the training counts.
    pub fn flow(&self, geo: &GeoTable, src: u32, dst: u32) -> Result<f64> {
        let dist = geo
            .distance(src, dst)
            .ok_or_else(|| Error::UnknownItem(format!("no coordinates for item {src} or {dst}")))?;
        self.fit.params.flow(self.counts.out[src as usize], self.counts.arrivals[dst as usize], dist)
    }
}

/// Fits the gravity model to the pair counts of a training log.
pub fn fit_gravity(train: &EventLog, geo: &GeoTable) -> Result<GravityModel> {
    let counts = FlowCounts::from_transitions(train.n_items(), train.transitions());
    let mut obs = Vec::new();
    let mut excluded = 0;
    for &(s, d, n) in &counts.pairs {
        match geo.distance(s, d) {
            Some(dist) if s != d && dist > 0.0 => obs.push(GravityObs {
                count: n,
                src_mass: counts.out[s as usize],
                dst_mass: counts.arrivals[d as usize],
                distance: dist,
            }),
            _ => excluded += 1,
        }
    }
    let fit = fit_gravity_obs(&obs)?;
    Ok(GravityModel { fit, counts, excluded })
}

/// Default additive smoothing of the Markov-chain baseline.
pub const MC_EPSILON: f64 = 1e-3;

/// First-order Markov chain with additive smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct McMle {
    n_items: usize,
    eps: f64,
    out: Vec<f64>,
    /// Per source: `(dst, count)` sorted by destination.
    rows: Vec<Vec<(u32, u32)>>,
}

impl McMle {
    pub fn fit(train: &EventLog, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Config("smoothing must be positive".into()));
        }
        let n = train.n_items();
        let counts = FlowCounts::from_transitions(n, train.transitions());
        let mut rows = vec![Vec::new(); n];
        for &(s, d, c) in &counts.pairs {
            rows[s as usize].push((d, c as u32));
        }
        Ok(Self { n_items: n, eps, out: counts.out, rows })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn prob(&self, src: u32, dst: u32) -> f64 {
        let row = &self.rows[src as usize];
        let n = row.binary_search_by_key(&dst, |p| p.0).map_or(0, |i| row[i].1);
        (f64::from(n) + self.eps) / (self.out[src as usize] + self.n_items as f64 * self.eps)
    }

    /// Transition probabilities out of `src` for every item.
    pub fn score_all(&self, src: u32, out: &mut [f64]) {
        let denom = self.out[src as usize] + self.n_items as f64 * self.eps;
        out[..self.n_items].fill(self.eps / denom);
        for &(d, c) in &self.rows[src as usize] {
            out[d as usize] = (f64::from(c) + self.eps) / denom;
        }
    }
}

/// Global visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Popularity {
    pub counts: Vec<u64>,
}

impl Popularity {
    pub fn fit(train: &EventLog) -> Self {
        let mut counts = vec![0u64; train.n_items()];
        for v in train.sequences.iter().flatten() {
            counts[v.item as usize] += 1;
        }
        Self { counts }
    }

    /// Visited items, most visited first, ties by id.
    pub fn ranking(&self) -> Vec<u32> {
        let mut order: Vec<u32> = (0..self.counts.len() as u32).filter(|&i| self.counts[i as usize] > 0).collect();
        order.sort_by(|&a, &b| self.counts[b as usize].cmp(&self.counts[a as usize]).then(a.cmp(&b)));
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_events, Format};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn haversine_cases() {
        let p = LatLon { lat: 12.5, lon: -40.0 };
        assert_eq!(haversine(p, p), 0.0);
        let quarter = haversine(LatLon { lat: 0.0, lon: 0.0 }, LatLon { lat: 0.0, lon: 90.0 });
        assert!((quarter - 2.0 * std::f64::consts::PI * EARTH_RADIUS_KM / 4.0).abs() < 1e-6);
        assert!((quarter - 10007.5).abs() < 0.1);
        let q = LatLon { lat: -33.9, lon: 151.2 };
        assert_eq!(haversine(p, q), haversine(q, p));
    }

    fn generated(theta: [f64; 4], rng: &mut ChaCha8Rng, scale: f64) -> Vec<GravityObs> {
        (0..200)
            .map(|_| {
                let o = GravityObs {
                    count: 0.0,
                    src_mass: rng.random_range(10.0..1000.0),
                    dst_mass: rng.random_range(10.0..1000.0),
                    distance: rng.random_range(1.0..500.0),
                };
                let mu = (theta[0] + theta[1] * o.src_mass.ln() + theta[2] * o.dst_mass.ln() - theta[3] * o.distance.ln()).exp();
                GravityObs { count: mu * scale, ..o }
            })
            .collect()
    }

    #[test]
    fn recovers_generating_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = [1.5, 0.8, 0.6, 1.2];
        let obs = generated(truth, &mut rng, 1.0);
        let fit = fit_gravity_obs(&obs).unwrap();
        let p = fit.params;
        for (got, want) in [p.theta0, p.theta1, p.theta2, p.theta3].iter().zip(truth) {
            assert!((got - want).abs() < 1e-2, "{p:?}");
        }
        for o in &obs {
            let f = p.flow(o.src_mass, o.dst_mass, o.distance).unwrap();
            assert!((f - o.count).abs() < 1e-2 * o.count);
        }
        assert!(fit.log_likelihoods.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn distance_free_flows_have_no_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let obs = generated([0.5, 1.0, 1.0, 0.0], &mut rng, 1.0);
        let fit = fit_gravity_obs(&obs).unwrap();
        assert!(fit.params.theta3.abs() < 1e-2, "{:?}", fit.params);
        assert!(fit.params.flow(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn degenerate_design_fails() {
        let one = GravityObs { count: 5.0, src_mass: 5.0, dst_mass: 5.0, distance: 3.0 };
        assert!(fit_gravity_obs(&[one]).is_err());
        assert!(matches!(fit_gravity_obs(&[one; 6]), Err(Error::Numeric(_))));
    }

    #[test]
    fn ll_never_decreases_on_noisy_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs: Vec<GravityObs> = generated([0.0, 0.5, 0.5, 0.7], &mut rng, 1.0)
            .into_iter()
            .map(|o| GravityObs { count: (o.count * rng.random_range(0.5..1.5)).round(), ..o })
            .collect();
        let fit = fit_gravity_obs(&obs).unwrap();
        assert!(fit.log_likelihoods.windows(2).all(|w| w[1] >= w[0]));
    }

    fn log(text: &str) -> EventLog {
        parse_events(text.as_bytes(), Format::default()).unwrap()
    }

    #[test]
    fn markov_chain_cases() {
        let train = log("u\t0\ta\nu\t1\tb\nv\t0\tc\nv\t1\ta");
        let mc = McMle::fit(&train, 1e-9).unwrap();
        assert!((mc.prob(0, 1) - 1.0).abs() < 1e-6);
        // b never departs: uniform
        for d in 0..3 {
            assert!((mc.prob(1, d) - 1.0 / 3.0).abs() < 1e-12);
        }
        let mc = McMle::fit(&train, MC_EPSILON).unwrap();
        let mut row = vec![0.0; 3];
        for s in 0..3 {
            mc.score_all(s, &mut row);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for d in 0..3 {
                assert_eq!(row[d as usize], mc.prob(s, d));
            }
        }
        assert!(McMle::fit(&train, 0.0).is_err());
    }

    #[test]
    fn popularity_order() {
        assert!(Popularity::fit(&EventLog::empty(true)).ranking().is_empty());
        let p = Popularity { counts: vec![5, 3, 3] };
        assert_eq!(p.ranking(), vec![0, 1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let counts: Vec<u64> = (0..50).map(|_| rng.random_range(1..8)).collect();
        let mut oracle: Vec<(i64, u32)> = counts.iter().enumerate().map(|(i, &c)| (-(c as i64), i as u32)).collect();
        oracle.sort();
        let p = Popularity { counts };
        assert_eq!(p.ranking(), oracle.iter().map(|o| o.1).collect::<Vec<_>>());
    }

    #[test]
    fn geo_table_parsing() {
        let train = log("u\t0\ta\nu\t1\tb");
        let geo = GeoTable::parse("a\t10\t20\nzz\t0\t0\nb\t-5\t170\n".as_bytes(), &train.items).unwrap();
        assert_eq!(geo.get(0), Some(LatLon { lat: 10.0, lon: 20.0 }));
        assert!(geo.distance(0, 1).unwrap() > 0.0);
        assert!(GeoTable::parse("a\t100\t0\n".as_bytes(), &train.items).is_err());
        assert!(GeoTable::parse("a\t1\n".as_bytes(), &train.items).is_err());
    }
}
