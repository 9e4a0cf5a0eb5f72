//! Collapsed Gibbs sampling over windows and the outer training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapt::{self, AdaptReport};
use crate::error::{Error, Result};
use crate::residence::EccdfTable;
use crate::state::{Hyperparams, Model, ModelState};
use crate::windows::{Window, WindowSet};

/// Training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k_init: usize,
    pub iterations: usize,
    /// Gibbs passes between merge/split sweeps; 0 disables them.
    pub adapt_every: usize,
    pub seed: u64,
    pub workers: usize,
    /// Ignore inter-event times and keep `K` fixed.
    pub nt_mode: bool,
    pub hyper: Hyperparams,
    /// Passes between progress reports of the log posterior.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k_init: 100,
            iterations: 2000,
            adapt_every: 200,
            seed: 0,
            workers: 1,
            nt_mode: false,
            hyper: Hyperparams::default(),
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_init == 0 {
            return Err(Error::Config("k-init must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !self.nt_mode && self.iterations > 0 && self.adapt_every > self.iterations {
            return Err(Error::Config(format!(
                "adapt-every ({}) exceeds the number of iterations ({})",
                self.adapt_every, self.iterations
            )));
        }
        self.hyper.validate()
    }
}

/// Training progress, reported through the callback of [`train_with_progress`].
#[derive(Debug, Clone, Copy)]
pub enum Progress<'a> {
    Iteration { iter: usize, k: usize, log_posterior: f64 },
    Adapt { iter: usize, report: &'a AdaptReport },
}

/// The random stream used by worker `stream`; stream 0 drives initialization.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Log of the unnormalized environment weights of one window.
///
/// The window must already be removed from `state`. Without an ECCDF table
/// the inter-event factors are left out.
pub fn env_log_weights(
    state: &ModelState,
    eccdf: Option<&EccdfTable>,
    w: Window<'_>,
    out: &mut [f64],
) -> Result<()> {
    let k = state.k();
    let out = &mut out[..k];
    let alpha = state.alpha();
    let beta = state.beta();
    let n_beta = state.n_items() as f64 * beta;
    let user = w.user as usize;
    let user_norm = (f64::from(state.n(user)) + k as f64 * alpha).ln();
    for (o, &e) in out.iter_mut().zip(state.e_row(user)) {
        *o = (f64::from(e) + alpha).ln() - user_norm;
    }
    for step in w.items.windows(2) {
        let src = state.c_row(step[0] as usize);
        let dst = state.c_row(step[1] as usize);
        for m in 0..k {
            let stay = state.slots(m) as f64 + n_beta - f64::from(src[m]) - beta;
            out[m] += (f64::from(dst[m]) + beta).ln() - stay.ln();
        }
    }
    if let Some(table) = eccdf {
        for (m, o) in out.iter_mut().enumerate() {
            *o += table.log_window_likelihood(m, w.taus, k);
        }
    }
    if let Some(bad) = out.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite weight for environment {bad}")));
    }
    Ok(())
}

/// Unnormalized environment weights of one window.
pub fn window_env_posterior(
    state: &ModelState,
    eccdf: Option<&EccdfTable>,
    w: Window<'_>,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; state.k()];
    env_log_weights(state, eccdf, w, &mut out)?;
    for x in &mut out {
        *x = x.exp();
    }
    Ok(out)
}

/// Draws an index with probability proportional to `exp(logw)`. The slice is
/// overwritten with the shifted weights.
pub fn sample_log_weights<R: Rng + ?Sized>(logw: &mut [f64], rng: &mut R) -> usize {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in logw.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    let mut target = rng.random::<f64>() * total;
    for (i, &x) in logw.iter().enumerate() {
        if target < x {
            return i;
        }
        target -= x;
    }
    // rounding left a sliver past the last weight
    logw.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Windows assigned uniformly at random among `k` environments.
pub fn initialize<R: Rng + ?Sized>(
    windows: &WindowSet,
    k: usize,
    hyper: Hyperparams,
    rng: &mut R,
) -> Result<ModelState> {
    let mut state = ModelState::new(windows, k, hyper)?;
    for (idx, w) in windows.iter().enumerate() {
        let env = rng.random_range(0..k as u32);
        state.assign(idx, w, env)?;
    }
    Ok(state)
}

/// One resampling sweep over every window, in index order.
pub fn gibbs_pass<R: Rng + ?Sized>(
    state: &mut ModelState,
    eccdf: Option<&EccdfTable>,
    windows: &WindowSet,
    rng: &mut R,
) -> Result<()> {
    let mut weights = vec![0.0; state.k()];
    for (idx, w) in windows.iter().enumerate() {
        state.unassign(idx, w)?;
        env_log_weights(state, eccdf, w, &mut weights)?;
        let env = sample_log_weights(&mut weights, rng);
        state.assign(idx, w, env as u32)?;
    }
    Ok(())
}

pub fn train(windows: &WindowSet, config: &TrainConfig) -> Result<Model> {
    train_with_progress(windows, config, &mut |_| {})
}

pub fn train_with_progress(
    windows: &WindowSet,
    config: &TrainConfig,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<Model> {
    if config.workers > 1 {
        return crate::parallel::run_parallel(windows, config, progress);
    }
    let (state, eccdf) = train_state(windows, config, progress)?;
    Ok(Model::from_state(&state, eccdf, uses_taus(windows, config)))
}

pub(crate) fn uses_taus(windows: &WindowSet, config: &TrainConfig) -> bool {
    windows.timestamped() && !config.nt_mode
}

/// Sequential training returning the final sampler state and its ECCDF.
pub fn train_state(
    windows: &WindowSet,
    config: &TrainConfig,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<(ModelState, EccdfTable)> {
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::Insufficient("no training windows".into()));
    }
    let timed = uses_taus(windows, config);
    let mut state = initialize(windows, config.k_init, config.hyper, &mut stream_rng(config.seed, 0))?;
    let mut rng = stream_rng(config.seed, 1);
    let rebuild = |state: &ModelState| {
        if timed {
            EccdfTable::rebuild(windows, state.assignments(), state.k())
        } else {
            EccdfTable::empty(state.k())
        }
    };
    let mut eccdf = rebuild(&state);
    report_posterior(0, &state, windows, timed, progress);
    for iter in 1..=config.iterations {
        gibbs_pass(&mut state, timed.then_some(&eccdf), windows, &mut rng)?;
        eccdf = rebuild(&state);
        if timed && config.adapt_every > 0 && iter % config.adapt_every == 0 {
            let report = adapt::adapt(&mut state, windows, timed)?;
            eccdf = rebuild(&state);
            progress(Progress::Adapt { iter, report: &report });
        }
        if iter == config.iterations || (config.log_every > 0 && iter % config.log_every == 0) {
            report_posterior(iter, &state, windows, timed, progress);
        }
    }
    Ok((state, eccdf))
}

fn report_posterior(
    iter: usize,
    state: &ModelState,
    windows: &WindowSet,
    timed: bool,
    progress: &mut dyn FnMut(Progress<'_>),
) {
    progress(Progress::Iteration {
        iter,
        k: state.k(),
        log_posterior: adapt::joint_log_posterior(state, windows, timed),
    });
}
