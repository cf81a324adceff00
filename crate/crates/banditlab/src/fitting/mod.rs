//! Maximum-a-posteriori fitting and BIC-based model comparison.
//!
//! Parameters are searched in an unconstrained space (logit for learning
//! rates, log for the inverse temperature) with a multi-start downhill
//! simplex; the priors follow Daw (2011): Beta(1.1, 1.1) on every rate and
//! Gamma(shape 1.2, scale 5) on the inverse temperature.

mod nelder;

pub use nelder::{minimize, SimplexResult};

use rand::distributions::Distribution;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous, Gamma};
use thiserror::Error;

use crate::cogmodel::{negative_log_likelihood, CogError, ModelId, ParamVector};
use crate::stats::{mean_ci_95, MeanCi};
use crate::tasks::{TaskRng, Transcript};

/// Cap on the inverse temperature during fitting; beyond this the softmax
/// saturates and the likelihood plateaus.
pub const BETA_FIT_CAP: f64 = 50.0;

/// Rates are clipped this far inside [0, 1] before prior evaluation so the
/// log density stays finite.
pub const RATE_CLIP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("transcript has no free trials to score")]
    NoFreeTrials,
    #[error("objective was non-finite at every restart")]
    NonFiniteObjective,
    #[error("no transcripts supplied")]
    NoTranscripts,
    #[error(transparent)]
    Cog(#[from] CogError),
}

/// Independent priors over the parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub rate_a: f64,
    pub rate_b: f64,
    /// Gamma shape; the scale below follows the Daw (2011) convention, so
    /// G(1.2, 5) has mean 6 and mode 1.
    pub beta_shape: f64,
    pub beta_scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            rate_a: 1.1,
            rate_b: 1.1,
            beta_shape: 1.2,
            beta_scale: 5.0,
        }
    }
}

struct PreparedPriors {
    rate: Beta,
    beta: Gamma,
}

impl PriorSpec {
    fn prepare(&self) -> PreparedPriors {
        PreparedPriors {
            rate: Beta::new(self.rate_a, self.rate_b).expect("valid beta prior"),
            // statrs parameterizes Gamma by rate = 1 / scale.
            beta: Gamma::new(self.beta_shape, 1.0 / self.beta_scale).expect("valid gamma prior"),
        }
    }

    /// Joint log density, with rates clipped into the open interval.
    pub fn log_density(&self, params: &ParamVector) -> f64 {
        let p = self.prepare();
        params
            .rates
            .iter()
            .map(|r| p.rate.ln_pdf(r.clamp(RATE_CLIP, 1.0 - RATE_CLIP)))
            .sum::<f64>()
            + p.beta.ln_pdf(params.beta)
    }

    /// Prior mode: every rate at (a-1)/(a+b-2), inverse temperature at
    /// (shape-1) * scale.
    pub fn mode(&self, model: ModelId) -> ParamVector {
        let rate = (self.rate_a - 1.0) / (self.rate_a + self.rate_b - 2.0);
        let beta = (self.beta_shape - 1.0) * self.beta_scale;
        ParamVector::new(vec![rate; model.n_rates()], beta)
    }

    fn sample(&self, model: ModelId, rng: &mut TaskRng) -> ParamVector {
        let p = self.prepare();
        let rates = (0..model.n_rates())
            .map(|_| p.rate.sample(rng).clamp(RATE_CLIP, 1.0 - RATE_CLIP))
            .collect();
        let beta = p.beta.sample(rng).max(1e-3);
        ParamVector::new(rates, beta)
    }
}

/// Optimizer settings for one MAP fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_restarts: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub ftol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_restarts: 10,
            seed: 0,
            max_iters: 1200,
            ftol: 1e-9,
        }
    }
}

/// MAP estimate for one transcript x model pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model_id: ModelId,
    pub run_id: u32,
    pub params: ParamVector,
    pub log_likelihood: f64,
    pub log_posterior: f64,
    pub bic: f64,
    /// Number of scored (free) choices.
    pub n_choices: usize,
    pub n_params: usize,
    pub n_restarts_used: usize,
    pub converged: bool,
}

/// Log posterior of `params`: the free-choice log likelihood plus log prior
/// densities. Returns `-inf` at zero-density boundary points rather than
/// erroring.
pub fn log_posterior(
    transcript: &Transcript,
    model: ModelId,
    params: &ParamVector,
    priors: &PriorSpec,
) -> Result<f64, FitError> {
    let nll = negative_log_likelihood(transcript, model, params)?;
    Ok(-nll + priors.log_density(params))
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(RATE_CLIP, 1.0 - RATE_CLIP);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn to_unconstrained(params: &ParamVector) -> Vec<f64> {
    let mut z: Vec<f64> = params.rates.iter().map(|&r| logit(r)).collect();
    z.push(params.beta.max(1e-12).ln());
    z
}

fn from_unconstrained(z: &[f64]) -> ParamVector {
    let n = z.len() - 1;
    let rates = z[..n]
        .iter()
        .map(|&x| sigmoid(x).clamp(RATE_CLIP, 1.0 - RATE_CLIP))
        .collect();
    ParamVector::new(rates, z[n].exp())
}

/// Maximize the log posterior with a multi-start simplex search. One start
/// sits at the prior mode, the rest are drawn from the priors; `converged`
/// is set when the two best restarts agree within 1e-3 in objective.
pub fn map_fit(
    transcript: &Transcript,
    model: ModelId,
    priors: &PriorSpec,
    config: &FitConfig,
) -> Result<FitResult, FitError> {
    let n_choices = transcript.n_free();
    if n_choices == 0 {
        return Err(FitError::NoFreeTrials);
    }
    let prepared = priors.prepare();
    // Surface malformed transcripts once, before the optimizer loop.
    negative_log_likelihood(transcript, model, &priors.mode(model))?;

    let mut objective = |z: &[f64]| -> f64 {
        let mut params = from_unconstrained(z);
        let raw_beta = params.beta;
        // The likelihood sees the capped beta; the prior sees the raw one,
        // which keeps the objective strictly worsening past the cap instead
        // of flat.
        params.beta = raw_beta.min(BETA_FIT_CAP);
        let nll = negative_log_likelihood(transcript, model, &params)
            .expect("transcript validated above");
        let mut log_prior = params
            .rates
            .iter()
            .map(|r| prepared.rate.ln_pdf(*r))
            .sum::<f64>();
        log_prior += prepared.beta.ln_pdf(raw_beta);
        nll - log_prior
    };

    let mut rng = TaskRng::seed_from_u64(config.seed);
    let mut best: Option<SimplexResult> = None;
    let mut finals: Vec<f64> = Vec::with_capacity(config.n_restarts);
    for restart in 0..config.n_restarts.max(1) {
        let start = if restart == 0 {
            priors.mode(model)
        } else {
            priors.sample(model, &mut rng)
        };
        let z0 = to_unconstrained(&start);
        if !objective(&z0).is_finite() {
            continue;
        }
        let result = minimize(&mut objective, &z0, 1.0, config.ftol, config.max_iters);
        if !result.fx.is_finite() {
            continue;
        }
        finals.push(result.fx);
        if best.as_ref().map_or(true, |b| result.fx < b.fx) {
            best = Some(result);
        }
    }
    let best = best.ok_or(FitError::NonFiniteObjective)?;

    finals.sort_by(|a, b| a.total_cmp(b));
    let converged = finals.len() >= 2 && (finals[1] - finals[0]).abs() <= 1e-3;

    let mut params = from_unconstrained(&best.x);
    params.beta = params.beta.min(BETA_FIT_CAP);
    let log_likelihood = -negative_log_likelihood(transcript, model, &params)?;
    let log_post = log_likelihood + priors.log_density(&params);
    let k = model.n_params();
    Ok(FitResult {
        model_id: model,
        run_id: transcript.run_id(),
        params,
        log_likelihood,
        log_posterior: log_post,
        bic: bic(k, n_choices, log_likelihood).expect("n_choices >= 1"),
        n_choices,
        n_params: k,
        n_restarts_used: config.n_restarts.max(1),
        converged,
    })
}

/// Bayesian Information Criterion: `k * ln(N) - 2 * logL`. Lower is better.
pub fn bic(k: usize, n: usize, log_likelihood: f64) -> Result<f64, FitError> {
    if n == 0 {
        return Err(FitError::NoFreeTrials);
    }
    Ok(k as f64 * (n as f64).ln() - 2.0 * log_likelihood)
}

/// Per-transcript model weights: softmax of `-BIC / 2` under a uniform
/// model prior, computed against the minimum BIC so the exponents never
/// overflow.
pub fn posterior_probabilities(bics: &[f64]) -> Vec<f64> {
    assert!(!bics.is_empty());
    let min = bics.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = bics.iter().map(|b| (-0.5 * (b - min)).exp()).collect();
    let z: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / z).collect()
}

/// Per-transcript fits and posterior probabilities for one model set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpRow {
    pub run_id: u32,
    pub fits: Vec<FitResult>,
    pub pps: Vec<f64>,
}

/// Model comparison across a transcript battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub models: Vec<ModelId>,
    /// One entry per transcript, in input order; fit failures are recorded
    /// instead of aborting the batch.
    pub rows: Vec<Result<PpRow, String>>,
    /// Mean posterior probability per model with a 95% CI over transcripts.
    pub mean_pp: Vec<MeanCi>,
}

impl ComparisonResult {
    pub fn mean_pp_of(&self, model: ModelId) -> Option<f64> {
        let idx = self.models.iter().position(|m| *m == model)?;
        Some(self.mean_pp[idx].mean)
    }

    pub fn n_failed(&self) -> usize {
        self.rows.iter().filter(|r| r.is_err()).count()
    }
}

/// Deterministic seed derivation for parallel batteries.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut x = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Fit every model to every transcript and report per-transcript posterior
/// probabilities plus their means. Fits run in parallel; results merge in
/// `(transcript, model)` order, so output is deterministic.
pub fn compare_models(
    transcripts: &[Transcript],
    models: &[ModelId],
    priors: &PriorSpec,
    config: &FitConfig,
) -> Result<ComparisonResult, FitError> {
    if transcripts.is_empty() {
        return Err(FitError::NoTranscripts);
    }
    assert!(!models.is_empty());
    let rows: Vec<Result<PpRow, String>> = transcripts
        .par_iter()
        .enumerate()
        .map(|(t_idx, transcript)| {
            let mut fits = Vec::with_capacity(models.len());
            for (m_idx, &model) in models.iter().enumerate() {
                let cfg = FitConfig {
                    seed: derive_seed(config.seed, t_idx as u64, m_idx as u64),
                    ..config.clone()
                };
                match map_fit(transcript, model, priors, &cfg) {
                    Ok(fit) => fits.push(fit),
                    Err(e) => return Err(format!("transcript {t_idx}, model {model}: {e}")),
                }
            }
            let bics: Vec<f64> = fits.iter().map(|f| f.bic).collect();
            Ok(PpRow {
                run_id: transcript.run_id(),
                fits,
                pps: posterior_probabilities(&bics),
            })
        })
        .collect();

    let mean_pp = (0..models.len())
        .map(|m| {
            let pps: Vec<f64> = rows
                .iter()
                .filter_map(|r| r.as_ref().ok())
                .map(|row| row.pps[m])
                .collect();
            mean_ci_95(&pps)
        })
        .collect();
    Ok(ComparisonResult {
        models: models.to_vec(),
        rows,
        mean_pp,
    })
}
