//! Combining per-shard posteriors into one prediction.
//!
//! Three strategies: elementwise posterior averaging, per-shard-label
//! majority vote, and learned importance scores fitted by projected gradient
//! descent on the cross-entropy of the weighted posterior mixture. Scores are
//! kept nonnegative and sum to one after every epoch: the step updates
//! unconstrained pre-scores, negatives are clamped back to zero, and the
//! softmax of the clamped pre-scores is the weight vector used next.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{GerkError, Result};
use crate::gnn::model::{argmax_rows, PosteriorMatrix};

/// Posterior matrices from every shard over one ordered query-node list.
#[derive(Debug, Clone)]
pub struct ShardPosteriors {
    per_shard: Vec<PosteriorMatrix>,
}

impl ShardPosteriors {
    pub fn new(per_shard: Vec<PosteriorMatrix>) -> Result<Self> {
        if per_shard.is_empty() {
            return Err(GerkError::InvalidRequest("no shard posteriors".into()));
        }
        let dim = per_shard[0].probs.dim();
        for (i, p) in per_shard.iter().enumerate() {
            if p.probs.dim() != dim {
                return Err(GerkError::DimensionMismatch(format!(
                    "shard {i} posterior is {:?}, expected {dim:?}",
                    p.probs.dim()
                )));
            }
        }
        Ok(ShardPosteriors { per_shard })
    }

    pub fn shard_count(&self) -> usize {
        self.per_shard.len()
    }

    pub fn query_count(&self) -> usize {
        self.per_shard[0].probs.nrows()
    }

    pub fn class_count(&self) -> usize {
        self.per_shard[0].probs.ncols()
    }

    pub fn shard(&self, i: usize) -> &PosteriorMatrix {
        &self.per_shard[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &PosteriorMatrix> {
        self.per_shard.iter()
    }
}

/// Unweighted elementwise mean of the shard posteriors. A convex combination
/// of row-stochastic matrices, so rows stay stochastic.
pub fn mean_aggr(sp: &ShardPosteriors) -> PosteriorMatrix {
    let mut mean = Array2::zeros((sp.query_count(), sp.class_count()));
    for p in sp.iter() {
        mean += &p.probs;
    }
    mean /= sp.shard_count() as f64;
    PosteriorMatrix { probs: mean }
}

/// Majority vote over per-shard argmax labels. Vote ties, like argmax ties,
/// break toward the smallest class id.
pub fn maj_aggr(sp: &ShardPosteriors) -> Vec<usize> {
    let votes_per_shard: Vec<Vec<usize>> = sp.iter().map(|p| p.argmax_labels()).collect();
    let c = sp.class_count();
    (0..sp.query_count())
        .map(|row| {
            let mut counts = vec![0usize; c];
            for votes in &votes_per_shard {
                counts[votes[row]] += 1;
            }
            let mut best = 0usize;
            for (class, &count) in counts.iter().enumerate() {
                if count > counts[best] {
                    best = class;
                }
            }
            best
        })
        .collect()
}

/// Argmax of the score-weighted posterior mixture, tie toward the smallest
/// class id. The argmax is invariant under positive rescaling of `alpha`.
pub fn weighted_predict_raw(sp: &ShardPosteriors, alpha: &[f64]) -> Result<Vec<usize>> {
    let mix = mix_posteriors(sp, alpha)?;
    Ok(argmax_rows(&mix))
}

/// [`weighted_predict_raw`] with a fitted score vector.
pub fn weighted_predict(sp: &ShardPosteriors, scores: &ImportanceScores) -> Result<Vec<usize>> {
    weighted_predict_raw(sp, &scores.alpha)
}

fn mix_posteriors(sp: &ShardPosteriors, alpha: &[f64]) -> Result<Array2<f64>> {
    if alpha.len() != sp.shard_count() {
        return Err(GerkError::DimensionMismatch(format!(
            "{} scores for {} shards",
            alpha.len(),
            sp.shard_count()
        )));
    }
    let mut mix = Array2::zeros((sp.query_count(), sp.class_count()));
    for (i, p) in sp.iter().enumerate() {
        mix.scaled_add(alpha[i], &p.probs);
    }
    Ok(mix)
}

/// Learned shard weights plus the bookkeeping needed to refit them when one
/// of their training nodes is unlearned.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceScores {
    pub alpha: Vec<f64>,
    pub lambda: f64,
    pub subset_frac: f64,
    /// Nodes the scores were fitted on, in the caller's id space.
    pub score_train_nodes: Vec<usize>,
    pub seed: u64,
    pub epochs_run: usize,
    pub loss_trace: Vec<f64>,
}

impl ImportanceScores {
    /// Equal weight for every shard.
    pub fn uniform(m: usize) -> Self {
        ImportanceScores {
            alpha: vec![1.0 / m as f64; m],
            lambda: 0.0,
            subset_frac: 0.0,
            score_train_nodes: Vec::new(),
            seed: 0,
            epochs_run: 0,
            loss_trace: Vec::new(),
        }
    }

    /// Nonnegativity and unit sum, the two score invariants.
    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().any(|&a| a < 0.0) {
            return Err(GerkError::Format("negative importance score".into()));
        }
        let sum: f64 = self.alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(GerkError::Format(format!("importance scores sum to {sum}")));
        }
        Ok(())
    }
}

/// Score-fitting hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Fraction of training nodes sampled as the score-training subset.
    pub subset_frac: f64,
    pub seed: u64,
    /// Clamp negative pre-scores back to zero after each step. Softmax alone
    /// already keeps the weights valid; the clamp is kept for its ablation
    /// (`clamp = false` skips the projection).
    pub clamp: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            lambda: 1e-3,
            learning_rate: 0.05,
            epochs: 100,
            subset_frac: 0.1,
            seed: 0,
            clamp: true,
        }
    }
}

fn softmax(theta: &[f64]) -> Vec<f64> {
    let max = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = theta.iter().map(|t| (t - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// Fits importance scores on precomputed shard posteriors.
///
/// `labels[w]` is the true class of the w-th query row. Shard models are
/// fixed functions here; nothing backpropagates into them. Pre-scores start
/// at zero, so the initial weights are uniform. The reported loss is the mean
/// cross-entropy of the mixture plus `lambda * sum |alpha_i|`; with the
/// weights normalized the penalty contributes exactly `lambda` and no
/// gradient, but it is part of the objective as stated.
pub fn fit_scores(sp: &ShardPosteriors, labels: &[usize], cfg: &ScoreConfig) -> Result<ImportanceScores> {
    fit_scores_detailed(sp, labels, cfg).map(|(scores, _)| scores)
}

/// [`fit_scores`] that also returns the weight vector after every epoch, so
/// the per-epoch invariants can be audited.
pub fn fit_scores_detailed(
    sp: &ShardPosteriors,
    labels: &[usize],
    cfg: &ScoreConfig,
) -> Result<(ImportanceScores, Vec<Vec<f64>>)> {
    let m = sp.shard_count();
    let n = sp.query_count();
    if labels.len() != n {
        return Err(GerkError::DimensionMismatch(format!(
            "{} labels for {n} query rows",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(GerkError::InvalidRequest("no score-training rows".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= sp.class_count()) {
        return Err(GerkError::InvalidRequest(format!("label {bad} out of range")));
    }

    // truth[i][w] = posterior shard i assigns to the true class of row w
    let truth: Vec<Vec<f64>> = sp
        .iter()
        .map(|p| (0..n).map(|w| p.probs[[w, labels[w]]]).collect())
        .collect();

    let eval_loss = |alpha: &[f64]| -> f64 {
        let mut ce = 0.0;
        for w in 0..n {
            let mix: f64 = (0..m).map(|i| alpha[i] * truth[i][w]).sum();
            ce -= mix.max(1e-300).ln();
        }
        ce / n as f64 + cfg.lambda * alpha.iter().map(|a| a.abs()).sum::<f64>()
    };

    let mut theta = vec![0.0f64; m];
    let mut alpha = softmax(&theta);
    let mut loss_trace = Vec::with_capacity(cfg.epochs + 1);
    let mut alpha_trace = Vec::with_capacity(cfg.epochs + 1);
    alpha_trace.push(alpha.clone());

    for _ in 0..cfg.epochs {
        loss_trace.push(eval_loss(&alpha));

        // d(ce)/d(alpha_i) = mean_w -truth[i][w] / mix[w]
        let mut dalpha = vec![0.0f64; m];
        for w in 0..n {
            let mix: f64 = (0..m).map(|i| alpha[i] * truth[i][w]).sum();
            let mix = mix.max(1e-300);
            for i in 0..m {
                dalpha[i] -= truth[i][w] / mix;
            }
        }
        for d in &mut dalpha {
            *d /= n as f64;
        }
        // through the softmax onto the pre-scores
        let inner: f64 = (0..m).map(|i| alpha[i] * dalpha[i]).sum();
        for i in 0..m {
            let grad = alpha[i] * (dalpha[i] - inner);
            theta[i] -= cfg.learning_rate * grad;
        }
        if cfg.clamp {
            for t in &mut theta {
                *t = t.max(0.0);
            }
        }
        alpha = softmax(&theta);
        alpha_trace.push(alpha.clone());
    }
    loss_trace.push(eval_loss(&alpha));

    let scores = ImportanceScores {
        alpha,
        lambda: cfg.lambda,
        subset_frac: cfg.subset_frac,
        score_train_nodes: Vec::new(),
        seed: cfg.seed,
        epochs_run: cfg.epochs,
        loss_trace,
    };
    scores.validate()?;
    Ok((scores, alpha_trace))
}
