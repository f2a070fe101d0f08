//! The authentication protocol: correlation-loss training toward private
//! random codewords, warm-up threshold calibration, and the accept/reject
//! decision.
//!
//! The score of an input `x` against codeword `y` is the squared Euclidean
//! distance `e = ||y - F(x)||^2`; a claim is accepted iff `e <= tau`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codebook::{choose_embedding_length, BinaryEmbedding, Codebook};
use crate::datagen::ClientDataset;
use crate::error::{Error, Result};
use crate::federation::{run_fedavg, FederatedConfig, Objective, RoundRecord};
use crate::nn::{build_model, Model, ModelConfig, ModelParams, Tensor};
use crate::UserId;

/// Inputs are pushed through the network in chunks of this many rows.
const SCORE_CHUNK: usize = 64;

fn check_width(predictions: &Tensor, n_e: usize) -> Result<usize> {
    match predictions.shape() {
        [b, w] if *b >= 1 && *w == n_e => Ok(*b),
        other => Err(Error::arg(format!(
            "predictions {other:?} do not match embedding length {n_e}"
        ))),
    }
}

/// `-(1/B) sum_j (2y - 1)^T yhat_j` and its gradient `-(2y - 1)/B` per row.
pub fn correlation_loss(y: &BinaryEmbedding, predictions: &Tensor) -> Result<(f64, Tensor)> {
    let signs: Vec<f64> = y.bits().iter().map(|&b| 2.0 * b as f64 - 1.0).collect();
    signed_correlation(&signs, predictions)
}

fn signed_correlation(signs: &[f64], predictions: &Tensor) -> Result<(f64, Tensor)> {
    let b = check_width(predictions, signs.len())?;
    let scale = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for j in 0..b {
        let row = predictions.row(j);
        loss -= signs.iter().zip(row).map(|(s, p)| s * p).sum::<f64>();
        grad.extend(signs.iter().map(|s| -s * scale));
    }
    Ok((loss * scale, Tensor::new(vec![b, signs.len()], grad)?))
}

/// Correlation objective for simulated training. Each user's loss only
/// reads that user's own codeword.
#[derive(Clone, Debug)]
pub struct CorrelationObjective {
    signs: BTreeMap<UserId, Vec<f64>>,
}

impl CorrelationObjective {
    pub fn new(codebook: &Codebook) -> Self {
        let signs = codebook
            .iter()
            .map(|e| (e.user_id(), e.bits().iter().map(|&b| 2.0 * b as f64 - 1.0).collect()))
            .collect();
        CorrelationObjective { signs }
    }
}

impl Objective for CorrelationObjective {
    fn loss_and_grad(&self, user: UserId, predictions: &Tensor) -> Result<(f64, Tensor)> {
        let signs = self
            .signs
            .get(&user)
            .ok_or_else(|| Error::arg(format!("no embedding for user {user}")))?;
        signed_correlation(signs, predictions)
    }
}

/// Centralized baseline: batch mean of `d(y_i, yhat) - lambda * sum_{k != i} d(y_k, yhat)`
/// with `d` the squared Euclidean distance. Needs every user's codeword.
pub fn centralized_ua_loss(
    codebook: &Codebook,
    user: UserId,
    predictions: &Tensor,
    lambda: f64,
) -> Result<(f64, Tensor)> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::arg(format!("lambda {lambda} must be a non-negative real")));
    }
    let own = codebook
        .get(user)
        .ok_or_else(|| Error::arg(format!("no embedding for user {user}")))?
        .to_f64();
    let others: Vec<Vec<f64>> = codebook
        .iter()
        .filter(|e| e.user_id() != user)
        .map(|e| e.to_f64())
        .collect();
    if others.is_empty() {
        return Err(Error::arg("the centralized loss needs at least one other user"));
    }
    let n_e = own.len();
    let b = check_width(predictions, n_e)?;
    let scale = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * n_e];
    for j in 0..b {
        let row = predictions.row(j);
        let g = &mut grad[j * n_e..(j + 1) * n_e];
        loss += squared_distance(&own, row);
        for k in 0..n_e {
            g[k] += 2.0 * (row[k] - own[k]) * scale;
        }
        for other in &others {
            loss -= lambda * squared_distance(other, row);
            for k in 0..n_e {
                g[k] -= lambda * 2.0 * (row[k] - other[k]) * scale;
            }
        }
    }
    Ok((loss * scale, Tensor::new(vec![b, n_e], grad)?))
}

/// [`centralized_ua_loss`] as a training objective.
#[derive(Clone, Debug)]
pub struct CentralizedObjective<'a> {
    pub codebook: &'a Codebook,
    pub lambda: f64,
}

impl Objective for CentralizedObjective<'_> {
    fn loss_and_grad(&self, user: UserId, predictions: &Tensor) -> Result<(f64, Tensor)> {
        centralized_ua_loss(self.codebook, user, predictions, self.lambda)
    }
}

/// How the server picks the embedding length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingSpec {
    /// Use exactly this many bits.
    Length(usize),
    /// Smallest length whose minimum-distance bound reaches `bound_q`.
    Sized {
        min_dist_tau: usize,
        #[serde(default = "default_bound_q")]
        bound_q: f64,
    },
}

pub const DEFAULT_BOUND_Q: f64 = 0.9;

fn default_bound_q() -> f64 {
    DEFAULT_BOUND_Q
}

impl EmbeddingSpec {
    /// Embedding length for `n` users.
    pub fn resolve(&self, n: usize) -> Result<usize> {
        match *self {
            EmbeddingSpec::Length(0) => Err(Error::arg("embedding length must be positive")),
            EmbeddingSpec::Length(n_e) => Ok(n_e),
            EmbeddingSpec::Sized { min_dist_tau, bound_q } => choose_embedding_length(n, min_dist_tau, bound_q),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FedUaOutcome {
    /// The input configuration resized to the chosen embedding length.
    pub model_config: ModelConfig,
    pub params: ModelParams,
    pub codebook: Codebook,
    pub rounds: Vec<RoundRecord>,
}

/// Sizes the codewords, lets every user draw one, and trains the shared
/// network with federated averaging on the correlation loss. The initial
/// parameters come from `fed_config.seed`.
pub fn run_fedua<F>(
    fed_config: &FederatedConfig,
    model_config: &ModelConfig,
    clients: &[ClientDataset],
    codebook_seed: u64,
    embedding: EmbeddingSpec,
    on_round: F,
) -> Result<FedUaOutcome>
where
    F: FnMut(&RoundRecord, &ModelParams) -> Result<()>,
{
    fed_config.validate()?;
    if clients.is_empty() {
        return Err(Error::arg("training needs at least one user"));
    }
    let mut ids: Vec<UserId> = clients.iter().map(|c| c.user_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::arg("duplicate user ids among clients"));
    }
    for c in clients {
        if c.input_length()? != model_config.input_length {
            return Err(Error::dim(format!(
                "user {} has inputs of length {}, the model expects {}",
                c.user_id,
                c.input_length()?,
                model_config.input_length
            )));
        }
    }
    let n_e = embedding.resolve(clients.len())?;
    let model_config = model_config.clone().with_embedding_length(n_e);
    let initial = build_model(&model_config, fed_config.seed)?;
    let codebook = Codebook::generate(n_e, codebook_seed, ids)?;
    let objective = CorrelationObjective::new(&codebook);
    let outcome = run_fedavg(fed_config, &model_config, clients, &objective, initial, on_round)?;
    Ok(FedUaOutcome {
        model_config,
        params: outcome.params,
        codebook,
        rounds: outcome.rounds,
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Network outputs for `samples` shaped `[k, 1, L]`, one row per sample.
pub fn embed(model: &Model, samples: &Tensor) -> Result<Vec<Vec<f64>>> {
    let k = match samples.shape() {
        [k, 1, _] => *k,
        other => return Err(Error::dim(format!("samples {other:?}, expected [k, 1, L]"))),
    };
    let mut out = Vec::with_capacity(k);
    let rows: Vec<usize> = (0..k).collect();
    for chunk in rows.chunks(SCORE_CHUNK) {
        let pred = model.predict(&samples.select_rows(chunk))?;
        out.extend((0..chunk.len()).map(|j| pred.row(j).to_vec()));
    }
    Ok(out)
}

/// Scores `e = ||y - F(x)||^2` of every sample against `y`.
pub fn scores(model: &Model, y: &BinaryEmbedding, samples: &Tensor) -> Result<Vec<f64>> {
    if y.len() != model.config().embedding_length {
        return Err(Error::arg(format!(
            "embedding has {} bits, the model outputs {}",
            y.len(),
            model.config().embedding_length
        )));
    }
    let target = y.to_f64();
    Ok(embed(model, samples)?
        .iter()
        .map(|p| squared_distance(&target, p))
        .collect())
}

/// Outcome of a user's warm-up phase.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationResult {
    pub user_id: UserId,
    pub tau: f64,
    pub k: usize,
    pub r: f64,
    /// The `k` warm-up distances, ascending.
    pub distances: Vec<f64>,
}

impl CalibrationResult {
    pub fn threshold(&self) -> Threshold {
        Threshold {
            user_id: self.user_id,
            k: self.k,
            r: self.r,
            tau: self.tau,
        }
    }
}

/// Index `i = floor(k * r)` of the warm-up order statistic.
pub fn order_statistic_index(k: usize, r: f64) -> Result<usize> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::arg(format!("target TPR {r} must lie in (0, 1]")));
    }
    // tolerance for products such as 0.7 * 10 = 6.999999999999999
    let i = ((k as f64 * r) + 1e-9).floor() as usize;
    if i == 0 {
        return Err(Error::Calibration(format!(
            "{k} warm-up samples are too few for target TPR {r}"
        )));
    }
    Ok(i.min(k))
}

/// Sets `tau` to the `floor(k * r)`-th smallest of the given distances.
pub fn calibrate_from_distances(user_id: UserId, mut distances: Vec<f64>, r: f64) -> Result<CalibrationResult> {
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite(format!("warm-up distances of user {user_id}")));
    }
    let k = distances.len();
    let i = order_statistic_index(k, r)?;
    distances.sort_by(f64::total_cmp);
    Ok(CalibrationResult {
        user_id,
        tau: distances[i - 1],
        k,
        r,
        distances,
    })
}

/// Warm-up phase: scores the user's own samples against `y` and picks the
/// threshold that accepts a fraction `r` of them.
pub fn warm_up_threshold(model: &Model, y: &BinaryEmbedding, samples: &Tensor, r: f64) -> Result<CalibrationResult> {
    let distances = scores(model, y, samples)?;
    calibrate_from_distances(y.user_id(), distances, r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuthDecision {
    pub verdict: Verdict,
    pub score: f64,
    pub tau: f64,
}

/// Accept iff `score <= tau`.
pub fn decide(score: f64, tau: f64) -> AuthDecision {
    let verdict = if score <= tau { Verdict::Accept } else { Verdict::Reject };
    AuthDecision { verdict, score, tau }
}

/// Scores one input (shaped `[1, L]`, `[1, 1, L]` or `[L]`) against `y`.
pub fn authenticate(model: &Model, y: &BinaryEmbedding, tau: f64, input: &Tensor) -> Result<AuthDecision> {
    if tau.is_nan() {
        return Err(Error::arg("threshold is NaN"));
    }
    let l = model.config().input_length;
    match input.shape() {
        [n] | [1, n] | [1, 1, n] if *n == l => {}
        other => {
            return Err(Error::dim(format!(
                "input {other:?}, expected a single sample of length {l}"
            )))
        }
    }
    let sample = input.clone().reshape(vec![1, 1, l])?;
    let score = scores(model, y, &sample)?[0];
    Ok(decide(score, tau))
}

/// One row of a calibration file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub user_id: UserId,
    pub k: usize,
    pub r: f64,
    pub tau: f64,
}

/// Calibration CSV with header `user_id,k,r,tau`.
pub fn write_thresholds<W: Write>(thresholds: &[Threshold], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for t in thresholds {
        w.serialize(t).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_thresholds<R: Read>(reader: R) -> Result<Vec<Threshold>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out: Vec<Threshold> = Vec::new();
    for (i, row) in r.deserialize().enumerate() {
        let t: Threshold = row.map_err(|e| Error::Parse {
            line: i + 2,
            reason: e.to_string(),
        })?;
        if !(t.tau >= 0.0) {
            return Err(Error::Parse {
                line: i + 2,
                reason: format!("threshold {} must be non-negative", t.tau),
            });
        }
        if out.iter().any(|o| o.user_id == t.user_id) {
            return Err(Error::Parse {
                line: i + 2,
                reason: format!("user {} listed twice", t.user_id),
            });
        }
        out.push(t);
    }
    Ok(out)
}

pub fn save_thresholds(thresholds: &[Threshold], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_thresholds(thresholds, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_thresholds(path: &Path) -> Result<Vec<Threshold>> {
    read_thresholds(std::fs::File::open(path)?)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format {
            what: "calibration",
            reason: format!("{other:?}"),
        },
    }
}
