//! Federated averaging.
//!
//! Each round the server samples `m = max(floor(c * n), 1)` users without
//! replacement, broadcasts the global parameters, lets every sampled user run
//! `E` epochs of minibatch SGD on a private copy, and replaces the global
//! parameters with the sample-count-weighted mean of the returned copies.
//!
//! All randomness is derived from `FederatedConfig::seed`: client sampling
//! from `[SAMPLING, round]`, and the per-epoch batch shuffle of user `u` in
//! round `t` from `[BATCHES, u, t]` then `[epoch]`. Client updates run in
//! parallel; aggregation always sums in ascending user order.

use std::io::Write;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::ClientDataset;
use crate::error::{Error, Result};
use crate::nn::{Model, ModelConfig, ModelParams, Tensor};
use crate::rng;
use crate::UserId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederatedConfig {
    /// Fraction `c` of users sampled per round.
    pub client_fraction: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        FederatedConfig {
            client_fraction: 5e-3,
            local_epochs: 1,
            batch_size: 8,
            learning_rate: 2e-3,
            rounds: 100,
            seed: 0,
        }
    }
}

impl FederatedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::arg(format!(
                "client fraction {} must lie in (0, 1]",
                self.client_fraction
            )));
        }
        if self.local_epochs == 0 {
            return Err(Error::arg("local epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::arg("learning rate must be a non-negative real"));
        }
        Ok(())
    }

    pub fn local(&self) -> LocalTraining {
        LocalTraining {
            epochs: self.local_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
        }
    }
}

/// Settings for one user's local SGD.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

/// Training signal for one user's minibatch.
pub trait Objective: Sync {
    /// Loss on `predictions` (shape `[B, n_e]`) for samples of `user`, and its
    /// gradient with respect to `predictions`.
    fn loss_and_grad(&self, user: UserId, predictions: &Tensor) -> Result<(f64, Tensor)>;
}

/// What a user returns to the server.
#[derive(Clone, Debug)]
pub struct ClientUpdate {
    pub user_id: UserId,
    pub params: ModelParams,
    pub sample_count: usize,
    /// Mean minibatch loss over the local steps.
    pub mean_loss: f64,
}

/// Number of users per round, `max(floor(c * n), 1)`.
pub fn clients_per_round(n: usize, c: f64) -> usize {
    // tolerance for products such as 0.07 * 100 = 7.000000000000001
    (((c * n as f64) + 1e-9).floor() as usize).clamp(1, n.max(1))
}

/// Positions (ascending) of the users sampled in `round`.
pub fn sample_clients(n: usize, c: f64, seed: u64, round: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::arg("no users to sample from"));
    }
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::arg(format!("client fraction {c} must lie in (0, 1]")));
    }
    let m = clients_per_round(n, c);
    let mut r = rng::stream(seed, &[rng::domain::SAMPLING, round as u64]);
    let mut picked = index::sample(&mut r, n, m).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Seed of the batch schedule for `user` in `round`.
pub fn schedule_seed(seed: u64, user: UserId, round: usize) -> u64 {
    rng::derive_seed(seed, &[rng::domain::BATCHES, user.0 as u64, round as u64])
}

/// Shuffled sample order for one epoch.
pub fn batch_order(n: usize, schedule_seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(schedule_seed, &[epoch as u64]));
    order
}

/// One pass over `data` in `order`, one SGD step per batch of `batch_size`
/// (the last batch may be smaller). Returns the summed batch losses and the
/// number of batches.
pub fn run_epoch(
    model: &mut Model,
    user: UserId,
    data: &Tensor,
    order: &[usize],
    batch_size: usize,
    lr: f64,
    objective: &dyn Objective,
) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(batch_size) {
        let batch = data.select_rows(chunk);
        let predictions = model.forward(&batch)?;
        let (loss, grad) = objective.loss_and_grad(user, &predictions)?;
        model.backward(&grad)?;
        model.sgd_step(lr)?;
        total += loss;
        batches += 1;
    }
    Ok((total, batches))
}

/// Local training on a copy of the broadcast parameters.
pub fn user_update(
    global: &ModelParams,
    model_config: &ModelConfig,
    data: &ClientDataset,
    local: &LocalTraining,
    objective: &dyn Objective,
    schedule_seed: u64,
) -> Result<ClientUpdate> {
    let n = data.sample_count();
    if n == 0 {
        return Err(Error::arg(format!("user {} has no training data", data.user_id)));
    }
    if local.epochs == 0 || local.batch_size == 0 {
        return Err(Error::arg("local epochs and batch size must be at least 1"));
    }
    let mut model = Model::new(model_config.clone(), global.clone())?;
    let mut total = 0.0;
    let mut steps = 0;
    for epoch in 0..local.epochs {
        let order = batch_order(n, schedule_seed, epoch);
        let (loss, batches) = run_epoch(
            &mut model,
            data.user_id,
            &data.train,
            &order,
            local.batch_size,
            local.learning_rate,
            objective,
        )?;
        total += loss;
        steps += batches;
    }
    let mut params = model.into_params();
    params.clear_grads();
    Ok(ClientUpdate {
        user_id: data.user_id,
        params,
        sample_count: n,
        mean_loss: total / steps as f64,
    })
}

/// Sample-count-weighted coordinate-wise mean, summed in ascending user
/// order. Each coordinate is clamped to the range of its inputs, so the
/// result is always a convex combination even after rounding.
pub fn federated_average(updates: &[ClientUpdate]) -> Result<ModelParams> {
    let first = updates
        .first()
        .ok_or_else(|| Error::arg("no client updates to average"))?;
    if let Some(u) = updates.iter().find(|u| !u.params.same_layout(&first.params)) {
        return Err(Error::arg(format!(
            "update from user {} has a different parameter layout",
            u.user_id
        )));
    }
    if let Some(u) = updates.iter().find(|u| u.sample_count == 0) {
        return Err(Error::arg(format!(
            "update from user {} reports zero samples",
            u.user_id
        )));
    }
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.user_id);
    let total: f64 = ordered.iter().map(|u| u.sample_count as f64).sum();

    let mut out = first.params.clone();
    out.clear_grads();
    for (li, layer) in out.layers.iter_mut().enumerate() {
        for (ti, tensor) in layer.iter_mut().enumerate() {
            for (k, slot) in tensor.data_mut().iter_mut().enumerate() {
                let mut acc = 0.0;
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for u in &ordered {
                    let v = u.params.layers[li][ti].data()[k];
                    acc += u.sample_count as f64 * v;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                *slot = (acc / total).clamp(lo, hi);
            }
        }
    }
    Ok(out)
}

/// One line of the round log.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub sampled: Vec<UserId>,
    pub mean_client_loss: f64,
    pub wall_ms: f64,
}

pub struct FedAvgOutcome {
    pub params: ModelParams,
    pub rounds: Vec<RoundRecord>,
}

/// Runs `config.rounds` rounds from `initial`. `on_round` sees every record
/// together with the new global parameters (for checkpointing).
pub fn run_fedavg<F>(
    config: &FederatedConfig,
    model_config: &ModelConfig,
    clients: &[ClientDataset],
    objective: &dyn Objective,
    initial: ModelParams,
    mut on_round: F,
) -> Result<FedAvgOutcome>
where
    F: FnMut(&RoundRecord, &ModelParams) -> Result<()>,
{
    config.validate()?;
    if clients.is_empty() {
        return Err(Error::arg("federated training needs at least one user"));
    }
    let local = config.local();
    let mut global = initial;
    let mut log = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let started = Instant::now();
        let picked = sample_clients(clients.len(), config.client_fraction, config.seed, round)?;
        let updates: Vec<ClientUpdate> = picked
            .par_iter()
            .map(|&i| {
                let data = &clients[i];
                let seed = schedule_seed(config.seed, data.user_id, round);
                user_update(&global, model_config, data, &local, objective, seed)
            })
            .collect::<Result<_>>()?;
        global = federated_average(&updates)?;
        let mut sampled: Vec<UserId> = updates.iter().map(|u| u.user_id).collect();
        sampled.sort_unstable();
        let record = RoundRecord {
            round,
            sampled,
            mean_client_loss: updates.iter().map(|u| u.mean_loss).sum::<f64>() / updates.len() as f64,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        on_round(&record, &global)?;
        log.push(record);
    }
    Ok(FedAvgOutcome {
        params: global,
        rounds: log,
    })
}

/// Round log CSV: `round,sampled_ids,mean_client_loss,wall_ms` with sampled
/// ids joined by `;`. `wall_ms` is the only column that varies between
/// identical runs.
pub fn write_round_log<W: Write>(records: &[RoundRecord], mut w: W) -> Result<()> {
    writeln!(w, "round,sampled_ids,mean_client_loss,wall_ms")?;
    for r in records {
        let ids: Vec<String> = r.sampled.iter().map(|u| u.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{:.3}",
            r.round,
            ids.join(";"),
            r.mean_client_loss,
            r.wall_ms
        )?;
    }
    Ok(())
}

/// Spreadout regularizer over ordered pairs,
/// `sum_u sum_{u' != u} max(0, nu - d(y_u, y_u'))^2`, with `d` the squared
/// Euclidean distance.
pub fn spreadout_penalty(embeddings: &[Vec<f64>], nu: f64) -> f64 {
    let mut total = 0.0;
    for (i, a) in embeddings.iter().enumerate() {
        for (j, b) in embeddings.iter().enumerate() {
            if i != j {
                let hinge = (nu - squared_distance(a, b)).max(0.0);
                total += hinge * hinge;
            }
        }
    }
    total
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One gradient-descent step of size `step` on the spreadout penalty.
/// Pairs already at distance `>= nu` contribute nothing; coincident vectors
/// have zero gradient and stay put.
pub fn spreadout_step(embeddings: &[Vec<f64>], nu: f64, step: f64) -> Result<Vec<Vec<f64>>> {
    if embeddings.len() < 2 {
        return Err(Error::arg("spreadout needs at least two embeddings"));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::arg("embeddings have different lengths"));
    }
    if !(nu > 0.0) || !(step > 0.0) {
        return Err(Error::arg("margin and step must be positive"));
    }
    let mut grads = vec![vec![0.0; dim]; embeddings.len()];
    for (i, a) in embeddings.iter().enumerate() {
        for (j, b) in embeddings.iter().enumerate() {
            if i == j {
                continue;
            }
            let hinge = nu - squared_distance(a, b);
            if hinge <= 0.0 {
                continue;
            }
            // (i, j) and (j, i) both carry hinge^2, so d/da = -8 * hinge * (a - b)
            for k in 0..dim {
                grads[i][k] -= 8.0 * hinge * (a[k] - b[k]);
            }
        }
    }
    Ok(embeddings
        .iter()
        .zip(&grads)
        .map(|(e, g)| e.iter().zip(g).map(|(v, d)| v - step * d).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_model, LayerSpec};

    fn params_of(values: &[f64]) -> ModelParams {
        ModelParams {
            version: 1,
            layers: vec![vec![Tensor::new(vec![values.len()], values.to_vec()).unwrap()]],
        }
    }

    fn update(user: u32, values: &[f64], n: usize) -> ClientUpdate {
        ClientUpdate {
            user_id: UserId(user),
            params: params_of(values),
            sample_count: n,
            mean_loss: 0.0,
        }
    }

    #[test]
    fn clients_per_round_examples() {
        assert_eq!(clients_per_round(658, 5e-3), 3);
        assert_eq!(clients_per_round(10, 0.01), 1);
        assert_eq!(clients_per_round(30, 0.2), 6);
        assert_eq!(clients_per_round(7, 1.0), 7);
    }

    #[test]
    fn sampling_is_deterministic_and_unique() {
        let a = sample_clients(658, 5e-3, 1, 4).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, sample_clients(658, 5e-3, 1, 4).unwrap());
        let all = sample_clients(12, 1.0, 1, 2).unwrap();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
        let mut dedup = a.clone();
        dedup.dedup();
        assert_eq!(dedup, a);
        assert!(sample_clients(10, 0.0, 0, 1).is_err());
    }

    #[test]
    fn weighted_average_example() {
        let avg = federated_average(&[update(0, &[2.0, 4.0], 1), update(1, &[6.0, 8.0], 3)]).unwrap();
        assert_eq!(avg.flatten(), vec![5.0, 7.0]);
    }

    #[test]
    fn average_of_identical_params_is_exact() {
        let p = [0.1, -0.7, 1e-300, 3.3];
        let ups: Vec<_> = (0..5).map(|u| update(u, &p, 3 + u as usize)).collect();
        assert_eq!(federated_average(&ups).unwrap().flatten(), p.to_vec());
        assert_eq!(federated_average(&ups[..1]).unwrap().flatten(), p.to_vec());
    }

    #[test]
    fn average_rejects_bad_input() {
        assert!(federated_average(&[]).is_err());
        assert!(federated_average(&[update(0, &[1.0], 1), update(1, &[1.0, 2.0], 1)]).is_err());
    }

    #[test]
    fn spreadout_inactive_pairs_are_fixed() {
        let ys = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        assert_eq!(spreadout_step(&ys, 1.0, 0.1).unwrap(), ys);
    }

    #[test]
    fn spreadout_coincident_points_do_not_move() {
        let ys = vec![vec![0.0], vec![0.0]];
        assert_eq!(spreadout_step(&ys, 1.0, 0.1).unwrap(), ys);
    }

    #[test]
    fn spreadout_pushes_close_points_apart() {
        let ys = vec![vec![0.0], vec![0.5]];
        let next = spreadout_step(&ys, 1.0, 1e-3).unwrap();
        assert!(squared_distance(&next[0], &next[1]) > 0.25);
        assert!(spreadout_penalty(&next, 1.0) < spreadout_penalty(&ys, 1.0));
    }

    #[test]
    fn spreadout_gradient_matches_finite_differences() {
        let ys = vec![vec![0.1, 0.4], vec![0.3, 0.2], vec![0.9, 0.8]];
        let step = 1e-3;
        let next = spreadout_step(&ys, 1.0, step).unwrap();
        let h = 1e-6;
        for i in 0..ys.len() {
            for k in 0..2 {
                let mut up = ys.clone();
                up[i][k] += h;
                let mut dn = ys.clone();
                dn[i][k] -= h;
                let fd = (spreadout_penalty(&up, 1.0) - spreadout_penalty(&dn, 1.0)) / (2.0 * h);
                let analytic = (ys[i][k] - next[i][k]) / step;
                assert!((fd - analytic).abs() < 1e-6, "{i},{k}: {fd} vs {analytic}");
            }
        }
    }

    struct HalfSquared;

    impl Objective for HalfSquared {
        fn loss_and_grad(&self, _user: UserId, p: &Tensor) -> Result<(f64, Tensor)> {
            let b = p.rows() as f64;
            let loss = p.data().iter().map(|v| 0.5 * v * v).sum::<f64>() / b;
            let grad = Tensor::new(p.shape().to_vec(), p.data().iter().map(|v| v / b).collect())?;
            Ok((loss, grad))
        }
    }

    fn toy() -> (ModelConfig, ClientDataset) {
        let config = ModelConfig {
            input_length: 3,
            embedding_length: 2,
            layers: vec![LayerSpec::FullyConnected { inputs: 3, outputs: 2 }, LayerSpec::Sigmoid],
        };
        let x = Tensor::new(vec![5, 1, 3], (0..15).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let empty = Tensor::zeros(vec![0, 1, 3]);
        let ds = ClientDataset::new(UserId(0), x, empty.clone(), empty.clone(), empty).unwrap();
        (config, ds)
    }

    #[test]
    fn zero_learning_rate_returns_params_unchanged() {
        let (config, ds) = toy();
        let w = build_model(&config, 1).unwrap();
        let local = LocalTraining {
            epochs: 1,
            batch_size: 2,
            learning_rate: 0.0,
        };
        let up = user_update(&w, &config, &ds, &local, &HalfSquared, 5).unwrap();
        assert_eq!(up.params.flatten(), w.flatten());
        assert_eq!(up.sample_count, 5);
        let zero_epochs = LocalTraining { epochs: 0, ..local };
        assert!(user_update(&w, &config, &ds, &zero_epochs, &HalfSquared, 5).is_err());
    }

    #[test]
    fn two_epochs_equal_chained_epochs() {
        let (config, ds) = toy();
        let w = build_model(&config, 2).unwrap();
        let local = LocalTraining {
            epochs: 2,
            batch_size: 2,
            learning_rate: 0.1,
        };
        let up = user_update(&w, &config, &ds, &local, &HalfSquared, 9).unwrap();

        let mut replay = Model::new(config.clone(), w.clone()).unwrap();
        for epoch in 0..2 {
            let order = batch_order(5, 9, epoch);
            run_epoch(&mut replay, UserId(0), &ds.train, &order, 2, 0.1, &HalfSquared).unwrap();
        }
        assert_eq!(up.params.flatten(), replay.params().flatten());
    }

    #[test]
    fn single_sample_takes_one_step() {
        let (config, ds) = toy();
        let one = ClientDataset::new(
            UserId(0),
            ds.train.select_rows(&[0]),
            ds.warmup.clone(),
            ds.validation.clone(),
            ds.test.clone(),
        )
        .unwrap();
        let w = build_model(&config, 3).unwrap();
        let local = LocalTraining {
            epochs: 1,
            batch_size: 4,
            learning_rate: 0.5,
        };
        let up = user_update(&w, &config, &one, &local, &HalfSquared, 0).unwrap();

        let mut m = Model::new(config, w).unwrap();
        let p = m.forward(&one.train).unwrap();
        let (_, g) = HalfSquared.loss_and_grad(UserId(0), &p).unwrap();
        m.backward(&g).unwrap();
        m.sgd_step(0.5).unwrap();
        assert_eq!(up.params.flatten(), m.params().flatten());
    }

    #[test]
    fn zero_rounds_return_initial_params() {
        let (config, ds) = toy();
        let w = build_model(&config, 4).unwrap();
        let cfg = FederatedConfig {
            rounds: 0,
            client_fraction: 1.0,
            ..FederatedConfig::default()
        };
        let out = run_fedavg(&cfg, &config, &[ds], &HalfSquared, w.clone(), |_, _| Ok(())).unwrap();
        assert_eq!(out.params, w);
        assert!(out.rounds.is_empty());
    }

    #[test]
    fn round_log_format() {
        let recs = vec![RoundRecord {
            round: 1,
            sampled: vec![UserId(2), UserId(5)],
            mean_client_loss: -0.25,
            wall_ms: 1.5,
        }];
        let mut buf = Vec::new();
        write_round_log(&recs, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "round,sampled_ids,mean_client_loss,wall_ms\n1,2;5,-0.25,1.500\n"
        );
    }
}
