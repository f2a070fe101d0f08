//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use fedua::codebook::Codebook;
use fedua::datagen::ClientDataset;
use fedua::federation::{batch_order, run_fedavg, schedule_seed, FederatedConfig};
use fedua::fedua::CorrelationObjective;
use fedua::nn::{build_model, finite_diff_grad, LayerSpec, Model, ModelConfig, ModelParams, Tensor};
use fedua::{Result, UserId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Small networks that together exercise every layer kind. The layer under
/// test is named first.
pub fn layer_instances() -> Vec<(&'static str, ModelConfig)> {
    use LayerSpec::*;
    let cfg = |input_length, layers| ModelConfig {
        input_length,
        embedding_length: 3,
        layers,
    };
    vec![
        (
            "conv1d",
            cfg(
                8,
                vec![
                    Conv1d { channels: 2, kernel: 3 },
                    Flatten,
                    FullyConnected { inputs: 16, outputs: 3 },
                    Sigmoid,
                ],
            ),
        ),
        (
            "relu",
            cfg(
                8,
                vec![
                    Conv1d { channels: 2, kernel: 3 },
                    Relu,
                    Flatten,
                    FullyConnected { inputs: 16, outputs: 3 },
                    Sigmoid,
                ],
            ),
        ),
        (
            "avg_pool1d",
            cfg(
                8,
                vec![
                    Conv1d { channels: 2, kernel: 5 },
                    AvgPool1d { rate: 4 },
                    Flatten,
                    FullyConnected { inputs: 4, outputs: 3 },
                    Sigmoid,
                ],
            ),
        ),
        (
            "group_norm",
            cfg(
                8,
                vec![
                    Conv1d { channels: 4, kernel: 3 },
                    GroupNorm { groups: 2 },
                    Flatten,
                    FullyConnected { inputs: 32, outputs: 3 },
                    Sigmoid,
                ],
            ),
        ),
        (
            "fully_connected",
            cfg(6, vec![Flatten, FullyConnected { inputs: 6, outputs: 3 }, Sigmoid]),
        ),
        (
            "sigmoid",
            cfg(4, vec![Flatten, FullyConnected { inputs: 4, outputs: 3 }, Sigmoid]),
        ),
        (
            "flatten",
            cfg(
                4,
                vec![
                    Conv1d { channels: 3, kernel: 1 },
                    Flatten,
                    FullyConnected { inputs: 12, outputs: 3 },
                    Sigmoid,
                ],
            ),
        ),
        ("compact_chain", ModelConfig::compact(64, 3)),
    ]
}

/// Randomizes every parameter (including group-norm scale and shift) so
/// checks do not only see the initial values.
pub fn randomized_params(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut params = build_model(config, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = r.random_range(-1.0..1.0);
        }
    }
    params
}

pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Worst relative errors (parameters, input) of back-propagation against
/// central differences, for the loss `sum(weights * F(x))`.
pub fn gradient_errors(config: &ModelConfig, seed: u64) -> (f64, f64) {
    let params = randomized_params(config, seed);
    let batch = 2;
    let x = random_tensor(vec![batch, 1, config.input_length], seed + 1);
    let w = random_tensor(vec![batch, config.embedding_length], seed + 2);
    let weighted = |out: &Tensor| out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>();

    let mut model = Model::new(config.clone(), params.clone()).unwrap();
    model.forward(&x).unwrap();
    let dx = model.backward(&w).unwrap();
    let analytic: Vec<Vec<f64>> = model.params().tensors().map(|t| t.grad().unwrap().to_vec()).collect();

    let h = 1e-6;
    let numeric = finite_diff_grad(
        &params,
        |p: &ModelParams| -> Result<f64> {
            let m = Model::new(config.clone(), p.clone())?;
            Ok(weighted(&m.predict(&x)?))
        },
        h,
    )
    .unwrap();
    let param_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_err(a, n.data()))
        .fold(0.0, f64::max);

    let frozen = Model::new(config.clone(), params).unwrap();
    let mut num_dx = vec![0.0; x.len()];
    for (k, slot) in num_dx.iter_mut().enumerate() {
        let mut up = x.clone();
        up.data_mut()[k] += h;
        let mut down = x.clone();
        down.data_mut()[k] -= h;
        *slot = (weighted(&frozen.predict(&up).unwrap()) - weighted(&frozen.predict(&down).unwrap())) / (2.0 * h);
    }
    (param_err, rel_err(dx.data(), &num_dx))
}

/// Central differences of a scalar function of a prediction tensor.
pub fn numeric_prediction_grad<F: Fn(&Tensor) -> f64>(pred: &Tensor, f: F, h: f64) -> Vec<f64> {
    (0..pred.len())
        .map(|k| {
            let mut up = pred.clone();
            up.data_mut()[k] += h;
            let mut down = pred.clone();
            down.data_mut()[k] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

/// Exhaustive ROC: for every candidate threshold, count accepted scores
/// directly.
pub fn brute_force_roc(genuine: &[f64], imposter: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut ts: Vec<f64> = genuine.iter().chain(imposter).copied().collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    let mut rows = vec![(f64::NEG_INFINITY, 0.0, 0.0)];
    for t in ts {
        let tp = genuine.iter().filter(|&&g| g <= t).count();
        let fp = imposter.iter().filter(|&&i| i <= t).count();
        rows.push((t, fp as f64 / imposter.len() as f64, tp as f64 / genuine.len() as f64));
    }
    rows
}

/// Exhaustive probability that `n` uniform `n_e`-bit codewords are pairwise
/// at Hamming distance `>= tau`, as (favourable, total) counts.
pub fn exhaustive_min_distance(n: usize, n_e: usize, tau: usize) -> (u64, u64) {
    let words = 1u64 << n_e;
    let total = words.pow(n as u32);
    let mut good = 0;
    for code in 0..total {
        let mut c = code;
        let mut ws = Vec::with_capacity(n);
        for _ in 0..n {
            ws.push(c % words);
            c /= words;
        }
        let ok = (0..n).all(|i| (i + 1..n).all(|j| ((ws[i] ^ ws[j]).count_ones() as usize) >= tau));
        if ok {
            good += 1;
        }
    }
    (good, total)
}

/// Plain SGD on `[Flatten, FullyConnected, Sigmoid]` with the correlation
/// loss, written without the library's layers.
pub struct LinearSigmoidSgd {
    pub inputs: usize,
    pub outputs: usize,
    /// `[inputs, outputs]`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearSigmoidSgd {
    pub fn step(&mut self, xs: &[&[f64]], y: &[u8], lr: f64) {
        let bsz = xs.len() as f64;
        let mut dw = vec![0.0; self.w.len()];
        let mut db = vec![0.0; self.b.len()];
        for x in xs {
            for o in 0..self.outputs {
                let mut z = self.b[o];
                for i in 0..self.inputs {
                    z += x[i] * self.w[i * self.outputs + o];
                }
                let s = 1.0 / (1.0 + (-z).exp());
                let sign = 2.0 * y[o] as f64 - 1.0;
                let dz = -sign / bsz * s * (1.0 - s);
                db[o] += dz;
                for i in 0..self.inputs {
                    dw[i * self.outputs + o] += x[i] * dz;
                }
            }
        }
        self.w.iter_mut().zip(&dw).for_each(|(p, g)| *p -= lr * g);
        self.b.iter_mut().zip(&db).for_each(|(p, g)| *p -= lr * g);
    }
}

fn linear_config(inputs: usize, outputs: usize) -> ModelConfig {
    ModelConfig {
        input_length: inputs,
        embedding_length: outputs,
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::FullyConnected { inputs, outputs },
            LayerSpec::Sigmoid,
        ],
    }
}

fn empty(l: usize) -> Tensor {
    Tensor::zeros(vec![0, 1, l])
}

/// Runs `rounds` of single-client federated averaging and the same updates
/// as plain SGD; returns the largest coordinate difference.
pub fn fedavg_vs_sgd(rounds: usize, samples: usize, seed: u64) -> f64 {
    let (inputs, outputs) = (6, 4);
    let config = linear_config(inputs, outputs);
    let user = UserId(3);
    let train = random_tensor(vec![samples, 1, inputs], seed);
    let client = ClientDataset::new(user, train.clone(), empty(inputs), empty(inputs), empty(inputs)).unwrap();
    let codebook = Codebook::generate(outputs, seed, [user]).unwrap();
    let objective = CorrelationObjective::new(&codebook);
    let fed = FederatedConfig {
        client_fraction: 1.0,
        local_epochs: 1,
        batch_size: 8,
        learning_rate: 0.5,
        rounds,
        seed,
    };
    let initial = build_model(&config, seed).unwrap();
    let out = run_fedavg(&fed, &config, &[client], &objective, initial.clone(), |_, _| Ok(())).unwrap();

    let mut sgd = LinearSigmoidSgd {
        inputs,
        outputs,
        w: initial.layers[1][0].data().to_vec(),
        b: initial.layers[1][1].data().to_vec(),
    };
    let y = codebook.embedding(user).unwrap().bits().to_vec();
    for round in 1..=rounds {
        let order = batch_order(samples, schedule_seed(seed, user, round), 0);
        for chunk in order.chunks(fed.batch_size) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| train.row(i)).collect();
            sgd.step(&xs, &y, fed.learning_rate);
        }
    }
    let fed_values = out.params.flatten();
    let sgd_values: Vec<f64> = sgd.w.iter().chain(&sgd.b).copied().collect();
    fed_values
        .iter()
        .zip(&sgd_values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
