//! Per-user datasets.
//!
//! The synthetic generator gives every user a fixed smooth signature (a sum
//! of a few random-frequency sinusoids, scaled by `separation`) and emits
//! samples as signature plus white Gaussian noise of scale `noise`. Real data
//! enters through the feature CSV:
//!
//! ```text
//! user_id,split,sample_index,f0,f1,...,f{L-1}
//! 0,train,0,0.125,-0.5,...
//! ```
//!
//! `split` is one of `train`, `warmup`, `validation`, `test`. `sample_index`
//! is unique per user across all splits and orders rows within a split.
//! Users without any `train` row are treated as unseen (not trained on).

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng;
use crate::UserId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Warmup,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Warmup, Split::Validation, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Warmup => "warmup",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown split label {s:?}")))
    }
}

/// One user's samples, each split shaped `[n, 1, L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset {
    pub user_id: UserId,
    pub train: Tensor,
    pub warmup: Tensor,
    pub validation: Tensor,
    pub test: Tensor,
}

impl ClientDataset {
    pub fn new(user_id: UserId, train: Tensor, warmup: Tensor, validation: Tensor, test: Tensor) -> Result<Self> {
        let ds = ClientDataset {
            user_id,
            train,
            warmup,
            validation,
            test,
        };
        ds.input_length()?;
        Ok(ds)
    }

    pub fn split(&self, split: Split) -> &Tensor {
        match split {
            Split::Train => &self.train,
            Split::Warmup => &self.warmup,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// `n_s`, the number of local training samples.
    pub fn sample_count(&self) -> usize {
        self.train.rows()
    }

    /// The common input length of all splits.
    pub fn input_length(&self) -> Result<usize> {
        let mut len = None;
        for s in Split::ALL {
            match self.split(s).shape() {
                [_, 1, l] => match len {
                    None => len = Some(*l),
                    Some(prev) if prev != *l => {
                        return Err(Error::dim(format!(
                            "user {}: split {s} has length {l}, expected {prev}",
                            self.user_id
                        )))
                    }
                    _ => {}
                },
                other => {
                    return Err(Error::dim(format!(
                        "user {}: split {s} has shape {other:?}, expected [n, 1, L]",
                        self.user_id
                    )))
                }
            }
        }
        Ok(len.expect("four splits"))
    }
}

/// Sample counts per split for generated users.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub warmup: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    /// 15 training and 5 validation utterances per participant; warm-up and
    /// test sets of the same size as validation.
    fn default() -> Self {
        SplitSizes {
            train: 15,
            warmup: 5,
            validation: 5,
            test: 5,
        }
    }
}

/// Generator settings for [`synth_population`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub participants: usize,
    pub unseen: usize,
    pub input_length: usize,
    pub splits: SplitSizes,
    /// Samples per unseen user (all in `test`).
    pub unseen_samples: usize,
    pub separation: f64,
    pub noise: f64,
    pub tones: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            participants: 30,
            unseen: 20,
            input_length: 256,
            splits: SplitSizes::default(),
            unseen_samples: 10,
            separation: 1.0,
            noise: 0.1,
            tones: 4,
            seed: 0,
        }
    }
}

/// Users that train the model plus users held out entirely.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub input_length: usize,
    pub participants: Vec<ClientDataset>,
    pub unseen: Vec<ClientDataset>,
    pub generator: Option<SynthParams>,
}

impl Population {
    pub fn new(input_length: usize, participants: Vec<ClientDataset>, unseen: Vec<ClientDataset>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for ds in participants.iter().chain(&unseen) {
            if !ids.insert(ds.user_id) {
                return Err(Error::arg(format!("user {} appears twice", ds.user_id)));
            }
            if ds.input_length()? != input_length {
                return Err(Error::dim(format!("user {} has a different input length", ds.user_id)));
            }
        }
        if let Some(p) = participants.iter().find(|p| p.sample_count() == 0) {
            return Err(Error::arg(format!("participant {} has no training samples", p.user_id)));
        }
        Ok(Population {
            input_length,
            participants,
            unseen,
            generator: None,
        })
    }

    pub fn participant_ids(&self) -> Vec<UserId> {
        self.participants.iter().map(|p| p.user_id).collect()
    }

    pub fn participant(&self, user: UserId) -> Option<&ClientDataset> {
        self.participants.iter().find(|p| p.user_id == user)
    }

    pub fn manifest(&self) -> Manifest {
        let entry = |ds: &ClientDataset| ManifestEntry {
            user_id: ds.user_id,
            train: ds.train.rows(),
            warmup: ds.warmup.rows(),
            validation: ds.validation.rows(),
            test: ds.test.rows(),
        };
        Manifest {
            input_length: self.input_length,
            participants: self.participants.iter().map(entry).collect(),
            unseen: self.unseen.iter().map(entry).collect(),
            generator: self.generator.clone(),
        }
    }
}

/// Population manifest: user ids and split sizes, plus generator settings
/// when the data is synthetic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub input_length: usize,
    pub participants: Vec<ManifestEntry>,
    pub unseen: Vec<ManifestEntry>,
    pub generator: Option<SynthParams>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub user_id: UserId,
    pub train: usize,
    pub warmup: usize,
    pub validation: usize,
    pub test: usize,
}

fn signature(params: &SynthParams, user: UserId) -> Vec<f64> {
    let mut r = rng::stream(params.seed, &[rng::domain::SIGNATURE, user.0 as u64]);
    let len = params.input_length;
    let max_cycles = (len / 8).max(2) as f64;
    let mut sig = vec![0.0; len];
    for _ in 0..params.tones {
        let cycles = r.random_range(1.0..max_cycles);
        let phase = r.random_range(0.0..2.0 * PI);
        let amp: f64 = StandardNormal.sample(&mut r);
        for (t, v) in sig.iter_mut().enumerate() {
            *v += amp * (2.0 * PI * cycles * t as f64 / len as f64 + phase).sin();
        }
    }
    // unit RMS, then scale so inter-user distances grow with `separation`
    let rms = (sig.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    let scale = if rms > 0.0 { params.separation / rms } else { 0.0 };
    sig.iter_mut().for_each(|v| *v *= scale);
    sig
}

fn noisy_samples(params: &SynthParams, user: UserId, sig: &[f64], split: Split, count: usize) -> Tensor {
    let mut r = rng::stream(params.seed, &[rng::domain::NOISE, user.0 as u64, split as u64]);
    let mut data = Vec::with_capacity(count * sig.len());
    for _ in 0..count {
        for &s in sig {
            let n: f64 = StandardNormal.sample(&mut r);
            data.push(s + params.noise * n);
        }
    }
    Tensor::new(vec![count, 1, sig.len()], data).expect("sized")
}

/// Per-user noiseless signature, exposed for nearest-signature checks.
pub fn user_signature(params: &SynthParams, user: UserId) -> Vec<f64> {
    signature(params, user)
}

/// Builds a synthetic population: participants get ids `0..participants`,
/// unseen users follow.
pub fn synth_population(params: &SynthParams) -> Result<Population> {
    if !(params.separation > 0.0) || !params.separation.is_finite() {
        return Err(Error::arg("separation must be positive"));
    }
    if !(params.noise >= 0.0) || !params.noise.is_finite() {
        return Err(Error::arg("noise must be non-negative"));
    }
    if params.input_length < 4 {
        return Err(Error::arg("input length must be at least 4"));
    }
    if params.tones == 0 {
        return Err(Error::arg("signatures need at least one tone"));
    }
    if params.participants > 0 && params.splits.train == 0 {
        return Err(Error::arg("participants need at least one training sample"));
    }
    let total = params.participants + params.unseen;
    let users: Vec<UserId> = (0..total as u32).map(UserId).collect();
    let datasets: Vec<ClientDataset> = users
        .par_iter()
        .map(|&u| {
            let sig = signature(params, u);
            let sizes = if (u.0 as usize) < params.participants {
                params.splits
            } else {
                SplitSizes {
                    train: 0,
                    warmup: 0,
                    validation: 0,
                    test: params.unseen_samples,
                }
            };
            ClientDataset {
                user_id: u,
                train: noisy_samples(params, u, &sig, Split::Train, sizes.train),
                warmup: noisy_samples(params, u, &sig, Split::Warmup, sizes.warmup),
                validation: noisy_samples(params, u, &sig, Split::Validation, sizes.validation),
                test: noisy_samples(params, u, &sig, Split::Test, sizes.test),
            }
        })
        .collect();
    let mut datasets = datasets.into_iter();
    let participants: Vec<ClientDataset> = datasets.by_ref().take(params.participants).collect();
    let unseen: Vec<ClientDataset> = datasets.collect();
    let mut pop = Population::new(params.input_length, participants, unseen)?;
    pop.generator = Some(params.clone());
    Ok(pop)
}

/// Standard split of one participant's utterances: the first 15 train,
/// the next 5 validate. With `disjoint_warmup = Some(k)` the following `k`
/// samples form the warm-up set; otherwise warm-up reuses the validation
/// samples. Anything left over becomes test data.
pub fn utterance_split(user_id: UserId, samples: &Tensor, disjoint_warmup: Option<usize>) -> Result<ClientDataset> {
    const TRAIN: usize = 15;
    const VALIDATION: usize = 5;
    let needed = TRAIN + VALIDATION + disjoint_warmup.unwrap_or(0);
    let n = samples.rows();
    if n < needed {
        return Err(Error::arg(format!(
            "user {user_id} has {n} samples, the split plan needs {needed}"
        )));
    }
    let range = |a: usize, b: usize| samples.select_rows(&(a..b).collect::<Vec<_>>());
    let train = range(0, TRAIN);
    let validation = range(TRAIN, TRAIN + VALIDATION);
    let warmup = match disjoint_warmup {
        Some(k) => range(TRAIN + VALIDATION, TRAIN + VALIDATION + k),
        None => validation.clone(),
    };
    let test = range(needed, n);
    ClientDataset::new(user_id, train, warmup, validation, test)
}

/// Unseen users keep their first 10 utterances as test data.
pub fn unseen_split(user_id: UserId, samples: &Tensor) -> Result<ClientDataset> {
    const TEST: usize = 10;
    if samples.rows() < TEST {
        return Err(Error::arg(format!(
            "unseen user {user_id} has {} samples, needs {TEST}",
            samples.rows()
        )));
    }
    let len = samples.row_len();
    let empty = || Tensor::zeros(vec![0, 1, len]);
    let test = samples.select_rows(&(0..TEST).collect::<Vec<_>>());
    ClientDataset::new(user_id, empty(), empty(), empty(), test)
}

pub fn write_features<W: Write>(pop: &Population, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["user_id".to_string(), "split".into(), "sample_index".into()];
    header.extend((0..pop.input_length).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(csv_io)?;
    for ds in pop.participants.iter().chain(&pop.unseen) {
        let mut index = 0usize;
        for split in Split::ALL {
            let t = ds.split(split);
            for r in 0..t.rows() {
                let mut record = vec![ds.user_id.to_string(), split.to_string(), index.to_string()];
                record.extend(t.row(r).iter().map(|v| v.to_string()));
                w.write_record(&record).map_err(csv_io)?;
                index += 1;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format {
            what: "csv",
            reason: format!("{other:?}"),
        },
    }
}

pub fn export_features(pop: &Population, path: &Path) -> Result<()> {
    write_features(pop, BufWriter::new(File::create(path)?))
}

pub fn read_features<R: Read>(reader: R) -> Result<Population> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(false)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => {
            return Err(Error::Parse {
                line: 1,
                reason: "empty file".into(),
            })
        }
        Some(r) => r.map_err(|e| Error::Parse {
            line: 1,
            reason: e.to_string(),
        })?,
    };
    if header.len() < 4 || &header[0] != "user_id" || &header[1] != "split" || &header[2] != "sample_index" {
        return Err(Error::Parse {
            line: 1,
            reason: "header must be user_id,split,sample_index,f0,...".into(),
        });
    }
    let input_length = header.len() - 3;
    type Rows = BTreeMap<Split, Vec<(usize, Vec<f64>)>>;
    let mut users: BTreeMap<UserId, Rows> = BTreeMap::new();
    let mut seen: BTreeSet<(UserId, usize)> = BTreeSet::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let perr = |reason: String| Error::Parse { line, reason };
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        if rec.len() != header.len() {
            return Err(perr(format!("{} fields, header has {}", rec.len(), header.len())));
        }
        let user = UserId(
            rec[0]
                .trim()
                .parse()
                .map_err(|_| perr(format!("bad user id {:?}", &rec[0])))?,
        );
        let split: Split = rec[1].trim().parse().map_err(|e: Error| perr(e.to_string()))?;
        let index: usize = rec[2]
            .trim()
            .parse()
            .map_err(|_| perr(format!("bad sample index {:?}", &rec[2])))?;
        if !seen.insert((user, index)) {
            return Err(perr(format!("sample {index} of user {user} appears twice")));
        }
        let values = rec
            .iter()
            .skip(3)
            .map(|f| match f.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(perr(format!("bad feature value {f:?}"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        users
            .entry(user)
            .or_default()
            .entry(split)
            .or_default()
            .push((index, values));
    }
    if users.is_empty() {
        return Err(Error::Parse {
            line: 2,
            reason: "no samples".into(),
        });
    }
    let mut participants = Vec::new();
    let mut unseen = Vec::new();
    for (user, mut splits) in users {
        let mut take = |s: Split| {
            let mut rows = splits.remove(&s).unwrap_or_default();
            rows.sort_by_key(|(i, _)| *i);
            let refs: Vec<&[f64]> = rows.iter().map(|(_, v)| v.as_slice()).collect();
            if refs.is_empty() {
                Ok(Tensor::zeros(vec![0, 1, input_length]))
            } else {
                Tensor::stack(&[1, input_length], &refs)
            }
        };
        let ds = ClientDataset::new(
            user,
            take(Split::Train)?,
            take(Split::Warmup)?,
            take(Split::Validation)?,
            take(Split::Test)?,
        )?;
        if ds.sample_count() > 0 {
            participants.push(ds);
        } else {
            unseen.push(ds);
        }
    }
    Population::new(input_length, participants, unseen)
}

pub fn load_features(path: &Path) -> Result<Population> {
    read_features(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> SynthParams {
        SynthParams {
            participants: 4,
            unseen: 2,
            input_length: 32,
            noise,
            seed: 7,
            ..SynthParams::default()
        }
    }

    #[test]
    fn noiseless_samples_equal_signature() {
        let params = small(0.0);
        let pop = synth_population(&params).unwrap();
        for ds in pop.participants.iter().chain(&pop.unseen) {
            let sig = user_signature(&params, ds.user_id);
            for s in Split::ALL {
                let t = ds.split(s);
                for r in 0..t.rows() {
                    assert_eq!(t.row(r), sig.as_slice());
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            synth_population(&small(0.3)).unwrap(),
            synth_population(&small(0.3)).unwrap()
        );
        let mut other = small(0.3);
        other.seed = 8;
        assert_ne!(
            synth_population(&small(0.3)).unwrap(),
            synth_population(&other).unwrap()
        );
    }

    #[test]
    fn split_sizes_and_ids() {
        let pop = synth_population(&small(0.1)).unwrap();
        assert_eq!(pop.participant_ids(), (0..4).map(UserId).collect::<Vec<_>>());
        assert_eq!(pop.unseen[0].user_id, UserId(4));
        let p = &pop.participants[0];
        assert_eq!(
            (p.train.rows(), p.warmup.rows(), p.validation.rows(), p.test.rows()),
            (15, 5, 5, 5)
        );
        let u = &pop.unseen[1];
        assert_eq!((u.train.rows(), u.test.rows()), (0, 10));
    }

    #[test]
    fn argument_checks() {
        let mut p = small(0.1);
        p.separation = 0.0;
        assert!(synth_population(&p).is_err());
        let mut p = small(0.1);
        p.input_length = 3;
        assert!(synth_population(&p).is_err());
        let mut p = small(-1.0);
        p.noise = -1.0;
        assert!(synth_population(&p).is_err());
    }

    #[test]
    fn utterance_split_shapes() {
        let samples = Tensor::new(vec![20, 1, 3], (0..60).map(f64::from).collect()).unwrap();
        let ds = utterance_split(UserId(1), &samples, None).unwrap();
        assert_eq!(ds.train.rows(), 15);
        assert_eq!(ds.validation.rows(), 5);
        assert_eq!(ds.warmup, ds.validation);
        assert_eq!(ds.test.rows(), 0);
        assert_eq!(ds.validation.row(0), &[45.0, 46.0, 47.0]);

        let short = samples.select_rows(&(0..19).collect::<Vec<_>>());
        assert!(utterance_split(UserId(1), &short, None).is_err());
        assert!(utterance_split(UserId(1), &samples, Some(2)).is_err());

        let unseen = unseen_split(UserId(9), &samples).unwrap();
        assert_eq!((unseen.train.rows(), unseen.test.rows()), (0, 10));
    }

    #[test]
    fn features_round_trip() {
        let pop = synth_population(&small(0.25)).unwrap();
        let mut buf = Vec::new();
        write_features(&pop, &mut buf).unwrap();
        let back = read_features(buf.as_slice()).unwrap();
        assert_eq!(back.participants, pop.participants);
        assert_eq!(back.unseen, pop.unseen);
        assert_eq!(back.input_length, 32);
    }

    #[test]
    fn malformed_feature_files() {
        assert!(matches!(read_features(&b""[..]), Err(Error::Parse { line: 1, .. })));
        let ragged = "user_id,split,sample_index,f0,f1\n0,train,0,1.0,2.0\n0,train,1,1.0\n";
        assert!(matches!(
            read_features(ragged.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
        let label = "user_id,split,sample_index,f0\n0,holdout,0,1.0\n";
        assert!(matches!(
            read_features(label.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        let dup = "user_id,split,sample_index,f0\n0,train,0,1.0\n0,test,0,2.0\n";
        assert!(matches!(
            read_features(dup.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
    }
}
