//! Random binary embeddings and their separation guarantees.
//!
//! Every user draws an `n_e`-bit codeword with independent fair bits, from a
//! ChaCha8 stream seeded by `derive_seed(seed, [EMBEDDING, user_id])`. Bit `k`
//! is bit `k % 64` (least significant first) of the `k / 64`-th `u64` drawn.
//! No user needs to know anything about any other user's codeword.
//!
//! The server sizes `n_e` from the union bound on Hamming balls: for `n`
//! users and target minimum distance `tau`,
//! `P(d_min >= tau) >= prod_{k=0}^{n-1} (1 - k * V_tau / 2^n_e)` where
//! `V_tau = sum_{d<tau} C(n_e, d)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::UserId;

/// A user's private codeword in `{0,1}^n_e`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryEmbedding {
    user_id: UserId,
    bits: Vec<u8>,
}

impl BinaryEmbedding {
    pub fn new(user_id: UserId, bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::arg("embedding length must be at least 1"));
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::arg(format!(
                "embedding bit {pos} is {} (expected 0 or 1)",
                bits[pos]
            )));
        }
        Ok(BinaryEmbedding { user_id, bits })
    }

    /// Draws `n_e` fair bits from `rng`.
    pub fn random<R: RngCore + ?Sized>(user_id: UserId, n_e: usize, rng: &mut R) -> Result<Self> {
        if n_e == 0 {
            return Err(Error::arg("embedding length must be at least 1"));
        }
        let mut bits = Vec::with_capacity(n_e);
        while bits.len() < n_e {
            let word = rng.next_u64();
            let take = (n_e - bits.len()).min(64);
            bits.extend((0..take).map(|k| ((word >> k) & 1) as u8));
        }
        Ok(BinaryEmbedding { user_id, bits })
    }

    /// The embedding a user with `user_id` draws under the codebook `seed`.
    pub fn for_user(user_id: UserId, n_e: usize, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, &[rng::domain::EMBEDDING, user_id.0 as u64]);
        BinaryEmbedding::random(user_id, n_e, &mut r)
    }

    pub fn user_id(&self) -> UserId {
        self.user_id
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }

    pub fn complement(&self) -> Self {
        BinaryEmbedding {
            user_id: self.user_id,
            bits: self.bits.iter().map(|b| 1 - b).collect(),
        }
    }

    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(user_id: UserId, s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::arg(format!("bit string contains {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        BinaryEmbedding::new(user_id, bits)
    }

    fn packed(&self) -> Vec<u64> {
        self.bits
            .chunks(64)
            .map(|c| c.iter().enumerate().fold(0u64, |w, (k, &b)| w | ((b as u64) << k)))
            .collect()
    }
}

pub fn hamming_distance(a: &BinaryEmbedding, b: &BinaryEmbedding) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "embedding lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.bits.iter().zip(&b.bits).filter(|(x, y)| x != y).count())
}

fn packed_distance(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Minimum Hamming distance over all unordered pairs of `embeddings`.
fn min_distance_of(embeddings: &[&BinaryEmbedding]) -> Result<usize> {
    if embeddings.len() < 2 {
        return Err(Error::arg("minimum pairwise distance needs at least two embeddings"));
    }
    let n_e = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != n_e) {
        return Err(Error::arg("embeddings have different lengths"));
    }
    let packed: Vec<Vec<u64>> = embeddings.iter().map(|e| e.packed()).collect();
    let best = (0..packed.len())
        .into_par_iter()
        .map(|i| {
            packed[i + 1..]
                .iter()
                .map(|other| packed_distance(&packed[i], other))
                .min()
                .unwrap_or(u32::MAX)
        })
        .min()
        .unwrap_or(u32::MAX);
    Ok(best as usize)
}

/// Whether `d_min >= tau`, stopping at the first close pair.
fn separated_by(packed: &[Vec<u64>], tau: u32) -> bool {
    for i in 0..packed.len() {
        for j in i + 1..packed.len() {
            if packed_distance(&packed[i], &packed[j]) < tau {
                return false;
            }
        }
    }
    true
}

/// The collection of all users' codewords.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Codebook {
    n_e: usize,
    seed: u64,
    embeddings: BTreeMap<UserId, BinaryEmbedding>,
}

impl Codebook {
    pub fn new(n_e: usize, seed: u64) -> Result<Self> {
        if n_e == 0 {
            return Err(Error::arg("embedding length must be at least 1"));
        }
        Ok(Codebook {
            n_e,
            seed,
            embeddings: BTreeMap::new(),
        })
    }

    /// Each listed user draws its own codeword independently.
    pub fn generate(n_e: usize, seed: u64, users: impl IntoIterator<Item = UserId>) -> Result<Self> {
        let mut book = Codebook::new(n_e, seed)?;
        let users: Vec<UserId> = users.into_iter().collect();
        let drawn: Vec<BinaryEmbedding> = users
            .par_iter()
            .map(|&u| BinaryEmbedding::for_user(u, n_e, seed))
            .collect::<Result<_>>()?;
        for e in drawn {
            book.insert(e)?;
        }
        Ok(book)
    }

    pub fn insert(&mut self, embedding: BinaryEmbedding) -> Result<()> {
        if embedding.len() != self.n_e {
            return Err(Error::arg(format!(
                "embedding for user {} has length {}, codebook uses {}",
                embedding.user_id,
                embedding.len(),
                self.n_e
            )));
        }
        if self.embeddings.contains_key(&embedding.user_id) {
            return Err(Error::arg(format!("duplicate user {}", embedding.user_id)));
        }
        self.embeddings.insert(embedding.user_id, embedding);
        Ok(())
    }

    pub fn n_e(&self) -> usize {
        self.n_e
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn get(&self, user: UserId) -> Option<&BinaryEmbedding> {
        self.embeddings.get(&user)
    }

    pub fn embedding(&self, user: UserId) -> Result<&BinaryEmbedding> {
        self.get(user)
            .ok_or_else(|| Error::arg(format!("no embedding for user {user}")))
    }

    /// Embeddings in ascending user order.
    pub fn iter(&self) -> impl Iterator<Item = &BinaryEmbedding> {
        self.embeddings.values()
    }

    pub fn user_ids(&self) -> Vec<UserId> {
        self.embeddings.keys().copied().collect()
    }

    pub fn min_pairwise_distance(&self) -> Result<usize> {
        let all: Vec<&BinaryEmbedding> = self.iter().collect();
        min_distance_of(&all)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = CodebookDoc {
            n_e: self.n_e,
            seed: self.seed,
            embeddings: self
                .iter()
                .map(|e| EmbeddingDoc {
                    user_id: e.user_id,
                    bits: e.to_bit_string(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Format {
            what: "codebook",
            reason: e.to_string(),
        })?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "codebook",
            reason,
        };
        let doc: CodebookDoc = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let mut book = Codebook::new(doc.n_e, doc.seed).map_err(|e| bad(e.to_string()))?;
        for e in doc.embeddings {
            let emb = BinaryEmbedding::from_bit_string(e.user_id, &e.bits).map_err(|e| bad(e.to_string()))?;
            book.insert(emb).map_err(|e| bad(e.to_string()))?;
        }
        Ok(book)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Codebook::from_json(&fs::read_to_string(path)?)
    }
}

/// On-disk codebook: `{"n_e": .., "seed": .., "embeddings": [{"user_id": .., "bits": "0110.."}]}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookDoc {
    n_e: usize,
    seed: u64,
    embeddings: Vec<EmbeddingDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingDoc {
    user_id: UserId,
    bits: String,
}

/// `V_tau = sum_{d=0}^{tau-1} C(n_e, d)`, the number of words strictly
/// closer than `tau` to a fixed word.
pub fn hamming_ball_volume(n_e: usize, tau: usize) -> Result<BigUint> {
    if tau > n_e + 1 {
        return Err(Error::arg(format!("tau {tau} exceeds n_e + 1 = {}", n_e + 1)));
    }
    let mut total = BigUint::zero();
    let mut binom = BigUint::one();
    for d in 0..tau {
        total += &binom;
        // C(n_e, d+1) = C(n_e, d) * (n_e - d) / (d + 1), exact at every step
        binom = binom * BigUint::from(n_e - d) / BigUint::from(d + 1);
    }
    Ok(total)
}

/// Lower bound on `P(d_min >= tau)` for `n` random codewords of length `n_e`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceBound {
    pub n: usize,
    pub n_e: usize,
    pub tau: usize,
    pub probability: f64,
    numerator: BigUint,
    denominator_log2: u64,
}

impl DistanceBound {
    /// The bound as the exact fraction `numerator / 2^denominator_log2`.
    pub fn exact(&self) -> (&BigUint, u64) {
        (&self.numerator, self.denominator_log2)
    }
}

pub fn min_distance_bound(n: usize, n_e: usize, tau: usize) -> Result<DistanceBound> {
    if n == 0 {
        return Err(Error::arg("user count must be at least 1"));
    }
    if tau == 0 || tau > n_e {
        return Err(Error::arg(format!(
            "tau must lie in [1, n_e]; got tau={tau}, n_e={n_e}"
        )));
    }
    let volume = hamming_ball_volume(n_e, tau)?;
    let space = BigUint::one() << n_e;
    let vacuous = || DistanceBound {
        n,
        n_e,
        tau,
        probability: 0.0,
        numerator: BigUint::zero(),
        denominator_log2: 0,
    };
    // the last factor is the smallest; if it is not positive the bound is 0
    if BigUint::from(n - 1) * &volume >= space {
        return Ok(vacuous());
    }
    let mut numerator = BigUint::one();
    let mut taken = BigUint::zero();
    for _ in 1..n {
        taken += &volume;
        numerator *= &space - &taken;
    }
    let denominator_log2 = (n_e as u64) * (n as u64 - 1);
    let probability = ratio_to_f64(&numerator, denominator_log2);
    Ok(DistanceBound {
        n,
        n_e,
        tau,
        probability,
        numerator,
        denominator_log2,
    })
}

/// `numerator / 2^exp` rounded to a double. The numerator is truncated to its
/// leading 64 bits first, so the result never exceeds the exact value by more
/// than one rounding step.
fn ratio_to_f64(numerator: &BigUint, exp: u64) -> f64 {
    if numerator.is_zero() {
        return 0.0;
    }
    let bits = numerator.bits();
    let (head, shift) = if bits > 64 {
        ((numerator >> (bits - 64)).to_u64().expect("64 bits"), bits - 64)
    } else {
        (numerator.to_u64().expect("fits"), 0)
    };
    let scale = shift as i64 - exp as i64;
    scale_by_pow2(head as f64, scale)
}

fn scale_by_pow2(mut v: f64, mut e: i64) -> f64 {
    while e > 0 {
        let step = e.min(1000);
        v *= 2f64.powi(step as i32);
        e -= step;
    }
    while e < 0 {
        let step = (-e).min(1000);
        v *= 2f64.powi(-(step as i32));
        e += step;
        if v == 0.0 {
            break;
        }
    }
    v
}

/// Smallest `n_e >= tau` whose bound reaches `q`.
pub fn choose_embedding_length(n: usize, tau: usize, q: f64) -> Result<usize> {
    if n < 2 {
        return Err(Error::arg("sizing needs at least two users"));
    }
    if tau == 0 {
        return Err(Error::arg("minimum distance must be at least 1"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::arg(format!("confidence {q} must lie in (0, 1)")));
    }
    let reaches = |n_e: usize| -> Result<bool> { Ok(min_distance_bound(n, n_e, tau)?.probability >= q) };
    // the bound is non-decreasing in n_e, so bracket and bisect
    let mut lo = tau;
    if reaches(lo)? {
        return Ok(lo);
    }
    let mut hi = tau.max(1) * 2;
    while !reaches(hi)? {
        lo = hi;
        hi *= 2;
    }
    // invariant: bound(lo) < q <= bound(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reaches(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Fraction of `trials` fresh codebooks whose minimum distance is at least
/// `tau`. Trial `t` draws from `derive_seed(seed, [TRIAL, t])`, so the result
/// does not depend on the worker count.
pub fn empirical_min_distance_probability(n: usize, n_e: usize, tau: usize, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::arg("at least one trial is required"));
    }
    if n_e == 0 {
        return Err(Error::arg("embedding length must be at least 1"));
    }
    if n <= 1 {
        return Ok(1.0);
    }
    let hits: usize = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, &[rng::domain::TRIAL, t as u64]);
            let packed: Vec<Vec<u64>> = (0..n)
                .map(|_| {
                    let words = n_e.div_ceil(64);
                    (0..words)
                        .map(|w| {
                            let word: u64 = r.random();
                            let used = (n_e - w * 64).min(64);
                            if used == 64 {
                                word
                            } else {
                                word & ((1u64 << used) - 1)
                            }
                        })
                        .collect()
                })
                .collect();
            separated_by(&packed, tau as u32) as usize
        })
        .sum();
    Ok(hits as f64 / trials as f64)
}
