//! Generative-model access: `N` next-state samples for every (s, a[, t]).
//!
//! Each tuple draws from its own ChaCha stream (key = seed, stream id =
//! tuple index), so the dataset does not depend on query order and tuples
//! can be filled concurrently.

use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{Kind, MdpSpec};

/// Upper bound on stored samples for a single dataset.
pub const DEFAULT_SAMPLE_BUDGET: u64 = 1 << 30;

/// Stored transitions, indexed `[s][a][t][i]` (no `t` when stationary).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub kind: Kind,
    pub num_states: usize,
    pub num_actions: usize,
    /// Time slices; `None` for stationary data.
    pub horizon: Option<usize>,
    /// Samples per tuple.
    pub n: usize,
    pub samples: Vec<u32>,
    pub source_seed: u64,
    pub source_mdp_digest: String,
}

impl Dataset {
    /// Wraps an explicit sample tensor, checking its shape and index range.
    pub fn from_samples(
        kind: Kind,
        num_states: usize,
        num_actions: usize,
        horizon: Option<usize>,
        n: usize,
        samples: Vec<u32>,
    ) -> Result<Self> {
        let d = Dataset {
            kind,
            num_states,
            num_actions,
            horizon,
            n,
            samples,
            source_seed: 0,
            source_mdp_digest: String::new(),
        };
        d.check()?;
        Ok(d)
    }

    fn check(&self) -> Result<()> {
        match (self.kind, self.horizon) {
            (Kind::Stationary, None) | (Kind::Nonstationary, Some(_)) => {}
            _ => {
                return Err(Error::Dimension(
                    "time slices must be given exactly for nonstationary data".into(),
                ))
            }
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("N must be positive".into()));
        }
        let expected = self.num_tuples() * self.n;
        if self.samples.len() != expected {
            return Err(Error::Dimension(format!(
                "{} samples stored, expected {expected}",
                self.samples.len()
            )));
        }
        if let Some(bad) = self.samples.iter().find(|&&x| x as usize >= self.num_states) {
            return Err(Error::OutOfRange(format!("next state {bad}")));
        }
        Ok(())
    }

    pub fn time_slices(&self) -> usize {
        self.horizon.unwrap_or(1)
    }

    pub fn num_tuples(&self) -> usize {
        self.num_states * self.num_actions * self.time_slices()
    }

    #[inline]
    pub fn tuple_index(&self, s: usize, a: usize, t: usize) -> usize {
        let t = if self.kind == Kind::Stationary { 0 } else { t };
        (s * self.num_actions + a) * self.time_slices() + t
    }

    /// The `n` samples of one tuple; `t` is ignored for stationary data.
    pub fn tuple(&self, s: usize, a: usize, t: usize) -> &[u32] {
        let base = self.tuple_index(s, a, t) * self.n;
        &self.samples[base..base + self.n]
    }

    /// The `i`-th (0-based) sample of a tuple.
    #[inline]
    pub fn sample(&self, s: usize, a: usize, t: usize, i: usize) -> u32 {
        self.samples[self.tuple_index(s, a, t) * self.n + i]
    }

    /// `count(s, a[, t], s')` for every successor `s'`.
    pub fn empirical_counts(&self, s: usize, a: usize, t: Option<usize>) -> Result<Vec<u64>> {
        if s >= self.num_states || a >= self.num_actions {
            return Err(Error::OutOfRange(format!("tuple ({s},{a})")));
        }
        let t = match (self.kind, t) {
            (Kind::Nonstationary, Some(t)) if t < self.time_slices() => t,
            (Kind::Nonstationary, _) => {
                return Err(Error::OutOfRange(format!("time step {t:?}")));
            }
            (Kind::Stationary, _) => 0,
        };
        let mut counts = vec![0u64; self.num_states];
        for &x in self.tuple(s, a, t) {
            counts[x as usize] += 1;
        }
        Ok(counts)
    }

    /// Stationary view of time-indexed data: all `N * H` samples of each
    /// (s, a) concatenated sample-major, i.e. sample `i` of every step `t`
    /// before sample `i + 1` (pooled position `i * H + t`).
    pub fn pooled(&self) -> Dataset {
        if self.kind == Kind::Stationary {
            return self.clone();
        }
        let h = self.time_slices();
        let mut samples = Vec::with_capacity(self.samples.len());
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                for i in 0..self.n {
                    for t in 0..h {
                        samples.push(self.sample(s, a, t, i));
                    }
                }
            }
        }
        Dataset {
            kind: Kind::Stationary,
            horizon: None,
            n: self.n * h,
            samples,
            ..self.clone()
        }
    }

    pub fn to_json(&self, encoding: SampleEncoding) -> String {
        let samples = match encoding {
            SampleEncoding::Base64 => {
                let bytes: Vec<u8> = self.samples.iter().flat_map(|x| x.to_le_bytes()).collect();
                SamplesJson::Packed(base64::engine::general_purpose::STANDARD.encode(bytes))
            }
            SampleEncoding::Plain => SamplesJson::Plain(self.samples.clone()),
        };
        let file = DatasetJson {
            kind: self.kind,
            num_states: self.num_states,
            num_actions: self.num_actions,
            horizon: self.horizon,
            n: self.n,
            source_seed: self.source_seed,
            source_mdp_digest: self.source_mdp_digest.clone(),
            encoding,
            samples,
        };
        serde_json::to_string(&file).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetJson = serde_json::from_str(text)?;
        let samples = match (file.encoding, file.samples) {
            (SampleEncoding::Plain, SamplesJson::Plain(v)) => v,
            (SampleEncoding::Base64, SamplesJson::Packed(s)) => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(s.as_bytes())
                    .map_err(|e| Error::Format(format!("bad base64 samples: {e}")))?;
                if bytes.len() % 4 != 0 {
                    return Err(Error::Format("sample bytes not a multiple of 4".into()));
                }
                bytes
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect()
            }
            _ => return Err(Error::Format("sample encoding does not match payload".into())),
        };
        let d = Dataset {
            kind: file.kind,
            num_states: file.num_states,
            num_actions: file.num_actions,
            horizon: file.horizon,
            n: file.n,
            samples,
            source_seed: file.source_seed,
            source_mdp_digest: file.source_mdp_digest,
        };
        d.check()?;
        Ok(d)
    }

    /// SHA-256 over the shape and samples (hex).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for x in [
            self.num_states,
            self.num_actions,
            self.time_slices(),
            self.n,
        ] {
            h.update((x as u64).to_le_bytes());
        }
        for x in &self.samples {
            h.update(x.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleEncoding {
    /// Little-endian `u32` tensor, base64 encoded.
    Base64,
    /// Plain JSON array, for debugging.
    Plain,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SamplesJson {
    Packed(String),
    Plain(Vec<u32>),
}

#[derive(Serialize, Deserialize)]
struct DatasetJson {
    kind: Kind,
    #[serde(rename = "S")]
    num_states: usize,
    #[serde(rename = "A")]
    num_actions: usize,
    #[serde(rename = "H")]
    horizon: Option<usize>,
    #[serde(rename = "N")]
    n: usize,
    source_seed: u64,
    source_mdp_digest: String,
    encoding: SampleEncoding,
    samples: SamplesJson,
}

/// Inverse-CDF draw from a probability row. Falls back to the last state
/// with positive mass when rounding leaves `u` above the cumulative total.
#[inline]
pub(crate) fn draw_next(row: &[f64], u: f64) -> u32 {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = j;
            if u < acc {
                return j as u32;
            }
        }
    }
    last_positive as u32
}

/// Keyed stream for one tuple.
pub(crate) fn tuple_stream(seed: u64, tuple: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tuple);
    rng
}

/// Draws the `n` samples of a single tuple; identical to the corresponding
/// slice of [`sample_dataset`].
pub fn sample_tuple(m: &MdpSpec<f64>, n: usize, seed: u64, s: usize, a: usize, t: usize) -> Vec<u32> {
    let mut rng = tuple_stream(seed, m.tuple_index(s, a, t) as u64);
    let row = m.row(s, a, t);
    (0..n).map(|_| draw_next(row, rng.random::<f64>())).collect()
}

/// `n` independent draws from `T(s, a[, t], .)` for every tuple of `m`.
pub fn sample_dataset(m: &MdpSpec<f64>, n: usize, seed: u64) -> Result<Dataset> {
    sample_dataset_with_budget(m, n, seed, DEFAULT_SAMPLE_BUDGET)
}

pub fn sample_dataset_with_budget(m: &MdpSpec<f64>, n: usize, seed: u64, budget: u64) -> Result<Dataset> {
    if m.kind == Kind::Nonstationary && m.horizon.is_infinite() {
        return Err(Error::InvalidParameter(
            "nonstationary sampling needs a finite horizon".into(),
        ));
    }
    m.ensure_valid()?;
    if n == 0 {
        return Err(Error::InvalidParameter("N must be positive".into()));
    }
    let total = (m.num_tuples() as u128) * n as u128;
    if total > budget as u128 {
        return Err(Error::CapExceeded {
            what: "dataset",
            required: total.to_string(),
            cap: budget,
        });
    }
    let mut samples = vec![0u32; total as usize];
    samples.par_chunks_mut(n).enumerate().for_each(|(tuple, out)| {
        let mut rng = tuple_stream(seed, tuple as u64);
        let row = &m.transitions[tuple * m.num_states..(tuple + 1) * m.num_states];
        for slot in out.iter_mut() {
            *slot = draw_next(row, rng.random::<f64>());
        }
    });
    Ok(Dataset {
        kind: m.kind,
        num_states: m.num_states,
        num_actions: m.num_actions,
        horizon: (m.kind == Kind::Nonstationary).then(|| m.time_slices()),
        n,
        samples,
        source_seed: seed,
        source_mdp_digest: m.digest(),
    })
}
