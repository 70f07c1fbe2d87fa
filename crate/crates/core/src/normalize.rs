//! Z-score statistics over proprioception and action rows, either unified
//! across domains or fitted per domain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Domain;
use crate::error::{Error, Result};
use crate::transform::{Row, TrainingSample};
use crate::ROW_DIM;

/// Dimensions whose standard deviation falls below this are left unscaled.
pub const STD_EPSILON: f64 = 1e-6;
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    Unified,
    PerDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Proprio,
    Action,
}

/// Streaming mean / variance accumulator (Welford, with Chan's merge).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Welford {
    pub count: u64,
    pub mean: Row,
    pub m2: Row,
}

impl Default for Welford {
    fn default() -> Self {
        Welford {
            count: 0,
            mean: [0.0; ROW_DIM],
            m2: [0.0; ROW_DIM],
        }
    }
}

impl Welford {
    pub fn push(&mut self, x: &Row) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..ROW_DIM {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..ROW_DIM {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.count += other.count;
    }

    /// Population standard deviation.
    pub fn std(&self) -> Row {
        std::array::from_fn(|i| (self.m2[i] / self.count as f64).max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub mean: Row,
    pub std: Row,
    pub count: u64,
    /// Dimensions whose std was replaced by 1.0.
    pub replaced: Vec<usize>,
}

impl StreamStats {
    fn from_acc(acc: &Welford, label: &str) -> Self {
        let mut std = acc.std();
        let mut replaced = Vec::new();
        for (i, s) in std.iter_mut().enumerate() {
            if *s < STD_EPSILON {
                log::info!("{label}: dimension {i} has std {s:e}; using 1.0");
                *s = 1.0;
                replaced.push(i);
            }
        }
        StreamStats {
            mean: acc.mean,
            std,
            count: acc.count,
            replaced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamPair {
    pub proprio: StreamStats,
    pub action: StreamStats,
}

impl StreamPair {
    pub fn stream(&self, s: Stream) -> &StreamStats {
        match s {
            Stream::Proprio => &self.proprio,
            Stream::Action => &self.action,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerDomainStats {
    pub human: StreamPair,
    pub robot: StreamPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mode: NormMode,
    /// Always fitted on every sample; used for every domain in unified mode.
    pub unified: StreamPair,
    pub per_domain: Option<PerDomainStats>,
    pub std_convention: String,
    pub epsilon: f64,
    /// Masked (padded) action rows are left out of the fit.
    pub excludes_padded_actions: bool,
    pub source_sha256: Option<String>,
}

#[derive(Default, Clone, Copy)]
struct Accs {
    proprio: Welford,
    action: Welford,
}

impl Accs {
    fn add(&mut self, s: &TrainingSample) {
        for r in &s.proprio {
            self.proprio.push(r);
        }
        for (r, &m) in s.action.iter().zip(&s.action_mask) {
            if m {
                self.action.push(r);
            }
        }
    }

    fn merge(&mut self, o: &Accs) {
        self.proprio.merge(&o.proprio);
        self.action.merge(&o.action);
    }

    fn finish(&self, label: &str) -> Result<StreamPair> {
        if self.proprio.count == 0 || self.action.count == 0 {
            return Err(Error::InvalidArgument(format!("{label}: no rows to fit")));
        }
        Ok(StreamPair {
            proprio: StreamStats::from_acc(&self.proprio, &format!("{label} proprio")),
            action: StreamStats::from_acc(&self.action, &format!("{label} action")),
        })
    }
}

/// Fixed-size chunks accumulated in parallel, merged left to right, so the
/// result does not depend on the thread count.
fn accumulate<'a>(samples: impl Fn(&'a TrainingSample) -> bool + Sync, all: &'a [TrainingSample]) -> Accs {
    let parts: Vec<Accs> = all
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut a = Accs::default();
            chunk.iter().filter(|s| samples(s)).for_each(|s| a.add(s));
            a
        })
        .collect();
    let mut total = Accs::default();
    for p in &parts {
        total.merge(p);
    }
    total
}

pub fn fit_stats(samples: &[TrainingSample], mode: NormMode) -> Result<NormStats> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples to fit statistics, got {}",
            samples.len()
        )));
    }
    let unified = accumulate(|_| true, samples).finish("unified")?;
    let per_domain = match mode {
        NormMode::Unified => None,
        NormMode::PerDomain => {
            let fit = |d: Domain| -> Result<StreamPair> {
                if !samples.iter().any(|s| s.domain == d) {
                    return Err(Error::EmptyDomain(format!("per-domain statistics need {d} samples")));
                }
                accumulate(|s| s.domain == d, samples).finish(&d.to_string())
            };
            Some(PerDomainStats {
                human: fit(Domain::Human)?,
                robot: fit(Domain::Robot)?,
            })
        }
    };
    Ok(NormStats {
        mode,
        unified,
        per_domain,
        std_convention: "population".into(),
        epsilon: STD_EPSILON,
        excludes_padded_actions: true,
        source_sha256: None,
    })
}

impl NormStats {
    pub fn select(&self, domain: Domain) -> &StreamPair {
        match (&self.per_domain, self.mode) {
            (Some(pd), NormMode::PerDomain) => match domain {
                Domain::Human => &pd.human,
                Domain::Robot => &pd.robot,
            },
            _ => &self.unified,
        }
    }

    pub fn normalize(&self, values: &[f64], stream: Stream, domain: Domain) -> Result<Vec<f64>> {
        let st = self.select(domain).stream(stream);
        check_dim(values)?;
        Ok(values
            .iter()
            .enumerate()
            .map(|(i, v)| (v - st.mean[i % ROW_DIM]) / st.std[i % ROW_DIM])
            .collect())
    }

    pub fn denormalize(&self, values: &[f64], stream: Stream, domain: Domain) -> Result<Vec<f64>> {
        let st = self.select(domain).stream(stream);
        check_dim(values)?;
        Ok(values
            .iter()
            .enumerate()
            .map(|(i, v)| v * st.std[i % ROW_DIM] + st.mean[i % ROW_DIM])
            .collect())
    }

    /// Normalizes every row of a sample with its own domain's statistics.
    pub fn normalize_sample(&self, s: &TrainingSample) -> Result<TrainingSample> {
        let apply = |rows: &[Row], stream| -> Result<Vec<Row>> {
            rows.iter()
                .map(|r| {
                    let v = self.normalize(r, stream, s.domain)?;
                    Ok(std::array::from_fn(|i| v[i]))
                })
                .collect()
        };
        Ok(TrainingSample {
            proprio: apply(&s.proprio, Stream::Proprio)?,
            action: apply(&s.action, Stream::Action)?,
            ..s.clone()
        })
    }
}

/// Accepts one row or several rows stacked back to back.
fn check_dim(values: &[f64]) -> Result<()> {
    if values.is_empty() || values.len() % ROW_DIM != 0 {
        return Err(Error::Dimension {
            expected: ROW_DIM,
            actual: values.len(),
        });
    }
    Ok(())
}
