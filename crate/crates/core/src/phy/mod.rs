//! Monte Carlo estimation of the MPR success probabilities `q_L` over
//! i.i.d. Rayleigh fading.
//!
//! `q_L` is the probability that a common message rate `R` lies strictly
//! below the symmetric rate the decoder supports for `L` simultaneous users.

pub mod lattice;
pub mod rates;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

pub use rates::{
    practical_rate_adjustment, rate_cf, rate_jd, rate_scf, rate_sic, Candidates, Gram, C64,
};

use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};

/// Channels drawn from one random stream. The stream index is the batch
/// index, so results do not depend on how batches are scheduled.
pub const BATCH_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Decoder {
    #[serde(rename = "SIC")]
    Sic,
    #[serde(rename = "CF")]
    Cf,
    #[serde(rename = "SCF")]
    Scf,
    #[serde(rename = "JD")]
    Jd,
}

impl Decoder {
    pub const ALL: [Decoder; 4] = [Decoder::Sic, Decoder::Cf, Decoder::Scf, Decoder::Jd];

    fn index(self) -> usize {
        match self {
            Decoder::Sic => 0,
            Decoder::Cf => 1,
            Decoder::Scf => 2,
            Decoder::Jd => 3,
        }
    }

    fn uses_lattice_codes(self) -> bool {
        matches!(self, Decoder::Cf | Decoder::Scf)
    }
}

impl fmt::Display for Decoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decoder::Sic => "SIC",
            Decoder::Cf => "CF",
            Decoder::Scf => "SCF",
            Decoder::Jd => "JD",
        })
    }
}

impl FromStr for Decoder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SIC" => Ok(Decoder::Sic),
            "CF" | "C&F" => Ok(Decoder::Cf),
            "SCF" => Ok(Decoder::Scf),
            "JD" => Ok(Decoder::Jd),
            other => Err(Error::InvalidArgument(format!(
                "unknown decoder '{other}' (expected SIC, CF, SCF or JD)"
            ))),
        }
    }
}

/// Shaping and coding losses of a practical lattice code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatticeLoss {
    /// Normalized second moment of the shaping lattice (`1/12` for a hypercube).
    pub shaping_g: f64,
    /// Volume-to-noise ratio needed by the coding lattice.
    pub vnr_mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhyConfig {
    pub snr_db: f64,
    /// Receive antennas `K`.
    pub antennas: usize,
    /// Common message rate `R` in bits per complex symbol.
    pub message_rate: f64,
    pub decoder: Decoder,
    pub samples: usize,
    pub seed: u64,
    /// Bound on real and imaginary parts of integer coefficients.
    pub a_radius: u32,
    pub lattice_loss: Option<LatticeLoss>,
}

impl PhyConfig {
    pub fn new(snr_db: f64, antennas: usize, message_rate: f64, decoder: Decoder) -> Self {
        Self {
            snr_db,
            antennas,
            message_rate,
            decoder,
            samples: 10_000,
            seed: 1,
            a_radius: 2,
            lattice_loss: None,
        }
    }

    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !self.snr_db.is_finite() {
            return bad(format!("snr_db must be finite, got {}", self.snr_db));
        }
        if self.antennas < 1 {
            return bad("antennas must be >= 1".into());
        }
        if self.samples < 1 {
            return bad("samples must be >= 1".into());
        }
        if !(self.message_rate >= 0.0) {
            return bad(format!("message rate must be >= 0, got {}", self.message_rate));
        }
        if self.a_radius < 1 && self.decoder.uses_lattice_codes() {
            return bad("a_radius must be >= 1 for CF and SCF".into());
        }
        if let Some(l) = self.lattice_loss {
            if !(l.shaping_g > 0.0 && l.vnr_mu > 0.0) {
                return bad("lattice loss parameters must be positive".into());
            }
        }
        Ok(())
    }
}

/// A `K x L` channel realization; column `l` holds user `l`'s gains.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub h: DMatrix<C64>,
}

/// Draws `K x L` i.i.d. `CN(0, 1)` entries (real and imaginary parts
/// independent with variance 1/2).
pub fn sample_channel<R: Rng + ?Sized>(k: usize, l: usize, rng: &mut R) -> ChannelMatrix {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let h = DMatrix::from_fn(k, l, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * scale, im * scale)
    });
    ChannelMatrix { h }
}

/// Symmetric rates of all four decoders on one channel, indexed like
/// [`Decoder::ALL`]. Entries are `None` where the decoder failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderRates(pub [Option<f64>; 4]);

impl DecoderRates {
    pub fn get(&self, d: Decoder) -> Option<f64> {
        self.0[d.index()]
    }
}

/// Shared per-estimate state: the candidate set depends only on `L`.
pub struct RateEvaluator {
    snr: f64,
    loss: Option<LatticeLoss>,
    cands: Option<Candidates>,
    cands_error: Option<Error>,
}

impl RateEvaluator {
    pub fn new(snr: f64, l: usize, a_radius: u32, loss: Option<LatticeLoss>) -> Self {
        let (cands, cands_error) = match Candidates::new(l, a_radius) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e)),
        };
        Self { snr, loss, cands, cands_error }
    }

    fn candidates(&self) -> Result<&Candidates> {
        self.cands
            .as_ref()
            .ok_or_else(|| self.cands_error.clone().expect("candidate error recorded"))
    }

    fn adjust(&self, d: Decoder, r: f64) -> f64 {
        match self.loss {
            Some(l) if d.uses_lattice_codes() => practical_rate_adjustment(r, l.shaping_g, l.vnr_mu),
            _ => r,
        }
    }

    pub fn rate(&self, d: Decoder, h: &ChannelMatrix) -> Result<f64> {
        let gram = Gram::new(&h.h, self.snr)?;
        self.rate_with_gram(d, &gram)
    }

    fn rate_with_gram(&self, d: Decoder, gram: &Gram) -> Result<f64> {
        let r = match d {
            Decoder::Sic => rates::rate_sic_with(gram)?,
            Decoder::Cf => rates::rate_cf_with(gram, self.candidates()?)?,
            Decoder::Scf => rates::rate_scf_with(gram, self.candidates()?)?,
            Decoder::Jd => rates::rate_jd_with(gram)?,
        };
        Ok(self.adjust(d, r))
    }

    pub fn all_rates(&self, h: &ChannelMatrix) -> DecoderRates {
        match Gram::new(&h.h, self.snr) {
            Ok(gram) => DecoderRates(Decoder::ALL.map(|d| self.rate_with_gram(d, &gram).ok())),
            Err(_) => DecoderRates([None; 4]),
        }
    }
}

/// Monte Carlo estimate of one `q_L`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QEstimate {
    pub decoder: Decoder,
    pub users: usize,
    pub q_hat: f64,
    /// Half-width of the normal-approximation 95% confidence interval.
    pub ci_half_width: f64,
    pub samples: usize,
    pub successes: usize,
    /// Samples where the decoder could not evaluate (counted as failures).
    pub failed: usize,
}

impl QEstimate {
    fn from_counts(decoder: Decoder, users: usize, samples: usize, successes: usize, failed: usize) -> Self {
        let q = successes as f64 / samples as f64;
        Self {
            decoder,
            users,
            q_hat: q,
            ci_half_width: 1.96 * (q * (1.0 - q) / samples as f64).sqrt(),
            samples,
            successes,
            failed,
        }
    }

    /// True when the interval collapsed to a point (`q_hat` is 0 or 1).
    pub fn degenerate_ci(&self) -> bool {
        self.ci_half_width == 0.0
    }
}

fn batch_rng(seed: u64, batch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch as u64);
    rng
}

fn for_each_batch<T: Send>(
    samples: usize,
    seed: u64,
    exec: Execution,
    f: impl Fn(&mut ChaCha8Rng, usize) -> T + Sync + Send,
) -> Vec<T> {
    let batches = samples.div_ceil(BATCH_SIZE);
    map_range(exec, batches, |b| {
        let n = BATCH_SIZE.min(samples - b * BATCH_SIZE);
        f(&mut batch_rng(seed, b), n)
    })
}

fn check_users(l: usize) -> Result<()> {
    if l == 0 {
        Err(Error::InvalidArgument("number of simultaneous users L must be >= 1".into()))
    } else {
        Ok(())
    }
}

/// Estimates `q_L` for `cfg.decoder`.
pub fn estimate_q(cfg: &PhyConfig, l: usize) -> Result<QEstimate> {
    estimate_q_with(cfg, l, Execution::Parallel)
}

pub fn estimate_q_with(cfg: &PhyConfig, l: usize, exec: Execution) -> Result<QEstimate> {
    cfg.validate()?;
    check_users(l)?;
    let eval = RateEvaluator::new(cfg.snr_linear(), l, cfg.a_radius, cfg.lattice_loss);
    if cfg.decoder.uses_lattice_codes() {
        eval.candidates()?;
    }
    let counts = for_each_batch(cfg.samples, cfg.seed, exec, |rng, n| {
        let (mut ok, mut failed) = (0usize, 0usize);
        for _ in 0..n {
            let h = sample_channel(cfg.antennas, l, rng);
            match eval.rate(cfg.decoder, &h) {
                Ok(r) if cfg.message_rate < r => ok += 1,
                Ok(_) => {}
                Err(_) => failed += 1,
            }
        }
        (ok, failed)
    });
    let ok = counts.iter().map(|c| c.0).sum();
    let failed = counts.iter().map(|c| c.1).sum();
    Ok(QEstimate::from_counts(cfg.decoder, l, cfg.samples, ok, failed))
}

/// Estimates `q_L` for every decoder from the same channel draws
/// (`cfg.decoder` is ignored). Returned in the order of [`Decoder::ALL`].
pub fn estimate_q_all(cfg: &PhyConfig, l: usize, exec: Execution) -> Result<Vec<QEstimate>> {
    cfg.validate()?;
    check_users(l)?;
    let eval = RateEvaluator::new(cfg.snr_linear(), l, cfg.a_radius, cfg.lattice_loss);
    eval.candidates()?;
    let counts = for_each_batch(cfg.samples, cfg.seed, exec, |rng, n| {
        let mut c = [(0usize, 0usize); 4];
        for _ in 0..n {
            let h = sample_channel(cfg.antennas, l, rng);
            for (slot, r) in c.iter_mut().zip(eval.all_rates(&h).0) {
                match r {
                    Some(r) if cfg.message_rate < r => slot.0 += 1,
                    Some(_) => {}
                    None => slot.1 += 1,
                }
            }
        }
        c
    });
    Ok(Decoder::ALL
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let ok = counts.iter().map(|c| c[i].0).sum();
            let failed = counts.iter().map(|c| c[i].1).sum();
            QEstimate::from_counts(d, l, cfg.samples, ok, failed)
        })
        .collect())
}

/// Per-channel rates of all decoders for `samples` draws (same streams as
/// the estimators).
pub fn sample_rates(cfg: &PhyConfig, l: usize, exec: Execution) -> Result<Vec<DecoderRates>> {
    cfg.validate()?;
    check_users(l)?;
    let eval = RateEvaluator::new(cfg.snr_linear(), l, cfg.a_radius, cfg.lattice_loss);
    eval.candidates()?;
    Ok(for_each_batch(cfg.samples, cfg.seed, exec, |rng, n| {
        (0..n)
            .map(|_| eval.all_rates(&sample_channel(cfg.antennas, l, rng)))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect())
}

/// Estimates `q_1..q_max_l` for `cfg.decoder`, as an MPR vector.
pub fn estimate_q_vector(cfg: &PhyConfig, max_l: usize, exec: Execution) -> Result<Vec<QEstimate>> {
    (1..=max_l).map(|l| estimate_q_with(cfg, l, exec)).collect()
}
