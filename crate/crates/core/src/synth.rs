//! Synthetic low-rank data, train/test masks, and recovery metrics.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, ImputeError, Result};
use crate::model::{FactorModel, DEFAULT_RANK_TOL, NULL_COMPONENT_TOL};
use crate::priors::{draw_factor, PriorSet};
use crate::solver::{solve, SolveConfig};
use crate::tensor::{Dims, Mask3, Mode, Tensor3};

/// Recovery errors at or below this level are reported as this value.
pub const EXACT_RECOVERY_DB: f64 = -300.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    /// Additive white noise at the given per-entry SNR; `+inf` means noiseless.
    Gaussian { snr_db: f64 },
    /// Poisson counts with `mean(X) = mean_level`.
    Poisson { mean_level: f64 },
}

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub dims: Dims,
    pub true_rank: usize,
    pub family: Family,
    /// Column covariances for the Gaussian factor draws. Ignored for Poisson data.
    pub prior: PriorSet,
    pub seed: u64,
}

impl SynthSpec {
    pub fn gaussian(dims: Dims, true_rank: usize, snr_db: f64, seed: u64) -> Self {
        Self {
            dims,
            true_rank,
            family: Family::Gaussian { snr_db },
            prior: PriorSet::identity(dims.0, dims.1, dims.2),
            seed,
        }
    }

    pub fn poisson(dims: Dims, true_rank: usize, mean_level: f64, seed: u64) -> Self {
        Self {
            dims,
            true_rank,
            family: Family::Poisson { mean_level },
            prior: PriorSet::identity(dims.0, dims.1, dims.2),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.true_rank == 0 {
            return input_err("true rank must be at least 1");
        }
        if self.dims.0 == 0 || self.dims.1 == 0 || self.dims.2 == 0 {
            return input_err("dimensions must be positive");
        }
        if self.prior.dims() != self.dims {
            return input_err("prior dims do not match tensor dims");
        }
        match self.family {
            Family::Gaussian { snr_db } if snr_db.is_nan() || snr_db == f64::NEG_INFINITY => {
                input_err(format!("invalid SNR {snr_db}"))
            }
            Family::Poisson { mean_level } if !(mean_level > 0.0) || !mean_level.is_finite() => {
                input_err(format!("mean level must be positive, got {mean_level}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub z: Tensor3,
    pub x_true: Tensor3,
    pub model_true: FactorModel,
}

pub fn generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = spec.true_rank;
    let (m, n, p) = spec.dims;
    match spec.family {
        Family::Gaussian { snr_db } => {
            let a = draw_factor(&mut rng, &spec.prior.a, r)?;
            let b = draw_factor(&mut rng, &spec.prior.b, r)?;
            let c = draw_factor(&mut rng, &spec.prior.c, r)?;
            let model = FactorModel::new(a, b, c)?;
            let x = model.reconstruct();
            let z = if snr_db == f64::INFINITY {
                x.clone()
            } else {
                let power = x.frobenius_sq(None)? / x.len() as f64;
                let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
                let noise = Normal::new(0.0, sigma).map_err(|e| ImputeError::Input(e.to_string()))?;
                Tensor3::from_vec(
                    x.dims(),
                    x.values().iter().map(|v| v + noise.sample(&mut rng)).collect(),
                )?
            };
            Ok(Synthetic {
                z,
                x_true: x,
                model_true: model,
            })
        }
        Family::Poisson { mean_level } => {
            let mut draw = |rows: usize| {
                DMatrix::from_fn(rows, r, |_, _| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v.abs()
                })
            };
            let (mut a, mut b, mut c) = (draw(m), draw(n), draw(p));
            let raw = FactorModel::new(a.clone(), b.clone(), c.clone())?.reconstruct();
            let mean = raw.values().iter().sum::<f64>() / raw.len() as f64;
            let k = (mean_level / mean).cbrt();
            a *= k;
            b *= k;
            c *= k;
            let model = FactorModel::new(a, b, c)?;
            let x = model.reconstruct();
            let counts = x
                .values()
                .iter()
                .map(|&mean| {
                    if mean > 0.0 {
                        Poisson::new(mean)
                            .map(|d| d.sample(&mut rng))
                            .map_err(|e| ImputeError::Input(e.to_string()))
                    } else {
                        Ok(0.0)
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(Synthetic {
                z: Tensor3::from_vec(x.dims(), counts)?,
                x_true: x,
                model_true: model,
            })
        }
    }
}

/// Splits all cells into train and test. The test set holds
/// `floor(fraction * MNP)` cells drawn uniformly without replacement, plus every
/// cell of `reserve_slice` when given.
pub fn random_mask(
    dims: Dims,
    missing_fraction: f64,
    seed: u64,
    reserve_slice: Option<(Mode, usize)>,
) -> Result<(Mask3, Mask3)> {
    if !(0.0..1.0).contains(&missing_fraction) {
        return input_err(format!("missing fraction must be in [0, 1), got {missing_fraction}"));
    }
    let total = dims.0 * dims.1 * dims.2;
    let held = (missing_fraction * total as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = vec![0u8; total];
    for i in sample(&mut rng, total, held) {
        test[i] = 1;
    }
    let mut test = Mask3::from_vec(dims, test)?;
    if let Some((mode, index)) = reserve_slice {
        let extent = mode.extent(dims);
        if index >= extent {
            return Err(ImputeError::Bounds { index, extent });
        }
        for p in 0..dims.2 {
            for n in 0..dims.1 {
                for m in 0..dims.0 {
                    let hit = match mode {
                        Mode::Row => m == index,
                        Mode::Column => n == index,
                        Mode::Tube => p == index,
                    };
                    if hit {
                        test.set(m, n, p, true);
                    }
                }
            }
        }
    }
    Ok((test.complement(), test))
}

/// `10 log10(|(estimate - Z) ∘ test|^2 / |Z ∘ test|^2)`, floored at [`EXACT_RECOVERY_DB`].
pub fn recovery_error_db(estimate: &Tensor3, z: &Tensor3, test: &Mask3) -> Result<f64> {
    if test.count() == 0 {
        return input_err("test mask is empty");
    }
    let err = estimate.sub(z)?.frobenius_sq(Some(test))?;
    let signal = z.frobenius_sq(Some(test))?;
    if err == 0.0 {
        return Ok(EXACT_RECOVERY_DB);
    }
    if signal == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((10.0 * (err / signal).log10()).max(EXACT_RECOVERY_DB))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mu: f64,
    pub seed: u64,
    pub error_db: f64,
    pub effective_rank: usize,
    /// `|X̂|_F` of the full estimate.
    pub estimate_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest relative cost increase seen in the run (nonpositive when descent held).
    pub worst_ascent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub mu: f64,
    pub mean_error_db: f64,
    pub mean_rank: f64,
    pub n_seeds: usize,
    pub runs: Vec<EvalReport>,
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (l, h) = (lo.log10(), hi.log10());
            (0..count)
                .map(|i| {
                    if i + 1 == count {
                        hi
                    } else {
                        10f64.powf(l + (h - l) * i as f64 / (count - 1) as f64)
                    }
                })
                .collect()
        }
    }
}

/// Solver seed for grid point `mu_index` and user seed `seed` (SplitMix64 mixing).
pub fn derive_seed(seed: u64, mu_index: usize) -> u64 {
    let mut x = seed ^ (mu_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Fits the configured solver at every `(mu, seed)` pair and averages the
/// held-out error (in dB) and effective rank over seeds for each `mu`.
pub fn sweep_mu(
    z: &Tensor3,
    train: &Mask3,
    test: &Mask3,
    priors: &PriorSet,
    cfg: &SolveConfig,
    mu_grid: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepPoint>> {
    if mu_grid.is_empty() || seeds.is_empty() {
        return input_err("sweep needs at least one mu value and one seed");
    }
    let floor = NULL_COMPONENT_TOL * z.frobenius_sq(Some(train))?.sqrt();
    let jobs: Vec<(usize, f64, u64)> = mu_grid
        .iter()
        .enumerate()
        .flat_map(|(i, &mu)| seeds.iter().map(move |&s| (i, mu, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, mu, seed)| {
            let mut run_cfg = cfg.clone();
            run_cfg.mu = mu;
            run_cfg.seed = derive_seed(seed, i);
            let annotate = |e: ImputeError| match e {
                ImputeError::Divergence(msg) => {
                    ImputeError::Divergence(format!("mu = {mu}, seed = {seed}: {msg}"))
                }
                ImputeError::Conditioning(msg) => {
                    ImputeError::Conditioning(format!("mu = {mu}, seed = {seed}: {msg}"))
                }
                ImputeError::Input(msg) => ImputeError::Input(format!("mu = {mu}, seed = {seed}: {msg}")),
                other => other,
            };
            let report = solve(z, train, priors, &run_cfg).map_err(annotate)?;
            Ok(EvalReport {
                mu,
                seed,
                error_db: recovery_error_db(&report.estimate, z, test)?,
                effective_rank: report.final_model.effective_rank_above(DEFAULT_RANK_TOL, floor),
                estimate_norm: report.estimate.frobenius_sq(None)?.sqrt(),
                iterations: report.iterations,
                converged: report.converged,
                worst_ascent: report.worst_ascent(),
            })
        })
        .collect::<Result<Vec<EvalReport>>>()?;
    Ok(mu_grid
        .iter()
        .zip(runs.chunks(seeds.len()))
        .map(|(&mu, chunk)| {
            let k = chunk.len() as f64;
            SweepPoint {
                mu,
                mean_error_db: chunk.iter().map(|r| r.error_db).sum::<f64>() / k,
                mean_rank: chunk.iter().map(|r| r.effective_rank as f64).sum::<f64>() / k,
                n_seeds: chunk.len(),
                runs: chunk.to_vec(),
            }
        })
        .collect())
}
