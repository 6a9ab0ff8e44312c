//! Recovering latent codes from images.
//!
//! Two families: an optimization-based projector (finite-difference gradient
//! descent on pixel MSE) and a learned affine encoder (closed-form ridge
//! regression), plus an iterative residual refinement of the encoder.
//! Both the projector and the refiner keep the best iterate, so every loss
//! trace is non-increasing.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{LatentCode, NormalStream};
use crate::scenegen::{self, GeneratorConstants, RasterImage, PIXELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionMethod {
    Optimize,
    Encode,
    EncodeRefined,
}

impl InversionMethod {
    pub const ALL: [InversionMethod; 3] = [
        InversionMethod::Encode,
        InversionMethod::EncodeRefined,
        InversionMethod::Optimize,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            InversionMethod::Optimize => "optimize",
            InversionMethod::Encode => "encode",
            InversionMethod::EncodeRefined => "encode_refined",
        }
    }
}

impl fmt::Display for InversionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InversionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimize" => Ok(InversionMethod::Optimize),
            "encode" => Ok(InversionMethod::Encode),
            "encode_refined" | "encode-refined" => Ok(InversionMethod::EncodeRefined),
            other => Err(Error::Unknown {
                kind: "inversion method",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub latent: LatentCode,
    /// Best-so-far pixel MSE after each step.
    pub loss_trace: Vec<f64>,
    pub steps_used: usize,
    pub method: InversionMethod,
    pub elapsed_secs: f64,
}

impl InversionResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().unwrap_or(&f64::INFINITY)
    }

    pub fn trace_is_monotone(&self) -> bool {
        self.loss_trace.windows(2).all(|w| w[1] <= w[0])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    pub steps: usize,
    /// Initial step length in latent units.
    pub step_size: f64,
    pub restarts: usize,
    /// Central-difference step.
    pub fd_step: f64,
    pub seed: u64,
    /// Truncation used for random restart initializations.
    pub init_psi: f64,
    /// Stop as soon as the best loss reaches this value.
    pub target_loss: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            steps: 500,
            step_size: 0.05,
            restarts: 3,
            fd_step: 1e-2,
            seed: 0,
            init_psi: 0.5,
            target_loss: 1e-5,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.steps > 0
            && self.step_size > 0.0
            && self.restarts > 0
            && self.fd_step > 0.0
            && self.target_loss >= 0.0;
        if !positive {
            return Err(Error::InvalidConfig(
                "optimizer steps, step_size, restarts and fd_step must be positive".into(),
            ));
        }
        Ok(())
    }
}

const MAX_HALVINGS: usize = 8;
const MAX_STEP: f64 = 1.0;

fn loss_at(z: &[f64], target: &RasterImage, constants: &GeneratorConstants) -> f64 {
    let code = LatentCode::new(z.to_vec()).expect("iterates stay finite");
    scenegen::generate(&code, constants)
        .map(|img| scenegen::mse(&img, target))
        .unwrap_or(f64::INFINITY)
}

fn fd_gradient(z: &[f64], h: f64, target: &RasterImage, constants: &GeneratorConstants) -> Vec<f64> {
    let mut probe = z.to_vec();
    (0..z.len())
        .map(|i| {
            probe[i] = z[i] + h;
            let up = loss_at(&probe, target, constants);
            probe[i] = z[i] - h;
            let down = loss_at(&probe, target, constants);
            probe[i] = z[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Projects `target` into latent space by descent on pixel MSE.
///
/// Restart 0 starts at the origin (the mean of the truncated prior); later
/// restarts start from truncated normal draws seeded by `config.seed`.
/// Gradients are central differences with step `fd_step`. The search
/// direction is the BFGS quasi-Newton direction built from those gradients,
/// falling back to the normalized steepest-descent direction (step length
/// `step_size`, doubled after each accepted step) whenever the curvature
/// estimate is unusable. A step that does not lower the loss is retried with
/// half the length, at most eight times; if every retry fails the restart
/// ends.
pub fn project_optimize(
    target: &RasterImage,
    constants: &GeneratorConstants,
    config: &OptimizeConfig,
) -> Result<InversionResult> {
    config.validate()?;
    let start = Instant::now();
    let dim = constants.dim;
    let mut init_stream = NormalStream::new(config.seed, 0x1417);

    let mut best_z = vec![0.0; dim];
    let mut best_loss = f64::INFINITY;
    let mut best_steps = 0;
    let mut trace = Vec::with_capacity(config.steps + 1);

    for restart in 0..config.restarts {
        let init: Vec<f64> = if restart == 0 {
            vec![0.0; dim]
        } else {
            init_stream
                .normal_vec(dim)
                .into_iter()
                .map(|v| v * config.init_psi)
                .collect()
        };
        let mut run = Descent::new(init, target, constants, config);
        if run.loss < best_loss {
            best_loss = run.loss;
            best_z = run.z.clone();
            best_steps = 0;
        }
        trace.push(best_loss);

        let mut steps = 0;
        while steps < config.steps && run.loss > config.target_loss {
            steps += 1;
            let accepted = run.step();
            if run.loss < best_loss {
                best_loss = run.loss;
                best_z = run.z.clone();
                best_steps = steps;
            }
            trace.push(best_loss);
            if !accepted {
                break;
            }
        }
        if best_loss <= config.target_loss {
            break;
        }
    }

    Ok(InversionResult {
        latent: LatentCode::new(best_z)?,
        loss_trace: trace,
        steps_used: best_steps,
        method: InversionMethod::Optimize,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// State of one projector restart.
struct Descent<'a> {
    z: Vec<f64>,
    loss: f64,
    grad: Vec<f64>,
    /// Inverse-Hessian estimate, row-major `dim x dim`; `None` until the
    /// first accepted step with positive curvature.
    inv_hessian: Option<Vec<f64>>,
    /// Step length for steepest-descent fallback steps.
    eta: f64,
    target: &'a RasterImage,
    constants: &'a GeneratorConstants,
    config: &'a OptimizeConfig,
}

impl<'a> Descent<'a> {
    fn new(
        z: Vec<f64>,
        target: &'a RasterImage,
        constants: &'a GeneratorConstants,
        config: &'a OptimizeConfig,
    ) -> Self {
        let loss = loss_at(&z, target, constants);
        let grad = fd_gradient(&z, config.fd_step, target, constants);
        Descent {
            z,
            loss,
            grad,
            inv_hessian: None,
            eta: config.step_size,
            target,
            constants,
            config,
        }
    }

    /// One accepted-or-rejected step. Returns false when no retry lowered
    /// the loss from a steepest-descent direction.
    fn step(&mut self) -> bool {
        let gnorm = crate::latent::norm(&self.grad);
        if !(gnorm > 0.0) || !gnorm.is_finite() {
            return false;
        }
        let quasi_newton = self.inv_hessian.as_ref().and_then(|h| {
            let d = self.z.len();
            let dir: Vec<f64> = (0..d)
                .map(|i| -(0..d).map(|j| h[i * d + j] * self.grad[j]).sum::<f64>())
                .collect();
            let slope: f64 = dir.iter().zip(&self.grad).map(|(a, b)| a * b).sum();
            (slope < 0.0 && dir.iter().all(|v| v.is_finite())).then_some(dir)
        });
        let (dir, mut length, fallback) = match quasi_newton {
            Some(dir) => (dir, 1.0, false),
            None => (
                self.grad.iter().map(|g| -g / gnorm).collect::<Vec<_>>(),
                self.eta,
                true,
            ),
        };

        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = self.z.iter().zip(&dir).map(|(a, d)| a + length * d).collect();
            let cand_loss = loss_at(&cand, self.target, self.constants);
            if cand_loss < self.loss {
                let cand_grad = fd_gradient(&cand, self.config.fd_step, self.target, self.constants);
                self.update_curvature(&cand, &cand_grad);
                self.z = cand;
                self.loss = cand_loss;
                self.grad = cand_grad;
                if fallback {
                    self.eta = (length * 2.0).min(MAX_STEP);
                }
                return true;
            }
            length *= 0.5;
        }
        if fallback {
            return false;
        }
        // curvature model failed; retry from steepest descent next step
        self.inv_hessian = None;
        true
    }

    fn update_curvature(&mut self, next_z: &[f64], next_grad: &[f64]) {
        let d = self.z.len();
        let s: Vec<f64> = next_z.iter().zip(&self.z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next_grad.iter().zip(&self.grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if !(sy > 1e-12 * yy.sqrt() * crate::latent::norm(&s)) || !(yy > 0.0) {
            return;
        }
        let h = self.inv_hessian.get_or_insert_with(|| {
            let scale = sy / yy;
            let mut m = vec![0.0; d * d];
            for i in 0..d {
                m[i * d + i] = scale;
            }
            m
        });
        let rho = 1.0 / sy;
        let hy: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| h[i * d + j] * y[j]).sum())
            .collect();
        let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
        for i in 0..d {
            for j in 0..d {
                h[i * d + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
            }
        }
    }
}

/// Affine map from flattened pixels to latent coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    /// `dim` rows of `PIXELS` weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub trained_on: usize,
    pub lambda: f64,
}

impl Encoder {
    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.bias.len() {
            return Err(Error::LengthMismatch {
                expected: self.bias.len(),
                actual: self.weights.len(),
            });
        }
        for row in &self.weights {
            if row.len() != PIXELS {
                return Err(Error::LengthMismatch {
                    expected: PIXELS,
                    actual: row.len(),
                });
            }
        }
        let flat = self.weights.iter().flatten().chain(self.bias.iter());
        if let Some(index) = flat.clone().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(())
    }

    fn apply(&self, pixels: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(pixels).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

/// Ridge regression from pixels to latents with an unpenalized intercept.
///
/// Solved in whichever of the primal (`PIXELS x PIXELS`) or dual
/// (`n x n`) form is smaller.
pub fn train_encoder(pairs: &[(RasterImage, LatentCode)], lambda: f64) -> Result<Encoder> {
    let Some((_, first)) = pairs.first() else {
        return Err(Error::NotEnoughSamples { needed: 2, got: 0 });
    };
    let dim = first.dim();
    if pairs.len() < dim + 1 {
        return Err(Error::NotEnoughSamples {
            needed: dim + 1,
            got: pairs.len(),
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("ridge lambda {lambda} must be finite and >= 0")));
    }
    let n = pairs.len();
    let mut mean_x = vec![0.0; PIXELS];
    let mut mean_z = vec![0.0; dim];
    for (img, z) in pairs {
        if z.dim() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                actual: z.dim(),
            });
        }
        for (m, v) in mean_x.iter_mut().zip(img.pixels()) {
            *m += v;
        }
        for (m, v) in mean_z.iter_mut().zip(z.as_slice()) {
            *m += v;
        }
    }
    mean_x.iter_mut().for_each(|m| *m /= n as f64);
    mean_z.iter_mut().for_each(|m| *m /= n as f64);

    let x = DMatrix::from_fn(n, PIXELS, |i, j| pairs[i].0.pixels()[j] - mean_x[j]);
    let zc = DMatrix::from_fn(n, dim, |i, j| pairs[i].1.as_slice()[j] - mean_z[j]);

    // weights: PIXELS x dim
    let w = if n <= PIXELS {
        let mut k = &x * x.transpose();
        for i in 0..n {
            k[(i, i)] += lambda;
        }
        let alpha = solve_spd(k, &zc)?;
        x.transpose() * alpha
    } else {
        let mut g = x.transpose() * &x;
        for i in 0..PIXELS {
            g[(i, i)] += lambda;
        }
        solve_spd(g, &(x.transpose() * &zc))?
    };

    let weights: Vec<Vec<f64>> = (0..dim).map(|d| w.column(d).iter().copied().collect()).collect();
    let bias = (0..dim)
        .map(|d| mean_z[d] - weights[d].iter().zip(&mean_x).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let enc = Encoder {
        weights,
        bias,
        trained_on: n,
        lambda,
    };
    enc.validate()?;
    Ok(enc)
}

fn solve_spd(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    // Singular system (lambda = 0 with collinear pixels): fall back to a
    // tiny diagonal jitter relative to the trace.
    let scale = (a.trace() / n as f64).abs().max(1.0);
    let mut jittered = a;
    for i in 0..n {
        jittered[(i, i)] += 1e-10 * scale;
    }
    jittered
        .cholesky()
        .map(|c| c.solve(b))
        .ok_or_else(|| Error::InvalidConfig("ridge system is not positive definite".into()))
}

pub fn encode(encoder: &Encoder, image: &RasterImage) -> Result<LatentCode> {
    LatentCode::new(encoder.apply(image.pixels()))
}

/// Encoder inversion followed by `rounds - 1` damped residual corrections
/// `z <- z + 0.5 * (E(target) - E(G(z)))`, keeping the best iterate.
pub fn encode_refine(
    encoder: &Encoder,
    image: &RasterImage,
    constants: &GeneratorConstants,
    rounds: usize,
) -> Result<InversionResult> {
    if rounds == 0 {
        return Err(Error::InvalidConfig("refinement needs at least one round".into()));
    }
    let start = Instant::now();
    let encoded_target = encoder.apply(image.pixels());
    let mut z = LatentCode::new(encoded_target.clone())?;
    let mut render = scenegen::generate(&z, constants)?;
    let mut best = (z.clone(), scenegen::mse(&render, image), 1);
    let mut trace = vec![best.1];

    for round in 2..=rounds {
        let encoded_render = encoder.apply(render.pixels());
        let next: Vec<f64> = z
            .as_slice()
            .iter()
            .zip(encoded_target.iter().zip(&encoded_render))
            .map(|(zk, (t, r))| zk + 0.5 * (t - r))
            .collect();
        z = LatentCode::new(next)?;
        render = scenegen::generate(&z, constants)?;
        let loss = scenegen::mse(&render, image);
        if loss < best.1 {
            best = (z.clone(), loss, round);
        }
        trace.push(best.1);
    }

    let method = if rounds == 1 {
        InversionMethod::Encode
    } else {
        InversionMethod::EncodeRefined
    };
    Ok(InversionResult {
        latent: best.0,
        loss_trace: trace,
        steps_used: best.2,
        method,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// Plain encoder inversion wrapped as a result with a one-entry trace.
pub fn encode_result(
    encoder: &Encoder,
    image: &RasterImage,
    constants: &GeneratorConstants,
) -> Result<InversionResult> {
    encode_refine(encoder, image, constants, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{sample_latents, SamplingConfig};

    #[test]
    fn optimize_from_zero_target_is_immediate() {
        let c = GeneratorConstants::shipped();
        let target = scenegen::generate(&LatentCode::zeros(16), &c).unwrap();
        let res = project_optimize(&target, &c, &OptimizeConfig::default()).unwrap();
        assert!(res.final_loss() <= 1e-6);
        assert!(res.trace_is_monotone());
    }

    #[test]
    fn optimize_out_of_domain_is_best_effort() {
        let c = GeneratorConstants::shipped();
        let target = RasterImage::filled(1.0);
        let cfg = OptimizeConfig {
            steps: 40,
            restarts: 2,
            ..Default::default()
        };
        let res = project_optimize(&target, &c, &cfg).unwrap();
        assert!(res.trace_is_monotone());
        assert!(res.final_loss().is_finite());
        assert!(res.final_loss() <= res.loss_trace[0]);
    }

    #[test]
    fn optimize_is_reproducible() {
        let c = GeneratorConstants::shipped();
        let z = &sample_latents(&SamplingConfig::new(4, 1, 0.5, 16).unwrap())[0];
        let target = scenegen::generate(z, &c).unwrap();
        let cfg = OptimizeConfig {
            steps: 30,
            ..Default::default()
        };
        let a = project_optimize(&target, &c, &cfg).unwrap();
        let b = project_optimize(&target, &c, &cfg).unwrap();
        assert_eq!(a.latent, b.latent);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("encode_refined".parse::<InversionMethod>().unwrap(), InversionMethod::EncodeRefined);
        assert!("restyle".parse::<InversionMethod>().is_err());
    }

    #[test]
    fn encoder_needs_enough_pairs() {
        let pairs: Vec<_> = (0..5)
            .map(|_| (RasterImage::filled(0.5), LatentCode::zeros(16)))
            .collect();
        assert!(matches!(
            train_encoder(&pairs, 1e-3),
            Err(Error::NotEnoughSamples { needed: 17, got: 5 })
        ));
    }

    #[test]
    fn refine_zero_rounds_rejected() {
        let pairs: Vec<_> = sample_latents(&SamplingConfig::new(1, 20, 0.5, 16).unwrap())
            .into_iter()
            .map(|z| (scenegen::generate(&z, &GeneratorConstants::shipped()).unwrap(), z))
            .collect();
        let enc = train_encoder(&pairs, 1e-3).unwrap();
        assert!(encode_refine(&enc, &pairs[0].0, &GeneratorConstants::shipped(), 0).is_err());
    }
}
