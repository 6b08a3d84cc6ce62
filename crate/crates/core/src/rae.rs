//! Regularized autoencoder for several latents.
//!
//! An encoder maps each standardized row to `n` latents and one noise value
//! per measurement. Measurement `i` is rebuilt by its own decoder from the
//! latents it depends on plus its noise value. Per row, the objective is
//!
//! ```text
//! loglik = sum_i [ ln phi(e_i) - ln |d f_i / d e_i| ] - sum_i (f_i - x_i)^2 / (2 tau^2)
//! loss   = -mean(loglik) + beta * KL(N(mean, cov) || N(0, I)) + gamma * mean(sum_ik |d f_i / d z_k|)
//! ```
//!
//! where the KL uses the sample moments of the concatenated encoder output
//! and every derivative is an exact forward-mode tangent through a decoder.
//! Reconstruction targets are the standardized measurements.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::datagen::SupportMatrix;
use crate::diff::nets::{init_uniform, mlp, tangent, MlpNodes};
use crate::diff::{Activation, AdamConfig, AdamState, LayerId, LayerShape, Node, ParameterVector, Program, ProgramBuilder};
use crate::error::{Error, Result};
use crate::matrix::{spd_log_det, symmetric_eigen, Matrix};
use crate::rng::{derive_seed, index_below, Stream};
use crate::train::{evaluation_chunks, select_best, RestartRecord, Standardization};

/// Default floor on `|d f_i / d e_i|` before taking its log.
pub const JACOBIAN_FLOOR: f64 = 1e-8;
/// Ridge added to the sample covariance inside the KL term.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RaeConfig {
    /// Latent count.
    pub n: usize,
    /// Observed columns.
    pub m: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Weight of the independence penalty.
    pub beta: f64,
    /// Weight of the decoder Jacobian sparsity penalty.
    pub gamma: f64,
    /// Reconstruction tolerance.
    pub tau: f64,
    /// Floor on each decoder's noise slope inside the log.
    pub jacobian_floor: f64,
    /// Start the linear latent path at the leading principal directions.
    pub principal_init: bool,
    /// Latents each decoder reads; `None` feeds every latent to every decoder.
    pub support: Option<SupportMatrix>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl RaeConfig {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            encoder_hidden: vec![64; 3],
            decoder_hidden: vec![32; 2],
            beta: 1.0,
            gamma: 0.0,
            tau: 0.05,
            jacobian_floor: JACOBIAN_FLOOR,
            principal_init: true,
            support: None,
            epochs: 50,
            batch_size: 256,
            learning_rate: 1e-3,
            restarts: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::invalid("need at least one latent and one observed column"));
        }
        if !(self.beta >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::invalid("penalty weights must be >= 0"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("reconstruction tolerance must be positive"));
        }
        if !(self.jacobian_floor > 0.0) || !self.jacobian_floor.is_finite() {
            return Err(Error::invalid("noise slope floor must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("need at least one restart"));
        }
        if self.encoder_hidden.iter().chain(&self.decoder_hidden).any(|&h| h == 0) {
            return Err(Error::invalid("hidden layers must be non-empty"));
        }
        if self.batch_size < self.n + self.m + 1 {
            return Err(Error::invalid(format!(
                "batch size {} too small for a {}-column covariance",
                self.batch_size,
                self.n + self.m
            )));
        }
        if let Some(f) = &self.support {
            if f.measurements() != self.m || f.latents() != self.n {
                return Err(Error::shape(format!(
                    "support is {}x{}, expected {}x{}",
                    f.measurements(),
                    f.latents(),
                    self.m,
                    self.n
                )));
            }
        }
        Ok(())
    }

    /// Latents read by decoder `i`.
    pub fn decoder_inputs(&self, i: usize) -> Vec<usize> {
        match &self.support {
            Some(f) => f.row_support(i),
            None => (0..self.n).collect(),
        }
    }

    fn encoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.m];
        s.extend(&self.encoder_hidden);
        s.push(self.n + self.m);
        s
    }

    fn decoder_sizes(&self, i: usize) -> Vec<usize> {
        let mut s = vec![self.decoder_inputs(i).len() + 1];
        s.extend(&self.decoder_hidden);
        s.push(1);
        s
    }
}

/// Handles on one decoder's nodes.
#[derive(Clone, Debug)]
struct DecoderNodes {
    output: Node,
    /// `d f_i / d e_i`, one entry per row.
    noise_slope: Node,
}

/// Nodes of the decoder bank and the per-row terms built on it.
#[derive(Clone, Debug)]
struct BankNodes {
    decoders: Vec<DecoderNodes>,
    loglik: Node,
    sparsity: Option<Node>,
}

/// Appends every decoder to `b`. `x` is the standardized target, `z` the
/// `B x n` latents and `e` the `B x m` noise values.
fn decoder_bank(b: &mut ProgramBuilder, x: Node, z: Node, e: Node, config: &RaeConfig, sparsity: bool) -> BankNodes {
    let latent_cols: Vec<Node> = (0..config.n).map(|k| b.columns(z, k, 1)).collect();
    let mut decoders = Vec::with_capacity(config.m);
    let mut row_terms: Option<Node> = None;
    let mut residuals: Option<Node> = None;
    let mut slopes: Option<Node> = None;
    let accumulate = |b: &mut ProgramBuilder, acc: &mut Option<Node>, v: Node| {
        *acc = Some(match *acc {
            Some(a) => b.add(a, v),
            None => v,
        });
    };
    for i in 0..config.m {
        let inputs = config.decoder_inputs(i);
        let e_i = b.columns(e, i, 1);
        let mut parts: Vec<Node> = inputs.iter().map(|&k| latent_cols[k]).collect();
        parts.push(e_i);
        let input = b.concat(parts);
        let net: MlpNodes = mlp(b, input, &config.decoder_sizes(i), Activation::Tanh, Activation::Identity);

        let noise_dir = b.unit_direction(input, inputs.len());
        let noise_slope = tangent(b, &net, noise_dir);
        let mag = b.abs(noise_slope);
        let floored = b.clamp_min(mag, config.jacobian_floor);
        let log_jac = b.log(floored);
        let e_sq = b.square(e_i);
        let log_prior = b.scale(e_sq, -0.5);
        let log_prior = b.offset(log_prior, -HALF_LN_2PI);
        let term = b.sub(log_prior, log_jac);
        accumulate(b, &mut row_terms, term);

        let x_i = b.columns(x, i, 1);
        let gap = b.sub(net.output, x_i);
        let sq = b.square(gap);
        accumulate(b, &mut residuals, sq);

        if sparsity {
            for col in 0..inputs.len() {
                let dir = b.unit_direction(input, col);
                let t = tangent(b, &net, dir);
                let a = b.abs(t);
                accumulate(b, &mut slopes, a);
            }
        }
        decoders.push(DecoderNodes {
            output: net.output,
            noise_slope,
        });
    }
    let residuals = residuals.expect("at least one measurement");
    let penalty = b.scale(residuals, -1.0 / (2.0 * config.tau * config.tau));
    let rows = b.add(row_terms.expect("at least one measurement"), penalty);
    let loglik = b.mean(rows);
    let sparsity = if sparsity {
        Some(match slopes {
            Some(s) => b.mean(s),
            // Every decoder ignores the latents.
            None => b.scale(loglik, 0.0),
        })
    } else {
        None
    };
    BankNodes {
        decoders,
        loglik,
        sparsity,
    }
}

struct EncoderNodes {
    output: Node,
    layers: Vec<LayerId>,
    linear: LayerId,
}

/// An MLP whose latent outputs also get a bias-free linear path from the
/// input.
fn encoder(b: &mut ProgramBuilder, x: Node, config: &RaeConfig) -> EncoderNodes {
    let net: MlpNodes = mlp(b, x, &config.encoder_sizes(), Activation::Tanh, Activation::Identity);
    let linear = b.layer(config.m, config.n, false);
    let direct = b.affine(x, linear);
    let z = b.columns(net.output, 0, config.n);
    let z = b.add(z, direct);
    let e = b.columns(net.output, config.n, config.m);
    let output = b.concat(vec![z, e]);
    let mut layers = net.layers;
    layers.push(linear);
    EncoderNodes { output, layers, linear }
}

/// Starts each latent as a unit-variance principal direction of the
/// standardized training rows: with a known support, the leading direction
/// of the measurements that read that latent, otherwise the `k`-th leading
/// direction of all measurements. The MLP's latent outputs start at zero.
fn principal_init(params: &mut ParameterVector, objective: &RaeObjective, config: &RaeConfig, x_std: &Matrix) -> Result<()> {
    let (rows, m) = x_std.shape();
    let mut corr = x_std.t_matmul(x_std);
    for v in corr.as_mut_slice() {
        *v /= (rows.max(2) - 1) as f64;
    }
    let p = params.as_mut_slice();
    let last = objective.last_encoder_layer;
    for k in 0..config.n {
        for j in 0..last.in_dim {
            p[last.weight_range().start + k * last.in_dim + j] = 0.0;
        }
        p[last.bias_range().start + k] = 0.0;
    }
    let linear = objective.linear;
    let w = &mut p[linear.weight_range()];
    w.iter_mut().for_each(|v| *v = 0.0);
    match &config.support {
        Some(f) => {
            for k in 0..config.n {
                let cols: Vec<usize> = (0..m).filter(|&i| f.get(i, k)).collect();
                if cols.is_empty() {
                    continue;
                }
                let mut sub = Matrix::zeros(cols.len(), cols.len());
                for (a, &i) in cols.iter().enumerate() {
                    for (b, &j) in cols.iter().enumerate() {
                        sub[(a, b)] = corr[(i, j)];
                    }
                }
                let (values, vectors) = symmetric_eigen(&sub)?;
                let s = 1.0 / libm::sqrt(values[0].max(1e-12));
                for (a, &i) in cols.iter().enumerate() {
                    w[k * m + i] = vectors[(a, 0)] * s;
                }
            }
        }
        None => {
            let (values, vectors) = symmetric_eigen(&corr)?;
            for k in 0..config.n.min(m) {
                let s = 1.0 / libm::sqrt(values[k].max(1e-12));
                for j in 0..m {
                    w[k * m + j] = vectors[(j, k)] * s;
                }
            }
        }
    }
    Ok(())
}

/// The full training objective as one program over standardized rows.
#[derive(Clone, Debug)]
pub struct RaeObjective {
    pub program: Program,
    pub loglik: Node,
    pub kl: Node,
    pub sparsity: Option<Node>,
    noise_slopes: Vec<Node>,
    jacobian_floor: f64,
    linear: LayerShape,
    last_encoder_layer: LayerShape,
    /// Parameters owned by the encoder; decoder parameters follow.
    pub encoder_params: usize,
}

impl RaeObjective {
    pub fn new(config: &RaeConfig) -> Result<Self> {
        config.validate()?;
        let mut b = ProgramBuilder::new();
        let x = b.input(Some(config.m));
        let enc = encoder(&mut b, x, config);
        let encoder_params: usize = enc.layers.iter().map(|&l| b.layer_shape(l).param_count()).sum();
        let linear = b.layer_shape(enc.linear);
        let last_encoder_layer = b.layer_shape(enc.layers[enc.layers.len() - 2]);
        let z = b.columns(enc.output, 0, config.n);
        let e = b.columns(enc.output, config.n, config.m);
        let bank = decoder_bank(&mut b, x, z, e, config, config.gamma > 0.0);

        let cov = b.covariance(enc.output, COVARIANCE_RIDGE);
        let tr = b.trace(cov);
        let mu = b.col_mean(enc.output);
        let mu_sq = b.square(mu);
        let mu_norm = b.sum(mu_sq);
        let log_det = b.log_det(cov);
        let kl = b.add(tr, mu_norm);
        let kl = b.sub(kl, log_det);
        let kl = b.offset(kl, -((config.n + config.m) as f64));
        let kl = b.scale(kl, 0.5);

        let mut loss = b.scale(bank.loglik, -1.0);
        let weighted_kl = b.scale(kl, config.beta);
        loss = b.add(loss, weighted_kl);
        if let Some(s) = bank.sparsity {
            let weighted = b.scale(s, config.gamma);
            loss = b.add(loss, weighted);
        }
        Ok(Self {
            program: b.finish(loss)?,
            loglik: bank.loglik,
            kl,
            sparsity: bank.sparsity,
            noise_slopes: bank.decoders.iter().map(|d| d.noise_slope).collect(),
            jacobian_floor: config.jacobian_floor,
            linear,
            last_encoder_layer,
            encoder_params,
        })
    }

    fn check(&self, x_std: &Matrix) -> Result<()> {
        if x_std.rows() < 2 {
            return Err(Error::invalid("a batch needs at least two rows"));
        }
        Ok(())
    }

    pub fn loss(&self, x_std: &Matrix, params: &ParameterVector) -> Result<f64> {
        self.check(x_std)?;
        let v = self.program.forward_scalar(params, core::slice::from_ref(x_std))?;
        finite(v)
    }

    pub fn loss_and_gradient(&self, x_std: &Matrix, params: &ParameterVector) -> Result<(f64, ParameterVector)> {
        self.check(x_std)?;
        let (v, g) = self.program.value_and_gradient(params, core::slice::from_ref(x_std))?;
        Ok((finite(v)?, g))
    }

    /// Loss and its parts on one batch.
    pub fn breakdown(&self, x_std: &Matrix, params: &ParameterVector) -> Result<LossBreakdown> {
        self.check(x_std)?;
        let eval = self.program.evaluate(params, core::slice::from_ref(x_std))?;
        Ok(LossBreakdown {
            loss: eval.value(self.program.output()).value(),
            loglik: eval.value(self.loglik).value(),
            kl: eval.value(self.kl).value(),
            sparsity: self.sparsity.map_or(0.0, |s| eval.value(s).value()),
            clamped: self
                .noise_slopes
                .iter()
                .map(|&n| count_clamped(eval.value(n), self.jacobian_floor))
                .sum(),
        })
    }

    /// Mean breakdown over consecutive chunks of `chunk` rows.
    pub fn chunked(&self, x_std: &Matrix, params: &ParameterVector, chunk: usize) -> Result<LossBreakdown> {
        let chunks = evaluation_chunks(x_std.rows(), chunk);
        let mut acc = LossBreakdown::default();
        for range in &chunks {
            let idx: Vec<usize> = range.clone().collect();
            let part = self.breakdown(&x_std.select_rows(&idx), params)?;
            acc.loss += part.loss;
            acc.loglik += part.loglik;
            acc.kl += part.kl;
            acc.sparsity += part.sparsity;
            acc.clamped += part.clamped;
        }
        let c = chunks.len() as f64;
        acc.loss /= c;
        acc.loglik /= c;
        acc.kl /= c;
        acc.sparsity /= c;
        Ok(acc)
    }
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss(format!("autoencoder loss {v}")))
    }
}

fn count_clamped(slopes: &Matrix, floor: f64) -> usize {
    slopes.as_slice().iter().filter(|v| v.abs() < floor).count()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub loss: f64,
    pub loglik: f64,
    pub kl: f64,
    pub sparsity: f64,
    /// Noise slopes that hit the floor.
    pub clamped: usize,
}

/// The decoders on their own, with their slice of the parameters.
#[derive(Clone, Debug)]
pub struct DecoderBank {
    pub config: RaeConfig,
    pub params: ParameterVector,
}

impl DecoderBank {
    /// Decoder parameters laid out as in the full model, after the encoder.
    pub fn new(config: RaeConfig, params: ParameterVector) -> Result<Self> {
        config.validate()?;
        let expected = bank_program(&config, false)?.0.param_count();
        if params.len() != expected {
            return Err(Error::shape(format!(
                "decoders need {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    fn inputs(&self, x_std: &Matrix, z: &Matrix, e: &Matrix) -> Result<[Matrix; 3]> {
        let (n, m) = (self.config.n, self.config.m);
        if x_std.cols() != m || z.cols() != n || e.cols() != m {
            return Err(Error::shape(format!(
                "expected {m} measurement, {n} latent and {m} noise columns, got {}, {} and {}",
                x_std.cols(),
                z.cols(),
                e.cols()
            )));
        }
        if x_std.rows() != z.rows() || z.rows() != e.rows() {
            return Err(Error::shape("row counts differ"));
        }
        Ok([x_std.clone(), z.clone(), e.clone()])
    }

    /// Reconstructed measurements, `B x m`.
    pub fn decode(&self, z: &Matrix, e: &Matrix) -> Result<Matrix> {
        let x = Matrix::zeros(z.rows(), self.config.m);
        let (program, bank) = bank_program(&self.config, false)?;
        let eval = program.evaluate(&self.params, &self.inputs(&x, z, e)?)?;
        let mut out = Matrix::zeros(z.rows(), self.config.m);
        for (i, d) in bank.decoders.iter().enumerate() {
            let col = eval.value(d.output);
            for r in 0..z.rows() {
                out[(r, i)] = col[(r, 0)];
            }
        }
        Ok(out)
    }

    /// `d f_i / d e_i` for every row and measurement.
    pub fn noise_slopes(&self, z: &Matrix, e: &Matrix) -> Result<Matrix> {
        let x = Matrix::zeros(z.rows(), self.config.m);
        let (program, bank) = bank_program(&self.config, false)?;
        let eval = program.evaluate(&self.params, &self.inputs(&x, z, e)?)?;
        let mut out = Matrix::zeros(z.rows(), self.config.m);
        for (i, d) in bank.decoders.iter().enumerate() {
            let col = eval.value(d.noise_slope);
            for r in 0..z.rows() {
                out[(r, i)] = col[(r, 0)];
            }
        }
        Ok(out)
    }
}

fn bank_program(config: &RaeConfig, sparsity: bool) -> Result<(Program, BankNodes)> {
    let mut b = ProgramBuilder::new();
    let x = b.input(Some(config.m));
    let z = b.input(Some(config.n));
    let e = b.input(Some(config.m));
    let bank = decoder_bank(&mut b, x, z, e, config, sparsity);
    let out = if sparsity {
        bank.sparsity.expect("sparsity requested")
    } else {
        bank.loglik
    };
    Ok((b.finish(out)?, bank))
}

/// Reconstruction log-likelihood and the number of floored noise slopes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Loglik {
    pub value: f64,
    pub clamped: usize,
}

/// Batch-mean reconstruction log-likelihood of standardized rows `x_std`
/// given encoder outputs `z` and `e`.
pub fn reconstruction_loglik(x_std: &Matrix, z: &Matrix, e: &Matrix, decoders: &DecoderBank) -> Result<Loglik> {
    let (program, bank) = bank_program(&decoders.config, false)?;
    let eval = program.evaluate(&decoders.params, &decoders.inputs(x_std, z, e)?)?;
    Ok(Loglik {
        value: eval.value(bank.loglik).value(),
        clamped: bank
            .decoders
            .iter()
            .map(|d| count_clamped(eval.value(d.noise_slope), decoders.config.jacobian_floor))
            .sum(),
    })
}

/// Batch mean of `sum_ik |d f_i / d z_k|`.
pub fn jacobian_sparsity_penalty(decoders: &DecoderBank, z: &Matrix, e: &Matrix) -> Result<f64> {
    let (program, _) = bank_program(&decoders.config, true)?;
    let x = Matrix::zeros(z.rows(), decoders.config.m);
    program.forward_scalar(&decoders.params, &decoders.inputs(&x, z, e)?)
}

/// `KL(N(mean, cov) || N(0, I))` from the sample moments of `[z, e]`, with
/// `1e-6` added to the covariance diagonal.
pub fn kl_independence_penalty(z: &Matrix, e: &Matrix) -> Result<f64> {
    if z.rows() != e.rows() {
        return Err(Error::shape("latent and noise batches differ in rows"));
    }
    let rows = z.rows();
    let d = z.cols() + e.cols();
    if rows < d + 1 {
        return Err(Error::invalid(format!("need at least {} rows for {d} columns, got {rows}", d + 1)));
    }
    let mut joint = Matrix::zeros(rows, d);
    for r in 0..rows {
        let dst = joint.row_mut(r);
        dst[..z.cols()].copy_from_slice(z.row(r));
        dst[z.cols()..].copy_from_slice(e.row(r));
    }
    let means = joint.column_means();
    let mut cov = Matrix::zeros(d, d);
    for r in 0..rows {
        let row = joint.row(r);
        for a in 0..d {
            for c in 0..d {
                cov[(a, c)] += (row[a] - means[a]) * (row[c] - means[c]);
            }
        }
    }
    let denom = (rows - 1) as f64;
    for a in 0..d {
        for c in 0..d {
            cov[(a, c)] /= denom;
        }
        cov[(a, a)] += COVARIANCE_RIDGE;
    }
    let trace: f64 = (0..d).map(|a| cov[(a, a)]).sum();
    let mu_sq: f64 = means.iter().map(|m| m * m).sum();
    Ok(0.5 * (trace + mu_sq - d as f64 - spd_log_det(&cov)?))
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainedRae {
    pub config: RaeConfig,
    pub params: ParameterVector,
    pub standardization: Standardization,
    pub train_loss: f64,
    pub validation_loss: f64,
    /// Chunked reconstruction log-likelihood on the validation rows.
    pub validation_loglik: f64,
    /// Floored noise slopes seen in the final validation pass.
    pub clamped: usize,
    pub seed: u64,
    pub selected_restart: usize,
    pub restarts: Vec<RestartRecord>,
}

impl TrainedRae {
    pub fn objective(&self) -> Result<RaeObjective> {
        RaeObjective::new(&self.config)
    }

    pub fn decoders(&self) -> Result<DecoderBank> {
        let split = self.objective()?.encoder_params;
        DecoderBank::new(
            self.config.clone(),
            ParameterVector(self.params.as_slice()[split..].to_vec()),
        )
    }

    /// Standardized copy of raw rows.
    pub fn standardize(&self, x: &Matrix) -> Result<Matrix> {
        self.standardization.apply(x)
    }
}

fn encoder_program(config: &RaeConfig) -> Result<Program> {
    let mut b = ProgramBuilder::new();
    let x = b.input(Some(config.m));
    let enc = encoder(&mut b, x, config);
    b.finish(enc.output)
}

/// Latents `B x n` and noise values `B x m` for raw rows `x`.
pub fn encode(model: &TrainedRae, x: &Matrix) -> Result<(Matrix, Matrix)> {
    let (n, m) = (model.config.n, model.config.m);
    if x.cols() != m {
        return Err(Error::shape(format!("model expects {m} columns, got {}", x.cols())));
    }
    let program = encoder_program(&model.config)?;
    let split = program.param_count();
    let params = ParameterVector(model.params.as_slice()[..split].to_vec());
    let eval = program.evaluate(&params, &[model.standardization.apply(x)?])?;
    let out = eval.value(program.output());
    Ok((out.select_cols(0, n), out.select_cols(n, m)))
}

/// Chunked reconstruction log-likelihood of raw rows under `model`, going
/// through [`encode`] and [`reconstruction_loglik`].
pub fn evaluate_loglik(model: &TrainedRae, x: &Matrix) -> Result<Loglik> {
    let decoders = model.decoders()?;
    let x_std = model.standardize(x)?;
    let (z, e) = encode(model, x)?;
    let chunks = evaluation_chunks(x.rows(), model.config.batch_size);
    let mut total = 0.0;
    let mut clamped = 0;
    for range in &chunks {
        let idx: Vec<usize> = range.clone().collect();
        let part = reconstruction_loglik(&x_std.select_rows(&idx), &z.select_rows(&idx), &e.select_rows(&idx), &decoders)?;
        total += part.value;
        clamped += part.clamped;
    }
    Ok(Loglik {
        value: total / chunks.len() as f64,
        clamped,
    })
}

/// A trained restart before selection.
#[derive(Clone, Debug)]
pub struct RaeRestartOutcome {
    pub record: RestartRecord,
    pub params: Option<ParameterVector>,
    pub validation: Option<LossBreakdown>,
}

struct Prepared {
    objective: RaeObjective,
    train_std: Matrix,
    valid_std: Matrix,
}

fn prepare(train: &Matrix, valid: &Matrix, config: &RaeConfig) -> Result<Prepared> {
    config.validate()?;
    if train.rows() == 0 || valid.rows() == 0 {
        return Err(Error::invalid("training and validation data must be non-empty"));
    }
    if train.rows() < config.batch_size {
        return Err(Error::invalid(format!(
            "{} training rows is fewer than the batch size {}",
            train.rows(),
            config.batch_size
        )));
    }
    if valid.rows() < config.n + config.m + 1 {
        return Err(Error::invalid("too few validation rows for the covariance penalty"));
    }
    if train.cols() != config.m || valid.cols() != config.m {
        return Err(Error::shape(format!("data has {} columns, config expects {}", train.cols(), config.m)));
    }
    if !train.is_finite() || !valid.is_finite() {
        return Err(Error::invalid("data contain non-finite values"));
    }
    let standardization = Standardization::fit(train);
    Ok(Prepared {
        objective: RaeObjective::new(config)?,
        train_std: standardization.apply(train)?,
        valid_std: standardization.apply(valid)?,
    })
}

/// Trains restart `index`: epochs of shuffled consecutive batches.
pub fn train_rae_restart(train: &Matrix, valid: &Matrix, config: &RaeConfig, index: usize) -> Result<RaeRestartOutcome> {
    let prep = prepare(train, valid, config)?;
    Ok(run_restart(&prep, config, index))
}

fn run_restart(prep: &Prepared, config: &RaeConfig, index: usize) -> RaeRestartOutcome {
    let seed = derive_seed(config.seed, index as u64);
    let mut params = init_uniform(prep.objective.program.layout(), &mut Stream::new(seed, 0));
    if config.principal_init {
        principal_init(&mut params, &prep.objective, config, &prep.train_std).expect("square correlation matrix");
    }
    let mut shuffle = Stream::new(seed, 1);
    let mut adam = AdamState::new(
        params.len(),
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let rows = prep.train_std.rows();
    let mut order: Vec<usize> = (0..rows).collect();
    let mut diverged = false;
    'epochs: for _ in 0..config.epochs {
        for i in (1..rows).rev() {
            order.swap(i, index_below(&mut shuffle, i + 1));
        }
        for range in evaluation_chunks(rows, config.batch_size) {
            let batch = prep.train_std.select_rows(&order[range]);
            match prep.objective.loss_and_gradient(&batch, &params) {
                Ok((_, g)) if adam.step(&mut params, &g).is_ok() && params.is_finite() => {}
                _ => {
                    diverged = true;
                    break 'epochs;
                }
            }
        }
    }
    let evals = if diverged {
        None
    } else {
        let t = prep.objective.chunked(&prep.train_std, &params, config.batch_size);
        let v = prep.objective.chunked(&prep.valid_std, &params, config.batch_size);
        match (t, v) {
            (Ok(t), Ok(v)) if t.loss.is_finite() && v.loss.is_finite() => Some((t, v)),
            _ => None,
        }
    };
    RaeRestartOutcome {
        record: RestartRecord {
            index,
            seed,
            train_loss: evals.map(|e| e.0.loss),
            validation_loss: evals.map(|e| e.1.loss),
            steps: adam.t as usize,
        },
        params: evals.map(|_| params),
        validation: evals.map(|e| e.1),
    }
}

/// Picks the restart with the lowest validation loss.
pub fn select_rae_restart(
    train: &Matrix,
    valid: &Matrix,
    config: &RaeConfig,
    outcomes: Vec<RaeRestartOutcome>,
) -> Result<TrainedRae> {
    config.validate()?;
    if train.cols() != config.m || valid.cols() != config.m {
        return Err(Error::shape(format!("data has {} columns, config expects {}", train.cols(), config.m)));
    }
    let records: Vec<RestartRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    let best = select_best(&records).ok_or(Error::AllRestartsDiverged(records.len()))?;
    let chosen = &outcomes[best];
    let validation = chosen.validation.expect("selected restart was evaluated");
    let model = TrainedRae {
        config: config.clone(),
        params: chosen.params.clone().expect("selected restart has parameters"),
        standardization: Standardization::fit(train),
        train_loss: chosen.record.train_loss.unwrap_or(f64::NAN),
        validation_loss: validation.loss,
        validation_loglik: validation.loglik,
        clamped: validation.clamped,
        seed: chosen.record.seed,
        selected_restart: best,
        restarts: records,
    };
    Ok(model)
}

/// All restarts in sequence, then selection by validation loss.
pub fn train_rae(train: &Matrix, valid: &Matrix, config: &RaeConfig) -> Result<TrainedRae> {
    let prep = prepare(train, valid, config)?;
    let outcomes = (0..config.restarts).map(|r| run_restart(&prep, config, r)).collect();
    select_rae_restart(train, valid, config, outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::finite_difference_check;
    use crate::rng::standard_normal;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = Stream::new(seed, 0);
        let data = (0..rows * cols).map(|_| standard_normal(&mut rng)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn small_config(n: usize, m: usize) -> RaeConfig {
        let mut c = RaeConfig::new(n, m);
        c.encoder_hidden = vec![6, 5];
        c.decoder_hidden = vec![4];
        c.batch_size = 16;
        c
    }

    /// Linear decoders: layer weights `[latent weights..., noise weight]`, zero bias.
    fn linear_bank(n: usize, m: usize, weights: &[Vec<f64>]) -> DecoderBank {
        let mut c = RaeConfig::new(n, m);
        c.decoder_hidden = vec![];
        let params = weights
            .iter()
            .flat_map(|w| w.iter().copied().chain(core::iter::once(0.0)))
            .collect();
        DecoderBank::new(c, ParameterVector(params)).unwrap()
    }

    #[test]
    fn identity_in_noise_has_zero_log_jacobian() {
        let z = random(10, 1, 1);
        let e = random(10, 2, 2);
        let bank = linear_bank(1, 2, &[vec![0.0, 1.0], vec![0.0, 1.0]]);
        // Exact reconstruction: no residual penalty.
        let ll = reconstruction_loglik(&e, &z, &e, &bank).unwrap();
        let expected: f64 = (0..10)
            .map(|r| (0..2).map(|i| -0.5 * e[(r, i)] * e[(r, i)] - HALF_LN_2PI).sum::<f64>())
            .sum::<f64>()
            / 10.0;
        assert!((ll.value - expected).abs() < 1e-12);
        assert_eq!(ll.clamped, 0);
    }

    #[test]
    fn doubled_noise_costs_log_two_per_measurement() {
        let z = random(8, 1, 3);
        let e = random(8, 2, 4);
        let unit = linear_bank(1, 2, &[vec![0.0, 1.0], vec![0.0, 1.0]]);
        let double = linear_bank(1, 2, &[vec![0.0, 2.0], vec![0.0, 2.0]]);
        let target = double.decode(&z, &e).unwrap();
        let a = reconstruction_loglik(&e, &z, &e, &unit).unwrap().value;
        let b = reconstruction_loglik(&target, &z, &e, &double).unwrap().value;
        assert!((a - b - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn flat_decoder_is_clamped_and_counted() {
        let z = random(5, 1, 5);
        let e = random(5, 1, 6);
        let bank = linear_bank(1, 1, &[vec![1.0, 0.0]]);
        let ll = reconstruction_loglik(&z, &z, &e, &bank).unwrap();
        assert_eq!(ll.clamped, 5);
        let expected = (0..5).map(|r| -0.5 * e[(r, 0)] * e[(r, 0)] - HALF_LN_2PI).sum::<f64>() / 5.0
            - JACOBIAN_FLOOR.ln();
        assert!((ll.value - expected).abs() < 1e-9);
    }

    #[test]
    fn noise_slope_matches_finite_differences() {
        let mut c = small_config(2, 3);
        c.decoder_hidden = vec![5, 4];
        let len = bank_program(&c, false).unwrap().0.param_count();
        let mut rng = Stream::new(9, 0);
        let params = ParameterVector((0..len).map(|_| standard_normal(&mut rng)).collect());
        let bank = DecoderBank::new(c, params).unwrap();
        let z = random(7, 2, 10);
        let e = random(7, 3, 11);
        let slopes = bank.noise_slopes(&z, &e).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = e.clone();
            let mut down = e.clone();
            for r in 0..7 {
                up[(r, i)] += h;
                down[(r, i)] -= h;
            }
            let fu = bank.decode(&z, &up).unwrap();
            let fd = bank.decode(&z, &down).unwrap();
            for r in 0..7 {
                let fdv = (fu[(r, i)] - fd[(r, i)]) / (2.0 * h);
                let rel = (fdv - slopes[(r, i)]).abs() / slopes[(r, i)].abs().max(1e-8);
                assert!(rel < 1e-5, "measurement {i} row {r}: {rel}");
            }
        }
    }

    #[test]
    fn sparsity_examples() {
        let z = random(6, 2, 12);
        let e = random(6, 2, 13);
        let ignores = linear_bank(2, 2, &[vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(jacobian_sparsity_penalty(&ignores, &z, &e).unwrap(), 0.0);
        let three = linear_bank(2, 1, &[vec![3.0, 0.0, 1.0]]);
        assert!((jacobian_sparsity_penalty(&three, &z, &e.select_cols(0, 1)).unwrap() - 3.0).abs() < 1e-12);
        let diagonal = linear_bank(2, 2, &[vec![1.5, 0.0, 1.0], vec![0.0, 1.5, 1.0]]);
        let dense = linear_bank(2, 2, &[vec![1.5, 1.5, 1.0], vec![1.5, 1.5, 1.0]]);
        let pd = jacobian_sparsity_penalty(&diagonal, &z, &e).unwrap();
        let pf = jacobian_sparsity_penalty(&dense, &z, &e).unwrap();
        assert!(pd < pf);
    }

    /// Rows whose sample mean is `mean` and sample covariance is exactly `cov`.
    fn with_moments(mean: &[f64], cov: &Matrix, rows: usize) -> Matrix {
        let d = mean.len();
        let raw = random(rows, d, 21);
        // Whiten the raw sample, then color it with the Cholesky factor.
        let mut centered = raw.clone();
        let mu = raw.column_means();
        for r in 0..rows {
            for j in 0..d {
                centered[(r, j)] -= mu[j];
            }
        }
        let s = centered.t_matmul(&centered).map(|v| v / (rows - 1) as f64);
        let ls = crate::matrix::cholesky(&s).unwrap();
        let lc = crate::matrix::cholesky(cov).unwrap();
        let ls_inv = crate::matrix::spd_inverse(&ls.matmul(&ls.transpose())).unwrap();
        // centered * S^{-1} * L_s gives identity sample covariance.
        let white = centered.matmul(&ls_inv).matmul(&ls);
        let mut out = white.matmul(&lc.transpose());
        for r in 0..rows {
            for j in 0..d {
                out[(r, j)] += mean[j];
            }
        }
        out
    }

    #[test]
    fn kl_closed_forms() {
        let d = 3;
        let eye = Matrix::identity(d);
        let x = with_moments(&[0.0; 3], &eye, 50);
        let kl = kl_independence_penalty(&x.select_cols(0, 1), &x.select_cols(1, 2)).unwrap();
        assert!(kl.abs() < 1e-6, "{kl}");

        let x = with_moments(&[1.0, 0.0, 0.0], &eye, 50);
        let kl = kl_independence_penalty(&x.select_cols(0, 1), &x.select_cols(1, 2)).unwrap();
        assert!((kl - 0.5).abs() < 1e-6, "{kl}");

        let mut cov = Matrix::identity(d);
        cov[(0, 1)] = 0.5;
        cov[(1, 0)] = 0.5;
        let x = with_moments(&[0.0; 3], &cov, 50);
        let kl = kl_independence_penalty(&x.select_cols(0, 1), &x.select_cols(1, 2)).unwrap();
        let expected = -0.5 * (1.0f64 - 0.25).ln();
        assert!((kl - expected).abs() < 1e-5, "{kl} vs {expected}");

        assert!(kl_independence_penalty(&x.select_cols(0, 1).select_rows(&[0, 1, 2]), &x.select_cols(1, 2).select_rows(&[0, 1, 2])).is_err());
    }

    #[test]
    fn kl_program_matches_direct_computation() {
        let c = small_config(2, 3);
        let obj = RaeObjective::new(&c).unwrap();
        let params = init_uniform(obj.program.layout(), &mut Stream::new(4, 0));
        let x = random(16, 3, 5);
        let eval = obj.program.evaluate(&params, core::slice::from_ref(&x)).unwrap();
        let from_program = eval.value(obj.kl).value();
        let model = TrainedRae {
            config: c.clone(),
            params: params.clone(),
            standardization: Standardization::identity(3),
            train_loss: 0.0,
            validation_loss: 0.0,
            validation_loglik: 0.0,
            clamped: 0,
            seed: 0,
            selected_restart: 0,
            restarts: vec![],
        };
        let (z, e) = encode(&model, &x).unwrap();
        let direct = kl_independence_penalty(&z, &e).unwrap();
        assert!((from_program - direct).abs() < 1e-10 * direct.abs().max(1.0));
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        for (seed, gamma, support) in [(1u64, 0.0, false), (2, 0.3, false), (3, 0.3, true)] {
            let mut c = small_config(2, 3);
            c.gamma = gamma;
            c.tau = 0.5;
            if support {
                c.support = Some(SupportMatrix::new(vec![vec![true, false], vec![true, true], vec![false, true]]).unwrap());
            }
            let obj = RaeObjective::new(&c).unwrap();
            let params = init_uniform(obj.program.layout(), &mut Stream::new(seed, 0));
            let x = random(16, 3, seed + 100);
            let err = finite_difference_check(&obj.program, &params, &[x], 1e-6).unwrap();
            assert!(err < 1e-3, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_final_encoder_layer_gives_bias() {
        let c = small_config(1, 2);
        let program = encoder_program(&c).unwrap();
        let mut params = init_uniform(program.layout(), &mut Stream::new(1, 0));
        // The last two layers are the MLP output layer and the linear path.
        let layers = &program.layout().layers;
        let (last, linear) = (layers[layers.len() - 2], layers[layers.len() - 1]);
        for v in &mut params.as_mut_slice()[last.weight_range()] {
            *v = 0.0;
        }
        for v in &mut params.as_mut_slice()[linear.weight_range()] {
            *v = 0.0;
        }
        let bias: Vec<f64> = params.as_slice()[last.bias_range()].to_vec();
        let obj = RaeObjective::new(&c).unwrap();
        let mut full = init_uniform(obj.program.layout(), &mut Stream::new(2, 0));
        full.as_mut_slice()[..params.len()].copy_from_slice(params.as_slice());
        let model = TrainedRae {
            config: c,
            params: full,
            standardization: Standardization::identity(2),
            train_loss: 0.0,
            validation_loss: 0.0,
            validation_loglik: 0.0,
            clamped: 0,
            seed: 0,
            selected_restart: 0,
            restarts: vec![],
        };
        let x = random(4, 2, 3);
        let (z, e) = encode(&model, &x).unwrap();
        for r in 0..4 {
            assert_eq!(z[(r, 0)], bias[0]);
            assert_eq!(e.row(r), &bias[1..]);
        }
        assert_eq!(encode(&model, &x).unwrap(), (z, e));
        assert!(encode(&model, &random(4, 3, 3)).is_err());
    }

    fn toy_data(rows: usize, seed: u64) -> Matrix {
        let z = random(rows, 2, seed);
        let noise = random(rows, 6, seed + 1);
        let mut x = Matrix::zeros(rows, 6);
        for r in 0..rows {
            for i in 0..6 {
                x[(r, i)] = crate::datagen::structural_link(i % 3, z[(r, i / 3)]) + 0.3 * noise[(r, i)];
            }
        }
        x
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let mut c = small_config(2, 6);
        c.epochs = 0;
        c.principal_init = false;
        let train = toy_data(40, 1);
        let valid = toy_data(30, 2);
        let model = train_rae(&train, &valid, &c).unwrap();
        let init = init_uniform(
            RaeObjective::new(&c).unwrap().program.layout(),
            &mut Stream::new(derive_seed(c.seed, 0), 0),
        );
        assert_eq!(model.params, init);
        assert_eq!(model.restarts[0].steps, 0);
    }

    #[test]
    fn training_is_deterministic_and_recorded_loglik_reproduces() {
        let mut c = small_config(2, 6);
        c.epochs = 3;
        c.restarts = 2;
        c.gamma = 0.1;
        let train = toy_data(64, 3);
        let valid = toy_data(40, 4);
        let a = train_rae(&train, &valid, &c).unwrap();
        let b = train_rae(&train, &valid, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(evaluate_loglik(&a, &valid).unwrap().value.to_bits(), a.validation_loglik.to_bits());
        let best = a.restarts.iter().filter_map(|r| r.validation_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.validation_loss, best);
        assert!(a.restarts.iter().all(|r| r.steps == 3 * 4));
    }

    #[test]
    fn config_validation() {
        let mut c = RaeConfig::new(2, 6);
        assert!(c.validate().is_ok());
        c.gamma = -1.0;
        assert!(c.validate().is_err());
        c.gamma = 0.0;
        c.batch_size = 8;
        assert!(c.validate().is_err());
        c.batch_size = 64;
        c.support = Some(SupportMatrix::new(vec![vec![true]]).unwrap());
        assert!(c.validate().is_err());
    }
}
