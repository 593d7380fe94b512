//! The conditional tabular VAE.
//!
//! Encoder `q(z | r_s, r_c)`:
//! `h₁ = ReLU(A(r_s ⊕ r_c))`, `h₂ = ReLU(A(h₁))`, `μ = A(h₂)`,
//! `logvar = A(h₂)`, `σ = exp(½·logvar)`.
//!
//! Decoder `p(r_s | z, r_c)`:
//! `h₁ = ReLU(A(z ⊕ r_c))`, `h₂ = ReLU(A(h₁))`, then one affine head of width
//! `dim(r_s)`. Within that head every continuous column's α slot is squashed by
//! tanh and paired with a learned per-column log-spread; mode-indicator and
//! discrete slots are logits.
//!
//! With conditioning switched off the `⊕ r_c` terms disappear and the model is
//! the unconditional tabular VAE baseline.

mod io;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use io::{from_bytes, load_model, save_model, to_bytes, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use train::{train, EarlyStopping, EpochRecord, StopDecision, TrainConfig, TrainingHistory};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::grad::{affine_forward, xavier_uniform, Matrix, NodeId, ParamSet, Tape};
use crate::schema::Value;
use crate::transform::{argmax, ColumnTransform, OutputBlock, TransformBundle};

/// Hidden widths of the encoder and decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub enc_h1: usize,
    pub enc_h2: usize,
    pub latent_dim: usize,
    pub dec_h1: usize,
    pub dec_h2: usize,
}

impl ArchitectureSpec {
    pub fn new(enc_h1: usize, enc_h2: usize, latent_dim: usize, dec_h1: usize, dec_h2: usize) -> Result<Self> {
        let a = Self {
            enc_h1,
            enc_h2,
            latent_dim,
            dec_h1,
            dec_h2,
        };
        a.validate()?;
        Ok(a)
    }

    /// Named presets 64, 128, 256 and 512: `(w, w/2, w/2, w/2, w)`.
    pub fn preset(width: usize) -> Result<Self> {
        match width {
            64 | 128 | 256 | 512 => {
                let h = width / 2;
                Ok(Self {
                    enc_h1: width,
                    enc_h2: h,
                    latent_dim: h,
                    dec_h1: h,
                    dec_h2: width,
                })
            }
            _ => Err(Error::Argument(format!(
                "unknown architecture preset {width} (expected 64, 128, 256 or 512)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.enc_h1, self.enc_h2, self.latent_dim, self.dec_h1, self.dec_h2].contains(&0) {
            return Err(Error::Argument("architecture widths must be positive".into()));
        }
        Ok(())
    }
}

pub const PRESETS: [usize; 4] = [64, 128, 256, 512];

// Parameter slots, in declaration (and serialization) order.
const ENC1_W: usize = 0;
const ENC1_B: usize = 1;
const ENC2_W: usize = 2;
const ENC2_B: usize = 3;
const MU_W: usize = 4;
const MU_B: usize = 5;
const LOGVAR_W: usize = 6;
const LOGVAR_B: usize = 7;
const DEC1_W: usize = 8;
const DEC1_B: usize = 9;
const DEC2_W: usize = 10;
const DEC2_B: usize = 11;
const OUT_W: usize = 12;
const OUT_B: usize = 13;
const LOG_SPREAD: usize = 14;

const INITIAL_LOG_SPREAD: f64 = -2.302_585_092_994_045_7; // ln 0.1

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    bundle: TransformBundle,
    arch: ArchitectureSpec,
    conditioning: bool,
    params: ParamSet,
}

/// Reconstruction and KL terms of the negated conditional ELBO.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl: f64,
    pub elbo_negated: f64,
}

impl LossBreakdown {
    fn new(reconstruction: f64, kl: f64) -> Self {
        Self {
            reconstruction,
            kl,
            elbo_negated: reconstruction + kl,
        }
    }
}

/// Rows encoded once for training: network inputs plus per-slot targets.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedRows {
    pub rs: Matrix,
    pub rc: Matrix,
    /// α targets of the continuous columns, `rows × n_continuous`.
    alpha: Matrix,
    /// Class index per row for each categorical slot (mode indicators and
    /// discrete columns), in layout order.
    classes: Vec<Vec<usize>>,
}

impl EncodedRows {
    pub fn from_vectors(bundle: &TransformBundle, rs: &[Vec<f64>], rc: &[Vec<f64>]) -> Result<Self> {
        let rs = Matrix::from_vec(rs.len(), bundle.target_dim(), rs.concat())?;
        let rc = Matrix::from_vec(rc.len(), bundle.condition_dim(), rc.concat())?;
        Self::from_matrices(bundle, rs, rc)
    }

    pub fn from_matrices(bundle: &TransformBundle, rs: Matrix, rc: Matrix) -> Result<Self> {
        if rs.cols() != bundle.target_dim() || rc.cols() != bundle.condition_dim() || rs.rows() != rc.rows() {
            return Err(Error::Contract("encoded rows do not match the bundle layout".into()));
        }
        let n = rs.rows();
        let mut alpha_cols = Vec::new();
        let mut classes = Vec::new();
        for e in bundle.target_layout() {
            let (start, width) = match bundle.transform(e.column) {
                ColumnTransform::Continuous(_) => {
                    alpha_cols.push(e.offset);
                    (e.offset + 1, e.width - 1)
                }
                ColumnTransform::Discrete(_) => (e.offset, e.width),
            };
            classes.push((0..n).map(|r| argmax(&rs.row(r)[start..start + width])).collect());
        }
        let alpha = rs.select_cols(&alpha_cols);
        Ok(Self { rs, rc, alpha, classes })
    }

    /// Encodes dataset rows with the bundle (continuous targets use sampled modes).
    pub fn encode<R: Rng + ?Sized>(bundle: &TransformBundle, rows: &[Vec<Value>], rng: &mut R) -> Result<Self> {
        let mut rs = Vec::with_capacity(rows.len());
        let mut rc = Vec::with_capacity(rows.len());
        for row in rows {
            let (s, c) = bundle.encode_row(row, rng)?;
            rs.push(s);
            rc.push(c);
        }
        Self::from_vectors(bundle, &rs, &rc)
    }

    pub fn len(&self) -> usize {
        self.rs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rs.rows() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> EncodedRows {
        let pick = |m: &Matrix| {
            let mut out = Matrix::zeros(idx.len(), m.cols());
            for (i, &r) in idx.iter().enumerate() {
                out.row_mut(i).copy_from_slice(m.row(r));
            }
            out
        };
        EncodedRows {
            rs: pick(&self.rs),
            rc: pick(&self.rc),
            alpha: pick(&self.alpha),
            classes: self.classes.iter().map(|c| idx.iter().map(|&r| c[r]).collect()).collect(),
        }
    }

    fn range(&self, start: usize, end: usize) -> EncodedRows {
        self.subset(&(start..end).collect::<Vec<_>>())
    }
}

struct LossNodes {
    reconstruction_rows: NodeId,
    kl_rows: NodeId,
    loss: NodeId,
}

/// Rows per gradient chunk. Chunk boundaries are fixed so that parallel and
/// sequential execution sum gradients in the same order.
const GRAD_CHUNK: usize = 64;

impl ModelParams {
    /// Xavier-uniform weights, zero biases, log-spreads at ln 0.1.
    pub fn init(bundle: TransformBundle, arch: ArchitectureSpec, conditioning: bool, seed: u64) -> Result<Self> {
        arch.validate()?;
        let ds = bundle.target_dim();
        if ds == 0 {
            return Err(Error::Contract("bundle has no target columns (zero-width r_s)".into()));
        }
        let dc = if conditioning { bundle.condition_dim() } else { 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let mut layer = |p: &mut ParamSet, name: &str, out: usize, inp: usize| {
            p.push(format!("{name}.weight"), xavier_uniform(out, inp, &mut rng));
            p.push(format!("{name}.bias"), Matrix::zeros(1, out));
        };
        layer(&mut p, "encoder.h1", arch.enc_h1, ds + dc);
        layer(&mut p, "encoder.h2", arch.enc_h2, arch.enc_h1);
        layer(&mut p, "encoder.mu", arch.latent_dim, arch.enc_h2);
        layer(&mut p, "encoder.logvar", arch.latent_dim, arch.enc_h2);
        layer(&mut p, "decoder.h1", arch.dec_h1, arch.latent_dim + dc);
        layer(&mut p, "decoder.h2", arch.dec_h2, arch.dec_h1);
        layer(&mut p, "decoder.out", ds, arch.dec_h2);
        p.push(
            "decoder.log_spread",
            Matrix::filled(1, bundle.continuous_target_count(), INITIAL_LOG_SPREAD),
        );
        debug_assert_eq!(p.len(), LOG_SPREAD + 1);
        Ok(Self {
            bundle,
            arch,
            conditioning,
            params: p,
        })
    }

    pub fn bundle(&self) -> &TransformBundle {
        &self.bundle
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn conditioning(&self) -> bool {
        self.conditioning
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Replaces parameter values (same names and shapes).
    pub fn with_params(&self, params: ParamSet) -> Result<Self> {
        if params.names() != self.params.names() {
            return Err(Error::Contract("parameter names differ".into()));
        }
        Ok(Self {
            params: self.params.with_values(params.values().to_vec())?,
            ..self.clone()
        })
    }

    pub fn encoder_input_dim(&self) -> usize {
        self.params.get(ENC1_W).cols()
    }

    pub fn decoder_input_dim(&self) -> usize {
        self.params.get(DEC1_W).cols()
    }

    pub fn effective_condition_dim(&self) -> usize {
        if self.conditioning {
            self.bundle.condition_dim()
        } else {
            0
        }
    }

    pub fn log_spreads(&self) -> &[f64] {
        self.params.get(LOG_SPREAD).as_slice()
    }

    fn check_rows(&self, rs: &Matrix, rc: &Matrix) -> Result<()> {
        if rs.cols() != self.bundle.target_dim() {
            return Err(Error::Contract(format!(
                "r_s width {} != {}",
                rs.cols(),
                self.bundle.target_dim()
            )));
        }
        if self.conditioning && (rc.cols() != self.bundle.condition_dim() || rc.rows() != rs.rows()) {
            return Err(Error::Contract(format!(
                "r_c shape {:?} does not match {} rows of width {}",
                rc.shape(),
                rs.rows(),
                self.bundle.condition_dim()
            )));
        }
        Ok(())
    }

    /// Batched encoder: returns `(μ, σ)` as `rows × latent` matrices.
    pub fn encode_batch(&self, rs: &Matrix, rc: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_rows(rs, rc)?;
        let p = self.params.values();
        let input = if self.conditioning { rs.hcat(rc)? } else { rs.clone() };
        let h1 = affine_forward(&input, &p[ENC1_W], &p[ENC1_B])?.map(|v| v.max(0.0));
        let h2 = affine_forward(&h1, &p[ENC2_W], &p[ENC2_B])?.map(|v| v.max(0.0));
        let mu = affine_forward(&h2, &p[MU_W], &p[MU_B])?;
        let sigma = affine_forward(&h2, &p[LOGVAR_W], &p[LOGVAR_B])?.map(|v| (0.5 * v).exp());
        if !mu.is_finite() || !sigma.is_finite() {
            return Err(Error::Numeric("encoder activations".into()));
        }
        Ok((mu, sigma))
    }

    /// Encoder for one row.
    pub fn encode(&self, rs: &[f64], rc: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mu, sigma) = self.encode_batch(&Matrix::row_vector(rs.to_vec()), &Matrix::row_vector(rc.to_vec()))?;
        Ok((mu.into_vec(), sigma.into_vec()))
    }

    /// Raw decoder head output, `rows × dim(r_s)`, before tanh on α slots.
    pub fn decode_raw_batch(&self, z: &Matrix, rc: &Matrix) -> Result<Matrix> {
        if z.cols() != self.arch.latent_dim {
            return Err(Error::Contract(format!(
                "latent width {} != {}",
                z.cols(),
                self.arch.latent_dim
            )));
        }
        let p = self.params.values();
        let input = if self.conditioning {
            if rc.cols() != self.bundle.condition_dim() || rc.rows() != z.rows() {
                return Err(Error::Contract("r_c does not match decoder input".into()));
            }
            z.hcat(rc)?
        } else {
            z.clone()
        };
        let h1 = affine_forward(&input, &p[DEC1_W], &p[DEC1_B])?.map(|v| v.max(0.0));
        let h2 = affine_forward(&h1, &p[DEC2_W], &p[DEC2_B])?.map(|v| v.max(0.0));
        affine_forward(&h2, &p[OUT_W], &p[OUT_B])
    }

    /// Decoder for one latent vector, split into per-target-column blocks.
    pub fn decode(&self, z: &[f64], rc: &[f64]) -> Result<Vec<OutputBlock>> {
        let raw = self.decode_raw_batch(&Matrix::row_vector(z.to_vec()), &Matrix::row_vector(rc.to_vec()))?;
        self.bundle.output_blocks(raw.row(0), self.log_spreads())
    }

    fn build_loss(&self, tape: &mut Tape<'_>, rows: &EncodedRows, noise: &Matrix, divisor: f64) -> Result<LossNodes> {
        let n = rows.len();
        if noise.shape() != (n, self.arch.latent_dim) {
            return Err(Error::Contract(format!(
                "noise shape {:?} != ({n}, {})",
                noise.shape(),
                self.arch.latent_dim
            )));
        }
        self.check_rows(&rows.rs, &rows.rc)?;
        let param = |t: &mut Tape<'_>, i| t.param(i);
        let rs = tape.input(rows.rs.clone());
        let rc = self.conditioning.then(|| tape.input(rows.rc.clone()));

        let enc_in = match rc {
            Some(rc) => tape.concat(rs, rc)?,
            None => rs,
        };
        let (w, b) = (param(tape, ENC1_W)?, param(tape, ENC1_B)?);
        let h = tape.affine(enc_in, w, b)?;
        let h = tape.relu(h)?;
        let (w, b) = (param(tape, ENC2_W)?, param(tape, ENC2_B)?);
        let h = tape.affine(h, w, b)?;
        let h2 = tape.relu(h)?;
        let (w, b) = (param(tape, MU_W)?, param(tape, MU_B)?);
        let mu = tape.affine(h2, w, b)?;
        let (w, b) = (param(tape, LOGVAR_W)?, param(tape, LOGVAR_B)?);
        let logvar = tape.affine(h2, w, b)?;
        let half = tape.scale(logvar, 0.5)?;
        let sigma = tape.exp(half)?;
        let spread = tape.mul_const(sigma, noise.clone())?;
        let z = tape.add(mu, spread)?;

        let dec_in = match rc {
            Some(rc) => tape.concat(z, rc)?,
            None => z,
        };
        let (w, b) = (param(tape, DEC1_W)?, param(tape, DEC1_B)?);
        let h = tape.affine(dec_in, w, b)?;
        let h = tape.relu(h)?;
        let (w, b) = (param(tape, DEC2_W)?, param(tape, DEC2_B)?);
        let h = tape.affine(h, w, b)?;
        let h = tape.relu(h)?;
        let (w, b) = (param(tape, OUT_W)?, param(tape, OUT_B)?);
        let out = tape.affine(h, w, b)?;

        let mut terms: Vec<NodeId> = Vec::new();
        let mut alpha_cols = Vec::new();
        for (slot, e) in self.bundle.target_layout().iter().enumerate() {
            let logits = match self.bundle.transform(e.column) {
                ColumnTransform::Continuous(_) => {
                    alpha_cols.push(e.offset);
                    tape.slice(out, e.offset + 1, e.width - 1)?
                }
                ColumnTransform::Discrete(_) => tape.slice(out, e.offset, e.width)?,
            };
            terms.push(tape.softmax_cross_entropy(logits, rows.classes[slot].clone())?);
        }
        if !alpha_cols.is_empty() {
            let raw = tape.select_cols(out, alpha_cols)?;
            let mean = tape.tanh(raw)?;
            let log_spread = param(tape, LOG_SPREAD)?;
            let nll = tape.gaussian_nll(mean, log_spread, rows.alpha.clone())?;
            terms.push(tape.sum_cols(nll)?);
        }
        let mut recon = terms[0];
        for &t in &terms[1..] {
            recon = tape.add(recon, t)?;
        }
        let kl = tape.kl_standard_normal(mu, logvar)?;
        let total = tape.add(recon, kl)?;
        let sum = tape.sum_all(total)?;
        let loss = tape.scale(sum, 1.0 / divisor)?;
        Ok(LossNodes {
            reconstruction_rows: recon,
            kl_rows: kl,
            loss,
        })
    }

    fn chunk_loss(
        &self,
        rows: &EncodedRows,
        noise: &Matrix,
        divisor: f64,
        want_grad: bool,
    ) -> Result<(f64, f64, Option<Vec<Matrix>>)> {
        let mut tape = Tape::new(self.params.values());
        let nodes = self.build_loss(&mut tape, rows, noise, divisor)?;
        let recon: f64 = tape.value(nodes.reconstruction_rows).as_slice().iter().sum();
        let kl: f64 = tape.value(nodes.kl_rows).as_slice().iter().sum();
        if !recon.is_finite() {
            return Err(Error::Numeric("reconstruction term".into()));
        }
        if !kl.is_finite() {
            return Err(Error::Numeric("kl term".into()));
        }
        let grads = if want_grad { Some(tape.backward(nodes.loss)?) } else { None };
        Ok((recon, kl, grads))
    }

    /// Mean negated ELBO over `rows` (one noise row per data row) and,
    /// optionally, its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        rows: &EncodedRows,
        noise: &Matrix,
        want_grad: bool,
        execution: Execution,
    ) -> Result<(LossBreakdown, Option<Vec<Matrix>>)> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        let chunks = n.div_ceil(GRAD_CHUNK);
        let parts = exec::try_map_indexed(execution, chunks, |c| {
            let (s, e) = (c * GRAD_CHUNK, ((c + 1) * GRAD_CHUNK).min(n));
            let sub = if chunks == 1 { rows.clone() } else { rows.range(s, e) };
            let mut nz = Matrix::zeros(e - s, noise.cols());
            for r in s..e {
                nz.row_mut(r - s).copy_from_slice(noise.row(r));
            }
            self.chunk_loss(&sub, &nz, n as f64, want_grad)
        })?;
        let mut recon = 0.0;
        let mut kl = 0.0;
        let mut grads: Option<Vec<Matrix>> = None;
        for (r, k, g) in parts {
            recon += r;
            kl += k;
            if let Some(g) = g {
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
                }
            }
        }
        Ok((LossBreakdown::new(recon / n as f64, kl / n as f64), grads))
    }

    /// Negated ELBO of one encoded row under one noise draw.
    pub fn elbo_loss(&self, rs: &[f64], rc: &[f64], noise: &[f64]) -> Result<LossBreakdown> {
        let rows = EncodedRows::from_vectors(&self.bundle, &[rs.to_vec()], &[rc.to_vec()])?;
        let noise = Matrix::row_vector(noise.to_vec());
        Ok(self.loss_and_grad(&rows, &noise, false, Execution::Sequential)?.0)
    }

    /// Stable identifier of the parameters and transforms.
    pub fn fingerprint(&self) -> String {
        io::fingerprint(self)
    }
}

/// `z = μ + σ ⊙ noise`.
pub fn reparameterize(mu: &[f64], sigma: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() || mu.len() != noise.len() {
        return Err(Error::Contract("reparameterize needs equal lengths".into()));
    }
    Ok(mu.iter().zip(sigma).zip(noise).map(|((m, s), e)| m + s * e).collect())
}

/// Closed-form KL(N(μ, σ²I) ‖ N(0, I)).
pub fn kl_standard_normal(mu: &[f64], sigma: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(sigma)
        .map(|(m, s)| m * m + s * s - 1.0 - (s * s).ln())
        .sum::<f64>()
}

/// Standard-normal matrix drawn from `rng`.
pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}
