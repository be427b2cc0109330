use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::fusion::{self, DiagGaussian, GpoeWeights, MixturePosterior, VARIANCE_FLOOR};
use crate::gradnet::{Activation, Axis, LinearLayer, Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::mvae::config::{FusionKind, ModelConfig};
use crate::scalar::Scalar;

/// Encoder for one input channel: a ReLU trunk feeding mean and
/// log-variance heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityEncoder {
    pub trunk: Mlp,
    pub mean_head: LinearLayer,
    pub log_var_head: LinearLayer,
}

/// Decoder for one input channel; the output is the reconstruction mean of
/// a unit-variance Gaussian likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityDecoder {
    pub net: Mlp,
}

/// Standard-normal draws for the reparameterised ELBO, one `n x L` matrix
/// per channel. Joint-posterior losses read only the first matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise<T> {
    per_channel: Vec<Tensor<T>>,
}

impl<T: Scalar> Noise<T> {
    pub fn new(per_channel: Vec<Tensor<T>>) -> Result<Self> {
        if per_channel.is_empty() {
            return Err(Error::Empty("noise needs at least one matrix".into()));
        }
        Ok(Self { per_channel })
    }

    pub fn standard<R: Rng + ?Sized>(
        rng: &mut R,
        rows: usize,
        dim: usize,
        channels: usize,
    ) -> Self {
        let per_channel = (0..channels)
            .map(|_| {
                Tensor::matrix(rows, dim, fusion::standard_normal_vec(rng, rows * dim))
                    .expect("consistent shape")
            })
            .collect();
        Self { per_channel }
    }

    pub fn zeros(rows: usize, dim: usize, channels: usize) -> Self {
        Self {
            per_channel: vec![Tensor::zeros(vec![rows, dim]); channels],
        }
    }

    pub fn channel(&self, c: usize) -> &Tensor<T> {
        &self.per_channel[c]
    }

    pub fn n_channels(&self) -> usize {
        self.per_channel.len()
    }
}

/// Joint posterior of one subject.
#[derive(Debug, Clone, PartialEq)]
pub enum JointPosterior<T> {
    Gaussian(DiagGaussian<T>),
    Mixture(MixturePosterior<T>),
}

impl<T: Scalar> JointPosterior<T> {
    /// Posterior mean; for a mixture, the average of the component means.
    pub fn mean(&self) -> Vec<T> {
        match self {
            JointPosterior::Gaussian(g) => g.mean().to_vec(),
            JointPosterior::Mixture(m) => m.mean(),
        }
    }
}

/// Latent position used when decoding for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentChoice {
    PosteriorMean,
    /// Reparameterised draw from the joint posterior, seeded.
    Sample(u64),
}

/// Reconstruction of a batch of subjects.
#[derive(Debug, Clone)]
pub struct Reconstruction<T> {
    /// `n x L` latent positions that were decoded.
    pub latent: Tensor<T>,
    /// Per-channel decoder outputs.
    pub outputs: Vec<Tensor<T>>,
    /// Per-channel inputs the outputs should match.
    pub targets: Vec<Tensor<T>>,
    pub posteriors: Vec<JointPosterior<T>>,
}

impl<T: Scalar> Reconstruction<T> {
    /// Squared errors `(x - x_hat)^2` per subject, channels concatenated in order.
    pub fn squared_errors(&self) -> Vec<Vec<T>> {
        let n = self.latent.rows();
        (0..n)
            .map(|i| {
                self.outputs
                    .iter()
                    .zip(&self.targets)
                    .flat_map(|(o, t)| {
                        o.row(i)
                            .iter()
                            .zip(t.row(i))
                            .map(|(&a, &b)| (b - a) * (b - a))
                            .collect::<Vec<_>>()
                    })
                    .collect()
            })
            .collect()
    }
}

pub(crate) struct TapeExperts {
    pub means: Vec<Var>,
    pub vars: Vec<Var>,
}

/// Multi-modal VAE: per-channel encoders and decoders plus the fusion rule.
#[derive(Debug, Clone, PartialEq)]
pub struct MvaeModel<T> {
    config: ModelConfig,
    modality_dims: Vec<usize>,
    params: ParamStore<T>,
    encoders: Vec<ModalityEncoder>,
    decoders: Vec<ModalityDecoder>,
    alpha_logits: Option<ParamId>,
}

impl<T: Scalar> MvaeModel<T> {
    /// Builds a freshly initialised model for data with the given
    /// per-modality feature counts.
    pub fn new(config: ModelConfig, modality_dims: &[usize]) -> Result<Self> {
        config.validate()?;
        if modality_dims.is_empty() || modality_dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "every modality needs at least one feature".into(),
            ));
        }
        if config.fusion == FusionKind::Unimodal && config.modality >= modality_dims.len() {
            return Err(Error::InvalidArgument(format!(
                "unimodal baseline selects modality {} but only {} exist",
                config.modality,
                modality_dims.len()
            )));
        }
        let channel_dims = channel_dims(&config, modality_dims);
        let latent = config.latent_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let mut encoders = Vec::with_capacity(channel_dims.len());
        let mut decoders = Vec::with_capacity(channel_dims.len());
        for (c, &dim) in channel_dims.iter().enumerate() {
            let mut trunk_dims = vec![dim];
            trunk_dims.extend(&config.encoder_layers);
            let trunk = Mlp::new(
                &mut params,
                &format!("enc{c}.trunk"),
                &trunk_dims,
                Activation::Relu,
                true,
                &mut rng,
            );
            let width = *trunk_dims.last().expect("non-empty");
            let mean_head = LinearLayer::new(
                &mut params,
                &format!("enc{c}.mean"),
                width,
                latent,
                &mut rng,
            );
            let log_var_head = LinearLayer::new(
                &mut params,
                &format!("enc{c}.logvar"),
                width,
                latent,
                &mut rng,
            );
            encoders.push(ModalityEncoder {
                trunk,
                mean_head,
                log_var_head,
            });
        }
        for (c, &dim) in channel_dims.iter().enumerate() {
            let mut dec_dims = vec![latent];
            dec_dims.extend(&config.decoder_layers);
            dec_dims.push(dim);
            let net = Mlp::new(
                &mut params,
                &format!("dec{c}"),
                &dec_dims,
                Activation::Relu,
                false,
                &mut rng,
            );
            decoders.push(ModalityDecoder { net });
        }
        let alpha_logits =
            (config.fusion == FusionKind::Gpoe && channel_dims.len() > 1).then(|| {
                params.add(
                    "alpha_logits",
                    Tensor::zeros(vec![channel_dims.len(), latent]),
                )
            });
        Ok(Self {
            config,
            modality_dims: modality_dims.to_vec(),
            params,
            encoders,
            decoders,
            alpha_logits,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fusion(&self) -> FusionKind {
        self.config.fusion
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn modality_dims(&self) -> &[usize] {
        &self.modality_dims
    }

    pub fn n_channels(&self) -> usize {
        self.encoders.len()
    }

    pub fn channel_dims(&self) -> Vec<usize> {
        channel_dims(&self.config, &self.modality_dims)
    }

    /// Modalities whose features appear in the reconstruction, in output order.
    pub fn reconstructed_modalities(&self) -> Vec<usize> {
        match self.config.fusion {
            FusionKind::Unimodal => vec![self.config.modality],
            _ => (0..self.modality_dims.len()).collect(),
        }
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn encoders(&self) -> &[ModalityEncoder] {
        &self.encoders
    }

    pub fn decoders(&self) -> &[ModalityDecoder] {
        &self.decoders
    }

    pub fn alpha_logits_id(&self) -> Option<ParamId> {
        self.alpha_logits
    }

    /// Arranges per-modality data into per-channel encoder inputs.
    pub fn channel_inputs(&self, x: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        if x.len() != self.modality_dims.len() {
            return Err(dim_err!(
                "expected {} modalities, got {}",
                self.modality_dims.len(),
                x.len()
            ));
        }
        let rows = x[0].rows();
        for (m, (t, &d)) in x.iter().zip(&self.modality_dims).enumerate() {
            if t.cols() != d || t.rows() != rows {
                return Err(dim_err!(
                    "modality {m} is {}x{}, expected {rows}x{d}",
                    t.rows(),
                    t.cols()
                ));
            }
        }
        Ok(match self.config.fusion {
            FusionKind::Unimodal => vec![x[self.config.modality].clone()],
            FusionKind::Concat => vec![concat_columns(x)?],
            _ => x.to_vec(),
        })
    }

    pub(crate) fn encode_on_tape(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        inputs: &[Var],
    ) -> Result<TapeExperts> {
        let floor = T::lit(VARIANCE_FLOOR);
        let mut means = Vec::with_capacity(inputs.len());
        let mut vars = Vec::with_capacity(inputs.len());
        for (enc, &x) in self.encoders.iter().zip(inputs) {
            let h = enc.trunk.forward(tape, params, x)?;
            let mean = enc.mean_head.forward(tape, params, h)?;
            let log_var = enc.log_var_head.forward(tape, params, h)?;
            let var = tape.exp(log_var)?;
            let var = tape.clamp_min(var, floor)?;
            means.push(mean);
            vars.push(var);
        }
        Ok(TapeExperts { means, vars })
    }

    /// Product or weighted product of the experts on the tape.
    pub(crate) fn fuse_on_tape(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        experts: &TapeExperts,
    ) -> Result<(Var, Var)> {
        if experts.means.len() == 1 {
            return Ok((experts.means[0], experts.vars[0]));
        }
        let alpha = match (self.config.fusion, self.alpha_logits) {
            (FusionKind::Poe, _) => None,
            (FusionKind::Gpoe, Some(id)) => {
                let logits = tape.param(params, id);
                Some(tape.softmax(logits, Axis::Rows)?)
            }
            (kind, _) => {
                return Err(Error::FusionMismatch(format!(
                    "{kind} fusion has no product posterior over {} experts",
                    experts.means.len()
                )))
            }
        };
        let mut precision: Option<Var> = None;
        let mut weighted_mean: Option<Var> = None;
        for (m, (&mean, &var)) in experts.means.iter().zip(&experts.vars).enumerate() {
            let mut p = tape.recip(var)?;
            if let Some(a) = alpha {
                let row = tape.row(a, m)?;
                p = tape.mul_row(p, row)?;
            }
            let pm = tape.mul(p, mean)?;
            precision = Some(match precision {
                Some(acc) => tape.add(acc, p)?,
                None => p,
            });
            weighted_mean = Some(match weighted_mean {
                Some(acc) => tape.add(acc, pm)?,
                None => pm,
            });
        }
        let precision = precision.expect("at least one expert");
        let mean = tape.div(weighted_mean.expect("at least one expert"), precision)?;
        let var = tape.recip(precision)?;
        Ok((mean, var))
    }

    fn sample_on_tape(
        &self,
        tape: &mut Tape<T>,
        mean: Var,
        var: Var,
        noise: &Tensor<T>,
    ) -> Result<Var> {
        let (rows, cols) = tape.shape(mean);
        if noise.rows() != rows || noise.cols() != cols {
            return Err(dim_err!(
                "noise is {}x{} but the posterior is {rows}x{cols}",
                noise.rows(),
                noise.cols()
            ));
        }
        let eps = tape.input(noise);
        let sd = tape.sqrt(var)?;
        let shift = tape.mul(sd, eps)?;
        tape.add(mean, shift)
    }

    /// Summed (over subjects) `1/2 ||x - x_hat||^2` for every channel decoded from `z`.
    fn recon_on_tape(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        z: Var,
        targets: &[Var],
    ) -> Result<Var> {
        let mut total: Option<Var> = None;
        for (dec, &x) in self.decoders.iter().zip(targets) {
            let x_hat = dec.net.forward(tape, params, z)?;
            let d = tape.sub(x, x_hat)?;
            let sq = tape.square(d)?;
            let s = tape.sum(sq)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
        let total = total.ok_or_else(|| Error::Empty("no decoders".into()))?;
        tape.scale(total, T::lit(0.5))
    }

    /// Summed (over subjects) KL to the standard normal prior.
    fn kl_on_tape(tape: &mut Tape<T>, mean: Var, var: Var) -> Result<Var> {
        let m2 = tape.square(mean)?;
        let lv = tape.log(var)?;
        let a = tape.add(var, m2)?;
        let b = tape.sub(a, lv)?;
        let c = tape.add_scalar(b, -T::one())?;
        let s = tape.sum(c)?;
        tape.scale(s, T::lit(0.5))
    }

    fn record_inputs(&self, tape: &mut Tape<T>, channels: &[Tensor<T>]) -> Result<Vec<Var>> {
        if channels.len() != self.n_channels() {
            return Err(dim_err!(
                "expected {} channel inputs, got {}",
                self.n_channels(),
                channels.len()
            ));
        }
        Ok(channels.iter().map(|t| tape.input(t)).collect())
    }

    /// Negative joint-posterior ELBO averaged over the batch, recorded on `tape`.
    pub fn elbo_joint_on_tape(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        channels: &[Tensor<T>],
        noise: &Noise<T>,
    ) -> Result<Var> {
        if self.config.fusion == FusionKind::Moe {
            return Err(Error::FusionMismatch(
                "mixture-of-experts models are trained with the mixture ELBO".into(),
            ));
        }
        let n = channels[0].rows();
        let inputs = self.record_inputs(tape, channels)?;
        let experts = self.encode_on_tape(tape, params, &inputs)?;
        let (mean, var) = self.fuse_on_tape(tape, params, &experts)?;
        let z = self.sample_on_tape(tape, mean, var, noise.channel(0))?;
        let recon = self.recon_on_tape(tape, params, z, &inputs)?;
        let kl = Self::kl_on_tape(tape, mean, var)?;
        let total = tape.add(recon, kl)?;
        tape.scale(total, T::one() / T::from_count(n))
    }

    /// Negative mixture ELBO averaged over the batch: every expert's sample
    /// reconstructs every channel.
    pub fn elbo_moe_on_tape(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        channels: &[Tensor<T>],
        noise: &Noise<T>,
    ) -> Result<Var> {
        if self.config.fusion != FusionKind::Moe {
            return Err(Error::FusionMismatch(format!(
                "the mixture ELBO needs moe fusion, model uses {}",
                self.config.fusion
            )));
        }
        if noise.n_channels() < self.n_channels() {
            return Err(dim_err!(
                "mixture ELBO needs {} noise matrices, got {}",
                self.n_channels(),
                noise.n_channels()
            ));
        }
        let n = channels[0].rows();
        let inputs = self.record_inputs(tape, channels)?;
        let experts = self.encode_on_tape(tape, params, &inputs)?;
        let mut total: Option<Var> = None;
        for m in 0..self.n_channels() {
            let (mean, var) = (experts.means[m], experts.vars[m]);
            let z = self.sample_on_tape(tape, mean, var, noise.channel(m))?;
            let recon = self.recon_on_tape(tape, params, z, &inputs)?;
            let kl = Self::kl_on_tape(tape, mean, var)?;
            let term = tape.add(recon, kl)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let total = total.expect("at least one channel");
        tape.scale(total, T::one() / T::from_count(n))
    }

    /// Training loss appropriate for the configured fusion, on channel inputs.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        channels: &[Tensor<T>],
        noise: &Noise<T>,
    ) -> Result<Var> {
        match self.config.fusion {
            FusionKind::Moe => self.elbo_moe_on_tape(tape, params, channels, noise),
            _ => self.elbo_joint_on_tape(tape, params, channels, noise),
        }
    }

    /// Negative joint ELBO for per-modality data `x`.
    pub fn elbo_joint(&self, x: &[Tensor<T>], noise: &Noise<T>) -> Result<T> {
        let channels = self.channel_inputs(x)?;
        let mut tape = Tape::new();
        let loss = self.elbo_joint_on_tape(&mut tape, &self.params, &channels, noise)?;
        tape.scalar_value(loss)
    }

    /// Negative mixture ELBO for per-modality data `x`.
    pub fn elbo_moe(&self, x: &[Tensor<T>], noise: &Noise<T>) -> Result<T> {
        let channels = self.channel_inputs(x)?;
        let mut tape = Tape::new();
        let loss = self.elbo_moe_on_tape(&mut tape, &self.params, &channels, noise)?;
        tape.scalar_value(loss)
    }

    /// Loss of the configured fusion for per-modality data `x`.
    pub fn loss(&self, x: &[Tensor<T>], noise: &Noise<T>) -> Result<T> {
        let channels = self.channel_inputs(x)?;
        self.loss_channels(&channels, noise)
    }

    pub(crate) fn loss_channels(&self, channels: &[Tensor<T>], noise: &Noise<T>) -> Result<T> {
        let mut tape = Tape::new();
        let loss = self.loss_on_tape(&mut tape, &self.params, channels, noise)?;
        tape.scalar_value(loss)
    }

    /// Per-subject, per-channel experts for per-modality data `x`.
    pub fn encode_batch(&self, x: &[Tensor<T>]) -> Result<Vec<Vec<DiagGaussian<T>>>> {
        let channels = self.channel_inputs(x)?;
        self.encode_channels(&channels)
    }

    fn encode_channels(&self, channels: &[Tensor<T>]) -> Result<Vec<Vec<DiagGaussian<T>>>> {
        let mut tape = Tape::new();
        let inputs = self.record_inputs(&mut tape, channels)?;
        let experts = self.encode_on_tape(&mut tape, &self.params, &inputs)?;
        let n = channels[0].rows();
        let l = self.latent_dim();
        (0..n)
            .map(|i| {
                experts
                    .means
                    .iter()
                    .zip(&experts.vars)
                    .map(|(&m, &v)| {
                        let mean = tape.value(m)[i * l..(i + 1) * l].to_vec();
                        let var = tape.value(v)[i * l..(i + 1) * l].to_vec();
                        DiagGaussian::new(mean, var)
                    })
                    .collect()
            })
            .collect()
    }

    /// Experts for a single subject given one feature vector per modality.
    pub fn encode(&self, x: &[Vec<T>]) -> Result<Vec<DiagGaussian<T>>> {
        let rows: Vec<Tensor<T>> = x
            .iter()
            .map(|v| Tensor::matrix(1, v.len(), v.clone()))
            .collect::<Result<_>>()?;
        Ok(self.encode_batch(&rows)?.remove(0))
    }

    /// Softmax of the alpha logits over modalities.
    pub fn get_alpha(&self) -> Result<GpoeWeights<T>> {
        if self.config.fusion != FusionKind::Gpoe {
            return Err(Error::FusionMismatch(format!(
                "alpha weights exist only for gpoe models, this one is {}",
                self.config.fusion
            )));
        }
        let id = self.alpha_logits.ok_or_else(|| {
            Error::InvalidArgument("a single-modality gpoe model has no alpha weights".into())
        })?;
        let t = self.params.get(id);
        GpoeWeights::from_logits(&t.to_rows())
    }

    /// Combines one subject's experts according to the configured fusion.
    pub fn joint_posterior(&self, experts: &[DiagGaussian<T>]) -> Result<JointPosterior<T>> {
        if experts.len() != self.n_channels() {
            return Err(Error::FusionMismatch(format!(
                "{} fusion expects {} experts, got {}",
                self.config.fusion,
                self.n_channels(),
                experts.len()
            )));
        }
        if experts.len() == 1 {
            return Ok(JointPosterior::Gaussian(experts[0].clone()));
        }
        match self.config.fusion {
            FusionKind::Poe => Ok(JointPosterior::Gaussian(fusion::poe_fuse(experts)?)),
            FusionKind::Gpoe => Ok(JointPosterior::Gaussian(fusion::gpoe_fuse(
                experts,
                &self.get_alpha()?,
            )?)),
            FusionKind::Moe => Ok(JointPosterior::Mixture(MixturePosterior::new(
                experts.to_vec(),
            )?)),
            kind => Err(Error::FusionMismatch(format!(
                "{kind} fusion cannot combine {} experts",
                experts.len()
            ))),
        }
    }

    /// Decodes a batch of latent positions into per-channel outputs.
    pub fn decode(&self, latent: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if latent.cols() != self.latent_dim() {
            return Err(dim_err!(
                "latent has {} columns, model uses {}",
                latent.cols(),
                self.latent_dim()
            ));
        }
        let mut tape = Tape::new();
        let z = tape.input(latent);
        self.decoders
            .iter()
            .map(|d| {
                let out = d.net.forward(&mut tape, &self.params, z)?;
                Ok(tape.to_tensor(out))
            })
            .collect()
    }

    /// Encodes, fuses and decodes per-modality data `x`.
    pub fn reconstruct(&self, x: &[Tensor<T>], choice: LatentChoice) -> Result<Reconstruction<T>> {
        let channels = self.channel_inputs(x)?;
        let experts = self.encode_channels(&channels)?;
        let posteriors: Vec<JointPosterior<T>> = experts
            .iter()
            .map(|e| self.joint_posterior(e))
            .collect::<Result<_>>()?;
        let l = self.latent_dim();
        let mut latent = Vec::with_capacity(posteriors.len() * l);
        match choice {
            LatentChoice::PosteriorMean => {
                for p in &posteriors {
                    latent.extend(p.mean());
                }
            }
            LatentChoice::Sample(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for p in &posteriors {
                    let z = match p {
                        JointPosterior::Gaussian(g) => {
                            let eps = fusion::standard_normal_vec(&mut rng, l);
                            fusion::reparam_sample(g, &eps)?
                        }
                        JointPosterior::Mixture(m) => fusion::moe_sample(m, &mut rng).0,
                    };
                    latent.extend(z);
                }
            }
        }
        let latent = Tensor::matrix(posteriors.len(), l, latent)?;
        let outputs = self.decode(&latent)?;
        Ok(Reconstruction {
            latent,
            outputs,
            targets: channels,
            posteriors,
        })
    }
}

fn channel_dims(config: &ModelConfig, modality_dims: &[usize]) -> Vec<usize> {
    match config.fusion {
        FusionKind::Unimodal => vec![modality_dims[config.modality]],
        FusionKind::Concat => vec![modality_dims.iter().sum()],
        _ => modality_dims.to_vec(),
    }
}

/// Joins matrices with equal row counts side by side.
pub fn concat_columns<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let rows = parts.first().map_or(0, Tensor::rows);
    if parts.iter().any(|p| p.rows() != rows) {
        return Err(dim_err!(
            "cannot concatenate matrices with different row counts"
        ));
    }
    let cols: usize = parts.iter().map(Tensor::cols).sum();
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            values.extend_from_slice(p.row(r));
        }
    }
    Tensor::matrix(rows, cols, values)
}

/// Copies the given rows of a matrix.
pub fn select_rows<T: Scalar>(t: &Tensor<T>, rows: &[usize]) -> Tensor<T> {
    let c = t.cols();
    let mut values = Vec::with_capacity(rows.len() * c);
    for &r in rows {
        values.extend_from_slice(t.row(r));
    }
    Tensor::matrix(rows.len(), c, values).expect("consistent shape")
}
