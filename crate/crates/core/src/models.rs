//! The convolutional autoencoder / VAE.
//!
//! Encoder: stride-2 kernel-4 convolutions (no padding), each rectified,
//! then a flatten and two affine heads producing `mu` and `logvar`. Decoder:
//! an affine layer to a `[1024, 1, 1]` stack followed by stride-2 transposed
//! convolutions, rectified between layers, sigmoid at the output so
//! reconstructions stay in (0, 1).
//!
//! For 64x64 inputs the encoder channel widths are (32, 64, 128, 256) with
//! spatial trace 64 -> 31 -> 14 -> 6 -> 2, and the decoder kernels are
//! (5, 5, 6, 6) with trace 1 -> 5 -> 13 -> 30 -> 64. The 96x96 variant adds
//! one stride-2 stage on each side: a fifth 256-channel conv
//! (96 -> 47 -> 22 -> 10 -> 4 -> 1) and a kernel-3 transposed conv in front
//! of the decoder stack (1 -> 3 -> 9 -> 21 -> 46 -> 96).
//!
//! A plain (non-variational) autoencoder is the same network with the code
//! taken at `mu` and the KL term held at zero; nothing stochastic remains in
//! its forward pass.

use crate::errors::{Error, Result};
use crate::nn::{
    he_uniform, relu, relu_backward, sigmoid, sigmoid_backward, Adam, Conv2d, Conv2dGrads,
    ConvT2d, ConvT2dGrads, Linear, LinearGrads, Scalar,
};
use crate::seed::rng_for;
use crate::weights::WeightsContainer;
use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Latent sizes exercised by the experiments.
pub const ALLOWED_Z_SIZES: [usize; 5] = [32, 64, 128, 256, 512];
/// Supported input sides.
pub const ALLOWED_INPUT_SIZES: [usize; 2] = [64, 96];

/// Architecture description: encoder conv widths (kernel 4, stride 2, no
/// padding), decoder entry width, decoder deconv widths and kernels
/// (stride 2). The last decoder width must be 3 (RGB).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_size: usize,
    pub enc_channels: Vec<usize>,
    pub dec_entry_channels: usize,
    pub dec_channels: Vec<usize>,
    pub dec_kernels: Vec<usize>,
}

impl ArchSpec {
    /// The full-size architecture for a supported input side.
    pub fn standard(input_size: usize) -> Result<Self> {
        match input_size {
            64 => Ok(ArchSpec {
                input_size,
                enc_channels: vec![32, 64, 128, 256],
                dec_entry_channels: 1024,
                dec_channels: vec![128, 64, 32, 3],
                dec_kernels: vec![5, 5, 6, 6],
            }),
            96 => Ok(ArchSpec {
                input_size,
                enc_channels: vec![32, 64, 128, 256, 256],
                dec_entry_channels: 1024,
                dec_channels: vec![256, 128, 64, 32, 3],
                dec_kernels: vec![3, 5, 5, 6, 6],
            }),
            other => Err(Error::InvalidConfig(format!(
                "input size {other} not in {ALLOWED_INPUT_SIZES:?}"
            ))),
        }
    }

    /// A small variant of the 64x64 architecture for cheap tests.
    pub fn tiny64() -> Self {
        ArchSpec {
            input_size: 64,
            enc_channels: vec![8, 16, 16, 32],
            dec_entry_channels: 64,
            dec_channels: vec![16, 8, 8, 3],
            dec_kernels: vec![5, 5, 6, 6],
        }
    }

    /// Encoder spatial sizes after each conv, starting from the input side.
    pub fn encoder_trace(&self) -> Vec<usize> {
        let mut side = self.input_size;
        let mut trace = vec![side];
        for _ in &self.enc_channels {
            side = (side - 4) / 2 + 1;
            trace.push(side);
        }
        trace
    }

    /// Decoder spatial sizes starting from 1x1.
    pub fn decoder_trace(&self) -> Vec<usize> {
        let mut side = 1usize;
        let mut trace = vec![side];
        for &k in &self.dec_kernels {
            side = (side - 1) * 2 + k;
            trace.push(side);
        }
        trace
    }

    pub fn flatten_dim(&self) -> usize {
        let side = *self.encoder_trace().last().unwrap();
        self.enc_channels.last().unwrap() * side * side
    }

    fn validate(&self) -> Result<()> {
        if self.dec_channels.last() != Some(&3) {
            return Err(Error::InvalidConfig("decoder must end in 3 channels".into()));
        }
        if self.dec_channels.len() != self.dec_kernels.len() {
            return Err(Error::InvalidConfig(
                "decoder widths and kernels must align".into(),
            ));
        }
        if self.decoder_trace().last() != Some(&self.input_size) {
            return Err(Error::InvalidConfig(format!(
                "decoder trace {:?} does not end at input size {}",
                self.decoder_trace(),
                self.input_size
            )));
        }
        Ok(())
    }
}

/// Per-sample latent code. In variational mode `z = mu + exp(logvar/2) * eps`
/// with `eps` standard normal; in deterministic mode `z = mu` exactly and
/// `logvar` is ignored downstream.
#[derive(Debug, Clone)]
pub struct LatentCode<F: Scalar> {
    pub mu: Array1<F>,
    pub logvar: Array1<F>,
    pub z: Array1<F>,
}

/// Encoder activations kept for the backward pass: the input plus each
/// post-rectifier map, then the flattened features.
pub struct EncoderCache<F: Scalar> {
    pub acts: Vec<Array4<F>>,
    pub flat: Array2<F>,
}

/// Decoder activations kept for the backward pass.
pub struct DecoderCache<F: Scalar> {
    pub z: Array2<F>,
    pub entry: Array2<F>,
    /// Input to each deconv (post-rectifier except the first, which is the
    /// reshaped entry stack).
    pub acts: Vec<Array4<F>>,
    pub output: Array4<F>,
}

pub struct EncoderGrads<F: Scalar> {
    pub convs: Vec<Conv2dGrads<F>>,
    pub mu_head: LinearGrads<F>,
    pub logvar_head: LinearGrads<F>,
}

pub struct DecoderGrads<F: Scalar> {
    pub entry: LinearGrads<F>,
    pub deconvs: Vec<ConvT2dGrads<F>>,
}

#[derive(Debug, Clone)]
pub struct Autoencoder<F: Scalar> {
    pub arch: ArchSpec,
    pub z_size: usize,
    pub variational: bool,
    pub seed: u64,
    enc_convs: Vec<Conv2d<F>>,
    mu_head: Linear<F>,
    logvar_head: Linear<F>,
    dec_entry: Linear<F>,
    dec_deconvs: Vec<ConvT2d<F>>,
}

/// Builds the standard model, enforcing the allowed z and input sizes.
pub fn build_model<F: Scalar>(
    z_size: usize,
    variational: bool,
    input_size: usize,
    seed: u64,
) -> Result<Autoencoder<F>> {
    if !ALLOWED_Z_SIZES.contains(&z_size) {
        return Err(Error::InvalidConfig(format!(
            "z size {z_size} not in {ALLOWED_Z_SIZES:?}"
        )));
    }
    let arch = ArchSpec::standard(input_size)?;
    Autoencoder::build(arch, z_size, variational, seed)
}

impl<F: Scalar> Autoencoder<F> {
    /// Builds a model from an explicit architecture. Tests use this with
    /// reduced widths; the public entry point is [`build_model`].
    pub fn build(arch: ArchSpec, z_size: usize, variational: bool, seed: u64) -> Result<Self> {
        arch.validate()?;
        if z_size == 0 {
            return Err(Error::InvalidConfig("z size must be positive".into()));
        }
        let mut rng = rng_for(seed, "model-init", 0);
        // Layer construction order is fixed; the init stream depends on it.
        let mut enc_convs = Vec::new();
        let mut cin = 3usize;
        for &cout in &arch.enc_channels {
            let fan_in = cin * 4 * 4;
            let w = he_uniform(&mut rng, fan_in, (cout, cin, 4, 4));
            enc_convs.push(Conv2d::new(w, Array1::zeros(cout), 2, 0));
            cin = cout;
        }
        let flat = arch.flatten_dim();
        let mu_head = Linear::new(
            he_uniform(&mut rng, flat, (z_size, flat)),
            Array1::zeros(z_size),
        );
        let logvar_head = Linear::new(
            he_uniform(&mut rng, flat, (z_size, flat)),
            Array1::zeros(z_size),
        );
        let (dec_entry, dec_deconvs) =
            Self::build_decoder(&arch, z_size, &mut rng_for(seed, "decoder-init", 0));
        Ok(Autoencoder {
            arch,
            z_size,
            variational,
            seed,
            enc_convs,
            mu_head,
            logvar_head,
            dec_entry,
            dec_deconvs,
        })
    }

    fn build_decoder(
        arch: &ArchSpec,
        z_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Linear<F>, Vec<ConvT2d<F>>) {
        let entry = Linear::new(
            he_uniform(rng, z_size, (arch.dec_entry_channels, z_size)),
            Array1::zeros(arch.dec_entry_channels),
        );
        let mut deconvs = Vec::new();
        let mut cin = arch.dec_entry_channels;
        for (&cout, &k) in arch.dec_channels.iter().zip(&arch.dec_kernels) {
            let fan_in = cin * k * k;
            let w = he_uniform(rng, fan_in, (cin, cout, k, k));
            deconvs.push(ConvT2d::new(w, Array1::zeros(cout), 2));
            cin = cout;
        }
        (entry, deconvs)
    }

    /// Re-initializes only the decoder from a derived seed; the encoder is
    /// untouched. `generation` distinguishes successive re-initializations.
    pub fn reinit_decoder(&mut self, generation: u64) {
        let mut rng = rng_for(self.seed, "decoder-reinit", generation);
        let (entry, deconvs) = Self::build_decoder(&self.arch, self.z_size, &mut rng);
        self.dec_entry = entry;
        self.dec_deconvs = deconvs;
    }

    pub fn input_size(&self) -> usize {
        self.arch.input_size
    }

    // ---- batched forward/backward --------------------------------------

    pub fn encode_batch_cached(&self, x: &Array4<F>) -> (Array2<F>, Array2<F>, EncoderCache<F>) {
        let n = x.dim().0;
        let mut acts = vec![x.clone()];
        let mut cur = x.clone();
        for conv in &self.enc_convs {
            cur = relu(&conv.forward(&cur));
            acts.push(cur.clone());
        }
        let flat = cur
            .into_shape_with_order((n, self.arch.flatten_dim()))
            .unwrap();
        let mu = self.mu_head.forward(&flat);
        let logvar = self.logvar_head.forward(&flat);
        let cache = EncoderCache { acts, flat };
        (mu, logvar, cache)
    }

    pub fn encode_batch(&self, x: &Array4<F>) -> (Array2<F>, Array2<F>) {
        let (mu, logvar, _) = self.encode_batch_cached(x);
        (mu, logvar)
    }

    pub fn encoder_backward(
        &self,
        cache: &EncoderCache<F>,
        gmu: &Array2<F>,
        glogvar: &Array2<F>,
    ) -> EncoderGrads<F> {
        let (gflat_mu, mu_grads) = self.mu_head.backward(&cache.flat, gmu);
        let (gflat_lv, logvar_grads) = self.logvar_head.backward(&cache.flat, glogvar);
        let gflat = gflat_mu + gflat_lv;
        let last = cache.acts.last().unwrap();
        let mut g4 = gflat.into_shape_with_order(last.raw_dim()).unwrap();
        let mut conv_grads: Vec<Conv2dGrads<F>> = Vec::with_capacity(self.enc_convs.len());
        for (i, conv) in self.enc_convs.iter().enumerate().rev() {
            let gp = relu_backward(&cache.acts[i + 1], &g4);
            let (gx, grads) = conv.backward(&cache.acts[i], &gp);
            conv_grads.push(grads);
            g4 = gx;
        }
        conv_grads.reverse();
        EncoderGrads {
            convs: conv_grads,
            mu_head: mu_grads,
            logvar_head: logvar_grads,
        }
    }

    /// Draws `z` for a batched `(mu, logvar)`; in deterministic mode this is
    /// `mu` and the RNG is untouched. Noise is drawn row-major, one standard
    /// normal per latent dimension.
    pub fn sample_z(
        &self,
        mu: &Array2<F>,
        logvar: &Array2<F>,
        rng: &mut ChaCha8Rng,
    ) -> (Array2<F>, Option<Array2<F>>) {
        if !self.variational {
            return (mu.clone(), None);
        }
        let mut eps = Array2::<F>::zeros(mu.raw_dim());
        for v in eps.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *v = F::fromf64(n);
        }
        let half = F::fromf64(0.5);
        let mut z = mu.clone();
        ndarray::Zip::from(&mut z)
            .and(logvar)
            .and(&eps)
            .for_each(|z, &lv, &e| *z += (lv * half).exp() * e);
        (z, Some(eps))
    }

    pub fn decode_batch_cached(&self, z: &Array2<F>) -> (Array4<F>, DecoderCache<F>) {
        let n = z.dim().0;
        let entry = self.dec_entry.forward(z);
        let mut acts = Vec::with_capacity(self.dec_deconvs.len());
        let mut cur = entry
            .clone()
            .into_shape_with_order((n, self.arch.dec_entry_channels, 1, 1))
            .unwrap();
        let last = self.dec_deconvs.len() - 1;
        for (i, deconv) in self.dec_deconvs.iter().enumerate() {
            acts.push(cur.clone());
            let pre = deconv.forward(&cur);
            cur = if i == last { sigmoid(&pre) } else { relu(&pre) };
        }
        let cache = DecoderCache {
            z: z.clone(),
            entry,
            acts,
            output: cur.clone(),
        };
        (cur, cache)
    }

    pub fn decode_batch(&self, z: &Array2<F>) -> Array4<F> {
        self.decode_batch_cached(z).0
    }

    pub fn decoder_backward(
        &self,
        cache: &DecoderCache<F>,
        gout: &Array4<F>,
    ) -> (Array2<F>, DecoderGrads<F>) {
        let last = self.dec_deconvs.len() - 1;
        let mut g = sigmoid_backward(&cache.output, gout);
        let mut deconv_grads: Vec<ConvT2dGrads<F>> = Vec::with_capacity(self.dec_deconvs.len());
        for (i, deconv) in self.dec_deconvs.iter().enumerate().rev() {
            if i != last {
                g = relu_backward(&cache.acts[i + 1], &g);
            }
            let (gu, grads) = deconv.backward(&cache.acts[i], &g);
            deconv_grads.push(grads);
            g = gu;
        }
        deconv_grads.reverse();
        let n = g.dim().0;
        let gentry = g
            .into_shape_with_order((n, self.arch.dec_entry_channels))
            .unwrap();
        let (gz, entry_grads) = self.dec_entry.backward(&cache.z, &gentry);
        (
            gz,
            DecoderGrads {
                entry: entry_grads,
                deconvs: deconv_grads,
            },
        )
    }

    /// Applies Adam updates for whichever gradient sets are present, in a
    /// fixed parameter order. Call `adam.begin_step()` first.
    pub fn apply_grads(
        &mut self,
        adam: &mut Adam<F>,
        enc: Option<&EncoderGrads<F>>,
        dec: Option<&DecoderGrads<F>>,
    ) {
        if let Some(e) = enc {
            for (i, (conv, g)) in self.enc_convs.iter_mut().zip(&e.convs).enumerate() {
                adam.update(
                    &format!("enc.conv{i}.weight"),
                    conv.weight.view_mut().into_dyn(),
                    g.weight.view().into_dyn(),
                );
                adam.update(
                    &format!("enc.conv{i}.bias"),
                    conv.bias.view_mut().into_dyn(),
                    g.bias.view().into_dyn(),
                );
            }
            adam.update(
                "enc.mu.weight",
                self.mu_head.weight.view_mut().into_dyn(),
                e.mu_head.weight.view().into_dyn(),
            );
            adam.update(
                "enc.mu.bias",
                self.mu_head.bias.view_mut().into_dyn(),
                e.mu_head.bias.view().into_dyn(),
            );
            adam.update(
                "enc.logvar.weight",
                self.logvar_head.weight.view_mut().into_dyn(),
                e.logvar_head.weight.view().into_dyn(),
            );
            adam.update(
                "enc.logvar.bias",
                self.logvar_head.bias.view_mut().into_dyn(),
                e.logvar_head.bias.view().into_dyn(),
            );
        }
        if let Some(d) = dec {
            adam.update(
                "dec.entry.weight",
                self.dec_entry.weight.view_mut().into_dyn(),
                d.entry.weight.view().into_dyn(),
            );
            adam.update(
                "dec.entry.bias",
                self.dec_entry.bias.view_mut().into_dyn(),
                d.entry.bias.view().into_dyn(),
            );
            for (i, (deconv, g)) in self.dec_deconvs.iter_mut().zip(&d.deconvs).enumerate() {
                adam.update(
                    &format!("dec.deconv{i}.weight"),
                    deconv.weight.view_mut().into_dyn(),
                    g.weight.view().into_dyn(),
                );
                adam.update(
                    &format!("dec.deconv{i}.bias"),
                    deconv.bias.view_mut().into_dyn(),
                    g.bias.view().into_dyn(),
                );
            }
        }
    }

    // ---- single-sample API ----------------------------------------------

    fn check_input(&self, x: &Array3<F>) -> Result<()> {
        let s = self.arch.input_size;
        if x.dim() != (3, s, s) {
            return Err(Error::ShapeMismatch {
                expected: format!("3x{s}x{s}"),
                found: format!("{:?}", x.dim()),
            });
        }
        Ok(())
    }

    /// Encodes one image. In variational mode the code is sampled using
    /// `rng`; in deterministic mode `z = mu` exactly.
    pub fn encode(&self, x: &Array3<F>, rng: &mut ChaCha8Rng) -> Result<LatentCode<F>> {
        self.check_input(x)?;
        let xb = x.clone().insert_axis(Axis(0));
        let (mu, logvar) = self.encode_batch(&xb);
        let (z, _) = self.sample_z(&mu, &logvar, rng);
        Ok(LatentCode {
            mu: mu.remove_axis(Axis(0)),
            logvar: logvar.remove_axis(Axis(0)),
            z: z.remove_axis(Axis(0)),
        })
    }

    pub fn decode(&self, z: &Array1<F>) -> Result<Array3<F>> {
        if z.len() != self.z_size {
            return Err(Error::ShapeMismatch {
                expected: format!("z of length {}", self.z_size),
                found: format!("length {}", z.len()),
            });
        }
        let zb = z.clone().insert_axis(Axis(0));
        Ok(self.decode_batch(&zb).remove_axis(Axis(0)))
    }

    pub fn forward(
        &self,
        x: &Array3<F>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array3<F>, LatentCode<F>)> {
        let code = self.encode(x, rng)?;
        let xhat = self.decode(&code.z)?;
        Ok((xhat, code))
    }

    // ---- serialization ---------------------------------------------------

    fn encoder_entries(&self, c: &mut WeightsContainer) {
        for (i, conv) in self.enc_convs.iter().enumerate() {
            c.add(&format!("enc.conv{i}.weight"), &conv.weight);
            c.add(&format!("enc.conv{i}.bias"), &conv.bias);
        }
        c.add("enc.mu.weight", &self.mu_head.weight);
        c.add("enc.mu.bias", &self.mu_head.bias);
        c.add("enc.logvar.weight", &self.logvar_head.weight);
        c.add("enc.logvar.bias", &self.logvar_head.bias);
    }

    fn decoder_entries(&self, c: &mut WeightsContainer) {
        c.add("dec.entry.weight", &self.dec_entry.weight);
        c.add("dec.entry.bias", &self.dec_entry.bias);
        for (i, deconv) in self.dec_deconvs.iter().enumerate() {
            c.add(&format!("dec.deconv{i}.weight"), &deconv.weight);
            c.add(&format!("dec.deconv{i}.bias"), &deconv.bias);
        }
    }

    pub fn to_container(&self) -> WeightsContainer {
        let mut c = WeightsContainer::new();
        self.encoder_entries(&mut c);
        self.decoder_entries(&mut c);
        c
    }

    /// Hash of the encoder parameters alone; decoder retraining must leave
    /// this unchanged.
    pub fn encoder_sha256(&self) -> String {
        let mut c = WeightsContainer::new();
        self.encoder_entries(&mut c);
        c.sha256_hex()
    }

    /// Restores parameters from a container produced by [`Self::to_container`]
    /// for a model of identical architecture.
    pub fn load_container(&mut self, path: &std::path::Path, c: &WeightsContainer) -> Result<()> {
        for (i, conv) in self.enc_convs.iter_mut().enumerate() {
            conv.weight = c.get(path, &format!("enc.conv{i}.weight"), conv.weight.shape())?;
            conv.bias = c.get(path, &format!("enc.conv{i}.bias"), conv.bias.shape())?;
        }
        self.mu_head.weight = c.get(path, "enc.mu.weight", self.mu_head.weight.shape())?;
        self.mu_head.bias = c.get(path, "enc.mu.bias", self.mu_head.bias.shape())?;
        self.logvar_head.weight =
            c.get(path, "enc.logvar.weight", self.logvar_head.weight.shape())?;
        self.logvar_head.bias = c.get(path, "enc.logvar.bias", self.logvar_head.bias.shape())?;
        self.dec_entry.weight = c.get(path, "dec.entry.weight", self.dec_entry.weight.shape())?;
        self.dec_entry.bias = c.get(path, "dec.entry.bias", self.dec_entry.bias.shape())?;
        for (i, deconv) in self.dec_deconvs.iter_mut().enumerate() {
            deconv.weight = c.get(path, &format!("dec.deconv{i}.weight"), deconv.weight.shape())?;
            deconv.bias = c.get(path, &format!("dec.deconv{i}.bias"), deconv.bias.shape())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn standard_arch_traces() {
        let a64 = ArchSpec::standard(64).unwrap();
        assert_eq!(a64.encoder_trace(), vec![64, 31, 14, 6, 2]);
        assert_eq!(a64.decoder_trace(), vec![1, 5, 13, 30, 64]);
        assert_eq!(a64.flatten_dim(), 1024);
        let a96 = ArchSpec::standard(96).unwrap();
        assert_eq!(a96.encoder_trace(), vec![96, 47, 22, 10, 4, 1]);
        assert_eq!(a96.decoder_trace(), vec![1, 3, 9, 21, 46, 96]);
        assert_eq!(a96.flatten_dim(), 256);
        assert!(ArchSpec::standard(80).is_err());
    }

    #[test]
    fn build_rejects_invalid_sizes() {
        assert!(build_model::<f32>(33, false, 64, 0).is_err());
        assert!(build_model::<f32>(32, false, 80, 0).is_err());
        assert!(build_model::<f32>(32, false, 96, 0).is_ok());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_model::<f32>(32, false, 64, 11).unwrap();
        let b = build_model::<f32>(32, false, 64, 11).unwrap();
        assert_eq!(a.to_container().sha256_hex(), b.to_container().sha256_hex());
        let c = build_model::<f32>(32, false, 64, 12).unwrap();
        assert_ne!(a.to_container().sha256_hex(), c.to_container().sha256_hex());
    }

    #[test]
    fn decode_shape_and_range() {
        let m = Autoencoder::<f32>::build(ArchSpec::tiny64(), 32, false, 5).unwrap();
        let z = Array1::from_elem(32, 0.3f32);
        let img = m.decode(&z).unwrap();
        assert_eq!(img.dim(), (3, 64, 64));
        assert!(img.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(m.decode(&Array1::zeros(31)).is_err());
        // decode is deterministic
        assert_eq!(img, m.decode(&z).unwrap());
    }

    #[test]
    fn plain_ae_is_deterministic_end_to_end() {
        let m = Autoencoder::<f32>::build(ArchSpec::tiny64(), 32, false, 5).unwrap();
        let x = Array3::from_shape_fn((3, 64, 64), |(c, h, w)| {
            ((c + 2 * h + 3 * w) % 17) as f32 / 17.0
        });
        let mut rng1 = rng_for(0, "eps", 0);
        let mut rng2 = rng_for(0, "eps", 1); // different stream, must not matter
        let (xa, ca) = m.forward(&x, &mut rng1).unwrap();
        let (xb, cb) = m.forward(&x, &mut rng2).unwrap();
        assert_eq!(xa, xb);
        assert_eq!(ca.z, cb.z);
        assert_eq!(ca.z, ca.mu);
    }

    #[test]
    fn reparameterization_identity_holds_bitwise() {
        let m = Autoencoder::<f64>::build(ArchSpec::tiny64(), 32, true, 5).unwrap();
        let x = Array3::from_shape_fn((3, 64, 64), |(c, h, w)| ((c + h + w) % 11) as f64 / 11.0);
        let seed = 99u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let code = m.encode(&x, &mut rng).unwrap();
        // replay the identical noise stream
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed);
        for d in 0..32 {
            let eps: f64 = StandardNormal.sample(&mut rng2);
            let expect = code.mu[d] + (code.logvar[d] / 2.0).exp() * eps;
            assert_eq!(code.z[d], expect, "dim {d}");
        }
    }

    #[test]
    fn vae_sample_mean_approaches_mu() {
        let m = Autoencoder::<f64>::build(ArchSpec::tiny64(), 32, true, 7).unwrap();
        let x = Array3::from_shape_fn((3, 64, 64), |(c, h, w)| {
            ((2 * c + h + 5 * w) % 13) as f64 / 13.0
        });
        let xb = x.insert_axis(Axis(0));
        let (mu, logvar) = m.encode_batch(&xb);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 1000;
        let mut sum = Array2::<f64>::zeros(mu.raw_dim());
        for _ in 0..n {
            let (z, _) = m.sample_z(&mu, &logvar, &mut rng);
            sum += &z;
        }
        let mean = sum / n as f64;
        for d in 0..32 {
            let se = (logvar[[0, d]] / 2.0).exp() / (n as f64).sqrt();
            assert!(
                (mean[[0, d]] - mu[[0, d]]).abs() < 4.0 * se,
                "dim {d}: mean {} mu {} se {se}",
                mean[[0, d]],
                mu[[0, d]]
            );
        }
    }

    #[test]
    fn encoder_rejects_wrong_input_size() {
        let m = Autoencoder::<f32>::build(ArchSpec::tiny64(), 32, false, 5).unwrap();
        let x = Array3::<f32>::zeros((3, 32, 32));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(m.encode(&x, &mut rng).is_err());
    }

    #[test]
    fn container_roundtrip_restores_model() {
        let mut a = Autoencoder::<f32>::build(ArchSpec::tiny64(), 32, false, 5).unwrap();
        let b = Autoencoder::<f32>::build(ArchSpec::tiny64(), 32, false, 6).unwrap();
        let c = b.to_container();
        a.load_container(std::path::Path::new("mem"), &c).unwrap();
        assert_eq!(a.to_container().sha256_hex(), c.sha256_hex());
    }

    #[test]
    fn decoder_reinit_changes_decoder_only() {
        let mut m = Autoencoder::<f32>::build(ArchSpec::tiny64(), 32, false, 5).unwrap();
        let enc_before = m.encoder_sha256();
        let all_before = m.to_container().sha256_hex();
        m.reinit_decoder(0);
        assert_eq!(m.encoder_sha256(), enc_before);
        assert_ne!(m.to_container().sha256_hex(), all_before);
    }
}
