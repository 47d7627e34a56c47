//! Fully-connected bottleneck autoencoder: 784 -> 128 -> 32 -> 128 -> 784.
//! The encoder feeds the context bank; the decoder visualizes codes.

use crate::data::{Dataset, Image, IMG_PIXELS};
use crate::error::{Error, Result};
use crate::layers::{derive_seed, relu_inplace, sigmoid_inplace, DenseLayer};
use crate::store::Checkpoint;
use crate::tensor::{seeded_rng, OptMode, Optimizer, Tensor};
use crate::warp::random_augment_with;

/// Bottleneck width.
pub const CODE_DIM: usize = 32;
const HIDDEN: usize = 128;

/// A 32-value latent code.
pub type Code = Vec<f32>;

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    pub enc1: DenseLayer, // 784 -> 128, relu
    pub enc2: DenseLayer, // 128 -> 32, linear
    pub dec1: DenseLayer, // 32 -> 128, relu
    pub dec2: DenseLayer, // 128 -> 784, sigmoid
}

impl AutoencoderParams {
    pub fn init(seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        AutoencoderParams {
            enc1: DenseLayer::init(HIDDEN, IMG_PIXELS, &mut rng),
            enc2: DenseLayer::init(CODE_DIM, HIDDEN, &mut rng),
            dec1: DenseLayer::init(HIDDEN, CODE_DIM, &mut rng),
            dec2: DenseLayer::init(IMG_PIXELS, HIDDEN, &mut rng),
        }
    }

    fn layers_mut(&mut self) -> [&mut DenseLayer; 4] {
        [&mut self.enc1, &mut self.enc2, &mut self.dec1, &mut self.dec2]
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        [&self.enc1, &self.enc2, &self.dec1, &self.dec2]
            .iter()
            .flat_map(|l| [l.w.shape().to_vec(), l.b.shape().to_vec()])
            .collect()
    }

    /// Encode a batch of flattened images ([batch * 784]) to codes
    /// ([batch * 32]).
    pub fn encode_batch(&self, xs: &[f32], batch: usize) -> Vec<f32> {
        debug_assert_eq!(xs.len(), batch * IMG_PIXELS);
        let mut h = self.enc1.forward(xs, batch);
        relu_inplace(&mut h);
        self.enc2.forward(&h, batch)
    }

    pub fn encode(&self, img: &Image) -> Code {
        self.encode_batch(&img.pixels, 1)
    }

    /// Decode a batch of codes ([batch * 32]) to images ([batch * 784]),
    /// all pixels in (0, 1).
    pub fn decode_batch(&self, codes: &[f32], batch: usize) -> Vec<f32> {
        debug_assert_eq!(codes.len(), batch * CODE_DIM);
        let mut h = self.dec1.forward(codes, batch);
        relu_inplace(&mut h);
        let mut out = self.dec2.forward(&h, batch);
        sigmoid_inplace(&mut out);
        out
    }

    pub fn decode(&self, code: &[f32]) -> Result<Image> {
        if code.len() != CODE_DIM {
            return Err(Error::Shape(format!(
                "code must have {CODE_DIM} values, got {}",
                code.len()
            )));
        }
        Image::new(self.decode_batch(code, 1))
    }

    pub fn all_finite(&self) -> bool {
        [&self.enc1, &self.enc2, &self.dec1, &self.dec2]
            .iter()
            .all(|l| l.w.all_finite() && l.b.all_finite())
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new("autoencoder")
            .with_meta("seed", seed)
            .with_meta("code_dim", CODE_DIM)
            .with_meta("hidden", HIDDEN);
        for (name, l) in [
            ("enc1", &self.enc1),
            ("enc2", &self.enc2),
            ("dec1", &self.dec1),
            ("dec2", &self.dec2),
        ] {
            ck.push_tensor(&format!("{name}.w"), l.w.clone());
            ck.push_tensor(&format!("{name}.b"), l.b.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let layer = |name: &str| -> Result<DenseLayer> {
            Ok(DenseLayer {
                w: ck.tensor(&format!("{name}.w"))?.clone(),
                b: ck.tensor(&format!("{name}.b"))?.clone(),
            })
        };
        Ok(AutoencoderParams {
            enc1: layer("enc1")?,
            enc2: layer("enc2")?,
            dec1: layer("dec1")?,
            dec2: layer("dec2")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AeTrainReport {
    /// Mean reconstruction MSE of each epoch's training pass.
    pub epoch_mse: Vec<f64>,
}

impl AeTrainReport {
    pub fn final_mse(&self) -> Option<f64> {
        self.epoch_mse.last().copied()
    }
}

/// Train the autoencoder on geometrically augmented images; the
/// reconstruction target is the augmented image itself.
pub fn train_autoencoder(
    ds: &Dataset,
    epochs: usize,
    seed: u64,
    batch_size: usize,
    lr: f64,
) -> Result<(AutoencoderParams, AeTrainReport)> {
    if ds.is_empty() {
        return Err(Error::Contract("cannot train autoencoder on an empty dataset".into()));
    }
    let mut params = AutoencoderParams::init(seed);
    let mut opt: Optimizer<f32> = Optimizer::new(OptMode::adam_with_lr(lr), &params.param_shapes());
    let mut report = AeTrainReport { epoch_mse: Vec::new() };

    for epoch in 0..epochs {
        let mut aug_rng = seeded_rng(derive_seed(seed, 2 * epoch as u64 + 1));
        let mut epoch_sq_sum = 0.0f64;
        for batch in ds.batches(batch_size, derive_seed(seed, 2 * epoch as u64)) {
            let b = batch.len();
            let mut xs = Vec::with_capacity(b * IMG_PIXELS);
            for &idx in &batch {
                let (aug, _) = random_augment_with(&ds.items[idx].image, &mut aug_rng);
                xs.extend_from_slice(&aug.pixels);
            }
            let mut g = crate::tensor::Graph::new();
            let x = g.constant(Tensor::new(vec![b, IMG_PIXELS], xs)?);
            let (h1, e1w, e1b) = params.enc1.graph(&mut g, x, true)?;
            let h1 = g.relu(h1);
            let (code, e2w, e2b) = params.enc2.graph(&mut g, h1, true)?;
            let (h2, d1w, d1b) = params.dec1.graph(&mut g, code, true)?;
            let h2 = g.relu(h2);
            let (out, d2w, d2b) = params.dec2.graph(&mut g, h2, true)?;
            let out = g.sigmoid(out);
            let loss = g.mse(out, x)?;
            epoch_sq_sum += g.value(loss).data()[0] as f64 * b as f64;

            let mut grads = g.backward(loss)?;
            let ids = [e1w, e1b, e2w, e2b, d1w, d1b, d2w, d2b];
            let grad_vec: Vec<_> = ids.iter().map(|&id| grads.take(id)).collect();
            let mut layers = params.layers_mut();
            let mut refs: Vec<&mut Tensor<f32>> = Vec::with_capacity(8);
            for l in layers.iter_mut() {
                refs.push(&mut l.w);
                refs.push(&mut l.b);
            }
            opt.step(&mut refs, &grad_vec)?;
        }
        report.epoch_mse.push(epoch_sq_sum / ds.len() as f64);
        if !params.all_finite() {
            return Err(Error::Contract(format!(
                "non-finite autoencoder parameters after epoch {epoch}"
            )));
        }
    }
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::warp::triangle_glyph;

    fn tiny_dataset(n: usize) -> Dataset {
        let mut items = Vec::new();
        let mut rng = seeded_rng(7);
        for i in 0..n {
            let (img, _) = random_augment_with(&triangle_glyph(), &mut rng);
            items.push(crate::data::LabeledImage {
                image: img,
                label: (i % 10) as u8,
            });
        }
        Dataset {
            items,
            split: Split::Train,
        }
    }

    #[test]
    fn encode_decode_shapes_and_determinism() {
        let p = AutoencoderParams::init(3);
        let img = triangle_glyph();
        let c1 = p.encode(&img);
        let c2 = p.encode(&img);
        assert_eq!(c1.len(), CODE_DIM);
        assert_eq!(c1, c2);
        let out = p.decode(&c1).unwrap();
        assert_eq!(out.pixels.len(), IMG_PIXELS);
        assert!(out.pixels.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(p.decode(&vec![0.0; 31]).is_err());
    }

    #[test]
    fn zero_image_zero_weights_gives_second_layer_bias() {
        let mut p = AutoencoderParams {
            enc1: DenseLayer::zeros(HIDDEN, IMG_PIXELS),
            enc2: DenseLayer::zeros(CODE_DIM, HIDDEN),
            dec1: DenseLayer::zeros(HIDDEN, CODE_DIM),
            dec2: DenseLayer::zeros(IMG_PIXELS, HIDDEN),
        };
        for (i, v) in p.enc2.b.data_mut().iter_mut().enumerate() {
            *v = i as f32 * 0.1 - 1.0;
        }
        let code = p.encode(&Image::zeros());
        assert_eq!(code.as_slice(), p.enc2.b.data());
    }

    #[test]
    fn zero_epochs_returns_seeded_init() {
        let ds = tiny_dataset(8);
        let (p, report) = train_autoencoder(&ds, 0, 11, 4, 1e-3).unwrap();
        assert_eq!(p, AutoencoderParams::init(11));
        assert!(report.final_mse().is_none());
    }

    #[test]
    fn empty_dataset_is_contract_error() {
        let ds = Dataset {
            items: vec![],
            split: Split::Train,
        };
        assert!(matches!(
            train_autoencoder(&ds, 1, 0, 4, 1e-3),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn training_reduces_loss_on_fixed_seed() {
        let ds = tiny_dataset(32);
        let (p, report) = train_autoencoder(&ds, 5, 1, 8, 1e-3).unwrap();
        assert!(report.epoch_mse[4] < report.epoch_mse[0]);
        assert!(p.all_finite());
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = AutoencoderParams::init(5);
        let ck = p.to_checkpoint(5);
        let back = AutoencoderParams::from_checkpoint(&ck).unwrap();
        assert_eq!(p, back);
    }
}
