//! Weight-shared classifier over the 405-context grid.
//!
//! One detector layer is applied to every context code; a per-channel global
//! max across contexts yields 64 position-invariant features, and a small
//! softmax head reads out the digit. The autoencoder and context bank are
//! passed by shared reference, so only the detector and head learn here.

use crate::autoencoder::{AutoencoderParams, CODE_DIM};
use crate::context::{ContextBank, ContextGrid};
use crate::data::{Dataset, IMG_PIXELS};
use crate::error::{Error, Result};
use crate::layers::{derive_seed, relu_inplace, DenseLayer};
use crate::store::Checkpoint;
use crate::tensor::{kernels, seeded_rng, Graph, OptMode, Optimizer, Tensor};
use crate::warp::{random_augment_with, NUM_CONTEXTS};
use rand_chacha::ChaCha8Rng;

pub const NUM_CLASSES: usize = 10;
/// Detector channels = features entering the head.
pub const FEATURES: usize = 64;
/// Above this many training images, context grids are rebuilt every batch
/// instead of being cached (a cached 60k-image grid set would need ~3 GB).
pub const GRID_CACHE_LIMIT: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub detector: DenseLayer, // 32 -> 64, relu, shared across contexts
    pub head: DenseLayer,     // 64 -> 10, softmax
}

impl ClassifierParams {
    pub fn init(seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        ClassifierParams {
            detector: DenseLayer::init(FEATURES, CODE_DIM, &mut rng),
            head: DenseLayer::init(NUM_CLASSES, FEATURES, &mut rng),
        }
    }

    pub fn all_finite(&self) -> bool {
        [&self.detector, &self.head]
            .iter()
            .all(|l| l.w.all_finite() && l.b.all_finite())
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new("classifier")
            .with_meta("seed", seed)
            .with_meta("features", FEATURES)
            .with_meta("classes", NUM_CLASSES);
        ck.push_tensor("detector.w", self.detector.w.clone());
        ck.push_tensor("detector.b", self.detector.b.clone());
        ck.push_tensor("head.w", self.head.w.clone());
        ck.push_tensor("head.b", self.head.b.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(ClassifierParams {
            detector: DenseLayer {
                w: ck.tensor("detector.w")?.clone(),
                b: ck.tensor("detector.b")?.clone(),
            },
            head: DenseLayer {
                w: ck.tensor("head.w")?.clone(),
                b: ck.tensor("head.b")?.clone(),
            },
        })
    }
}

/// Detector activations for every context: [405 * 64], relu applied.
pub fn context_features(grid: &ContextGrid, params: &ClassifierParams) -> Vec<f32> {
    let mut f = params.detector.forward(grid.flat(), NUM_CONTEXTS);
    relu_inplace(&mut f);
    f
}

/// Per-channel max over contexts; ties resolve to the lowest context index.
pub fn global_max(features: &[f32]) -> (Vec<f32>, Vec<u32>) {
    let mut out = vec![0.0f32; FEATURES];
    let mut argmax = Vec::new();
    kernels::rowmax_forward(features, 1, NUM_CONTEXTS, FEATURES, &mut out, &mut argmax);
    (out, argmax)
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub probs: Vec<f32>,
    pub label: u8,
    /// Winning context index for each of the 64 detector channels.
    pub winning_contexts: Vec<u32>,
}

fn argmax_row(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Classify a precomputed context grid.
pub fn classify(grid: &ContextGrid, params: &ClassifierParams) -> Prediction {
    let features = context_features(grid, params);
    let (pooled, winning) = global_max(&features);
    let logits = params.head.forward(&pooled, 1);
    let mut probs = vec![0.0f32; NUM_CLASSES];
    kernels::softmax_rows(&logits, 1, NUM_CLASSES, &mut probs);
    let label = argmax_row(&probs) as u8;
    Prediction {
        probs,
        label,
        winning_contexts: winning,
    }
}

/// Context grids for a batch of codes, image-major: [n * 405 * 32].
/// Each net is applied to the whole batch at once; per-image results are
/// identical to building grids one image at a time.
pub fn batch_grids(codes: &[f32], n: usize, bank: &ContextBank) -> Vec<f32> {
    debug_assert_eq!(codes.len(), n * CODE_DIM);
    let mut grids = vec![0.0f32; n * NUM_CONTEXTS * CODE_DIM];
    for (j, net) in bank.nets.iter().enumerate() {
        let out = net.apply_batch(codes, n);
        for i in 0..n {
            let dst = (i * NUM_CONTEXTS + j) * CODE_DIM;
            grids[dst..dst + CODE_DIM].copy_from_slice(&out[i * CODE_DIM..(i + 1) * CODE_DIM]);
        }
    }
    grids
}

fn grids_for_indices(
    ds: &Dataset,
    idx: &[usize],
    ae: &AutoencoderParams,
    bank: &ContextBank,
    aug_rng: Option<&mut ChaCha8Rng>,
) -> Vec<f32> {
    let mut flat = Vec::with_capacity(idx.len() * IMG_PIXELS);
    match aug_rng {
        Some(rng) => {
            for &i in idx {
                let (img, _) = random_augment_with(&ds.items[i].image, rng);
                flat.extend_from_slice(&img.pixels);
            }
        }
        None => {
            for &i in idx {
                flat.extend_from_slice(&ds.items[i].image.pixels);
            }
        }
    }
    let codes = ae.encode_batch(&flat, idx.len());
    batch_grids(&codes, idx.len(), bank)
}

#[derive(Debug, Clone)]
pub struct ClfTrainReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_train_acc: Vec<f64>,
}

/// Train detector and head with cross-entropy; gradients stop at the grid,
/// which enters the tape as a constant. With `augment`, every batch image
/// passes through a random geometric warp before encoding.
pub fn train_classifier_opts(
    ds: &Dataset,
    ae: &AutoencoderParams,
    bank: &ContextBank,
    epochs: usize,
    seed: u64,
    batch_size: usize,
    lr: f64,
    augment: bool,
) -> Result<(ClassifierParams, ClfTrainReport)> {
    if ds.is_empty() {
        return Err(Error::Contract("cannot train classifier on an empty dataset".into()));
    }
    if bank.nets.len() != NUM_CONTEXTS {
        return Err(Error::Dependency(format!(
            "context bank holds {} nets, expected {NUM_CONTEXTS}",
            bank.nets.len()
        )));
    }
    let mut params = ClassifierParams::init(seed);
    let shapes = vec![
        params.detector.w.shape().to_vec(),
        params.detector.b.shape().to_vec(),
        params.head.w.shape().to_vec(),
        params.head.b.shape().to_vec(),
    ];
    let mut opt: Optimizer<f32> = Optimizer::new(OptMode::adam_with_lr(lr), &shapes);
    let mut report = ClfTrainReport {
        epoch_loss: Vec::new(),
        epoch_train_acc: Vec::new(),
    };

    let cached: Option<Vec<f32>> = if !augment && ds.len() <= GRID_CACHE_LIMIT {
        let all: Vec<usize> = (0..ds.len()).collect();
        Some(grids_for_indices(ds, &all, ae, bank, None))
    } else {
        None
    };
    let grid_f32s = NUM_CONTEXTS * CODE_DIM;

    for epoch in 0..epochs {
        let mut aug_rng = seeded_rng(derive_seed(seed, 2 * epoch as u64 + 1));
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in ds.batches(batch_size, derive_seed(seed, 2 * epoch as u64)) {
            let b = batch.len();
            let grids = match &cached {
                Some(all) => {
                    let mut g = Vec::with_capacity(b * grid_f32s);
                    for &i in &batch {
                        g.extend_from_slice(&all[i * grid_f32s..(i + 1) * grid_f32s]);
                    }
                    g
                }
                None => grids_for_indices(
                    ds,
                    &batch,
                    ae,
                    bank,
                    augment.then_some(&mut aug_rng),
                ),
            };
            let mut targets = vec![0.0f32; b * NUM_CLASSES];
            for (row, &i) in batch.iter().enumerate() {
                targets[row * NUM_CLASSES + ds.items[i].label as usize] = 1.0;
            }

            let mut g = Graph::new();
            let x = g.constant(Tensor::new(vec![b * NUM_CONTEXTS, CODE_DIM], grids)?);
            let t = g.constant(Tensor::new(vec![b, NUM_CLASSES], targets)?);
            let (f, dw, db) = params.detector.graph(&mut g, x, true)?;
            let f = g.relu(f);
            let pooled = g.rowmax(f, NUM_CONTEXTS)?;
            let (logits, hw, hb) = params.head.graph(&mut g, pooled, true)?;
            let probs = g.softmax(logits);
            let loss = g.cross_entropy(probs, t)?;
            loss_sum += g.value(loss).data()[0] as f64 * b as f64;
            let p = g.value(probs).data();
            for (row, &i) in batch.iter().enumerate() {
                let pred = argmax_row(&p[row * NUM_CLASSES..(row + 1) * NUM_CLASSES]);
                if pred == ds.items[i].label as usize {
                    correct += 1;
                }
            }

            let mut grads = g.backward(loss)?;
            let grad_vec: Vec<_> = [dw, db, hw, hb].iter().map(|&id| grads.take(id)).collect();
            opt.step(
                &mut [
                    &mut params.detector.w,
                    &mut params.detector.b,
                    &mut params.head.w,
                    &mut params.head.b,
                ],
                &grad_vec,
            )?;
        }
        report.epoch_loss.push(loss_sum / ds.len() as f64);
        report.epoch_train_acc.push(correct as f64 / ds.len() as f64);
        if !params.all_finite() {
            return Err(Error::Contract(format!(
                "non-finite classifier parameters after epoch {epoch}"
            )));
        }
    }
    Ok((params, report))
}

/// `train_classifier_opts` without augmentation (the default regime: the
/// context bank supplies the invariance).
pub fn train_classifier(
    ds: &Dataset,
    ae: &AutoencoderParams,
    bank: &ContextBank,
    epochs: usize,
    seed: u64,
    batch_size: usize,
    lr: f64,
) -> Result<(ClassifierParams, ClfTrainReport)> {
    train_classifier_opts(ds, ae, bank, epochs, seed, batch_size, lr, false)
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub correct: usize,
    pub total: usize,
    /// confusion[true][predicted]
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Accuracy and confusion matrix of the full pipeline over a dataset.
pub fn evaluate(
    ds: &Dataset,
    ae: &AutoencoderParams,
    bank: &ContextBank,
    params: &ClassifierParams,
) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty dataset".into()));
    }
    let mut report = EvalReport {
        correct: 0,
        total: ds.len(),
        confusion: [[0; NUM_CLASSES]; NUM_CLASSES],
    };
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(256) {
        let b = chunk.len();
        let grids = grids_for_indices(ds, chunk, ae, bank, None);
        let mut features = params.detector.forward(&grids, b * NUM_CONTEXTS);
        relu_inplace(&mut features);
        let mut pooled = vec![0.0f32; b * FEATURES];
        let mut argmax = Vec::new();
        kernels::rowmax_forward(&features, b, NUM_CONTEXTS, FEATURES, &mut pooled, &mut argmax);
        let logits = params.head.forward(&pooled, b);
        let mut probs = vec![0.0f32; b * NUM_CLASSES];
        kernels::softmax_rows(&logits, b, NUM_CLASSES, &mut probs);
        for (row, &i) in chunk.iter().enumerate() {
            let pred = argmax_row(&probs[row * NUM_CLASSES..(row + 1) * NUM_CLASSES]);
            let truth = ds.items[i].label as usize;
            report.confusion[truth][pred] += 1;
            if pred == truth {
                report.correct += 1;
            }
        }
    }
    Ok(report)
}
