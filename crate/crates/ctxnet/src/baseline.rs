//! Conventional CNN trained on the same data as the context pipeline:
//! conv(64,5x5) relu -> pool -> conv(128,5x5) relu -> pool -> fc 256 relu
//! -> fc 10 softmax, valid padding, stride 1.

use crate::classifier::NUM_CLASSES;
use crate::data::{Dataset, Image, IMG_SIDE};
use crate::error::{Error, Result};
use crate::layers::{derive_seed, DenseLayer};
use crate::store::Checkpoint;
use crate::tensor::{glorot_uniform, seeded_rng, Graph, NodeId, OptMode, Optimizer, Tensor};
use crate::warp::random_augment_with;

const C1: usize = 64;
const C2: usize = 128;
const K: usize = 5;
const FC1: usize = 256;
/// 128 channels * 4 * 4 after the second pool.
const FLAT: usize = C2 * 4 * 4;

/// Kernel [out, in, kh, kw] and per-channel bias of one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub k: Tensor<f32>,
    pub b: Tensor<f32>,
}

impl ConvLayer {
    fn init(c_out: usize, c_in: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        ConvLayer {
            k: glorot_uniform(
                vec![c_out, c_in, K, K],
                c_in * K * K,
                c_out * K * K,
                rng,
            ),
            b: Tensor::zeros(vec![c_out]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub conv1: ConvLayer, // 64 x 1 x 5 x 5
    pub conv2: ConvLayer, // 128 x 64 x 5 x 5
    pub fc1: DenseLayer,  // 2048 -> 256, relu
    pub fc2: DenseLayer,  // 256 -> 10, softmax
}

impl BaselineParams {
    pub fn init(seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        BaselineParams {
            conv1: ConvLayer::init(C1, 1, &mut rng),
            conv2: ConvLayer::init(C2, C1, &mut rng),
            fc1: DenseLayer::init(FC1, FLAT, &mut rng),
            fc2: DenseLayer::init(NUM_CLASSES, FC1, &mut rng),
        }
    }

    pub fn num_params(&self) -> usize {
        [
            self.conv1.k.len(),
            self.conv1.b.len(),
            self.conv2.k.len(),
            self.conv2.b.len(),
            self.fc1.w.len(),
            self.fc1.b.len(),
            self.fc2.w.len(),
            self.fc2.b.len(),
        ]
        .iter()
        .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.conv1.k.all_finite()
            && self.conv1.b.all_finite()
            && self.conv2.k.all_finite()
            && self.conv2.b.all_finite()
            && self.fc1.w.all_finite()
            && self.fc1.b.all_finite()
            && self.fc2.w.all_finite()
            && self.fc2.b.all_finite()
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new("baseline").with_meta("seed", seed);
        ck.push_tensor("conv1.k", self.conv1.k.clone());
        ck.push_tensor("conv1.b", self.conv1.b.clone());
        ck.push_tensor("conv2.k", self.conv2.k.clone());
        ck.push_tensor("conv2.b", self.conv2.b.clone());
        ck.push_tensor("fc1.w", self.fc1.w.clone());
        ck.push_tensor("fc1.b", self.fc1.b.clone());
        ck.push_tensor("fc2.w", self.fc2.w.clone());
        ck.push_tensor("fc2.b", self.fc2.b.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(BaselineParams {
            conv1: ConvLayer {
                k: ck.tensor("conv1.k")?.clone(),
                b: ck.tensor("conv1.b")?.clone(),
            },
            conv2: ConvLayer {
                k: ck.tensor("conv2.k")?.clone(),
                b: ck.tensor("conv2.b")?.clone(),
            },
            fc1: DenseLayer {
                w: ck.tensor("fc1.w")?.clone(),
                b: ck.tensor("fc1.b")?.clone(),
            },
            fc2: DenseLayer {
                w: ck.tensor("fc2.w")?.clone(),
                b: ck.tensor("fc2.b")?.clone(),
            },
        })
    }
}

struct TapeLeaves {
    probs: NodeId,
    ids: [NodeId; 8],
}

/// Build the full forward chain on a tape; `pixels` is [b * 784].
fn forward_tape(
    g: &mut Graph<f32>,
    params: &BaselineParams,
    pixels: Vec<f32>,
    b: usize,
    trainable: bool,
) -> Result<TapeLeaves> {
    let x = g.constant(Tensor::new(vec![b, 1, IMG_SIDE, IMG_SIDE], pixels)?);
    let k1 = g.leaf(params.conv1.k.clone(), trainable);
    let b1 = g.leaf(params.conv1.b.clone(), trainable);
    let h = g.conv2d(x, k1, b1)?; // b x 64 x 24 x 24
    let h = g.relu(h);
    let h = g.maxpool2d(h)?; // b x 64 x 12 x 12
    let k2 = g.leaf(params.conv2.k.clone(), trainable);
    let b2 = g.leaf(params.conv2.b.clone(), trainable);
    let h = g.conv2d(h, k2, b2)?; // b x 128 x 8 x 8
    let h = g.relu(h);
    let h = g.maxpool2d(h)?; // b x 128 x 4 x 4
    let h = g.reshape(h, vec![b, FLAT])?;
    let (h, f1w, f1b) = params.fc1.graph(g, h, trainable)?;
    let h = g.relu(h);
    let (logits, f2w, f2b) = params.fc2.graph(g, h, trainable)?;
    let probs = g.softmax(logits);
    Ok(TapeLeaves {
        probs,
        ids: [k1, b1, k2, b2, f1w, f1b, f2w, f2b],
    })
}

/// Class probabilities for one image.
pub fn baseline_forward(img: &Image, params: &BaselineParams) -> Result<Vec<f32>> {
    let mut g = Graph::new();
    let tape = forward_tape(&mut g, params, img.pixels.clone(), 1, false)?;
    Ok(g.value(tape.probs).data().to_vec())
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Test accuracy and confusion matrix of a trained baseline.
pub fn evaluate_baseline(ds: &Dataset, params: &BaselineParams) -> Result<crate::classifier::EvalReport> {
    if ds.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty dataset".into()));
    }
    let mut report = crate::classifier::EvalReport {
        correct: 0,
        total: ds.len(),
        confusion: [[0; NUM_CLASSES]; NUM_CLASSES],
    };
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(100) {
        let b = chunk.len();
        let mut pixels = Vec::with_capacity(b * IMG_SIDE * IMG_SIDE);
        for &i in chunk {
            pixels.extend_from_slice(&ds.items[i].image.pixels);
        }
        let mut g = Graph::new();
        let tape = forward_tape(&mut g, params, pixels, b, false)?;
        let probs = g.value(tape.probs).data();
        for (row, &i) in chunk.iter().enumerate() {
            let pred = argmax(&probs[row * NUM_CLASSES..(row + 1) * NUM_CLASSES]);
            let truth = ds.items[i].label as usize;
            report.confusion[truth][pred] += 1;
            if pred == truth {
                report.correct += 1;
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct BaselineTrainReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_train_acc: Vec<f64>,
    /// Set when training stopped before the requested epoch count.
    pub stopped_at: Option<usize>,
    pub test_accuracy: f64,
}

/// Epochs without relative train-loss improvement before early stop.
const PATIENCE: usize = 3;
const MIN_REL_IMPROVEMENT: f64 = 1e-3;

/// Cross-entropy training; with `augment` every batch image passes through
/// a random geometric warp before the forward pass. Returns the trained
/// parameters and the accuracy on the test split.
pub fn train_baseline(
    train: &Dataset,
    test: &Dataset,
    epochs: usize,
    augment: bool,
    seed: u64,
    batch_size: usize,
    lr: f64,
) -> Result<(BaselineParams, BaselineTrainReport)> {
    if train.is_empty() {
        return Err(Error::Contract("cannot train baseline on an empty dataset".into()));
    }
    let mut params = BaselineParams::init(seed);
    let shapes = vec![
        params.conv1.k.shape().to_vec(),
        params.conv1.b.shape().to_vec(),
        params.conv2.k.shape().to_vec(),
        params.conv2.b.shape().to_vec(),
        params.fc1.w.shape().to_vec(),
        params.fc1.b.shape().to_vec(),
        params.fc2.w.shape().to_vec(),
        params.fc2.b.shape().to_vec(),
    ];
    let mut opt: Optimizer<f32> = Optimizer::new(OptMode::adam_with_lr(lr), &shapes);
    let mut report = BaselineTrainReport {
        epoch_loss: Vec::new(),
        epoch_train_acc: Vec::new(),
        stopped_at: None,
        test_accuracy: 0.0,
    };
    let mut best_loss = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..epochs {
        let mut aug_rng = seeded_rng(derive_seed(seed, 2 * epoch as u64 + 1));
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in train.batches(batch_size, derive_seed(seed, 2 * epoch as u64)) {
            let b = batch.len();
            let mut pixels = Vec::with_capacity(b * IMG_SIDE * IMG_SIDE);
            let mut targets = vec![0.0f32; b * NUM_CLASSES];
            for (row, &i) in batch.iter().enumerate() {
                if augment {
                    let (img, _) = random_augment_with(&train.items[i].image, &mut aug_rng);
                    pixels.extend_from_slice(&img.pixels);
                } else {
                    pixels.extend_from_slice(&train.items[i].image.pixels);
                }
                targets[row * NUM_CLASSES + train.items[i].label as usize] = 1.0;
            }
            let mut g = Graph::new();
            let tape = forward_tape(&mut g, &params, pixels, b, true)?;
            let t = g.constant(Tensor::new(vec![b, NUM_CLASSES], targets)?);
            let loss = g.cross_entropy(tape.probs, t)?;
            loss_sum += g.value(loss).data()[0] as f64 * b as f64;
            let p = g.value(tape.probs).data();
            for (row, &i) in batch.iter().enumerate() {
                if argmax(&p[row * NUM_CLASSES..(row + 1) * NUM_CLASSES])
                    == train.items[i].label as usize
                {
                    correct += 1;
                }
            }
            let mut grads = g.backward(loss)?;
            let grad_vec: Vec<_> = tape.ids.iter().map(|&id| grads.take(id)).collect();
            opt.step(
                &mut [
                    &mut params.conv1.k,
                    &mut params.conv1.b,
                    &mut params.conv2.k,
                    &mut params.conv2.b,
                    &mut params.fc1.w,
                    &mut params.fc1.b,
                    &mut params.fc2.w,
                    &mut params.fc2.b,
                ],
                &grad_vec,
            )?;
        }
        let epoch_loss = loss_sum / train.len() as f64;
        report.epoch_loss.push(epoch_loss);
        report.epoch_train_acc.push(correct as f64 / train.len() as f64);
        if !params.all_finite() {
            return Err(Error::Contract(format!(
                "non-finite baseline parameters after epoch {epoch}"
            )));
        }
        if epoch_loss < best_loss * (1.0 - MIN_REL_IMPROVEMENT) {
            best_loss = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= PATIENCE {
                report.stopped_at = Some(epoch + 1);
                break;
            }
        }
    }
    report.test_accuracy = if test.is_empty() {
        0.0
    } else {
        evaluate_baseline(test, &params)?.accuracy()
    };
    Ok((params, report))
}
