//! The 405 per-context transformation networks: each maps the code of an
//! image to the code of the geometrically transformed image. The autoencoder
//! is taken by shared reference everywhere, so its weights cannot change
//! while the bank trains.

use crate::autoencoder::{AutoencoderParams, Code, CODE_DIM};
use crate::data::{Dataset, Image, IMG_PIXELS, IMG_SIDE};
use crate::error::{Error, Result};
use crate::layers::{derive_seed, relu_inplace, DenseLayer};
use crate::store::Checkpoint;
use crate::tensor::{seeded_rng, Graph, OptMode, Optimizer, Tensor};
use crate::warp::{context_grid, warp_affine, NUM_CONTEXTS};
use rayon::prelude::*;

/// Context-net hidden width (32 -> 128 -> 32).
pub const CTX_HIDDEN: usize = 128;
const BATCH: usize = 64;

/// One single-hidden-layer transformation net.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextNet {
    pub hidden: DenseLayer, // 32 -> 64, relu
    pub output: DenseLayer, // 64 -> 32, linear
}

impl ContextNet {
    pub fn init(seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        ContextNet {
            hidden: DenseLayer::init(CTX_HIDDEN, CODE_DIM, &mut rng),
            output: DenseLayer::init(CODE_DIM, CTX_HIDDEN, &mut rng),
        }
    }

    /// Forward pass over a batch of codes ([batch * 32]).
    pub fn apply_batch(&self, codes: &[f32], batch: usize) -> Vec<f32> {
        let mut h = self.hidden.forward(codes, batch);
        relu_inplace(&mut h);
        self.output.forward(&h, batch)
    }
}

/// Re-express one code under a context.
pub fn apply_context(code: &[f32], net: &ContextNet) -> Code {
    net.apply_batch(code, 1)
}

/// The full bank: exactly one net per grid index.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBank {
    pub nets: Vec<ContextNet>,
}

/// The 405 codes produced by applying every context net to one input code,
/// stored flat in grid order ([405 * 32]).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextGrid {
    data: Vec<f32>,
}

impl ContextGrid {
    pub fn code(&self, ctx: usize) -> &[f32] {
        &self.data[ctx * CODE_DIM..(ctx + 1) * CODE_DIM]
    }

    pub fn flat(&self) -> &[f32] {
        &self.data
    }

    pub fn from_flat(data: Vec<f32>) -> Result<Self> {
        if data.len() != NUM_CONTEXTS * CODE_DIM {
            return Err(Error::Shape(format!(
                "context grid needs {} values, got {}",
                NUM_CONTEXTS * CODE_DIM,
                data.len()
            )));
        }
        Ok(ContextGrid { data })
    }

    pub fn len(&self) -> usize {
        NUM_CONTEXTS
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// grid[i] = net_i(code) for every context.
pub fn build_context_grid(code: &[f32], bank: &ContextBank) -> Result<ContextGrid> {
    if bank.nets.len() != NUM_CONTEXTS {
        return Err(Error::Dependency(format!(
            "context bank holds {} nets, expected {NUM_CONTEXTS}",
            bank.nets.len()
        )));
    }
    let mut data = Vec::with_capacity(NUM_CONTEXTS * CODE_DIM);
    for net in &bank.nets {
        data.extend(apply_context(code, net));
    }
    Ok(ContextGrid { data })
}

/// Code pairs for one context: (encode(x), encode(warp(x, params))).
fn context_pairs(
    ds: &Dataset,
    ae: &AutoencoderParams,
    inputs: &[f32],
    ctx_index: usize,
) -> Vec<f32> {
    let params = context_grid()[ctx_index];
    let n = ds.len();
    debug_assert_eq!(inputs.len(), n * CODE_DIM);
    let mut warped = Vec::with_capacity(n * IMG_PIXELS);
    for item in &ds.items {
        warped.extend(warp_affine(&item.image, &params).pixels);
    }
    ae.encode_batch(&warped, n)
}

/// Encode every dataset image once; shared input side of all 405 pair sets.
pub fn encode_dataset(ds: &Dataset, ae: &AutoencoderParams) -> Vec<f32> {
    let mut flat = Vec::with_capacity(ds.len() * IMG_PIXELS);
    for item in &ds.items {
        flat.extend_from_slice(&item.image.pixels);
    }
    ae.encode_batch(&flat, ds.len())
}

fn train_net_on_pairs(
    inputs: &[f32],
    targets: &[f32],
    n: usize,
    epochs: usize,
    seed: u64,
    lr: f64,
) -> Result<ContextNet> {
    let mut net = ContextNet::init(seed);
    let shapes = vec![
        net.hidden.w.shape().to_vec(),
        net.hidden.b.shape().to_vec(),
        net.output.w.shape().to_vec(),
        net.output.b.shape().to_vec(),
    ];
    let mut opt: Optimizer<f32> = Optimizer::new(OptMode::adam_with_lr(lr), &shapes);
    let order_template: Vec<usize> = (0..n).collect();
    for epoch in 0..epochs {
        let mut order = order_template.clone();
        use rand::seq::SliceRandom;
        order.shuffle(&mut seeded_rng(derive_seed(seed, epoch as u64)));
        for chunk in order.chunks(BATCH) {
            let b = chunk.len();
            let mut x = Vec::with_capacity(b * CODE_DIM);
            let mut t = Vec::with_capacity(b * CODE_DIM);
            for &i in chunk {
                x.extend_from_slice(&inputs[i * CODE_DIM..(i + 1) * CODE_DIM]);
                t.extend_from_slice(&targets[i * CODE_DIM..(i + 1) * CODE_DIM]);
            }
            let mut g = Graph::new();
            let xi = g.constant(Tensor::new(vec![b, CODE_DIM], x)?);
            let ti = g.constant(Tensor::new(vec![b, CODE_DIM], t)?);
            let (h, hw, hb) = net.hidden.graph(&mut g, xi, true)?;
            let h = g.relu(h);
            let (y, ow, ob) = net.output.graph(&mut g, h, true)?;
            let loss = g.mse(y, ti)?;
            let mut grads = g.backward(loss)?;
            let grad_vec: Vec<_> = [hw, hb, ow, ob].iter().map(|&id| grads.take(id)).collect();
            opt.step(
                &mut [
                    &mut net.hidden.w,
                    &mut net.hidden.b,
                    &mut net.output.w,
                    &mut net.output.b,
                ],
                &grad_vec,
            )?;
        }
    }
    if !(net.hidden.w.all_finite()
        && net.hidden.b.all_finite()
        && net.output.w.all_finite()
        && net.output.b.all_finite())
    {
        return Err(Error::Contract("non-finite context-net parameters".into()));
    }
    Ok(net)
}

/// Train the net for one context on (code, transformed-code) pairs drawn
/// from the dataset. The autoencoder is frozen by construction.
pub fn train_context_net(
    ctx_index: usize,
    ds: &Dataset,
    ae: &AutoencoderParams,
    epochs: usize,
    seed: u64,
    lr: f64,
) -> Result<ContextNet> {
    if ctx_index >= NUM_CONTEXTS {
        return Err(Error::Range(format!(
            "context index {ctx_index} outside [0,{}]",
            NUM_CONTEXTS - 1
        )));
    }
    if ds.is_empty() {
        return Err(Error::Contract("cannot train a context net on an empty dataset".into()));
    }
    let inputs = encode_dataset(ds, ae);
    let targets = context_pairs(ds, ae, &inputs, ctx_index);
    train_net_on_pairs(
        &inputs,
        &targets,
        ds.len(),
        epochs,
        seed ^ ctx_index as u64,
        lr,
    )
}

/// Train all 405 nets, fanning out over `jobs` worker threads. Each net gets
/// the derived seed `seed ^ index` and no shared mutable state, so results
/// are identical for any parallelism degree.
pub fn train_all_contexts(
    ds: &Dataset,
    ae: &AutoencoderParams,
    epochs: usize,
    seed: u64,
    jobs: usize,
    lr: f64,
) -> Result<ContextBank> {
    if ds.is_empty() {
        return Err(Error::Contract("cannot train context nets on an empty dataset".into()));
    }
    let inputs = encode_dataset(ds, ae);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    let nets: Vec<ContextNet> = pool.install(|| {
        (0..NUM_CONTEXTS)
            .into_par_iter()
            .map(|ctx| {
                let targets = context_pairs(ds, ae, &inputs, ctx);
                train_net_on_pairs(&inputs, &targets, ds.len(), epochs, seed ^ ctx as u64, lr)
                    .map_err(|e| Error::Contract(format!("context {ctx}: {e}")))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(ContextBank { nets })
}

/// Mosaic dimensions: 27 columns x 15 rows of 28x28 tiles.
pub const MOSAIC_COLS: usize = 27;
pub const MOSAIC_ROWS: usize = 15;
pub const MOSAIC_W: usize = MOSAIC_COLS * IMG_SIDE;
pub const MOSAIC_H: usize = MOSAIC_ROWS * IMG_SIDE;

/// Decode all 405 grid codes and tile them row-major into a 756x420 raster.
pub fn mosaic(grid: &ContextGrid, ae: &AutoencoderParams) -> Vec<f32> {
    let decoded = ae.decode_batch(grid.flat(), NUM_CONTEXTS);
    let mut out = vec![0.0f32; MOSAIC_W * MOSAIC_H];
    for i in 0..NUM_CONTEXTS {
        let (row, col) = (i / MOSAIC_COLS, i % MOSAIC_COLS);
        let tile = &decoded[i * IMG_PIXELS..(i + 1) * IMG_PIXELS];
        for y in 0..IMG_SIDE {
            let dst = (row * IMG_SIDE + y) * MOSAIC_W + col * IMG_SIDE;
            out[dst..dst + IMG_SIDE].copy_from_slice(&tile[y * IMG_SIDE..(y + 1) * IMG_SIDE]);
        }
    }
    out
}

impl ContextBank {
    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new("context-bank")
            .with_meta("seed", seed)
            .with_meta("contexts", NUM_CONTEXTS)
            .with_meta("hidden", CTX_HIDDEN)
            .with_meta("grid", "t9x4px_s9_0.70..1.30_r5_-20..20");
        for (i, net) in self.nets.iter().enumerate() {
            ck.push_tensor(&format!("ctx{i:04}.hidden.w"), net.hidden.w.clone());
            ck.push_tensor(&format!("ctx{i:04}.hidden.b"), net.hidden.b.clone());
            ck.push_tensor(&format!("ctx{i:04}.output.w"), net.output.w.clone());
            ck.push_tensor(&format!("ctx{i:04}.output.b"), net.output.b.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut nets = Vec::with_capacity(NUM_CONTEXTS);
        for i in 0..NUM_CONTEXTS {
            nets.push(ContextNet {
                hidden: DenseLayer {
                    w: ck.tensor(&format!("ctx{i:04}.hidden.w"))?.clone(),
                    b: ck.tensor(&format!("ctx{i:04}.hidden.b"))?.clone(),
                },
                output: DenseLayer {
                    w: ck.tensor(&format!("ctx{i:04}.output.w"))?.clone(),
                    b: ck.tensor(&format!("ctx{i:04}.output.b"))?.clone(),
                },
            });
        }
        Ok(ContextBank { nets })
    }
}

/// Pearson correlation between two equally long pixel vectors.
pub fn pearson(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let dx = x as f64 - ma;
        let dy = y as f64 - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    /// Contexts where the decoded transformed code correlates more strongly
    /// with the warped reconstruction than with the unwarped one.
    pub wins: usize,
    pub total: usize,
}

impl ProbeReport {
    pub fn fraction(&self) -> f64 {
        self.wins as f64 / self.total as f64
    }
}

/// Generalization probe for an unseen glyph: compare each context's decoded
/// output against the warped vs. unwarped reconstruction, pixelwise.
pub fn generalization_probe(
    img: &Image,
    ae: &AutoencoderParams,
    bank: &ContextBank,
) -> Result<ProbeReport> {
    let code = ae.encode(img);
    let recon = ae.decode(&code)?;
    let grid = build_context_grid(&code, bank)?;
    let decoded = ae.decode_batch(grid.flat(), NUM_CONTEXTS);
    let params = context_grid();
    let mut wins = 0;
    for ctx in 0..NUM_CONTEXTS {
        let out = &decoded[ctx * IMG_PIXELS..(ctx + 1) * IMG_PIXELS];
        let warped_recon = warp_affine(&recon, &params[ctx]);
        let with_warped = pearson(out, &warped_recon.pixels);
        let with_plain = pearson(out, &recon.pixels);
        if with_warped > with_plain {
            wins += 1;
        }
    }
    Ok(ProbeReport {
        wins,
        total: NUM_CONTEXTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabeledImage, Split};
    use crate::warp::{random_augment_with, triangle_glyph, IDENTITY_CONTEXT};

    fn tiny_dataset(n: usize) -> Dataset {
        let mut rng = seeded_rng(31);
        Dataset {
            items: (0..n)
                .map(|i| LabeledImage {
                    image: random_augment_with(&triangle_glyph(), &mut rng).0,
                    label: (i % 10) as u8,
                })
                .collect(),
            split: Split::Train,
        }
    }

    #[test]
    fn apply_context_output_length() {
        let net = ContextNet::init(1);
        let code = vec![0.3; CODE_DIM];
        assert_eq!(apply_context(&code, &net).len(), CODE_DIM);
    }

    #[test]
    fn zero_epochs_returns_seeded_init() {
        let ds = tiny_dataset(4);
        let ae = AutoencoderParams::init(2);
        let net = train_context_net(7, &ds, &ae, 0, 5, 1e-3).unwrap();
        assert_eq!(net, ContextNet::init(5 ^ 7));
    }

    #[test]
    fn out_of_range_context_rejected() {
        let ds = tiny_dataset(2);
        let ae = AutoencoderParams::init(2);
        assert!(train_context_net(405, &ds, &ae, 0, 5, 1e-3).is_err());
    }

    #[test]
    fn training_lowers_pair_mse() {
        let ds = tiny_dataset(24);
        let ae = AutoencoderParams::init(2);
        let inputs = encode_dataset(&ds, &ae);
        let targets = context_pairs(&ds, &ae, &inputs, IDENTITY_CONTEXT);
        let mse = |net: &ContextNet| -> f64 {
            let out = net.apply_batch(&inputs, ds.len());
            out.iter()
                .zip(&targets)
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                / out.len() as f64
        };
        let before = mse(&ContextNet::init(5 ^ IDENTITY_CONTEXT as u64));
        let net = train_context_net(IDENTITY_CONTEXT, &ds, &ae, 30, 5, 1e-3).unwrap();
        assert!(mse(&net) < before, "{} vs {before}", mse(&net));
    }

    #[test]
    fn grid_requires_full_bank() {
        let bank = ContextBank {
            nets: vec![ContextNet::init(0); 10],
        };
        assert!(matches!(
            build_context_grid(&vec![0.0; CODE_DIM], &bank),
            Err(Error::Dependency(_))
        ));
    }

    #[test]
    fn grid_definitional_identity_slot() {
        let bank = ContextBank {
            nets: (0..NUM_CONTEXTS).map(|i| ContextNet::init(i as u64)).collect(),
        };
        let code = vec![0.1; CODE_DIM];
        let grid = build_context_grid(&code, &bank).unwrap();
        assert_eq!(grid.len(), NUM_CONTEXTS);
        assert_eq!(
            grid.code(IDENTITY_CONTEXT),
            apply_context(&code, &bank.nets[IDENTITY_CONTEXT]).as_slice()
        );
    }

    #[test]
    fn serial_and_parallel_grid_eval_are_bitwise_identical() {
        let bank = ContextBank {
            nets: (0..NUM_CONTEXTS).map(|i| ContextNet::init(i as u64)).collect(),
        };
        let code = vec![0.25; CODE_DIM];
        let serial = build_context_grid(&code, &bank).unwrap();
        let parallel: Vec<Vec<f32>> = bank
            .nets
            .par_iter()
            .map(|net| apply_context(&code, net))
            .collect();
        let flat: Vec<f32> = parallel.into_iter().flatten().collect();
        assert_eq!(serial.flat(), flat.as_slice());
    }

    #[test]
    fn mosaic_dimensions_and_placement() {
        let ae = AutoencoderParams::init(3);
        let bank = ContextBank {
            nets: (0..NUM_CONTEXTS).map(|i| ContextNet::init(i as u64)).collect(),
        };
        let code = ae.encode(&triangle_glyph());
        let grid = build_context_grid(&code, &bank).unwrap();
        let m = mosaic(&grid, &ae);
        assert_eq!(m.len(), MOSAIC_W * MOSAIC_H);
        assert_eq!((MOSAIC_W, MOSAIC_H), (756, 420));
        assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // tile 202 equals decode(grid[202])
        let tile = ae.decode(grid.code(202)).unwrap();
        let (row, col) = (202 / MOSAIC_COLS, 202 % MOSAIC_COLS);
        for y in 0..IMG_SIDE {
            let dst = (row * IMG_SIDE + y) * MOSAIC_W + col * IMG_SIDE;
            assert_eq!(
                &m[dst..dst + IMG_SIDE],
                &tile.pixels[y * IMG_SIDE..(y + 1) * IMG_SIDE]
            );
        }
    }

    #[test]
    fn bank_checkpoint_round_trip() {
        let bank = ContextBank {
            nets: (0..NUM_CONTEXTS).map(|i| ContextNet::init(i as u64)).collect(),
        };
        let back = ContextBank::from_checkpoint(&bank.to_checkpoint(0)).unwrap();
        assert_eq!(bank, back);
    }

    #[test]
    fn pearson_basics() {
        let a = vec![1.0f32, 2.0, 3.0];
        let b = vec![2.0f32, 4.0, 6.0];
        let c = vec![3.0f32, 2.0, 1.0];
        assert!((pearson(&a, &b) - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &c) + 1.0).abs() < 1e-12);
    }
}
