use clap::{Parser, Subcommand};
use ctxnet::autoencoder::{train_autoencoder, AutoencoderParams};
use ctxnet::baseline::train_baseline;
use ctxnet::classifier::{evaluate, train_classifier_opts, ClassifierParams, EvalReport};
use ctxnet::config::RunConfig;
use ctxnet::context::{
    build_context_grid, generalization_probe, mosaic, train_all_contexts, ContextBank, MOSAIC_H,
    MOSAIC_W,
};
use ctxnet::data::{load_split, Dataset, Split};
use ctxnet::store::{load_section, write_csv, write_pgm};
use ctxnet::warp::triangle_glyph;
use ctxnet::{Error, Result};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "ctxnet",
    about = "Context-transformation network on MNIST: autoencoder, 405 per-context nets, shared classifier head, and a CNN baseline.",
    arg_required_else_help = true
)]
struct Cli {
    /// MNIST IDX directory (default: $CTXNET_DATA_DIR or data/mnist)
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Flat key=value config file; flags override file values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Epoch count for the invoked stage
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Train on the first N images of the train split
    #[arg(long, global = true)]
    train_size: Option<usize>,
    /// Random geometric augmentation during training
    #[arg(long, global = true)]
    augment: bool,
    /// Worker threads for train-contexts
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory for checkpoints, CSV curves, and rasters
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Autoencoder checkpoint path
    #[arg(long, global = true)]
    ae: Option<PathBuf>,
    /// Context-bank checkpoint path
    #[arg(long, global = true)]
    ctx: Option<PathBuf>,
    /// Classifier checkpoint path
    #[arg(long, global = true)]
    clf: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the 784-32-784 autoencoder on augmented images
    TrainAe,
    /// Train all 405 context-transformation nets against a frozen autoencoder
    TrainContexts,
    /// Train the weight-shared classifier head over the context grid
    TrainClassifier,
    /// Train the comparison CNN on raw or augmented images
    TrainBaseline,
    /// Evaluate the full pipeline on the test split
    Eval,
    /// Decode the context grid of one test digit into a 756x420 mosaic
    Visualize {
        /// Index into the test split
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Run the triangle-glyph generalization probe and emit its mosaic
    ProbeTriangle,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(match e {
            Error::Dependency(_) => 3,
            _ => 1,
        });
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.load_file(path)?;
    }
    if let Some(v) = &cli.data_dir {
        cfg.data_dir = v.clone();
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.epochs {
        match cli.cmd {
            Cmd::TrainAe => cfg.ae_epochs = v,
            Cmd::TrainContexts => cfg.ctx_epochs = v,
            Cmd::TrainClassifier => cfg.clf_epochs = v,
            Cmd::TrainBaseline => cfg.baseline_epochs = v,
            _ => {}
        }
    }
    if let Some(v) = cli.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = cli.train_size {
        cfg.train_size = Some(v);
    }
    if cli.augment {
        cfg.augment = true;
    }
    if let Some(v) = cli.jobs {
        cfg.jobs = v;
    }
    if let Some(v) = &cli.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = &cli.ae {
        cfg.ae_path = Some(v.clone());
    }
    if let Some(v) = &cli.ctx {
        cfg.ctx_path = Some(v.clone());
    }
    if let Some(v) = &cli.clf {
        cfg.clf_path = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_split(cfg: &RunConfig) -> Result<Dataset> {
    let ds = load_split(&cfg.data_dir, Split::Train)?;
    match cfg.train_size {
        Some(n) => ds.take_prefix(n),
        None => Ok(ds),
    }
}

fn load_ae(cfg: &RunConfig) -> Result<AutoencoderParams> {
    AutoencoderParams::from_checkpoint(&load_section(&cfg.ae_path(), "autoencoder")?)
}

fn load_bank(cfg: &RunConfig) -> Result<ContextBank> {
    ContextBank::from_checkpoint(&load_section(&cfg.ctx_path(), "context-bank")?)
}

fn print_report(report: &EvalReport) {
    println!("test accuracy: {:.4} ({}/{})", report.accuracy(), report.correct, report.total);
    println!("confusion matrix (rows = truth, cols = predicted):");
    for row in &report.confusion {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:5}")).collect();
        println!("  {}", cells.join(" "));
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    println!("resolved configuration:\n{}", cfg.resolved());
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    match cli.cmd {
        Cmd::TrainAe => {
            let ds = train_split(&cfg)?;
            println!("training autoencoder: {} images, {} epochs", ds.len(), cfg.ae_epochs);
            let (params, report) =
                train_autoencoder(&ds, cfg.ae_epochs, cfg.seed, cfg.batch_size, cfg.learning_rate)?;
            params.to_checkpoint(cfg.seed).save(&cfg.ae_path())?;
            let rows: Vec<Vec<String>> = report
                .epoch_mse
                .iter()
                .enumerate()
                .map(|(e, mse)| vec![(e + 1).to_string(), format!("{mse:.6}")])
                .collect();
            write_csv(&cfg.out_dir.join("ae_curve.csv"), &["epoch", "train_mse"], &rows)?;
            if let Some(mse) = report.final_mse() {
                println!("final reconstruction MSE: {mse:.5}");
            }
            println!("saved {}", cfg.ae_path().display());
        }
        Cmd::TrainContexts => {
            let ds = train_split(&cfg)?;
            let ae = load_ae(&cfg)?;
            println!(
                "training 405 context nets: {} images, {} epochs each, {} jobs",
                ds.len(),
                cfg.ctx_epochs,
                cfg.jobs
            );
            let bank =
                train_all_contexts(&ds, &ae, cfg.ctx_epochs, cfg.seed, cfg.jobs, cfg.learning_rate)?;
            bank.to_checkpoint(cfg.seed).save(&cfg.ctx_path())?;
            println!("saved {}", cfg.ctx_path().display());
        }
        Cmd::TrainClassifier => {
            let ds = train_split(&cfg)?;
            let ae = load_ae(&cfg)?;
            let bank = load_bank(&cfg)?;
            println!("training classifier: {} images, {} epochs", ds.len(), cfg.clf_epochs);
            let (params, report) = train_classifier_opts(
                &ds,
                &ae,
                &bank,
                cfg.clf_epochs,
                cfg.seed,
                cfg.batch_size,
                cfg.learning_rate,
                cfg.augment,
            )?;
            params.to_checkpoint(cfg.seed).save(&cfg.clf_path())?;
            let rows: Vec<Vec<String>> = report
                .epoch_loss
                .iter()
                .zip(&report.epoch_train_acc)
                .enumerate()
                .map(|(e, (loss, acc))| {
                    vec![(e + 1).to_string(), format!("{loss:.6}"), format!("{acc:.4}")]
                })
                .collect();
            write_csv(
                &cfg.out_dir.join("classifier_curve.csv"),
                &["epoch", "train_loss", "train_accuracy"],
                &rows,
            )?;
            println!("saved {}", cfg.clf_path().display());
            let test = load_split(&cfg.data_dir, Split::Test)?;
            print_report(&evaluate(&test, &ae, &bank, &params)?);
        }
        Cmd::TrainBaseline => {
            let ds = train_split(&cfg)?;
            let test = load_split(&cfg.data_dir, Split::Test)?;
            println!(
                "training baseline CNN: {} images, {} epochs, augment={}",
                ds.len(),
                cfg.baseline_epochs,
                cfg.augment
            );
            let (params, report) = train_baseline(
                &ds,
                &test,
                cfg.baseline_epochs,
                cfg.augment,
                cfg.seed,
                cfg.batch_size,
                cfg.learning_rate,
            )?;
            params.to_checkpoint(cfg.seed).save(&cfg.baseline_path())?;
            let rows: Vec<Vec<String>> = report
                .epoch_loss
                .iter()
                .zip(&report.epoch_train_acc)
                .enumerate()
                .map(|(e, (loss, acc))| {
                    vec![(e + 1).to_string(), format!("{loss:.6}"), format!("{acc:.4}")]
                })
                .collect();
            write_csv(
                &cfg.out_dir.join("baseline_curve.csv"),
                &["epoch", "train_loss", "train_accuracy"],
                &rows,
            )?;
            if let Some(at) = report.stopped_at {
                println!("early stop after epoch {at} (train-loss plateau)");
            }
            println!("baseline test accuracy: {:.4}", report.test_accuracy);
            println!("saved {}", cfg.baseline_path().display());
        }
        Cmd::Eval => {
            let ae = load_ae(&cfg)?;
            let bank = load_bank(&cfg)?;
            let params =
                ClassifierParams::from_checkpoint(&load_section(&cfg.clf_path(), "classifier")?)?;
            let test = load_split(&cfg.data_dir, Split::Test)?;
            print_report(&evaluate(&test, &ae, &bank, &params)?);
        }
        Cmd::Visualize { index } => {
            let ae = load_ae(&cfg)?;
            let bank = load_bank(&cfg)?;
            let test = load_split(&cfg.data_dir, Split::Test)?;
            if index >= test.len() {
                return Err(Error::Range(format!(
                    "test index {index} outside [0,{})",
                    test.len()
                )));
            }
            let item = &test.items[index];
            let grid = build_context_grid(&ae.encode(&item.image), &bank)?;
            let raster = mosaic(&grid, &ae);
            let path = cfg.out_dir.join(format!("mosaic_test{index}.pgm"));
            write_pgm(&raster, MOSAIC_W, MOSAIC_H, &path)?;
            println!("digit {} -> {}", item.label, path.display());
        }
        Cmd::ProbeTriangle => {
            let ae = load_ae(&cfg)?;
            let bank = load_bank(&cfg)?;
            let glyph = triangle_glyph();
            let report = generalization_probe(&glyph, &ae, &bank)?;
            let grid = build_context_grid(&ae.encode(&glyph), &bank)?;
            let path = cfg.out_dir.join("mosaic_triangle.pgm");
            write_pgm(&mosaic(&grid, &ae), MOSAIC_W, MOSAIC_H, &path)?;
            println!(
                "triangle probe: warped reconstruction wins for {}/{} contexts ({:.1}%)",
                report.wins,
                report.total,
                100.0 * report.fraction()
            );
            println!("mosaic -> {}", path.display());
        }
    }
    Ok(())
}
