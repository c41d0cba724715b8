use std::process::ExitCode;

use anyhow::{Context, Result};
use relprop::data::load_dataset;
use relprop::model_io::encode_model;
use relprop::train::{replace_head, train, TrainConfig, TrainMode};

use crate::args::{ModeArg, TrainArgs};
use crate::commands::load_model;
use crate::run::Run;

pub fn run(args: &TrainArgs) -> Result<ExitCode> {
    let mut run = Run::new("train", args)?;
    run.seed("split_and_shuffle", args.seed);
    if !args.keep_head {
        run.seed("head_init", args.seed);
    }
    let cfg = TrainConfig {
        learning_rate: args.lr,
        momentum: args.momentum,
        mode: match args.mode {
            ModeArg::DenseOnly => TrainMode::DenseOnly,
            ModeArg::Full => TrainMode::Full,
        },
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        freeze_biases: args.freeze_biases,
    };
    cfg.validate()?;

    let base = load_model(&mut run, &args.model)?;
    let labels = args.labels.clone().unwrap_or_else(|| args.data_dir.join("labels.csv"));
    run.read_input(&labels)?;
    let ds = load_dataset(&args.data_dir, &labels, args.attribute.as_deref(), base.input_shape())
        .with_context(|| format!("loading dataset from {}", args.data_dir.display()))?;
    for sample in ds.items() {
        run.read_input(&args.data_dir.join(&sample.name))?;
    }

    let start = if args.keep_head { base } else { replace_head(&base, args.seed)? };
    let outcome = train(&start, &ds, &cfg)?;
    for e in &outcome.curve.epochs {
        log::info!(
            "epoch {} train MAE {:.4} test MAE {}",
            e.epoch,
            e.train_mae,
            e.test_mae.map_or("-".into(), |m| format!("{m:.4}"))
        );
    }

    let (json, blob) = encode_model(&outcome.net, "model.bin")?;
    run.stage("model.json", json.into_bytes());
    run.stage("model.bin", blob);
    run.stage("curve.csv", outcome.curve.to_csv().into_bytes());
    let manifest = run.commit(&args.out.out)?;

    if let Some(last) = outcome.curve.epochs.last() {
        println!(
            "trained {} epochs: train MAE {:.4}{}",
            last.epoch,
            last.train_mae,
            last.test_mae.map_or(String::new(), |m| format!(", test MAE {m:.4}"))
        );
    }
    println!("manifest {}", manifest.display());
    Ok(ExitCode::SUCCESS)
}
