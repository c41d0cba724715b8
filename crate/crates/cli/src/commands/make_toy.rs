use std::process::ExitCode;

use anyhow::{bail, Result};
use relprop::model_io::encode_model;
use relprop::render::to_png;
use relprop::toy::{image_file_name, pretrained_base, toy_images, TOY_ATTRIBUTE};

use crate::args::MakeToyArgs;
use crate::commands::fmt_f64;
use crate::run::Run;

pub const DATA_DIR: &str = "data";
pub const LABELS: &str = "data/labels.csv";
pub const BASE_MODEL: &str = "base.json";

pub fn run(args: &MakeToyArgs) -> Result<ExitCode> {
    if args.size == 0 || !args.size.is_multiple_of(4) {
        bail!("--size must be a positive multiple of 4, got {}", args.size);
    }
    if args.samples == 0 {
        bail!("--samples must be positive");
    }
    let mut run = Run::new("make-toy", args)?;
    run.seed("data", args.seed);
    run.seed("model", args.seed);

    let mut labels = String::from("filename,attribute,raw_score\n");
    for (i, (img, score)) in toy_images(args.samples, args.size, args.seed).into_iter().enumerate() {
        let name = image_file_name(i);
        labels.push_str(&format!("{name},{TOY_ATTRIBUTE},{}\n", fmt_f64(score)));
        run.stage(format!("{DATA_DIR}/{name}"), to_png(&img)?);
    }
    run.stage(LABELS, labels.into_bytes());

    log::info!("pretraining base model");
    let net = pretrained_base(args.size, args.seed, args.bias)?;
    let (json, blob) = encode_model(&net, "base.bin")?;
    run.stage(BASE_MODEL, json.into_bytes());
    run.stage("base.bin", blob);

    let manifest = run.commit(&args.out.out)?;
    println!("wrote {} samples and base model; manifest {}", args.samples, manifest.display());
    Ok(ExitCode::SUCCESS)
}
