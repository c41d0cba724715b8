use std::process::ExitCode;

use anyhow::Result;
use relprop::data::hwc_to_chw;
use relprop::render::{render, to_png, to_ppm, RenderConfig};
use relprop::{check_conservation, explain, LrpConfig, Rule};
use serde::Serialize;

use crate::args::ExplainArgs;
use crate::commands::{load_image, load_model};
use crate::run::Run;

#[derive(Serialize)]
struct LayerDrift {
    layer_sums: Vec<f64>,
    drift: f64,
}

#[derive(Serialize)]
struct ConservationJson {
    score: f64,
    output_index: usize,
    config: LrpConfig,
    conserving_rule: bool,
    renormalized: bool,
    tolerance: f64,
    /// Drift of the returned relevance (after renormalization when enabled).
    drift: f64,
    passed: bool,
    raw: LayerDrift,
    #[serde(rename = "final")]
    final_: LayerDrift,
    violations: usize,
}

pub fn warn_if_not_conserving(cfg: &LrpConfig) {
    if let Rule::AlphaBeta { alpha, beta } = cfg.rule {
        if !cfg.is_conserving() {
            log::warn!(
                "alpha + beta = {} != 1: relevance is not expected to be conserved{}",
                alpha + beta,
                if cfg.renormalize { " before renormalization" } else { "" }
            );
        }
    }
}

pub fn run(args: &ExplainArgs) -> Result<ExitCode> {
    let cfg = args.rule.config();
    cfg.validate(false)?;
    warn_if_not_conserving(&cfg);
    let mut run = Run::new("explain", args)?;
    let net = load_model(&mut run, &args.model)?;
    let x = hwc_to_chw(&load_image(&mut run, &args.image, &net)?);

    let raw = explain(&net, &x, &cfg.with_renormalize(false))?;
    let rel = if cfg.renormalize { explain(&net, &x, &cfg)? } else { raw.clone() };
    let fx = rel.score();
    let raw_report = check_conservation(&raw, fx, args.tolerance);
    let final_report = check_conservation(&rel, fx, args.tolerance);

    let report = ConservationJson {
        score: fx,
        output_index: cfg.output_selector,
        config: cfg,
        conserving_rule: cfg.is_conserving(),
        renormalized: cfg.renormalize,
        tolerance: args.tolerance,
        drift: final_report.drift,
        passed: final_report.passed,
        raw: LayerDrift { layer_sums: raw_report.layer_sums, drift: raw_report.drift },
        final_: LayerDrift { layer_sums: final_report.layer_sums, drift: final_report.drift },
        violations: rel.violations().len(),
    };
    let mut report_json = serde_json::to_string_pretty(&report)?;
    report_json.push('\n');

    let heat = render(rel.heatmap(), &RenderConfig::default())?;
    let (blob, index) = rel.export(&net)?;
    run.stage("heatmap.ppm", to_ppm(&heat));
    run.stage("heatmap.png", to_png(&heat)?);
    run.stage("relevance.bin", blob);
    run.stage("relevance.json", index.into_bytes());
    run.stage("conservation.json", report_json.into_bytes());
    let manifest = run.commit(&args.out.out)?;

    println!(
        "score {fx}; drift raw {:.3e}, final {:.3e} ({})",
        report.raw.drift,
        report.drift,
        if report.passed { "within tolerance" } else { "exceeds tolerance" }
    );
    println!("manifest {}", manifest.display());
    Ok(ExitCode::SUCCESS)
}
