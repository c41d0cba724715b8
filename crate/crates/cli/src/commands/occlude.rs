use std::process::ExitCode;

use anyhow::{Context, Result};
use relprop::data::hwc_to_rgb8;
use relprop::occlusion::{occlusion_sweep, parse_specs};
use relprop::render::{render, side_by_side, to_ppm, RenderConfig};

use crate::args::OccludeArgs;
use crate::commands::explain::warn_if_not_conserving;
use crate::commands::{load_image, load_model};
use crate::run::Run;

pub fn run(args: &OccludeArgs) -> Result<ExitCode> {
    let cfg = args.rule.config();
    cfg.validate(false)?;
    warn_if_not_conserving(&cfg);
    let mut run = Run::new("occlude", args)?;
    let net = load_model(&mut run, &args.model)?;
    let img = load_image(&mut run, &args.image, &net)?;
    let text = String::from_utf8(run.read_input(&args.specs)?)
        .with_context(|| format!("{} is not UTF-8", args.specs.display()))?;
    let specs = if text.trim().is_empty() {
        Vec::new()
    } else {
        parse_specs(&text).with_context(|| format!("parsing {}", args.specs.display()))?
    };

    let report = occlusion_sweep(&net, &img, &specs, &cfg)?;
    let render_cfg = RenderConfig::default();
    let original = hwc_to_rgb8(&img);
    let baseline_heat = render(&report.baseline_heatmap, &render_cfg)?;
    run.stage("occlusion.csv", report.to_csv().into_bytes());
    run.stage("heatmap_baseline.ppm", to_ppm(&baseline_heat));
    run.stage("baseline.ppm", to_ppm(&side_by_side(&[&original, &baseline_heat])));
    for (i, (occluded, heat)) in report.occluded_images.iter().zip(&report.occluded_heatmaps).enumerate() {
        let panel = side_by_side(&[&hwc_to_rgb8(occluded), &render(heat, &render_cfg)?]);
        run.stage(format!("occlusion_{i:02}.ppm"), to_ppm(&panel));
    }
    let manifest = run.commit(&args.out.out)?;

    println!("baseline score {}", report.baseline_score);
    for row in &report.rows {
        println!(
            "{}: score {} (delta {:+}), relevance inside {:.3}",
            row.name, row.occluded_score, row.delta, row.relevance_fraction
        );
    }
    println!("manifest {}", manifest.display());
    Ok(ExitCode::SUCCESS)
}
