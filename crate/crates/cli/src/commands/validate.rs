use std::process::ExitCode;

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relprop::backprop::{backward, finite_difference, relative_error};
use relprop::model_io::load_model;
use relprop::toy::random_input;
use relprop::{check_conservation, explain, LrpConfig, Network, Tensor};

use crate::args::ValidateArgs;

const CONSERVATION_TOL: f64 = 1e-9;
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_TARGET: f64 = 0.5;

enum Status {
    Pass,
    Fail,
    Explained,
}

fn report(status: Status, check: &str, detail: &str) -> bool {
    let tag = match status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Explained => "EXPLAINED",
    };
    println!("{tag} {check}: {detail}");
    !matches!(status, Status::Fail)
}

pub fn run(args: &ValidateArgs) -> Result<ExitCode> {
    let net = match load_model(&args.model) {
        Ok(net) => net,
        Err(e) => {
            report(Status::Fail, "load", &e.to_string());
            return Ok(ExitCode::FAILURE);
        }
    };
    report(Status::Pass, "load", &format!("{} layers, {} parameters", net.layers().len(), net.param_count()));
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let x = random_input(&net, &mut rng, 0.0, 1.0);

    let mut ok = shape_chain(&net, &x);
    ok &= conservation(&net, &x, args);
    ok &= gradients(&net, &x, args.probes, &mut rng);
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn shape_chain(net: &Network, x: &Tensor) -> bool {
    let trace = match net.forward(x) {
        Ok(t) => t,
        Err(e) => return report(Status::Fail, "shape-chain", &e.to_string()),
    };
    for l in 0..=net.layers().len() {
        let got = trace.activations()[l].shape();
        if got != net.shape_at(l) {
            return report(
                Status::Fail,
                "shape-chain",
                &format!("activation {l} has shape {got:?}, expected {:?}", net.shape_at(l)),
            );
        }
    }
    report(Status::Pass, "shape-chain", &format!("{:?} -> {:?}", net.input_shape(), net.output_shape()))
}

fn conservation(net: &Network, x: &Tensor, args: &ValidateArgs) -> bool {
    let cfg = LrpConfig::default()
        .with_bias_policy(args.bias_policy.into())
        .with_renormalize(false);
    let rel = match explain(net, x, &cfg) {
        Ok(r) => r,
        Err(e) => return report(Status::Fail, "conservation", &e.to_string()),
    };
    let rep = check_conservation(&rel, rel.score(), CONSERVATION_TOL);
    let detail = format!("f(x) = {}, drift {:.3e} (tolerance {CONSERVATION_TOL:e})", rel.score(), rep.drift);
    if rep.passed {
        report(Status::Pass, "conservation", &detail)
    } else if net.has_bias() {
        report(Status::Explained, "conservation", &format!("{detail}; model has biases, drift expected"))
    } else {
        report(Status::Fail, "conservation", &detail)
    }
}

/// Compares analytic and central-difference gradients of
/// `½ Σ_k (y_k − 0.5)²` on randomly chosen parameters.
fn gradients(net: &Network, x: &Tensor, probes: usize, rng: &mut impl Rng) -> bool {
    let loss = |n: &Network| -> relprop::Result<f64> {
        Ok(n.predict(x)?.data().iter().map(|y| 0.5 * (y - FD_TARGET).powi(2)).sum())
    };
    let analytic = match net.forward(x).and_then(|trace| {
        let g: Vec<f64> = trace.output().data().iter().map(|y| y - FD_TARGET).collect();
        backward(net, &trace, &g)
    }) {
        Ok(g) => g,
        Err(e) => return report(Status::Fail, "gradient", &e.to_string()),
    };
    let params: Vec<(usize, usize)> = net
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(l, layer)| (0..layer.param_count()).map(move |i| (l, i)))
        .collect();
    if params.is_empty() {
        return report(Status::Pass, "gradient", "no parameters");
    }
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let (l, i) = params[rng.gen_range(0..params.len())];
        let numeric = match finite_difference(net, l, i, FD_STEP, loss) {
            Ok(v) => v,
            Err(e) => return report(Status::Fail, "gradient", &e.to_string()),
        };
        let err = relative_error(analytic.layers[l][i], numeric, 1e-8);
        if err > FD_TOL {
            return report(
                Status::Fail,
                "gradient",
                &format!("layer {l} parameter {i}: analytic {} vs numeric {numeric}", analytic.layers[l][i]),
            );
        }
        worst = worst.max(err);
    }
    report(Status::Pass, "gradient", &format!("{probes} probes, worst relative error {worst:.2e}"))
}
