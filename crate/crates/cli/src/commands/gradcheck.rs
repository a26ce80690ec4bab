use rand::Rng;
use sknn::conv::ConvGeometry;
use sknn::gradcheck::check_layer;
use sknn::layers::{DenseConv, DenseFc, Layer, MaxPool, SkConv, SkFc};
use sknn::rng::{derive_seed, stream_rng};
use sknn::Tensor;

use super::{emit, print_table, Globals};
use crate::args::{parse_dims, GradcheckArgs, LayerChoice};
use crate::fmt::sig6;
use crate::{CmdResult, Failure};

const INPUT_STREAM: u64 = 0x1_4707;

fn default_dims(layer: LayerChoice) -> &'static str {
    match layer {
        LayerChoice::Fc | LayerChoice::SkFc => "8:6",
        LayerChoice::Conv | LayerChoice::SkConv => "5x5x2:3x3:3",
        LayerChoice::Maxpool => "4x4x2:2",
    }
}

fn fields(text: &str, count: usize, what: &str) -> Result<Vec<String>, Failure> {
    let parts: Vec<String> = text.split(':').map(str::to_string).collect();
    if parts.len() != count {
        return Err(Failure::Usage(format!(
            "--dims `{text}` should look like {what}"
        )));
    }
    Ok(parts)
}

fn dims_of(text: &str, n: usize, what: &str) -> Result<Vec<usize>, Failure> {
    let d = parse_dims(text, 'x').map_err(Failure::Usage)?;
    if d.len() != n || d.contains(&0) {
        return Err(Failure::Usage(format!(
            "`{text}` should be {what} with positive entries"
        )));
    }
    Ok(d)
}

/// Builds the layer under test and its input shape.
fn build(a: &GradcheckArgs, seed: u64) -> Result<(Layer, Vec<usize>), Failure> {
    let text = a.dims.as_deref().unwrap_or(default_dims(a.layer));
    match a.layer {
        LayerChoice::Fc | LayerChoice::SkFc => {
            let f = fields(text, 2, "IN:OUT")?;
            let d2 = dims_of(&f[0], 1, "IN")?[0];
            let d1 = dims_of(&f[1], 1, "OUT")?[0];
            let layer = if a.layer == LayerChoice::Fc {
                Layer::DenseFc(DenseFc::init(d1, d2, seed))
            } else {
                Layer::SkFc(SkFc::init(d1, d2, a.k, a.ell, seed)?)
            };
            Ok((layer, vec![d2]))
        }
        LayerChoice::Conv | LayerChoice::SkConv => {
            let f = fields(text, 3, "HxWxC:KHxKW:OUT")?;
            let i = dims_of(&f[0], 3, "HxWxC")?;
            let kk = dims_of(&f[1], 2, "KHxKW")?;
            let out = dims_of(&f[2], 1, "OUT")?[0];
            let g = ConvGeometry::new(i[0], i[1], i[2], kk[0], kk[1], out, a.stride, a.pad)?;
            let layer = if a.layer == LayerChoice::Conv {
                Layer::DenseConv(DenseConv::init(g, seed)?)
            } else {
                Layer::SkConv(SkConv::init(g, a.k, a.ell, true, seed)?)
            };
            Ok((layer, i))
        }
        LayerChoice::Maxpool => {
            let f = fields(text, 2, "HxWxC:WINDOW")?;
            let i = dims_of(&f[0], 3, "HxWxC")?;
            let window = dims_of(&f[1], 1, "WINDOW")?[0];
            Ok((Layer::MaxPool(MaxPool { window }), i))
        }
    }
}

pub fn run(g: &Globals, a: &GradcheckArgs) -> CmdResult {
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(Failure::Usage(format!("--eps {} must be positive", a.eps)));
    }
    let (layer, shape) = build(a, derive_seed(g.seed, 1))?;
    let mut rng = stream_rng(g.seed, INPUT_STREAM);
    let input = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0));
    // validate the shape before probing
    layer.output_shape(&shape)?;
    let report = check_layer(&layer, &input, a.eps, a.tol, derive_seed(g.seed, 2))?;
    emit(g, &report, || {
        println!(
            "{} gradient check, step {}, tolerance {}",
            report.layer,
            sig6(report.step),
            sig6(report.tolerance)
        );
        let rows: Vec<Vec<String>> = report
            .groups
            .iter()
            .map(|gr| {
                vec![
                    gr.name.clone(),
                    gr.coords.to_string(),
                    sig6(gr.rel_error),
                    if gr.rel_error <= report.tolerance {
                        "pass"
                    } else {
                        "FAIL"
                    }
                    .into(),
                ]
            })
            .collect();
        print_table(&["group", "coords", "rel error", "verdict"], &rows);
        println!(
            "max relative error {}: {}",
            sig6(report.max_error()),
            if report.pass { "pass" } else { "FAIL" }
        );
    })?;
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max relative error {} exceeds {}",
            sig6(report.max_error()),
            sig6(a.tol)
        )))
    }
}
