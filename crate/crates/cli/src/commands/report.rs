use serde::Serialize;
use sknn::layers::{Layer, ParamCount};
use sknn::network::Network;

use super::{emit, print_table, Globals};
use crate::args::ReportArgs;
use crate::fmt::sig6;
use crate::CmdResult;

#[derive(Serialize)]
pub struct LayerRow {
    pub index: usize,
    pub kind: &'static str,
    pub describe: String,
    pub output: Vec<usize>,
    pub params: ParamCount,
    pub dense: ParamCount,
    /// A sketched layer holding more weights than its dense counterpart.
    pub expansion: bool,
}

#[derive(Serialize)]
pub struct ParamReport {
    pub input: Vec<usize>,
    pub layers: Vec<LayerRow>,
    pub total: ParamCount,
    pub dense_total: ParamCount,
    pub compression_rate: f64,
}

pub fn describe(layer: &Layer) -> String {
    match layer {
        Layer::DenseFc(l) => format!("{} -> {}", l.d2(), l.d1()),
        Layer::SkFc(l) => format!("{} -> {}, k={} l={}", l.d2(), l.d1(), l.k(), l.ell()),
        Layer::DenseConv(l) => conv_text(l.geometry()),
        Layer::SkConv(l) => format!("{}, k={} l={}", conv_text(l.geometry()), l.k(), l.ell()),
        Layer::Relu => String::new(),
        Layer::MaxPool(p) => format!("window {}", p.window),
    }
}

fn conv_text(g: &sknn::conv::ConvGeometry) -> String {
    format!(
        "{}x{}x{} -> {}ch, {}x{} s{} p{}",
        g.in_h, g.in_w, g.in_channels, g.out_channels, g.kernel_h, g.kernel_w, g.stride, g.pad
    )
}

pub fn param_report(net: &Network) -> sknn::Result<ParamReport> {
    let shapes = net.shape_trace()?;
    let layers: Vec<LayerRow> = net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let params = l.param_count();
            let dense = l.dense_equivalent();
            LayerRow {
                index: i,
                kind: l.kind(),
                describe: describe(l),
                output: shapes[i + 1].clone(),
                params,
                dense,
                expansion: matches!(l, Layer::SkFc(_) | Layer::SkConv(_))
                    && params.weights > dense.weights,
            }
        })
        .collect();
    Ok(ParamReport {
        input: net.input_shape().to_vec(),
        total: net.param_count(),
        dense_total: net.dense_equivalent(),
        compression_rate: net.compression_rate(),
        layers,
    })
}

fn shape_text(s: &[usize]) -> String {
    s.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

pub fn print_report(r: &ParamReport, dense_column: bool) {
    let mut header = vec!["#", "layer", "config", "output", "weights", "biases"];
    if dense_column {
        header.extend(["dense weights", "dense biases"]);
    }
    header.push("note");
    let mut rows: Vec<Vec<String>> = r
        .layers
        .iter()
        .map(|l| {
            let mut row = vec![
                l.index.to_string(),
                l.kind.to_string(),
                l.describe.clone(),
                shape_text(&l.output),
                l.params.weights.to_string(),
                l.params.biases.to_string(),
            ];
            if dense_column {
                row.push(l.dense.weights.to_string());
                row.push(l.dense.biases.to_string());
            }
            row.push(if l.expansion {
                "expansion".into()
            } else {
                String::new()
            });
            row
        })
        .collect();
    let mut total = vec![
        "total".into(),
        String::new(),
        String::new(),
        String::new(),
        r.total.weights.to_string(),
        r.total.biases.to_string(),
    ];
    if dense_column {
        total.push(r.dense_total.weights.to_string());
        total.push(r.dense_total.biases.to_string());
    }
    total.push(String::new());
    rows.push(total);
    println!("input {}", shape_text(&r.input));
    print_table(&header, &rows);
    println!(
        "weights {} of {} dense, compression rate {}",
        r.total.weights,
        r.dense_total.weights,
        sig6(r.compression_rate)
    );
}

pub fn run(g: &Globals, a: &ReportArgs) -> CmdResult {
    let net = sknn::data::load_checkpoint(&a.model)?;
    let report = param_report(&net)?;
    emit(g, &report, || print_report(&report, a.dense_equivalent))
}
