use std::path::PathBuf;

use serde::Serialize;
use sknn::data::{Dataset, SyntheticConfig};
use sknn::network::{build_testnet, parse_sketch_specs};
use sknn::train::{top1_error_last10, train, write_history, EpochRecord, TrainConfig};

use super::gen_data::load_dir;
use super::report::{param_report, print_report};
use super::{write_text, Globals};
use crate::args::{Arch, ImageShape, TrainArgs};
use crate::fmt::sig6;
use crate::{CmdResult, Failure};

#[derive(Serialize)]
struct TrainSummary {
    checkpoint: PathBuf,
    history: PathBuf,
    epochs: Vec<EpochRecord>,
    final_test_top1: Option<f64>,
    last10_test_top1: Option<f64>,
    weights: usize,
    dense_weights: usize,
    compression_rate: f64,
}

fn load_data(g: &Globals, a: &TrainArgs) -> Result<(Dataset, Dataset), Failure> {
    if let Some(dir) = &a.data {
        return load_dir(dir);
    }
    let cfg = SyntheticConfig {
        classes: a.classes,
        per_class: a.n,
        shape: a.image_shape.map_or([32, 32, 3], |s| s.0),
        noise: SyntheticConfig::DEFAULT_NOISE,
        seed: g.seed,
    };
    let test = SyntheticConfig {
        per_class: (a.n / 4).max(1),
        ..cfg
    };
    Ok((cfg.generate(0)?, test.generate(1)?))
}

pub fn run(g: &Globals, a: &TrainArgs) -> CmdResult {
    let Arch::Testnet = a.arch;
    let sketches = parse_sketch_specs(&a.sketch)?;
    let (train_set, test_set) = load_data(g, a)?;
    let shape = train_set
        .image_shape()
        .ok_or_else(|| Failure::Usage("training set is empty".into()))?;
    if let Some(expected) = a.image_shape {
        if expected.0 != shape {
            return Err(Failure::Usage(format!(
                "--image-shape {expected} does not match the data ({})",
                ImageShape(shape)
            )));
        }
    }
    if test_set.image_shape().is_some_and(|s| s != shape) {
        return Err(Failure::Usage(
            "train and test images differ in shape".into(),
        ));
    }
    let classes = train_set.classes().max(test_set.classes());

    let mut net = build_testnet(shape, classes, &sketches, g.seed)?;
    let params = param_report(&net)?;
    if !g.json {
        print_report(&params, true);
        println!();
    }

    let cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        momentum: a.momentum,
        seed: g.seed,
        eval_each_epoch: !a.no_eval,
        decay: None,
    };
    let quiet = g.json;
    let history = train(&mut net, &train_set, Some(&test_set), &cfg, |r| {
        if !quiet {
            match r.test_top1 {
                Some(e) => println!(
                    "epoch {:>3}  train loss {}  test top-1 {}%",
                    r.epoch,
                    sig6(r.train_loss),
                    sig6(e)
                ),
                None => println!("epoch {:>3}  train loss {}", r.epoch, sig6(r.train_loss)),
            }
        }
    })?;

    let checkpoint = g.out.clone().unwrap_or_else(|| PathBuf::from("model.sknn"));
    sknn::data::save_checkpoint(&net, &checkpoint)?;
    let history_path = a
        .history
        .clone()
        .unwrap_or_else(|| checkpoint.with_extension("history.jsonl"));
    let mut lines = Vec::new();
    write_history(&history, &mut lines)?;
    write_text(
        &history_path,
        &String::from_utf8(lines).expect("history is UTF-8"),
    )?;

    let summary = TrainSummary {
        final_test_top1: history.last().and_then(|r| r.test_top1),
        last10_test_top1: top1_error_last10(&history).ok(),
        checkpoint,
        history: history_path,
        epochs: history,
        weights: params.total.weights,
        dense_weights: params.dense_total.weights,
        compression_rate: params.compression_rate,
    };
    if g.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("serializes")
        );
    } else {
        if let Some(e) = summary.final_test_top1 {
            println!("final test top-1 error {}%", sig6(e));
        }
        match summary.last10_test_top1 {
            Some(e) => println!("last-10 mean test top-1 error {}%", sig6(e)),
            None => println!("last-10 mean test top-1 error n/a (needs 10 evaluated epochs)"),
        }
        println!(
            "saved {} and {}",
            summary.checkpoint.display(),
            summary.history.display()
        );
    }
    Ok(())
}
