use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sknn::data::{write_idx_images, write_idx_labels, Dataset, SyntheticConfig};

use super::Globals;
use crate::args::GenDataArgs;
use crate::{CmdResult, Failure};

pub const TRAIN_IMAGES: &str = "train-images.idx";
pub const TRAIN_LABELS: &str = "train-labels.idx";
pub const TEST_IMAGES: &str = "test-images.idx";
pub const TEST_LABELS: &str = "test-labels.idx";

#[derive(Serialize)]
struct Written {
    dir: PathBuf,
    train: usize,
    test: usize,
    shape: [usize; 3],
    classes: usize,
}

pub fn run(g: &Globals, a: &GenDataArgs) -> CmdResult {
    if a.n == 0 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    let cfg = SyntheticConfig {
        classes: a.classes,
        per_class: a.n,
        shape: a.shape.0,
        noise: a.noise,
        seed: g.seed,
    };
    let train = cfg.generate(0)?;
    let test_cfg = SyntheticConfig {
        per_class: a.test_n.unwrap_or((a.n / 4).max(1)),
        ..cfg
    };
    if test_cfg.per_class == 0 {
        return Err(Failure::Usage("--test-n must be at least 1".into()));
    }
    let test = test_cfg.generate(1)?;

    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(e.into()))?;
    write_split(&dir, TRAIN_IMAGES, TRAIN_LABELS, &train)?;
    write_split(&dir, TEST_IMAGES, TEST_LABELS, &test)?;

    let written = Written {
        dir: dir.clone(),
        train: train.len(),
        test: test.len(),
        shape: a.shape.0,
        classes: a.classes,
    };
    if g.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&written).expect("serializes")
        );
    } else {
        println!(
            "wrote {} training and {} test images of shape {} ({} classes) to {}",
            train.len(),
            test.len(),
            a.shape,
            a.classes,
            dir.display()
        );
    }
    Ok(())
}

fn write_split(dir: &Path, images: &str, labels: &str, data: &Dataset) -> CmdResult {
    let create = |name: &str| {
        File::create(dir.join(name))
            .map(BufWriter::new)
            .map_err(|e| Failure::Runtime(e.into()))
    };
    let mut out = create(images)?;
    write_idx_images(data.images(), &mut out)?;
    out.flush().map_err(|e| Failure::Runtime(e.into()))?;
    let mut out = create(labels)?;
    write_idx_labels(data.labels(), &mut out)?;
    out.flush().map_err(|e| Failure::Runtime(e.into()))
}

/// Loads the train and test splits written by [`run`].
pub fn load_dir(dir: &Path) -> Result<(Dataset, Dataset), Failure> {
    let train = sknn::data::load_idx(dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS))?;
    let test = sknn::data::load_idx(dir.join(TEST_IMAGES), dir.join(TEST_LABELS))?;
    Ok((train, test))
}
