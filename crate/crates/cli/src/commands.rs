use std::fs;
use std::path::{Path, PathBuf};

use stylenet::checkpoint::{checkpoint_element_width, decode_checkpoint, load_checkpoint, save_checkpoint};
use stylenet::data::{Dataset, Split};
use stylenet::experiments::{
    correct_and_reconstruct, default_lambda_grid, interpolate_styles, misclassification_detector, nearest_neighbors,
    reconstruct_samples, spread_indices, transfer_style, NeighborIndex, Space,
};
use stylenet::grid::{write_grid, ImageFormat};
use stylenet::metrics::{read_table, Table};
use stylenet::model::{encode, Arch, ModelParams};
use stylenet::train::{evaluate, Precision, TrainConfig, Trainer};
use stylenet::{Error, Real, Result, Tensor};

use crate::args::{Cli, Command, Global};

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    fs::create_dir_all(&g.out).map_err(|e| Error::io(format!("creating {}", g.out.display()), e))?;
    match &cli.command {
        Command::Train {
            resume,
            checkpoint_every,
            keep_snapshots,
            train_limit,
            precision,
        } => train(
            g,
            &TrainOptions {
                resume: *resume,
                every: (*checkpoint_every).max(1),
                keep_snapshots: *keep_snapshots,
                train_limit: *train_limit,
                precision: (*precision).into(),
            },
        ),
        Command::Eval => eval(g),
        Command::Reconstruct { indices, count } => reconstruct(g, indices, *count),
        Command::Correct { indices, count } => correct(g, indices, *count),
        Command::Neighbors { queries, count, k } => neighbors(g, queries, *count, *k),
        Command::Interpolate {
            from,
            to,
            class,
            lambdas,
        } => interpolate(g, *from, *to, *class, lambdas),
        Command::Transfer { from, classes } => transfer(g, *from, classes),
    }
}

struct TrainOptions {
    resume: bool,
    every: u32,
    keep_snapshots: bool,
    train_limit: Option<usize>,
    precision: Precision,
}

fn load_split(g: &Global, split: Split, limit: Option<usize>) -> Result<Dataset> {
    let data = Dataset::load(&g.data_dir, g.kind(), split)?;
    Ok(match limit {
        Some(n) => data.head(n),
        None => data,
    })
}

fn out_file(g: &Global, name: &str) -> PathBuf {
    g.out.join(name)
}

fn image_file(g: &Global, stem: &str) -> PathBuf {
    let format: ImageFormat = g.format.into();
    g.out.join(format!("{stem}.{}", format.extension()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn train(g: &Global, opts: &TrainOptions) -> Result<()> {
    let train_set = load_split(g, Split::Train, opts.train_limit)?;
    let test_set = load_split(g, Split::Test, g.test_limit)?;
    let path = g.checkpoint_path();
    if opts.resume && path.is_file() {
        let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        match checkpoint_element_width(&bytes)? {
            8 => {
                let t = resume_trainer(g, decode_checkpoint::<f64>(&bytes)?, &train_set)?;
                run_training(g, opts, t, &train_set, &test_set, true)
            }
            _ => {
                let t = resume_trainer(g, decode_checkpoint::<f32>(&bytes)?, &train_set)?;
                run_training(g, opts, t, &train_set, &test_set, true)
            }
        }
    } else {
        let config = g.train_config(opts.precision);
        let arch = Arch::standard(g.kind().num_classes());
        match opts.precision {
            Precision::Single => {
                let t = Trainer::<f32>::new(arch, config, train_set.id())?;
                run_training(g, opts, t, &train_set, &test_set, false)
            }
            Precision::Double => {
                let t = Trainer::<f64>::new(arch, config, train_set.id())?;
                run_training(g, opts, t, &train_set, &test_set, false)
            }
        }
    }
}

fn resume_trainer<T: Real>(g: &Global, mut t: Trainer<T>, train_set: &Dataset) -> Result<Trainer<T>> {
    if t.dataset_id != train_set.id() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint was trained on {} but the selected training set is {}",
            t.dataset_id,
            train_set.id()
        )));
    }
    let c = &t.config;
    let conflicts = [
        ("--alpha", g.alpha, c.alpha),
        ("--lr", g.lr, c.learning_rate),
        ("--sigma", g.sigma, c.sigma),
        ("--batch-size", g.batch_size.map(|b| b as f64), c.batch_size as f64),
    ];
    for (flag, given, stored) in conflicts {
        if given.is_some_and(|v| v != stored) {
            return Err(Error::InvalidArgument(format!(
                "{flag} differs from the resumed checkpoint ({stored})"
            )));
        }
    }
    if let Some(e) = g.epochs {
        t.config.epochs = e;
    }
    Ok(t)
}

const LOG_COLUMNS: [&str; 7] = [
    "epoch",
    "classifier_loss",
    "reconstruction_loss",
    "joint_loss",
    "train_accuracy",
    "test_accuracy",
    "test_reconstruction_loss",
];

fn log_comment(c: &TrainConfig, dataset: &str) -> String {
    format!(
        "preset={} learning_rate={} alpha={} epochs={} batch_size={} sigma={} seed={} precision={} dataset={}",
        c.preset.name(),
        c.learning_rate,
        c.alpha,
        c.epochs,
        c.batch_size,
        c.sigma,
        c.seed,
        c.precision.name(),
        dataset
    )
}

fn snapshot_path(path: &Path, epoch: u32) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("stylenet");
    path.with_file_name(format!("{stem}.epoch-{epoch:04}.ckpt"))
}

fn run_training<T: Real>(
    g: &Global,
    opts: &TrainOptions,
    mut trainer: Trainer<T>,
    train_set: &Dataset,
    test_set: &Dataset,
    resumed: bool,
) -> Result<()> {
    if test_set.num_classes() != trainer.params.arch().num_classes {
        return Err(class_mismatch(trainer.params.arch(), test_set));
    }
    let log_path = out_file(g, "train_log.csv");
    let mut log = Table::new(LOG_COLUMNS).comment(log_comment(&trainer.config, train_set.id()));
    if resumed && log_path.is_file() {
        let done = trainer.epochs_done;
        let previous = read_table(&log_path)?;
        log.rows = previous
            .rows
            .into_iter()
            .filter(|r| r.first().and_then(|e| e.parse::<u32>().ok()).is_some_and(|e| e <= done))
            .collect();
    }
    log.write(&log_path)?;
    if trainer.is_finished() {
        println!(
            "already trained for {} of {} epochs",
            trainer.epochs_done, trainer.config.epochs
        );
        return Ok(());
    }
    let path = g.checkpoint_path();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    while !trainer.is_finished() {
        let m = trainer.run_epoch(train_set)?;
        let test = evaluate(&trainer.params, test_set)?;
        let mut row = Table::new(LOG_COLUMNS);
        row.push([
            m.epoch.to_string(),
            m.classifier.to_string(),
            m.reconstruction.to_string(),
            m.joint.to_string(),
            m.train_accuracy.to_string(),
            test.accuracy.to_string(),
            test.mean_reconstruction.to_string(),
        ])?;
        row.append_rows(&log_path)?;
        println!(
            "epoch {}/{}: joint {:.4}, classifier {:.4}, reconstruction {:.3}, train acc {:.4}, test acc {:.4}",
            m.epoch, trainer.config.epochs, m.joint, m.classifier, m.reconstruction, m.train_accuracy, test.accuracy
        );
        if trainer.epochs_done % opts.every == 0 || trainer.is_finished() {
            save_checkpoint(&trainer, &path)?;
            if opts.keep_snapshots {
                save_checkpoint(&trainer, &snapshot_path(&path, trainer.epochs_done))?;
            }
        }
    }
    println!("checkpoint written to {}", path.display());
    Ok(())
}

fn class_mismatch(arch: &Arch, data: &Dataset) -> Error {
    Error::InvalidArgument(format!(
        "checkpoint has {} classes but dataset {} has {}",
        arch.num_classes,
        data.id(),
        data.num_classes()
    ))
}

/// Loads the checkpoint and the test split, checking they agree.
fn load_model(g: &Global) -> Result<(ModelParams<f32>, Dataset)> {
    let path = g.checkpoint_path();
    if !path.is_file() {
        return Err(Error::Checkpoint(format!(
            "no checkpoint at {}; run `stylenet train` first or pass --checkpoint",
            path.display()
        )));
    }
    let params = load_checkpoint::<f32>(&path)?.params;
    let test = load_split(g, Split::Test, g.test_limit)?;
    let arch = *params.arch();
    if arch.num_classes != test.num_classes() {
        return Err(class_mismatch(&arch, &test));
    }
    let [_, h, w] = test.image_shape();
    if h != arch.input_side || w != arch.input_side {
        return Err(Error::InvalidArgument(format!(
            "checkpoint expects {s}x{s} images, dataset has {h}x{w}",
            s = arch.input_side
        )));
    }
    Ok((params, test))
}

fn check_index(data: &Dataset, i: usize) -> Result<usize> {
    if i >= data.len() {
        return Err(Error::InvalidArgument(format!(
            "index {i} out of range for {} test samples",
            data.len()
        )));
    }
    Ok(i)
}

fn eval(g: &Global) -> Result<()> {
    let (params, test) = load_model(g)?;
    let e = evaluate(&params, &test)?;
    let mut samples = Table::new(["index", "label", "prediction", "confidence", "reconstruction_loss"]);
    for r in &e.records {
        samples.push([
            r.index.to_string(),
            r.label.to_string(),
            r.prediction.to_string(),
            r.confidence.to_string(),
            r.reconstruction_loss.to_string(),
        ])?;
    }
    samples.write(&out_file(g, "eval_samples.csv"))?;

    let report = misclassification_detector(&e.records)?;
    let mut summary = Table::new([
        "samples",
        "accuracy",
        "mean_reconstruction_loss",
        "correct",
        "misclassified",
        "mean_loss_correct",
        "mean_loss_misclassified",
        "ratio",
    ]);
    summary.push([
        e.records.len().to_string(),
        e.accuracy.to_string(),
        e.mean_reconstruction.to_string(),
        report.correct.to_string(),
        report.misclassified.to_string(),
        opt(report.mean_correct),
        opt(report.mean_misclassified),
        opt(report.ratio()),
    ])?;
    summary.write(&out_file(g, "eval_summary.csv"))?;

    let mut sweep = Table::new(["threshold", "flagged", "precision", "recall"]);
    for p in &report.sweep {
        sweep.push([p.threshold.to_string(), p.flagged.to_string(), opt(p.precision), opt(p.recall)])?;
    }
    sweep.write(&out_file(g, "eval_sweep.csv"))?;

    println!("test accuracy {:.4} over {} samples", e.accuracy, e.records.len());
    match (report.mean_correct, report.mean_misclassified) {
        (Some(c), Some(m)) => println!(
            "mean reconstruction loss: correct {c:.3}, misclassified {m:.3} (ratio {:.3})",
            m / c
        ),
        _ => println!("no misclassified samples; reconstruction-loss comparison not available"),
    }
    Ok(())
}

fn reconstruct(g: &Global, indices: &[usize], count: usize) -> Result<()> {
    let (params, test) = load_model(g)?;
    let indices: Vec<usize> = if indices.is_empty() {
        (0..count.min(test.len())).collect()
    } else {
        indices.to_vec()
    };
    let pairs = reconstruct_samples(&params, &test, &indices)?;
    write_grid(&pairs.tiles(), 2, indices.len(), &image_file(g, "reconstruct"), g.format.into())?;
    let mut t = Table::new(["column", "index", "label", "prediction", "reconstruction_loss"]);
    for (col, &i) in indices.iter().enumerate() {
        t.push([
            col.to_string(),
            i.to_string(),
            test.labels()[i].to_string(),
            pairs.predictions[col].to_string(),
            pairs.reconstruction_losses[col].to_string(),
        ])?;
    }
    t.write(&out_file(g, "reconstruct.csv"))?;
    println!("reconstructed {} samples", indices.len());
    Ok(())
}

fn correct(g: &Global, indices: &[usize], count: usize) -> Result<()> {
    let (params, test) = load_model(g)?;
    let indices: Vec<usize> = if indices.is_empty() {
        let e = evaluate(&params, &test)?;
        let wrong: Vec<usize> = e.records.iter().filter(|r| !r.is_correct()).map(|r| r.index).take(count).collect();
        if wrong.is_empty() {
            println!("no misclassified test samples; using the first {count} instead");
            (0..count.min(test.len())).collect()
        } else {
            wrong
        }
    } else {
        indices.iter().map(|&i| check_index(&test, i)).collect::<Result<_>>()?
    };
    let kind = g.kind();
    let mut t = Table::new([
        "index",
        "label",
        "prediction",
        "confidence",
        "loss_predicted",
        "loss_corrected",
    ]);
    for &i in &indices {
        let x = test.image::<f32>(i);
        let label = test.labels()[i];
        let c = correct_and_reconstruct(&params, &x, label)?;
        write_grid(
            &[&x, &c.predicted_recon, &c.corrected_recon],
            1,
            3,
            &image_file(g, &format!("correct_{i:05}")),
            g.format.into(),
        )?;
        let loss = |r: &Tensor<f32>| stylenet::tensor::squared_distance(r.data(), x.data());
        t.push([
            i.to_string(),
            label.to_string(),
            c.prediction.to_string(),
            c.confidence.to_string(),
            loss(&c.predicted_recon).to_string(),
            loss(&c.corrected_recon).to_string(),
        ])?;
        println!(
            "sample {i}: label {}, predicted {} with confidence {:.2}",
            kind.class_name(label),
            kind.class_name(c.prediction),
            c.confidence
        );
    }
    t.write(&out_file(g, "correct.csv"))
}

const NEIGHBOR_GRID_COLS: usize = 14;

fn neighbors(g: &Global, queries: &[usize], count: usize, k: usize) -> Result<()> {
    let (params, test) = load_model(g)?;
    let e = evaluate(&params, &test)?;
    let index = NeighborIndex::from_evaluation(&test, &e)?;
    let queries: Vec<usize> = if queries.is_empty() {
        spread_indices(test.len(), count, g.seed)
    } else {
        queries.iter().map(|&q| check_index(&test, q)).collect::<Result<_>>()?
    };
    let kind = g.kind();
    let mut header: Vec<String> = [
        "query",
        "label",
        "space",
        "k",
        "mean_image_distance",
        "mean_style_distance",
        "query_class_count",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..test.num_classes()).map(|c| format!("class_{}", kind.class_name(c))));
    let mut summary = Table::new(header);
    let mut ranked = Table::new([
        "query",
        "space",
        "rank",
        "neighbor",
        "label",
        "image_distance",
        "style_distance",
    ]);
    let rows = (k + 1).div_ceil(NEIGHBOR_GRID_COLS);
    for &q in &queries {
        for space in [Space::Image, Space::Style] {
            let r = nearest_neighbors(&index, q, space, k)?;
            let tiles: Vec<Tensor<f32>> = std::iter::once(q).chain(r.neighbors.iter().copied()).map(|i| test.image(i)).collect();
            let refs: Vec<&Tensor<f32>> = tiles.iter().collect();
            write_grid(
                &refs,
                rows,
                NEIGHBOR_GRID_COLS,
                &image_file(g, &format!("neighbors_{q:05}_{}", space.name())),
                g.format.into(),
            )?;
            let mut row = vec![
                q.to_string(),
                test.labels()[q].to_string(),
                space.name().to_string(),
                k.to_string(),
                r.mean_image_distance.to_string(),
                r.mean_style_distance.to_string(),
                r.query_class_count(&index).to_string(),
            ];
            row.extend(r.class_histogram.iter().map(|c| c.to_string()));
            summary.push(row)?;
            for (rank, &n) in r.neighbors.iter().enumerate() {
                ranked.push([
                    q.to_string(),
                    space.name().to_string(),
                    (rank + 1).to_string(),
                    n.to_string(),
                    test.labels()[n].to_string(),
                    r.image_distances[rank].to_string(),
                    r.style_distances[rank].to_string(),
                ])?;
            }
            println!(
                "query {q} ({}) in {} space: mean image distance {:.2}, mean style distance {:.3}, {} of {k} share its class",
                kind.class_name(test.labels()[q]),
                space.name(),
                r.mean_image_distance,
                r.mean_style_distance,
                r.query_class_count(&index)
            );
        }
    }
    summary.write(&out_file(g, "neighbors.csv"))?;
    ranked.write(&out_file(g, "neighbors_ranked.csv"))
}

fn same_label_partner(test: &Dataset, from: usize) -> Result<usize> {
    let label = test.labels()[from];
    (1..test.len())
        .map(|d| (from + d) % test.len())
        .find(|&i| test.labels()[i] == label)
        .ok_or_else(|| Error::InvalidArgument(format!("no other test sample has label {label}")))
}

fn interpolate(g: &Global, from: Option<usize>, to: Option<usize>, class: Option<usize>, lambdas: &[f64]) -> Result<()> {
    let (params, test) = load_model(g)?;
    let from = match from {
        Some(i) => check_index(&test, i)?,
        None => spread_indices(test.len(), 1, g.seed)[0],
    };
    let to = match to {
        Some(i) => check_index(&test, i)?,
        None => same_label_partner(&test, from)?,
    };
    let class = class.unwrap_or(test.labels()[from]);
    let lambdas = if lambdas.is_empty() {
        default_lambda_grid()
    } else {
        lambdas.to_vec()
    };
    let (c1, _) = encode(&params, &test.image(from))?;
    let (c2, _) = encode(&params, &test.image(to))?;
    let track = interpolate_styles(&params, class, &c1.m, &c2.m, &lambdas)?;
    let format: ImageFormat = g.format.into();
    for (n, frame) in track.frames.iter().enumerate() {
        write_grid(&[frame], 1, 1, &image_file(g, &format!("interpolate_{:02}", n + 1)), format)?;
    }
    let refs: Vec<&Tensor<f32>> = track.frames.iter().collect();
    write_grid(&refs, 1, refs.len(), &image_file(g, "interpolate_strip"), format)?;

    let style_len = params.arch().style;
    let mut header: Vec<String> = ["frame", "lambda", "from", "to", "class"].map(String::from).to_vec();
    header.extend((0..style_len).map(|i| format!("m_{i}")));
    let mut t = Table::new(header);
    for (n, (lambda, m)) in track.lambdas.iter().zip(&track.styles).enumerate() {
        let mut row = vec![
            (n + 1).to_string(),
            lambda.to_string(),
            from.to_string(),
            to.to_string(),
            class.to_string(),
        ];
        row.extend(m.data().iter().map(|v| v.to_string()));
        t.push(row)?;
    }
    t.write(&out_file(g, "interpolate.csv"))?;
    println!(
        "interpolated {} frames between samples {from} and {to} as class {}",
        track.frames.len(),
        g.kind().class_name(class)
    );
    Ok(())
}

fn transfer(g: &Global, from: Option<usize>, classes: &[usize]) -> Result<()> {
    let (params, test) = load_model(g)?;
    let from = match from {
        Some(i) => check_index(&test, i)?,
        None => spread_indices(test.len(), 1, g.seed)[0],
    };
    let classes: Vec<usize> = if classes.is_empty() {
        (0..test.num_classes()).collect()
    } else {
        classes.to_vec()
    };
    let x = test.image::<f32>(from);
    let (code, _) = encode(&params, &x)?;
    let mut tiles = vec![x];
    let mut t = Table::new(["source", "source_label", "target_class", "mean_intensity"]);
    for &c in &classes {
        let img = transfer_style(&params, c, &code.m)?;
        let mean = img.data().iter().map(|&p| f64::from(p)).sum::<f64>() / img.len() as f64;
        t.push([from.to_string(), test.labels()[from].to_string(), c.to_string(), mean.to_string()])?;
        tiles.push(img);
    }
    let refs: Vec<&Tensor<f32>> = tiles.iter().collect();
    write_grid(&refs, 1, refs.len(), &image_file(g, &format!("transfer_{from:05}")), g.format.into())?;
    t.write(&out_file(g, "transfer.csv"))?;
    println!(
        "transferred the style of sample {from} ({}) to {} classes",
        g.kind().class_name(test.labels()[from]),
        classes.len()
    );
    Ok(())
}
