use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtgn_core::data::{
    chronological_split, export_csv, ingest_csv, synth_generate, EventDataset, LabelCounts, Scaler, Splits,
};
use rtgn_core::encoder::{EncoderParams, HeadKind};
use rtgn_core::eval::{export_traces, model_name, noise_study, render_report, StudyConfig};
use rtgn_core::heads::{train as train_model, write_loss_csv, Checkpoint, Model};

use crate::config::RunConfig;

/// `<path>.<suffix>`, keeping the original extension in the stem.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_data(path: &Path, features: usize) -> Result<EventDataset> {
    let ds = ingest_csv(path).with_context(|| format!("reading dataset {}", path.display()))?;
    ensure!(
        ds.feature_dim == features,
        "{} has {} feature columns but the model expects {features}; set encoder.features accordingly",
        path.display(),
        ds.feature_dim
    );
    Ok(ds)
}

fn scaled_splits(config: &RunConfig, ds: &EventDataset, scaler: &Scaler) -> Result<Splits> {
    let mut splits = chronological_split(ds, &config.split)?;
    for part in [&mut splits.train, &mut splits.val, &mut splits.test] {
        scaler.apply(part)?;
    }
    Ok(splits)
}

fn load_checkpoint(path: &Path, head: Option<HeadKind>) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if let Some(head) = head {
        ensure!(
            ck.model.head() == head,
            "{} holds a {} model but --head {} was given",
            path.display(),
            ck.model.head().as_str(),
            head.as_str()
        );
    }
    Ok(ck)
}

fn checkpoint_scaler(ck: &Checkpoint, path: &Path) -> Result<Scaler> {
    ck.scaler
        .clone()
        .with_context(|| format!("{} carries no feature scaler", path.display()))
}

pub fn synth(config: &RunConfig, out: &Path) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ds = synth_generate(&config.synth, &mut rng)?;
    export_csv(out, &ds).with_context(|| format!("writing {}", out.display()))?;
    let counts = ds.label_counts();
    eprintln!(
        "synth: {} events ({} normal, {} attack) over {} nodes",
        ds.len(),
        counts.normal,
        counts.attack,
        ds.node_count()
    );
    println!("{}", out.display());
    Ok(())
}

pub fn train(config: &RunConfig, data: &Path, out: &Path, loss: &Path) -> Result<()> {
    let ds = load_data(data, config.dims.features)?;
    let mut splits = chronological_split(&ds, &config.split)?;
    let scaler = Scaler::fit(&splits.train)?;
    scaler.apply(&mut splits.train)?;
    let params = EncoderParams::init(config.dims, config.head, config.seed);
    eprintln!(
        "train: {} head on {} events for {} epochs",
        config.head.as_str(),
        splits.train.len(),
        config.train.epochs
    );
    let (model, trace) = train_model(params, &splits.train, &config.train_config())?;
    if let Some(last) = trace.last() {
        eprintln!("train: final loss {:.6} (+) {:.6} (-)", last.positive, last.negative);
    }
    Checkpoint {
        model,
        scaler: Some(scaler),
        config: config.render(),
    }
    .save(out)
    .with_context(|| format!("writing checkpoint {}", out.display()))?;
    let mut w = create(loss)?;
    write_loss_csv(&mut w, &trace)?;
    w.flush()?;
    println!("{}", out.display());
    println!("{}", loss.display());
    Ok(())
}

pub fn evaluate(
    config: &RunConfig,
    head: Option<HeadKind>,
    data: &Path,
    checkpoints: &[PathBuf],
    out: &Path,
    table_path: Option<&Path>,
) -> Result<()> {
    if config.resamples < 2 {
        bail!(
            "resamples = {} leaves the standard deviation undefined; use --resamples 2 or more (5 is the usual protocol)",
            config.resamples
        );
    }
    let loaded: Vec<Checkpoint> = checkpoints
        .iter()
        .map(|p| load_checkpoint(p, head))
        .collect::<Result<_>>()?;
    let scaler = checkpoint_scaler(&loaded[0], &checkpoints[0])?;
    for (ck, path) in loaded.iter().zip(checkpoints).skip(1) {
        ensure!(
            checkpoint_scaler(ck, path)? == scaler,
            "{} was trained on different data than {}",
            path.display(),
            checkpoints[0].display()
        );
    }
    let ds = load_data(data, loaded[0].model.params.dims.features)?;
    for (ck, path) in loaded.iter().zip(checkpoints) {
        ensure!(
            ck.model.params.dims.features == ds.feature_dim,
            "{} expects {} features, dataset has {}",
            path.display(),
            ck.model.params.dims.features,
            ds.feature_dim
        );
    }
    let splits = scaled_splits(config, &ds, &scaler)?;
    let counts = LabelCounts::of(&splits.test);
    ensure!(
        counts.attack > 0 && counts.normal > 0,
        "test split has {} attack and {} normal events; ROC-AUC needs both classes",
        counts.attack,
        counts.normal
    );

    let models: Vec<&Model> = loaded.iter().map(|c| &c.model).collect();
    let taus = match models.iter().find(|m| m.head() == HeadKind::Gaussian) {
        Some(m) => config.tau_grid().resolve(m, &splits, config.update_memory)?,
        None => Vec::new(),
    };
    if !taus.is_empty() {
        eprintln!(
            "evaluate: s_sigma thresholds {:.4} .. {:.4} ({} points)",
            taus[0],
            taus[taus.len() - 1],
            taus.len()
        );
    }
    let study = StudyConfig {
        ratios: config.ratios.iter().map(|r| r / 100.0).collect(),
        resamples: config.resamples,
        taus,
        noise_variance: config.noise_variance,
        update_memory: config.update_memory,
        seed: config.seed,
    };
    let names: Vec<&str> = models.iter().map(|m| model_name(m.head())).collect();
    eprintln!(
        "evaluate: {} x {} noisy test splits, models {}",
        study.ratios.len(),
        study.resamples,
        names.join(", ")
    );
    let rows = noise_study(&models, &splits, &study)?;
    let (table, csv) = render_report(&rows);
    std::fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = table_path {
        std::fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{table}");
    println!("{}", out.display());
    Ok(())
}

pub fn trace(config: &RunConfig, head: Option<HeadKind>, data: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let ck = load_checkpoint(checkpoint, head)?;
    let scaler = checkpoint_scaler(&ck, checkpoint)?;
    let ds = load_data(data, ck.model.params.dims.features)?;
    let splits = scaled_splits(config, &ds, &scaler)?;
    let events: Vec<_> = splits.all().cloned().collect();
    let mut w = create(out)?;
    export_traces(&ck.model, &events, &mut w)?;
    w.flush()?;

    let t_val = splits.val.first().map_or(splits.t_test, |e| e.t);
    let boundaries = sibling(out, "boundaries.csv");
    std::fs::write(
        &boundaries,
        format!("boundary,t\nvalidation,{t_val}\ntest,{}\n", splits.t_test),
    )
    .with_context(|| format!("writing {}", boundaries.display()))?;
    println!("{}", out.display());
    println!("{}", boundaries.display());
    Ok(())
}
