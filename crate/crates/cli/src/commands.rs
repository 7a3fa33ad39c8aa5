use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rbm_gradlab::datasets::{
    load_cifar_subset_with, load_mnist_subset_with, load_silhouettes, CIFAR_SUBSET, MNIST_PER_DIGIT,
};
use rbm_gradlab::trainer::train_with;
use rbm_gradlab::variance::{Binarization, IcdStart};
use rbm_gradlab::{
    profile as profile_checkpoint, Checkpoint, Dataset, Error, LrMode, ProtocolConfig, Strategy,
    TrainConfig,
};
use serde::Serialize;
use serde_json::json;

use crate::manifest::{file_sha256, ManifestBuilder};
use crate::report_io::{read_report, summarize, write_report, write_summary};
use crate::settings::{
    load_config, parse_list, parse_strategies, thread_pool, ProfileFile, TrainFile,
};
use crate::{
    BinarizationArg, CliError, ConvertArgs, IcdStartArg, LrModeArg, ProfileArgs, ReportArgs,
    SourceFormat, TrainArgs,
};

/// `dir/name.ext` → `dir/name.ext<suffix>`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(
        || "dataset".to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

#[derive(Serialize)]
struct InputDigest {
    name: String,
    sha256: String,
}

fn digests(paths: &[PathBuf]) -> Result<Vec<InputDigest>, CliError> {
    paths
        .iter()
        .map(|p| {
            Ok(InputDigest {
                name: p
                    .file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned(),
                sha256: file_sha256(p)?,
            })
        })
        .collect()
}

pub fn convert(a: &ConvertArgs) -> Result<(), CliError> {
    let want = |n: usize| {
        if a.inputs.len() == n {
            Ok(())
        } else {
            Err(CliError::Usage(format!(
                "--format {:?} takes {n} input file(s), got {}",
                a.format,
                a.inputs.len()
            )))
        }
    };
    let data = match a.format {
        SourceFormat::Mnist => {
            want(2)?;
            load_mnist_subset_with(
                &a.inputs[0],
                &a.inputs[1],
                a.per_digit.unwrap_or(MNIST_PER_DIGIT),
            )?
        }
        SourceFormat::Cifar => load_cifar_subset_with(&a.inputs, a.count.unwrap_or(CIFAR_SUBSET))?,
        SourceFormat::Silhouettes => {
            want(1)?;
            load_silhouettes(&a.inputs[0])?
        }
    };
    let config = json!({
        "format": format!("{:?}", a.format).to_lowercase(),
        "per_digit": a.per_digit,
        "count": a.count,
        "inputs": digests(&a.inputs)?,
    });
    let mut manifest = ManifestBuilder::new("convert", &config, &stem(&a.out))?;
    data.write_container(&a.out)?;
    manifest.output(&a.out);
    manifest.finish(&sidecar(&a.out, ".manifest.json"), "ok")?;
    eprintln!(
        "wrote {} examples × {} to {}",
        data.n_examples(),
        data.dim(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    data_sha256: String,
    dataset_id: &'a str,
    n_examples: usize,
    #[serde(flatten)]
    train: &'a TrainConfig,
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let file: TrainFile = load_config(a.config.as_deref())?;
    let defaults = TrainConfig::default();
    let checkpoint_epochs = match (&a.checkpoints, &file.checkpoints) {
        (Some(text), _) => parse_list(text)?,
        (None, Some(list)) => list.resolve()?,
        (None, None) => defaults.checkpoint_epochs.clone(),
    };
    let cfg = TrainConfig {
        epochs: a.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        minibatch_size: a
            .minibatch
            .or(file.minibatch)
            .unwrap_or(defaults.minibatch_size),
        learning_rate: a.lr.or(file.lr).unwrap_or(defaults.learning_rate),
        lr_mode: a
            .lr_mode
            .map(|m| match m {
                LrModeArg::Fixed => LrMode::Fixed,
                LrModeArg::Adaptive => LrMode::Adaptive,
            })
            .or(file.lr_mode)
            .unwrap_or(defaults.lr_mode),
        seed: a.seed.or(file.seed).unwrap_or(defaults.seed),
        checkpoint_epochs,
    };
    cfg.validate()?;
    let pool = thread_pool(a.jobs.or(file.jobs))?;
    let data = Dataset::read_container(&a.data)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(&a.out_dir, e))?;

    let record = TrainRecord {
        data_sha256: file_sha256(&a.data)?,
        dataset_id: &data.id,
        n_examples: data.n_examples(),
        train: &cfg,
    };
    let mut manifest = ManifestBuilder::new("train", &record, &data.id)?;
    manifest.seeds([cfg.seed]);
    let prefix = format!("{}_seed{}", data.id, cfg.seed);
    let manifest_path = a.out_dir.join(format!("{prefix}.manifest.json"));
    eprintln!(
        "training on {} ({} × {}), config {}",
        data.id,
        data.n_examples(),
        data.dim(),
        &manifest.config_hash()[..12]
    );

    let started = Instant::now();
    let mut written = Vec::new();
    let result = pool.install(|| {
        train_with(&data, &cfg, |ckpt| {
            let path = a
                .out_dir
                .join(format!("{prefix}_epoch{}.rbmckpt", ckpt.epoch));
            ckpt.write(&path)?;
            eprintln!(
                "epoch {:>4}: wrote {} ({:.0?})",
                ckpt.epoch,
                path.display(),
                started.elapsed()
            );
            written.push(path);
            Ok(())
        })
    });
    for path in &written {
        manifest.output(path);
    }
    match result {
        Ok(_) => {
            manifest.finish(&manifest_path, "ok")?;
            Ok(())
        }
        Err(Error::Diverged { epoch, last_good }) => {
            let path = a.out_dir.join(format!(
                "{prefix}_last_good_epoch{}.rbmckpt",
                last_good.epoch
            ));
            last_good.write(&path)?;
            manifest.output(&path);
            manifest.finish(&manifest_path, "diverged")?;
            Err(CliError::Numeric(format!(
                "training diverged during epoch {epoch}; last finite parameters saved to {}",
                path.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct ProfileRecord<'a> {
    data_sha256: String,
    dataset_id: &'a str,
    checkpoints: Vec<InputDigest>,
    strategies: &'a [Strategy],
    #[serde(flatten)]
    protocol: &'a ProtocolConfig,
}

fn strategy_order(s: Strategy) -> usize {
    match s {
        Strategy::Cd => 0,
        Strategy::Icd => 1,
        Strategy::Pcd => 2,
        Strategy::Baseline => 3,
    }
}

pub fn profile(a: &ProfileArgs) -> Result<(), CliError> {
    let file: ProfileFile = load_config(a.config.as_deref())?;
    let defaults = ProtocolConfig::default();
    let list = |flag: &Option<String>,
                from_file: &Option<crate::settings::ListValue>,
                default: &Vec<usize>| {
        match (flag, from_file) {
            (Some(text), _) => parse_list(text),
            (None, Some(v)) => v.resolve(),
            (None, None) => Ok(default.clone()),
        }
    };
    let mut strategies = match (&a.strategies, &file.strategies) {
        (Some(text), _) => parse_strategies(text)?,
        (None, Some(v)) => v.clone(),
        (None, None) => vec![Strategy::Cd, Strategy::Icd, Strategy::Pcd],
    };
    if strategies.is_empty() {
        return Err(CliError::Usage("no strategies requested".into()));
    }
    if strategies.contains(&Strategy::Baseline) {
        return Err(CliError::Usage(
            "the baseline is profiled alongside every strategy; request cd, icd or pcd".into(),
        ));
    }
    strategies.sort_by_key(|&s| strategy_order(s));

    let data = Dataset::read_container(&a.data)?;
    let mut checkpoints = a
        .checkpoints
        .iter()
        .map(|p| Checkpoint::read(p).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    let mut order: Vec<usize> = (0..checkpoints.len()).collect();
    order.sort_by_key(|&i| (checkpoints[i].epoch, checkpoints[i].train_seed));
    for w in order.windows(2) {
        let (x, y) = (&checkpoints[w[0]], &checkpoints[w[1]]);
        if (x.epoch, x.train_seed) == (y.epoch, y.train_seed) {
            return Err(CliError::Usage(format!(
                "{} and {} are both epoch {} of init seed {}",
                a.checkpoints[w[0]].display(),
                a.checkpoints[w[1]].display(),
                x.epoch,
                x.train_seed
            )));
        }
    }
    let seeds: BTreeSet<u64> = checkpoints.iter().map(|c| c.train_seed).collect();

    let cfg = ProtocolConfig {
        n_inits: a.inits.or(file.inits).unwrap_or(seeds.len()),
        repeats_per_example: a
            .repeats
            .or(file.repeats)
            .unwrap_or(defaults.repeats_per_example),
        k_values: list(&a.k, &file.k, &defaults.k_values)?,
        k_baseline: a
            .k_baseline
            .or(file.k_baseline)
            .unwrap_or(defaults.k_baseline),
        pcd_burn_in: a
            .pcd_burn_in
            .or(file.pcd_burn_in)
            .unwrap_or(defaults.pcd_burn_in),
        pcd_mean_lengths: list(
            &a.pcd_lengths,
            &file.pcd_lengths,
            &defaults.pcd_mean_lengths,
        )?,
        example_subset_size: a.subset.or(file.subset),
        binarization: a
            .binarization
            .map(|b| match b {
                BinarizationArg::Resample => Binarization::Resample,
                BinarizationArg::Fixed => Binarization::Fixed,
            })
            .or(file.binarization)
            .unwrap_or_default(),
        icd_start: a
            .icd_start
            .map(|s| match s {
                IcdStartArg::Uniform => IcdStart::Uniform,
                IcdStartArg::ExcludeSelf => IcdStart::ExcludeSelf,
                IcdStartArg::Pinned => IcdStart::Pinned,
            })
            .or(file.icd_start)
            .unwrap_or_default(),
        seed: a.seed.or(file.seed).unwrap_or(defaults.seed),
    };
    cfg.validate()?;
    let pool = thread_pool(a.jobs.or(file.jobs))?;

    let record = ProfileRecord {
        data_sha256: file_sha256(&a.data)?,
        dataset_id: &data.id,
        checkpoints: digests(
            &order
                .iter()
                .map(|&i| a.checkpoints[i].clone())
                .collect::<Vec<_>>(),
        )?,
        strategies: &strategies,
        protocol: &cfg,
    };
    let mut manifest = ManifestBuilder::new("profile", &record, &data.id)?;
    manifest.seeds(seeds.iter().copied().chain([cfg.seed]));

    let started = Instant::now();
    let mut rows = Vec::new();
    for &i in &order {
        let ckpt = &checkpoints[i];
        eprintln!(
            "profiling {} (init seed {}, epoch {})",
            a.checkpoints[i].display(),
            ckpt.train_seed,
            ckpt.epoch
        );
        rows.extend(pool.install(|| profile_checkpoint(ckpt, &data, &cfg, &strategies))?);
        eprintln!("  done at {:.0?}", started.elapsed());
    }
    checkpoints.clear();

    write_report(&a.out, &rows)?;
    manifest.output(&a.out);
    let summary_path = a
        .summary_out
        .clone()
        .unwrap_or_else(|| a.out.with_extension("summary.json"));
    let summary = summarize(&rows, &[], Some(cfg.n_inits));
    if let Ok(summary) = &summary {
        write_summary(&summary_path, summary)?;
        manifest.output(&summary_path);
        for w in &summary.warnings {
            eprintln!("warning: {w}");
        }
    }
    let status = if summary.is_ok() { "ok" } else { "incomplete" };
    manifest.finish(&sidecar(&a.out, ".manifest.json"), status)?;
    summary.map(|_| ())
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    let strategies = parse_strategies(&a.strategies)?;
    let rows = read_report(&a.input)?;
    let summary = summarize(&rows, &strategies, a.inits)?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    write_summary(&a.out, &summary)
}
