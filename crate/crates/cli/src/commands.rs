use std::fs;
use std::path::{Path, PathBuf};

use mixssm_core::gradcheck::{run_suite, SuiteOptions};
use mixssm_core::network::{load_checkpoint, save_checkpoint, MixSsmNet, ModelConfig};
use mixssm_core::nn::Module;
use mixssm_core::train::{evaluate, generate_synthetic, load_image_folder, train, Dataset, EpochLog, Parallelism};

use crate::config::RunConfigFile;
use crate::error::{CliError, CliResult};
use crate::sweeps::{ablation_settings, rows_to_csv, run_settings, sweep_settings, Setting};
use crate::{threads_from_env, Command};

pub fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Train {
            config,
            data,
            out,
            epochs,
            batch_size,
            lr,
            seed,
            max_steps,
        } => {
            let mut cfg = RunConfigFile::load_or_default(config.as_deref())?;
            if let Some(v) = epochs {
                cfg.train.epochs = v;
            }
            if let Some(v) = batch_size {
                cfg.train.batch_size = v;
            }
            if let Some(v) = lr {
                cfg.train.lr = v;
            }
            if let Some(v) = seed {
                cfg.train.seed = v;
                cfg.model.seed = v;
            }
            if max_steps.is_some() {
                cfg.train.max_steps = max_steps;
            }
            cmd_train(&cfg, data.as_deref(), &out)
        }
        Command::Eval { ckpt, data, metrics_out } => cmd_eval(&ckpt, &data, metrics_out.as_deref()),
        Command::Gradcheck {
            seed,
            tolerance,
            seeds,
            inject_fault,
        } => cmd_gradcheck(SuiteOptions {
            seed,
            seeds,
            tolerance,
            inject_fault,
            ..SuiteOptions::default()
        }),
        Command::Ablate {
            config,
            data,
            eval_data,
            out,
            parallel,
        } => {
            let cfg = RunConfigFile::load_or_default(config.as_deref())?;
            let settings = ablation_settings(&cfg.model);
            cmd_sweep(&cfg, &settings, "config", data.as_deref(), eval_data.as_deref(), &out, parallel)
        }
        Command::Analyze {
            config,
            data,
            eval_data,
            sweep,
            out,
            parallel,
        } => {
            let cfg = RunConfigFile::load_or_default(config.as_deref())?;
            let settings = sweep_settings(&cfg.model, sweep);
            cmd_sweep(&cfg, &settings, "setting", data.as_deref(), eval_data.as_deref(), &out, parallel)
        }
        Command::Synth {
            out,
            classes,
            per_class,
            size,
            seed,
        } => {
            generate_synthetic(&out, classes, per_class, size, seed)?;
            println!("wrote {} images to {}", classes * per_class, out.display());
            Ok(())
        }
        Command::Inspect { ckpt } => cmd_inspect(&ckpt),
    }
}

fn resolve_data(flag: Option<&Path>, fallback: Option<&PathBuf>, what: &str) -> CliResult<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| fallback.cloned())
        .ok_or_else(|| CliError::Usage(format!("no {what} data: pass --data or set it in the config")))
}

fn load_for(model: &ModelConfig, dir: &Path) -> CliResult<Dataset> {
    let data = load_image_folder(dir, model.image_size)?;
    if data.num_classes() != model.num_classes {
        return Err(CliError::Usage(format!(
            "{} holds {} classes but the model predicts {}",
            dir.display(),
            data.num_classes(),
            model.num_classes
        )));
    }
    Ok(data)
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Epoch log path for a checkpoint: `model.ckpt` -> `model.log.csv`.
pub fn log_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("log.csv")
}

fn cmd_train(cfg: &RunConfigFile, data: Option<&Path>, out: &Path) -> CliResult<()> {
    let dir = resolve_data(data, cfg.data.train.as_ref(), "training")?;
    let dataset = load_for(&cfg.model, &dir)?;
    let threads = threads_from_env()?;
    let mut model: MixSsmNet = MixSsmNet::new(&cfg.model)?;
    println!("{}", EpochLog::CSV_HEADER);
    let logs = train(&mut model, &dataset, &cfg.train, Parallelism(threads), |log| {
        println!("{}", log.csv_row());
    })?;
    let mut csv = format!("{}\n", EpochLog::CSV_HEADER);
    for log in &logs {
        csv.push_str(&log.csv_row());
        csv.push('\n');
    }
    save_checkpoint(&model, out)?;
    write(&log_path(out), &csv)?;
    Ok(())
}

fn cmd_eval(ckpt: &Path, data: &Path, metrics_out: Option<&Path>) -> CliResult<()> {
    let model: MixSsmNet = load_checkpoint(ckpt)?;
    let dataset = load_for(&model.config, data)?;
    let metrics = evaluate(&model, &dataset, Parallelism(threads_from_env()?))?;
    println!(
        "acc={} prec={} rec={} f1={}",
        metrics.accuracy, metrics.precision, metrics.recall, metrics.f1
    );
    if let Some(path) = metrics_out {
        write(path, &metrics.to_text())?;
    }
    Ok(())
}

fn cmd_gradcheck(opts: SuiteOptions) -> CliResult<()> {
    let results = run_suite(&opts)?;
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{:<10} max_rel_error={:.3e} checked={} seeds={} worst={} {}",
            r.name,
            r.report.max_rel_error,
            r.report.checked,
            r.seeds,
            r.report.worst.as_deref().unwrap_or("-"),
            if r.report.pass { "PASS" } else { "FAIL" }
        );
        if !r.report.pass {
            failed.push(r.name.to_string());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheckFailed(failed))
    }
}

fn cmd_sweep(
    cfg: &RunConfigFile,
    settings: &[Setting],
    key: &str,
    data: Option<&Path>,
    eval_data: Option<&Path>,
    out: &Path,
    parallel: bool,
) -> CliResult<()> {
    for s in settings {
        s.model.validate()?;
    }
    let train_dir = resolve_data(data, cfg.data.train.as_ref(), "training")?;
    let train_data = load_for(&cfg.model, &train_dir)?;
    let eval_set;
    let eval_ref = match eval_data.map(Path::to_path_buf).or_else(|| cfg.data.eval.clone()) {
        Some(dir) => {
            eval_set = load_for(&cfg.model, &dir)?;
            &eval_set
        }
        None => &train_data,
    };
    let rows = run_settings(settings, &cfg.train, &train_data, eval_ref, threads_from_env()?, parallel)?;
    for r in &rows {
        println!("{:<12} params={:<8} acc={} f1={}", r.name, r.params, r.accuracy, r.f1);
    }
    write(out, &rows_to_csv(key, &rows))
}

fn cmd_inspect(ckpt: &Path) -> CliResult<()> {
    let model: MixSsmNet = load_checkpoint(ckpt)?;
    let config = toml::to_string(&model.config).map_err(|e| CliError::Usage(e.to_string()))?;
    println!("[config]\n{config}");
    println!("[params]");
    let groups = model.param_groups();
    for (name, n) in &groups {
        println!("{name}={n}");
    }
    println!("total={}", model.num_params());
    Ok(())
}
