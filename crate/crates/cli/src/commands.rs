use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gazebin::data::{
    assign_default_splits, generate_synthetic, load_dataset, prepare_training_set, preprocess, select_split,
    DatasetKind, DatasetSpec, Sample, Split,
};
use gazebin::eval::evaluate;
use gazebin::model::{build_model, load_checkpoint, ModelPredictor};
use gazebin::reference::ReferenceTable;
use gazebin::report::{render_report, render_subject_chart, MeasuredResult, ReportFormat};
use gazebin::selfcheck::{run_selfcheck, SelfCheckOptions};
use gazebin::train::{evaluate_final_and_best, loso_cv, train, BEST_CHECKPOINT};
use serde::Serialize;
use serde_json::json;

use crate::config::{ConfigError, RunConfig};

/// Loads or generates every sample of the configured dataset and tags
/// untagged samples with the default train/val/test rule.
pub fn load_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    let mut samples = match cfg.dataset.kind {
        DatasetKind::Synthetic => generate_synthetic(&cfg.dataset.synthetic)?,
        kind => {
            let root = cfg.dataset.root.clone().expect("checked when resolving");
            load_dataset(&DatasetSpec {
                kind,
                root,
                scheme: cfg.scheme.clone(),
                split: Split::All,
            })?
        }
    };
    assign_default_splits(&mut samples);
    Ok(samples)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn method_name(cfg: &RunConfig, variant: &str) -> String {
    let backbone = serde_json::to_value(cfg.model.backbone)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();
    format!("{backbone} ({variant})")
}

fn write_results(cfg: &RunConfig, command: &str, results: &[MeasuredResult]) -> Result<()> {
    write_json(&cfg.output_dir.join(format!("results_{command}.json")), &results)?;
    let csv = render_report(results, &ReferenceTable::published(), ReportFormat::Csv);
    fs::write(cfg.output_dir.join(format!("{command}.csv")), csv)?;
    Ok(())
}

pub fn cmd_preprocess(raw: &Path, out: &Path, kind: DatasetKind) -> Result<()> {
    if !raw.is_dir() {
        return Err(ConfigError(format!("raw root {} does not exist", raw.display())).into());
    }
    let summary = preprocess(raw, out, kind)?;
    write_json(&out.join("preprocess_summary.json"), &summary)?;
    println!(
        "preprocess: {} samples, {} subjects, {} failures -> {}",
        summary.samples,
        summary.subjects,
        summary.failures.len(),
        out.display()
    );
    for f in &summary.failures {
        eprintln!("  {f}");
    }
    if !summary.is_success() {
        bail!("{} records failed to convert", summary.failures.len());
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg)?;
    let samples = load_samples(cfg)?;
    let train_samples = select_split(&samples, Split::Train);
    let val_samples = select_split(&samples, Split::Val);
    if train_samples.is_empty() {
        return Err(ConfigError("dataset has no training samples".into()).into());
    }
    let set = prepare_training_set(&train_samples, &cfg.scheme)?;
    let model = build_model(&cfg.model)?;
    let pretrained_from = model.pretrained_from().map(Path::to_path_buf);
    let val = (!val_samples.is_empty()).then_some(val_samples.as_slice());
    log::info!("training on {} samples, validating on {}", set.len(), val_samples.len());
    let mut outcome = train(model, &cfg.scheme, &set, val, &cfg.train)?;

    let mut results = Vec::new();
    let mut summary = json!(null);
    if let Some(val) = val {
        let both = evaluate_final_and_best(&mut outcome, &cfg.scheme, val, cfg.scope)?;
        let dataset = cfg.dataset.kind.label();
        results.push(MeasuredResult::from_eval(
            dataset,
            &method_name(cfg, "final"),
            Some(cfg.train.beta),
            &both.final_report,
        ));
        if let Some(best) = &both.best_report {
            results.push(MeasuredResult::from_eval(
                dataset,
                &method_name(cfg, "best"),
                Some(cfg.train.beta),
                best,
            ));
        }
        println!(
            "final epoch {}: val error {:.3} deg ({})",
            both.final_epoch, both.final_report.mean_error, cfg.scope
        );
        if let (Some(e), Some(r)) = (both.best_epoch, &both.best_report) {
            println!("best epoch {e}: val error {:.3} deg", r.mean_error);
        }
        summary = json!({
            "scope": cfg.scope,
            "final_epoch": both.final_epoch,
            "final_val_error": both.final_report.mean_error,
            "best_epoch": both.best_epoch,
            "best_val_error": both.best_report.as_ref().map(|r| r.mean_error),
        });
    }
    write_json(
        &cfg.output_dir.join("metrics_train.json"),
        &json!({
            "command": "train",
            "seed": cfg.seed,
            "config": cfg,
            "pretrained_from": pretrained_from,
            "train_samples": set.len(),
            "val_samples": val_samples.len(),
            "history": outcome.history,
            "validation": summary,
        }),
    )?;
    write_results(cfg, "train", &results)?;
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<()> {
    prepare_out(cfg)?;
    let checkpoint = checkpoint.unwrap_or_else(|| {
        cfg.train
            .checkpoint_dir
            .clone()
            .unwrap_or_else(|| cfg.output_dir.join("checkpoints"))
            .join(BEST_CHECKPOINT)
    });
    let (model, scheme) = load_checkpoint(&checkpoint)?;
    if scheme != cfg.scheme {
        log::warn!("checkpoint bin scheme {scheme:?} differs from the configured one; using the checkpoint's");
    }
    let samples = select_split(&load_samples(cfg)?, cfg.dataset.split);
    let predictor = ModelPredictor {
        model: &model,
        scheme: &scheme,
    };
    let report = evaluate(&predictor, &samples, cfg.scope)?.with_provenance(json!({
        "config": cfg,
        "checkpoint": checkpoint,
        "split": cfg.dataset.split,
    }));
    println!(
        "evaluate: {} samples ({}, split {}), mean angular error {:.3} deg",
        report.len(),
        cfg.scope,
        cfg.dataset.split,
        report.mean_error
    );
    write_json(&cfg.output_dir.join("eval_report.json"), &report)?;
    write_json(
        &cfg.output_dir.join("metrics_evaluate.json"),
        &json!({
            "command": "evaluate",
            "seed": cfg.seed,
            "config": cfg,
            "checkpoint": checkpoint,
            "samples": report.len(),
            "mean_error": report.mean_error,
            "per_subject": report.per_subject,
        }),
    )?;
    let result = MeasuredResult::from_eval(
        cfg.dataset.kind.label(),
        &method_name(cfg, "checkpoint"),
        Some(cfg.train.beta),
        &report,
    );
    write_results(cfg, "evaluate", &[result])?;
    Ok(())
}

pub fn cmd_loso(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg)?;
    let samples = load_samples(cfg)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.checkpoint_dir = train_cfg.checkpoint_dir.map(|d| d.join("loso"));
    let outcome = loso_cv(&samples, &cfg.model, &cfg.scheme, &train_cfg, cfg.scope)?;
    for f in &outcome.folds {
        println!("held out {}: {:.3} deg over {} samples", f.subject, f.report.mean_error, f.report.len());
    }
    println!("grand mean over {} subjects: {:.3} deg", outcome.folds.len(), outcome.grand_mean);

    let result = MeasuredResult::from_loso(
        cfg.dataset.kind.label(),
        &method_name(cfg, "loso"),
        Some(cfg.train.beta),
        cfg.scope,
        &outcome,
    );
    let folds: Vec<_> = outcome
        .folds
        .iter()
        .map(|f| {
            json!({
                "subject": f.subject,
                "train_samples": f.train_size,
                "eval_samples": f.report.len(),
                "mean_error": f.report.mean_error,
                "history": f.fitted,
            })
        })
        .collect();
    write_json(
        &cfg.output_dir.join("metrics_loso.json"),
        &json!({
            "command": "loso",
            "seed": cfg.seed,
            "config": cfg,
            "folds": folds,
            "grand_mean": outcome.grand_mean,
        }),
    )?;
    fs::write(
        cfg.output_dir.join("subject_chart.csv"),
        render_subject_chart(Some(&result), &ReferenceTable::published()),
    )?;
    write_results(cfg, "loso", &[result])?;
    Ok(())
}

/// Measured results written by earlier commands into `dir`.
fn collect_results(dir: &Path) -> Result<Vec<MeasuredResult>> {
    let mut paths: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("results_") && n.ends_with(".json"))
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    paths.sort();
    let mut all = Vec::new();
    for p in paths {
        let text = fs::read_to_string(&p)?;
        let mut r: Vec<MeasuredResult> =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        all.append(&mut r);
    }
    Ok(all)
}

pub fn cmd_report(cfg: &RunConfig, format: ReportFormat) -> Result<()> {
    let results = collect_results(&cfg.output_dir)?;
    let reference = ReferenceTable::published();
    let text = render_report(&results, &reference, format);
    print!("{text}");
    if cfg.output_dir.is_dir() {
        let ext = match format {
            ReportFormat::Text => "txt",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        };
        fs::write(cfg.output_dir.join(format!("report.{ext}")), &text)?;
        let loso = results.iter().find(|r| r.aggregate == gazebin::report::Aggregate::SubjectMean);
        fs::write(
            cfg.output_dir.join("subject_chart.csv"),
            render_subject_chart(loso, &reference),
        )?;
    }
    Ok(())
}

/// Returns whether every check passed.
pub fn cmd_selfcheck(seed: Option<u64>) -> bool {
    let mut options = SelfCheckOptions::default();
    if let Some(s) = seed {
        options.seed = s;
    }
    let report = run_selfcheck(&options);
    print!("{}", report.render());
    report.passed()
}
