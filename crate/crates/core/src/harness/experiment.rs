//! Experiment runners: model comparison, derived-feature ablation and
//! pre-match prediction, plus single-model train/evaluate bundles.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synth::{synth_generate, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    compute_metrics, confusion_matrix, cross_validate_pool, cv_seed, fit_and_score, grid_search,
    holdout_split, roc_auc, write_confusion_csv, write_importances_csv, write_results_csv,
    write_roc_csv, Metrics, ModelRow, ParamGrid, RocCurve, DEFAULT_GRID_CAP,
};
use crate::features::{
    build_samples, FeatureConfig, FeatureMode, FeatureSet, LabeledSample, SampleSet, Standardizer,
};
use crate::match_data::{read_matches, MatchRecord};
use crate::models::{Family, Learner, ModelSpec, Predictor, TrainedModel};
use crate::util::{derive_seed, format_sig};

pub const MIN_EXPERIMENT_MATCHES: usize = 20;
const FINAL_FIT_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Path(PathBuf),
    Synth(SynthConfig),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthConfig::default())
    }
}

/// A model to evaluate, optionally tuned over a grid first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    #[serde(flatten)]
    pub spec: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<ParamGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl ModelEntry {
    pub fn preset(family: Family) -> Self {
        ModelEntry {
            spec: ModelSpec::preset(family),
            grid: None,
            name: None,
        }
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.spec.label())
    }
}

fn default_models() -> Vec<ModelEntry> {
    [
        Family::LogReg,
        Family::RandomForest,
        Family::Svm,
        Family::Mlp,
    ]
    .into_iter()
    .map(ModelEntry::preset)
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub input: DataSource,
    pub models: Vec<ModelEntry>,
    pub k: usize,
    pub seed: u64,
    pub feature_mode: FeatureMode,
    pub feature_set: FeatureSet,
    pub grid_cap: usize,
    pub features: FeatureConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            input: DataSource::default(),
            models: default_models(),
            k: 5,
            seed: 0,
            feature_mode: FeatureMode::PerMatch,
            feature_set: FeatureSet::Full,
            grid_cap: DEFAULT_GRID_CAP,
            features: FeatureConfig::default(),
        }
    }
}

/// Converts a TOML error into a parse error with a 1-based position.
pub fn toml_error(e: toml::de::Error, text: &str) -> Error {
    let (line, column) = e
        .span()
        .map(|s| {
            let before = &text[..s.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
            (line, column)
        })
        .unwrap_or((0, 0));
    Error::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| toml_error(e, text))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.toml` file as TOML and anything else as JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::domain(format!(
                "k must be at least 2, got {}",
                self.k
            )));
        }
        if self.models.is_empty() {
            return Err(Error::domain("experiment lists no models"));
        }
        for m in &self.models {
            m.spec.validate()?;
        }
        if let DataSource::Synth(s) = &self.input {
            s.validate()?;
        }
        if !(0.0..=1.0).contains(&self.features.stroke_missing_threshold) {
            return Err(Error::domain("stroke_missing_threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub fn load_matches(source: &DataSource) -> Result<Vec<MatchRecord>> {
    match source {
        DataSource::Path(p) => read_matches(File::open(p)?),
        DataSource::Synth(cfg) => synth_generate(cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub feature_set: FeatureSet,
    pub feature_mode: FeatureMode,
    pub rows: Vec<ModelRow>,
    pub n_samples: usize,
    pub dropped: Vec<(String, String)>,
    /// Share of the majority class among test samples.
    pub baseline_accuracy: f64,
    pub test_matches: usize,
}

impl EvalReport {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let create = |name: &str| File::create(dir.join(name)).map(BufWriter::new);
        write_results_csv(create("results.csv")?, &self.rows)?;
        write_confusion_csv(create("confusion.csv")?, &self.rows)?;
        write_roc_csv(create("roc.csv")?, &self.rows)?;
        write_importances_csv(
            create("importances.csv")?,
            &self.rows,
            self.feature_set.names(),
        )?;
        Ok(())
    }
}

fn majority_share(samples: &[LabeledSample], idx: &[usize]) -> f64 {
    let pos = idx.iter().filter(|&&i| samples[i].label > 0).count();
    pos.max(idx.len() - pos) as f64 / idx.len() as f64
}

fn test_metrics(
    y: &[i8],
    preds: &[(f64, i8)],
) -> Result<(Metrics, crate::evaluation::ConfusionMatrix, RocCurve)> {
    let labels: Vec<i8> = preds.iter().map(|p| p.1).collect();
    let scores: Vec<f64> = preds.iter().map(|p| p.0).collect();
    let cm = confusion_matrix(y, &labels)?;
    Ok((compute_metrics(&cm)?, cm, roc_auc(y, &scores)?))
}

fn evaluate_entry(
    entry: &ModelEntry,
    samples: &[LabeledSample],
    pool: &[usize],
    test: &[usize],
    cfg: &ExperimentConfig,
) -> Result<ModelRow> {
    let fold_seed = cv_seed(cfg.seed);
    let (spec, cv) = match &entry.grid {
        Some(grid) => {
            let best = grid_search(
                &entry.spec,
                grid,
                samples,
                pool,
                cfg.k,
                fold_seed,
                cfg.grid_cap,
            )
            .map_err(|e| e.in_stage("grid search"))?
            .into_iter()
            .next()
            .expect("grid expansion is never empty");
            log::info!("{}: best grid point {}", entry.display_name(), best.key());
            (best.spec, best.cv)
        }
        None => {
            let cv = cross_validate_pool(&entry.spec, samples, pool, cfg.k, fold_seed)
                .map_err(|e| e.in_stage("cross-validation"))?;
            (entry.spec.clone(), cv)
        }
    };
    let (model, _, y, preds) = fit_and_score(
        &spec,
        samples,
        pool,
        test,
        derive_seed(cfg.seed, FINAL_FIT_STREAM),
    )
    .map_err(|e| e.in_stage("final fit"))?;
    let (test_m, confusion, roc) =
        test_metrics(&y, &preds).map_err(|e| e.in_stage("test evaluation"))?;
    Ok(ModelRow {
        model: entry.display_name(),
        cv,
        test: test_m,
        confusion,
        roc,
        importances: model.feature_importances().ok(),
    })
}

/// Split, optional grid search, cross-validation and held-out evaluation for
/// every configured model, on already-built samples.
pub fn evaluate_samples(cfg: &ExperimentConfig, set: &SampleSet) -> Result<EvalReport> {
    let samples = &set.samples;
    let holdout = holdout_split(samples, cfg.seed).map_err(|e| e.in_stage("split"))?;
    let rows = cfg
        .models
        .par_iter()
        .map(|entry| evaluate_entry(entry, samples, &holdout.pool_idx, &holdout.test_idx, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        feature_set: set.feature_set,
        feature_mode: cfg.feature_mode,
        rows,
        n_samples: samples.len(),
        dropped: set.dropped.clone(),
        baseline_accuracy: majority_share(samples, &holdout.test_idx),
        test_matches: holdout.test_idx.len() / 2,
    })
}

fn samples_for(cfg: &ExperimentConfig, matches: &[MatchRecord]) -> Result<SampleSet> {
    if matches.len() < MIN_EXPERIMENT_MATCHES {
        return Err(Error::domain(format!(
            "experiments need at least {MIN_EXPERIMENT_MATCHES} matches, got {}",
            matches.len()
        ))
        .in_stage("input"));
    }
    let set = build_samples(matches, cfg.feature_mode, cfg.feature_set, &cfg.features)
        .map_err(|e| e.in_stage("features"))?;
    if set.samples.is_empty() {
        let err = match cfg.feature_mode {
            FeatureMode::AggregateExcludingTarget => {
                Error::InsufficientHistory("no match has history for both players".into())
            }
            FeatureMode::PerMatch => Error::domain("every match was dropped by validation"),
        };
        return Err(err.in_stage("features"));
    }
    Ok(set)
}

/// Runs the full comparison on in-memory matches.
pub fn evaluate_matches(cfg: &ExperimentConfig, matches: &[MatchRecord]) -> Result<EvalReport> {
    cfg.validate()?;
    evaluate_samples(cfg, &samples_for(cfg, matches)?)
}

pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<EvalReport> {
    let matches = load_matches(&cfg.input).map_err(|e| e.in_stage("input"))?;
    let report = evaluate_matches(cfg, &matches)?;
    report.write_to(out_dir).map_err(|e| e.in_stage("report"))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub full: EvalReport,
    pub without_derived: EvalReport,
}

impl AblationReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "model,acc_val_full,f1_val_full,acc_val_without,f1_val_without,acc_test_full,f1_test_full,acc_test_without,f1_test_without"
        )?;
        for (a, b) in self.full.rows.iter().zip(&self.without_derived.rows) {
            let cells = [
                a.cv.mean.accuracy,
                a.cv.mean.f1,
                b.cv.mean.accuracy,
                b.cv.mean.f1,
                a.test.accuracy,
                a.test.f1,
                b.test.accuracy,
                b.test.f1,
            ];
            let cells: Vec<String> = cells.iter().map(|v| format_sig(*v, 9)).collect();
            writeln!(w, "{},{}", a.model, cells.join(","))?;
        }
        Ok(())
    }
}

/// Full and base-only feature sets on identical splits.
pub fn ablation_on(cfg: &ExperimentConfig, matches: &[MatchRecord]) -> Result<AblationReport> {
    let with = |set: FeatureSet| ExperimentConfig {
        feature_set: set,
        ..cfg.clone()
    };
    let full = evaluate_matches(&with(FeatureSet::Full), matches)?;
    let without_derived = evaluate_matches(&with(FeatureSet::WithoutDerived), matches)?;
    for (a, b) in full.rows.iter().zip(&without_derived.rows) {
        if a.cv.fingerprint != b.cv.fingerprint {
            return Err(
                Error::domain(format!("fold assignments differ for {}", a.model))
                    .in_stage("ablation"),
            );
        }
    }
    Ok(AblationReport {
        full,
        without_derived,
    })
}

pub fn run_ablation(cfg: &ExperimentConfig, out_dir: &Path) -> Result<AblationReport> {
    let matches = load_matches(&cfg.input).map_err(|e| e.in_stage("input"))?;
    let report = ablation_on(cfg, &matches)?;
    fs::create_dir_all(out_dir)?;
    report
        .write_csv(BufWriter::new(File::create(out_dir.join("ablation.csv"))?))
        .map_err(|e| e.in_stage("report"))?;
    Ok(report)
}

pub fn write_prematch_csv<W: Write>(mut w: W, report: &EvalReport) -> Result<()> {
    writeln!(w, "model,acc_val,acc_val_se,acc_test,f1_test")?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.model,
            format_sig(r.cv.mean.accuracy, 9),
            format_sig(r.cv.standard_error.accuracy, 9),
            format_sig(r.test.accuracy, 9),
            format_sig(r.test.f1, 9)
        )?;
    }
    Ok(())
}

/// Evaluation on leave-one-out aggregate features.
pub fn prematch_on(cfg: &ExperimentConfig, matches: &[MatchRecord]) -> Result<EvalReport> {
    let cfg = ExperimentConfig {
        feature_mode: FeatureMode::AggregateExcludingTarget,
        ..cfg.clone()
    };
    evaluate_matches(&cfg, matches)
}

pub fn run_prematch(cfg: &ExperimentConfig, out_dir: &Path) -> Result<EvalReport> {
    let matches = load_matches(&cfg.input).map_err(|e| e.in_stage("input"))?;
    let report = prematch_on(cfg, &matches)?;
    fs::create_dir_all(out_dir)?;
    write_prematch_csv(
        BufWriter::new(File::create(out_dir.join("prematch.csv"))?),
        &report,
    )
    .map_err(|e| e.in_stage("report"))?;
    Ok(report)
}

/// A fitted model with the scaler and feature layout it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub feature_set: FeatureSet,
    pub feature_mode: FeatureMode,
    pub features: FeatureConfig,
    pub standardizer: Standardizer,
    pub model: TrainedModel,
}

impl ModelBundle {
    pub fn train(
        matches: &[MatchRecord],
        spec: &ModelSpec,
        mode: FeatureMode,
        set: FeatureSet,
        features: &FeatureConfig,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let samples = build_samples(matches, mode, set, features)?.samples;
        let x: Vec<Vec<f64>> = samples.iter().map(|s| s.features.clone()).collect();
        let y: Vec<i8> = samples.iter().map(|s| s.label).collect();
        if x.is_empty() {
            return Err(Error::domain("no usable training samples"));
        }
        let standardizer = Standardizer::fit(&x)?;
        let model = spec.fit(&standardizer.apply_all(&x)?, &y, seed)?;
        Ok(ModelBundle {
            feature_set: set,
            feature_mode: mode,
            features: *features,
            standardizer,
            model,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let b: ModelBundle = serde_json::from_slice(bytes)?;
        // Round-trip the model through its own loader for the shape checks.
        let model = TrainedModel::from_json(serde_json::to_string(&b.model)?.as_bytes())?;
        if b.standardizer.dim() != model.n_features() || model.n_features() != b.feature_set.dim() {
            return Err(Error::domain(
                "bundle scaler, model and feature set disagree on dimension",
            ));
        }
        Ok(ModelBundle { model, ..b })
    }

    /// Labels, predictions and test-style metrics over every usable sample.
    pub fn evaluate(&self, matches: &[MatchRecord], name: &str) -> Result<BundleEvaluation> {
        let samples =
            build_samples(matches, self.feature_mode, self.feature_set, &self.features)?.samples;
        if samples.is_empty() {
            return Err(Error::domain("no usable evaluation samples"));
        }
        let y: Vec<i8> = samples.iter().map(|s| s.label).collect();
        let preds = samples
            .iter()
            .map(|s| self.model.predict(&self.standardizer.apply(&s.features)?))
            .collect::<Result<Vec<_>>>()?;
        let (metrics, confusion, roc) = test_metrics(&y, &preds)?;
        Ok(BundleEvaluation {
            model: name.to_string(),
            metrics,
            confusion,
            roc,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleEvaluation {
    pub model: String,
    pub metrics: Metrics,
    pub confusion: crate::evaluation::ConfusionMatrix,
    pub roc: RocCurve,
}

impl BundleEvaluation {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join("metrics.csv"))?);
        writeln!(w, "model,accuracy,precision,recall,f1,auc")?;
        let m = &self.metrics;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            self.model,
            format_sig(m.accuracy, 9),
            format_sig(m.precision, 9),
            format_sig(m.recall, 9),
            format_sig(m.f1, 9),
            format_sig(self.roc.auc, 9)
        )?;
        w.flush()?;
        let c = self.confusion;
        let mut w = BufWriter::new(File::create(dir.join("confusion.csv"))?);
        writeln!(w, "model,tp,tn,fp,fn")?;
        writeln!(w, "{},{},{},{},{}", self.model, c.tp, c.tn, c.fp, c.fn_)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("roc.csv"))?);
        writeln!(w, "model,fpr,tpr")?;
        for (fpr, tpr) in &self.roc.points {
            writeln!(
                w,
                "{},{},{}",
                self.model,
                format_sig(*fpr, 9),
                format_sig(*tpr, 9)
            )?;
        }
        w.flush()?;
        Ok(())
    }
}
