//! Classification metrics, ROC analysis, grouped splitting, cross-validation
//! and exhaustive grid search.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{LabeledSample, Standardizer};
use crate::models::{Learner, ModelSpec, Predictor};
use crate::util::{derive_seed, format_sig, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Counts with `+1` as the positive class.
pub fn confusion_matrix(y_true: &[i8], y_pred: &[i8]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::domain(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::domain("no labels to compare"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t > 0, p > 0) {
            (true, true) => cm.tp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fp += 1,
            (true, false) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    fn to_array(self) -> [f64; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Metrics {
            accuracy: a[0],
            precision: a[1],
            recall: a[2],
            f1: a[3],
        }
    }
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Undefined precision, recall or F1 (zero denominator) is reported as 0.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::domain("empty confusion matrix"));
    }
    let (tp, tn, fp, fn_) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fn_ as f64);
    let precision = ratio_or_zero(tp, tp + fp);
    let recall = ratio_or_zero(tp, tp + fn_);
    Ok(Metrics {
        accuracy: (tp + tn) / total as f64,
        precision,
        recall,
        f1: ratio_or_zero(2.0 * precision * recall, precision + recall),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Sweeps thresholds over the distinct scores in descending order; tied
/// scores move together, so the trapezoid area gives ties half credit.
pub fn roc_auc(y_true: &[i8], scores: &[f64]) -> Result<RocCurve> {
    if y_true.len() != scores.len() {
        return Err(Error::domain("labels and scores differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::domain("scores contain NaN"));
    }
    let pos = y_true.iter().filter(|&&l| l > 0).count();
    let neg = y_true.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::domain("ROC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (tp0, fp0) = (tp, fp);
        while k < order.len() && scores[order[k]] == s {
            if y_true[order[k]] > 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve {
        points,
        auc: auc / (pos as f64 * neg as f64),
    })
}

/// Sample indices of each partition for one cross-validation iteration.
/// Partitions are disjoint and cover every sample; matches never straddle them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

/// The held-out test matches and the cross-validation pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Holdout {
    pub pool_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

/// Fraction of matches held out for the final test.
pub const TEST_FRACTION: f64 = 0.1;
pub const MIN_MATCHES_FOR_SPLIT: usize = 10;

/// Sample indices grouped by match, groups in order of first appearance.
pub fn group_by_match(samples: &[LabeledSample]) -> Vec<Vec<usize>> {
    let mut pos: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let g = *pos.entry(&s.match_id).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

fn expand(groups: &[Vec<usize>], chosen: &[usize]) -> Vec<usize> {
    chosen
        .iter()
        .flat_map(|&g| groups[g].iter().copied())
        .collect()
}

/// Shuffles matches and holds out 10% (rounded, at least one) for testing.
/// The rest forms the cross-validation pool.
pub fn holdout_split(samples: &[LabeledSample], seed: u64) -> Result<Holdout> {
    let groups = group_by_match(samples);
    if groups.len() < MIN_MATCHES_FOR_SPLIT {
        return Err(Error::domain(format!(
            "need at least {MIN_MATCHES_FOR_SPLIT} matches to split, got {}",
            groups.len()
        )));
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let n_test = ((groups.len() as f64 * TEST_FRACTION).round() as usize).max(1);
    let (test, pool) = order.split_at(n_test);
    Ok(Holdout {
        pool_idx: expand(&groups, pool),
        test_idx: expand(&groups, test),
        seed,
    })
}

/// Fold-shuffling seed derived from an experiment's master seed.
pub fn cv_seed(seed: u64) -> u64 {
    derive_seed(seed, u64::MAX)
}

/// Holdout split followed by grouped k-fold over the pool: one plan per
/// iteration. With k = 5 this gives the 72:18:10 train/validation/test ratio.
pub fn train_val_test_split(
    samples: &[LabeledSample],
    k: usize,
    seed: u64,
) -> Result<Vec<SplitPlan>> {
    let holdout = holdout_split(samples, seed)?;
    let folds = grouped_kfold(samples, &holdout.pool_idx, k, cv_seed(seed))?;
    Ok(folds
        .into_iter()
        .map(|(train_idx, val_idx)| SplitPlan {
            train_idx,
            val_idx,
            test_idx: holdout.test_idx.clone(),
            seed,
        })
        .collect())
}

/// Seeded shuffle into `k` folds whose sizes differ by at most one; fold `i`
/// is the validation part of iteration `i`.
pub fn kfold_split(
    indices: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::domain(format!("k must be at least 2, got {k}")));
    }
    if k > indices.len() {
        return Err(Error::domain(format!(
            "cannot make {k} folds from {} items",
            indices.len()
        )));
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut rng_from_seed(seed));
    let (base, extra) = (shuffled.len() / k, shuffled.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        folds.push(shuffled[start..start + len].to_vec());
        start += len;
    }
    Ok((0..k)
        .map(|i| {
            let train = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            (train, folds[i].clone())
        })
        .collect())
}

/// K-fold splits over whole matches, expressed as sample indices.
pub fn grouped_kfold(
    samples: &[LabeledSample],
    pool: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let pool_samples: Vec<LabeledSample> = pool.iter().map(|&i| samples[i].clone()).collect();
    let groups = group_by_match(&pool_samples);
    let ids: Vec<usize> = (0..groups.len()).collect();
    let folds = kfold_split(&ids, k, seed)?;
    let to_samples = |gs: &[usize]| -> Vec<usize> {
        gs.iter()
            .flat_map(|&g| groups[g].iter().map(|&local| pool[local]))
            .collect()
    };
    Ok(folds
        .iter()
        .map(|(tr, va)| (to_samples(tr), to_samples(va)))
        .collect())
}

/// Order-sensitive fingerprint of a fold assignment (FNV-1a over match ids).
pub fn fold_fingerprint(samples: &[LabeledSample], folds: &[(Vec<usize>, Vec<usize>)]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for (i, (_, val)) in folds.iter().enumerate() {
        feed(&(i as u64).to_le_bytes());
        for &s in val {
            feed(samples[s].match_id.as_bytes());
            feed(&[0xff]);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub per_fold: Vec<Metrics>,
    pub mean: Metrics,
    /// Sample standard deviation over folds divided by sqrt(k).
    pub standard_error: Metrics,
    /// Folds skipped because their training part had a single class.
    pub warnings: Vec<String>,
    pub fingerprint: u64,
}

fn mean_and_se(per_fold: &[Metrics]) -> (Metrics, Metrics) {
    let k = per_fold.len() as f64;
    let mut mean = [0.0; 4];
    for m in per_fold {
        for (a, v) in mean.iter_mut().zip(m.to_array()) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= k);
    let mut se = [0.0; 4];
    if per_fold.len() > 1 {
        for m in per_fold {
            for ((s, v), mu) in se.iter_mut().zip(m.to_array()).zip(mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        se.iter_mut()
            .for_each(|s| *s = (*s / (k - 1.0)).sqrt() / k.sqrt());
    }
    (Metrics::from_array(mean), Metrics::from_array(se))
}

fn rows(samples: &[LabeledSample], idx: &[usize]) -> (Vec<Vec<f64>>, Vec<i8>) {
    idx.iter()
        .map(|&i| (samples[i].features.clone(), samples[i].label))
        .unzip()
}

/// Fitted model and scaler, with true labels and `(score, label)` predictions.
pub type Scored<M> = (M, Standardizer, Vec<i8>, Vec<(f64, i8)>);

/// Scaler fitted on `train_idx`, model fitted on the scaled training rows;
/// returns labels and scores on `eval_idx`.
pub fn fit_and_score<L: Learner>(
    learner: &L,
    samples: &[LabeledSample],
    train_idx: &[usize],
    eval_idx: &[usize],
    seed: u64,
) -> Result<Scored<L::Model>> {
    let (xtr, ytr) = rows(samples, train_idx);
    let scaler = Standardizer::fit(&xtr)?;
    let xtr = scaler.apply_all(&xtr)?;
    let model = learner.fit(&xtr, &ytr, seed)?;
    let (xev, yev) = rows(samples, eval_idx);
    let preds = scaler
        .apply_all(&xev)?
        .iter()
        .map(|x| model.predict(x))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, scaler, yev, preds))
}

/// K-fold cross-validation over every sample in `samples`.
pub fn cross_validate<L: Learner + Sync>(
    learner: &L,
    samples: &[LabeledSample],
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    let pool: Vec<usize> = (0..samples.len()).collect();
    cross_validate_pool(learner, samples, &pool, k, seed)
}

/// Cross-validation restricted to the samples listed in `pool`.
pub fn cross_validate_pool<L: Learner + Sync>(
    learner: &L,
    samples: &[LabeledSample],
    pool: &[usize],
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    let folds = grouped_kfold(samples, pool, k, seed)?;
    let fingerprint = fold_fingerprint(samples, &folds);
    let outcomes: Vec<Result<Option<Metrics>>> = folds
        .par_iter()
        .enumerate()
        .map(|(i, (train, val))| {
            match fit_and_score(learner, samples, train, val, derive_seed(seed, i as u64)) {
                Ok((_, _, y, preds)) => {
                    let labels: Vec<i8> = preds.iter().map(|p| p.1).collect();
                    Ok(Some(compute_metrics(&confusion_matrix(&y, &labels)?)?))
                }
                Err(Error::DegenerateFit(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut per_fold = Vec::new();
    let mut warnings = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o? {
            Some(m) => per_fold.push(m),
            None => {
                let msg = format!("fold {i} skipped: training labels contain a single class");
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    if per_fold.is_empty() {
        return Err(Error::domain("every cross-validation fold was degenerate"));
    }
    let (mean, standard_error) = mean_and_se(&per_fold);
    Ok(CvResult {
        per_fold,
        mean,
        standard_error,
        warnings,
        fingerprint,
    })
}

/// Hyperparameter name to candidate values.
pub type ParamGrid = BTreeMap<String, Vec<serde_json::Value>>;

pub const DEFAULT_GRID_CAP: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub overrides: serde_json::Map<String, serde_json::Value>,
    pub spec: ModelSpec,
    pub cv: CvResult,
}

impl GridPoint {
    /// Canonical text of the overrides, keys sorted.
    pub fn key(&self) -> String {
        serde_json::to_string(&self.overrides).unwrap_or_default()
    }
}

/// Cartesian product of the grid; keys iterate in sorted order.
pub fn expand_grid(
    grid: &ParamGrid,
    cap: usize,
) -> Result<Vec<serde_json::Map<String, serde_json::Value>>> {
    if grid.is_empty() || grid.values().any(Vec::is_empty) {
        return Err(Error::domain(
            "grid must name at least one value per hyperparameter",
        ));
    }
    let size = grid
        .values()
        .try_fold(1usize, |acc, v| acc.checked_mul(v.len()))
        .unwrap_or(usize::MAX);
    if size > cap {
        return Err(Error::GridTooLarge { size, cap });
    }
    let mut combos = vec![serde_json::Map::new()];
    for (name, values) in grid {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.insert(name.clone(), v.clone());
                    c
                })
            })
            .collect();
    }
    Ok(combos)
}

/// Cross-validates every grid combination on `pool` and ranks them by mean
/// validation accuracy, then mean F1, then override text.
pub fn grid_search(
    base: &ModelSpec,
    grid: &ParamGrid,
    samples: &[LabeledSample],
    pool: &[usize],
    k: usize,
    seed: u64,
    cap: usize,
) -> Result<Vec<GridPoint>> {
    let combos = expand_grid(grid, cap)?;
    let specs = combos
        .iter()
        .map(|o| base.with_overrides(o).and_then(|s| s.validate().map(|_| s)))
        .collect::<Result<Vec<_>>>()?;
    // Every combination sees the same folds so the comparison is paired.
    let mut points = combos
        .into_par_iter()
        .zip(specs)
        .map(|(overrides, spec)| {
            let cv = cross_validate_pool(&spec, samples, pool, k, seed)?;
            Ok(GridPoint {
                overrides,
                spec,
                cv,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| {
        b.cv.mean
            .accuracy
            .total_cmp(&a.cv.mean.accuracy)
            .then(b.cv.mean.f1.total_cmp(&a.cv.mean.f1))
            .then_with(|| a.key().cmp(&b.key()))
    });
    Ok(points)
}

/// One row of the model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub cv: CvResult,
    pub test: Metrics,
    pub confusion: ConfusionMatrix,
    pub roc: RocCurve,
    pub importances: Option<Vec<f64>>,
}

pub fn write_results_csv<W: Write>(mut w: W, rows: &[ModelRow]) -> Result<()> {
    writeln!(
        w,
        "model,acc_val,acc_val_se,f1_val,f1_val_se,acc_test,f1_test"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.model,
            format_sig(r.cv.mean.accuracy, 9),
            format_sig(r.cv.standard_error.accuracy, 9),
            format_sig(r.cv.mean.f1, 9),
            format_sig(r.cv.standard_error.f1, 9),
            format_sig(r.test.accuracy, 9),
            format_sig(r.test.f1, 9),
        )?;
    }
    Ok(())
}

pub fn write_confusion_csv<W: Write>(mut w: W, rows: &[ModelRow]) -> Result<()> {
    writeln!(w, "model,tp,tn,fp,fn")?;
    for r in rows {
        let c = r.confusion;
        writeln!(w, "{},{},{},{},{}", r.model, c.tp, c.tn, c.fp, c.fn_)?;
    }
    Ok(())
}

pub fn write_roc_csv<W: Write>(mut w: W, rows: &[ModelRow]) -> Result<()> {
    writeln!(w, "model,fpr,tpr")?;
    for r in rows {
        for (fpr, tpr) in &r.roc.points {
            writeln!(
                w,
                "{},{},{}",
                r.model,
                format_sig(*fpr, 9),
                format_sig(*tpr, 9)
            )?;
        }
    }
    Ok(())
}

pub fn write_importances_csv<W: Write>(mut w: W, rows: &[ModelRow], names: &[&str]) -> Result<()> {
    writeln!(w, "model,feature,importance")?;
    for r in rows {
        if let Some(imp) = &r.importances {
            for (name, v) in names.iter().zip(imp) {
                writeln!(w, "{},{},{}", r.model, name, format_sig(*v, 9))?;
            }
        }
    }
    Ok(())
}
