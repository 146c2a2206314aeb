//! Per-perspective match statistics, standardisation and leave-one-out aggregates.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::match_data::{
    validate_match, winning_stroke, MatchRecord, RallyLength, Side, Stroke, Verdict,
};
use crate::util::format_sig;

/// Names of all twelve features, in vector order.
pub const FEATURE_NAMES: [&str; 12] = [
    "sp", "rp", "lrp", "srp", "fhp", "bhp", "rank", "rankdiff", "sa", "sra", "fha", "balance",
];

/// Base statistics only; the engineered features are dropped.
pub const BASE_FEATURE_NAMES: [&str; 7] = ["sp", "rp", "lrp", "srp", "fhp", "bhp", "rank"];

/// Rank above which both players' ranks are treated as uninformative.
pub const RANK_RELIABILITY_CUTOFF: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSet {
    #[default]
    Full,
    WithoutDerived,
}

impl FeatureSet {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            FeatureSet::Full => &FEATURE_NAMES,
            FeatureSet::WithoutDerived => &BASE_FEATURE_NAMES,
        }
    }

    pub fn dim(self) -> usize {
        self.names().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    #[default]
    PerMatch,
    #[serde(alias = "aggregate")]
    AggregateExcludingTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Fraction of won rallies without a stroke annotation above which the
    /// forehand/backhand split falls back to 0.5/0.5.
    pub stroke_missing_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            stroke_missing_threshold: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawFeatures {
    pub sp: f64,
    pub rp: f64,
    pub lrp: f64,
    pub srp: f64,
    pub fhp: f64,
    pub bhp: f64,
    pub rank: f64,
    pub rankdiff: f64,
    pub sa: f64,
    pub sra: f64,
    pub fha: f64,
    pub balance: f64,
}

impl RawFeatures {
    pub fn to_array(&self) -> [f64; 12] {
        [
            self.sp,
            self.rp,
            self.lrp,
            self.srp,
            self.fhp,
            self.bhp,
            self.rank,
            self.rankdiff,
            self.sa,
            self.sra,
            self.fha,
            self.balance,
        ]
    }

    pub fn to_vec(&self, set: FeatureSet) -> Vec<f64> {
        self.to_array()[..set.dim()].to_vec()
    }

    fn from_array(a: [f64; 12]) -> Self {
        RawFeatures {
            sp: a[0],
            rp: a[1],
            lrp: a[2],
            srp: a[3],
            fhp: a[4],
            bhp: a[5],
            rank: a[6],
            rankdiff: a[7],
            sa: a[8],
            sra: a[9],
            fha: a[10],
            balance: a[11],
        }
    }
}

pub fn rank_diff(rank_self: u32, rank_opp: u32) -> f64 {
    if rank_self > RANK_RELIABILITY_CUTOFF && rank_opp > RANK_RELIABILITY_CUTOFF {
        0.0
    } else {
        f64::from(rank_self) - f64::from(rank_opp)
    }
}

pub fn balance(sa: f64, sra: f64, fha: f64) -> f64 {
    sa.abs() / 3.0 + sra.abs() / 3.0 + fha.abs() / 3.0
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.5
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_raw_features(m: &MatchRecord, p: Side) -> Result<RawFeatures> {
    compute_raw_features_with(m, p, &FeatureConfig::default())
}

pub fn compute_raw_features_with(
    m: &MatchRecord,
    p: Side,
    cfg: &FeatureConfig,
) -> Result<RawFeatures> {
    if m.rallies.is_empty() {
        return Err(Error::domain(format!(
            "match {:?} has no rallies",
            m.match_id
        )));
    }
    let (rank_self, rank_opp) = match (m.rank(p), m.rank(p.opponent())) {
        (Some(s), Some(o)) => (s, o),
        _ => {
            return Err(Error::domain(format!(
                "match {:?} is missing a rank",
                m.match_id
            )))
        }
    };

    let (mut served, mut won_serving, mut received, mut won_receiving) = (0, 0, 0, 0);
    let (mut won, mut won_long, mut won_short) = (0, 0, 0);
    let (mut fh, mut bh, mut unannotated) = (0, 0, 0);
    for r in &m.rallies {
        let is_win = r.winner() == p;
        if r.server == p {
            served += 1;
            won_serving += usize::from(is_win);
        } else {
            received += 1;
            won_receiving += usize::from(is_win);
        }
        if !is_win {
            continue;
        }
        won += 1;
        match r.length_class() {
            RallyLength::Long => won_long += 1,
            RallyLength::Short => won_short += 1,
        }
        match winning_stroke(r) {
            Some(Stroke::Forehand) => fh += 1,
            Some(Stroke::Backhand) => bh += 1,
            None => unannotated += 1,
        }
    }

    let sp = ratio(won_serving, served);
    let rp = ratio(won_receiving, received);
    let lrp = ratio(won_long, won);
    let srp = ratio(won_short, won);
    let strokes_usable =
        won > 0 && (unannotated as f64 / won as f64) <= cfg.stroke_missing_threshold;
    let (fhp, bhp) = if strokes_usable {
        (ratio(fh, fh + bh), ratio(bh, fh + bh))
    } else {
        (0.5, 0.5)
    };
    let (sa, sra, fha) = (sp - rp, srp - lrp, fhp - bhp);
    Ok(RawFeatures {
        sp,
        rp,
        lrp,
        srp,
        fhp,
        bhp,
        rank: f64::from(rank_self),
        rankdiff: rank_diff(rank_self, rank_opp),
        sa,
        sra,
        fha,
        balance: balance(sa, sra, fha),
    })
}

fn mean_features<'a>(rows: impl Iterator<Item = &'a RawFeatures>) -> Option<RawFeatures> {
    let mut acc = [0.0; 12];
    let mut n = 0usize;
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r.to_array()) {
            *a += v;
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    Some(RawFeatures::from_array(acc.map(|a| a / n as f64)))
}

fn target_rank_diff(target: &MatchRecord, player_id: &str) -> Result<f64> {
    let side = target.side_of(player_id).ok_or_else(|| {
        Error::domain(format!(
            "player {player_id:?} did not play match {:?}",
            target.match_id
        ))
    })?;
    match (target.rank(side), target.rank(side.opponent())) {
        (Some(s), Some(o)) => Ok(rank_diff(s, o)),
        _ => Err(Error::domain(format!(
            "match {:?} is missing a rank",
            target.match_id
        ))),
    }
}

/// Mean of `player_id`'s per-match features over every match except `exclude`.
///
/// `rankdiff` is taken from the pairing in the excluded (target) match.
pub fn aggregate_features(
    player_id: &str,
    all_matches: &[MatchRecord],
    exclude: &str,
) -> Result<RawFeatures> {
    let target = all_matches
        .iter()
        .find(|m| m.match_id == exclude)
        .ok_or_else(|| Error::domain(format!("target match {exclude:?} not found")))?;
    let rankdiff = target_rank_diff(target, player_id)?;
    let history = all_matches
        .iter()
        .filter(|m| m.match_id != exclude)
        .filter_map(|m| m.side_of(player_id).map(|s| compute_raw_features(m, s)))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = mean_features(history.iter()).ok_or_else(|| {
        Error::InsufficientHistory(format!(
            "player {player_id:?} has no matches besides {exclude:?}"
        ))
    })?;
    mean.rankdiff = rankdiff;
    Ok(mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: i8,
    pub match_id: String,
    pub perspective: Side,
}

#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    pub samples: Vec<LabeledSample>,
    /// Matches left out, with the reason.
    pub dropped: Vec<(String, String)>,
    pub feature_set: FeatureSet,
}

impl SampleSet {
    pub fn feature_names(&self) -> &'static [&'static str] {
        self.feature_set.names()
    }
}

fn label_for(m: &MatchRecord, p: Side) -> i8 {
    if m.winner == p {
        1
    } else {
        -1
    }
}

/// Validates the matches and turns each kept one into its two perspective samples.
pub fn build_samples(
    matches: &[MatchRecord],
    mode: FeatureMode,
    set: FeatureSet,
    cfg: &FeatureConfig,
) -> Result<SampleSet> {
    let mut out = SampleSet {
        feature_set: set,
        ..Default::default()
    };
    let mut kept = Vec::new();
    for m in matches {
        match validate_match(m) {
            Verdict::Keep => kept.push(m),
            Verdict::Drop(reason) => {
                log::info!("dropping match {}: {}", m.match_id, reason);
                out.dropped.push((m.match_id.clone(), reason));
            }
        }
    }

    let per_match = kept
        .iter()
        .map(|m| {
            Ok([
                compute_raw_features_with(m, Side::A, cfg)?,
                compute_raw_features_with(m, Side::B, cfg)?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;

    // player id -> (kept match index, side)
    let mut appearances: HashMap<&str, Vec<(usize, Side)>> = HashMap::new();
    if mode == FeatureMode::AggregateExcludingTarget {
        for (i, m) in kept.iter().enumerate() {
            appearances
                .entry(&m.player_a_id)
                .or_default()
                .push((i, Side::A));
            appearances
                .entry(&m.player_b_id)
                .or_default()
                .push((i, Side::B));
        }
    }

    for (i, m) in kept.iter().enumerate() {
        let rows = match mode {
            FeatureMode::PerMatch => per_match[i],
            FeatureMode::AggregateExcludingTarget => {
                let agg = |side: Side| -> Option<RawFeatures> {
                    let history = appearances[m.player_id(side)]
                        .iter()
                        .filter(|(j, _)| *j != i)
                        .map(|&(j, s)| &per_match[j][s as usize]);
                    let mut mean = mean_features(history)?;
                    // Ranks are validated present for kept matches.
                    mean.rankdiff = rank_diff(
                        m.rank(side).unwrap_or(1),
                        m.rank(side.opponent()).unwrap_or(1),
                    );
                    Some(mean)
                };
                match (agg(Side::A), agg(Side::B)) {
                    (Some(a), Some(b)) => [a, b],
                    _ => {
                        log::info!("dropping match {}: insufficient history", m.match_id);
                        out.dropped
                            .push((m.match_id.clone(), "insufficient history".into()));
                        continue;
                    }
                }
            }
        };
        for side in [Side::A, Side::B] {
            out.samples.push(LabeledSample {
                features: rows[side as usize].to_vec(set),
                label: label_for(m, side),
                match_id: m.match_id.clone(),
                perspective: side,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Columns with a standard deviation below this map to zero.
pub const STD_EPSILON: f64 = 1e-12;

impl Standardizer {
    /// Population mean and standard deviation per column.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::domain("cannot fit a standardizer on zero rows"))?;
        let dim = first.as_ref().len();
        let n = rows.len() as f64;
        let mut means = vec![0.0; dim];
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::domain(format!(
                    "row has {} columns, expected {dim}",
                    r.len()
                )));
            }
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in stds.iter_mut().zip(r.as_ref()).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        stds.iter_mut().for_each(|s| *s = (*s / n).sqrt());
        Ok(Standardizer { means, stds })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::domain(format!(
                "vector has {} columns, standardizer expects {}",
                v.len(),
                self.dim()
            )));
        }
        Ok(v.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| if *s < STD_EPSILON { 0.0 } else { (x - m) / s })
            .collect())
    }

    pub fn apply_all<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.apply(r.as_ref())).collect()
    }
}

/// Writes one CSV row per sample with 9 significant digits per value.
pub fn write_feature_csv<W: Write>(mut w: W, set: &SampleSet) -> Result<()> {
    write!(w, "match_id,perspective,label")?;
    for name in set.feature_names() {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for s in &set.samples {
        let side = match s.perspective {
            Side::A => "a",
            Side::B => "b",
        };
        write!(w, "{},{},{}", s.match_id, side, s.label)?;
        for v in &s.features {
            write!(w, ",{}", format_sig(*v, 9))?;
        }
        writeln!(w)?;
    }
    Ok(())
}
