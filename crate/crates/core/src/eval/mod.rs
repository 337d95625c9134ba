//! Evaluation protocol: repeated content-disjoint 80/20 splits scored by
//! rank and linear correlation, plus dataset indexing and a procedural
//! dataset generator.

pub mod correlation;
pub mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureGroup, FeatureVector};
use crate::pipeline::Pipeline;
use crate::session::{load_manifest, remap_mos, FrameSource, SessionManifest};
use crate::svr::{self, SvrParams};

use correlation::{krocc, plcc, srocc};

/// Fraction of content groups held out per repetition.
pub const TEST_FRACTION: f64 = 0.2;
/// Fewest distinct contents a split evaluation accepts.
pub const MIN_CONTENTS: usize = 5;

const GRID_C: [f64; 7] = [1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0];
const GRID_GAMMA_SCALE: [f64; 5] = [0.125, 0.25, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub manifest: PathBuf,
    pub content_id: String,
    pub mos: f64,
}

/// `{"sessions": [...]}`, optionally with the `[lo, hi]` range the scores
/// are given on. Scores are mapped onto 0..100 on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub sessions: Vec<IndexEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mos_range: Option<[f64; 2]>,
}

/// Reads an index; manifest paths resolve against the index's directory.
pub fn load_index(path: &Path) -> Result<DatasetIndex> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut index: DatasetIndex = serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for (i, entry) in index.sessions.iter_mut().enumerate() {
        entry.manifest = base.join(&entry.manifest);
        if let Some([lo, hi]) = index.mos_range {
            entry.mos = remap_mos(entry.mos, lo, hi)?;
        }
        if !(entry.mos.is_finite() && (0.0..=100.0).contains(&entry.mos)) {
            return Err(Error::Validation(format!(
                "session {i}: mos {} outside [0, 100]",
                entry.mos
            )));
        }
    }
    Ok(index)
}

/// One training example: a session's final-window features and its score.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub content_id: String,
    pub features: FeatureVector,
    pub mos: f64,
}

/// Extracts final-window features for every session in the index, in order.
pub fn extract_samples(
    index: &DatasetIndex,
    pipeline: &Pipeline,
    source: &dyn FrameSource,
) -> Result<Vec<Sample>> {
    index
        .sessions
        .iter()
        .map(|entry| {
            let manifest = load_manifest(&entry.manifest)?;
            let features = pipeline.session_features(&manifest, source).map_err(|e| {
                Error::Validation(format!("{}: {e}", entry.manifest.display()))
            })?;
            Ok(Sample {
                content_id: entry.content_id.clone(),
                features,
                mos: entry.mos,
            })
        })
        .collect()
}

/// Loads every manifest named in the index.
pub fn load_sessions(index: &DatasetIndex) -> Result<Vec<SessionManifest>> {
    index.sessions.iter().map(|e| load_manifest(&e.manifest)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub repetitions: usize,
    pub seed: u64,
    pub svr: SvrParams,
    /// Pick `C` and the kernel width per repetition by leave-one-content-out
    /// validation on the training side.
    pub grid_search: bool,
    /// Groups zeroed out of every feature vector (ablation).
    pub drop_groups: Vec<FeatureGroup>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            repetitions: 1000,
            seed: 0,
            svr: SvrParams::default(),
            grid_search: false,
            drop_groups: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self {
            mean: values.iter().sum::<f64>() / n as f64,
            median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repetition {
    pub rep: usize,
    pub srocc: f64,
    pub krocc: f64,
    pub plcc: f64,
    /// Predictions were constant, so the correlations were undefined and
    /// recorded as 0.
    pub degenerate: bool,
    pub test_contents: Vec<String>,
    #[serde(rename = "C")]
    pub c: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub repetitions: usize,
    pub dropped_groups: Vec<FeatureGroup>,
    pub srocc: Summary,
    pub krocc: Summary,
    pub plcc: Summary,
    pub degenerate_repetitions: usize,
    pub per_repetition: Vec<Repetition>,
    /// Wall-clock dependent, so never part of the serialized report.
    #[serde(skip)]
    pub time_ratio: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per repetition.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
        w.write_record(["rep", "srocc", "krocc", "plcc", "degenerate", "test_contents", "C", "gamma"])
            .map_err(csv_err)?;
        for r in &self.per_repetition {
            w.write_record([
                r.rep.to_string(),
                r.srocc.to_string(),
                r.krocc.to_string(),
                r.plcc.to_string(),
                r.degenerate.to_string(),
                r.test_contents.join(";"),
                r.c.to_string(),
                r.gamma.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::invalid(format!("csv: {e}")))
    }
}

/// Distinct content ids in sorted order.
pub fn content_groups(samples: &[Sample]) -> Vec<String> {
    samples
        .iter()
        .map(|s| s.content_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Content ids held out in repetition `rep`. The groups are shuffled by a
/// ChaCha8 generator seeded with `seed + rep` and the first
/// `max(1, round(0.2 * groups))` are taken.
pub fn test_contents(groups: &[String], seed: u64, rep: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(rep as u64));
    let mut shuffled = groups.to_vec();
    shuffled.shuffle(&mut rng);
    let n_test = ((groups.len() as f64 * TEST_FRACTION).round() as usize).max(1);
    let mut test: Vec<String> = shuffled.into_iter().take(n_test).collect();
    test.sort();
    test
}

fn masked(samples: &[&Sample], drop: &[FeatureGroup]) -> (Vec<FeatureVector>, Vec<f64>) {
    samples
        .iter()
        .map(|s| (s.features.without(drop), s.mos))
        .unzip()
}

/// Correlations, with undefined values (constant predictions) counted as 0.
fn score(pred: &[f64], truth: &[f64]) -> Result<(f64, f64, f64, bool)> {
    let constant = pred.iter().all(|p| *p == pred[0]);
    if constant {
        return Ok((0.0, 0.0, 0.0, true));
    }
    Ok((srocc(pred, truth)?, krocc(pred, truth)?, plcc(pred, truth)?, false))
}

/// Leave-one-content-out choice of `C` and kernel width over the training
/// side, by SRoCC of the pooled out-of-fold predictions.
fn grid_search(train: &[&Sample], base: &SvrParams, drop: &[FeatureGroup]) -> Result<SvrParams> {
    let groups: BTreeSet<&str> = train.iter().map(|s| s.content_id.as_str()).collect();
    let (x_all, _) = masked(train, drop);
    let gamma0 = base.gamma.unwrap_or_else(|| svr::default_gamma_for(&x_all));
    let mut best: Option<(f64, SvrParams)> = None;
    for c in GRID_C {
        for scale in GRID_GAMMA_SCALE {
            let params = SvrParams {
                c,
                gamma: Some(gamma0 * scale),
                ..*base
            };
            let mut pred = Vec::with_capacity(train.len());
            let mut truth = Vec::with_capacity(train.len());
            for held in &groups {
                let (fit, out): (Vec<&Sample>, Vec<&Sample>) =
                    train.iter().partition(|s| s.content_id != *held);
                let (x, y) = masked(&fit, drop);
                let model = svr::train(&x, &y, &params)?;
                for s in out {
                    pred.push(model.predict(&s.features.without(drop))?);
                    truth.push(s.mos);
                }
            }
            let (rho, _, _, _) = score(&pred, &truth)?;
            // strict improvement keeps the earliest grid point on ties
            if best.as_ref().is_none_or(|(b, _)| rho > *b) {
                best = Some((rho, params));
            }
        }
    }
    Ok(best.expect("grid is non-empty").1)
}

/// Hyperparameters chosen by the leave-one-content-out grid over a whole
/// dataset; used when training a deployable model.
pub fn select_params(samples: &[Sample], base: &SvrParams) -> Result<SvrParams> {
    let groups = content_groups(samples);
    if groups.len() < 2 {
        return Err(Error::invalid(format!(
            "grid search needs at least 2 content groups, got {}",
            groups.len()
        )));
    }
    let all: Vec<&Sample> = samples.iter().collect();
    grid_search(&all, base, &[])
}

fn run_repetition(
    samples: &[Sample],
    groups: &[String],
    opts: &EvalOptions,
    rep: usize,
) -> Result<Repetition> {
    let test_ids = test_contents(groups, opts.seed, rep);
    let (test, train): (Vec<&Sample>, Vec<&Sample>) =
        samples.iter().partition(|s| test_ids.contains(&s.content_id));
    assert!(
        train.iter().all(|s| !test_ids.contains(&s.content_id)),
        "content group on both sides of a split"
    );
    if test.len() < 3 {
        return Err(Error::Validation(format!(
            "repetition {rep}: test split holds {} sessions, correlations need at least 3",
            test.len()
        )));
    }
    let params = if opts.grid_search {
        grid_search(&train, &opts.svr, &opts.drop_groups)?
    } else {
        opts.svr
    };
    let (x, y) = masked(&train, &opts.drop_groups);
    let model = svr::train(&x, &y, &params)?;
    let (xt, truth) = masked(&test, &opts.drop_groups);
    let pred = xt
        .iter()
        .map(|x| model.predict(x))
        .collect::<Result<Vec<_>>>()?;
    let (s, k, p, degenerate) = score(&pred, &truth)?;
    Ok(Repetition {
        rep,
        srocc: s,
        krocc: k,
        plcc: p,
        degenerate,
        test_contents: test_ids,
        c: model.c,
        gamma: model.gamma,
    })
}

/// Repeated content-disjoint 80/20 evaluation. Repetitions run in parallel;
/// each one depends only on `seed + rep`, so the report is reproducible.
pub fn split_eval(samples: &[Sample], opts: &EvalOptions) -> Result<EvalReport> {
    if opts.repetitions < 1 {
        return Err(Error::invalid("at least one repetition is required"));
    }
    let groups = content_groups(samples);
    if groups.len() < MIN_CONTENTS {
        return Err(Error::invalid(format!(
            "split evaluation needs at least {MIN_CONTENTS} content groups, got {}",
            groups.len()
        )));
    }
    let reps = (0..opts.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(samples, &groups, opts, rep))
        .collect::<Result<Vec<_>>>()?;
    let degenerate = reps.iter().filter(|r| r.degenerate).count();
    if degenerate > 0 {
        warn!("{degenerate} repetitions produced constant predictions");
    }
    let pick = |f: fn(&Repetition) -> f64| Summary::of(&reps.iter().map(f).collect::<Vec<_>>());
    Ok(EvalReport {
        seed: opts.seed,
        repetitions: opts.repetitions,
        dropped_groups: opts.drop_groups.clone(),
        srocc: pick(|r| r.srocc),
        krocc: pick(|r| r.krocc),
        plcc: pick(|r| r.plcc),
        degenerate_repetitions: degenerate,
        per_repetition: reps,
        time_ratio: None,
    })
}
