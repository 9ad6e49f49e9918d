use std::fmt;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fitness::FoldFitness;
use super::metrics::mean_std;
use super::plan::{build_plan, PlanConfig, Scenario};
use super::ScenarioError;
use crate::classifiers::{Family, FittedModel};
use crate::data::{ClassId, Day, LabeledDataset};
use crate::preprocess::FeatureMap;
use crate::seed;
use crate::selection::{ga_optimize, grid_search, GaConfig, GaEpoch, GridSpec, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Selector {
    Ga,
    Gs,
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Selector::Ga => "ga",
            Selector::Gs => "gs",
        })
    }
}

impl FromStr for Selector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ga" => Ok(Selector::Ga),
            "gs" => Ok(Selector::Gs),
            other => Err(format!("unknown selector '{other}' (expected ga or gs)")),
        }
    }
}

/// Everything that determines a scenario run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub selector: Selector,
    pub family: Family,
    pub plan: PlanConfig,
    pub ga: GaConfig,
    pub grid: GridSpec,
    pub repetitions: usize,
    pub seed: u64,
}

impl RunConfig {
    /// Desk-scale defaults.
    pub fn new(scenario: Scenario, selector: Selector, family: Family) -> Self {
        Self {
            scenario,
            selector,
            family,
            plan: PlanConfig::desk(),
            ga: GaConfig::desk(),
            grid: GridSpec::desk(family),
            repetitions: 5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.selector == Selector::Ga && self.family != Family::NuSvm {
            return Err(ScenarioError::Incompatible(format!(
                "the GA optimizes nu-SVM models only, not {}",
                self.family
            )));
        }
        if self.repetitions == 0 {
            return Err(ScenarioError::InvalidConfig("repetitions must be at least 1".into()));
        }
        if self.selector == Selector::Gs {
            if let Some(p) = self.grid.points().iter().find(|p| p.family() != self.family) {
                return Err(ScenarioError::Incompatible(format!("grid point '{p}' is not a {} model", self.family)));
            }
        }
        self.plan.validate()
    }
}

/// Day column of a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReportDay {
    Day(Day),
    All,
}

impl fmt::Display for ReportDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReportDay::Day(d) => d.fmt(f),
            ReportDay::All => f.pad("all"),
        }
    }
}

const REPORT_DAYS: [Day; 3] = [Day::D1, Day::D7, Day::D21];

/// Test tally for one day column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayTally {
    pub day: ReportDay,
    pub correct: usize,
    pub total: usize,
}

impl DayTally {
    pub fn accuracy(&self) -> f64 {
        100.0 * self.correct as f64 / self.total as f64
    }
}

/// Outcome of one repetition.
#[derive(Clone, Debug, PartialEq)]
pub struct RepetitionResult {
    pub seed: u64,
    pub model: ModelSpec,
    pub fitted: FittedModel,
    /// Accuracy the selector reported for the winning model.
    pub selection_fitness: f64,
    pub band_count: usize,
    /// Selected bands in original cube coordinates.
    pub original_bands: Vec<usize>,
    pub tallies: Vec<DayTally>,
    pub history: Option<Vec<GaEpoch>>,
}

/// Mean and population std of one day column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayRow {
    pub day: ReportDay,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub scenario: Scenario,
    pub selector: Selector,
    pub family: Family,
    pub rows: Vec<DayRow>,
    /// Mean selected feature count over repetitions.
    pub band_count: f64,
    pub repetitions: Vec<RepetitionResult>,
}

pub const REPORT_HEADER: &str = "scenario,selector,classifier,day,accuracy_mean,accuracy_std,band_count";

impl EvaluationReport {
    pub fn row(&self, day: ReportDay) -> Option<&DayRow> {
        self.rows.iter().find(|r| r.day == day)
    }

    pub fn combined(&self) -> f64 {
        self.row(ReportDay::All).map_or(f64::NAN, |r| r.mean)
    }

    /// Repetition whose selector score was highest; ties to the earliest.
    pub fn best_repetition(&self) -> &RepetitionResult {
        let mut best = &self.repetitions[0];
        for r in &self.repetitions[1..] {
            if r.selection_fitness > best.selection_fitness {
                best = r;
            }
        }
        best
    }

    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "{REPORT_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{:.4},{:.4},{:.1}",
                self.scenario, self.selector, self.family, r.day, r.mean, r.std, self.band_count
            )?;
        }
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<12} {:<8} {:<10} {:<4} {:>18} {:>7}\n", "scenario", "selector", "classifier", "day", "accuracy [%]", "bands");
        for r in &self.rows {
            let acc = format!("{:.2} ± {:.2}", r.mean, r.std);
            let _ = writeln!(
                s,
                "{:<12} {:<8} {:<10} {:<4} {:>18} {:>7.1}",
                self.scenario.name(),
                self.selector,
                self.family,
                r.day,
                acc,
                self.band_count
            );
        }
        s
    }
}

fn tallies(ds: &LabeledDataset, test: &[usize], predicted: &[ClassId]) -> Vec<DayTally> {
    let mut out = Vec::new();
    let (mut all_correct, mut all_total) = (0, 0);
    for day in REPORT_DAYS {
        let (mut correct, mut total) = (0, 0);
        for (&i, &p) in test.iter().zip(predicted) {
            let r = &ds.records()[i];
            if r.day.report_day() == day {
                total += 1;
                correct += usize::from(p == r.label);
            }
        }
        if total > 0 {
            out.push(DayTally {
                day: ReportDay::Day(day),
                correct,
                total,
            });
        }
        all_correct += correct;
        all_total += total;
    }
    out.push(DayTally {
        day: ReportDay::All,
        correct: all_correct,
        total: all_total,
    });
    out
}

const STREAM_PLAN: u64 = 1;
const STREAM_SELECT: u64 = 2;

fn run_repetition(
    ds: &LabeledDataset,
    x: &crate::data::FeatureMatrix,
    y: &[ClassId],
    map: &FeatureMap,
    config: &RunConfig,
    rep: usize,
) -> Result<RepetitionResult, ScenarioError> {
    let rep_seed = seed::derive(config.seed, &[rep as u64]);
    let plan = build_plan(ds, config.scenario, &config.plan, seed::derive(rep_seed, &[STREAM_PLAN]))?;
    let fitness = FoldFitness::new(x, y, &plan.folds, plan.subsample);
    let select_seed = seed::derive(rep_seed, &[STREAM_SELECT]);
    let (model, selection_fitness, history) = match config.selector {
        Selector::Ga => {
            let ga = GaConfig {
                seed: select_seed,
                ..config.ga.clone()
            };
            let r = ga_optimize(&ga, x.cols(), &fitness)?;
            (r.best.decode(), r.best_fitness, Some(r.history))
        }
        Selector::Gs => {
            let r = grid_search(&config.grid, &fitness, select_seed)?;
            (r.best, r.best_fitness, None)
        }
    };
    let pool_labels: Vec<ClassId> = plan.pool.iter().map(|&i| y[i]).collect();
    let fitted = FittedModel::fit(&model.classifier, model.features.as_deref(), &x.select(&plan.pool, None), &pool_labels)?;
    if plan.test.is_empty() {
        return Err(ScenarioError::EmptyPrediction);
    }
    let predicted = fitted.predict(&x.select(&plan.test, None))?;
    let features: Vec<usize> = model.features.clone().unwrap_or_else(|| (0..x.cols()).collect());
    let tallies = tallies(ds, &plan.test, &predicted);
    info!(
        "{} rep {rep}: selected '{model}' (cv {selection_fitness:.2}), test {:.2}",
        config.scenario,
        tallies.last().map_or(f64::NAN, DayTally::accuracy)
    );
    Ok(RepetitionResult {
        seed: rep_seed,
        band_count: features.len(),
        original_bands: map.to_original(&features),
        model,
        fitted,
        selection_fitness,
        tallies,
        history,
    })
}

/// Runs model selection and final testing `config.repetitions` times and
/// aggregates per-day accuracy.
pub fn run_scenario(ds: &LabeledDataset, map: &FeatureMap, config: &RunConfig) -> Result<EvaluationReport, ScenarioError> {
    config.validate()?;
    let cols = ds.feature_count().ok_or(ScenarioError::EmptyPrediction)?;
    if map.len() != cols {
        return Err(ScenarioError::InvalidConfig(format!(
            "feature map covers {} features, dataset has {cols}",
            map.len()
        )));
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let x = ds.matrix(&all);
    let y = ds.labels();
    let repetitions = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(ds, &x, &y, map, config, rep))
        .collect::<Result<Vec<_>, _>>()?;

    let days: Vec<ReportDay> = repetitions[0].tallies.iter().map(|t| t.day).collect();
    let rows = days
        .into_iter()
        .map(|day| {
            let acc: Vec<f64> = repetitions
                .iter()
                .filter_map(|r| r.tallies.iter().find(|t| t.day == day))
                .map(DayTally::accuracy)
                .collect();
            let (mean, std) = mean_std(&acc);
            DayRow { day, mean, std }
        })
        .collect();
    let band_count = repetitions.iter().map(|r| r.band_count as f64).sum::<f64>() / repetitions.len() as f64;
    Ok(EvaluationReport {
        scenario: config.scenario,
        selector: config.selector,
        family: config.family,
        rows,
        band_count,
        repetitions,
    })
}

/// Runs `f` on a pool of `workers` threads (`None` uses the global pool).
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers {
        None => f(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
    }
}
