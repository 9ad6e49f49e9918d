use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::data::{sample_groups, ClassId, DataError, GroupBy, LabeledDataset, Scene};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Train and test pixels come from the same images.
    Htc,
    /// Train on Frame images, test on Comparison images.
    Hic,
    /// Like HIC, but model selection scores on a Comparison validation split.
    HicvsSmall,
    /// HICVS with a larger training pool and 5 folds.
    HicvsLarge,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Htc, Scenario::Hic, Scenario::HicvsSmall, Scenario::HicvsLarge];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Htc => "htc",
            Scenario::Hic => "hic",
            Scenario::HicvsSmall => "hicvs-small",
            Scenario::HicvsLarge => "hicvs-large",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.to_ascii_lowercase();
        if s == "hicvs" {
            return Ok(Scenario::HicvsSmall);
        }
        Scenario::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown scenario '{s}' (expected htc, hic, hicvs-small or hicvs-large)"))
    }
}

/// Sampling quotas and fold counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    /// HTC training pixels per class per image.
    pub htc_quota: usize,
    /// HIC and small-HICVS pool pixels per class per Frame image.
    pub hic_quota: usize,
    /// Large-HICVS pool pixels per class per Frame image.
    pub hicvs_large_quota: usize,
    pub folds: usize,
    pub large_folds: usize,
    /// Training examples per class drawn from one fold in HIC optimization.
    pub subsample: usize,
    pub validation_fraction: f64,
    /// Use ordinary k-fold CV in HIC instead of train-on-one-fold.
    pub conventional_cv: bool,
}

impl PlanConfig {
    pub fn paper() -> Self {
        Self {
            htc_quota: 989,
            hic_quota: 250,
            hicvs_large_quota: 2068,
            folds: 10,
            large_folds: 5,
            subsample: 10,
            validation_fraction: 0.2,
            conventional_cv: false,
        }
    }

    pub fn desk() -> Self {
        Self {
            htc_quota: 50,
            hic_quota: 50,
            hicvs_large_quota: 100,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::InvalidConfig(m));
        if self.htc_quota == 0 || self.hic_quota == 0 || self.hicvs_large_quota == 0 {
            return bad("quotas must be at least 1".into());
        }
        if self.folds < 2 || self.large_folds < 2 {
            return bad("fold counts must be at least 2".into());
        }
        if self.subsample == 0 {
            return bad("subsample must be at least 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation fraction {} outside (0, 1)", self.validation_fraction));
        }
        Ok(())
    }
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// One optimization iteration: train on `train`, score on `eval`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Index sets of one scenario repetition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub scenario: Scenario,
    /// Training pool for the final model.
    pub pool: Vec<usize>,
    pub folds: Vec<Fold>,
    /// If set, each evaluation trains on this many examples per class drawn
    /// from the fold's training set, redrawn from the evaluation seed.
    pub subsample: Option<usize>,
    pub test: Vec<usize>,
    pub validation: Option<Vec<usize>>,
}

impl FoldPlan {
    /// Pool, test and validation are pairwise disjoint, and every fold's train
    /// and evaluation sets are disjoint.
    pub fn is_consistent(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        let v = self.validation.as_deref().unwrap_or(&[]);
        let outer = self.pool.iter().chain(&self.test).chain(v).all(|&i| seen.insert(i));
        outer
            && self.folds.iter().all(|f| {
                let train: std::collections::BTreeSet<_> = f.train.iter().collect();
                f.eval.iter().all(|i| !train.contains(i))
            })
    }
}

/// Splits `indices` into `k` folds with each class spread round-robin after a
/// seeded shuffle. Folds are returned sorted.
pub fn stratified_folds(labels: &[ClassId], indices: &[usize], k: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_class.entry(labels[i]).or_default().push(i);
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for members in by_class.values_mut() {
        members.shuffle(rng);
        for &i in members.iter() {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

/// Draws `per_class` of each class present in `candidates` without replacement.
pub fn sample_per_class(
    labels: &[ClassId],
    candidates: &[usize],
    per_class: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, DataError> {
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for &i in candidates {
        by_class.entry(labels[i]).or_default().push(i);
    }
    let mut out = Vec::with_capacity(by_class.len() * per_class);
    for (class, members) in &by_class {
        if members.len() < per_class {
            return Err(DataError::InsufficientGroup {
                group: format!("class {class}"),
                available: members.len(),
                requested: per_class,
            });
        }
        out.extend(index::sample(rng, members.len(), per_class).into_iter().map(|k| members[k]));
    }
    out.sort_unstable();
    Ok(out)
}

fn without(all: &[Vec<usize>], skip: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = all
        .iter()
        .enumerate()
        .filter(|(i, _)| !skip.contains(i))
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    out.sort_unstable();
    out
}

/// Standard k-fold: train on all folds but one, score on the held-out fold.
fn kfold(folds: &[Vec<usize>]) -> Vec<Fold> {
    (0..folds.len())
        .map(|i| Fold {
            train: without(folds, &[i]),
            eval: folds[i].clone(),
        })
        .collect()
}

fn require_scene(ds: &LabeledDataset, scene: Scene) -> Result<Vec<usize>, ScenarioError> {
    let idx = ds.indices_where(|r| r.scene == scene);
    if idx.is_empty() {
        return Err(ScenarioError::MissingScene(scene));
    }
    Ok(idx)
}

const STREAM_POOL: u64 = 1;
const STREAM_FOLDS: u64 = 2;
const STREAM_VALIDATION: u64 = 3;

/// Per-class-per-image training sample from all images; k-fold CV inside it;
/// test on everything else.
pub fn build_htc_plan(ds: &LabeledDataset, config: &PlanConfig, seed: u64) -> Result<FoldPlan, ScenarioError> {
    config.validate()?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let pool = sample_groups(ds, &all, config.htc_quota, GroupBy::ClassImage, &mut seed::rng(seed, &[STREAM_POOL]))?;
    let test = crate::data::complement(ds.len(), &pool);
    let labels = ds.labels();
    let folds = stratified_folds(&labels, &pool, config.folds, &mut seed::rng(seed, &[STREAM_FOLDS]));
    Ok(FoldPlan {
        scenario: Scenario::Htc,
        pool,
        folds: kfold(&folds),
        subsample: None,
        test,
        validation: None,
    })
}

/// Frame-only pool; optimization trains on a small per-class sample of one
/// fold and scores on the other folds. Test on all Comparison pixels.
pub fn build_hic_plan(ds: &LabeledDataset, config: &PlanConfig, seed: u64) -> Result<FoldPlan, ScenarioError> {
    config.validate()?;
    let frame = require_scene(ds, Scene::Frame)?;
    let test = require_scene(ds, Scene::Comparison)?;
    let pool = sample_groups(ds, &frame, config.hic_quota, GroupBy::ClassImage, &mut seed::rng(seed, &[STREAM_POOL]))?;
    let labels = ds.labels();
    let folds = stratified_folds(&labels, &pool, config.folds, &mut seed::rng(seed, &[STREAM_FOLDS]));
    let (folds, subsample) = if config.conventional_cv {
        (kfold(&folds), None)
    } else {
        let inverted = (0..folds.len())
            .map(|i| Fold {
                train: folds[i].clone(),
                eval: without(&folds, &[i]),
            })
            .collect();
        (inverted, Some(config.subsample))
    };
    Ok(FoldPlan {
        scenario: Scenario::Hic,
        pool,
        folds,
        subsample,
        test,
        validation: None,
    })
}

/// Splits Comparison pixels into test and validation, taking
/// `round(fraction * n)` of every class-by-day group for validation.
pub fn validation_split(
    ds: &LabeledDataset,
    comparison: &[usize],
    fraction: f64,
    rng: &mut impl Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut groups: BTreeMap<(ClassId, crate::data::Day), Vec<usize>> = BTreeMap::new();
    for &i in comparison {
        let r = &ds.records()[i];
        groups.entry((r.label, r.day)).or_default().push(i);
    }
    let mut validation = Vec::new();
    for members in groups.values() {
        let take = (fraction * members.len() as f64).round() as usize;
        validation.extend(index::sample(rng, members.len(), take).into_iter().map(|k| members[k]));
    }
    validation.sort_unstable();
    let mut test: Vec<usize> = comparison.to_vec();
    test.sort_unstable();
    test.retain(|i| validation.binary_search(i).is_err());
    (test, validation)
}

/// HIC with a Comparison validation split used for scoring during model
/// selection. The small variant trains on 9 of 10 folds of the HIC pool (the
/// tenth is left out); the large variant uses a bigger pool and 4 of 5 folds.
pub fn build_hicvs_plan(ds: &LabeledDataset, large: bool, config: &PlanConfig, seed: u64) -> Result<FoldPlan, ScenarioError> {
    config.validate()?;
    let frame = require_scene(ds, Scene::Frame)?;
    let comparison = require_scene(ds, Scene::Comparison)?;
    let (quota, k) = if large {
        (config.hicvs_large_quota, config.large_folds)
    } else {
        (config.hic_quota, config.folds)
    };
    let pool = sample_groups(ds, &frame, quota, GroupBy::ClassImage, &mut seed::rng(seed, &[STREAM_POOL]))?;
    let (test, validation) = validation_split(
        ds,
        &comparison,
        config.validation_fraction,
        &mut seed::rng(seed, &[STREAM_VALIDATION]),
    );
    if validation.is_empty() {
        return Err(ScenarioError::InvalidConfig("validation split is empty".into()));
    }
    let labels = ds.labels();
    let folds = stratified_folds(&labels, &pool, k, &mut seed::rng(seed, &[STREAM_FOLDS]));
    let folds = (0..k)
        .map(|i| Fold {
            train: without(&folds, &[i]),
            eval: validation.clone(),
        })
        .collect();
    Ok(FoldPlan {
        scenario: if large { Scenario::HicvsLarge } else { Scenario::HicvsSmall },
        pool,
        folds,
        subsample: None,
        test,
        validation: Some(validation),
    })
}

pub fn build_plan(ds: &LabeledDataset, scenario: Scenario, config: &PlanConfig, seed: u64) -> Result<FoldPlan, ScenarioError> {
    match scenario {
        Scenario::Htc => build_htc_plan(ds, config, seed),
        Scenario::Hic => build_hic_plan(ds, config, seed),
        Scenario::HicvsSmall => build_hicvs_plan(ds, false, config, seed),
        Scenario::HicvsLarge => build_hicvs_plan(ds, true, config, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Day, ImageMeta};
    use crate::synth::SUITE_LAYOUT;

    /// Seven images with `per_group` one-feature records per class.
    fn suite(per_group: usize) -> LabeledDataset {
        let classes = [1, 2, 3, 5, 6, 7];
        let mut ds = LabeledDataset::new(&classes);
        for (i, &(scene, day)) in SUITE_LAYOUT.iter().enumerate() {
            let img = ds.add_image(ImageMeta {
                image_id: format!("img{i}"),
                scene,
                day,
            });
            for &c in &classes {
                for k in 0..per_group {
                    ds.push(vec![k as f64], c, img).unwrap();
                }
            }
        }
        ds
    }

    fn desk(q: usize) -> PlanConfig {
        PlanConfig {
            htc_quota: q,
            hic_quota: q,
            hicvs_large_quota: q,
            ..PlanConfig::paper()
        }
    }

    #[test]
    fn htc_desk_size() {
        let ds = suite(30);
        let p = build_htc_plan(&ds, &desk(20), 1).unwrap();
        assert_eq!(p.pool.len(), 840);
        assert_eq!(p.pool.len() + p.test.len(), ds.len());
        assert!(p.is_consistent());
        assert_eq!(p.folds.len(), 10);
        assert_eq!(p.folds.iter().map(|f| f.eval.len()).sum::<usize>(), 840);
    }

    #[test]
    fn hic_keeps_comparison_out_of_optimization() {
        let ds = suite(30);
        let p = build_hic_plan(&ds, &desk(25), 2).unwrap();
        assert_eq!(p.pool.len(), 25 * 6 * 4);
        assert_eq!(p.subsample, Some(10));
        for f in &p.folds {
            assert!(f.train.iter().chain(&f.eval).all(|&i| ds.records()[i].scene == Scene::Frame));
            assert_eq!(f.train.len() + f.eval.len(), p.pool.len());
        }
        assert!(p.test.iter().all(|&i| ds.records()[i].scene == Scene::Comparison));
        assert_eq!(p.test.len(), 3 * 6 * 30);
        assert!(p.is_consistent());
    }

    #[test]
    fn conventional_cv_flag() {
        let ds = suite(30);
        let cfg = PlanConfig {
            conventional_cv: true,
            ..desk(25)
        };
        let p = build_hic_plan(&ds, &cfg, 2).unwrap();
        assert_eq!(p.subsample, None);
        assert!(p.folds.iter().all(|f| f.eval.len() == p.pool.len() / 10));
    }

    #[test]
    fn hicvs_variants() {
        let ds = suite(30);
        let small = build_hicvs_plan(&ds, false, &desk(20), 3).unwrap();
        let large = build_hicvs_plan(&ds, true, &desk(20), 3).unwrap();
        for p in [&small, &large] {
            assert!(p.is_consistent());
            let v = p.validation.as_ref().unwrap();
            // 30 per class-day group, 6 of each go to validation.
            assert_eq!(v.len(), 6 * 3 * 6);
            assert_eq!(p.test.len(), 24 * 3 * 6);
            assert!(p.folds.iter().all(|f| &f.eval == v));
        }
        assert_eq!(small.folds.len(), 10);
        assert_eq!(large.folds.len(), 5);
        assert_eq!(large.folds[0].train.len(), 20 * 6 * 4 * 4 / 5);
    }

    #[test]
    fn missing_scene_is_reported() {
        let mut ds = LabeledDataset::new(&[1, 2]);
        let img = ds.add_image(ImageMeta {
            image_id: "f".into(),
            scene: Scene::Frame,
            day: Day::D1,
        });
        for k in 0..20 {
            ds.push(vec![k as f64], 1 + (k % 2) as ClassId, img).unwrap();
        }
        assert!(matches!(
            build_hic_plan(&ds, &desk(2), 0),
            Err(ScenarioError::MissingScene(Scene::Comparison))
        ));
    }

    #[test]
    fn plans_are_seeded() {
        let ds = suite(30);
        for s in Scenario::ALL {
            assert_eq!(build_plan(&ds, s, &desk(20), 4).unwrap(), build_plan(&ds, s, &desk(20), 4).unwrap());
        }
        assert_ne!(build_htc_plan(&ds, &desk(20), 4).unwrap(), build_htc_plan(&ds, &desk(20), 5).unwrap());
    }

    #[test]
    fn scenario_names() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
    }

    proptest::proptest! {
        #[test]
        fn stratified_folds_partition_and_balance(
            labels in proptest::collection::vec(0u16..4, 1..120),
            k in 1usize..7,
            seed in proptest::prelude::any::<u64>(),
        ) {
            let indices: Vec<usize> = (0..labels.len()).collect();
            let folds = stratified_folds(&labels, &indices, k, &mut seed::rng(seed, &[]));
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(all, indices);
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            proptest::prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
