//! Spectral cubes, label maps and flat labeled datasets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Class identifier as stored in label maps. `0` is unannotated background.
pub type ClassId = u16;

/// Classes kept for classification by default (class 4 is absent from some images).
pub const DEFAULT_CLASSES: [ClassId; 6] = [1, 2, 3, 5, 6, 7];

/// Class ids dropped by default during extraction.
pub const DEFAULT_EXCLUDED: [ClassId; 1] = [4];

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid cube: {0}")]
    InvalidCube(String),
    #[error("group {group} has {available} records, {requested} requested")]
    InsufficientGroup {
        group: String,
        available: usize,
        requested: usize,
    },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
}

/// Reflectance cube stored row-major as (row, col, band).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCube {
    rows: usize,
    cols: usize,
    bands: usize,
    values: Vec<f32>,
    wavelengths: Option<Vec<f64>>,
}

impl SpectralCube {
    pub fn new(rows: usize, cols: usize, bands: usize, values: Vec<f32>) -> Result<Self, DataError> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(DataError::InvalidCube(format!(
                "dimensions must be positive, got {rows}x{cols}x{bands}"
            )));
        }
        if values.len() != rows * cols * bands {
            return Err(DataError::InvalidCube(format!(
                "{} values for a {rows}x{cols}x{bands} cube",
                values.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            bands,
            values,
            wavelengths: None,
        })
    }

    /// Attaches band center wavelengths in nanometres.
    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self, DataError> {
        if wavelengths.len() != self.bands {
            return Err(DataError::InvalidCube(format!(
                "{} wavelengths for {} bands",
                wavelengths.len(),
                self.bands
            )));
        }
        if wavelengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DataError::InvalidCube("wavelengths must be strictly increasing".into()));
        }
        self.wavelengths = Some(wavelengths);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.values[(row * self.cols + col) * self.bands + band]
    }

    /// Contiguous spectrum of one pixel.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.cols + col) * self.bands;
        &self.values[start..start + self.bands]
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Per-pixel ground truth paired with a cube.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    rows: usize,
    cols: usize,
    labels: Vec<ClassId>,
}

impl LabelMap {
    pub fn new(rows: usize, cols: usize, labels: Vec<ClassId>) -> Result<Self, DataError> {
        if rows == 0 || cols == 0 {
            return Err(DataError::DimensionMismatch(format!(
                "label map dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if labels.len() != rows * cols {
            return Err(DataError::DimensionMismatch(format!(
                "{} labels for a {rows}x{cols} map",
                labels.len()
            )));
        }
        Ok(Self { rows, cols, labels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> ClassId {
        self.labels[row * self.cols + col]
    }

    /// Pixel count per label value, background included.
    pub fn histogram(&self) -> BTreeMap<ClassId, usize> {
        let mut hist = BTreeMap::new();
        for &l in &self.labels {
            *hist.entry(l).or_insert(0) += 1;
        }
        hist
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scene {
    Frame,
    Comparison,
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scene::Frame => f.pad("frame"),
            Scene::Comparison => f.pad("comparison"),
        }
    }
}

impl FromStr for Scene {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "frame" | "f" => Ok(Scene::Frame),
            "comparison" | "e" => Ok(Scene::Comparison),
            other => Err(format!("unknown scene '{other}'")),
        }
    }
}

/// Acquisition day. `D1a` is the afternoon of the first day.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Day {
    D1,
    D1a,
    D7,
    D21,
}

impl Day {
    pub const ALL: [Day; 4] = [Day::D1, Day::D1a, Day::D7, Day::D21];

    /// Elapsed time in days, used for spectral aging.
    pub fn elapsed(self) -> f64 {
        match self {
            Day::D1 => 1.0,
            Day::D1a => 1.5,
            Day::D7 => 7.0,
            Day::D21 => 21.0,
        }
    }

    /// Day column a result is reported under; the afternoon image counts as day 1.
    pub fn report_day(self) -> Day {
        match self {
            Day::D1a => Day::D1,
            d => d,
        }
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Day::D1 => "1",
            Day::D1a => "1a",
            Day::D7 => "7",
            Day::D21 => "21",
        })
    }
}

impl FromStr for Day {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Day::D1),
            "1a" => Ok(Day::D1a),
            "7" => Ok(Day::D7),
            "21" => Ok(Day::D21),
            other => Err(format!("unknown day '{other}'")),
        }
    }
}

/// Identity of one source image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub scene: Scene,
    pub day: Day,
}

/// One labeled pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub spectrum: Vec<f64>,
    pub label: ClassId,
    /// Index into [`LabeledDataset::images`].
    pub image: usize,
    pub scene: Scene,
    pub day: Day,
}

/// Flat collection of labeled pixels drawn from one or more images.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledDataset {
    classes: Vec<ClassId>,
    images: Vec<ImageMeta>,
    records: Vec<Record>,
}

impl LabeledDataset {
    pub fn new(classes: &[ClassId]) -> Self {
        let classes: BTreeSet<ClassId> = classes.iter().copied().collect();
        Self {
            classes: classes.into_iter().collect(),
            images: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn images(&self) -> &[ImageMeta] {
        &self.images
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Spectrum length shared by all records, `None` when empty.
    pub fn feature_count(&self) -> Option<usize> {
        self.records.first().map(|r| r.spectrum.len())
    }

    pub fn labels(&self) -> Vec<ClassId> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Registers an image and returns its index.
    pub fn add_image(&mut self, meta: ImageMeta) -> usize {
        self.images.push(meta);
        self.images.len() - 1
    }

    pub fn push(&mut self, spectrum: Vec<f64>, label: ClassId, image: usize) -> Result<(), DataError> {
        if label == 0 || self.classes.binary_search(&label).is_err() {
            return Err(DataError::Inconsistent(format!(
                "label {label} is not in the class set {:?}",
                self.classes
            )));
        }
        let meta = self
            .images
            .get(image)
            .ok_or_else(|| DataError::Inconsistent(format!("unknown image index {image}")))?;
        if let Some(n) = self.feature_count() {
            if n != spectrum.len() {
                return Err(DataError::DimensionMismatch(format!(
                    "spectrum of length {} in a dataset of length {n}",
                    spectrum.len()
                )));
            }
        }
        let (scene, day) = (meta.scene, meta.day);
        self.records.push(Record {
            spectrum,
            label,
            image,
            scene,
            day,
        });
        Ok(())
    }

    /// Appends all records of `other`, remapping its image indices.
    pub fn extend(&mut self, other: LabeledDataset) -> Result<(), DataError> {
        if other.classes != self.classes {
            return Err(DataError::Inconsistent("class sets differ".into()));
        }
        let offset = self.images.len();
        self.images.extend(other.images);
        for mut r in other.records {
            if let Some(n) = self.feature_count() {
                if n != r.spectrum.len() {
                    return Err(DataError::DimensionMismatch(format!(
                        "spectrum of length {} in a dataset of length {n}",
                        r.spectrum.len()
                    )));
                }
            }
            r.image += offset;
            self.records.push(r);
        }
        Ok(())
    }

    /// Applies `f` to every spectrum, e.g. a preprocessing step.
    pub fn try_map_spectra<E>(
        self,
        mut f: impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
    ) -> Result<LabeledDataset, E> {
        let records = self
            .records
            .into_iter()
            .map(|r| {
                let spectrum = f(&r.spectrum)?;
                Ok(Record { spectrum, ..r })
            })
            .collect::<Result<Vec<_>, E>>()?;
        Ok(LabeledDataset {
            classes: self.classes,
            images: self.images,
            records,
        })
    }

    /// Dense row-major matrix of the given records.
    pub fn matrix(&self, indices: &[usize]) -> FeatureMatrix {
        let cols = self.feature_count().unwrap_or(0);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(&self.records[i].spectrum);
        }
        FeatureMatrix {
            rows: indices.len(),
            cols,
            data,
        }
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<ClassId> {
        indices.iter().map(|&i| self.records[i].label).collect()
    }

    pub fn indices_where(&self, pred: impl Fn(&Record) -> bool) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| pred(r))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Row-major feature matrix handed to classifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DataError> {
        if data.len() != rows * cols {
            return Err(DataError::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(DataError::DimensionMismatch("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Sub-matrix of the given rows and (optionally) columns.
    pub fn select(&self, rows: &[usize], cols: Option<&[usize]>) -> FeatureMatrix {
        match cols {
            None => {
                let mut data = Vec::with_capacity(rows.len() * self.cols);
                for &r in rows {
                    data.extend_from_slice(self.row(r));
                }
                FeatureMatrix {
                    rows: rows.len(),
                    cols: self.cols,
                    data,
                }
            }
            Some(cols) => {
                let mut data = Vec::with_capacity(rows.len() * cols.len());
                for &r in rows {
                    let row = self.row(r);
                    data.extend(cols.iter().map(|&c| row[c]));
                }
                FeatureMatrix {
                    rows: rows.len(),
                    cols: cols.len(),
                    data,
                }
            }
        }
    }
}

/// Which fields define a stratum when sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupBy {
    Class,
    ClassImage,
}

/// Disjoint index sets into a [`LabeledDataset`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Option<Vec<usize>>,
}

impl SplitPlan {
    /// True when the index sets are pairwise disjoint.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = BTreeSet::new();
        let validation = self.validation.as_deref().unwrap_or(&[]);
        self.train
            .iter()
            .chain(&self.test)
            .chain(validation)
            .all(|&i| seen.insert(i))
    }
}

/// Groups `candidates` by stratum, in deterministic (sorted) order.
pub(crate) fn group_indices(
    dataset: &LabeledDataset,
    candidates: &[usize],
    group_by: GroupBy,
) -> BTreeMap<(ClassId, usize), Vec<usize>> {
    let mut groups: BTreeMap<(ClassId, usize), Vec<usize>> = BTreeMap::new();
    for &i in candidates {
        let r = &dataset.records[i];
        let key = match group_by {
            GroupBy::Class => (r.label, 0),
            GroupBy::ClassImage => (r.label, r.image),
        };
        groups.entry(key).or_default().push(i);
    }
    groups
}

pub(crate) fn group_name(dataset: &LabeledDataset, key: (ClassId, usize), group_by: GroupBy) -> String {
    match group_by {
        GroupBy::Class => format!("class {}", key.0),
        GroupBy::ClassImage => format!(
            "class {} in image '{}'",
            key.0,
            dataset
                .images
                .get(key.1)
                .map_or("?", |m| m.image_id.as_str())
        ),
    }
}

/// Draws exactly `per_group` members from every stratum of `candidates` without
/// replacement. Returns the drawn indices sorted ascending.
pub fn sample_groups(
    dataset: &LabeledDataset,
    candidates: &[usize],
    per_group: usize,
    group_by: GroupBy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, DataError> {
    let groups = group_indices(dataset, candidates, group_by);
    let mut picked = Vec::with_capacity(groups.len() * per_group);
    for (key, members) in &groups {
        if members.len() < per_group {
            return Err(DataError::InsufficientGroup {
                group: group_name(dataset, *key, group_by),
                available: members.len(),
                requested: per_group,
            });
        }
        picked.extend(
            index::sample(rng, members.len(), per_group)
                .into_iter()
                .map(|k| members[k]),
        );
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Equal per-stratum training sample; everything else becomes the test set.
pub fn stratified_sample(
    dataset: &LabeledDataset,
    per_class: usize,
    group_by: GroupBy,
    seed: u64,
) -> Result<SplitPlan, DataError> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = sample_groups(dataset, &all, per_class, group_by, &mut rng)?;
    let test = complement(dataset.len(), &train);
    Ok(SplitPlan {
        train,
        test,
        validation: None,
    })
}

/// Indices in `0..n` absent from the sorted slice `taken`.
pub(crate) fn complement(n: usize, taken: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(n.saturating_sub(taken.len()));
    let mut t = taken.iter().peekable();
    for i in 0..n {
        if t.peek() == Some(&&i) {
            t.next();
        } else {
            out.push(i);
        }
    }
    out
}

/// Pixels of `cube` whose label is in `classes` and not in `excluded`.
pub fn extract_labeled(
    cube: &SpectralCube,
    labels: &LabelMap,
    meta: &ImageMeta,
    classes: &[ClassId],
    excluded: &[ClassId],
) -> Result<LabeledDataset, DataError> {
    if cube.rows() != labels.rows() || cube.cols() != labels.cols() {
        return Err(DataError::DimensionMismatch(format!(
            "cube is {}x{}, label map is {}x{}",
            cube.rows(),
            cube.cols(),
            labels.rows(),
            labels.cols()
        )));
    }
    let kept: Vec<ClassId> = classes
        .iter()
        .copied()
        .filter(|c| !excluded.contains(c))
        .collect();
    let mut ds = LabeledDataset::new(&kept);
    let image = ds.add_image(meta.clone());
    for row in 0..cube.rows() {
        for col in 0..cube.cols() {
            let label = labels.get(row, col);
            if label == 0 || excluded.contains(&label) || !kept.contains(&label) {
                continue;
            }
            let spectrum = cube.pixel(row, col).iter().map(|&v| f64::from(v)).collect();
            ds.push(spectrum, label, image)?;
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str) -> ImageMeta {
        ImageMeta {
            image_id: id.into(),
            scene: Scene::Frame,
            day: Day::D1,
        }
    }

    #[test]
    fn extract_drops_background_and_excluded() {
        let cube = SpectralCube::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let labels = LabelMap::new(2, 2, vec![0, 1, 4, 2]).unwrap();
        let ds = extract_labeled(&cube, &labels, &meta("a"), &DEFAULT_CLASSES, &DEFAULT_EXCLUDED).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels(), vec![1, 2]);
        assert!((ds.records()[0].spectrum[0] - 0.2f32 as f64).abs() < 1e-12);
    }

    #[test]
    fn extract_all_background_is_empty() {
        let cube = SpectralCube::new(3, 3, 2, vec![1.0; 18]).unwrap();
        let labels = LabelMap::new(3, 3, vec![0; 9]).unwrap();
        let ds = extract_labeled(&cube, &labels, &meta("a"), &DEFAULT_CLASSES, &DEFAULT_EXCLUDED).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn extract_rejects_dimension_mismatch() {
        let cube = SpectralCube::new(2, 2, 1, vec![0.0; 4]).unwrap();
        let labels = LabelMap::new(2, 3, vec![0; 6]).unwrap();
        assert!(matches!(
            extract_labeled(&cube, &labels, &meta("a"), &DEFAULT_CLASSES, &[]),
            Err(DataError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn extract_count_matches_histogram() {
        // 10x10 map with a pseudo-random label pattern.
        let labels: Vec<ClassId> = (0..100u32).map(|i| ((i * 37 + 11) % 8) as ClassId).collect();
        let map = LabelMap::new(10, 10, labels.clone()).unwrap();
        let cube = SpectralCube::new(10, 10, 3, vec![0.5; 300]).unwrap();
        let ds = extract_labeled(&cube, &map, &meta("a"), &DEFAULT_CLASSES, &DEFAULT_EXCLUDED).unwrap();

        let mut expected = 0;
        for c in DEFAULT_CLASSES {
            expected += labels.iter().filter(|&&l| l == c).count();
        }
        assert_eq!(ds.len(), expected);
        let hist = map.histogram();
        for c in DEFAULT_CLASSES {
            let got = ds.records().iter().filter(|r| r.label == c).count();
            assert_eq!(got, hist.get(&c).copied().unwrap_or(0));
        }
    }

    #[test]
    fn cube_rejects_bad_wavelengths() {
        let cube = SpectralCube::new(1, 1, 3, vec![0.0; 3]).unwrap();
        assert!(cube.clone().with_wavelengths(vec![400.0, 500.0]).is_err());
        assert!(cube.clone().with_wavelengths(vec![400.0, 400.0, 500.0]).is_err());
        assert!(cube.with_wavelengths(vec![400.0, 450.0, 500.0]).is_ok());
    }

    fn two_class_dataset() -> LabeledDataset {
        let mut ds = LabeledDataset::new(&[1, 2]);
        let img = ds.add_image(meta("a"));
        for i in 0..10 {
            ds.push(vec![i as f64], if i < 5 { 1 } else { 2 }, img).unwrap();
        }
        ds
    }

    #[test]
    fn stratified_one_per_class() {
        let ds = two_class_dataset();
        let plan = stratified_sample(&ds, 1, GroupBy::Class, 3).unwrap();
        assert_eq!(plan.train.len(), 2);
        assert_eq!(plan.test.len(), 8);
        assert!(plan.is_disjoint());
        assert_eq!(plan, stratified_sample(&ds, 1, GroupBy::Class, 3).unwrap());
    }

    #[test]
    fn stratified_names_deficient_group() {
        let ds = two_class_dataset();
        let err = stratified_sample(&ds, 6, GroupBy::ClassImage, 0).unwrap_err();
        match err {
            DataError::InsufficientGroup { group, available, requested } => {
                assert!(group.contains("class 1"), "{group}");
                assert_eq!((available, requested), (5, 6));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn push_rejects_unknown_label_and_ragged_spectra() {
        let mut ds = two_class_dataset();
        assert!(ds.push(vec![0.0], 3, 0).is_err());
        assert!(ds.push(vec![0.0], 0, 0).is_err());
        assert!(ds.push(vec![0.0, 1.0], 1, 0).is_err());
    }

    #[test]
    fn complement_is_exact() {
        assert_eq!(complement(6, &[0, 2, 5]), vec![1, 3, 4]);
        assert_eq!(complement(3, &[]), vec![0, 1, 2]);
    }
}
