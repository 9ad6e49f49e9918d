//! Spectral preprocessing: spatial median smoothing, per-pixel median
//! normalization, noisy-band removal and first-difference features.

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{extract_labeled, ClassId, DataError, ImageMeta, LabelMap, LabeledDataset, SpectralCube};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("spectrum has zero median, cannot normalize")]
    ZeroMedian,
    #[error("band index {index} out of range for {bands} bands")]
    BandOutOfRange { index: usize, bands: usize },
    #[error("derivative needs at least 2 bands, got {0}")]
    TooFewBands(usize),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Band ranges dropped by default (0-based, inclusive), leaving 113 of 128.
pub const DEFAULT_REMOVED_RANGES: [(usize, usize); 3] = [(0, 4), (48, 50), (121, 127)];

pub fn default_removed_bands() -> Vec<usize> {
    DEFAULT_REMOVED_RANGES
        .iter()
        .flat_map(|&(lo, hi)| lo..=hi)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    /// Half-width of the square spatial median window; 0 disables smoothing.
    pub median_radius: usize,
    pub removed_bands: Vec<usize>,
    pub apply_normalization: bool,
    pub apply_derivative: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            median_radius: 1,
            removed_bands: default_removed_bands(),
            apply_normalization: true,
            apply_derivative: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self, bands: usize) -> Result<(), PreprocessError> {
        let removal = BandRemoval::new(bands, &self.removed_bands)?;
        if removal.kept() < 2 {
            return Err(PreprocessError::TooFewBands(removal.kept()));
        }
        Ok(())
    }
}

/// Median of a non-empty slice; even lengths average the two central values.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut buf = values.to_vec();
    median_in_place(&mut buf)
}

fn median_in_place(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (lower, upper, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}

/// Per-band spatial median over a `(2r+1)^2` window clipped at the borders.
pub fn median_filter(cube: &SpectralCube, radius: usize) -> SpectralCube {
    if radius == 0 {
        return cube.clone();
    }
    let (rows, cols, bands) = (cube.rows(), cube.cols(), cube.bands());
    let mut values = vec![0f32; rows * cols * bands];
    values
        .par_chunks_mut(cols * bands)
        .enumerate()
        .for_each(|(row, out)| {
            let r0 = row.saturating_sub(radius);
            let r1 = (row + radius).min(rows - 1);
            let mut window = Vec::with_capacity((2 * radius + 1) * (2 * radius + 1));
            for col in 0..cols {
                let c0 = col.saturating_sub(radius);
                let c1 = (col + radius).min(cols - 1);
                for band in 0..bands {
                    window.clear();
                    for r in r0..=r1 {
                        for c in c0..=c1 {
                            window.push(f64::from(cube.get(r, c, band)));
                        }
                    }
                    out[col * bands + band] = median_in_place(&mut window) as f32;
                }
            }
        });
    SpectralCube::new(rows, cols, bands, values).expect("same shape as input")
}

/// Divides a spectrum by its median, cancelling multiplicative illumination.
pub fn median_normalize(spectrum: &[f64]) -> Result<Vec<f64>, PreprocessError> {
    if spectrum.is_empty() {
        return Err(PreprocessError::ZeroMedian);
    }
    let m = median(spectrum);
    if m == 0.0 || !m.is_finite() {
        return Err(PreprocessError::ZeroMedian);
    }
    Ok(spectrum.iter().map(|v| v / m).collect())
}

/// Band-removal plan with an old-to-new index translation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BandRemoval {
    bands: usize,
    /// Original index of every surviving band, ascending.
    kept: Vec<usize>,
}

impl BandRemoval {
    pub fn new(bands: usize, removed: &[usize]) -> Result<Self, PreprocessError> {
        let mut drop = vec![false; bands];
        for &i in removed {
            if i >= bands {
                return Err(PreprocessError::BandOutOfRange { index: i, bands });
            }
            drop[i] = true;
        }
        let kept = (0..bands).filter(|&i| !drop[i]).collect();
        Ok(Self { bands, kept })
    }

    pub fn input_bands(&self) -> usize {
        self.bands
    }

    pub fn kept(&self) -> usize {
        self.kept.len()
    }

    /// Original index of each surviving band.
    pub fn original_indices(&self) -> &[usize] {
        &self.kept
    }

    /// Position of an original band after removal, if it survived.
    pub fn new_index(&self, original: usize) -> Option<usize> {
        self.kept.binary_search(&original).ok()
    }

    pub fn apply(&self, spectrum: &[f64]) -> Result<Vec<f64>, PreprocessError> {
        if spectrum.len() != self.bands {
            return Err(DataError::DimensionMismatch(format!(
                "spectrum has {} bands, removal plan expects {}",
                spectrum.len(),
                self.bands
            ))
            .into());
        }
        Ok(self.kept.iter().map(|&i| spectrum[i]).collect())
    }
}

/// Removes the given bands from one spectrum, also returning the translation table.
pub fn remove_bands(spectrum: &[f64], removed: &[usize]) -> Result<(Vec<f64>, BandRemoval), PreprocessError> {
    let plan = BandRemoval::new(spectrum.len(), removed)?;
    let out = plan.apply(spectrum)?;
    Ok((out, plan))
}

/// Forward difference between neighbouring bands.
pub fn derivative(spectrum: &[f64]) -> Result<Vec<f64>, PreprocessError> {
    if spectrum.len() < 2 {
        return Err(PreprocessError::TooFewBands(spectrum.len()));
    }
    Ok(spectrum.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Maps output features of the chain back to raw band indices.
///
/// A derivative feature `i` is attributed to the lower band of its pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureMap {
    original: Vec<usize>,
}

impl FeatureMap {
    pub fn identity(n: usize) -> Self {
        Self {
            original: (0..n).collect(),
        }
    }

    pub fn from_original(original: Vec<usize>) -> Self {
        Self { original }
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }

    pub fn original(&self, feature: usize) -> usize {
        self.original[feature]
    }

    pub fn to_original(&self, features: &[usize]) -> Vec<usize> {
        features.iter().map(|&f| self.original[f]).collect()
    }
}

/// Per-spectrum part of the chain: normalization, band removal, derivative.
#[derive(Clone, Debug)]
pub struct SpectrumChain {
    normalize: bool,
    derivative: bool,
    removal: BandRemoval,
}

impl SpectrumChain {
    pub fn new(config: &PreprocessConfig, bands: usize) -> Result<Self, PreprocessError> {
        config.validate(bands)?;
        Ok(Self {
            normalize: config.apply_normalization,
            derivative: config.apply_derivative,
            removal: BandRemoval::new(bands, &config.removed_bands)?,
        })
    }

    pub fn output_len(&self) -> usize {
        self.removal.kept() - usize::from(self.derivative)
    }

    pub fn feature_map(&self) -> FeatureMap {
        let mut original = self.removal.original_indices().to_vec();
        if self.derivative {
            original.pop();
        }
        FeatureMap { original }
    }

    pub fn apply(&self, spectrum: &[f64]) -> Result<Vec<f64>, PreprocessError> {
        let normalized;
        let s = if self.normalize {
            normalized = median_normalize(spectrum)?;
            &normalized[..]
        } else {
            spectrum
        };
        let reduced = self.removal.apply(s)?;
        if self.derivative {
            derivative(&reduced)
        } else {
            Ok(reduced)
        }
    }
}

/// Runs the whole chain on a cube, returning a feature cube.
pub fn preprocess_cube(cube: &SpectralCube, config: &PreprocessConfig) -> Result<(SpectralCube, FeatureMap), PreprocessError> {
    let chain = SpectrumChain::new(config, cube.bands())?;
    let filtered = median_filter(cube, config.median_radius);
    let out_bands = chain.output_len();
    let pixels: Vec<Vec<f32>> = (0..cube.rows() * cube.cols())
        .into_par_iter()
        .map(|p| {
            let (r, c) = (p / cube.cols(), p % cube.cols());
            let s: Vec<f64> = filtered.pixel(r, c).iter().map(|&v| f64::from(v)).collect();
            chain
                .apply(&s)
                .map(|v| v.into_iter().map(|x| x as f32).collect())
        })
        .collect::<Result<_, _>>()?;
    let values = pixels.concat();
    let out = SpectralCube::new(cube.rows(), cube.cols(), out_bands, values)?;
    Ok((out, chain.feature_map()))
}

/// Smooths the cube, extracts annotated pixels and runs the per-spectrum chain on them.
pub fn preprocess_image(
    cube: &SpectralCube,
    labels: &LabelMap,
    meta: &ImageMeta,
    classes: &[ClassId],
    excluded: &[ClassId],
    config: &PreprocessConfig,
) -> Result<(LabeledDataset, FeatureMap), PreprocessError> {
    let chain = SpectrumChain::new(config, cube.bands())?;
    let filtered = median_filter(cube, config.median_radius);
    let raw = extract_labeled(&filtered, labels, meta, classes, excluded)?;
    let ds = raw.try_map_spectra(|s| chain.apply(s))?;
    Ok((ds, chain.feature_map()))
}

/// Preprocesses several images and merges them into one dataset.
pub fn preprocess_images<'a>(
    images: impl IntoIterator<Item = (&'a SpectralCube, &'a LabelMap, &'a ImageMeta)>,
    classes: &[ClassId],
    excluded: &[ClassId],
    config: &PreprocessConfig,
) -> Result<(LabeledDataset, FeatureMap), PreprocessError> {
    let kept: Vec<ClassId> = classes.iter().copied().filter(|c| !excluded.contains(c)).collect();
    let mut merged = LabeledDataset::new(&kept);
    let mut map: Option<FeatureMap> = None;
    for (cube, labels, meta) in images {
        let (ds, m) = preprocess_image(cube, labels, meta, classes, excluded, config)?;
        if map.as_ref().is_some_and(|prev| *prev != m) {
            return Err(DataError::DimensionMismatch(format!("image '{}' has a different band count", meta.image_id)).into());
        }
        map = Some(m);
        merged.extend(ds)?;
    }
    let map = map.ok_or_else(|| DataError::Inconsistent("no images given".into()))?;
    Ok((merged, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn radius_zero_is_identity() {
        let cube = SpectralCube::new(2, 3, 2, (0..12).map(|i| (i * 7 % 5) as f32).collect()).unwrap();
        assert_eq!(median_filter(&cube, 0), cube);
    }

    #[test]
    fn center_of_one_to_nine() {
        let cube = SpectralCube::new(3, 3, 1, vec![9.0, 1.0, 8.0, 2.0, 7.0, 3.0, 6.0, 4.0, 5.0]).unwrap();
        let out = median_filter(&cube, 1);
        assert_eq!(out.get(1, 1, 0), 5.0);
        // Corner window {9,1,2,7} has even size.
        assert_eq!(out.get(0, 0, 0), 4.5);
    }

    /// Independent oracle: sort every clipped window and take the middle.
    fn brute_median_filter(cube: &SpectralCube, radius: i64) -> Vec<f32> {
        let (rows, cols, bands) = (cube.rows() as i64, cube.cols() as i64, cube.bands());
        let mut out = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                for b in 0..bands {
                    let mut w = Vec::new();
                    for dr in -radius..=radius {
                        for dc in -radius..=radius {
                            let (rr, cc) = (r + dr, c + dc);
                            if rr >= 0 && rr < rows && cc >= 0 && cc < cols {
                                w.push(cube.get(rr as usize, cc as usize, b) as f64);
                            }
                        }
                    }
                    w.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let n = w.len();
                    let m = if n % 2 == 1 { w[n / 2] } else { (w[n / 2 - 1] + w[n / 2]) / 2.0 };
                    out.push(m as f32);
                }
            }
        }
        out
    }

    #[test]
    fn matches_window_oracle() {
        let mut state = 12345u64;
        let values: Vec<f32> = (0..5 * 5 * 4)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) % 1000) as f32 / 100.0
            })
            .collect();
        let cube = SpectralCube::new(5, 5, 4, values).unwrap();
        for radius in 1..=2 {
            assert_eq!(median_filter(&cube, radius).values(), &brute_median_filter(&cube, radius as i64)[..]);
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(median_normalize(&[2.0, 4.0, 6.0]).unwrap(), vec![0.5, 1.0, 1.5]);
        assert_eq!(median_normalize(&[-3.0, -3.0, -3.0]).unwrap(), vec![1.0; 3]);
        assert_eq!(median_normalize(&[0.0, 0.0, 5.0]), Err(PreprocessError::ZeroMedian));
        // Even length: median of [1,2,3,4] is 2.5.
        assert_eq!(median_normalize(&[4.0, 1.0, 3.0, 2.0]).unwrap()[0], 4.0 / 2.5);
    }

    #[test]
    fn default_removal_leaves_113() {
        let spectrum: Vec<f64> = (0..128).map(|i| i as f64).collect();
        let (out, map) = remove_bands(&spectrum, &default_removed_bands()).unwrap();
        assert_eq!(out.len(), 113);
        assert_eq!(default_removed_bands().len(), 15);
        assert_eq!(map.original_indices()[0], 5);
        assert_eq!(map.new_index(51), Some(43));
        assert_eq!(map.new_index(49), None);
    }

    #[test]
    fn removal_edge_cases() {
        let (out, _) = remove_bands(&[7.0, 8.0, 9.0], &[]).unwrap();
        assert_eq!(out, vec![7.0, 8.0, 9.0]);
        let (out, _) = remove_bands(&[7.0, 8.0, 9.0], &[0]).unwrap();
        assert_eq!(out, vec![8.0, 9.0]);
        assert_eq!(
            remove_bands(&[7.0, 8.0, 9.0], &[3]).unwrap_err(),
            PreprocessError::BandOutOfRange { index: 3, bands: 3 }
        );
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(derivative(&[1.0, 3.0, 6.0]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(derivative(&[4.0; 5]).unwrap(), vec![0.0; 4]);
        let ramp: Vec<f64> = (0..113).map(|b| 0.25 * b as f64 + 3.0).collect();
        let d = derivative(&ramp).unwrap();
        assert_eq!(d.len(), 112);
        assert!(d.iter().all(|&v| v == 0.25));
        assert_eq!(derivative(&[1.0]), Err(PreprocessError::TooFewBands(1)));
    }

    #[test]
    fn chain_dimensions_and_feature_map() {
        let chain = SpectrumChain::new(&PreprocessConfig::default(), 128).unwrap();
        assert_eq!(chain.output_len(), 112);
        let spectrum: Vec<f64> = (0..128).map(|i| 1.0 + (i as f64 * 0.1).sin().abs()).collect();
        assert_eq!(chain.apply(&spectrum).unwrap().len(), 112);
        let fm = chain.feature_map();
        assert_eq!(fm.len(), 112);
        assert_eq!(fm.original(0), 5);
        assert_eq!(fm.original(111), 119);

        let no_deriv = PreprocessConfig {
            apply_derivative: false,
            ..PreprocessConfig::default()
        };
        assert_eq!(SpectrumChain::new(&no_deriv, 128).unwrap().output_len(), 113);
    }

    #[test]
    fn config_needs_two_bands() {
        let cfg = PreprocessConfig {
            removed_bands: vec![0, 1],
            ..PreprocessConfig::default()
        };
        assert_eq!(cfg.validate(3), Err(PreprocessError::TooFewBands(1)));
    }

    proptest! {
        #[test]
        fn filtered_values_bounded_by_window(seed in any::<u64>(), radius in 0usize..3) {
            let mut state = seed | 1;
            let values: Vec<f32> = (0..4 * 6 * 2)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state % 10_000) as f32 / 100.0
                })
                .collect();
            let cube = SpectralCube::new(4, 6, 2, values).unwrap();
            let out = median_filter(&cube, radius);
            for r in 0..4usize {
                for c in 0..6usize {
                    for b in 0..2 {
                        let mut lo = f32::INFINITY;
                        let mut hi = f32::NEG_INFINITY;
                        for rr in r.saturating_sub(radius)..=(r + radius).min(3) {
                            for cc in c.saturating_sub(radius)..=(c + radius).min(5) {
                                lo = lo.min(cube.get(rr, cc, b));
                                hi = hi.max(cube.get(rr, cc, b));
                            }
                        }
                        let v = out.get(r, c, b);
                        prop_assert!(v >= lo && v <= hi);
                    }
                }
            }
        }

        #[test]
        fn normalize_is_scale_invariant(xs in prop::collection::vec(0.01f64..10.0, 1..40), k in 0.01f64..100.0) {
            let a = median_normalize(&xs).unwrap();
            let scaled: Vec<f64> = xs.iter().map(|x| x * k).collect();
            let b = median_normalize(&scaled).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
            }
        }

        #[test]
        fn derivative_is_translation_invariant(xs in prop::collection::vec(-10.0f64..10.0, 2..40), c in -5.0f64..5.0) {
            let a = derivative(&xs).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let b = derivative(&shifted).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
        }
    }
}
