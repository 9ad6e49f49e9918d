//! Seeded synthetic scenes shaped like the blood dataset: four Frame images on a
//! white background and three Comparison images on mixed backgrounds, with class
//! spectra that drift as the samples age.
//!
//! Pixel model: `L(r, c) * (a * E_class + (1 - a) * B(r, c)) + noise`, where `L` is
//! a smooth illumination field and `a` a per-pixel mixing coefficient.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, Day, FeatureMatrix, ImageMeta, LabelMap, Scene, SpectralCube, DEFAULT_CLASSES};
use crate::seed;

/// Gaussian bump truncated at three widths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

impl Bump {
    pub fn value(&self, band: f64) -> f64 {
        let z = (band - self.center) / self.width;
        if z.abs() > 3.0 {
            0.0
        } else {
            self.amplitude * (-0.5 * z * z).exp()
        }
    }

    /// Bands where the bump is non-zero.
    pub fn support(&self, bands: usize) -> std::ops::Range<usize> {
        let lo = (self.center - 3.0 * self.width).ceil().max(0.0) as usize;
        let hi = ((self.center + 3.0 * self.width).floor() + 1.0).clamp(0.0, bands as f64) as usize;
        lo.min(hi)..hi
    }

    fn shifted(&self, by: f64) -> Self {
        Self {
            center: self.center + by,
            ..*self
        }
    }
}

/// Sum of bumps sampled on `bands` integer positions.
pub fn render(bumps: &[Bump], bands: usize) -> Vec<f64> {
    (0..bands)
        .map(|b| bumps.iter().map(|k| k.value(b as f64)).sum())
        .collect()
}

/// Recipe for one scene. Fields that do not apply to a scene kind are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub bands: usize,
    pub classes: Vec<ClassId>,
    /// Classes placed in Frame scenes only.
    pub frame_only_classes: Vec<ClassId>,
    pub rows: usize,
    pub cols: usize,
    pub scene: Scene,
    pub day: Day,
    pub endmember_seed: u64,
    /// Background materials tiled across Comparison scenes.
    pub background_count: usize,
    /// Scale of the structured part of Comparison backgrounds.
    pub background_contrast: f64,
    pub alpha: (f64, f64),
    /// Range of the multiplicative illumination field.
    pub illumination: (f64, f64),
    /// Control points per side of the illumination field; fewer is smoother.
    pub illumination_grid: usize,
    pub noise_std: f64,
    /// Signature shift in bands per elapsed day.
    pub drift: f64,
}

impl Default for SceneRecipe {
    fn default() -> Self {
        Self {
            bands: 128,
            classes: DEFAULT_CLASSES.to_vec(),
            frame_only_classes: vec![4],
            rows: 40,
            cols: 40,
            scene: Scene::Frame,
            day: Day::D1,
            endmember_seed: 0,
            background_count: 3,
            background_contrast: 1.2,
            alpha: (0.5, 0.9),
            illumination: (0.6, 1.4),
            illumination_grid: 3,
            noise_std: 0.01,
            drift: 0.15,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid scene recipe: {0}")]
pub struct RecipeError(pub String);

impl SceneRecipe {
    pub fn validate(&self) -> Result<(), RecipeError> {
        let bad = |m: &str| Err(RecipeError(m.into()));
        if self.bands < 16 {
            return bad("at least 16 bands are required");
        }
        if self.classes.is_empty() {
            return bad("no classes");
        }
        if !(self.alpha.0 > 0.0 && self.alpha.0 <= self.alpha.1 && self.alpha.1 <= 1.0) {
            return bad("alpha range must lie in (0, 1]");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise std must be non-negative");
        }
        if !(self.illumination.0 > 0.0 && self.illumination.0 <= self.illumination.1) {
            return bad("illumination range must be positive");
        }
        if self.illumination_grid < 2 {
            return bad("illumination grid needs at least 2 control points");
        }
        if self.scene == Scene::Comparison && self.background_count < 3 {
            return bad("Comparison scenes need at least 3 backgrounds");
        }
        let (cell_rows, cell_cols) = self.cell_size();
        if cell_rows < 3 || cell_cols < 3 {
            return bad("image too small for the class layout");
        }
        Ok(())
    }

    fn placed_classes(&self) -> Vec<ClassId> {
        let mut c = self.classes.clone();
        if self.scene == Scene::Frame {
            c.extend(self.frame_only_classes.iter().filter(|k| !self.classes.contains(k)));
        }
        c
    }

    fn layout(&self) -> (usize, usize) {
        let n = self.classes.len() + self.frame_only_classes.len();
        let grid_rows = (n as f64).sqrt().floor().max(1.0) as usize;
        (grid_rows, n.div_ceil(grid_rows))
    }

    fn cell_size(&self) -> (usize, usize) {
        let (gr, gc) = self.layout();
        (self.rows / gr, self.cols / gc)
    }
}

/// Labeled rectangle `[row0, row1) x [col0, col1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blob {
    pub class: ClassId,
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

impl Blob {
    pub fn area(&self) -> usize {
        (self.rows.1 - self.rows.0) * (self.cols.1 - self.cols.0)
    }

    fn contains(&self, r: usize, c: usize) -> bool {
        (self.rows.0..self.rows.1).contains(&r) && (self.cols.0..self.cols.1).contains(&c)
    }
}

/// Class blobs of a scene: one per class, each a grid cell minus a 1-pixel margin.
pub fn blobs(recipe: &SceneRecipe) -> Vec<Blob> {
    let (_, gc) = recipe.layout();
    let (h, w) = recipe.cell_size();
    recipe
        .placed_classes()
        .into_iter()
        .enumerate()
        .map(|(i, class)| {
            let (r, c) = (i / gc, i % gc);
            Blob {
                class,
                rows: (r * h + 1, (r + 1) * h - 1),
                cols: (c * w + 1, (c + 1) * w - 1),
            }
        })
        .collect()
}

/// Per-class bumps with a designated signature pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Endmembers {
    pub classes: Vec<ClassId>,
    pub bumps: Vec<Vec<Bump>>,
    /// Indices into `bumps[class]` of the signature pair.
    pub signature: Vec<[usize; 2]>,
    pub bands: usize,
}

impl Endmembers {
    fn shift(day: Day, drift: f64) -> f64 {
        drift * (day.elapsed() - 1.0)
    }

    /// Noise-free class spectra on `day`.
    pub fn spectra(&self, day: Day, drift: f64) -> Vec<Vec<f64>> {
        let s = Self::shift(day, drift);
        self.bumps
            .iter()
            .map(|bs| render(&bs.iter().map(|b| b.shifted(s)).collect::<Vec<_>>(), self.bands))
            .collect()
    }

    pub fn spectrum(&self, class: ClassId, day: Day, drift: f64) -> Option<Vec<f64>> {
        let i = self.classes.iter().position(|&c| c == class)?;
        let s = Self::shift(day, drift);
        Some(render(&self.bumps[i].iter().map(|b| b.shifted(s)).collect::<Vec<_>>(), self.bands))
    }

    /// Bands inside any signature bump's support on `day`, ascending.
    pub fn informative_bands(&self, day: Day, drift: f64) -> Vec<usize> {
        let s = Self::shift(day, drift);
        let mut out: Vec<usize> = self
            .bumps
            .iter()
            .zip(&self.signature)
            .flat_map(|(bs, sig)| sig.iter().flat_map(move |&k| bs[k].shifted(s).support(self.bands)))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Every class shares a broad base bump; classes differ by a signature pair
/// placed in a class-specific stretch of the band axis, plus 0-2 minor bumps.
pub fn generate_endmembers(recipe: &SceneRecipe, seed: u64) -> Endmembers {
    let mut rng = seed::rng(seed, &[0xE4D]);
    let bands = recipe.bands as f64;
    let classes = recipe.placed_classes_all();
    let k = classes.len() as f64;
    let base = Bump {
        center: bands * rng.random_range(0.55..0.65),
        width: bands * 0.15,
        amplitude: rng.random_range(0.6..0.8),
    };
    let mut bumps = Vec::new();
    let mut signature = Vec::new();
    for i in 0..classes.len() {
        // Signature pair inside this class's stretch, ~7 bands apart.
        let lo = bands * (0.1 + 0.75 * i as f64 / k);
        let span = bands * 0.75 / k;
        let c1 = lo + rng.random_range(0.1..0.3) * span;
        let sig1 = Bump {
            center: c1,
            width: rng.random_range(1.5..2.5),
            amplitude: rng.random_range(0.3..0.5),
        };
        let sig2 = Bump {
            center: c1 + rng.random_range(5.0..8.0),
            width: rng.random_range(1.5..2.5),
            amplitude: rng.random_range(0.3..0.5),
        };
        let mut bs = vec![base, sig1, sig2];
        for _ in 0..rng.random_range(0..=1) {
            bs.push(Bump {
                center: rng.random_range(0.0..bands),
                width: rng.random_range(3.0..8.0),
                amplitude: rng.random_range(0.05..0.15),
            });
        }
        bumps.push(bs);
        signature.push([1, 2]);
    }
    Endmembers {
        classes,
        bumps,
        signature,
        bands: recipe.bands,
    }
}

impl SceneRecipe {
    /// All classes that may appear in any scene of a suite.
    fn placed_classes_all(&self) -> Vec<ClassId> {
        let mut c = self.classes.clone();
        c.extend(self.frame_only_classes.iter().filter(|k| !self.classes.contains(k)));
        c
    }
}

/// Background spectra: flat white for Frame scenes; for Comparison scenes a
/// random flat level plus a few structured bumps per material.
pub fn generate_backgrounds(recipe: &SceneRecipe, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let bands = recipe.bands;
    match recipe.scene {
        Scene::Frame => vec![vec![1.0; bands]],
        Scene::Comparison => (0..recipe.background_count)
            .map(|_| {
                let level = rng.random_range(0.05..0.6);
                let bumps: Vec<Bump> = (0..rng.random_range(3..=5))
                    .map(|_| Bump {
                        center: rng.random_range(0.0..bands as f64),
                        width: rng.random_range(3.0..6.0),
                        amplitude: recipe.background_contrast * rng.random_range(0.3..0.8),
                    })
                    .collect();
                render(&bumps, bands).into_iter().map(|v| level + v).collect()
            })
            .collect(),
    }
}

/// Bilinear interpolation of a coarse random grid.
fn illumination_field(recipe: &SceneRecipe, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g = recipe.illumination_grid;
    let (lo, hi) = recipe.illumination;
    let ctrl: Vec<f64> = (0..g * g)
        .map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) })
        .collect();
    let mut field = Vec::with_capacity(recipe.rows * recipe.cols);
    let scale = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 * (g - 1) as f64 } else { 0.0 };
    for r in 0..recipe.rows {
        for c in 0..recipe.cols {
            let (y, x) = (scale(r, recipe.rows), scale(c, recipe.cols));
            let (y0, x0) = ((y.floor() as usize).min(g - 2), (x.floor() as usize).min(g - 2));
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            let at = |i: usize, j: usize| ctrl[i * g + j];
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
            let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
            field.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    field
}

/// One generated image with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticImage {
    pub cube: SpectralCube,
    pub labels: LabelMap,
    pub meta: ImageMeta,
    pub informative_bands: Vec<usize>,
}

/// Metadata sidecar written next to each generated image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub image_id: String,
    pub scene: Scene,
    pub day: Day,
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub informative_bands: Vec<usize>,
}

impl SyntheticImage {
    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            image_id: self.meta.image_id.clone(),
            scene: self.meta.scene,
            day: self.meta.day,
            rows: self.cube.rows(),
            cols: self.cube.cols(),
            bands: self.cube.bands(),
            informative_bands: self.informative_bands.clone(),
        }
    }
}

pub fn wavelengths(bands: usize) -> Vec<f64> {
    (0..bands)
        .map(|b| 377.0 + (1046.0 - 377.0) * b as f64 / (bands - 1).max(1) as f64)
        .collect()
}

pub fn image_id(scene: Scene, day: Day) -> String {
    let prefix = match scene {
        Scene::Frame => "F",
        Scene::Comparison => "E",
    };
    format!("{prefix}{day}")
}

/// Generates one scene. Background materials of Comparison scenes are tiled as
/// vertical stripes.
pub fn generate_scene(recipe: &SceneRecipe, seed: u64) -> Result<SyntheticImage, RecipeError> {
    recipe.validate()?;
    let endmembers = generate_endmembers(recipe, recipe.endmember_seed);
    let class_spectra = endmembers.spectra(recipe.day, recipe.drift);
    let mut rng = seed::rng(seed, &[0x5CE]);
    let backgrounds = generate_backgrounds(recipe, &mut rng);
    let light = illumination_field(recipe, &mut rng);
    let blobs = blobs(recipe);
    let (rows, cols, bands) = (recipe.rows, recipe.cols, recipe.bands);

    let mut labels = vec![0; rows * cols];
    let mut alphas = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            if let Some(b) = blobs.iter().find(|b| b.contains(r, c)) {
                labels[r * cols + c] = b.class;
                alphas[r * cols + c] = if recipe.alpha.0 == recipe.alpha.1 {
                    recipe.alpha.0
                } else {
                    rng.random_range(recipe.alpha.0..=recipe.alpha.1)
                };
            }
        }
    }
    let noise_seed = seed::derive(seed, &[0x401]);
    let stripe = cols.div_ceil(backgrounds.len());
    let values: Vec<f32> = (0..rows * cols)
        .into_par_iter()
        .flat_map_iter(|p| {
            let mut prng = seed::rng(noise_seed, &[p as u64]);
            let normal = Normal::new(0.0, recipe.noise_std.max(f64::MIN_POSITIVE)).expect("finite std");
            let bg = &backgrounds[(p % cols) / stripe];
            let endmember = endmembers
                .classes
                .iter()
                .position(|&k| k == labels[p])
                .map(|i| &class_spectra[i]);
            let (a, l) = (alphas[p], light[p]);
            (0..bands)
                .map(|b| {
                    let pure = match endmember {
                        Some(e) => a * e[b] + (1.0 - a) * bg[b],
                        None => bg[b],
                    };
                    let n = if recipe.noise_std > 0.0 { normal.sample(&mut prng) } else { 0.0 };
                    (l * pure + n) as f32
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let cube = SpectralCube::new(rows, cols, bands, values)
        .and_then(|c| c.with_wavelengths(wavelengths(bands)))
        .map_err(|e| RecipeError(e.to_string()))?;
    let labels = LabelMap::new(rows, cols, labels).map_err(|e| RecipeError(e.to_string()))?;
    Ok(SyntheticImage {
        cube,
        labels,
        meta: ImageMeta {
            image_id: image_id(recipe.scene, recipe.day),
            scene: recipe.scene,
            day: recipe.day,
        },
        informative_bands: endmembers.informative_bands(recipe.day, recipe.drift),
    })
}

/// Scene kinds and days of a suite, in generation order.
pub const SUITE_LAYOUT: [(Scene, Day); 7] = [
    (Scene::Frame, Day::D1),
    (Scene::Frame, Day::D1a),
    (Scene::Frame, Day::D7),
    (Scene::Frame, Day::D21),
    (Scene::Comparison, Day::D1),
    (Scene::Comparison, Day::D7),
    (Scene::Comparison, Day::D21),
];

/// Four Frame and three Comparison images sharing endmembers.
pub fn generate_suite(recipe: &SceneRecipe, seed: u64) -> Result<Vec<SyntheticImage>, RecipeError> {
    let endmember_seed = seed::derive(seed, &[0]);
    SUITE_LAYOUT
        .par_iter()
        .enumerate()
        .map(|(i, &(scene, day))| {
            let r = SceneRecipe {
                scene,
                day,
                endmember_seed,
                background_count: if scene == Scene::Frame { 1 } else { recipe.background_count },
                ..recipe.clone()
            };
            generate_scene(&r, seed::derive(seed, &[1, i as u64]))
        })
        .collect()
}

/// Feature matrix where only `informative` of `features` columns carry class
/// signal. Class `i < informative` is shifted by `separation` along informative
/// feature `i`; the last class sits at the origin. Returns the matrix, labels and
/// informative column indices.
pub fn informative_features(
    features: usize,
    informative: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> (FeatureMatrix, Vec<ClassId>, Vec<usize>) {
    assert!(informative >= 1 && informative <= features);
    let mut rng = seed::rng(seed, &[0x1F]);
    let mut columns: Vec<usize> = rand::seq::index::sample(&mut rng, features, informative).into_vec();
    columns.sort_unstable();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n_classes = informative + 1;
    let mut data = Vec::with_capacity(n_classes * per_class * features);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for class in 0..n_classes {
        for _ in 0..per_class {
            let start = data.len();
            data.extend((0..features).map(|_| normal.sample(&mut rng)));
            if class < informative {
                data[start + columns[class]] += separation;
            }
            labels.push(class as ClassId + 1);
        }
    }
    let x = FeatureMatrix::new(n_classes * per_class, features, data).expect("consistent shape");
    (x, labels, columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(scene: Scene) -> SceneRecipe {
        SceneRecipe {
            scene,
            noise_std: 0.0,
            illumination: (1.0, 1.0),
            alpha: (1.0, 1.0),
            ..SceneRecipe::default()
        }
    }

    #[test]
    fn noise_free_pure_pixels_equal_endmembers() {
        let recipe = SceneRecipe {
            day: Day::D7,
            ..quiet(Scene::Comparison)
        };
        let img = generate_scene(&recipe, 3).unwrap();
        let em = generate_endmembers(&recipe, recipe.endmember_seed);
        for r in 0..recipe.rows {
            for c in 0..recipe.cols {
                let label = img.labels.get(r, c);
                if label == 0 {
                    continue;
                }
                let e = em.spectrum(label, Day::D7, recipe.drift).unwrap();
                let px: Vec<f32> = e.iter().map(|&v| v as f32).collect();
                assert_eq!(img.cube.pixel(r, c), &px[..]);
            }
        }
    }

    #[test]
    fn zero_drift_keeps_endmembers_fixed() {
        let em = generate_endmembers(&SceneRecipe::default(), 5);
        let d1 = em.spectra(Day::D1, 0.0);
        for day in Day::ALL {
            assert_eq!(em.spectra(day, 0.0), d1);
        }
        assert_ne!(em.spectra(Day::D21, 0.5), d1);
        assert!(d1.iter().all(|s| s.len() == 128));
    }

    #[test]
    fn disjoint_supports_are_orthogonal() {
        let a = [Bump { center: 10.0, width: 2.0, amplitude: 1.0 }];
        let b = [Bump { center: 30.0, width: 3.0, amplitude: 0.7 }];
        let (ra, rb) = (render(&a, 64), render(&b, 64));
        assert!(a[0].support(64).end <= b[0].support(64).start);
        assert_eq!(ra.iter().zip(&rb).map(|(x, y)| x * y).sum::<f64>(), 0.0);
    }

    #[test]
    fn same_seed_same_scene() {
        let r = SceneRecipe {
            scene: Scene::Comparison,
            ..SceneRecipe::default()
        };
        assert_eq!(generate_scene(&r, 11).unwrap(), generate_scene(&r, 11).unwrap());
        assert_ne!(generate_scene(&r, 11).unwrap().cube, generate_scene(&r, 12).unwrap().cube);
    }

    #[test]
    fn label_counts_match_blob_areas() {
        for scene in [Scene::Frame, Scene::Comparison] {
            let recipe = SceneRecipe {
                scene,
                rows: 31,
                cols: 45,
                ..SceneRecipe::default()
            };
            let img = generate_scene(&recipe, 1).unwrap();
            let hist = img.labels.histogram();
            let blobs = blobs(&recipe);
            let expected_classes = if scene == Scene::Frame { 7 } else { 6 };
            assert_eq!(blobs.len(), expected_classes);
            // Independent count from the blob rectangles.
            for b in &blobs {
                let mut n = 0;
                for r in 0..recipe.rows {
                    for c in 0..recipe.cols {
                        n += usize::from(r >= b.rows.0 && r < b.rows.1 && c >= b.cols.0 && c < b.cols.1);
                    }
                }
                assert_eq!(hist[&b.class], n);
                assert_eq!(b.area(), n);
            }
        }
    }

    #[test]
    fn suite_structure() {
        let suite = generate_suite(&SceneRecipe::default(), 2).unwrap();
        assert_eq!(suite.len(), 7);
        assert_eq!(suite.iter().filter(|s| s.meta.scene == Scene::Frame).count(), 4);
        assert_eq!(suite.iter().filter(|s| s.meta.scene == Scene::Comparison).count(), 3);
        // Frame(1) and Comparison(1) share class spectra.
        assert_eq!(suite[0].informative_bands, suite[4].informative_bands);
        assert!(!suite[0].informative_bands.is_empty());
    }

    #[test]
    fn comparison_needs_three_backgrounds() {
        let r = SceneRecipe {
            scene: Scene::Comparison,
            background_count: 2,
            ..SceneRecipe::default()
        };
        assert!(generate_scene(&r, 0).is_err());
    }

    #[test]
    fn informative_columns_carry_the_signal() {
        let (x, y, cols) = informative_features(40, 5, 30, 3.0, 9);
        assert_eq!((x.rows(), x.cols(), cols.len()), (180, 40, 5));
        let mean = |class: ClassId, col: usize| {
            let rows: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
            rows.iter().map(|&i| x.row(i)[col]).sum::<f64>() / rows.len() as f64
        };
        for (i, &c) in cols.iter().enumerate() {
            assert!(mean(i as ClassId + 1, c) - mean(6, c) > 2.0);
        }
    }
}
