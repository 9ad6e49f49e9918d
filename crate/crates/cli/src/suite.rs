//! Image directories: `<id>.cube` + `<id>.labels` (or `<id>.csv`) with an
//! `<id>.json` sidecar per image.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use hsi_core::data::{ImageMeta, LabelMap, SpectralCube};
use hsi_core::io::{load_csv, load_cube, load_labels, write_csv, write_cube_binary, write_labels_binary, CubeFormat};
use hsi_core::preprocess::FeatureMap;
use hsi_core::synth::Sidecar;

/// Sidecar on disk. `features` is present once a suite has been preprocessed
/// and lists the original band of every feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSidecar {
    #[serde(flatten)]
    pub image: Sidecar,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<usize>>,
}

pub struct SuiteImage {
    pub sidecar: ImageSidecar,
    pub cube: SpectralCube,
    pub labels: LabelMap,
}

impl SuiteImage {
    pub fn meta(&self) -> ImageMeta {
        ImageMeta {
            image_id: self.sidecar.image.image_id.clone(),
            scene: self.sidecar.image.scene,
            day: self.sidecar.image.day,
        }
    }

    /// Files describing this image, as `(file name, contents)`.
    pub fn files(&self, csv: bool) -> Result<Vec<(String, Vec<u8>)>> {
        let id = &self.sidecar.image.image_id;
        let mut files = Vec::new();
        if csv {
            let mut buf = Vec::new();
            write_csv(&self.cube, &self.labels, &mut buf)?;
            files.push((format!("{id}.csv"), buf));
        } else {
            let mut cube = Vec::new();
            write_cube_binary(&self.cube, &mut cube)?;
            files.push((format!("{id}.cube"), cube));
            let mut labels = Vec::new();
            write_labels_binary(&self.labels, &mut labels)?;
            files.push((format!("{id}.labels"), labels));
        }
        let mut json = serde_json::to_vec_pretty(&self.sidecar)?;
        json.push(b'\n');
        files.push((format!("{id}.json"), json));
        Ok(files)
    }
}

pub struct Suite {
    pub images: Vec<SuiteImage>,
}

impl Suite {
    /// Loads every image with a sidecar in `dir`, ordered by scene, day and id.
    pub fn load(dir: &Path) -> Result<Self> {
        let entries = fs::read_dir(dir).with_context(|| format!("cannot read input directory {}", dir.display()))?;
        let mut sidecars: Vec<PathBuf> = Vec::new();
        for entry in entries {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                sidecars.push(path);
            }
        }
        if sidecars.is_empty() {
            bail!("no image sidecars (*.json) in {}", dir.display());
        }
        let mut images = sidecars.iter().map(|p| load_image(dir, p)).collect::<Result<Vec<_>>>()?;
        images.sort_by(|a, b| {
            let key = |i: &SuiteImage| (i.sidecar.image.scene, i.sidecar.image.day, i.sidecar.image.image_id.clone());
            key(a).cmp(&key(b))
        });
        let preprocessed = images[0].sidecar.features.is_some();
        if images.iter().any(|i| i.sidecar.features.is_some() != preprocessed) {
            bail!("{} mixes raw and preprocessed images", dir.display());
        }
        Ok(Self { images })
    }

    pub fn is_preprocessed(&self) -> bool {
        self.images[0].sidecar.features.is_some()
    }

    /// Feature map shared by all images of a preprocessed suite.
    pub fn feature_map(&self) -> Result<Option<FeatureMap>> {
        let Some(first) = &self.images[0].sidecar.features else { return Ok(None) };
        if let Some(other) = self.images.iter().find(|i| i.sidecar.features.as_ref() != Some(first)) {
            bail!("image '{}' has a different feature list", other.sidecar.image.image_id);
        }
        Ok(Some(FeatureMap::from_original(first.clone())))
    }
}

fn load_image(dir: &Path, sidecar_path: &Path) -> Result<SuiteImage> {
    let text = fs::read_to_string(sidecar_path).with_context(|| format!("cannot read {}", sidecar_path.display()))?;
    let sidecar: ImageSidecar =
        serde_json::from_str(&text).with_context(|| format!("malformed sidecar {}", sidecar_path.display()))?;
    let id = &sidecar.image.image_id;
    let csv = dir.join(format!("{id}.csv"));
    let (cube, labels) = if csv.exists() {
        load_csv(&csv)?
    } else {
        let cube = load_cube(&dir.join(format!("{id}.cube")), CubeFormat::Binary)?;
        let labels = load_labels(&dir.join(format!("{id}.labels")))?;
        (cube, labels)
    };
    let s = &sidecar.image;
    if (cube.rows(), cube.cols(), cube.bands()) != (s.rows, s.cols, s.bands) {
        bail!(
            "image '{id}': sidecar says {}x{}x{}, cube is {}x{}x{}",
            s.rows,
            s.cols,
            s.bands,
            cube.rows(),
            cube.cols(),
            cube.bands()
        );
    }
    if let Some(f) = &sidecar.features {
        if f.len() != cube.bands() {
            bail!("image '{id}': {} features listed for {} bands", f.len(), cube.bands());
        }
    }
    Ok(SuiteImage { sidecar, cube, labels })
}

/// Files staged in memory and written together. If any write fails the ones
/// already written are removed.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, contents: Vec<u8>) {
        self.files.push((name.into(), contents));
    }

    pub fn extend(&mut self, files: Vec<(String, Vec<u8>)>) {
        self.files.extend(files);
    }

    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let mut written = Vec::new();
        for (name, contents) in &self.files {
            let path = dir.join(name);
            let tmp = dir.join(format!(".{name}.tmp"));
            let result = fs::write(&tmp, contents).and_then(|_| fs::rename(&tmp, &path));
            if let Err(e) = result {
                let _ = fs::remove_file(&tmp);
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                if created_dir {
                    let _ = fs::remove_dir(dir);
                }
                return Err(e).with_context(|| format!("cannot write {}", path.display()));
            }
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hsi_core::synth::{generate_suite, SceneRecipe};

    fn small_suite() -> Vec<SuiteImage> {
        let recipe = SceneRecipe { rows: 12, cols: 12, bands: 20, ..SceneRecipe::default() };
        generate_suite(&recipe, 1)
            .unwrap()
            .into_iter()
            .map(|img| SuiteImage {
                sidecar: ImageSidecar { image: img.sidecar(), features: None },
                cube: img.cube,
                labels: img.labels,
            })
            .collect()
    }

    #[test]
    fn round_trip_binary_and_csv() {
        for csv in [false, true] {
            let dir = tempfile::tempdir().unwrap();
            let images = small_suite();
            let mut out = Outputs::default();
            for img in &images {
                out.extend(img.files(csv).unwrap());
            }
            out.commit(dir.path()).unwrap();
            let loaded = Suite::load(dir.path()).unwrap();
            assert_eq!(loaded.images.len(), images.len());
            for img in &images {
                let back = loaded.images.iter().find(|i| i.sidecar == img.sidecar).unwrap();
                assert_eq!(back.cube.values(), img.cube.values());
                assert_eq!((back.cube.rows(), back.cube.cols(), back.cube.bands()), (img.cube.rows(), img.cube.cols(), img.cube.bands()));
                assert_eq!(back.labels, img.labels);
            }
            assert!(!loaded.is_preprocessed());
        }
    }

    #[test]
    fn sidecar_shape_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = small_suite().remove(0);
        img.sidecar.image.bands += 1;
        let mut out = Outputs::default();
        out.extend(img.files(false).unwrap());
        out.commit(dir.path()).unwrap();
        let err = Suite::load(dir.path()).err().unwrap();
        assert!(err.to_string().contains("sidecar says"));
    }
}
