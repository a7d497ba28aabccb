use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, BenchConfig};
use super::{from_json, read_file, to_json, write_file};
use crate::error::{Error, Result};
use crate::lie::{exp_map, RigidTransform, Twist};
use crate::scene::{generate_scene, read_scene, sample_perturbation, write_scene, Scene};

const MANIFEST_FILE: &str = "manifest.json";
const SCENE_DIR: &str = "scenes";

/// One benchmark sample: a scene and the perturbation of its initial extrinsic.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub scene: Scene,
    pub perturbation: Twist,
}

impl Sample {
    /// `T0 = exp(perturbation) * T_gt`.
    pub fn initial_extrinsic(&self) -> Result<RigidTransform> {
        Ok(exp_map(&self.perturbation)?.compose(&self.scene.gt_extrinsic))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: u32,
    pub seed: u64,
    pub num_samples: usize,
    pub dataset_hash: String,
    pub scenes: Vec<String>,
}

fn scene_file(i: usize) -> String {
    format!("{SCENE_DIR}/scene_{i:05}.jsonl")
}

fn make_sample(config: &BenchConfig, i: usize) -> Result<Sample> {
    let id = i as u64;
    let seed = config.seed.to_le_bytes();
    let mut scene_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[b"scene", &seed, &id.to_le_bytes()]));
    let mut pert_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[b"perturbation", &seed, &id.to_le_bytes()]));
    Ok(Sample {
        scene: generate_scene(&config.scene, id, &mut scene_rng)?,
        perturbation: sample_perturbation(&config.perturbation, &mut pert_rng)?,
    })
}

/// Generates every sample in memory, in sample order.
pub fn generate_samples(config: &BenchConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    (0..config.num_samples)
        .into_par_iter()
        .map(|i| make_sample(config, i))
        .collect()
}

/// Writes `num_samples` scene files and a manifest under `dir`.
pub fn cmd_simulate(config: &BenchConfig, dir: &Path) -> Result<DatasetManifest> {
    let samples = generate_samples(config)?;
    let mut scenes = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = scene_file(i);
        let mut buf = Vec::new();
        write_scene(&s.scene, Some(&s.perturbation), &mut buf)?;
        write_file(&dir.join(&name), &buf)?;
        scenes.push(name);
    }
    let manifest = DatasetManifest {
        schema: config.schema,
        seed: config.seed,
        num_samples: config.num_samples,
        dataset_hash: config.dataset_hash(),
        scenes,
    };
    write_file(&dir.join(MANIFEST_FILE), (to_json(&manifest)? + "\n").as_bytes())?;
    Ok(manifest)
}

/// Reads a dataset written by [`cmd_simulate`], checking it was produced
/// from a configuration with the same dataset fields.
pub fn load_dataset(config: &BenchConfig, dir: &Path) -> Result<(DatasetManifest, Vec<Sample>)> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: DatasetManifest = from_json(&read_file(&path)?, &path)?;
    if manifest.dataset_hash != config.dataset_hash() {
        return Err(Error::Config(format!(
            "dataset at {} was generated from a different configuration",
            dir.display()
        )));
    }
    if manifest.scenes.len() != manifest.num_samples {
        return Err(Error::Config(format!("manifest at {} lists the wrong number of scenes", dir.display())));
    }
    let samples = manifest
        .scenes
        .par_iter()
        .enumerate()
        .map(|(i, name)| {
            let path = dir.join(name);
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let (scene, perturbation) = read_scene(BufReader::new(file))?;
            let perturbation = perturbation
                .ok_or_else(|| Error::Config(format!("{} carries no perturbation", path.display())))?;
            if scene.id != i as u64 {
                return Err(Error::Config(format!("{} holds scene {}, expected {i}", path.display(), scene.id)));
            }
            Ok(Sample { scene, perturbation })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::SurrogateSpec;

    fn small_config() -> BenchConfig {
        BenchConfig {
            num_samples: 3,
            surrogates: vec![SurrogateSpec::oracle()],
            ..BenchConfig::default()
        }
    }

    #[test]
    fn simulate_then_load_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let manifest = cmd_simulate(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.scenes.len(), 3);
        let (_, loaded) = load_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(loaded, generate_samples(&cfg).unwrap());
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        cmd_simulate(&cfg, dir.path()).unwrap();
        let other = BenchConfig { seed: 9, ..cfg };
        assert!(matches!(load_dataset(&other, dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn missing_dataset_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(&small_config(), dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn samples_differ_and_replay() {
        let cfg = small_config();
        let a = generate_samples(&cfg).unwrap();
        assert_ne!(a[0].perturbation, a[1].perturbation);
        assert_eq!(a, generate_samples(&cfg).unwrap());
    }
}
