use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wmlab_nn::CounterRng;

use super::{initial_state, render, sample_action, step, EnvConfig, RealAction, VideoClip, CHANNELS};
use crate::digest::{digest_f32s, f32s_to_le_bytes, sha256_hex};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Exec};
use crate::util::{read_json, write_atomic, write_json_atomic};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// One generated episode: frames plus the ground-truth actions that produced
/// them. Frame t+1 is exactly render(step(state_t, action_t)).
#[derive(Clone, Debug)]
pub struct Episode {
    pub clip: VideoClip,
    pub actions: Vec<RealAction>,
    pub seed: u64,
    pub env_config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataGenConfig {
    pub name: String,
    pub n_episodes: usize,
    pub episode_len: usize,
    pub train_frac: f32,
    pub valid_frac: f32,
    pub actions_visible: bool,
    pub seed: u64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        Self {
            name: "base".into(),
            n_episodes: 512,
            episode_len: 12,
            train_frac: 0.8,
            valid_frac: 0.1,
            actions_visible: false,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub seed: u64,
    pub split: Split,
    pub file: String,
    pub digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actions_file: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub name: String,
    /// Digest of everything generation depends on (env + gen config).
    pub config_hash: String,
    pub env_config_hash: String,
    pub env: EnvConfig,
    pub episode_len: usize,
    pub actions_visible: bool,
    pub seed: u64,
    pub episodes: Vec<ManifestEntry>,
}

pub fn env_config_hash(env: &EnvConfig) -> String {
    sha256_hex(&serde_json::to_vec(env).expect("env config serializes"))
}

fn gen_config_hash(env: &EnvConfig, gen: &DataGenConfig) -> String {
    let blob = serde_json::to_vec(&(env, gen)).expect("configs serialize");
    sha256_hex(&blob)
}

fn episode_seed(dataset_seed: u64, index: usize) -> u64 {
    CounterRng::keyed(&[dataset_seed, index as u64]).next_u64()
}

/// Regenerate an episode from its seed alone; bit-exact across runs.
pub fn generate_episode(env: &EnvConfig, seed: u64, episode_len: usize) -> Episode {
    let mut init_rng = CounterRng::keyed(&[seed, 0]);
    let mut state = initial_state(env, &mut init_rng);
    let mut frames = vec![render(&state, env)];
    let mut actions = Vec::with_capacity(episode_len.saturating_sub(1));
    for t in 0..episode_len.saturating_sub(1) {
        // actions keyed by (seed, step) so generation order never matters
        let mut rng = CounterRng::keyed(&[seed, 1 + t as u64]);
        let a = sample_action(env, &mut rng);
        state = step(&state, &a, env).expect("sampled actions are in bounds");
        frames.push(render(&state, env));
        actions.push(a);
    }
    Episode {
        clip: VideoClip::from_frames(&frames),
        actions,
        seed,
        env_config_hash: env_config_hash(env),
    }
}

fn split_of(index: usize, n: usize, gen: &DataGenConfig) -> Split {
    let n_train = (n as f64 * gen.train_frac as f64).round() as usize;
    let n_valid = (n as f64 * gen.valid_frac as f64).round() as usize;
    if index < n_train {
        Split::Train
    } else if index < n_train + n_valid {
        Split::Valid
    } else {
        Split::Test
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    shape: [usize; 4],
    dtype: &'a str,
    seed: u64,
    env_config_hash: &'a str,
}

/// Generate every episode of a dataset into `dir` and write its manifest.
/// Re-running with an identical config is a no-op; a manifest produced by a
/// different config refuses to be overwritten.
pub fn generate_dataset(env: &EnvConfig, gen: &DataGenConfig, dir: &Path, exec: Exec) -> Result<Manifest> {
    env.validate()?;
    if gen.n_episodes == 0 {
        return Err(Error::Config("n_episodes must be >= 1".into()));
    }
    if gen.episode_len < 2 {
        return Err(Error::Config("episode_len must be >= 2".into()));
    }
    let config_hash = gen_config_hash(env, gen);
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() {
        let existing: Manifest = read_json(&manifest_path)?;
        if existing.config_hash == config_hash {
            return Ok(existing);
        }
        return Err(Error::Incompatible(format!(
            "manifest at {} was generated with a different config (hash {} vs {})",
            manifest_path.display(),
            existing.config_hash,
            config_hash
        )));
    }
    fs::create_dir_all(dir)?;

    let n = gen.n_episodes;
    let episodes = map_indexed(exec, n, |i| {
        let seed = episode_seed(gen.seed, i);
        let ep = generate_episode(env, seed, gen.episode_len);
        let bytes = f32s_to_le_bytes(&ep.clip.data);
        (i, ep, bytes)
    });

    let env_hash = env_config_hash(env);
    let mut entries = Vec::with_capacity(n);
    for (i, ep, bytes) in &episodes {
        let file = format!("ep_{i:05}.f32");
        write_atomic(&dir.join(&file), bytes)?;
        let sidecar = Sidecar {
            shape: [ep.clip.t, ep.clip.h, ep.clip.w, CHANNELS],
            dtype: "f32le",
            seed: ep.seed,
            env_config_hash: &env_hash,
        };
        write_json_atomic(&dir.join(format!("ep_{i:05}.json")), &sidecar)?;
        let actions_file = if gen.actions_visible {
            let af = format!("ep_{i:05}.actions.json");
            write_json_atomic(&dir.join(&af), &ep.actions)?;
            Some(af)
        } else {
            None
        };
        entries.push(ManifestEntry {
            id: *i,
            seed: ep.seed,
            split: split_of(*i, n, gen),
            file,
            digest: sha256_hex(bytes),
            actions_file,
        });
    }

    let manifest = Manifest {
        schema_version: 1,
        name: gen.name.clone(),
        config_hash,
        env_config_hash: env_hash,
        env: env.clone(),
        episode_len: gen.episode_len,
        actions_visible: gen.actions_visible,
        seed: gen.seed,
        episodes: entries,
    };
    write_json_atomic(&manifest_path, &manifest)?;
    Ok(manifest)
}

/// Episode store handle; clips are read from disk on demand.
pub struct Dataset {
    pub manifest: Manifest,
    dir: PathBuf,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact(format!("no manifest at {}", manifest_path.display())));
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    Ok(Dataset { manifest, dir: dir.to_path_buf() })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.episodes.is_empty()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.manifest
            .episodes
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn clip(&self, index: usize) -> Result<VideoClip> {
        let entry = &self.manifest.episodes[index];
        let bytes = fs::read(self.dir.join(&entry.file))?;
        let s = self.manifest.env.render_size();
        let t = self.manifest.episode_len;
        let expect = t * s * s * CHANNELS * 4;
        if bytes.len() != expect {
            return Err(Error::Shape(format!(
                "episode {} has {} bytes, expected {expect}",
                entry.id,
                bytes.len()
            )));
        }
        let mut data = Vec::with_capacity(bytes.len() / 4);
        for chunk in bytes.chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        Ok(VideoClip { t, h: s, w: s, data })
    }

    /// Ground-truth actions; an error when the manifest hides them.
    pub fn actions(&self, index: usize) -> Result<Vec<RealAction>> {
        if !self.manifest.actions_visible {
            return Err(Error::ActionsHidden);
        }
        let entry = &self.manifest.episodes[index];
        let file = entry
            .actions_file
            .as_ref()
            .ok_or_else(|| Error::MissingArtifact(format!("episode {} actions file", entry.id)))?;
        read_json(&self.dir.join(file))
    }

    /// Load a whole split into memory for training loops.
    pub fn load_split(&self, split: Split) -> Result<LoadedSplit> {
        let indices = self.split_indices(split);
        let mut clips = Vec::with_capacity(indices.len());
        let mut actions = if self.manifest.actions_visible { Some(Vec::new()) } else { None };
        for &i in &indices {
            clips.push(self.clip(i)?);
            if let Some(acts) = actions.as_mut() {
                acts.push(self.actions(i)?);
            }
        }
        Ok(LoadedSplit { clips, actions })
    }
}

/// A split resident in memory; `actions` is None for action-free manifests.
pub struct LoadedSplit {
    pub clips: Vec<VideoClip>,
    pub actions: Option<Vec<Vec<RealAction>>>,
}

impl LoadedSplit {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

pub fn dataset_digest(manifest: &Manifest) -> String {
    let mut all = String::new();
    for e in &manifest.episodes {
        all.push_str(&e.digest);
    }
    sha256_hex(all.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("wmlab-ds-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn regeneration_is_bit_exact() {
        let env = EnvConfig::default();
        let seed = episode_seed(42, 3);
        let a = generate_episode(&env, seed, 6);
        let b = generate_episode(&env, seed, 6);
        assert_eq!(a.clip.data, b.clip.data);
        assert_eq!(a.actions, b.actions);
        assert_eq!(digest_f32s(&a.clip.data), digest_f32s(&b.clip.data));
    }

    #[test]
    fn frames_follow_step_render_exactly() {
        let env = EnvConfig::default();
        let seed = episode_seed(1, 0);
        let ep = generate_episode(&env, seed, 5);
        let mut rng = CounterRng::keyed(&[seed, 0]);
        let mut state = initial_state(&env, &mut rng);
        assert_eq!(ep.clip.frame_data(0), render(&state, &env).data.as_slice());
        for (t, a) in ep.actions.iter().enumerate() {
            state = step(&state, a, &env).unwrap();
            assert_eq!(ep.clip.frame_data(t + 1), render(&state, &env).data.as_slice());
        }
    }

    #[test]
    fn different_seeds_give_different_digests() {
        let env = EnvConfig::default();
        let a = generate_episode(&env, episode_seed(10, 0), 4);
        let b = generate_episode(&env, episode_seed(11, 0), 4);
        assert_ne!(digest_f32s(&a.clip.data), digest_f32s(&b.clip.data));
    }

    #[test]
    fn split_fractions_produce_exact_counts() {
        let gen = DataGenConfig { n_episodes: 100, ..DataGenConfig::default() };
        let mut counts = [0usize; 3];
        for i in 0..100 {
            match split_of(i, 100, &gen) {
                Split::Train => counts[0] += 1,
                Split::Valid => counts[1] += 1,
                Split::Test => counts[2] += 1,
            }
        }
        assert_eq!(counts, [80, 10, 10]);
    }

    #[test]
    fn dataset_roundtrip_and_idempotence() {
        let dir = tmpdir("roundtrip");
        let env = EnvConfig::default();
        let gen = DataGenConfig {
            n_episodes: 5,
            episode_len: 4,
            actions_visible: true,
            ..DataGenConfig::default()
        };
        let m1 = generate_dataset(&env, &gen, &dir, Exec::Sequential).unwrap();
        // second run with identical config is a no-op returning the same manifest
        let m2 = generate_dataset(&env, &gen, &dir, Exec::Sequential).unwrap();
        assert_eq!(serde_json::to_string(&m1).unwrap(), serde_json::to_string(&m2).unwrap());

        let ds = load_dataset(&dir).unwrap();
        let clip = ds.clip(0).unwrap();
        let ep = generate_episode(&env, m1.episodes[0].seed, gen.episode_len);
        assert_eq!(clip.data, ep.clip.data);
        assert_eq!(ds.actions(0).unwrap(), ep.actions);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn differing_config_refuses_overwrite() {
        let dir = tmpdir("refuse");
        let env = EnvConfig::default();
        let gen = DataGenConfig { n_episodes: 3, episode_len: 3, ..DataGenConfig::default() };
        generate_dataset(&env, &gen, &dir, Exec::Sequential).unwrap();
        let gen2 = DataGenConfig { n_episodes: 4, ..gen.clone() };
        let err = generate_dataset(&env, &gen2, &dir, Exec::Sequential);
        assert!(matches!(err, Err(Error::Incompatible(_))));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn hidden_actions_cannot_be_read() {
        let dir = tmpdir("hidden");
        let env = EnvConfig::default();
        let gen = DataGenConfig {
            n_episodes: 2,
            episode_len: 3,
            actions_visible: false,
            ..DataGenConfig::default()
        };
        generate_dataset(&env, &gen, &dir, Exec::Sequential).unwrap();
        let ds = load_dataset(&dir).unwrap();
        assert!(matches!(ds.actions(0), Err(Error::ActionsHidden)));
        // no action bytes exist on disk at all
        assert!(fs::read_dir(&dir).unwrap().all(|e| {
            !e.unwrap().file_name().to_string_lossy().contains("actions")
        }));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn parallel_and_sequential_generation_match() {
        let dir_a = tmpdir("par");
        let dir_b = tmpdir("seq");
        let env = EnvConfig::default();
        let gen = DataGenConfig { n_episodes: 4, episode_len: 3, ..DataGenConfig::default() };
        let a = generate_dataset(&env, &gen, &dir_a, Exec::Parallel).unwrap();
        let b = generate_dataset(&env, &gen, &dir_b, Exec::Sequential).unwrap();
        assert_eq!(dataset_digest(&a), dataset_digest(&b));
        fs::remove_dir_all(&dir_a).unwrap();
        fs::remove_dir_all(&dir_b).unwrap();
    }
}
