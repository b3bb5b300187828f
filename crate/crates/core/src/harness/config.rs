use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::environment::{planted_gap_means, LossGenerator, Sampling};
use crate::error::{Error, Result};
use crate::learner::LearnerConfig;
use crate::mdp::{gap_function, GapInfo, LayeredMdp, Layout, LossFunction, MdpFile, TransitionKernel};
use crate::rng::{RngStream, StreamPurpose};

/// Where the ground-truth MDP comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MdpSource {
    /// An MDP instance file, relative to the config file.
    File(PathBuf),
    Inline(MdpFile),
    /// Transition rows drawn uniformly from the simplex.
    Random {
        layers: Vec<usize>,
        actions: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub budget: f64,
    pub episodes: Vec<usize>,
    pub replacement: Vec<f64>,
}

fn default_amplitude() -> f64 {
    0.2
}

/// The loss process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorldSpec {
    /// I.i.d. losses around a mean table with a planted unique optimal policy
    /// and minimum gap `delta_min`, optionally corrupted.
    PlantedGap {
        delta_min: f64,
        #[serde(default)]
        sampling: Sampling,
        #[serde(default)]
        instance_seed: u64,
        #[serde(default)]
        corruption: Option<CorruptionSpec>,
    },
    /// Block-switching adversary between the tables `0.5 ± amplitude·σ(s, a)`
    /// and `0.5 ∓ amplitude·σ(s, a)` with `σ(s, a) = (-1)^{s + a}`. Every pair
    /// averages one half, so no policy is better in the long run.
    SymmetricSwitching {
        block: usize,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default)]
        sampling: Sampling,
    },
    /// Any generator spelled out.
    Generator { generator: LossGenerator },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for CSV outputs; nothing is written when absent.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub epoch_trace: bool,
    #[serde(default)]
    pub solver_diagnostics: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSource,
    pub world: WorldSpec,
    pub learner: LearnerConfig,
    /// Number of episodes `T`.
    pub horizon: usize,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
    /// Run the optimism and upper-occupancy audits every episode.
    #[serde(default)]
    pub audit: bool,
    /// Keep per-episode rows in memory (needed for the curve outputs).
    #[serde(default = "yes")]
    pub keep_episodes: bool,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            context: "experiment config".into(),
            source,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json_str(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        Ok(config)
    }

    pub fn new(mdp: MdpSource, world: WorldSpec, learner: LearnerConfig, horizon: usize) -> Self {
        ExperimentConfig {
            mdp,
            world,
            learner,
            horizon,
            replications: 1,
            seed: 0,
            output: OutputConfig::default(),
            audit: false,
            keep_episodes: true,
            base_dir: None,
        }
    }

    fn resolve_path(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }

    /// Validates the config and builds the world it describes.
    pub fn build(&self) -> Result<World> {
        if self.horizon == 0 {
            return Err(Error::config("horizon T must be at least 1"));
        }
        if self.replications == 0 {
            return Err(Error::config("replications must be at least 1"));
        }
        self.learner.validate(self.horizon)?;
        let mdp = match &self.mdp {
            MdpSource::File(path) => LayeredMdp::from_json_file(self.resolve_path(path))?,
            MdpSource::Inline(file) => file.clone().into_mdp()?,
            MdpSource::Random { layers, actions, seed } => {
                let layout = Layout::new(layers.clone(), *actions)?;
                let mut rng = RngStream::new(*seed, StreamPurpose::Instance as u64);
                LayeredMdp::new(TransitionKernel::random(layout, &mut rng))
            }
        };
        let layout = mdp.layout().clone();
        let generator = match &self.world {
            WorldSpec::PlantedGap {
                delta_min,
                sampling,
                instance_seed,
                corruption,
            } => {
                let mut rng = RngStream::new(*instance_seed, StreamPurpose::Instance as u64 + 0x100);
                let (means, _) = planted_gap_means(&mdp, *delta_min, &mut rng)?;
                match corruption {
                    None => LossGenerator::IidStochastic {
                        means,
                        sampling: *sampling,
                    },
                    Some(c) => LossGenerator::CorruptedIid {
                        means,
                        sampling: *sampling,
                        budget: c.budget,
                        episodes: c.episodes.clone(),
                        replacement: c.replacement.clone(),
                    },
                }
            }
            WorldSpec::SymmetricSwitching {
                block,
                amplitude,
                sampling,
            } => {
                if !(*amplitude >= 0.0 && *amplitude <= 0.5) {
                    return Err(Error::config("switching amplitude must lie in [0, 0.5]"));
                }
                let sign = |p: usize| {
                    let s = layout.pair_state(p);
                    let a = p - layout.pair(s, 0);
                    if (s + a) % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                };
                let tables = [1.0, -1.0]
                    .iter()
                    .map(|dir| (0..layout.n_pairs()).map(|p| 0.5 + dir * amplitude * sign(p)).collect())
                    .collect();
                LossGenerator::SwitchingAdversary {
                    tables,
                    block: *block,
                    sampling: *sampling,
                }
            }
            WorldSpec::Generator { generator } => generator.clone(),
        };
        let generator = generator.resolve(self.base_dir.as_deref(), &layout, self.horizon)?;
        let gaps = match generator.mean_table() {
            Some(means) => Some(gap_function(&mdp, &LossFunction::unit(means.to_vec())?)?),
            None => None,
        };
        Ok(World { mdp, generator, gaps })
    }
}

/// A fully resolved world: the MDP, the loss process and, for stochastic
/// worlds, the optimal policy and its gaps under the mean loss.
#[derive(Clone, Debug)]
pub struct World {
    pub mdp: LayeredMdp,
    pub generator: LossGenerator,
    pub gaps: Option<GapInfo>,
}

impl World {
    pub fn is_stochastic(&self) -> bool {
        self.gaps.is_some()
    }
}
