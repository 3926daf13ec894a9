use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::attack::AttackConfig;
use crate::error::{Error, Result};
use crate::minidet::{Architecture, DetectorConfig, TrainOptions};
use crate::scenegen::{BackgroundSet, Environment, SceneDistribution, SweepSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_scenes: usize,
    pub scene: SceneDistribution,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { n_scenes: 2000, scene: SceneDistribution::default() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Unmodified sign along the sweep.
    #[default]
    Clean,
    /// Perturbed sign along the sweep.
    Disappearance,
    /// Optimised patch at independent random placements.
    Creation,
    /// Bare backgrounds, counting spurious target detections.
    Background,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mode: EvalMode,
    /// Held-out backgrounds for sweeps and placements.
    pub backgrounds: BackgroundSet,
    /// Frame count for creation and background modes.
    pub placements: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { mode: EvalMode::Clean, backgrounds: BackgroundSet::new(99, 64), placements: 100 }
    }
}

/// Input files. Unset entries default to the conventional name inside the output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Second detector for `transfer`.
    pub model_b: Option<PathBuf>,
    pub perturbation: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; also the seed of `train` and `attack` unless they set one.
    pub seed: u64,
    pub detector: DetectorConfig,
    pub arch: Architecture,
    pub data: DataConfig,
    pub train: TrainOptions,
    pub attack: AttackConfig,
    pub sweep: SweepSpec,
    pub eval: EvalConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            detector: DetectorConfig::default(),
            arch: Architecture::default(),
            data: DataConfig::default(),
            train: TrainOptions::default(),
            attack: AttackConfig::default(),
            sweep: SweepSpec::default(),
            eval: EvalConfig::default(),
            paths: Paths::default(),
        }
    }
}

const SECTIONS: [&str; 8] = ["detector", "arch", "data", "train", "attack", "sweep", "eval", "paths"];

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Moves top-level keys that name a field of exactly one section into it,
/// so `{"tau": 0.2}` means `{"attack": {"tau": 0.2}}`.
fn route_shorthand(user: Map<String, Value>, defaults: &Map<String, Value>) -> Result<Map<String, Value>> {
    let mut out = Map::new();
    for (key, value) in user {
        if key == "seed" || SECTIONS.contains(&key.as_str()) {
            merge_into(&mut out, key, value);
            continue;
        }
        let owners: Vec<&str> = SECTIONS
            .iter()
            .copied()
            .filter(|s| defaults.get(*s).and_then(Value::as_object).is_some_and(|o| o.contains_key(&key)))
            .collect();
        match owners.as_slice() {
            [owner] => {
                let mut section = Map::new();
                section.insert(key, value);
                merge_into(&mut out, owner.to_string(), Value::Object(section));
            }
            [] => return Err(Error::config(format!("/{key}"), "unknown key")),
            many => {
                return Err(Error::config(
                    format!("/{key}"),
                    format!("ambiguous shorthand, qualify it with one of {many:?}"),
                ))
            }
        }
    }
    Ok(out)
}

fn merge_into(map: &mut Map<String, Value>, key: String, value: Value) {
    match map.get_mut(&key) {
        Some(slot) => merge(slot, value),
        None => {
            map.insert(key, value);
        }
    }
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    let mut s = String::new();
    for seg in path.iter() {
        match seg {
            serde_path_to_error::Segment::Seq { index } => s.push_str(&format!("/{index}")),
            serde_path_to_error::Segment::Map { key } => s.push_str(&format!("/{key}")),
            serde_path_to_error::Segment::Enum { variant } => s.push_str(&format!("/{variant}")),
            serde_path_to_error::Segment::Unknown => s.push_str("/?"),
        }
    }
    if s.is_empty() {
        s.push('/');
    }
    s
}

impl RunConfig {
    /// Strict parse: unknown keys, type errors and out-of-range values are
    /// rejected with a JSON pointer. Missing fields take defaults; the sweep
    /// starts from the preset of its `environment`.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_seed(text, None)
    }

    /// [`RunConfig::parse`] with the global seed replaced by `seed` when given.
    pub fn parse_with_seed(text: &str, seed: Option<u64>) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| Error::config("/", format!("invalid JSON: {e}")))?;
        let Value::Object(user) = user else {
            return Err(Error::config("/", "top level must be a JSON object"));
        };
        let Value::Object(defaults) = serde_json::to_value(RunConfig::default()).expect("defaults serialise") else {
            unreachable!("RunConfig serialises to an object")
        };
        let user = route_shorthand(user, &defaults)?;

        let section_seeded =
            |name: &str| user.get(name).and_then(Value::as_object).is_some_and(|o| o.contains_key("seed"));
        let (train_seeded, attack_seeded) = (section_seeded("train"), section_seeded("attack"));

        let mut merged = Value::Object(defaults);
        if let Some(env) = user.get("sweep").and_then(|s| s.get("environment")) {
            let env: Environment =
                serde_json::from_value(env.clone()).map_err(|e| Error::config("/sweep/environment", e.to_string()))?;
            merged["sweep"] = serde_json::to_value(env.sweep()).expect("sweep serialises");
        }
        merge(&mut merged, Value::Object(user));

        let mut config: RunConfig = serde_path_to_error::deserialize(merged).map_err(|e| {
            let path = pointer(e.path());
            let inner = e.into_inner().to_string();
            if inner.starts_with("unknown field") {
                Error::config(path, "unknown key")
            } else {
                Error::config(path, inner)
            }
        })?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        if !train_seeded {
            config.train.seed = config.seed;
        }
        if !attack_seeded {
            config.attack.seed = config.seed;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_with_seed(&text, seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.arch.validate(&self.detector)?;
        if self.data.n_scenes == 0 {
            return Err(Error::config("/data/n_scenes", "must be at least 1"));
        }
        self.data.scene.validate("/data/scene")?;
        if self.train.batch_size == 0 {
            return Err(Error::config("/train/batch_size", "must be at least 1"));
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(Error::config("/train/lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.train.momentum) {
            return Err(Error::config("/train/momentum", "must lie in [0, 1)"));
        }
        self.attack.validate("/attack", self.detector.classes)?;
        if self.attack.creation.patch_size > self.detector.input_size {
            return Err(Error::config("/attack/creation/patch_size", "larger than the input frame"));
        }
        self.sweep.validate("/sweep")?;
        if self.eval.placements == 0 {
            return Err(Error::config("/eval/placements", "must be at least 1"));
        }
        if self.eval.backgrounds.count == 0 {
            return Err(Error::config("/eval/backgrounds/count", "must be at least 1"));
        }
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}
