//! Run configuration: one flat `section.key = value` file, command-line
//! overrides and the config hash stamped on every artifact.
//!
//! ```text
//! # comment
//! run.seed = 7
//! world.num_users = 50
//! world.rules = seq from=1 to=2 p=0.9; time app=3 bins=16-19 weight=10
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::corpus::{PlantedRule, TimeZone, WorldSpec};
use crate::encoders::{SkipGramConfig, TuckerConfig};
use crate::error::{Error, Result};
use crate::orchestrator::{AblationVariant, ModelConfig, TrainConfig};
use crate::rng::derive_seed;

/// Environment variable overriding `run.seed`.
pub const SEED_ENV: &str = "APPGEN_SEED";

/// Which part of the real corpus supplies trajectories for generation and
/// the reference for evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Validation,
    Test,
    All,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
            SplitName::All => "all",
        }
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [SplitName::Train, SplitName::Validation, SplitName::Test, SplitName::All]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("expected train, validation, test or all, got `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub min_support: f64,
    pub top_m: usize,
    pub k_clusters: usize,
    /// Run the train-on-half downstream protocol in the report stage.
    pub downstream: bool,
    pub k_values: Vec<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            min_support: 0.02,
            top_m: 10,
            k_clusters: 5,
            downstream: true,
            k_values: vec![1, 3, 5],
        }
    }
}

/// Artifact locations. Relative artifact paths resolve against `run_dir`.
#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub run_dir: PathBuf,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub generated: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            run_dir: PathBuf::from("run"),
            dataset: PathBuf::from("dataset.tsv"),
            checkpoint: PathBuf::from("model.ckpt"),
            generated: PathBuf::from("generated.tsv"),
            reports: PathBuf::from("reports"),
        }
    }
}

impl Paths {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.run_dir.join(p)
        }
    }
}

/// Everything a pipeline run depends on. Every field has a default.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: AblationVariant,
    /// Its `seed` is derived from [`RunConfig::seed`].
    pub world: WorldSpec,
    /// Train / validation / test shares of users.
    pub split: [f64; 3],
    pub skipgram: SkipGramConfig,
    pub tucker: TuckerConfig,
    pub model: ModelConfig,
    /// Its `seed` is derived from [`RunConfig::seed`].
    pub train: TrainConfig,
    pub generate_split: SplitName,
    pub analysis: AnalysisConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            seed: 42,
            variant: AblationVariant::Full,
            world: WorldSpec {
                num_users: 100,
                num_apps: 30,
                num_stations: 20,
                num_regions: 4,
                num_business_areas: 6,
                num_pois: 40,
                num_categories: 8,
                horizon_days: 5,
                sessions_per_day: 6.0,
                events_per_session: 3.0,
                planted_rules: vec![
                    PlantedRule::Sequential {
                        from: 1.into(),
                        to: 2.into(),
                        p: 0.9,
                    },
                    PlantedRule::TimeAffinity {
                        app: 3.into(),
                        bins: vec![16, 17, 18, 19],
                        weight: 10.0,
                    },
                ],
                ..WorldSpec::default()
            },
            split: [0.8, 0.1, 0.1],
            skipgram: SkipGramConfig {
                dim: 16,
                ..Default::default()
            },
            tucker: TuckerConfig {
                entity_dim: 16,
                relation_dim: 16,
                ..Default::default()
            },
            model: ModelConfig {
                attn_dim: 32,
                ..Default::default()
            },
            train: TrainConfig {
                epochs: 20,
                batch_size: 64,
                learning_rate: 1e-2,
                ..Default::default()
            },
            generate_split: SplitName::Test,
            analysis: AnalysisConfig::default(),
            paths: Paths::default(),
        };
        cfg.derive_seeds();
        cfg
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Config {
        key: key.to_string(),
        message: format!("cannot parse `{value}`: {e}"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config {
            key: key.to_string(),
            message: format!("expected true or false, got `{value}`"),
        }),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(sep)
}

impl RunConfig {
    fn derive_seeds(&mut self) {
        self.world.seed = derive_seed(self.seed, "world", 0);
        self.train.seed = derive_seed(self.seed, "train", 0);
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let w = &mut self.world;
        match key {
            "run.seed" => self.seed = parse(key, v)?,
            "run.variant" => self.variant = parse(key, v)?,
            "world.num_users" => w.num_users = parse(key, v)?,
            "world.num_apps" => w.num_apps = parse(key, v)?,
            "world.num_stations" => w.num_stations = parse(key, v)?,
            "world.num_regions" => w.num_regions = parse(key, v)?,
            "world.num_business_areas" => w.num_business_areas = parse(key, v)?,
            "world.num_pois" => w.num_pois = parse(key, v)?,
            "world.num_categories" => w.num_categories = parse(key, v)?,
            "world.horizon_days" => w.horizon_days = parse(key, v)?,
            "world.start_epoch" => w.start_epoch = parse(key, v)?,
            "world.timezone_offset" => {
                w.timezone = TimeZone::new(parse(key, v)?).map_err(|e| Error::Config {
                    key: key.to_string(),
                    message: e.to_string(),
                })?
            }
            "world.sessions_per_day" => w.sessions_per_day = parse(key, v)?,
            "world.events_per_session" => w.events_per_session = parse(key, v)?,
            "world.popularity_exponent" => w.popularity_exponent = parse(key, v)?,
            "world.preference_spread" => w.preference_spread = parse(key, v)?,
            "world.rules" => {
                w.planted_rules = v
                    .split(';')
                    .map(str::trim)
                    .filter(|r| !r.is_empty())
                    .map(|r| parse(key, r))
                    .collect::<Result<_>>()?
            }
            "split.train" => self.split[0] = parse(key, v)?,
            "split.validation" => self.split[1] = parse(key, v)?,
            "split.test" => self.split[2] = parse(key, v)?,
            "skipgram.dim" => self.skipgram.dim = parse(key, v)?,
            "skipgram.window" => self.skipgram.window = parse(key, v)?,
            "skipgram.negatives" => self.skipgram.negatives = parse(key, v)?,
            "skipgram.epochs" => self.skipgram.epochs = parse(key, v)?,
            "skipgram.learning_rate" => self.skipgram.learning_rate = parse(key, v)?,
            "tucker.entity_dim" => self.tucker.entity_dim = parse(key, v)?,
            "tucker.relation_dim" => self.tucker.relation_dim = parse(key, v)?,
            "tucker.epochs" => self.tucker.epochs = parse(key, v)?,
            "tucker.learning_rate" => self.tucker.learning_rate = parse(key, v)?,
            "tucker.batch_size" => self.tucker.batch_size = parse(key, v)?,
            "tucker.negatives" => self.tucker.negatives = parse(key, v)?,
            "model.history_window" => self.model.history_window = parse(key, v)?,
            "model.attn_dim" => self.model.attn_dim = parse(key, v)?,
            "model.residual_channels" => self.model.residual_channels = parse(key, v)?,
            "model.cond_channels" => self.model.cond_channels = parse(key, v)?,
            "model.step_hidden" => self.model.step_hidden = parse(key, v)?,
            "diffusion.steps" => self.model.steps = parse(key, v)?,
            "diffusion.beta_start" => self.model.beta_start = parse(key, v)?,
            "diffusion.beta_end" => self.model.beta_end = parse(key, v)?,
            "diffusion.lambda_alpha" => self.model.lambda_alpha = parse(key, v)?,
            "diffusion.embedding_loss" => self.model.embedding_loss = parse_bool(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.lr_schedule" => self.train.lr_schedule = parse(key, v)?,
            "train.validation_examples" => self.train.validation_examples = parse(key, v)?,
            "generate.split" => self.generate_split = parse(key, v)?,
            "analysis.min_support" => self.analysis.min_support = parse(key, v)?,
            "analysis.top_m" => self.analysis.top_m = parse(key, v)?,
            "analysis.k_clusters" => self.analysis.k_clusters = parse(key, v)?,
            "analysis.downstream" => self.analysis.downstream = parse_bool(key, v)?,
            "analysis.k_values" => self.analysis.k_values = parse_list(key, v)?,
            "paths.run_dir" => self.paths.run_dir = PathBuf::from(v),
            "paths.dataset" => self.paths.dataset = PathBuf::from(v),
            "paths.checkpoint" => self.paths.checkpoint = PathBuf::from(v),
            "paths.generated" => self.paths.generated = PathBuf::from(v),
            "paths.reports" => self.paths.reports = PathBuf::from(v),
            _ => return Err(Error::UnknownField(key.to_string())),
        }
        self.derive_seeds();
        Ok(())
    }

    /// Every key with its current value, in a fixed order. Paths come last.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let w = &self.world;
        let (s, t, m, tr, a, p) = (&self.skipgram, &self.tucker, &self.model, &self.train, &self.analysis, &self.paths);
        vec![
            ("run.seed", self.seed.to_string()),
            ("run.variant", self.variant.to_string()),
            ("world.num_users", w.num_users.to_string()),
            ("world.num_apps", w.num_apps.to_string()),
            ("world.num_stations", w.num_stations.to_string()),
            ("world.num_regions", w.num_regions.to_string()),
            ("world.num_business_areas", w.num_business_areas.to_string()),
            ("world.num_pois", w.num_pois.to_string()),
            ("world.num_categories", w.num_categories.to_string()),
            ("world.horizon_days", w.horizon_days.to_string()),
            ("world.start_epoch", w.start_epoch.to_string()),
            ("world.timezone_offset", w.timezone.offset_secs.to_string()),
            ("world.sessions_per_day", format!("{:?}", w.sessions_per_day)),
            ("world.events_per_session", format!("{:?}", w.events_per_session)),
            ("world.popularity_exponent", format!("{:?}", w.popularity_exponent)),
            ("world.preference_spread", format!("{:?}", w.preference_spread)),
            ("world.rules", join(&w.planted_rules, "; ")),
            ("split.train", format!("{:?}", self.split[0])),
            ("split.validation", format!("{:?}", self.split[1])),
            ("split.test", format!("{:?}", self.split[2])),
            ("skipgram.dim", s.dim.to_string()),
            ("skipgram.window", s.window.to_string()),
            ("skipgram.negatives", s.negatives.to_string()),
            ("skipgram.epochs", s.epochs.to_string()),
            ("skipgram.learning_rate", format!("{:?}", s.learning_rate)),
            ("tucker.entity_dim", t.entity_dim.to_string()),
            ("tucker.relation_dim", t.relation_dim.to_string()),
            ("tucker.epochs", t.epochs.to_string()),
            ("tucker.learning_rate", format!("{:?}", t.learning_rate)),
            ("tucker.batch_size", t.batch_size.to_string()),
            ("tucker.negatives", t.negatives.to_string()),
            ("model.history_window", m.history_window.to_string()),
            ("model.attn_dim", m.attn_dim.to_string()),
            ("model.residual_channels", m.residual_channels.to_string()),
            ("model.cond_channels", m.cond_channels.to_string()),
            ("model.step_hidden", m.step_hidden.to_string()),
            ("diffusion.steps", m.steps.to_string()),
            ("diffusion.beta_start", format!("{:?}", m.beta_start)),
            ("diffusion.beta_end", format!("{:?}", m.beta_end)),
            ("diffusion.lambda_alpha", format!("{:?}", m.lambda_alpha)),
            ("diffusion.embedding_loss", m.embedding_loss.to_string()),
            ("train.epochs", tr.epochs.to_string()),
            ("train.batch_size", tr.batch_size.to_string()),
            ("train.learning_rate", format!("{:?}", tr.learning_rate)),
            ("train.lr_schedule", tr.lr_schedule.name().to_string()),
            ("train.validation_examples", tr.validation_examples.to_string()),
            ("generate.split", self.generate_split.name().to_string()),
            ("analysis.min_support", format!("{:?}", a.min_support)),
            ("analysis.top_m", a.top_m.to_string()),
            ("analysis.k_clusters", a.k_clusters.to_string()),
            ("analysis.downstream", a.downstream.to_string()),
            ("analysis.k_values", join(&a.k_values, ",")),
            ("paths.run_dir", p.run_dir.display().to_string()),
            ("paths.dataset", p.dataset.display().to_string()),
            ("paths.checkpoint", p.checkpoint.display().to_string()),
            ("paths.generated", p.generated.display().to_string()),
            ("paths.reports", p.reports.display().to_string()),
        ]
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment
    /// line; a key may appear once.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("key `{k}` given twice"),
                });
            }
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config {
                key: o.to_string(),
                message: "override must look like key=value".into(),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Applies [`SEED_ENV`] when set.
    pub fn apply_env(&mut self) -> Result<()> {
        match std::env::var(SEED_ENV) {
            Ok(v) => self.set("run.seed", &v),
            Err(_) => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.skipgram.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.split.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::invalid("split", "train, validation and test shares must all be positive"));
        }
        let a = &self.analysis;
        if !(a.min_support > 0.0 && a.min_support <= 1.0) {
            return Err(Error::invalid("analysis.min_support", "must lie in (0, 1]"));
        }
        if a.top_m == 0 || a.k_clusters == 0 {
            return Err(Error::invalid("analysis", "top_m and k_clusters must be positive"));
        }
        if a.k_values.is_empty() || a.k_values.contains(&0) {
            return Err(Error::invalid("analysis.k_values", "need at least one positive k"));
        }
        Ok(())
    }

    /// Canonical text of every setting that influences results (paths are
    /// excluded, so the same run in another directory hashes identically).
    pub fn canonical_text(&self) -> String {
        self.entries()
            .into_iter()
            .filter(|(k, _)| !k.starts_with("paths."))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::canonical_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        hex::encode(&digest.as_slice()[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&["world.num_users=7", "world.rules=seq from=0 to=1 p=0.5", "analysis.k_values=1,10"])
            .unwrap();
        let back = RunConfig::parse_text(&cfg.canonical_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn defaults_are_valid_and_every_key_is_settable() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        for (k, v) in cfg.entries() {
            let mut c = cfg.clone();
            c.set(k, &v).unwrap();
            assert_eq!(c, cfg, "{k}");
        }
    }

    #[test]
    fn unknown_key_and_bad_value() {
        assert!(matches!(RunConfig::parse_text("model.depth = 3"), Err(Error::UnknownField(_))));
        assert!(matches!(RunConfig::parse_text("train.epochs = many"), Err(Error::Config { .. })));
        assert!(matches!(RunConfig::parse_text("train.epochs"), Err(Error::Parse { line: 1, .. })));
        assert!(RunConfig::parse_text("run.seed = 1\nrun.seed = 2").is_err());
    }

    #[test]
    fn seed_changes_hash_and_derived_seeds_but_paths_do_not() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.set("run.seed", "43").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.world.seed, b.world.seed);
        let mut c = a.clone();
        c.set("paths.run_dir", "/tmp/elsewhere").unwrap();
        assert_eq!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
