//! Stage driver behind the command-line tool. Each stage reads the
//! artifacts of earlier stages from the run directory, refuses ones stamped
//! with a different config hash, and is skipped when its own outputs already
//! exist for the current config.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analysis::{
    apriori, downstream_protocol, hourly_profiles, itemset_agreement, location_cluster_agreement, sessionize, FrequencyPredictor, ItemsetTable,
    MarkovPredictor, NextAppPredictor, SESSION_GAP_SECS,
};
use crate::config::{RunConfig, SplitName};
use crate::corpus::{
    generate_world, read_dataset_with_meta, split_dataset, write_dataset_with_meta, CategoryId, DatasetSplit, RecordMeta, TimeZone, UserSequence,
};
use crate::encoders::{build_urban_kg, read_embeddings, read_kg, train_app_embeddings, train_tucker, write_embeddings, write_kg, EmbeddingTable};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Domain, EvalReport};
use crate::orchestrator::{generate_corpus, load_checkpoint, save_checkpoint, train, AppGenModel, ModelCheckpoint, TrainConfig};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenWorld,
    TrainEncoders,
    Train,
    Generate,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::GenWorld,
        Stage::TrainEncoders,
        Stage::Train,
        Stage::Generate,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenWorld => "gen-world",
            Stage::TrainEncoders => "train-encoders",
            Stage::Train => "train",
            Stage::Generate => "generate",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Rerun stages whose outputs already exist.
    pub force: bool,
    /// Accept input artifacts stamped with a different config hash.
    pub allow_hash_mismatch: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

/// Files written into the run directory besides the configurable paths.
pub mod files {
    pub const CATEGORIES: &str = "categories.tsv";
    pub const KG: &str = "urban_kg.tsv";
    pub const APP_EMBEDDINGS: &str = "app_embeddings.tsv";
    pub const LOCATION_EMBEDDINGS: &str = "location_embeddings.tsv";
    pub const ENCODER_REPORT: &str = "encoders.txt";
    pub const EVALUATION: &str = "evaluation.tsv";
    pub const SUMMARY: &str = "summary.txt";
    pub const CONFIG: &str = "config.txt";
    pub const PROFILES_REAL: &str = "profiles_real.tsv";
    pub const PROFILES_GENERATED: &str = "profiles_generated.tsv";
    pub const ITEMSETS_REAL: &str = "itemsets_real.tsv";
    pub const ITEMSETS_GENERATED: &str = "itemsets_generated.tsv";
    pub const CLUSTERING: &str = "clustering.txt";
    pub const DOWNSTREAM: &str = "downstream.tsv";
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// The config hash stamped in a text artifact's header.
fn text_hash(path: &Path) -> Result<Option<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().take(8).find_map(|l| {
        l.strip_prefix("#config:")
            .or_else(|| l.strip_prefix("config_hash = "))
            .map(|h| h.trim().to_string())
    }))
}

pub struct Pipeline {
    config: RunConfig,
    hash: String,
    options: RunOptions,
}

impl Pipeline {
    pub fn new(config: RunConfig, options: RunOptions) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        Ok(Pipeline { config, hash, options })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    fn run_file(&self, name: &str) -> PathBuf {
        self.config.paths.run_dir.join(name)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.config.paths.resolve(&self.config.paths.dataset)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.config.paths.resolve(&self.config.paths.checkpoint)
    }

    pub fn generated_path(&self) -> PathBuf {
        self.config.paths.resolve(&self.config.paths.generated)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.config.paths.resolve(&self.config.paths.reports)
    }

    fn report_file(&self, name: &str) -> PathBuf {
        self.reports_dir().join(name)
    }

    /// Files a stage must leave behind to count as done.
    pub fn outputs(&self, stage: Stage) -> Vec<PathBuf> {
        match stage {
            Stage::GenWorld => vec![self.dataset_path(), self.run_file(files::CATEGORIES), self.run_file(files::KG)],
            Stage::TrainEncoders => vec![
                self.run_file(files::APP_EMBEDDINGS),
                self.run_file(files::LOCATION_EMBEDDINGS),
                self.run_file(files::ENCODER_REPORT),
            ],
            Stage::Train => vec![self.checkpoint_path()],
            Stage::Generate => vec![self.generated_path()],
            Stage::Evaluate => vec![self.report_file(files::EVALUATION)],
            Stage::Report => vec![self.report_file(files::SUMMARY)],
        }
    }

    fn artifact_hash(&self, path: &Path) -> Result<Option<String>> {
        if path == self.checkpoint_path() {
            return Ok(Some(load_checkpoint::<f64>(path, None)?.config_hash));
        }
        text_hash(path)
    }

    fn check_hash(&self, path: &Path, found: Option<String>) -> Result<()> {
        if self.options.allow_hash_mismatch || found.as_deref() == Some(self.hash.as_str()) {
            return Ok(());
        }
        Err(Error::ConfigHashMismatch {
            artifact: path.display().to_string(),
            found: found.unwrap_or_else(|| "none".into()),
            expected: self.hash.clone(),
        })
    }

    fn require(&self, kind: &'static str, path: &Path) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::MissingArtifact {
                kind,
                path: path.to_path_buf(),
            })
        }
    }

    /// Runs one stage unless its outputs exist for this config. Existing
    /// outputs from another config are an error unless `force` is set.
    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome> {
        let outputs = self.outputs(stage);
        if !self.options.force && outputs.iter().all(|p| p.exists()) {
            for p in &outputs {
                let found = self.artifact_hash(p)?;
                if found.as_deref() != Some(self.hash.as_str()) {
                    return Err(Error::ConfigHashMismatch {
                        artifact: format!("{} (rerun with --force to replace it)", p.display()),
                        found: found.unwrap_or_else(|| "none".into()),
                        expected: self.hash.clone(),
                    });
                }
            }
            return Ok(StageOutcome::Skipped);
        }
        fs::create_dir_all(&self.config.paths.run_dir).map_err(|e| Error::io(&self.config.paths.run_dir, e))?;
        match stage {
            Stage::GenWorld => self.gen_world()?,
            Stage::TrainEncoders => self.train_encoders()?,
            Stage::Train => self.train_model()?,
            Stage::Generate => self.generate()?,
            Stage::Evaluate => self.evaluate()?,
            Stage::Report => self.report()?,
        }
        Ok(StageOutcome::Ran)
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<Vec<(Stage, StageOutcome)>> {
        Stage::ALL.into_iter().map(|s| Ok((s, self.run_stage(s)?))).collect()
    }

    fn meta(&self, timezone: TimeZone) -> RecordMeta {
        RecordMeta {
            timezone,
            config_hash: Some(self.hash.clone()),
        }
    }

    fn gen_world(&self) -> Result<()> {
        let world = generate_world(&self.config.world)?;
        write_dataset_with_meta(self.dataset_path(), &world.sequences, &self.meta(world.spec.timezone))?;
        let mut cats = format!("#config:{}\n#fields:app_id\tcategory_id\n", self.hash);
        for (a, c) in world.categories.iter().enumerate() {
            cats.push_str(&format!("{a}\t{c}\n"));
        }
        write_text(&self.run_file(files::CATEGORIES), &cats)?;
        write_kg(self.run_file(files::KG), &build_urban_kg(&world.geography)?, Some(&self.hash))
    }

    /// The real corpus with its time zone.
    pub fn load_dataset(&self) -> Result<(Vec<UserSequence>, TimeZone)> {
        let path = self.dataset_path();
        self.require("dataset", &path)?;
        let (data, meta) = read_dataset_with_meta(&path)?;
        self.check_hash(&path, meta.config_hash)?;
        Ok((data, meta.timezone))
    }

    pub fn split(&self, data: &[UserSequence]) -> Result<DatasetSplit> {
        split_dataset(data, self.config.split, derive_seed(self.config.seed, "split", 0))
    }

    fn load_categories(&self) -> Result<Vec<Option<CategoryId>>> {
        let path = self.run_file(files::CATEGORIES);
        self.require("categories", &path)?;
        self.check_hash(&path, text_hash(&path)?)?;
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = vec![None; self.config.world.num_apps];
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty()) {
            let bad = || Error::Parse {
                line: i + 1,
                message: format!("{}: expected `app_id<TAB>category_id`", path.display()),
            };
            let (a, c) = line.split_once('\t').ok_or_else(bad)?;
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let c: u32 = c.trim().parse().map_err(|_| bad())?;
            if a >= out.len() {
                out.resize(a + 1, None);
            }
            out[a] = Some(CategoryId(c));
        }
        Ok(out)
    }

    fn train_encoders(&self) -> Result<()> {
        let (data, _) = self.load_dataset()?;
        let split = self.split(&data)?;
        let sequences: Vec<_> = split.train.iter().map(|s| s.apps()).collect();
        let seed = self.config.seed;
        let app = train_app_embeddings::<f64>(
            &sequences,
            self.config.world.num_apps,
            &self.config.skipgram,
            derive_seed(seed, "skipgram", 0),
        )?;
        let kg_path = self.run_file(files::KG);
        self.require("knowledge graph", &kg_path)?;
        self.check_hash(&kg_path, text_hash(&kg_path)?)?;
        let kg = read_kg(&kg_path)?;
        let (_, location, report) = train_tucker::<f64>(&kg, &self.config.tucker, derive_seed(seed, "tucker", 0))?;
        write_embeddings(self.run_file(files::APP_EMBEDDINGS), &app, Some(&self.hash))?;
        write_embeddings(self.run_file(files::LOCATION_EMBEDDINGS), &location, Some(&self.hash))?;
        let text = format!(
            "#config:{}\ntucker.initial_loss = {:.8}\ntucker.final_loss = {:.8}\ntucker.hits_at_1 = {:.8}\n",
            self.hash, report.initial_loss, report.final_loss, report.hits_at_1
        );
        write_text(&self.run_file(files::ENCODER_REPORT), &text)
    }

    fn load_table(&self, name: &str) -> Result<EmbeddingTable<f64>> {
        let path = self.run_file(name);
        self.require("embeddings", &path)?;
        let (table, hash) = read_embeddings(&path)?;
        self.check_hash(&path, hash)?;
        Ok(table)
    }

    fn fresh_model(&self, timezone: TimeZone, label: &str) -> Result<AppGenModel<f64>> {
        AppGenModel::new(
            self.config.model.clone(),
            self.config.variant,
            self.load_table(files::LOCATION_EMBEDDINGS)?,
            self.load_table(files::APP_EMBEDDINGS)?,
            timezone,
            derive_seed(self.config.seed, label, 0),
        )
    }

    fn train_model(&self) -> Result<()> {
        let (data, tz) = self.load_dataset()?;
        let split = self.split(&data)?;
        let model = self.fresh_model(tz, "model")?;
        let (model, meta) = train(model, &split.train, &split.validation, &self.config.train)?;
        let ckpt = ModelCheckpoint {
            model,
            meta,
            config_text: self.config.canonical_text(),
            config_hash: self.hash.clone(),
            categories: self.load_categories()?,
        };
        save_checkpoint(&ckpt, self.checkpoint_path())
    }

    pub fn load_checkpoint(&self) -> Result<ModelCheckpoint<f64>> {
        let expected = (!self.options.allow_hash_mismatch).then_some(self.hash.as_str());
        load_checkpoint(self.checkpoint_path(), expected)
    }

    /// The real sequences generation is conditioned on and compared with.
    pub fn reference(&self, data: &[UserSequence]) -> Result<Vec<UserSequence>> {
        let split = self.split(data)?;
        Ok(match self.config.generate_split {
            SplitName::Train => split.train,
            SplitName::Validation => split.validation,
            SplitName::Test => split.test,
            SplitName::All => data.to_vec(),
        })
    }

    fn generate(&self) -> Result<()> {
        let ckpt = self.load_checkpoint()?;
        let (data, tz) = self.load_dataset()?;
        let reference = self.reference(&data)?;
        if reference.is_empty() {
            return Err(Error::Empty("generation split has no sequences"));
        }
        let generated = generate_corpus(&ckpt.model, &reference, &ckpt.categories, derive_seed(self.config.seed, "generate", 0))?;
        write_dataset_with_meta(self.generated_path(), &generated, &self.meta(tz))
    }

    pub fn load_generated(&self) -> Result<Vec<UserSequence>> {
        let path = self.generated_path();
        self.require("generated corpus", &path)?;
        let (data, meta) = read_dataset_with_meta(&path)?;
        self.check_hash(&path, meta.config_hash)?;
        Ok(data)
    }

    fn itemsets(&self, data: &[UserSequence]) -> Result<ItemsetTable> {
        apriori(&sessionize(data, SESSION_GAP_SECS), self.config.analysis.min_support)
    }

    /// Popularity metrics plus itemset and clustering agreement between the
    /// reference split and the generated corpus.
    pub fn evaluation(&self) -> Result<EvalReport> {
        let ckpt = self.load_checkpoint()?;
        let (data, tz) = self.load_dataset()?;
        let reference = self.reference(&data)?;
        let generated = self.load_generated()?;
        let num_categories = ckpt.categories.iter().flatten().map(|c| c.index() + 1).max().unwrap_or(0);
        let mut report = evaluate(&reference, &generated, ckpt.model.num_apps(), num_categories)?;
        report.config_hash = Some(self.hash.clone());

        let a = &self.config.analysis;
        let agreement = itemset_agreement(&self.itemsets(&reference)?, &self.itemsets(&generated)?, a.top_m);
        match agreement {
            Ok(g) => {
                report.push("overlap", "itemsets", g.overlap);
                if let Some(r) = g.rank_correlation {
                    report.push("rank_correlation", "itemsets", r);
                }
            }
            Err(Error::Empty(_)) => {
                report
                    .extras
                    .insert("itemsets.note".into(), "no rules above min_support in the real corpus".into());
            }
            Err(e) => return Err(e),
        }
        let stations = reference
            .iter()
            .flat_map(|s| s.events())
            .map(|e| e.location)
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        let k = a.k_clusters.min(stations);
        let ari = location_cluster_agreement(&reference, &generated, k, derive_seed(self.config.seed, "clusters", 0), tz)?;
        report.push("ari", "clustering", ari);
        report.push("k", "clustering", k as f64);
        Ok(report)
    }

    fn evaluate(&self) -> Result<()> {
        let report = self.evaluation()?;
        let dir = self.reports_dir();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_text(&self.report_file(files::EVALUATION), &report.to_table())
    }

    fn profile_table(&self, data: &[UserSequence], tz: TimeZone) -> String {
        let mut s = format!("#config:{}\n#fields:category\thour\tshare\n", self.hash);
        for (id, p) in hourly_profiles(data, Domain::Category, tz) {
            for (h, v) in p.probs.iter().enumerate() {
                s.push_str(&format!("{id}\t{h}\t{v:.8}\n"));
            }
        }
        s
    }

    /// Trains a second model on one half of the real users and runs the
    /// three downstream experiments.
    fn downstream(&self, data: &[UserSequence], tz: TimeZone, categories: &[Option<CategoryId>]) -> Result<String> {
        let mut predictors: Vec<Box<dyn NextAppPredictor>> = vec![Box::new(FrequencyPredictor::default()), Box::new(MarkovPredictor::default())];
        let seed = self.config.seed;
        let table = downstream_protocol(
            data,
            derive_seed(seed, "halves", 0),
            &mut predictors,
            &self.config.analysis.k_values,
            |a, a_prime| {
                let cfg = TrainConfig {
                    seed: derive_seed(seed, "downstream-train", 0),
                    ..self.config.train.clone()
                };
                let (model, _) = train(self.fresh_model(tz, "downstream-model")?, a, &[], &cfg)?;
                let gen_seed = derive_seed(seed, "downstream-generate", 0);
                Ok((
                    generate_corpus(&model, a, categories, gen_seed)?,
                    generate_corpus(&model, a_prime, categories, derive_seed(gen_seed, "prime", 0))?,
                ))
            },
        )?;
        Ok(format!("#config:{}\n{}", self.hash, table.to_table()))
    }

    fn report(&self) -> Result<()> {
        let mut report = self.evaluation()?;
        let (data, tz) = self.load_dataset()?;
        let reference = self.reference(&data)?;
        let generated = self.load_generated()?;
        let dir = self.reports_dir();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        write_text(&self.report_file(files::CONFIG), &self.config.canonical_text())?;
        write_text(&self.report_file(files::PROFILES_REAL), &self.profile_table(&reference, tz))?;
        write_text(&self.report_file(files::PROFILES_GENERATED), &self.profile_table(&generated, tz))?;
        for (name, corpus) in [(files::ITEMSETS_REAL, &reference), (files::ITEMSETS_GENERATED, &generated)] {
            let table = self.itemsets(corpus)?;
            write_text(&self.report_file(name), &format!("#config:{}\n{}", self.hash, table.to_table()))?;
        }
        let clustering = format!(
            "#config:{}\nk = {}\nari = {:.8}\n",
            self.hash,
            report.get("k", "clustering").unwrap_or(0.0),
            report.get("ari", "clustering").unwrap_or(f64::NAN)
        );
        write_text(&self.report_file(files::CLUSTERING), &clustering)?;
        if self.config.analysis.downstream {
            let categories = self.load_categories()?;
            write_text(&self.report_file(files::DOWNSTREAM), &self.downstream(&data, tz, &categories)?)?;
            report.extras.insert("downstream.table".into(), files::DOWNSTREAM.into());
        }
        write_text(&self.report_file(files::SUMMARY), &report.to_key_value())
    }
}
