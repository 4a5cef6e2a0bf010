//! Autoregressive training and generation over whole sequences, ablation
//! variants and self-contained checkpoints.

mod checkpoint;
mod generate;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, ModelCheckpoint, CHECKPOINT_VERSION};
pub use generate::{generate_corpus, generate_sequence};
pub use train::{train, LrSchedule, TrainConfig, TrainingMeta};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AppId, TimeZone, TrajectoryPoint};
use crate::diffusion::{make_schedule, CosineDecoder, DenoiserConfig, DenoiserParams, LossConfig, NoiseSchedule};
use crate::encoders::EmbeddingTable;
use crate::error::{Error, Result};
use crate::history::{build_window, AccessLog, AttentionParams, AttentionTrace, FeatureTables, HistoryWindow};
use crate::rng::sub_rng;
use crate::scalar::Scalar;

/// Which conditioning pathway is zeroed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    #[default]
    Full,
    /// Location vectors inside history points and the spatial half of `c`.
    NoSpatial,
    /// The whole historical condition `h̃`.
    NoHistory,
    /// The whole current context `c`.
    NoCurrentContext,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Full,
        AblationVariant::NoSpatial,
        AblationVariant::NoHistory,
        AblationVariant::NoCurrentContext,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoSpatial => "no_spatial",
            AblationVariant::NoHistory => "no_history",
            AblationVariant::NoCurrentContext => "no_current_context",
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            Error::invalid(
                "model.variant",
                format!("unknown variant `{s}` (expected full, no_spatial, no_history or no_current_context)"),
            )
        })
    }
}

/// Architecture and diffusion hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Sliding history window `k`.
    pub history_window: usize,
    pub attn_dim: usize,
    pub residual_channels: usize,
    pub cond_channels: usize,
    pub step_hidden: usize,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub lambda_alpha: f64,
    pub embedding_loss: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            history_window: 16,
            attn_dim: 64,
            residual_channels: 16,
            cond_channels: 2,
            step_hidden: 64,
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.2,
            lambda_alpha: 0.8,
            embedding_loss: true,
        }
    }
}

impl ModelConfig {
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda_alpha: self.lambda_alpha,
            embedding_term: self.embedding_loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.history_window == 0 {
            return Err(Error::invalid("model.history_window", "must be positive"));
        }
        if self.attn_dim == 0 {
            return Err(Error::invalid("model.attn_dim", "must be positive"));
        }
        self.loss().validate()?;
        let sched = make_schedule::<f64>(self.steps, self.beta_start, self.beta_end)?;
        let last = sched.alpha_bar(self.steps);
        if last >= 0.01 {
            return Err(Error::invalid(
                "diffusion.beta_end",
                format!("the schedule ends at alpha_bar = {last:.4}; raise beta_end or steps so it drops below 0.01"),
            ));
        }
        Ok(())
    }
}

/// A history window with the attention pass that consumed it.
pub(crate) type WindowTrace<F> = (HistoryWindow<F>, AttentionTrace<F>);

/// Condition tensors for one target position.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditions<F> {
    /// `h̃` (attention output plus empty-history flag).
    pub hist: Vec<F>,
    /// `c = [time ‖ location]` of the current point.
    pub ctx: Vec<F>,
}

/// Everything needed to generate: frozen tables, attention, denoiser and
/// schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct AppGenModel<F> {
    pub config: ModelConfig,
    pub variant: AblationVariant,
    pub tables: FeatureTables<F>,
    /// Multiplier taking app vectors to unit RMS before diffusion.
    pub scale: F,
    pub attention: AttentionParams<F>,
    pub denoiser: DenoiserParams<F>,
    pub schedule: NoiseSchedule<F>,
}

impl<F: Scalar> AppGenModel<F> {
    /// Fresh model around pre-trained location and app tables.
    pub fn new(
        config: ModelConfig,
        variant: AblationVariant,
        location: EmbeddingTable<F>,
        app: EmbeddingTable<F>,
        timezone: TimeZone,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let rms = app.rms();
        if rms == F::zero() {
            return Err(Error::InvalidArgument("app embedding table is all zeros".into()));
        }
        let tables = FeatureTables::new(location, app, timezone);
        let mut rng = sub_rng(seed, "model-init", 0);
        let attention = AttentionParams::init(tables.point_dim(), config.attn_dim, &mut rng);
        let denoiser = DenoiserParams::init(Self::denoiser_config(&config, &tables), &mut rng)?;
        let schedule = make_schedule(config.steps, config.beta_start, config.beta_end)?;
        Ok(AppGenModel {
            config,
            variant,
            tables,
            scale: F::one() / rms,
            attention,
            denoiser,
            schedule,
        })
    }

    pub(crate) fn denoiser_config(config: &ModelConfig, tables: &FeatureTables<F>) -> DenoiserConfig {
        DenoiserConfig {
            embed_dim: tables.app.dim(),
            hist_dim: config.attn_dim + 1,
            ctx_dim: tables.context_dim(),
            residual_channels: config.residual_channels,
            cond_channels: config.cond_channels,
            step_hidden: config.step_hidden,
        }
    }

    pub fn num_apps(&self) -> usize {
        self.tables.app.len()
    }

    pub fn num_locations(&self) -> usize {
        self.tables.location.len()
    }

    fn mask_spatial(&self) -> bool {
        self.variant == AblationVariant::NoSpatial
    }

    /// History window and attention trace for `position`, or `None` when the
    /// variant drops history.
    pub(crate) fn history(
        &self,
        trajectory: &[TrajectoryPoint],
        apps: &[AppId],
        position: usize,
        log: &mut dyn AccessLog,
    ) -> Result<(Vec<F>, Option<WindowTrace<F>>)> {
        if self.variant == AblationVariant::NoHistory {
            return Ok((vec![F::zero(); self.attention.output_dim()], None));
        }
        let window = build_window(
            &self.tables,
            trajectory,
            apps,
            position,
            self.config.history_window,
            self.mask_spatial(),
            log,
        )?;
        let (h, trace) = self.attention.forward(&window)?;
        Ok((h, trace.map(|t| (window, t))))
    }

    pub(crate) fn context(&self, trajectory: &[TrajectoryPoint], position: usize, log: &mut dyn AccessLog) -> Result<Vec<F>> {
        if self.variant == AblationVariant::NoCurrentContext {
            return Ok(vec![F::zero(); self.tables.context_dim()]);
        }
        log.record(crate::history::Access::Trajectory(position));
        self.tables.context(trajectory[position], self.mask_spatial())
    }

    /// The condition tensors the denoiser sees at `position`, with the
    /// variant's mask applied. Reads only `apps[..position]` and
    /// `trajectory[..=position]`.
    pub fn conditions(&self, trajectory: &[TrajectoryPoint], apps: &[AppId], position: usize, log: &mut dyn AccessLog) -> Result<Conditions<F>> {
        let (hist, _) = self.history(trajectory, apps, position, log)?;
        let ctx = self.context(trajectory, position, log)?;
        Ok(Conditions { hist, ctx })
    }

    pub fn decoder(&self) -> Result<CosineDecoder<F>> {
        CosineDecoder::new(&self.tables.app)
    }

    /// Draws one app vector for `position` and decodes it.
    pub(crate) fn sample_position<R: Rng + ?Sized>(
        &self,
        steps: &[crate::diffusion::StepFeatures<F>],
        decoder: &CosineDecoder<F>,
        cond: &Conditions<F>,
        rng: &mut R,
    ) -> Result<AppId> {
        let prepared = self.denoiser.prepare_condition(&cond.hist, &cond.ctx)?;
        let x = crate::diffusion::sample(&self.denoiser, &self.schedule, steps, &prepared, rng)?;
        decoder.decode(&x)
    }
}
