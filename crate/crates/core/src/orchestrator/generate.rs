use rand::Rng;

use super::AppGenModel;
use crate::corpus::{AppId, CategoryId, TrajectoryPoint, UserSequence};
use crate::diffusion::{step_table, CosineDecoder, StepFeatures};
use crate::error::{Error, Result};
use crate::history::{Access, AccessLog, NoLog};
use crate::rng::sub_rng;
use crate::scalar::Scalar;

struct Sampler<'a, F> {
    model: &'a AppGenModel<F>,
    steps: Vec<StepFeatures<F>>,
    decoder: CosineDecoder<F>,
}

impl<'a, F: Scalar> Sampler<'a, F> {
    fn new(model: &'a AppGenModel<F>) -> Result<Self> {
        Ok(Sampler {
            model,
            steps: step_table(&model.denoiser, &model.schedule),
            decoder: model.decoder()?,
        })
    }

    fn run<R: Rng + ?Sized>(&self, trajectory: &[TrajectoryPoint], rng: &mut R, log: &mut dyn AccessLog) -> Result<Vec<AppId>> {
        for p in trajectory {
            if p.location.index() >= self.model.num_locations() {
                return Err(Error::UnknownId {
                    domain: "location",
                    id: p.location.to_string(),
                });
            }
        }
        let mut generated: Vec<AppId> = Vec::with_capacity(trajectory.len());
        for i in 0..trajectory.len() {
            log.record(Access::Target(i));
            let cond = self.model.conditions(trajectory, &generated, i, log)?;
            generated.push(self.model.sample_position(&self.steps, &self.decoder, &cond, rng)?);
        }
        Ok(generated)
    }
}

/// Generates one app per trajectory point, left to right. Position `i` is
/// conditioned on the apps generated before it and trajectory points up to
/// `i`; every read is reported to `log`.
pub fn generate_sequence<F: Scalar, R: Rng + ?Sized>(
    model: &AppGenModel<F>,
    trajectory: &[TrajectoryPoint],
    rng: &mut R,
    log: &mut dyn AccessLog,
) -> Result<Vec<AppId>> {
    Sampler::new(model)?.run(trajectory, rng, log)
}

/// Replaces the apps of every sequence in `real` with generated ones,
/// keeping users and trajectories. Sequence `k` draws from its own stream
/// derived from `seed`, so the result does not depend on evaluation order.
pub fn generate_corpus<F: Scalar>(
    model: &AppGenModel<F>,
    real: &[UserSequence],
    categories: &[Option<CategoryId>],
    seed: u64,
) -> Result<Vec<UserSequence>> {
    let sampler = Sampler::new(model)?;
    real.iter()
        .enumerate()
        .map(|(k, seq)| {
            let mut rng = sub_rng(seed, "generate", k as u64);
            let apps = sampler.run(&seq.trajectory(), &mut rng, &mut NoLog)?;
            seq.with_apps(&apps, categories)
        })
        .collect()
}
