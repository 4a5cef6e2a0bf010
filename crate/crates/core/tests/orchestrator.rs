use appgen_core::corpus::{generate_world, split_dataset, AppId, StationId, TimeZone, TrajectoryPoint, UserSequence, WorldSpec};
use appgen_core::encoders::TEMPORAL_DIM;
use appgen_core::encoders::{build_urban_kg, train_app_embeddings, train_tucker, SkipGramConfig, TuckerConfig};
use appgen_core::history::{Access, NoLog};
use appgen_core::orchestrator::{
    decode_checkpoint, encode_checkpoint, generate_corpus, generate_sequence, load_checkpoint, save_checkpoint, train, AblationVariant, AppGenModel,
    ModelCheckpoint, ModelConfig, TrainConfig,
};
use appgen_core::rng::seeded;
use appgen_core::Error;

struct Fixture {
    data: Vec<UserSequence>,
    model: AppGenModel<f64>,
    categories: Vec<Option<appgen_core::corpus::CategoryId>>,
}

fn fixture(variant: AblationVariant, epochs: usize) -> Fixture {
    let spec = WorldSpec {
        num_users: 10,
        num_apps: 6,
        num_stations: 5,
        num_regions: 2,
        num_business_areas: 2,
        num_pois: 4,
        num_categories: 2,
        horizon_days: 2,
        sessions_per_day: 3.0,
        events_per_session: 3.0,
        ..WorldSpec::default()
    };
    let world = generate_world(&spec).unwrap();
    let apps: Vec<Vec<AppId>> = world.sequences.iter().map(|s| s.apps()).collect();
    let app = train_app_embeddings::<f64>(
        &apps,
        6,
        &SkipGramConfig {
            dim: 4,
            epochs: 2,
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let kg = build_urban_kg(&world.geography).unwrap();
    let tc = TuckerConfig {
        entity_dim: 4,
        relation_dim: 4,
        epochs: 5,
        ..Default::default()
    };
    let (_, location, _) = train_tucker::<f64>(&kg, &tc, 1).unwrap();
    let cfg = ModelConfig {
        history_window: 4,
        attn_dim: 4,
        residual_channels: 4,
        step_hidden: 8,
        steps: 20,
        beta_end: 0.4,
        ..Default::default()
    };
    let mut model = AppGenModel::new(cfg, variant, location, app, TimeZone::UTC, 3).unwrap();
    if epochs > 0 {
        let split = split_dataset(&world.sequences, [0.7, 0.2, 0.1], 1).unwrap();
        let tcfg = TrainConfig {
            epochs,
            batch_size: 16,
            ..Default::default()
        };
        model = train(model, &split.train, &split.validation, &tcfg).unwrap().0;
    }
    Fixture {
        data: world.sequences.clone(),
        model,
        categories: world.category_map(),
    }
}

fn checkpoint(f: &Fixture) -> ModelCheckpoint<f64> {
    ModelCheckpoint {
        model: f.model.clone(),
        meta: Default::default(),
        config_text: "run.seed = 1\n".into(),
        config_hash: "00aa".into(),
        categories: f.categories.clone(),
    }
}

#[test]
fn checkpoint_round_trip_is_exact_and_generation_matches() {
    let f = fixture(AblationVariant::Full, 1);
    let ckpt = checkpoint(&f);
    let bytes = encode_checkpoint(&ckpt).unwrap();
    let back: ModelCheckpoint<f64> = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint::<f64>(&path, Some("00aa")).unwrap();
    let data = &f.data[..3];
    assert_eq!(
        generate_corpus(&f.model, data, &f.categories, 11).unwrap(),
        generate_corpus(&loaded.model, data, &loaded.categories, 11).unwrap()
    );
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let f = fixture(AblationVariant::Full, 0);
    let bytes = encode_checkpoint(&checkpoint(&f)).unwrap();
    for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(decode_checkpoint::<f64>(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))),
            "cut {cut}"
        );
    }
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 1;
    assert!(matches!(decode_checkpoint::<f64>(&flipped), Err(Error::CorruptCheckpoint(_))));
    let mut version = bytes.clone();
    version[8] = 99;
    assert!(matches!(
        decode_checkpoint::<f64>(&version),
        Err(Error::CheckpointVersion { found: 99, .. })
    ));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let missing = load_checkpoint::<f64>(&path, None).unwrap_err();
    assert_eq!(missing.tag(), "missing-checkpoint");
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        load_checkpoint::<f64>(&path, Some("ffff")),
        Err(Error::ConfigHashMismatch { .. })
    ));
}

#[test]
fn generation_never_reads_the_future() {
    for variant in AblationVariant::ALL {
        let f = fixture(variant, 0);
        let traj = f.data.iter().max_by_key(|s| s.len()).unwrap().trajectory();
        let mut log: Vec<Access> = Vec::new();
        let apps = generate_sequence(&f.model, &traj, &mut seeded(4), &mut log).unwrap();
        assert_eq!(apps.len(), traj.len());
        let mut target = None;
        let mut future_reads = 0;
        for a in &log {
            match *a {
                Access::Target(i) => target = Some(i),
                Access::Trajectory(j) => future_reads += usize::from(j > target.unwrap()),
                Access::App(j) => future_reads += usize::from(j >= target.unwrap()),
            }
        }
        assert_eq!(future_reads, 0, "{variant}");
        assert_eq!(target, Some(traj.len() - 1));
    }
}

#[test]
fn ablation_masks_are_exactly_zero() {
    let f = fixture(AblationVariant::Full, 0);
    let seq = &f.data[0];
    let (traj, apps) = (seq.trajectory(), seq.apps());
    let pos = traj.len() - 1;
    let with = |variant| AppGenModel { variant, ..f.model.clone() };

    let c = with(AblationVariant::NoHistory).conditions(&traj, &apps, pos, &mut NoLog).unwrap();
    assert!(c.hist.iter().all(|&v| v == 0.0));
    assert!(c.ctx.iter().any(|&v| v != 0.0));

    let c = with(AblationVariant::NoCurrentContext).conditions(&traj, &apps, pos, &mut NoLog).unwrap();
    assert!(c.ctx.iter().all(|&v| v == 0.0));

    let no_spatial = with(AblationVariant::NoSpatial);
    let c = no_spatial.conditions(&traj, &apps, pos, &mut NoLog).unwrap();
    assert!(c.ctx[TEMPORAL_DIM..].iter().all(|&v| v == 0.0));
    // moving every point to another station changes nothing once space is masked
    let moved: Vec<TrajectoryPoint> = traj
        .iter()
        .map(|p| TrajectoryPoint {
            location: StationId((p.location.0 + 1) % 5),
            ..*p
        })
        .collect();
    assert_eq!(no_spatial.conditions(&moved, &apps, pos, &mut NoLog).unwrap(), c);
    assert_ne!(
        f.model.conditions(&moved, &apps, pos, &mut NoLog).unwrap(),
        f.model.conditions(&traj, &apps, pos, &mut NoLog).unwrap()
    );
}

#[test]
fn single_point_trajectory_cold_start() {
    let f = fixture(AblationVariant::Full, 0);
    let traj = vec![f.data[0].trajectory()[0]];
    let c = f.model.conditions(&traj, &[], 0, &mut NoLog).unwrap();
    let (flag, rest) = c.hist.split_last().unwrap();
    assert_eq!(*flag, 1.0);
    assert!(rest.iter().all(|&v| v == 0.0));
    let apps = generate_sequence(&f.model, &traj, &mut seeded(1), &mut NoLog).unwrap();
    assert_eq!(apps.len(), 1);
    assert!(apps[0].index() < 6);
}

#[test]
fn unknown_location_is_an_error() {
    let f = fixture(AblationVariant::Full, 0);
    let traj = vec![TrajectoryPoint {
        timestamp: 1_461_024_000,
        location: StationId(99),
    }];
    let err = generate_sequence(&f.model, &traj, &mut seeded(1), &mut NoLog).unwrap_err();
    assert!(matches!(err, Error::UnknownId { domain: "location", .. }));
}

#[test]
fn generation_is_deterministic_per_seed() {
    let f = fixture(AblationVariant::Full, 0);
    let data = &f.data[..4];
    let a = generate_corpus(&f.model, data, &f.categories, 5).unwrap();
    assert_eq!(a, generate_corpus(&f.model, data, &f.categories, 5).unwrap());
    assert_ne!(a, generate_corpus(&f.model, data, &f.categories, 6).unwrap());
    for (g, r) in a.iter().zip(data) {
        assert_eq!(g.trajectory(), r.trajectory());
        assert_eq!(g.user_id(), r.user_id());
    }
}
