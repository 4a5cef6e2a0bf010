//! Historical behavioural condition: a causal sliding window over past
//! points, each featurized as `[time ‖ location ‖ app]`, summarized by
//! single-head scaled dot-product attention queried by the latest point.

use rand::Rng;

use crate::corpus::{AppId, StationId, TimeZone, TrajectoryPoint};
use crate::encoders::{temporal_table, EmbeddingTable, TEMPORAL_DIM};
use crate::error::{Error, Result};
use crate::rng::uniform_vec;
use crate::scalar::{all_finite, dot, Scalar};

/// A read performed while building conditions, by 0-based position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access {
    /// Generation starts working on this position.
    Target(usize),
    Trajectory(usize),
    App(usize),
}

pub trait AccessLog {
    fn record(&mut self, access: Access);
}

/// Discards accesses.
pub struct NoLog;

impl AccessLog for NoLog {
    fn record(&mut self, _: Access) {}
}

impl AccessLog for Vec<Access> {
    fn record(&mut self, access: Access) {
        self.push(access);
    }
}

/// The frozen lookup tables used to featurize points and contexts.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTables<F> {
    pub time: EmbeddingTable<F>,
    pub location: EmbeddingTable<F>,
    pub app: EmbeddingTable<F>,
    pub timezone: TimeZone,
}

impl<F: Scalar> FeatureTables<F> {
    pub fn new(location: EmbeddingTable<F>, app: EmbeddingTable<F>, timezone: TimeZone) -> Self {
        FeatureTables {
            time: temporal_table(),
            location,
            app,
            timezone,
        }
    }

    /// Length of one history point `[t ‖ l ‖ a]`.
    pub fn point_dim(&self) -> usize {
        TEMPORAL_DIM + self.location.dim() + self.app.dim()
    }

    /// Length of the current context `[t ‖ l]`.
    pub fn context_dim(&self) -> usize {
        TEMPORAL_DIM + self.location.dim()
    }

    fn push_time_place(&self, out: &mut Vec<F>, timestamp: i64, location: StationId, mask_spatial: bool) -> Result<()> {
        let bin = self.timezone.bin(timestamp).index();
        out.extend_from_slice(self.time.row(bin));
        let l = self.location.get(location.index())?;
        if mask_spatial {
            out.extend(std::iter::repeat_n(F::zero(), l.len()));
        } else {
            out.extend_from_slice(l);
        }
        Ok(())
    }

    pub fn point(&self, p: TrajectoryPoint, app: AppId, mask_spatial: bool) -> Result<Vec<F>> {
        let mut out = Vec::with_capacity(self.point_dim());
        self.push_time_place(&mut out, p.timestamp, p.location, mask_spatial)?;
        out.extend_from_slice(self.app.get(app.index())?);
        Ok(out)
    }

    /// Current spatio-temporal context `c_i`; the spatial half is zeroed
    /// under `mask_spatial`.
    pub fn context(&self, p: TrajectoryPoint, mask_spatial: bool) -> Result<Vec<F>> {
        let mut out = Vec::with_capacity(self.context_dim());
        self.push_time_place(&mut out, p.timestamp, p.location, mask_spatial)?;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryWindow<F> {
    /// 0-based target position.
    pub position: usize,
    /// 0-based positions of the points, ascending, all `< position`.
    pub indices: Vec<usize>,
    pub points: Vec<Vec<F>>,
}

impl<F> HistoryWindow<F> {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Window of the `k` points before `position`, featurized with apps taken
/// from `apps` (the generated prefix at generation time, ground truth under
/// teacher forcing). Only `apps[..position]` and
/// `trajectory[..position]` are read.
pub fn build_window<F: Scalar>(
    tables: &FeatureTables<F>,
    trajectory: &[TrajectoryPoint],
    apps: &[AppId],
    position: usize,
    k: usize,
    mask_spatial: bool,
    log: &mut dyn AccessLog,
) -> Result<HistoryWindow<F>> {
    if position >= trajectory.len() {
        return Err(Error::InvalidArgument(format!(
            "position {position} is outside a trajectory of length {}",
            trajectory.len()
        )));
    }
    if apps.len() < position {
        return Err(Error::InvalidArgument(format!("{} apps available, {position} needed", apps.len())));
    }
    let start = position.saturating_sub(k);
    let mut points = Vec::with_capacity(position - start);
    for j in start..position {
        log.record(Access::Trajectory(j));
        log.record(Access::App(j));
        points.push(tables.point(trajectory[j], apps[j], mask_spatial)?);
    }
    Ok(HistoryWindow {
        position,
        indices: (start..position).collect(),
        points,
    })
}

/// Query, key and value projections, each `d_attn × d_h` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<F> {
    pub input_dim: usize,
    pub attn_dim: usize,
    pub wq: Vec<F>,
    pub wk: Vec<F>,
    pub wv: Vec<F>,
}

/// Forward intermediates needed by [`AttentionParams::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace<F> {
    pub query: Vec<F>,
    pub keys: Vec<Vec<F>>,
    pub values: Vec<Vec<F>>,
    pub weights: Vec<F>,
}

fn matvec<F: Scalar>(w: &[F], x: &[F], rows: usize) -> Vec<F> {
    let cols = x.len();
    (0..rows).map(|r| dot(&w[r * cols..(r + 1) * cols], x)).collect()
}

fn outer_add<F: Scalar>(g: &mut [F], u: &[F], x: &[F]) {
    let cols = x.len();
    for (r, &ur) in u.iter().enumerate() {
        if ur != F::zero() {
            for (gi, &xi) in g[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *gi += ur * xi;
            }
        }
    }
}

impl<F: Scalar> AttentionParams<F> {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, attn_dim: usize, rng: &mut R) -> Self {
        let bound = (1.0 / input_dim as f64).sqrt();
        let n = input_dim * attn_dim;
        AttentionParams {
            input_dim,
            attn_dim,
            wq: uniform_vec(rng, n, bound),
            wk: uniform_vec(rng, n, bound),
            wv: uniform_vec(rng, n, bound),
        }
    }

    pub fn zeros(input_dim: usize, attn_dim: usize) -> Self {
        let n = input_dim * attn_dim;
        AttentionParams {
            input_dim,
            attn_dim,
            wq: vec![F::zero(); n],
            wk: vec![F::zero(); n],
            wv: vec![F::zero(); n],
        }
    }

    /// Length of `h̃`: the attention output plus the empty-history flag.
    pub fn output_dim(&self) -> usize {
        self.attn_dim + 1
    }

    /// Attends over the window with the most recent point as query.
    /// Returns `h̃ = [Σ γ_p W_v h_p ‖ 0]`, or `[0 ‖ 1]` for an empty window.
    pub fn forward(&self, window: &HistoryWindow<F>) -> Result<(Vec<F>, Option<AttentionTrace<F>>)> {
        let d = self.attn_dim;
        let Some(last) = window.points.last() else {
            let mut out = vec![F::zero(); d + 1];
            out[d] = F::one();
            return Ok((out, None));
        };
        for p in &window.points {
            if p.len() != self.input_dim {
                return Err(Error::DimensionMismatch {
                    what: "history point",
                    expected: self.input_dim,
                    got: p.len(),
                });
            }
            if !all_finite(p) {
                return Err(Error::NonFinite("history point".into()));
            }
        }
        let query = matvec(&self.wq, last, d);
        let keys: Vec<Vec<F>> = window.points.iter().map(|p| matvec(&self.wk, p, d)).collect();
        let values: Vec<Vec<F>> = window.points.iter().map(|p| matvec(&self.wv, p, d)).collect();
        let scale = F::one() / F::of_usize(d).sqrt();
        let scores: Vec<F> = keys.iter().map(|k| dot(&query, k) * scale).collect();
        let weights = softmax(&scores);
        let mut out = vec![F::zero(); d + 1];
        for (w, v) in weights.iter().zip(&values) {
            for (o, &x) in out.iter_mut().zip(v) {
                *o += *w * x;
            }
        }
        Ok((
            out,
            Some(AttentionTrace {
                query,
                keys,
                values,
                weights,
            }),
        ))
    }

    /// Accumulates parameter gradients given `∂L/∂h̃` (flag entry ignored).
    pub fn backward(&self, window: &HistoryWindow<F>, trace: &AttentionTrace<F>, grad_out: &[F], grad: &mut AttentionParams<F>) {
        let d = self.attn_dim;
        let g_out = &grad_out[..d];
        let scale = F::one() / F::of_usize(d).sqrt();
        let g_gamma: Vec<F> = trace.values.iter().map(|v| dot(g_out, v)).collect();
        let mean: F = trace.weights.iter().zip(&g_gamma).map(|(&w, &g)| w * g).sum();
        let mut g_query = vec![F::zero(); d];
        for (p, h) in window.points.iter().enumerate() {
            let w = trace.weights[p];
            let g_v: Vec<F> = g_out.iter().map(|&g| w * g).collect();
            outer_add(&mut grad.wv, &g_v, h);
            let g_s = w * (g_gamma[p] - mean) * scale;
            for (gq, &k) in g_query.iter_mut().zip(&trace.keys[p]) {
                *gq += g_s * k;
            }
            let g_k: Vec<F> = trace.query.iter().map(|&q| g_s * q).collect();
            outer_add(&mut grad.wk, &g_k, h);
        }
        let last = window.points.last().expect("trace implies a non-empty window");
        outer_add(&mut grad.wq, &g_query, last);
    }

    pub fn params_mut(&mut self) -> [&mut Vec<F>; 3] {
        [&mut self.wq, &mut self.wk, &mut self.wv]
    }

    pub fn params(&self) -> [&Vec<F>; 3] {
        [&self.wq, &self.wk, &self.wv]
    }
}

pub fn softmax<F: Scalar>(scores: &[F]) -> Vec<F> {
    let max = scores.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = scores.iter().map(|&s| (s - max).exp()).collect();
    let z: F = e.iter().copied().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Convenience wrapper: build the window and attend over it.
#[allow(clippy::too_many_arguments)]
pub fn encode_history<F: Scalar>(
    tables: &FeatureTables<F>,
    params: &AttentionParams<F>,
    trajectory: &[TrajectoryPoint],
    apps: &[AppId],
    position: usize,
    k: usize,
    mask_spatial: bool,
    log: &mut dyn AccessLog,
) -> Result<Vec<F>> {
    let w = build_window(tables, trajectory, apps, position, k, mask_spatial, log)?;
    Ok(params.forward(&w)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EmbeddingDomain;
    use crate::rng::{normal_vec, seeded};
    use proptest::{prop_assert, prop_assert_eq, proptest};

    fn tables(dim: usize) -> FeatureTables<f64> {
        let mut rng = seeded(1);
        let loc = EmbeddingTable::from_flat(EmbeddingDomain::Location, dim, normal_vec(&mut rng, 4 * dim)).unwrap();
        let app = EmbeddingTable::from_flat(EmbeddingDomain::App, dim, normal_vec(&mut rng, 5 * dim)).unwrap();
        FeatureTables::new(loc, app, TimeZone::UTC)
    }

    fn trajectory(n: usize) -> Vec<TrajectoryPoint> {
        (0..n)
            .map(|i| TrajectoryPoint {
                timestamp: 1800 * i as i64,
                location: StationId((i % 4) as u32),
            })
            .collect()
    }

    fn window(pos: usize, k: usize) -> Vec<usize> {
        let t = tables(2);
        let apps = vec![AppId(0); 20];
        build_window(&t, &trajectory(20), &apps, pos, k, false, &mut NoLog).unwrap().indices
    }

    #[test]
    fn window_indices() {
        assert_eq!(window(2, 2), vec![0, 1]);
        assert!(window(0, 4).is_empty());
        assert_eq!(window(9, 4), vec![5, 6, 7, 8]);
        assert_eq!(window(3, 16), vec![0, 1, 2]);
    }

    #[test]
    fn point_layout_and_spatial_mask() {
        let t = tables(3);
        let p = TrajectoryPoint {
            timestamp: 0,
            location: StationId(1),
        };
        let v = t.point(p, AppId(2), false).unwrap();
        assert_eq!(v.len(), 128 + 3 + 3);
        assert_eq!(&v[128..131], t.location.row(1));
        assert_eq!(&v[131..], t.app.row(2));
        let m = t.point(p, AppId(2), true).unwrap();
        assert!(m[128..131].iter().all(|&x| x == 0.0));
        let c = t.context(p, true).unwrap();
        assert!(c[128..].iter().all(|&x| x == 0.0));
        assert!(t.point(p, AppId(9), false).is_err());
    }

    #[test]
    fn empty_window_sets_flag() {
        let mut rng = seeded(2);
        let a = AttentionParams::<f64>::init(4, 3, &mut rng);
        let w = HistoryWindow {
            position: 0,
            indices: vec![],
            points: vec![],
        };
        assert_eq!(a.forward(&w).unwrap().0, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn singleton_and_duplicate_windows() {
        let mut rng = seeded(3);
        let a = AttentionParams::<f64>::init(4, 3, &mut rng);
        let h: Vec<f64> = normal_vec(&mut rng, 4);
        let w1 = HistoryWindow {
            position: 1,
            indices: vec![0],
            points: vec![h.clone()],
        };
        let (out, tr) = a.forward(&w1).unwrap();
        assert_eq!(tr.unwrap().weights, vec![1.0]);
        assert_eq!(&out[..3], &matvec(&a.wv, &h, 3)[..]);
        let w2 = HistoryWindow {
            position: 2,
            indices: vec![0, 1],
            points: vec![h.clone(), h],
        };
        assert_eq!(a.forward(&w2).unwrap().1.unwrap().weights, vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_mismatched_points() {
        let a = AttentionParams::<f64>::zeros(4, 2);
        let w = HistoryWindow {
            position: 1,
            indices: vec![0],
            points: vec![vec![1.0; 3]],
        };
        assert!(a.forward(&w).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = seeded(4);
        let a = AttentionParams::<f64>::init(5, 3, &mut rng);
        let w = HistoryWindow {
            position: 3,
            indices: vec![0, 1, 2],
            points: (0..3).map(|_| normal_vec(&mut rng, 5)).collect(),
        };
        let g_out: Vec<f64> = normal_vec(&mut rng, 4);
        let loss = |p: &AttentionParams<f64>| dot(&p.forward(&w).unwrap().0[..3], &g_out[..3]);
        let (_, tr) = a.forward(&w).unwrap();
        let mut g = AttentionParams::zeros(5, 3);
        a.backward(&w, &tr.unwrap(), &g_out, &mut g);
        let h = 1e-6;
        for m in 0..3 {
            for idx in 0..15 {
                let mut p = a.clone();
                p.params_mut()[m][idx] += h;
                let mut q = a.clone();
                q.params_mut()[m][idx] -= h;
                let fd = (loss(&p) - loss(&q)) / (2.0 * h);
                let an = g.params()[m][idx];
                assert!(
                    (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6) < 1e-5,
                    "matrix {m} idx {idx}: {an} vs {fd}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn future_changes_do_not_affect_history(pos in 0usize..12, k in 1usize..6, seed in 0u64..1000) {
            let t = tables(3);
            let mut rng = seeded(seed);
            let a = AttentionParams::<f64>::init(t.point_dim(), 4, &mut rng);
            let traj = trajectory(12);
            let apps: Vec<AppId> = (0..12).map(|_| AppId(rng.random_range(0..5))).collect();
            let mut log = Vec::new();
            let h = encode_history(&t, &a, &traj, &apps, pos, k, false, &mut log).unwrap();
            prop_assert!(log.iter().all(|acc| matches!(acc, Access::App(j) | Access::Trajectory(j) if *j < pos)));

            let mut traj2 = traj.clone();
            let mut apps2 = apps.clone();
            for j in pos..12 {
                traj2[j].location = StationId(((j + 1) % 4) as u32);
                traj2[j].timestamp += 7;
                apps2[j] = AppId((apps2[j].0 + 1) % 5);
            }
            let h2 = encode_history(&t, &a, &traj2, &apps2[..pos], pos, k, false, &mut NoLog).unwrap();
            prop_assert_eq!(h, h2);
        }

        #[test]
        fn weights_form_a_distribution(n in 1usize..10, seed in 0u64..1000) {
            let mut rng = seeded(seed);
            let a = AttentionParams::<f64>::init(6, 4, &mut rng);
            let w = HistoryWindow { position: n, indices: (0..n).collect(), points: (0..n).map(|_| normal_vec(&mut rng, 6)).collect() };
            let weights = a.forward(&w).unwrap().1.unwrap().weights;
            prop_assert!(weights.iter().all(|&x| x >= 0.0));
            prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
