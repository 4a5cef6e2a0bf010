//! Distribution-similarity metrics between generated and real corpora,
//! popularity distributions, and top-k ranking metrics.

mod distance;
mod popularity;
mod ranking;
mod report;

pub use distance::{crps, jsd, m_tv, mae, rmse, spearmanr};
pub use popularity::{per_user_popularity, popularity, Domain, PopularityDistribution};
pub use ranking::{ranking_metrics, RankingReport};
pub use report::{evaluate, EvalReport, MetricEntry, MetricSet, PERCENT};
