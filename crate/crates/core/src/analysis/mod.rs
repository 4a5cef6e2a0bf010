//! Corpus-level comparisons between real and generated data: hourly usage
//! profiles, frequent itemsets, location clustering agreement and the
//! next-app prediction protocol.

mod apriori;
mod cluster;
mod downstream;
mod profiles;

pub use apriori::{apriori, itemset_agreement, sessionize, AssociationRule, FrequentItemset, ItemsetAgreement, ItemsetTable, SESSION_GAP_SECS};
pub use cluster::{adjusted_rand_index, kmeans, location_cluster_agreement, location_features, KMeans};
pub use downstream::{
    downstream_protocol, evaluate_predictor, DownstreamRow, DownstreamTable, Experiment, FrequencyPredictor, MarkovPredictor, NextAppPredictor,
};
pub use profiles::{app_hourly_profile, hourly_profiles, HourlyProfile};
