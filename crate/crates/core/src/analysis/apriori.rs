use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{AppId, UserSequence};
use crate::error::{Error, Result};
use crate::metrics::spearmanr;

/// Inactivity gap that closes a session.
pub const SESSION_GAP_SECS: i64 = 30 * 60;

/// Splits each sequence into sessions wherever consecutive events are more
/// than `gap_secs` apart and returns the app set of every session.
pub fn sessionize(data: &[UserSequence], gap_secs: i64) -> Vec<BTreeSet<AppId>> {
    let mut out = Vec::new();
    for seq in data {
        let mut current = BTreeSet::new();
        let mut last: Option<i64> = None;
        for e in seq.events() {
            if last.is_some_and(|t| e.timestamp - t > gap_secs) {
                out.push(std::mem::take(&mut current));
            }
            current.insert(e.app);
            last = Some(e.timestamp);
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequentItemset {
    /// Sorted ascending.
    pub items: Vec<AppId>,
    pub support: f64,
}

/// A single-consequent rule `antecedent → consequent`; its support is that
/// of the union.
#[derive(Clone, Debug, PartialEq)]
pub struct AssociationRule {
    pub antecedent: Vec<AppId>,
    pub consequent: AppId,
    pub support: f64,
    pub confidence: f64,
}

impl AssociationRule {
    pub fn label(&self) -> String {
        let lhs: Vec<String> = self.antecedent.iter().map(|a| a.to_string()).collect();
        format!("{{{}}} -> {}", lhs.join(","), self.consequent)
    }
}

/// Frequent itemsets (support descending, then smaller and lexicographically
/// earlier sets first) and the rules derived from them (support descending,
/// confidence descending, then by ids).
#[derive(Clone, Debug, PartialEq)]
pub struct ItemsetTable {
    pub min_support: f64,
    pub transactions: usize,
    pub itemsets: Vec<FrequentItemset>,
    pub rules: Vec<AssociationRule>,
}

impl ItemsetTable {
    pub fn support(&self, items: &[AppId]) -> Option<f64> {
        let mut key = items.to_vec();
        key.sort_unstable();
        self.itemsets.iter().find(|s| s.items == key).map(|s| s.support)
    }

    /// 0-based position of a rule in [`ItemsetTable::rules`].
    pub fn rule_rank(&self, antecedent: &[AppId], consequent: AppId) -> Option<usize> {
        let mut key = antecedent.to_vec();
        key.sort_unstable();
        self.rules.iter().position(|r| r.antecedent == key && r.consequent == consequent)
    }

    pub fn rule(&self, antecedent: &[AppId], consequent: AppId) -> Option<&AssociationRule> {
        self.rule_rank(antecedent, consequent).map(|i| &self.rules[i])
    }

    /// Tab-separated `rank, rule, support, confidence` rows.
    pub fn to_table(&self) -> String {
        let mut s = String::from("#rank\trule\tsupport\tconfidence\n");
        for (i, r) in self.rules.iter().enumerate() {
            s.push_str(&format!("{}\t{}\t{:.6}\t{:.6}\n", i + 1, r.label(), r.support, r.confidence));
        }
        s
    }
}

fn count_support(transactions: &[BTreeSet<AppId>], candidate: &[AppId]) -> usize {
    transactions.iter().filter(|t| candidate.iter().all(|a| t.contains(a))).count()
}

/// Level-wise Apriori: candidates of size `k+1` join frequent `k`-sets that
/// share their first `k-1` items and are kept only if every `k`-subset is
/// frequent.
pub fn apriori(transactions: &[BTreeSet<AppId>], min_support: f64) -> Result<ItemsetTable> {
    if transactions.is_empty() {
        return Err(Error::Empty("apriori needs at least one transaction"));
    }
    if !(min_support > 0.0 && min_support <= 1.0) {
        return Err(Error::invalid("analysis.min_support", format!("must lie in (0, 1], got {min_support}")));
    }
    let n = transactions.len() as f64;
    let frequent = |count: usize| count as f64 >= min_support * n - 1e-9;

    let mut singles: BTreeMap<AppId, usize> = BTreeMap::new();
    for t in transactions {
        for &a in t {
            *singles.entry(a).or_default() += 1;
        }
    }
    let mut level: Vec<(Vec<AppId>, usize)> = singles.into_iter().filter(|&(_, c)| frequent(c)).map(|(a, c)| (vec![a], c)).collect();
    let mut all: Vec<(Vec<AppId>, usize)> = Vec::new();
    while !level.is_empty() {
        let known: BTreeSet<&Vec<AppId>> = level.iter().map(|(s, _)| s).collect();
        let mut next = Vec::new();
        for (i, (a, _)) in level.iter().enumerate() {
            for (b, _) in &level[i + 1..] {
                let k = a.len();
                if a[..k - 1] != b[..k - 1] {
                    continue;
                }
                let mut cand = a.clone();
                cand.push(b[k - 1]);
                cand.sort_unstable();
                let closed = (0..cand.len()).all(|skip| {
                    let sub: Vec<AppId> = cand.iter().enumerate().filter(|&(j, _)| j != skip).map(|(_, &x)| x).collect();
                    known.contains(&sub)
                });
                if closed {
                    let c = count_support(transactions, &cand);
                    if frequent(c) {
                        next.push((cand, c));
                    }
                }
            }
        }
        next.sort();
        next.dedup();
        all.append(&mut level);
        level = next;
    }

    let support_of: BTreeMap<Vec<AppId>, usize> = all.iter().cloned().collect();
    let mut rules = Vec::new();
    for (items, count) in &all {
        if items.len() < 2 {
            continue;
        }
        for (skip, &consequent) in items.iter().enumerate() {
            let antecedent: Vec<AppId> = items.iter().enumerate().filter(|&(j, _)| j != skip).map(|(_, &x)| x).collect();
            let ante_count = support_of[&antecedent];
            rules.push(AssociationRule {
                antecedent,
                consequent,
                support: *count as f64 / n,
                confidence: *count as f64 / ante_count as f64,
            });
        }
    }
    rules.sort_by(|x, y| {
        y.support
            .total_cmp(&x.support)
            .then(y.confidence.total_cmp(&x.confidence))
            .then_with(|| x.antecedent.cmp(&y.antecedent))
            .then(x.consequent.cmp(&y.consequent))
    });

    all.sort_by(|(a, ca), (b, cb)| cb.cmp(ca).then(a.len().cmp(&b.len())).then_with(|| a.cmp(b)));
    Ok(ItemsetTable {
        min_support,
        transactions: transactions.len(),
        itemsets: all
            .into_iter()
            .map(|(items, c)| FrequentItemset {
                items,
                support: c as f64 / n,
            })
            .collect(),
        rules,
    })
}

/// How well the top rules of a generated table match the real one.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemsetAgreement {
    /// Share of the real top-`m` rules also among the generated top-`m`.
    pub overlap: f64,
    /// Spearman correlation of rule supports over the union of both top-`m`
    /// lists (support 0 where a table lacks the rule); `None` when fewer
    /// than two rules or constant supports make it undefined.
    pub rank_correlation: Option<f64>,
}

pub fn itemset_agreement(real: &ItemsetTable, generated: &ItemsetTable, top_m: usize) -> Result<ItemsetAgreement> {
    if top_m == 0 {
        return Err(Error::InvalidArgument("top_m must be positive".into()));
    }
    let key = |r: &AssociationRule| (r.antecedent.clone(), r.consequent);
    let top_real: Vec<_> = real.rules.iter().take(top_m).map(key).collect();
    if top_real.is_empty() {
        return Err(Error::Empty("real itemset table has no rules"));
    }
    let top_gen: BTreeSet<_> = generated.rules.iter().take(top_m).map(key).collect();
    let shared = top_real.iter().filter(|k| top_gen.contains(*k)).count();

    let union: BTreeSet<_> = top_real.iter().cloned().chain(top_gen.iter().cloned()).collect();
    let support_in = |t: &ItemsetTable, (a, c): &(Vec<AppId>, AppId)| t.rule(a, *c).map_or(0.0, |r| r.support);
    let x: Vec<f64> = union.iter().map(|k| support_in(real, k)).collect();
    let y: Vec<f64> = union.iter().map(|k| support_in(generated, k)).collect();
    let rank_correlation = if x.len() >= 2 { spearmanr(&x, &y).ok() } else { None };
    Ok(ItemsetAgreement {
        overlap: shared as f64 / top_real.len() as f64,
        rank_correlation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Event, StationId};
    use proptest::{collection, prop_assert, proptest};

    fn set(ids: &[u32]) -> BTreeSet<AppId> {
        ids.iter().map(|&i| AppId(i)).collect()
    }

    fn ids(v: &[u32]) -> Vec<AppId> {
        v.iter().map(|&i| AppId(i)).collect()
    }

    /// Every non-empty subset of the item universe, counted directly.
    fn exhaustive(transactions: &[BTreeSet<AppId>], min_support: f64) -> BTreeMap<Vec<AppId>, f64> {
        let universe: Vec<AppId> = transactions.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let n = transactions.len() as f64;
        let mut out = BTreeMap::new();
        for mask in 1u32..(1 << universe.len()) {
            let items: Vec<AppId> = universe
                .iter()
                .enumerate()
                .filter(|&(i, _)| mask >> i & 1 == 1)
                .map(|(_, &a)| a)
                .collect();
            let c = transactions.iter().filter(|t| items.iter().all(|a| t.contains(a))).count() as f64;
            if c / n >= min_support - 1e-9 {
                out.insert(items, c / n);
            }
        }
        out
    }

    #[test]
    fn small_example() {
        let t = vec![set(&[0, 1]), set(&[0, 1]), set(&[0, 2])];
        let table = apriori(&t, 0.6).unwrap();
        assert_eq!(table.itemsets.len(), 3);
        assert_eq!(table.support(&ids(&[0])), Some(1.0));
        assert!((table.support(&ids(&[1])).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((table.support(&ids(&[1, 0])).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(table.support(&ids(&[2])), None);
        // 1 -> 0 has confidence 1, 0 -> 1 has 2/3
        assert_eq!(table.rules[0].label(), "{1} -> 0");
        assert!((table.rules[1].confidence - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn full_support_keeps_only_universal_items() {
        let t = vec![set(&[0, 1]), set(&[2, 3])];
        assert!(apriori(&t, 1.0).unwrap().itemsets.is_empty());
        let t = vec![set(&[0, 1]), set(&[0, 3])];
        let table = apriori(&t, 1.0).unwrap();
        assert_eq!(table.itemsets.len(), 1);
        assert_eq!(table.itemsets[0].items, ids(&[0]));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(apriori(&[], 0.5).is_err());
        assert!(apriori(&[set(&[0])], 0.0).is_err());
        assert!(apriori(&[set(&[0])], 1.5).is_err());
    }

    proptest! {
        #[test]
        fn matches_exhaustive_enumeration(
            raw in collection::vec(collection::btree_set(0u32..6, 1..5), 1..12),
            min_support in 0.05f64..1.0,
        ) {
            let t: Vec<BTreeSet<AppId>> = raw.iter().map(|s| s.iter().map(|&i| AppId(i)).collect()).collect();
            let table = apriori(&t, min_support).unwrap();
            let truth = exhaustive(&t, min_support);
            prop_assert!(table.itemsets.len() == truth.len());
            for s in &table.itemsets {
                prop_assert!((truth[&s.items] - s.support).abs() < 1e-12);
                // downward closure
                for skip in 0..s.items.len() {
                    let mut sub = s.items.clone();
                    sub.remove(skip);
                    prop_assert!(sub.is_empty() || table.support(&sub).is_some());
                }
            }
            for w in table.rules.windows(2) {
                prop_assert!(w[0].support >= w[1].support);
            }
        }
    }

    #[test]
    fn sessions_split_on_long_gaps() {
        let ev = |ts: i64, app: u32| Event {
            timestamp: ts,
            location: StationId(0),
            app: AppId(app),
            category: None,
        };
        let seq = UserSequence::new("u", vec![ev(0, 0), ev(600, 1), ev(600 + 1800, 0), ev(600 + 1801 + 1800, 2)]).unwrap();
        let s = sessionize(&[seq], SESSION_GAP_SECS);
        assert_eq!(s, vec![set(&[0, 1, 0]), set(&[2])]);
    }

    #[test]
    fn agreement_identical_and_disjoint() {
        let a = apriori(&[set(&[0, 1]), set(&[0, 1]), set(&[0, 1, 2]), set(&[2, 3])], 0.2).unwrap();
        let same = itemset_agreement(&a, &a, 4).unwrap();
        assert_eq!(same.overlap, 1.0);
        assert!((same.rank_correlation.unwrap() - 1.0).abs() < 1e-12);
        let b = apriori(&[set(&[5, 6]), set(&[5, 6]), set(&[7, 6])], 0.2).unwrap();
        assert_eq!(itemset_agreement(&a, &b, 4).unwrap().overlap, 0.0);
    }

    #[test]
    fn agreement_toy_pair() {
        // real rules: {0}->1, {1}->0 at 0.75, then {2}->3, {3}->2 at 0.25
        let real = apriori(&[set(&[0, 1]), set(&[0, 1]), set(&[0, 1]), set(&[2, 3])], 0.2).unwrap();
        // generated: {2}->3, {3}->2 at 2/3, then {0}->1, {1}->0 at 1/3
        let gen = apriori(&[set(&[0, 1]), set(&[2, 3]), set(&[2, 3])], 0.2).unwrap();
        assert_eq!(itemset_agreement(&real, &gen, 2).unwrap().overlap, 0.0);
        // top-3: real {0->1, 1->0, 2->3}, generated {2->3, 3->2, 0->1}
        let r = itemset_agreement(&real, &gen, 3).unwrap();
        assert!((r.overlap - 2.0 / 3.0).abs() < 1e-12);
        // union supports (0.75, 0.75, 0.25, 0.25) vs (1/3, 1/3, 2/3, 2/3)
        assert!((r.rank_correlation.unwrap() + 1.0).abs() < 1e-12);
    }
}
