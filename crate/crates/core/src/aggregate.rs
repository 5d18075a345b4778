//! Feature responsibility over many problems, rankings, and the summary
//! statistics reported alongside them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregateError {
    #[error("`{0}` is not a member of the combination")]
    NotAMember(String),
    #[error("rankings cover different feature sets")]
    MismatchedIdSets,
    #[error("standard deviation needs at least two features, got {0}")]
    TooFewFeatures(usize),
}

/// Important feature sets of one problem, as feature ids.
pub type ProblemCauses = Vec<Vec<String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsibilityTable {
    pub fr: BTreeMap<String, f64>,
    /// Descending FR, ties by id.
    pub ranking: Vec<String>,
    /// Percent of total FR contributed by combinations of each length.
    pub by_length_contribution: BTreeMap<usize, f64>,
    /// FR divided by the maximum FR; all zero when every FR is zero.
    pub normalized_fr: BTreeMap<String, f64>,
}

impl ResponsibilityTable {
    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        self.ranking.iter().position(|f| f == feature).map(|p| p + 1)
    }

    pub fn top(&self, n: usize) -> &[String] {
        &self.ranking[..n.min(self.ranking.len())]
    }

    /// `feature_id,fr,normalized_fr,rank`, one row per feature in rank order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature_id,fr,normalized_fr,rank\n");
        for (i, f) in self.ranking.iter().enumerate() {
            out.push_str(&format!("{},{:.6},{:.6},{}\n", f, self.fr[f], self.normalized_fr[f], i + 1));
        }
        out
    }
}

/// Counts of (feature, combination length) occurrences. FR is derived from
/// integer counts so that scaling or concatenating problem sets scales and
/// adds FR exactly.
fn occurrence_counts<'a, I>(features: &[String], results: I) -> BTreeMap<&'a str, BTreeMap<usize, u64>>
where
    I: IntoIterator<Item = &'a ProblemCauses>,
{
    let known: BTreeSet<&str> = features.iter().map(String::as_str).collect();
    let mut counts: BTreeMap<&str, BTreeMap<usize, u64>> = BTreeMap::new();
    for problem in results {
        for combo in problem {
            for f in combo {
                if known.contains(f.as_str()) {
                    *counts.entry(f.as_str()).or_default().entry(combo.len()).or_default() += 1;
                } else {
                    log::warn!("ignoring `{f}`: not a schema feature");
                }
            }
        }
    }
    counts
}

fn inverse_square(length: usize) -> f64 {
    1.0 / (length * length) as f64
}

/// FR(f) = Σ over problems and over combinations S ∋ f of (1/|S|)².
pub fn feature_responsibility<'a, I>(features: &[String], results: I) -> ResponsibilityTable
where
    I: IntoIterator<Item = &'a ProblemCauses>,
{
    let counts = occurrence_counts(features, results);
    let mut fr: BTreeMap<String, f64> = features.iter().map(|f| (f.clone(), 0.0)).collect();
    let mut by_length: BTreeMap<usize, f64> = BTreeMap::new();
    for (f, lengths) in &counts {
        let mut total = 0.0;
        for (&len, &n) in lengths {
            let mass = n as f64 * inverse_square(len);
            total += mass;
            *by_length.entry(len).or_default() += mass;
        }
        fr.insert(f.to_string(), total);
    }
    let grand: f64 = by_length.values().sum();
    let by_length_contribution =
        by_length.into_iter().map(|(l, m)| (l, if grand > 0.0 { 100.0 * m / grand } else { 0.0 })).collect();
    ResponsibilityTable {
        ranking: rank(&fr),
        normalized_fr: normalize(&fr, Normalization::Max),
        fr,
        by_length_contribution,
    }
}

fn rank(fr: &BTreeMap<String, f64>) -> Vec<String> {
    let mut ids: Vec<&String> = fr.keys().collect();
    ids.sort_by(|a, b| fr[*b].total_cmp(&fr[*a]).then_with(|| a.cmp(b)));
    ids.into_iter().cloned().collect()
}

/// Responsibility of one member of a failing combination: the rest of the
/// combination is its contingency, so 1/|S|.
pub fn degree_of_responsibility<S: AsRef<str>>(combination: &[S], member: &str) -> Result<f64, AggregateError> {
    if !combination.iter().any(|f| f.as_ref() == member) {
        return Err(AggregateError::NotAMember(member.to_string()));
    }
    let contingency = combination.len() - 1;
    Ok(1.0 / (1 + contingency) as f64)
}

/// Kendall's τ-b between two orderings of the same ids (best first).
pub fn kendall_tau<S: AsRef<str>>(rank_a: &[S], rank_b: &[S]) -> Result<f64, AggregateError> {
    let positions = |r: &[S]| -> Result<BTreeMap<String, f64>, AggregateError> {
        let m: BTreeMap<String, f64> =
            r.iter().enumerate().map(|(i, f)| (f.as_ref().to_string(), -(i as f64))).collect();
        if m.len() != r.len() {
            return Err(AggregateError::MismatchedIdSets);
        }
        Ok(m)
    };
    kendall_tau_scores(&positions(rank_a)?, &positions(rank_b)?)
}

/// Kendall's τ-b between two score assignments; equal scores are ties.
///
/// When either side is entirely tied the coefficient is undefined; this
/// returns 1 if both sides are entirely tied and 0 otherwise.
pub fn kendall_tau_scores(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Result<f64, AggregateError> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(AggregateError::MismatchedIdSets);
    }
    let xs: Vec<f64> = a.values().copied().collect();
    let ys: Vec<f64> = b.values().copied().collect();
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            let dx = xs[i].total_cmp(&xs[j]) as i64;
            let dy = ys[i].total_cmp(&ys[j]) as i64;
            match (dx, dy) {
                (0, 0) => {
                    ties_a += 1;
                    ties_b += 1;
                }
                (0, _) => ties_a += 1,
                (_, 0) => ties_b += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let pairs = (xs.len() * xs.len().saturating_sub(1) / 2) as i64;
    let denom = (((pairs - ties_a) * (pairs - ties_b)) as f64).sqrt();
    if denom == 0.0 {
        return Ok(if ties_a == pairs && ties_b == pairs { 1.0 } else { 0.0 });
    }
    Ok((concordant - discordant) as f64 / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Divide by the maximum.
    #[default]
    Max,
    /// Divide by the total.
    Sum,
}

fn normalize(fr: &BTreeMap<String, f64>, how: Normalization) -> BTreeMap<String, f64> {
    let scale = match how {
        Normalization::Max => fr.values().copied().fold(0.0, f64::max),
        Normalization::Sum => fr.values().sum(),
    };
    fr.iter().map(|(f, v)| (f.clone(), if scale > 0.0 { v / scale } else { 0.0 })).collect()
}

/// Population standard deviation of the normalized FR values.
pub fn fr_std(table: &ResponsibilityTable, how: Normalization) -> Result<f64, AggregateError> {
    let n = table.fr.len();
    if n < 2 {
        return Err(AggregateError::TooFewFeatures(n));
    }
    let values: Vec<f64> = normalize(&table.fr, how).into_values().collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    Ok((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt())
}

/// Percent of total FR mass per combination length. A combination of
/// length ℓ contributes ℓ · (1/ℓ)² = 1/ℓ.
pub fn length_contribution<'a, I>(results: I) -> BTreeMap<usize, f64>
where
    I: IntoIterator<Item = &'a ProblemCauses>,
{
    let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
    for problem in results {
        for combo in problem {
            *counts.entry(combo.len()).or_default() += 1;
        }
    }
    let mass: BTreeMap<usize, f64> = counts.into_iter().map(|(l, n)| (l, n as f64 / l as f64)).collect();
    let total: f64 = mass.values().sum();
    mass.into_iter().map(|(l, m)| (l, if total > 0.0 { 100.0 * m / total } else { 0.0 })).collect()
}

/// Per feature, the number of tables ranking it within the top `k`.
pub fn topk_appearance(tables: &[ResponsibilityTable], k: usize) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> =
        tables.iter().flat_map(|t| t.ranking.iter()).map(|f| (f.clone(), 0)).collect();
    for t in tables {
        for f in t.top(k) {
            *counts.get_mut(f).expect("seeded above") += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn causes(sets: &[&[&str]]) -> ProblemCauses {
        sets.iter().map(|s| ids(s)).collect()
    }

    fn abcd() -> Vec<String> {
        ids(&["A", "B", "C", "D"])
    }

    #[test]
    fn fr_fixture() {
        let results = vec![causes(&[&["A"]]), causes(&[&["A"], &["B", "C"]])];
        let t = feature_responsibility(&abcd(), &results);
        assert!((t.fr["A"] - 2.0).abs() < 1e-9);
        assert!((t.fr["B"] - 0.25).abs() < 1e-9);
        assert!((t.fr["C"] - 0.25).abs() < 1e-9);
        assert_eq!(t.fr["D"], 0.0);
        assert_eq!(t.ranking, ids(&["A", "B", "C", "D"]));
        assert_eq!(t.normalized_fr["B"], 0.125);
        let total: f64 = t.by_length_contribution.values().sum();
        assert!((total - 100.0).abs() < 1e-9);
    }

    #[test]
    fn empty_and_wide_results() {
        let t = feature_responsibility(&ids(&["B", "A"]), &[]);
        assert_eq!(t.ranking, ids(&["A", "B"]));
        assert!(t.fr.values().all(|v| *v == 0.0));
        assert!(t.normalized_fr.values().all(|v| *v == 0.0));

        let t = feature_responsibility(&abcd(), &[causes(&[&["A", "B", "C", "D"]])]);
        assert!(t.fr.values().all(|v| *v == 1.0 / 16.0));
    }

    #[test]
    fn responsibility_degree() {
        assert_eq!(degree_of_responsibility(&["A"], "A"), Ok(1.0));
        assert_eq!(degree_of_responsibility(&["A", "B", "C"], "B"), Ok(1.0 / 3.0));
        assert_eq!(degree_of_responsibility(&["A", "B", "C", "D", "E"], "E"), Ok(0.2));
        assert_eq!(degree_of_responsibility(&["A"], "Z"), Err(AggregateError::NotAMember("Z".into())));
    }

    #[test]
    fn tau_examples() {
        let abc = ids(&["A", "B", "C"]);
        assert_eq!(kendall_tau(&abc, &abc), Ok(1.0));
        assert_eq!(kendall_tau(&abc, &ids(&["C", "B", "A"])), Ok(-1.0));
        assert!((kendall_tau(&abc, &ids(&["A", "C", "B"])).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(kendall_tau(&abc, &ids(&["A", "B", "D"])), Err(AggregateError::MismatchedIdSets));
        assert_eq!(kendall_tau(&abc, &ids(&["A", "A", "B"])), Err(AggregateError::MismatchedIdSets));
    }

    #[test]
    fn tau_b_with_ties() {
        // a: A>B=C, b: A>B>C. pairs: AB +, AC +, BC tied in a only.
        let a: BTreeMap<String, f64> = [("A", 3.0), ("B", 1.0), ("C", 1.0)].map(|(k, v)| (k.to_string(), v)).into();
        let b: BTreeMap<String, f64> = [("A", 3.0), ("B", 2.0), ("C", 1.0)].map(|(k, v)| (k.to_string(), v)).into();
        let tau = kendall_tau_scores(&a, &b).unwrap();
        assert!((tau - 2.0 / (2.0f64 * 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(kendall_tau_scores(&a, &b), kendall_tau_scores(&b, &a));
    }

    #[test]
    fn std_examples() {
        let table = |pairs: &[(&str, f64)]| {
            let fr: BTreeMap<String, f64> = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
            ResponsibilityTable {
                ranking: rank(&fr),
                normalized_fr: normalize(&fr, Normalization::Max),
                fr,
                by_length_contribution: BTreeMap::new(),
            }
        };
        assert_eq!(fr_std(&table(&[("A", 2.0), ("B", 2.0), ("C", 2.0)]), Normalization::Max), Ok(0.0));
        assert_eq!(fr_std(&table(&[("A", 3.0), ("B", 0.0)]), Normalization::Max), Ok(0.5));
        assert_eq!(fr_std(&table(&[("A", 0.0), ("B", 0.0)]), Normalization::Max), Ok(0.0));
        assert_eq!(fr_std(&table(&[("A", 3.0), ("B", 1.0)]), Normalization::Sum), Ok(0.25));
        assert_eq!(fr_std(&table(&[("A", 1.0)]), Normalization::Max), Err(AggregateError::TooFewFeatures(1)));
    }

    #[test]
    fn length_contribution_examples() {
        assert_eq!(length_contribution(&[causes(&[&["A"]])]), [(1, 100.0)].into());
        let mix = length_contribution(&[causes(&[&["A"]]), causes(&[&["B", "C"]])]);
        assert!((mix[&1] - 200.0 / 3.0).abs() < 1e-9);
        assert!((mix[&2] - 100.0 / 3.0).abs() < 1e-9);
        assert!(length_contribution(&[causes(&[])]).values().all(|v| *v == 0.0));
    }

    #[test]
    fn topk_examples() {
        let one = feature_responsibility(&abcd(), &[causes(&[&["B"]])]);
        assert!(topk_appearance(std::slice::from_ref(&one), 4).values().all(|c| *c == 1));

        let tables: Vec<ResponsibilityTable> = (0..12).map(|_| one.clone()).collect();
        assert_eq!(topk_appearance(&tables, 1)["B"], 12);

        let other = feature_responsibility(&abcd(), &[causes(&[&["A"], &["C"], &["D"]])]);
        assert_eq!(topk_appearance(&[one, other], 1)["B"], 1);
    }

    #[test]
    fn csv_has_header_and_one_row_per_feature() {
        let features: Vec<String> = (0..12).map(|i| format!("f{i:02}")).collect();
        let t = feature_responsibility(&features, &[vec![vec!["f03".to_string()]]]);
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 13);
        assert_eq!(csv.lines().nth(1), Some("f03,1.000000,1.000000,1"));
    }

    fn naive_tau(a: &[usize], b: &[usize]) -> f64 {
        let pos = |r: &[usize], x: usize| r.iter().position(|y| *y == x).unwrap();
        let n = a.len();
        let mut score = 0i64;
        for x in 0..n {
            for y in x + 1..n {
                let sa = (pos(a, x) as i64 - pos(a, y) as i64).signum();
                let sb = (pos(b, x) as i64 - pos(b, y) as i64).signum();
                score += sa * sb;
            }
        }
        score as f64 / (n * (n - 1) / 2) as f64
    }

    #[test]
    fn tau_matches_pair_counting() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for trial in 0..1000 {
            let n = 2 + trial % 7;
            let mut a: Vec<usize> = (0..n).collect();
            let mut b = a.clone();
            a.shuffle(&mut rng);
            b.shuffle(&mut rng);
            let name = |r: &[usize]| r.iter().map(|i| format!("x{i}")).collect::<Vec<_>>();
            let tau = kendall_tau(&name(&a), &name(&b)).unwrap();
            assert!((tau - naive_tau(&a, &b)).abs() < 1e-12);
        }
    }

    fn problem_sets() -> impl Strategy<Value = Vec<ProblemCauses>> {
        let combo = proptest::sample::subsequence(vec!["A", "B", "C", "D", "E"], 1..=4)
            .prop_map(|s| s.into_iter().map(String::from).collect::<Vec<_>>());
        proptest::collection::vec(proptest::collection::vec(combo, 0..4), 0..6)
    }

    proptest! {
        #[test]
        fn duplicating_problems_doubles_fr(results in problem_sets()) {
            let features = ids(&["A", "B", "C", "D", "E"]);
            let once = feature_responsibility(&features, &results);
            let doubled: Vec<ProblemCauses> = results.iter().chain(results.iter()).cloned().collect();
            let twice = feature_responsibility(&features, &doubled);
            for f in &features {
                prop_assert_eq!(twice.fr[f], 2.0 * once.fr[f]);
            }
            prop_assert_eq!(twice.ranking, once.ranking);
        }

        #[test]
        fn fr_is_additive(a in problem_sets(), b in problem_sets()) {
            let features = ids(&["A", "B", "C", "D", "E"]);
            let joint: Vec<ProblemCauses> = a.iter().chain(b.iter()).cloned().collect();
            let (ta, tb, tj) = (
                feature_responsibility(&features, &a),
                feature_responsibility(&features, &b),
                feature_responsibility(&features, &joint),
            );
            for f in &features {
                prop_assert!((tj.fr[f] - ta.fr[f] - tb.fr[f]).abs() < 1e-9);
            }
        }

        #[test]
        fn member_responsibilities_sum_to_one(len in 1usize..=12) {
            let combo: Vec<String> = (0..len).map(|i| format!("f{i}")).collect();
            let total: f64 = combo.iter().map(|f| degree_of_responsibility(&combo, f).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn length_contribution_sums_to_hundred(results in problem_sets()) {
            let c = length_contribution(&results);
            let total: f64 = c.values().sum();
            prop_assert!(c.is_empty() || (total - 100.0).abs() < 1e-9);
        }
    }
}
