//! Response-ranking metrics over candidate groups: R_n@k, MAP, MRR and P@1.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

pub const CUTOFFS: [usize; 3] = [1, 2, 5];
pub const COLUMNS: [&str; 6] = ["R@1", "R@2", "R@5", "MAP", "MRR", "P@1"];

/// Scored candidates for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGroup {
    pub context_id: usize,
    pub candidates: Vec<(f64, u8)>,
}

impl CandidateGroup {
    pub fn new(context_id: usize, candidates: Vec<(f64, u8)>) -> Self {
        Self {
            context_id,
            candidates,
        }
    }

    pub fn num_positives(&self) -> usize {
        self.candidates.iter().filter(|c| c.1 == 1).count()
    }
}

/// Candidate indices by descending score; ties keep input order.
pub fn rank_group(g: &CandidateGroup) -> Vec<usize> {
    let mut order: Vec<usize> = (0..g.candidates.len()).collect();
    order.sort_by(|&a, &b| g.candidates[b].0.total_cmp(&g.candidates[a].0));
    order
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMetrics {
    /// hit@1, hit@2, hit@5.
    pub hits: [f64; 3],
    pub average_precision: f64,
    pub reciprocal_rank: f64,
    pub precision_at_1: f64,
}

/// `None` marks a group without positives; it is skipped in aggregation.
pub fn group_metrics(g: &CandidateGroup) -> Option<GroupMetrics> {
    let order = rank_group(g);
    let labels: Vec<u8> = order.iter().map(|&i| g.candidates[i].1).collect();
    let first = labels.iter().position(|&y| y == 1)? + 1;
    let mut hits = [0.0; 3];
    for (h, &k) in hits.iter_mut().zip(&CUTOFFS) {
        if first <= k {
            *h = 1.0;
        }
    }
    Some(GroupMetrics {
        hits,
        average_precision: average_precision(&labels),
        reciprocal_rank: 1.0 / first as f64,
        precision_at_1: f64::from(labels[0]),
    })
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Mean of precision@rank over positive ranks. The sum is kept as an exact
/// fraction so small cases round once (AP for ranks 1 and 3 is exactly the
/// double nearest 5/6); on overflow it falls back to floating point.
fn average_precision(ranked_labels: &[u8]) -> f64 {
    let exact = || -> Option<f64> {
        let (mut num, mut den, mut found) = (0u128, 1u128, 0u128);
        for (r, &y) in ranked_labels.iter().enumerate() {
            if y == 1 {
                found += 1;
                let rank = r as u128 + 1;
                let l = den / gcd(den, rank) * rank;
                num = num.checked_mul(l / den)?.checked_add(found.checked_mul(l / rank)?)?;
                den = l;
                let g = gcd(num, den);
                num /= g;
                den /= g;
            }
        }
        let den = den.checked_mul(found)?;
        let g = gcd(num, den);
        let (num, den) = (num / g, den / g);
        const EXACT: u128 = 1 << 53;
        (num <= EXACT && den <= EXACT).then(|| num as f64 / den as f64)
    };
    exact().unwrap_or_else(|| {
        let mut found = 0usize;
        let mut ap = 0.0;
        for (r, &y) in ranked_labels.iter().enumerate() {
            if y == 1 {
                found += 1;
                ap += found as f64 / (r + 1) as f64;
            }
        }
        ap / found as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub r1: f64,
    pub r2: f64,
    pub r5: f64,
    pub map: f64,
    pub mrr: f64,
    pub p1: f64,
    pub total_groups: usize,
    pub skipped_groups: usize,
}

impl MetricReport {
    pub fn values(&self) -> [f64; 6] {
        [self.r1, self.r2, self.r5, self.map, self.mrr, self.p1]
    }

    /// `(column name, value)` for every metric column.
    pub fn named(&self) -> impl Iterator<Item = (&'static str, f64)> {
        COLUMNS.into_iter().zip(self.values())
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in COLUMNS {
            write!(f, "{c:>8}")?;
        }
        writeln!(f)?;
        for v in self.values() {
            write!(f, "{v:>8.4}")?;
        }
        writeln!(f)?;
        write!(
            f,
            "groups: {} evaluated, {} skipped (no positive)",
            self.total_groups - self.skipped_groups,
            self.skipped_groups
        )
    }
}

pub fn aggregate(groups: &[CandidateGroup]) -> Result<MetricReport> {
    let per: Vec<GroupMetrics> = groups.iter().filter_map(group_metrics).collect();
    if per.is_empty() {
        return Err(Error::InvalidInput(format!(
            "all {} candidate groups lack a positive response",
            groups.len()
        )));
    }
    let n = per.len() as f64;
    let mean = |f: &dyn Fn(&GroupMetrics) -> f64| per.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        r1: mean(&|m| m.hits[0]),
        r2: mean(&|m| m.hits[1]),
        r5: mean(&|m| m.hits[2]),
        map: mean(&|m| m.average_precision),
        mrr: mean(&|m| m.reciprocal_rank),
        p1: mean(&|m| m.precision_at_1),
        total_groups: groups.len(),
        skipped_groups: groups.len() - per.len(),
    })
}

/// Restricts each group to its first positive and first negative, giving the
/// two-candidate R_2@1 used alongside 10-candidate test sets.
pub fn restrict_to_pair(groups: &[CandidateGroup]) -> Vec<CandidateGroup> {
    groups
        .iter()
        .filter_map(|g| {
            let pos = g.candidates.iter().position(|c| c.1 == 1)?;
            let neg = g.candidates.iter().position(|c| c.1 == 0)?;
            let (a, b) = if pos < neg { (pos, neg) } else { (neg, pos) };
            Some(CandidateGroup::new(g.context_id, vec![g.candidates[a], g.candidates[b]]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(scores: &[f64], labels: &[u8]) -> CandidateGroup {
        CandidateGroup::new(0, scores.iter().copied().zip(labels.iter().copied()).collect())
    }

    #[test]
    fn ranking_is_stable() {
        assert_eq!(rank_group(&group(&[0.1, 0.9, 0.5], &[0, 0, 0])), vec![1, 2, 0]);
        assert_eq!(rank_group(&group(&[0.3; 4], &[0; 4])), vec![0, 1, 2, 3]);
        assert_eq!(rank_group(&group(&[0.3], &[1])), vec![0]);
    }

    #[test]
    fn average_precision_ranks_one_and_three() {
        let g = group(&[0.9, 0.8, 0.7, 0.6, 0.5], &[1, 0, 1, 0, 0]);
        let m = group_metrics(&g).unwrap();
        assert_eq!(m.average_precision, 5.0 / 6.0);
        assert_eq!(m.reciprocal_rank, 1.0);
    }

    #[test]
    fn first_positive_at_two() {
        let m = group_metrics(&group(&[0.9, 0.8, 0.1], &[0, 1, 0])).unwrap();
        assert_eq!(m.reciprocal_rank, 0.5);
        assert_eq!(m.hits, [0.0, 1.0, 1.0]);
        assert_eq!(m.precision_at_1, 0.0);
    }

    #[test]
    fn no_positive_is_skipped() {
        assert!(group_metrics(&group(&[0.9, 0.1], &[0, 0])).is_none());
        let report = aggregate(&[group(&[0.9, 0.1], &[0, 0]), group(&[0.9, 0.1], &[1, 0])]).unwrap();
        assert_eq!(report.skipped_groups, 1);
        assert_eq!(report.r1, 1.0);
        assert!(aggregate(&[group(&[0.9], &[0])]).is_err());
    }

    #[test]
    fn mrr_of_half_and_quarter() {
        let a = group(&[0.9, 0.8, 0.1, 0.0], &[0, 1, 0, 0]);
        let b = group(&[0.9, 0.8, 0.7, 0.6], &[0, 0, 0, 1]);
        assert_eq!(aggregate(&[a, b]).unwrap().mrr, 0.375);
    }

    #[test]
    fn perfect_ranking() {
        let gs: Vec<_> = (0..4).map(|_| group(&[0.9, 0.2, 0.1], &[1, 0, 0])).collect();
        assert_eq!(aggregate(&gs).unwrap().values(), [1.0; 6]);
    }

    #[test]
    fn pair_restriction() {
        let g = group(&[0.1, 0.9, 0.5, 0.2], &[0, 0, 1, 0]);
        let r = restrict_to_pair(&[g]);
        assert_eq!(r[0].candidates, vec![(0.1, 0), (0.5, 1)]);
    }
}
