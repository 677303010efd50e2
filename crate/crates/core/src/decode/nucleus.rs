use std::cmp::Ordering;

use rand::Rng;

use crate::types::{NextTokenDistribution, TokenId};

/// Mass shortfall tolerated when deciding that the nucleus is complete.
const MASS_SLACK: f64 = 1e-12;

/// Descending probability, ties by ascending id.
fn rank(a: &(TokenId, f64), b: &(TokenId, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

/// Smallest top-ranked token set whose mass reaches `top_p`, with raw probabilities.
///
/// Tokens with probability zero are never members. With `top_p >= 1` the
/// result is the full support. Runs a growing partial selection, so peaked
/// distributions cost O(|V|) rather than a full sort.
pub fn nucleus_set(dist: &NextTokenDistribution, top_p: f64) -> Vec<(TokenId, f64)> {
    let mut support: Vec<(TokenId, f64)> = dist
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| (i as TokenId, p))
        .collect();
    if top_p >= 1.0 {
        support.sort_unstable_by(rank);
        return support;
    }
    let mut k = 64usize;
    loop {
        if k >= support.len() {
            support.sort_unstable_by(rank);
            return cut(support, top_p);
        }
        let mut head = support.clone();
        head.select_nth_unstable_by(k - 1, rank);
        head.truncate(k);
        head.sort_unstable_by(rank);
        let mass: f64 = head.iter().map(|x| x.1).sum();
        if mass >= top_p - MASS_SLACK {
            return cut(head, top_p);
        }
        k *= 4;
    }
}

fn cut(mut sorted: Vec<(TokenId, f64)>, top_p: f64) -> Vec<(TokenId, f64)> {
    let mut mass = 0.0;
    let mut keep = sorted.len();
    for (i, &(_, p)) in sorted.iter().enumerate() {
        mass += p;
        if mass >= top_p - MASS_SLACK {
            keep = i + 1;
            break;
        }
    }
    sorted.truncate(keep);
    sorted
}

/// Draws one item proportionally to its weight using a single `f64` from `rng`.
///
/// Returns `None` only for an empty slice. All-zero weights fall back to a
/// uniform pick.
pub fn sample_weighted<R: Rng + ?Sized>(items: &[(TokenId, f64)], rng: &mut R) -> Option<TokenId> {
    if items.is_empty() {
        return None;
    }
    let u: f64 = rng.gen();
    let total: f64 = items.iter().map(|x| x.1).sum();
    if total <= 0.0 {
        let i = ((u * items.len() as f64) as usize).min(items.len() - 1);
        return Some(items[i].0);
    }
    let target = u * total;
    let mut acc = 0.0;
    for &(id, w) in items {
        acc += w;
        if target < acc {
            return Some(id);
        }
    }
    items.iter().rev().find(|x| x.1 > 0.0).map(|x| x.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NucleusDraw {
    /// Nucleus members with renormalized probabilities, in rank order.
    pub members: Vec<(TokenId, f64)>,
    pub chosen: TokenId,
}

/// Restricts `dist` to its top-`top_p` nucleus and samples from it.
pub fn nucleus_restrict<R: Rng + ?Sized>(
    dist: &NextTokenDistribution,
    top_p: f64,
    rng: &mut R,
) -> NucleusDraw {
    let set = nucleus_set(dist, top_p);
    let chosen = sample_weighted(&set, rng).expect("a valid distribution has non-empty support");
    let mass: f64 = set.iter().map(|x| x.1).sum();
    let members = set.into_iter().map(|(id, p)| (id, p / mass)).collect();
    NucleusDraw { members, chosen }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DistributionKind;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn d(p: Vec<f64>) -> NextTokenDistribution {
        NextTokenDistribution::new(p, DistributionKind::Conditional).unwrap()
    }

    #[test]
    fn worked_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draw = nucleus_restrict(&d(vec![0.5, 0.3, 0.2]), 0.7, &mut rng);
        assert_eq!(draw.members.len(), 2);
        assert_eq!(draw.members[0].0, 0);
        assert!((draw.members[0].1 - 0.625).abs() < 1e-12);
        assert!((draw.members[1].1 - 0.375).abs() < 1e-12);
        assert!(draw.chosen == 0 || draw.chosen == 1);
    }

    #[test]
    fn top_p_one_is_full_support() {
        let p = vec![0.1, 0.0, 0.3, 0.2, 0.4];
        let set = nucleus_set(&d(p), 1.0);
        let ids: Vec<TokenId> = set.iter().map(|x| x.0).collect();
        assert_eq!(ids, vec![4, 2, 3, 0]);
    }

    #[test]
    fn delta_is_singleton() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draw = nucleus_restrict(&d(vec![0.0, 1.0, 0.0]), 0.9, &mut rng);
        assert_eq!(draw.members, vec![(1, 1.0)]);
        assert_eq!(draw.chosen, 1);
    }

    #[test]
    fn ties_break_by_id() {
        let set = nucleus_set(&d(vec![0.25; 4]), 0.5);
        assert_eq!(set.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn sampling_is_proportional() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let items = [(3, 0.75), (7, 0.25)];
        let hits = (0..20_000)
            .filter(|_| sample_weighted(&items, &mut rng) == Some(3))
            .count();
        assert!((hits as f64 / 20_000.0 - 0.75).abs() < 0.02);
        assert_eq!(sample_weighted(&[], &mut rng), None);
    }

    /// Full sort reference for the partial-selection path.
    fn reference(p: &[f64], top_p: f64) -> Vec<(TokenId, f64)> {
        let mut all: Vec<(TokenId, f64)> = p
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > 0.0)
            .map(|(i, &x)| (i as TokenId, x))
            .collect();
        all.sort_by(rank);
        if top_p >= 1.0 {
            return all;
        }
        cut(all, top_p)
    }

    proptest! {
        #[test]
        fn matches_full_sort(w in prop::collection::vec(0.0f64..1.0, 1..600), top_p in 0.01f64..1.0) {
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let dist = NextTokenDistribution::normalized(w, DistributionKind::Conditional).unwrap();
            let set = nucleus_set(&dist, top_p);
            prop_assert_eq!(&set, &reference(dist.probs(), top_p));
            let mass: f64 = set.iter().map(|x| x.1).sum();
            prop_assert!(mass >= top_p - 1e-9);
            // Minimality: dropping the last member falls short.
            prop_assert!(mass - set.last().unwrap().1 < top_p);
        }
    }
}
