use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ClassId, PseudoLabeledSet};
use crate::error::{Error, Result};
use crate::numeric::ProbVector;

/// How many pseudo-labeled rows a learner receives per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// `⌊M·t/T⌋` rows at iteration `t`.
    #[default]
    Incremental,
    /// All `M` rows every iteration.
    OneOff,
}

/// `⌊m·t/T⌋`.
pub fn budget(m: usize, t: usize, total_iters: usize) -> usize {
    m * t / total_iters
}

/// Class-balanced sampling with replacement from `candidates`
/// (`(pool row, pseudo label)` pairs).
///
/// `total` rows are split evenly over the classes present among the
/// candidates; the remainder goes one each to the lowest class ids.
pub fn sample_balanced<R: Rng + ?Sized>(
    candidates: &[(usize, ClassId)],
    total: usize,
    rng: &mut R,
) -> (Vec<usize>, Vec<ClassId>) {
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for &(row, c) in candidates {
        by_class.entry(c).or_default().push(row);
    }
    let (mut rows, mut classes) = (Vec::with_capacity(total), Vec::with_capacity(total));
    if by_class.is_empty() || total == 0 {
        return (rows, classes);
    }
    let k = by_class.len();
    for (i, (class, members)) in by_class.iter().enumerate() {
        let quota = total / k + usize::from(i < total % k);
        for _ in 0..quota {
            rows.push(members[rng.random_range(0..members.len())]);
            classes.push(*class);
        }
    }
    (rows, classes)
}

/// Selects the iteration-`t` training subset from `candidates`, using
/// `M = candidates.len()` as the budget base.
pub fn select_candidates<R: Rng + ?Sized>(
    candidates: &[(usize, ClassId)],
    t: usize,
    total_iters: usize,
    mode: SelectionMode,
    source: usize,
    rng: &mut R,
) -> Result<PseudoLabeledSet> {
    if t == 0 || t > total_iters {
        return Err(Error::InvalidInput(format!(
            "iteration {t} is outside 1..={total_iters}"
        )));
    }
    let m = candidates.len();
    let total = match mode {
        SelectionMode::Incremental => budget(m, t, total_iters),
        SelectionMode::OneOff => m,
    };
    let (rows, classes) = sample_balanced(candidates, total, rng);
    PseudoLabeledSet::new(rows, classes, source, t)
}

/// Incremental class-balanced selection over a whole pool: `labels[i]` is
/// the pseudo label of pool row `i`.
pub fn incremental_select<R: Rng + ?Sized>(
    labels: &[ClassId],
    t: usize,
    total_iters: usize,
    rng: &mut R,
) -> Result<PseudoLabeledSet> {
    let candidates: Vec<(usize, ClassId)> = labels.iter().copied().enumerate().collect();
    select_candidates(
        &candidates,
        t,
        total_iters,
        SelectionMode::Incremental,
        0,
        rng,
    )
}

/// Rule for reassigning pseudo labels between learners.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExchangePolicy {
    /// Two learners swap their sets.
    Cross,
    /// Learner `order[i]` receives the set of `order[i-1]` (cyclically).
    Cyclic { order: Vec<usize> },
    /// Each learner receives the rows on which all other learners agree.
    Agreement,
    /// Each learner keeps its own set (self-training).
    SelfFeed,
}

impl ExchangePolicy {
    pub fn check_arity(&self, learners: usize) -> Result<()> {
        let ok = match self {
            ExchangePolicy::Cross => learners == 2,
            ExchangePolicy::Cyclic { order } => {
                let mut sorted = order.clone();
                sorted.sort_unstable();
                learners >= 3 && sorted == (0..learners).collect::<Vec<_>>()
            }
            ExchangePolicy::Agreement => learners >= 3,
            ExchangePolicy::SelfFeed => learners >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "exchange policy {self:?} does not fit {learners} learners (cross needs 2; cyclic and agreement need >= 3, cyclic order must be a permutation)"
            )))
        }
    }
}

/// Reassigns per-learner candidate sets.
///
/// `sets[i]` lists `(pool row, label)` pairs learner `i` offers; the output
/// lists what each learner receives. `labels[i]` is learner `i`'s label for
/// every pool row, used by the agreement rule.
pub fn exchange(
    sets: &[Vec<(usize, ClassId)>],
    labels: &[Vec<ClassId>],
    policy: &ExchangePolicy,
) -> Result<Vec<Vec<(usize, ClassId)>>> {
    policy.check_arity(sets.len())?;
    Ok(match policy {
        ExchangePolicy::Cross => vec![sets[1].clone(), sets[0].clone()],
        ExchangePolicy::Cyclic { order } => {
            let k = order.len();
            let mut out = vec![Vec::new(); k];
            for i in 0..k {
                out[order[i]] = sets[order[(i + k - 1) % k]].clone();
            }
            out
        }
        ExchangePolicy::Agreement => (0..sets.len())
            .map(|i| {
                let others: Vec<usize> = (0..sets.len()).filter(|&j| j != i).collect();
                let offered: BTreeMap<usize, ClassId> = sets[others[0]].iter().copied().collect();
                offered
                    .into_iter()
                    .filter(|&(row, c)| others.iter().all(|&j| labels[j][row] == c))
                    .collect()
            })
            .collect(),
        ExchangePolicy::SelfFeed => sets.to_vec(),
    })
}

/// Convex combination weights over learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FusionWeights(Vec<f64>);

impl TryFrom<Vec<f64>> for FusionWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FusionWeights> for Vec<f64> {
    fn from(w: FusionWeights) -> Self {
        w.0
    }
}

impl FusionWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(
                "fusion weights must be finite and >= 0".into(),
            ));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("fusion weights must not all be zero".into()));
        }
        Ok(Self(weights))
    }

    /// `[α, 1−α]`.
    pub fn alpha(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!(
                "alpha must be in [0, 1], got {alpha}"
            )));
        }
        Self::new(vec![alpha, 1.0 - alpha])
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Argmax of `Σ wᵢ pᵢ` per row with normalized weights; ties go to the
/// lowest class id.
///
/// `probs[i][r]` is learner `i`'s distribution for row `r` over `classes`.
pub fn fuse_predictions(
    probs: &[Vec<ProbVector>],
    weights: &FusionWeights,
    classes: &[ClassId],
) -> Result<Vec<ClassId>> {
    if probs.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} learners but {} fusion weights",
            probs.len(),
            weights.len()
        )));
    }
    let rows = probs[0].len();
    if probs.iter().any(|p| p.len() != rows) {
        return Err(Error::Shape(
            "learners predicted different numbers of rows".into(),
        ));
    }
    if probs.iter().flatten().any(|p| p.len() != classes.len()) {
        return Err(Error::Shape(
            "prediction does not match the class list".into(),
        ));
    }
    let total: f64 = weights.as_slice().iter().sum();
    let w: Vec<f64> = weights.as_slice().iter().map(|v| v / total).collect();
    let mut combo = vec![0.0; classes.len()];
    Ok((0..rows)
        .map(|r| {
            combo.iter_mut().for_each(|c| *c = 0.0);
            for (p, wi) in probs.iter().zip(&w) {
                for (c, v) in combo.iter_mut().zip(p[r].as_slice()) {
                    *c += wi * v;
                }
            }
            let best = combo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (0..classes.len())
                .filter(|&i| combo[i] == best)
                .map(|i| classes[i])
                .min()
                .expect("non-empty class list")
        })
        .collect())
}

/// Average per-class ratio of differing predictions over the rows whose
/// true class is in `classes`.
pub fn apr(
    preds_a: &[ClassId],
    preds_b: &[ClassId],
    truths: &[ClassId],
    classes: &[ClassId],
) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::InvalidInput(
            "apr needs a non-empty class list".into(),
        ));
    }
    if preds_a.len() != truths.len() || preds_b.len() != truths.len() {
        return Err(Error::Shape("prediction and truth lengths differ".into()));
    }
    let mut tally: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
    for ((a, b), t) in preds_a.iter().zip(preds_b).zip(truths) {
        if classes.contains(t) {
            let e = tally.entry(*t).or_default();
            e.1 += 1;
            e.0 += usize::from(a != b);
        }
    }
    if tally.is_empty() {
        return Err(Error::InvalidInput(
            "no rows belong to the given classes".into(),
        ));
    }
    Ok(tally
        .values()
        .map(|&(diff, n)| diff as f64 / n as f64)
        .sum::<f64>()
        / tally.len() as f64)
}

/// Mean of `apr(x, a)` and `apr(x, b)`.
pub fn apr_vs_pair(
    preds_x: &[ClassId],
    preds_a: &[ClassId],
    preds_b: &[ClassId],
    truths: &[ClassId],
    classes: &[ClassId],
) -> Result<f64> {
    Ok(0.5 * (apr(preds_x, preds_a, truths, classes)? + apr(preds_x, preds_b, truths, classes)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(v: &[u32]) -> Vec<ClassId> {
        v.iter().copied().map(ClassId).collect()
    }

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn budgets_follow_the_floor_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let labels: Vec<ClassId> = (0..100).map(|i| ClassId(i % 7)).collect();
        assert_eq!(
            incremental_select(&labels, 3, 10, &mut rng).unwrap().len(),
            30
        );
        assert_eq!(
            incremental_select(&labels, 10, 10, &mut rng).unwrap().len(),
            100
        );
        assert!(incremental_select(&labels, 0, 10, &mut rng).is_err());
        assert!(incremental_select(&labels, 11, 10, &mut rng).is_err());
        assert!(incremental_select(&labels[..3], 1, 4, &mut rng)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn remainder_goes_to_the_lowest_ids() {
        let cands: Vec<(usize, ClassId)> = vec![
            (0, ClassId(5)),
            (1, ClassId(2)),
            (2, ClassId(9)),
            (3, ClassId(2)),
        ];
        let (_, classes) = sample_balanced(&cands, 10, &mut ChaCha8Rng::seed_from_u64(1));
        let count = |c| classes.iter().filter(|&&x| x == ClassId(c)).count();
        assert_eq!((count(2), count(5), count(9)), (4, 3, 3));
    }

    #[test]
    fn sampled_rows_carry_their_own_label() {
        let cands: Vec<(usize, ClassId)> = (0..40).map(|i| (i, ClassId((i % 3) as u32))).collect();
        let (rows, classes) = sample_balanced(&cands, 25, &mut ChaCha8Rng::seed_from_u64(2));
        for (r, c) in rows.iter().zip(&classes) {
            assert_eq!(ClassId((r % 3) as u32), *c);
        }
    }

    #[test]
    fn cross_swaps_and_is_an_involution() {
        let a = vec![(0, ClassId(1))];
        let b = vec![(1, ClassId(2)), (2, ClassId(2))];
        let labels = vec![vec![]; 2];
        let once = exchange(&[a.clone(), b.clone()], &labels, &ExchangePolicy::Cross).unwrap();
        assert_eq!(once, vec![b, a.clone()]);
        let twice = exchange(&once, &labels, &ExchangePolicy::Cross).unwrap();
        assert_eq!(twice[0], a);
        assert!(exchange(&vec![vec![]; 3], &vec![vec![]; 3], &ExchangePolicy::Cross).is_err());
    }

    #[test]
    fn cyclic_follows_the_declared_cycle() {
        let sets: Vec<Vec<(usize, ClassId)>> =
            (0..3).map(|i| vec![(i, ClassId(i as u32))]).collect();
        let labels = vec![vec![]; 3];
        // cycle 0 -> 2 -> 1 -> 0
        let out = exchange(
            &sets,
            &labels,
            &ExchangePolicy::Cyclic {
                order: vec![0, 2, 1],
            },
        )
        .unwrap();
        assert_eq!(out[2], sets[0]);
        assert_eq!(out[1], sets[2]);
        assert_eq!(out[0], sets[1]);
        let same = vec![sets[0].clone(); 3];
        assert_eq!(
            exchange(
                &same,
                &labels,
                &ExchangePolicy::Cyclic {
                    order: vec![0, 1, 2]
                }
            )
            .unwrap(),
            same
        );
        assert!(ExchangePolicy::Cyclic {
            order: vec![0, 0, 1]
        }
        .check_arity(3)
        .is_err());
    }

    #[test]
    fn agreement_keeps_rows_the_others_share() {
        let u1 = ClassId(7);
        let u2 = ClassId(8);
        let labels = vec![
            vec![u1, u1, u1, u1],
            vec![u1, u1, u2, u2],
            vec![u2, u1, u1, u2],
        ];
        let sets: Vec<Vec<(usize, ClassId)>> = labels
            .iter()
            .map(|l| l.iter().copied().enumerate().collect())
            .collect();
        let out = exchange(&sets, &labels, &ExchangePolicy::Agreement).unwrap();
        assert_eq!(out[0], vec![(1, u1), (3, u2)]);
    }

    #[test]
    fn fusion_examples() {
        let classes = ids(&[0, 1]);
        let pa = vec![pv(&[0.6, 0.4])];
        let pb = vec![pv(&[0.2, 0.8])];
        let probs = [pa.clone(), pb.clone()];
        assert_eq!(
            fuse_predictions(&probs, &FusionWeights::alpha(0.5).unwrap(), &classes).unwrap(),
            ids(&[1])
        );
        assert_eq!(
            fuse_predictions(&probs, &FusionWeights::alpha(1.0).unwrap(), &classes).unwrap(),
            ids(&[0])
        );
        // exact tie resolves to the lowest id even when listed last
        let tie = [vec![pv(&[0.5, 0.5])], vec![pv(&[0.5, 0.5])]];
        assert_eq!(
            fuse_predictions(&tie, &FusionWeights::uniform(2).unwrap(), &ids(&[4, 3])).unwrap(),
            ids(&[3])
        );
        assert!(FusionWeights::alpha(1.5).is_err());
    }

    #[test]
    fn apr_examples() {
        let t = ids(&[0, 0, 1, 1, 1, 1]);
        let a = ids(&[0, 0, 1, 1, 1, 1]);
        let b = ids(&[0, 1, 1, 0, 0, 1]);
        assert_eq!(apr(&a, &a, &t, &ids(&[0, 1])).unwrap(), 0.0);
        assert_eq!(apr(&a, &b, &t, &ids(&[0, 1])).unwrap(), 0.5);
        let c = ids(&[5, 5, 5, 5, 5, 5]);
        assert_eq!(apr(&a, &c, &t, &ids(&[0, 1])).unwrap(), 1.0);
        assert_eq!(apr_vs_pair(&a, &a, &a, &t, &ids(&[0, 1])).unwrap(), 0.0);
        assert!(apr(&a, &b, &t, &[]).is_err());
    }

    proptest! {
        #[test]
        fn selection_size_and_monotone_budget(m in 1usize..60, big_t in 1usize..12, k in 1u32..6, seed in any::<u64>()) {
            let labels: Vec<ClassId> = (0..m).map(|i| ClassId(i as u32 % k)).collect();
            let mut prev = 0;
            for t in 1..=big_t {
                let s = incremental_select(&labels, t, big_t, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                prop_assert_eq!(s.len(), m * t / big_t);
                prop_assert!(s.len() >= prev);
                prev = s.len();
            }
        }

        #[test]
        fn fusion_is_scale_invariant(
            raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 3),
            w in prop::collection::vec(0.1f64..2.0, 3),
        ) {
            let classes = ids(&[0, 1, 2, 3]);
            let probs: Vec<Vec<ProbVector>> = raw
                .iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    vec![ProbVector::new(r.iter().map(|v| v / s).collect()).unwrap()]
                })
                .collect();
            let base = fuse_predictions(&probs, &FusionWeights::new(w.clone()).unwrap(), &classes).unwrap();
            let scaled = fuse_predictions(&probs, &FusionWeights::new(w.iter().map(|v| v * 4.0).collect()).unwrap(), &classes).unwrap();
            prop_assert_eq!(base, scaled);
        }

        #[test]
        fn apr_is_symmetric_and_bounded(rows in prop::collection::vec((0u32..3, 0u32..3, 0u32..3), 1..50)) {
            let a: Vec<ClassId> = rows.iter().map(|r| ClassId(r.0)).collect();
            let b: Vec<ClassId> = rows.iter().map(|r| ClassId(r.1)).collect();
            let t: Vec<ClassId> = rows.iter().map(|r| ClassId(r.2)).collect();
            let classes = ids(&[0, 1, 2]);
            let ab = apr(&a, &b, &t, &classes).unwrap();
            prop_assert_eq!(ab, apr(&b, &a, &t, &classes).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
