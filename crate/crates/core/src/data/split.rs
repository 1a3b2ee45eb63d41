//! Train/validation/test splits.
//!
//! All splits are trial-granular: every window of a trial lands in the
//! same partition, so near-duplicate windows from overlapping strides
//! can never straddle a partition boundary. Assignment shuffles the
//! trial list with the caller's generator and cuts the shuffled order at
//! cumulative window-count fractions, then moves single trials if a
//! partition would otherwise be empty. Outputs are materialized in
//! sorted (subject, trial) order, so the same seed gives byte-identical
//! partitions on every run.

use super::WindowSample;
use crate::error::{Error, Result};
use crate::tensor::Rng;
use std::collections::BTreeMap;

/// The three partitions of a split.
#[derive(Debug)]
pub struct SplitSets {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

/// Share of a subject's data given to transfer-learning adaptation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum TlFraction {
    F5,
    F10,
    F15,
    F20,
}

pub const ALL_TL_FRACTIONS: [TlFraction; 4] =
    [TlFraction::F5, TlFraction::F10, TlFraction::F15, TlFraction::F20];

impl TlFraction {
    pub fn percent(self) -> u32 {
        match self {
            TlFraction::F5 => 5,
            TlFraction::F10 => 10,
            TlFraction::F15 => 15,
            TlFraction::F20 => 20,
        }
    }

    pub fn from_percent(p: u32) -> Result<Self> {
        match p {
            5 => Ok(TlFraction::F5),
            10 => Ok(TlFraction::F10),
            15 => Ok(TlFraction::F15),
            20 => Ok(TlFraction::F20),
            other => Err(Error::Config(format!(
                "transfer fraction must be 5, 10, 15, or 20 percent, got {other}"
            ))),
        }
    }

    /// (train, val) percentages; the rest of the subject's data is test.
    pub fn train_val_percent(self) -> (u32, u32) {
        match self {
            TlFraction::F5 => (3, 2),
            TlFraction::F10 => (7, 3),
            TlFraction::F15 => (10, 5),
            TlFraction::F20 => (15, 5),
        }
    }
}

/// Groups windows by (subject, trial), sorted by key.
fn group_trials(samples: Vec<WindowSample>) -> Vec<((String, String), Vec<WindowSample>)> {
    let mut map: BTreeMap<(String, String), Vec<WindowSample>> = BTreeMap::new();
    for s in samples {
        map.entry((s.subject_id.clone(), s.trial_id.clone()))
            .or_default()
            .push(s);
    }
    map.into_iter().collect()
}

/// Assigns each group (visited in shuffled order) to the partition whose
/// cumulative window fraction it starts in. `cuts` are the cumulative
/// boundaries, e.g. `[0.8, 0.9]` for 80/10/10.
fn assign_groups(sizes: &[usize], order: &[usize], cuts: &[f64]) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let mut part = vec![0usize; sizes.len()];
    let mut cum = 0usize;
    for &gi in order {
        let f = cum as f64 / total as f64;
        part[gi] = cuts.iter().position(|&c| f < c).unwrap_or(cuts.len());
        cum += sizes[gi];
    }
    part
}

/// Moves one trial into partition `target` if it is empty, taking the
/// last trial (in shuffled order) of any partition that can spare one.
fn ensure_nonempty(part: &mut [usize], order: &[usize], parts: usize, target: usize) -> Result<()> {
    if part.iter().any(|&p| p == target) {
        return Ok(());
    }
    let mut counts = vec![0usize; parts];
    for &p in part.iter() {
        counts[p] += 1;
    }
    for &gi in order.iter().rev() {
        if counts[part[gi]] >= 2 {
            part[gi] = target;
            return Ok(());
        }
    }
    Err(Error::InsufficientData(format!(
        "cannot make partition {target} nonempty with {} trials",
        part.len()
    )))
}

/// Shuffles trials and cuts them into `cuts.len() + 1` partitions at the
/// given cumulative window fractions, every partition nonempty.
fn split_by_trials(
    samples: Vec<WindowSample>,
    cuts: &[f64],
    rng: &mut Rng,
) -> Result<Vec<Vec<WindowSample>>> {
    let parts = cuts.len() + 1;
    let groups = group_trials(samples);
    if groups.len() < parts {
        return Err(Error::InsufficientData(format!(
            "need at least {parts} trials to split, got {}",
            groups.len()
        )));
    }
    let sizes: Vec<usize> = groups.iter().map(|(_, g)| g.len()).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    rng.shuffle(&mut order);
    let mut part = assign_groups(&sizes, &order, cuts);
    for target in 1..parts {
        ensure_nonempty(&mut part, &order, parts, target)?;
    }
    let mut out: Vec<Vec<WindowSample>> = (0..parts).map(|_| Vec::new()).collect();
    for (gi, (_, group)) in groups.into_iter().enumerate() {
        out[part[gi]].extend(group);
    }
    Ok(out)
}

fn expect_one_subject(samples: &[WindowSample], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InsufficientData(format!("{what}: no windows")));
    }
    let first = &samples[0].subject_id;
    if samples.iter().any(|s| &s.subject_id != first) {
        return Err(Error::InvalidInput(format!(
            "{what} expects windows from a single subject"
        )));
    }
    Ok(())
}

/// Subject-dependent split: one subject's trials cut 80/10/10.
pub fn split_dep(samples: Vec<WindowSample>, rng: &mut Rng) -> Result<SplitSets> {
    expect_one_subject(&samples, "dep split")?;
    if samples.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "dep split needs at least 10 windows, got {}",
            samples.len()
        )));
    }
    let mut parts = split_by_trials(samples, &[0.8, 0.9], rng)?;
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok(SplitSets { train, val, test })
}

/// Leave-one-subject-out split: the held-out subject is the whole test
/// set; the remaining subjects' trials are cut 80/20 into train and
/// validation.
pub fn split_loso(samples: &[WindowSample], test_subject: &str, rng: &mut Rng) -> Result<SplitSets> {
    if !samples.iter().any(|s| s.subject_id == test_subject) {
        return Err(Error::Config(format!(
            "unknown test subject {test_subject:?}"
        )));
    }
    let mut test = Vec::new();
    let mut rest = Vec::new();
    for s in samples {
        if s.subject_id == test_subject {
            test.push(s.clone());
        } else {
            rest.push(s.clone());
        }
    }
    if rest.is_empty() {
        return Err(Error::InsufficientData(
            "leave-one-subject-out needs at least two subjects".into(),
        ));
    }
    let mut parts = split_by_trials(rest, &[0.8], rng)?;
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok(SplitSets { train, val, test })
}

/// Transfer-learning split: a small adaptation share of one subject's
/// trials for train and validation, everything else as test.
pub fn split_transfer(
    samples: Vec<WindowSample>,
    fraction: TlFraction,
    rng: &mut Rng,
) -> Result<SplitSets> {
    expect_one_subject(&samples, "transfer split")?;
    let (train_pct, val_pct) = fraction.train_val_percent();
    let c1 = train_pct as f64 / 100.0;
    let c2 = (train_pct + val_pct) as f64 / 100.0;
    let mut parts = split_by_trials(samples, &[c1, c2], rng)?;
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok(SplitSets { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ModeLabel;
    use crate::tensor::Tensor;

    fn window(subject: &str, trial: &str, i: usize) -> WindowSample {
        WindowSample {
            x: Tensor::from_vec(&[1, 2], vec![i as f32, 0.0]).unwrap(),
            label: ModeLabel::Lw,
            is_transition: false,
            subject_id: subject.into(),
            trial_id: trial.into(),
        }
    }

    fn subject_windows(subject: &str, trials: usize, per_trial: usize) -> Vec<WindowSample> {
        let mut out = Vec::new();
        for t in 0..trials {
            for i in 0..per_trial {
                out.push(window(subject, &format!("t{t:02}"), i));
            }
        }
        out
    }

    fn trial_partition_map(sets: &SplitSets) -> BTreeMap<String, usize> {
        let mut map = BTreeMap::new();
        for (pi, part) in [&sets.train, &sets.val, &sets.test].iter().enumerate() {
            for s in part.iter() {
                if let Some(&prev) = map.get(&s.trial_id) {
                    assert_eq!(prev, pi, "trial {} split across partitions", s.trial_id);
                }
                map.insert(s.trial_id.clone(), pi);
            }
        }
        map
    }

    #[test]
    fn dep_split_with_equal_trials_hits_80_10_10() {
        let samples = subject_windows("s1", 25, 100);
        let sets = split_dep(samples, &mut Rng::seed(1)).unwrap();
        assert_eq!(sets.train.len(), 2000);
        assert_eq!(sets.val.len(), 300);
        assert_eq!(sets.test.len(), 200);
        trial_partition_map(&sets);
    }

    #[test]
    fn dep_split_is_trial_granular_and_seed_deterministic() {
        let samples = subject_windows("s1", 12, 37);
        let a = split_dep(samples.clone(), &mut Rng::seed(9)).unwrap();
        let b = split_dep(samples.clone(), &mut Rng::seed(9)).unwrap();
        assert_eq!(trial_partition_map(&a), trial_partition_map(&b));
        // different seeds almost surely differ on 12 trials
        let c = split_dep(samples, &mut Rng::seed(10)).unwrap();
        assert_ne!(trial_partition_map(&a), trial_partition_map(&c));
    }

    #[test]
    fn dep_split_keeps_every_partition_nonempty() {
        for trials in 3..8 {
            let samples = subject_windows("s1", trials, 5);
            let sets = split_dep(samples, &mut Rng::seed(2)).unwrap();
            assert!(!sets.train.is_empty(), "{trials} trials: empty train");
            assert!(!sets.val.is_empty(), "{trials} trials: empty val");
            assert!(!sets.test.is_empty(), "{trials} trials: empty test");
        }
    }

    #[test]
    fn dep_split_rejects_too_little_data() {
        assert!(split_dep(subject_windows("s1", 2, 20), &mut Rng::seed(0)).is_err());
        assert!(split_dep(subject_windows("s1", 3, 2), &mut Rng::seed(0)).is_err());
        assert!(split_dep(Vec::new(), &mut Rng::seed(0)).is_err());
    }

    #[test]
    fn dep_split_rejects_mixed_subjects() {
        let mut samples = subject_windows("s1", 3, 10);
        samples.extend(subject_windows("s2", 3, 10));
        assert!(matches!(
            split_dep(samples, &mut Rng::seed(0)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn loso_test_set_is_purely_the_held_out_subject() {
        let mut samples = Vec::new();
        for s in ["a", "b", "c", "d"] {
            samples.extend(subject_windows(s, 6, 20));
        }
        let sets = split_loso(&samples, "b", &mut Rng::seed(3)).unwrap();
        assert_eq!(sets.test.len(), 120);
        assert!(sets.test.iter().all(|s| s.subject_id == "b"));
        assert!(sets.train.iter().all(|s| s.subject_id != "b"));
        assert!(sets.val.iter().all(|s| s.subject_id != "b"));
        // 80/20 on the remaining 360 windows
        assert_eq!(sets.train.len() + sets.val.len(), 360);
        assert!(!sets.val.is_empty());
        assert!(sets.train.len() > sets.val.len());
    }

    #[test]
    fn loso_rejects_unknown_subject_and_single_subject() {
        let samples = subject_windows("only", 6, 20);
        assert!(matches!(
            split_loso(&samples, "ghost", &mut Rng::seed(0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            split_loso(&samples, "only", &mut Rng::seed(0)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn transfer_fractions_follow_the_protocol_table() {
        for (frac, want) in [
            (TlFraction::F5, (3, 2, 95)),
            (TlFraction::F10, (7, 3, 90)),
            (TlFraction::F15, (10, 5, 85)),
            (TlFraction::F20, (15, 5, 80)),
        ] {
            let samples = subject_windows("s1", 100, 10);
            let sets = split_transfer(samples, frac, &mut Rng::seed(4)).unwrap();
            assert_eq!(sets.train.len(), want.0 * 10, "{frac:?} train");
            assert_eq!(sets.val.len(), want.1 * 10, "{frac:?} val");
            assert_eq!(sets.test.len(), want.2 * 10, "{frac:?} test");
        }
    }

    #[test]
    fn transfer_split_survives_few_trials() {
        let samples = subject_windows("s1", 4, 25);
        let sets = split_transfer(samples, TlFraction::F5, &mut Rng::seed(5)).unwrap();
        assert!(!sets.train.is_empty());
        assert!(!sets.val.is_empty());
        assert!(!sets.test.is_empty());
    }

    #[test]
    fn fraction_percent_roundtrips() {
        for f in ALL_TL_FRACTIONS {
            assert_eq!(TlFraction::from_percent(f.percent()).unwrap(), f);
        }
        assert!(TlFraction::from_percent(25).is_err());
    }

    #[test]
    fn split_outputs_are_sorted_by_trial() {
        let samples = subject_windows("s1", 10, 8);
        let sets = split_dep(samples, &mut Rng::seed(6)).unwrap();
        for part in [&sets.train, &sets.val, &sets.test] {
            let ids: Vec<&str> = part.iter().map(|s| s.trial_id.as_str()).collect();
            let mut sorted = ids.clone();
            sorted.sort();
            assert_eq!(ids, sorted);
        }
    }
}
