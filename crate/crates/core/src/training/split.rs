use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainingError;

/// Number of groups that go to the training side.
///
/// The tiny epsilon absorbs binary rounding of products like `0.85 * 88_000`
/// that should be exact integers.
pub fn train_group_count(ratio: f64, groups: usize) -> usize {
    let exact = ratio * groups as f64;
    ((exact + exact.abs() * 1e-12).floor() as usize).min(groups)
}

/// Seeded grouped split.
///
/// Distinct group keys are sorted, shuffled with `seed`, and the first
/// `floor(ratio * groups)` become training groups. Items keep their input
/// order on each side.
pub fn split_dataset<T, F>(items: Vec<T>, ratio: f64, seed: u64, key: F) -> Result<(Vec<T>, Vec<T>), TrainingError>
where
    F: Fn(&T) -> &str,
{
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(TrainingError::InvalidRatio(ratio));
    }
    let mut groups: Vec<String> = items.iter().map(|i| key(i).to_string()).collect::<BTreeSet<_>>().into_iter().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = train_group_count(ratio, groups.len());
    let train_groups: HashSet<&str> = groups[..n_train].iter().map(String::as_str).collect();

    let (train, test): (Vec<T>, Vec<T>) = items.into_iter().partition(|i| train_groups.contains(key(i)));
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_discussions() {
        let ids: Vec<String> = (0..100).map(|i| format!("d{i}")).collect();
        let (train, test) = split_dataset(ids.clone(), 0.85, 42, |s| s.as_str()).unwrap();
        assert_eq!((train.len(), test.len()), (85, 15));
        let again = split_dataset(ids, 0.85, 42, |s| s.as_str()).unwrap();
        assert_eq!(again, (train, test));
    }

    #[test]
    fn groups_stay_together() {
        let items: Vec<(String, usize)> = (0..60).map(|i| (format!("d{}", i / 3), i)).collect();
        let (train, test) = split_dataset(items, 0.5, 1, |(g, _)| g.as_str()).unwrap();
        let tg: HashSet<&str> = train.iter().map(|(g, _)| g.as_str()).collect();
        assert!(test.iter().all(|(g, _)| !tg.contains(g.as_str())));
        assert_eq!(train.len() + test.len(), 60);
        assert_eq!(tg.len(), 10);
        assert!(train.windows(2).all(|w| w[0].1 < w[1].1));
    }

    #[test]
    fn paper_scale_arithmetic() {
        assert_eq!(train_group_count(0.85, 88_000), 74_800);
        assert_eq!(train_group_count(0.85, 100), 85);
        assert_eq!(train_group_count(0.5, 3), 1);
    }

    #[test]
    fn bad_ratio() {
        for r in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(split_dataset(vec!["a".to_string()], r, 0, |s| s.as_str()).is_err());
        }
    }
}
