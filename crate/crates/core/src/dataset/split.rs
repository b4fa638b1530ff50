use serde::{Deserialize, Serialize};

use super::Interaction;
use crate::numerics::Rng;

/// Sorted, deduplicated tracks each user listened to in the train split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ListenedIndex {
    per_user: Vec<Vec<usize>>,
}

impl ListenedIndex {
    pub fn build(records: &[Interaction], n_users: usize) -> Self {
        let n = records.iter().map(|r| r.user + 1).max().unwrap_or(0).max(n_users);
        let mut per_user = vec![Vec::new(); n];
        for r in records {
            per_user[r.user].push(r.music);
        }
        for list in &mut per_user {
            list.sort_unstable();
            list.dedup();
        }
        Self { per_user }
    }

    pub fn n_users(&self) -> usize {
        self.per_user.len()
    }

    /// Tracks `user` listened to; empty for unknown users.
    pub fn tracks(&self, user: usize) -> &[usize] {
        self.per_user.get(user).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, user: usize, music: usize) -> bool {
        self.tracks(user).binary_search(&music).is_ok()
    }

    pub fn has_history(&self, user: usize) -> bool {
        !self.tracks(user).is_empty()
    }
}

/// Record-level split. `cold` holds validation/test records of users with no
/// train history; they are kept out of evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<Interaction>,
    pub validation: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub cold: Vec<Interaction>,
    pub listened: ListenedIndex,
}

/// Shuffle records with `seed`, then carve `⌊N/10⌋` for validation,
/// `⌊N/10⌋` for test and the rest for train.
pub fn split_8_1_1(data: &[Interaction], seed: u64) -> SplitDataset {
    let mut order: Vec<usize> = (0..data.len()).collect();
    Rng::new(seed).substream("split").shuffle(&mut order);
    let n_tenth = data.len() / 10;
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i]).collect::<Vec<_>>();
    let validation = pick(&order[..n_tenth]);
    let test = pick(&order[n_tenth..2 * n_tenth]);
    let train = pick(&order[2 * n_tenth..]);
    let n_users = data.iter().map(|r| r.user + 1).max().unwrap_or(0);
    let listened = ListenedIndex::build(&train, n_users);
    let mut cold = Vec::new();
    let mut keep = |rs: Vec<Interaction>| {
        let (warm, c): (Vec<_>, Vec<_>) = rs.into_iter().partition(|r| listened.has_history(r.user));
        cold.extend(c);
        warm
    };
    let validation = keep(validation);
    let test = keep(test);
    SplitDataset {
        train,
        validation,
        test,
        cold,
        listened,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize, users: usize) -> Vec<Interaction> {
        (0..n)
            .map(|i| Interaction {
                user: i % users,
                emotion: i % 3,
                music: i % 7,
            })
            .collect()
    }

    #[test]
    fn ten_records_split_8_1_1() {
        let s = split_8_1_1(&records(10, 1), 3);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn full_size_arithmetic() {
        let n = 157_472;
        assert_eq!((n - 2 * (n / 10), n / 10), (125_978, 15_747));
    }

    #[test]
    fn same_seed_same_split() {
        let data = records(200, 13);
        assert_eq!(split_8_1_1(&data, 5), split_8_1_1(&data, 5));
        assert_ne!(split_8_1_1(&data, 5).train, split_8_1_1(&data, 6).train);
    }

    #[test]
    fn cold_users_leave_evaluation() {
        let data = records(20, 20);
        let s = split_8_1_1(&data, 1);
        assert_eq!(s.validation.len() + s.test.len(), 0);
        assert_eq!(s.cold.len(), 4);
    }
}
