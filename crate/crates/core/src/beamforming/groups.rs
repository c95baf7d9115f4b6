use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

use super::formulation::{subsets, Mask};

/// Largest number of simultaneous streams; common-user subsets grow as 2^S.
pub const MAX_STREAMS: usize = 4;

/// The head-of-line files of one transmission and the users wanting each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceGroups {
    files: Vec<usize>,
    user_sets: Vec<BTreeSet<usize>>,
}

impl ServiceGroups {
    pub fn new(files: Vec<usize>, user_sets: Vec<BTreeSet<usize>>) -> Result<Self> {
        if files.is_empty() || files.len() != user_sets.len() {
            return Err(Error::InvalidArgument(
                "need one nonempty user set per served file".into(),
            ));
        }
        if files.len() > MAX_STREAMS {
            return Err(Error::InvalidArgument(format!(
                "{} streams exceed the supported maximum of {MAX_STREAMS}",
                files.len()
            )));
        }
        if user_sets.iter().any(BTreeSet::is_empty) {
            return Err(Error::InvalidArgument("every stream needs at least one user".into()));
        }
        let distinct: BTreeSet<_> = files.iter().collect();
        if distinct.len() != files.len() {
            return Err(Error::InvalidArgument("served files must be distinct".into()));
        }
        Ok(ServiceGroups { files, user_sets })
    }

    /// `streams` groups over users `0..users`, each a random nonempty
    /// subset, so users may be common to several streams.
    pub fn random<R: Rng + ?Sized>(users: usize, streams: usize, rng: &mut R) -> Result<Self> {
        if users == 0 {
            return Err(Error::InvalidArgument("need at least one user".into()));
        }
        let sets = (0..streams)
            .map(|_| {
                let size = rng.random_range(1..=users);
                index::sample(rng, users, size).into_iter().collect()
            })
            .collect();
        Self::new((0..streams).collect(), sets)
    }

    /// One stream with the given users.
    pub fn single(file: usize, users: impl IntoIterator<Item = usize>) -> Result<Self> {
        Self::new(vec![file], vec![users.into_iter().collect()])
    }

    pub fn streams(&self) -> usize {
        self.files.len()
    }

    pub fn files(&self) -> &[usize] {
        &self.files
    }

    pub fn user_sets(&self) -> &[BTreeSet<usize>] {
        &self.user_sets
    }

    /// Union of the user sets.
    pub fn all_users(&self) -> BTreeSet<usize> {
        self.user_sets.iter().flatten().copied().collect()
    }

    /// Bit `s` is set when `user` wants stream `s`.
    pub fn wanted_mask(&self, user: usize) -> Mask {
        self.user_sets
            .iter()
            .enumerate()
            .filter(|(_, set)| set.contains(&user))
            .fold(0, |m, (s, _)| m | (1 << s))
    }

    pub fn wanted_streams(&self, user: usize) -> Vec<usize> {
        (0..self.streams())
            .filter(|&s| self.user_sets[s].contains(&user))
            .collect()
    }

    /// `(A, U_A)` for every stream subset `A` with `|A| > 1` that some user
    /// requests in full.
    pub fn common_user_subsets(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let all: Mask = ((1u16 << self.streams()) - 1) as Mask;
        subsets(all, 2)
            .into_iter()
            .filter_map(|a| {
                let users: Vec<usize> = self
                    .all_users()
                    .into_iter()
                    .filter(|&u| self.wanted_mask(u) & a == a)
                    .collect();
                let streams = (0..self.streams()).filter(|s| a & (1 << s) != 0).collect();
                (!users.is_empty()).then_some((streams, users))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn rejects_empty_group() {
        assert!(ServiceGroups::new(vec![0], vec![set(&[])]).is_err());
        assert!(ServiceGroups::new(vec![], vec![]).is_err());
    }

    #[test]
    fn rejects_duplicate_files_and_too_many_streams() {
        assert!(ServiceGroups::new(vec![1, 1], vec![set(&[0]), set(&[1])]).is_err());
        let five = (0..5).collect();
        assert!(ServiceGroups::new(five, vec![set(&[0]); 5]).is_err());
    }

    #[test]
    fn common_users() {
        let g = ServiceGroups::new(vec![4, 7, 9], vec![set(&[0, 1]), set(&[1, 2]), set(&[1])]).unwrap();
        assert_eq!(g.wanted_mask(1), 0b111);
        assert_eq!(g.wanted_streams(2), vec![1]);
        let common = g.common_user_subsets();
        assert!(common.iter().all(|(_, users)| users == &vec![1]));
        assert_eq!(common.len(), 4);
    }
}
