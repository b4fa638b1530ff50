use super::ListenedIndex;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeDraw {
    pub items: Vec<usize>,
    /// Set when the eligible pool had fewer than `k` tracks and the whole
    /// pool was returned.
    pub short: bool,
}

/// Draw `k` distinct tracks uniformly from the tracks `user` has not listened
/// to, excluding `positive`.
pub fn negative_sample(
    listened: &ListenedIndex,
    n_music: usize,
    user: usize,
    positive: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<NegativeDraw> {
    if k == 0 {
        return Err(Error::Domain("negative sample count must be at least 1".into()));
    }
    let seen = listened.tracks(user);
    let excluded = |v: usize| v == positive || seen.binary_search(&v).is_ok();
    let n_excluded = seen.len() + usize::from(positive < n_music && seen.binary_search(&positive).is_err());
    let pool_size = n_music.saturating_sub(n_excluded);
    if pool_size == 0 {
        return Err(Error::Domain(format!("user {user} has no eligible negative tracks")));
    }
    if pool_size <= k {
        let items: Vec<usize> = (0..n_music).filter(|&v| !excluded(v)).collect();
        return Ok(NegativeDraw {
            items,
            short: pool_size < k,
        });
    }
    let mut items = Vec::with_capacity(k);
    if pool_size * 2 >= n_music {
        while items.len() < k {
            let v = rng.below(n_music);
            if !excluded(v) && !items.contains(&v) {
                items.push(v);
            }
        }
    } else {
        let mut pool: Vec<usize> = (0..n_music).filter(|&v| !excluded(v)).collect();
        for i in 0..k {
            let j = i + rng.below(pool.len() - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        items = pool;
    }
    Ok(NegativeDraw { items, short: false })
}
