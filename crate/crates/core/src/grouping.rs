//! User grouping by genre profile: seeded k-means and elbow selection of the
//! group count.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Interaction, MusicMeta};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::par::{map_slice, Execution};

/// Fraction of a user's train records falling in each genre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenreProfile {
    pub user: usize,
    pub proportions: Vec<f64>,
}

impl AsRef<[f64]> for GenreProfile {
    fn as_ref(&self) -> &[f64] {
        &self.proportions
    }
}

/// Profiles for every user with at least one train record, ordered by user.
pub fn genre_profiles(train: &[Interaction], music: &[MusicMeta], n_genres: usize) -> Vec<GenreProfile> {
    let n_users = train.iter().map(|r| r.user + 1).max().unwrap_or(0);
    let mut counts = vec![vec![0usize; n_genres]; n_users];
    for r in train {
        counts[r.user][music[r.music].genre] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .filter_map(|(user, c)| {
            let total: usize = c.iter().sum();
            (total > 0).then(|| GenreProfile {
                user,
                proportions: c.iter().map(|&n| n as f64 / total as f64).collect(),
            })
        })
        .collect()
}

/// Output of one k-means run over a point set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    /// Cluster of each input point, in input order.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration.
    pub trace: Vec<f64>,
}

impl GroupAssignment {
    pub fn n_groups(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_init<P: AsRef<[f64]>>(points: &[P], g: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.below(n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p.as_ref(), &centroids[0])).collect();
    while centroids.len() < g {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            if d2[pick] == 0.0 {
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.below(n)
        };
        let c = points[pick].as_ref().to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm from a k-means++ start. An emptied cluster is re-seeded
/// at the point farthest from its current centroid (lowest index on ties).
pub fn kmeans<P: AsRef<[f64]>>(points: &[P], g: usize, seed: u64, max_iter: usize) -> Result<GroupAssignment> {
    if g == 0 || g > points.len() {
        return Err(Error::Domain(format!(
            "group count {g} must be in 1..={} (number of profiles)",
            points.len()
        )));
    }
    let dim = points[0].as_ref().len();
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.as_ref().len(),
        });
    }
    let mut rng = Rng::new(seed).substream("kmeans");
    let mut centroids = plus_plus_init(points, g, &mut rng);
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p.as_ref(), &centroids).0).collect();
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut sums = vec![vec![0.0; dim]; g];
        let mut counts = vec![0usize; g];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p.as_ref()) {
                *s += x;
            }
        }
        for k in 0..g {
            if counts[k] > 0 {
                centroids[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
        for k in 0..g {
            if counts[k] > 0 {
                continue;
            }
            let mut far = (0, -1.0);
            for (i, (p, &l)) in points.iter().zip(&labels).enumerate() {
                if counts[l] <= 1 {
                    continue;
                }
                let d = sq_dist(p.as_ref(), &centroids[l]);
                if d > far.1 {
                    far = (i, d);
                }
            }
            if far.1 < 0.0 {
                continue;
            }
            counts[labels[far.0]] -= 1;
            labels[far.0] = k;
            counts[k] = 1;
            centroids[k] = points[far.0].as_ref().to_vec();
        }
        let mut changed = false;
        let mut inertia = 0.0;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let (k, d) = nearest(p.as_ref(), &centroids);
            if k != *l && d < sq_dist(p.as_ref(), &centroids[*l]) {
                *l = k;
                changed = true;
            }
            inertia += sq_dist(p.as_ref(), &centroids[*l]);
        }
        trace.push(inertia);
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p.as_ref(), &centroids[l]))
        .sum();
    Ok(GroupAssignment {
        labels,
        centroids,
        inertia,
        trace,
    })
}

/// Lowest-inertia run out of `restarts` seeds derived from `seed`.
pub fn kmeans_best<P: AsRef<[f64]>>(
    points: &[P],
    g: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
) -> Result<GroupAssignment> {
    let root = Rng::new(seed);
    let mut best: Option<GroupAssignment> = None;
    for r in 0..restarts.max(1) {
        let s = root.substream_indexed("kmeans-restart", r as u64).seed();
        let run = kmeans(points, g, s, max_iter)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Index of the knee: the candidate with the largest positive second
/// difference `y[i-1] − 2y[i] + y[i+1]`. Without a positive one, the first
/// candidate. Ties go to the lower candidate.
pub fn knee_of_curve(curve: &[(usize, f64)]) -> Result<usize> {
    if curve.len() < 3 {
        return Err(Error::Domain("elbow selection needs at least 3 candidates".into()));
    }
    let mut best = (curve[0].0, 0.0);
    for w in curve.windows(3) {
        let d2 = w[0].1 - 2.0 * w[1].1 + w[2].1;
        if d2 > best.1 {
            best = (w[1].0, d2);
        }
    }
    Ok(best.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElbowResult {
    /// `(G, inertia)` for every candidate.
    pub curve: Vec<(usize, f64)>,
    pub best: usize,
}

pub const KMEANS_RESTARTS: usize = 5;
pub const KMEANS_MAX_ITER: usize = 100;

/// Run best-of-5 k-means for each candidate group count and pick the knee.
pub fn elbow_select<P: AsRef<[f64]> + Sync>(
    points: &[P],
    candidates: &[usize],
    seed: u64,
    exec: Execution,
) -> Result<ElbowResult> {
    if candidates.len() < 3 {
        return Err(Error::Domain("elbow selection needs at least 3 candidates".into()));
    }
    if candidates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain(format!("group candidates must be strictly ascending: {candidates:?}")));
    }
    let runs = map_slice(candidates, exec, |&g| {
        kmeans_best(points, g, seed, KMEANS_RESTARTS, KMEANS_MAX_ITER).map(|a| (g, a.inertia))
    });
    let curve = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let best = knee_of_curve(&curve)?;
    Ok(ElbowResult { curve, best })
}

/// Group of every user. Users without a profile join the largest group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserGroups {
    pub group_of: Vec<usize>,
    pub n_groups: usize,
}

impl UserGroups {
    pub fn from_assignment(profiles: &[GenreProfile], assignment: &GroupAssignment, n_users: usize) -> Self {
        let sizes = assignment.sizes();
        let largest = crate::dataset::argmax(&sizes.iter().map(|&s| s as f64).collect::<Vec<_>>());
        let mut group_of = vec![largest; n_users];
        for (p, &l) in profiles.iter().zip(&assignment.labels) {
            group_of[p.user] = l;
        }
        Self {
            group_of,
            n_groups: assignment.n_groups(),
        }
    }

    /// Every user in group 0.
    pub fn single(n_users: usize) -> Self {
        Self {
            group_of: vec![0; n_users],
            n_groups: 1,
        }
    }

    pub fn members(&self, g: usize) -> Vec<usize> {
        (0..self.group_of.len()).filter(|&u| self.group_of[u] == g).collect()
    }
}

pub fn write_curve_csv(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::dataset::csv_io)?;
    w.write_record(["G", "inertia"]).map_err(crate::dataset::csv_io)?;
    for (g, inertia) in curve {
        w.write_record([g.to_string(), format!("{inertia:?}")])
            .map_err(crate::dataset::csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_assignment_csv(path: &Path, groups: &UserGroups, user_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::dataset::csv_io)?;
    w.write_record(["user", "group"]).map_err(crate::dataset::csv_io)?;
    for (u, g) in groups.group_of.iter().enumerate() {
        let name = user_names.get(u).map_or_else(|| u.to_string(), Clone::clone);
        w.write_record([name, g.to_string()]).map_err(crate::dataset::csv_io)?;
    }
    w.flush()?;
    Ok(())
}
