//! KMeans with kmeans++ seeding, Lloyd iterations and best-of-restarts.

use ndarray::{Array2, ArrayView2};

use super::{DecError, Result};
use crate::net::{derive_seed, RngState};
use crate::Matrix;

pub const MAX_LLOYD_ITERATIONS: usize = 300;
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Matrix,
    pub assignments: Vec<usize>,
    pub inertia: f32,
    /// Inertia after each assignment step of the winning restart.
    pub history: Vec<f64>,
    pub restart: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest center; ties go to the lower index.
fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    crate::parallel::map_range(points.len(), |i| nearest(&points[i], centers))
        .into_iter()
        .unzip()
}

fn plus_plus_seed(points: &[Vec<f64>], m: usize, rng: &mut RngState) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.below(n)].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < m {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() as f64 * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.below(n)
        };
        let c = points[pick].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// Moves the point farthest from its own center into each empty cluster,
/// never emptying a donor.
fn repair_empty(assignments: &mut [usize], dist: &mut [f64], m: usize) {
    let mut counts = vec![0usize; m];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for j in 0..m {
        if counts[j] > 0 {
            continue;
        }
        let donor = (0..assignments.len())
            .filter(|&i| counts[assignments[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dist[b] >= dist[i] => Some(b),
                _ => Some(i),
            });
        if let Some(i) = donor {
            counts[assignments[i]] -= 1;
            assignments[i] = j;
            counts[j] += 1;
            dist[i] = 0.0;
        }
    }
}

fn means(points: &[Vec<f64>], assignments: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = previous[0].len();
    let mut sums = vec![vec![0f64; d]; previous.len()];
    let mut counts = vec![0usize; previous.len()];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((s, c), prev)| {
            if c == 0 {
                prev.clone()
            } else {
                s.into_iter().map(|v| v / c as f64).collect()
            }
        })
        .collect()
}

struct Run {
    centers: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    inertia: f64,
    history: Vec<f64>,
}

fn lloyd(points: &[Vec<f64>], m: usize, rng: &mut RngState) -> Run {
    let mut centers = plus_plus_seed(points, m, rng);
    let mut history = Vec::new();
    let mut previous: Option<Vec<usize>> = None;
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let (mut assignments, mut dist) = assign(points, &centers);
        history.push(dist.iter().sum());
        if previous.as_ref() == Some(&assignments) {
            let inertia = *history.last().unwrap();
            return Run { centers, assignments, inertia, history };
        }
        repair_empty(&mut assignments, &mut dist, m);
        centers = means(points, &assignments, &centers);
        previous = Some(assignments);
    }
    let (assignments, dist) = assign(points, &centers);
    let inertia: f64 = dist.iter().sum();
    history.push(inertia);
    Run { centers, assignments, inertia, history }
}

/// Best-inertia KMeans over `restarts` kmeans++ initialisations. Restart `r`
/// draws from a seed derived from `(seed, r)`; ties keep the earlier restart.
pub fn kmeans_fit(data: ArrayView2<'_, f32>, m: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    let n = data.nrows();
    if m == 0 || n < m {
        return Err(DecError::Argument(format!("need at least m = {m} points, got {n}")));
    }
    let restarts = restarts.max(1);
    let points: Vec<Vec<f64>> = data
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let runs = crate::parallel::map_range(restarts, |r| {
        let mut rng = RngState::new(derive_seed(seed, r as u64));
        lloyd(&points, m, &mut rng)
    });
    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.inertia < a.1.inertia { b } else { a })
        .unwrap();
    let d = data.ncols();
    let centers = Array2::from_shape_fn((m, d), |(j, k)| best.centers[j][k] as f32);
    Ok(KMeansResult {
        centers,
        assignments: best.assignments,
        inertia: best.inertia as f32,
        history: best.history,
        restart,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_pairs_on_a_line() {
        let x = array![[0.0f32], [1.0], [10.0], [11.0]];
        let r = kmeans_fit(x.view(), 2, 1, DEFAULT_RESTARTS).unwrap();
        let mut c: Vec<f32> = r.centers.iter().copied().collect();
        c.sort_by(f32::total_cmp);
        assert_eq!(c, vec![0.5, 10.5]);
        assert_eq!(r.inertia, 1.0);
    }

    #[test]
    fn brute_force_two_partitions_agree() {
        // Exhaustive oracle over all 2-partitions of a small 1-d set.
        let pts = [0.0f64, 1.0, 10.0, 11.0];
        let mut best = f64::INFINITY;
        for mask in 1..(1u32 << pts.len()) - 1 {
            let (a, b): (Vec<f64>, Vec<f64>) = (0..pts.len()).map(|i| (i, pts[i])).fold(
                (vec![], vec![]),
                |(mut a, mut b), (i, p)| {
                    if mask >> i & 1 == 1 { a.push(p) } else { b.push(p) }
                    (a, b)
                },
            );
            let sse = |v: &[f64]| {
                let mu = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|x| (x - mu).powi(2)).sum::<f64>()
            };
            best = best.min(sse(&a) + sse(&b));
        }
        assert_eq!(best, 1.0);
    }

    #[test]
    fn one_point_per_cluster_when_m_equals_n() {
        let x = array![[0.0f32, 1.0], [5.0, 5.0], [-3.0, 2.0], [9.0, -1.0]];
        let r = kmeans_fit(x.view(), 4, 3, 4).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3]);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let x = array![[0.0f32], [1.0]];
        assert!(matches!(kmeans_fit(x.view(), 3, 0, 1), Err(DecError::Argument(_))));
    }

    #[test]
    fn labels_are_nearest_centers_and_inertia_monotone() {
        let mut rng = RngState::new(12);
        let x = Array2::from_shape_fn((300, 4), |(i, _)| (i % 5) as f32 * 3.0 + rng.uniform_in(-1.5, 1.5));
        for seed in 0..5 {
            let r = kmeans_fit(x.view(), 5, seed, 3).unwrap();
            for (i, row) in x.rows().into_iter().enumerate() {
                let d = |j: usize| {
                    row.iter()
                        .zip(r.centers.row(j))
                        .map(|(a, b)| ((a - b) as f64).powi(2))
                        .sum::<f64>()
                };
                let own = d(r.assignments[i]);
                assert!((0..5).all(|j| own <= d(j) + 1e-9));
            }
            for w in r.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs());
            }
        }
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let x = array![[1.0f32], [1.0], [1.0], [2.0]];
        let r = kmeans_fit(x.view(), 3, 0, 2).unwrap();
        let mut counts = [0; 3];
        for &a in &r.assignments {
            counts[a] += 1;
        }
        assert!(r.centers.iter().all(|v| v.is_finite()));
        assert_eq!(counts.iter().sum::<usize>(), 4);
    }
}
