//! K-means clustering of the covariate space and precomputation of the
//! per-cluster moment statistics that let the control-variate sum be
//! evaluated with `K` log-density evaluations instead of `n`.
//!
//! Lloyd iterations run on covariate rows standardized column-wise to zero
//! mean / unit variance, with k-means++ style seeding and a fixed iteration
//! cap; everything is deterministic given the seed. Centroids are set to the
//! member means in the original covariate space after the final assignment,
//! which makes the first-order deviation sums vanish up to rounding.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};

const MAX_LLOYD_ITERS: usize = 50;

/// Cluster assignment over an index scope plus the moment statistics
/// (member counts, deviation sums and scatter matrices around each centroid).
#[derive(Debug, Clone)]
pub struct ClusterModel {
    k: usize,
    /// K x p centroid rows in the original covariate space.
    centroids: DMatrix<f64>,
    counts: Vec<usize>,
    dev_sums: Vec<DVector<f64>>,
    dev_outer_sums: Vec<DMatrix<f64>>,
    /// Cluster id per scope position.
    assignment: Vec<usize>,
    /// Dataset index -> cluster id.
    cluster_of: HashMap<usize, usize>,
    scope: Vec<usize>,
    /// Common response value over the scope (the moment formulas require a
    /// response-homogeneous scope).
    scope_response: f64,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn centroids(&self) -> &DMatrix<f64> {
        &self.centroids
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn dev_sums(&self) -> &[DVector<f64>] {
        &self.dev_sums
    }

    pub fn dev_outer_sums(&self) -> &[DMatrix<f64>] {
        &self.dev_outer_sums
    }

    /// Cluster id per scope position (aligned with [`Self::scope`]).
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Cluster id of dataset index `k`, if `k` is in the clustered scope.
    pub fn cluster_of(&self, k: usize) -> Option<usize> {
        self.cluster_of.get(&k).copied()
    }

    pub fn scope(&self) -> &[usize] {
        &self.scope
    }

    pub fn scope_len(&self) -> usize {
        self.scope.len()
    }

    pub fn scope_response(&self) -> f64 {
        self.scope_response
    }
}

/// Cluster `scope` (a set of dataset indices) into `k` clusters.
///
/// Errors if the scope is empty, `k` is out of range, or the scope mixes
/// response values.
pub fn build_clusters(data: &Dataset, k: usize, scope: &[usize], seed: u64) -> Result<ClusterModel> {
    if scope.is_empty() {
        return Err(Error::invalid("cluster scope is empty"));
    }
    if k == 0 || k > scope.len() {
        return Err(Error::invalid(format!(
            "cluster count K = {k} out of range 1..={}",
            scope.len()
        )));
    }
    if scope.iter().any(|&i| i >= data.n()) {
        return Err(Error::invalid("scope index out of dataset bounds"));
    }
    let scope_response = data.response(scope[0]);
    if scope.iter().any(|&i| data.response(i) != scope_response) {
        return Err(Error::invalid(
            "cluster scope mixes response values; cluster within one class",
        ));
    }

    let p = data.p();
    let x = data.covariates();

    // Column standardization over the scope; near-constant columns (the
    // intercept) keep scale one.
    let ns = scope.len();
    let mut mean = vec![0.0; p];
    let mut scale = vec![1.0; p];
    for j in 0..p {
        let mu = scope.iter().map(|&i| x[(i, j)]).sum::<f64>() / ns as f64;
        let var = scope.iter().map(|&i| (x[(i, j)] - mu).powi(2)).sum::<f64>() / ns as f64;
        mean[j] = mu;
        if var.sqrt() > 1e-12 {
            scale[j] = var.sqrt();
        }
    }
    let std_row = |i: usize| -> DVector<f64> {
        DVector::from_fn(p, |j, _| (x[(i, j)] - mean[j]) / scale[j])
    };
    let rows: Vec<DVector<f64>> = scope.iter().map(|&i| std_row(i)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp_seed(&rows, k, &mut rng);
    let mut assignment = vec![0usize; ns];

    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (pos, row) in rows.iter().enumerate() {
            let c = nearest(row, &centers);
            if assignment[pos] != c {
                assignment[pos] = c;
                changed = true;
            }
        }
        fix_empty_clusters(&rows, &centers, &mut assignment, k);

        // Means in standardized space.
        let mut sums = vec![DVector::<f64>::zeros(p); k];
        let mut counts = vec![0usize; k];
        for (pos, row) in rows.iter().enumerate() {
            sums[assignment[pos]] += row;
            counts[assignment[pos]] += 1;
        }
        for c in 0..k {
            centers[c] = &sums[c] / counts[c] as f64;
        }
        if !changed {
            break;
        }
    }
    // Final assignment against the last centers, keeping empties fixed.
    for (pos, row) in rows.iter().enumerate() {
        assignment[pos] = nearest(row, &centers);
    }
    fix_empty_clusters(&rows, &centers, &mut assignment, k);

    // Moment pass in the original space with centroids at the member means.
    let mut counts = vec![0usize; k];
    for &c in &assignment {
        counts[c] += 1;
    }
    let mut centroids = DMatrix::zeros(k, p);
    for (pos, &i) in scope.iter().enumerate() {
        let c = assignment[pos];
        for j in 0..p {
            centroids[(c, j)] += x[(i, j)];
        }
    }
    for c in 0..k {
        for j in 0..p {
            centroids[(c, j)] /= counts[c] as f64;
        }
    }
    let mut dev_sums = vec![DVector::<f64>::zeros(p); k];
    let mut dev_outer_sums = vec![DMatrix::<f64>::zeros(p, p); k];
    for (pos, &i) in scope.iter().enumerate() {
        let c = assignment[pos];
        let dev = DVector::from_fn(p, |j, _| x[(i, j)] - centroids[(c, j)]);
        dev_sums[c] += &dev;
        dev_outer_sums[c] += &dev * dev.transpose();
    }

    let cluster_of = scope
        .iter()
        .enumerate()
        .map(|(pos, &i)| (i, assignment[pos]))
        .collect();

    Ok(ClusterModel {
        k,
        centroids,
        counts,
        dev_sums,
        dev_outer_sums,
        assignment,
        cluster_of,
        scope: scope.to_vec(),
        scope_response,
    })
}

fn nearest(row: &DVector<f64>, centers: &[DVector<f64>]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = (row - center).norm_squared();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// k-means++ seeding: first center uniform, the rest proportional to the
/// squared distance to the closest chosen center.
fn kmeans_pp_seed(rows: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let ns = rows.len();
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; ns];
    let first = rng.random_range(0..ns);
    centers.push(rows[first].clone());
    chosen[first] = true;

    let mut d2: Vec<f64> = rows
        .iter()
        .map(|r| (r - &centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = ns - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All remaining points coincide with chosen centers; take the
            // first unchosen one.
            chosen.iter().position(|&c| !c).unwrap_or(0)
        };
        chosen[idx] = true;
        centers.push(rows[idx].clone());
        for (i, row) in rows.iter().enumerate() {
            let d = (row - centers.last().unwrap()).norm_squared();
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centers
}

/// Re-seed every empty cluster from the point farthest from its centroid,
/// never emptying a singleton donor.
fn fix_empty_clusters(
    rows: &[DVector<f64>],
    centers: &[DVector<f64>],
    assignment: &mut [usize],
    k: usize,
) {
    let mut counts = vec![0usize; k];
    for &c in assignment.iter() {
        counts[c] += 1;
    }
    for empty in 0..k {
        while counts[empty] == 0 {
            let mut far_pos = usize::MAX;
            let mut far_d = -1.0;
            for (pos, row) in rows.iter().enumerate() {
                let c = assignment[pos];
                if counts[c] <= 1 {
                    continue;
                }
                let d = (row - &centers[c]).norm_squared();
                if d > far_d {
                    far_d = d;
                    far_pos = pos;
                }
            }
            if far_pos == usize::MAX {
                break; // nothing movable
            }
            counts[assignment[far_pos]] -= 1;
            assignment[far_pos] = empty;
            counts[empty] += 1;
        }
    }
}
