//! Per-patient k-means over patch features. The resulting phenotype clusters
//! are the instances the downstream model pools over; clustering one patient
//! never reads another patient's patches.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PatientBag;
use crate::error::{Error, Result};
use crate::util::patient_seed;

/// Options for per-patient clustering. The per-patient RNG is derived from
/// `seed` and the patient id, so patients can be clustered in parallel
/// without losing determinism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Convergence threshold on the maximum centroid displacement.
    pub tol: f64,
    /// Z-score each feature dimension over the bag before clustering.
    /// Distances only; downstream tensors always hold raw features.
    pub standardize: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 6,
            seed: 0,
            max_iter: 100,
            tol: 1e-4,
            standardize: false,
        }
    }
}

/// Cluster labels and centroids for one patient. `counts` may contain zeros:
/// empty clusters are kept, not re-seeded, because the model masks them out.
#[derive(Debug, Clone)]
pub struct PhenotypeAssignment {
    pub patient_id: String,
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub counts: Vec<usize>,
    pub inertia: f64,
}

/// The patches of one cluster, in original patch order, widened to f64.
#[derive(Debug, Clone)]
pub struct PhenotypeTensor {
    pub cluster_index: usize,
    pub features: Array2<f64>,
}

impl PhenotypeTensor {
    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn n_patches(&self) -> usize {
        self.features.nrows()
    }
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Nearest centroid; ties break toward the lowest cluster index.
fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let dist = squared_distance(point, row);
        if dist < best_dist {
            best_dist = dist;
            best = c;
        }
    }
    (best, best_dist)
}

fn kmeanspp_seed(data: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let m = data.nrows();
    let d = data.ncols();
    let mut centroids = Array2::zeros((k, d));
    let first = rng.gen_range(0..m);
    centroids.row_mut(0).assign(&data.row(first));

    let mut dist2 = vec![0.0f64; m];
    for c in 1..k {
        let mut total = 0.0;
        for (i, row) in data.rows().into_iter().enumerate() {
            let (_, dist) = nearest(row, &centroids.slice(ndarray::s![..c, ..]).to_owned());
            dist2[i] = dist;
            total += dist;
        }
        let pick = if total > 0.0 {
            // Sample proportional to squared distance from the chosen set.
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = m - 1;
            for (i, &w) in dist2.iter().enumerate() {
                acc += w;
                if acc >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // Every point already coincides with a centroid (duplicates).
            rng.gen_range(0..m)
        };
        centroids.row_mut(c).assign(&data.row(pick));
    }
    centroids
}

fn standardized(data: &Array2<f64>) -> Array2<f64> {
    let m = data.nrows() as f64;
    let mut out = data.clone();
    for mut col in out.columns_mut() {
        let mean = col.sum() / m;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        let sd = var.sqrt();
        if sd > 0.0 {
            col.mapv_inplace(|v| (v - mean) / sd);
        } else {
            col.fill(0.0);
        }
    }
    out
}

/// Lloyd's algorithm with k-means++ seeding, plus the per-iteration inertia
/// trace (non-increasing by construction).
pub fn kmeans_with_trace(
    bag: &PatientBag,
    config: &ClusterConfig,
) -> Result<(PhenotypeAssignment, Vec<f64>)> {
    if config.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if config.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    if !(config.tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tol must be non-negative, got {}",
            config.tol
        )));
    }
    let m = bag.n_patches();
    if m == 0 {
        return Err(Error::EmptyBag);
    }
    let k = config.k;
    let raw = bag.features_f64();
    let data = if config.standardize {
        standardized(&raw)
    } else {
        raw
    };
    let d = data.ncols();

    // Fewer patches than clusters: every patch seeds a singleton cluster and
    // the remainder stay empty.
    if m <= k {
        let mut centroids = Array2::zeros((k, d));
        let mut counts = vec![0usize; k];
        let mut labels = Vec::with_capacity(m);
        for i in 0..m {
            centroids.row_mut(i).assign(&data.row(i));
            counts[i] = 1;
            labels.push(i);
        }
        return Ok((
            PhenotypeAssignment {
                patient_id: bag.patient_id().to_string(),
                k,
                labels,
                centroids,
                counts,
                inertia: 0.0,
            },
            vec![0.0],
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(patient_seed(config.seed, bag.patient_id()));
    let mut centroids = kmeanspp_seed(&data, k, &mut rng);
    let mut labels = vec![0usize; m];
    let mut trace = Vec::new();

    let assign = |centroids: &Array2<f64>, labels: &mut Vec<usize>| -> f64 {
        let mut inertia = 0.0;
        for (i, row) in data.rows().into_iter().enumerate() {
            let (c, dist) = nearest(row, centroids);
            labels[i] = c;
            inertia += dist;
        }
        inertia
    };

    for _ in 0..config.max_iter {
        let inertia = assign(&centroids, &mut labels);
        if let Some(&prev) = trace.last() {
            debug_assert!(inertia <= prev + 1e-9, "inertia rose: {prev} -> {inertia}");
        }
        trace.push(inertia);

        // Means of each cluster; an empty cluster keeps its last centroid.
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, row) in data.rows().into_iter().enumerate() {
            let c = labels[i];
            counts[c] += 1;
            let mut target = sums.row_mut(c);
            target += &row;
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] > 0 {
                let mean = sums.row(c).mapv(|v| v / counts[c] as f64);
                shift = shift.max(squared_distance(centroids.row(c), mean.view()).sqrt());
                centroids.row_mut(c).assign(&mean);
            }
        }
        if shift < config.tol {
            break;
        }
    }

    // Final consistent state: labels, counts and inertia all against the
    // final centroids.
    let inertia = assign(&centroids, &mut labels);
    if let Some(&prev) = trace.last() {
        debug_assert!(inertia <= prev + 1e-9);
    }
    trace.push(inertia);
    let mut counts = vec![0usize; k];
    for &c in &labels {
        counts[c] += 1;
    }

    Ok((
        PhenotypeAssignment {
            patient_id: bag.patient_id().to_string(),
            k,
            labels,
            centroids,
            counts,
            inertia,
        },
        trace,
    ))
}

/// Cluster one patient's patches into at most `k` phenotypes.
pub fn kmeans_cluster(bag: &PatientBag, config: &ClusterConfig) -> Result<PhenotypeAssignment> {
    kmeans_with_trace(bag, config).map(|(assignment, _)| assignment)
}

/// Group the bag's patches by cluster label into `k` tensors (empty clusters
/// give empty tensors). Rows keep the original patch order.
pub fn build_phenotype_tensors(
    bag: &PatientBag,
    assignment: &PhenotypeAssignment,
) -> Result<Vec<PhenotypeTensor>> {
    if assignment.patient_id != bag.patient_id() {
        return Err(Error::PatientMismatch {
            assignment_id: assignment.patient_id.clone(),
            bag_id: bag.patient_id().to_string(),
        });
    }
    if assignment.labels.len() != bag.n_patches() {
        return Err(Error::ShapeMismatch(format!(
            "assignment has {} labels for {} patches",
            assignment.labels.len(),
            bag.n_patches()
        )));
    }
    let d = bag.feature_dim();
    let mut rows_per_cluster: Vec<Vec<usize>> = vec![Vec::new(); assignment.k];
    for (i, &c) in assignment.labels.iter().enumerate() {
        if c >= assignment.k {
            return Err(Error::ShapeMismatch(format!(
                "label {c} out of range for k = {}",
                assignment.k
            )));
        }
        rows_per_cluster[c].push(i);
    }

    let mut tensors = Vec::with_capacity(assignment.k);
    for (cluster_index, rows) in rows_per_cluster.into_iter().enumerate() {
        let mut features = Array2::zeros((rows.len(), d));
        for (dst, &src) in rows.iter().enumerate() {
            features.row_mut(dst).assign(&bag.patch_f64(src));
        }
        tensors.push(PhenotypeTensor {
            cluster_index,
            features,
        });
    }
    Ok(tensors)
}

/// Convenience: cluster then build tensors in one call.
pub fn phenotype_tensors(
    bag: &PatientBag,
    config: &ClusterConfig,
) -> Result<(PhenotypeAssignment, Vec<PhenotypeTensor>)> {
    let assignment = kmeans_cluster(bag, config)?;
    let tensors = build_phenotype_tensors(bag, &assignment)?;
    Ok((assignment, tensors))
}
