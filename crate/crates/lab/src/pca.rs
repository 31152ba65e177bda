//! Two-component PCA of weight-space trajectories.

use serde::Serialize;
use unlearn_core::numerics::{dot, symmetric_eigen, DenseMatrix};
use unlearn_core::Error;

/// One projected snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathPoint {
    pub path_id: String,
    pub step: usize,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaProjection {
    pub points: Vec<PathPoint>,
    /// Fraction of the pooled variance along each component.
    pub explained_variance: [f64; 2],
    /// Unit principal directions in weight space; a zero vector when the
    /// snapshots span fewer dimensions.
    #[serde(skip)]
    pub components: [Vec<f64>; 2],
    #[serde(skip)]
    pub mean: Vec<f64>,
}

/// Fits PCA on all snapshots of all paths and projects each snapshot onto
/// the top two components. Each direction is signed so that its
/// largest-magnitude loading is positive.
pub fn project_paths(paths: &[(String, Vec<Vec<f64>>)]) -> Result<PcaProjection, Error> {
    let snapshots: Vec<&Vec<f64>> = paths.iter().flat_map(|(_, s)| s.iter()).collect();
    let Some(first) = snapshots.first() else {
        return Err(Error::InvalidSpec("no snapshots to project"));
    };
    let p = first.len();
    if snapshots.iter().any(|s| s.len() != p) {
        return Err(Error::ShapeMismatch("snapshots differ in length"));
    }
    let m = snapshots.len();
    let mut mean = vec![0.0; p];
    for s in &snapshots {
        for (a, v) in mean.iter_mut().zip(s.iter()) {
            *a += v / m as f64;
        }
    }
    let centered = DenseMatrix::from_fn(m, p, |i, j| snapshots[i][j] - mean[j]);
    let gram = centered.gram_rows();
    let eig = symmetric_eigen(&gram);
    let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    let scale = gram.max_abs().max(f64::MIN_POSITIVE);
    if !(total > 1e-14 * scale) {
        return Err(Error::DegeneratePaths);
    }

    let mut components = [vec![0.0; p], vec![0.0; p]];
    let mut explained = [0.0; 2];
    for k in 0..2.min(m) {
        let lambda = eig.values[k];
        if !(lambda > 1e-12 * eig.values[0]) {
            continue;
        }
        let u = eig.vectors.column(k);
        let mut v = centered.transpose_mat_vec(&u).expect("shapes agree");
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let lead = v.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components[k] = v;
        explained[k] = lambda / total;
    }

    let mut points = Vec::with_capacity(m);
    for (id, snaps) in paths {
        for (step, s) in snaps.iter().enumerate() {
            let c: Vec<f64> = s.iter().zip(&mean).map(|(a, b)| a - b).collect();
            points.push(PathPoint { path_id: id.clone(), step, pc1: dot(&c, &components[0]), pc2: dot(&c, &components[1]) });
        }
    }
    Ok(PcaProjection { points, explained_variance: explained, components, mean })
}
