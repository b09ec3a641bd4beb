//! RANSAC plane fitting over candidate Gaussian centers.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use super::PlaneInitError;

#[derive(Debug, Clone)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier threshold as a fraction of the candidate cloud's bounding-box
    /// diagonal.
    pub inlier_frac_of_diag: f64,
    /// Minimum accepted inlier ratio.
    pub min_inlier_ratio: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig { iterations: 1000, inlier_frac_of_diag: 0.01, min_inlier_ratio: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct RansacResult {
    /// Unit normal (PCA refit of the winning consensus set).
    pub normal: Vector3<f64>,
    /// Centroid of the inliers.
    pub center: Vector3<f64>,
    /// Indices of inliers into the input slice.
    pub inliers: Vec<usize>,
    pub threshold: f64,
}

fn bbox_diagonal(points: &[Vector3<f64>]) -> f64 {
    let mut lo = Vector3::from_element(f64::INFINITY);
    let mut hi = Vector3::from_element(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

/// Best plane by inlier count over 3-point hypotheses; ties keep the
/// earliest hypothesis, and the winning consensus set is refit by PCA.
pub fn ransac_plane(
    points: &[Vector3<f64>],
    cfg: &RansacConfig,
    rng: &mut impl Rng,
) -> Result<RansacResult, PlaneInitError> {
    let n = points.len();
    if n < 3 {
        return Err(PlaneInitError::Degenerate(format!("{n} candidate points")));
    }
    let diag = bbox_diagonal(points);
    if diag <= 0.0 {
        return Err(PlaneInitError::Degenerate("all candidates coincide".into()));
    }
    let threshold = cfg.inlier_frac_of_diag * diag;

    let mut best_count = 0usize;
    let mut best: Option<(Vector3<f64>, Vector3<f64>)> = None;
    for _ in 0..cfg.iterations {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let k = rng.gen_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        let (a, b, c) = (points[i], points[j], points[k]);
        let cross = (b - a).cross(&(c - a));
        let norm = cross.norm();
        if norm < 1e-12 * diag * diag {
            continue;
        }
        let normal = cross / norm;
        let count = points.iter().filter(|p| ((*p - a).dot(&normal)).abs() <= threshold).count();
        if count > best_count {
            best_count = count;
            best = Some((normal, a));
        }
    }

    let Some((normal, anchor)) = best else {
        return Err(PlaneInitError::NoConsensus { best: 0, total: n, min_ratio: cfg.min_inlier_ratio });
    };
    if (best_count as f64) < cfg.min_inlier_ratio * n as f64 {
        return Err(PlaneInitError::NoConsensus { best: best_count, total: n, min_ratio: cfg.min_inlier_ratio });
    }

    let inliers: Vec<usize> = (0..n)
        .filter(|&idx| ((points[idx] - anchor).dot(&normal)).abs() <= threshold)
        .collect();
    let centroid = inliers.iter().map(|&i| points[i]).sum::<Vector3<f64>>() / inliers.len() as f64;

    // PCA refit: smallest-variance direction of the consensus set.
    let mut cov = Matrix3::zeros();
    for &i in &inliers {
        let d = points[i] - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut k_min = 0;
    for k in 1..3 {
        if eig.eigenvalues[k] < eig.eigenvalues[k_min] {
            k_min = k;
        }
    }
    let mut refit: Vector3<f64> = eig.eigenvectors.column(k_min).into();
    refit = refit.normalize();
    if refit.dot(&normal) < 0.0 {
        refit = -refit;
    }

    Ok(RansacResult { normal: refit, center: centroid, inliers, threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn exact_plane_is_recovered_exactly() {
        let mut rng = StdRng::seed_from_u64(21);
        let points: Vec<Vector3<f64>> = (0..100)
            .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 2.0))
            .collect();
        let fit = ransac_plane(&points, &RansacConfig::default(), &mut rng).unwrap();
        assert!(fit.normal.z.abs() > 1.0 - 1e-10);
        assert!((fit.center.z - 2.0).abs() < 1e-12);
        assert_eq!(fit.inliers.len(), 100);
    }

    #[test]
    fn tolerates_twenty_percent_outliers() {
        let mut rng = StdRng::seed_from_u64(22);
        let mut points: Vec<Vector3<f64>> = (0..80)
            .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 2.0))
            .collect();
        for _ in 0..20 {
            // Outliers kept clear of the plane slab.
            let z = if rng.gen_bool(0.5) { rng.gen_range(0.0..1.7) } else { rng.gen_range(2.3..4.0) };
            points.push(Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), z));
        }
        let fit = ransac_plane(&points, &RansacConfig::default(), &mut rng).unwrap();
        assert!(fit.normal.z.abs() > 1.0 - 1e-10);
        assert!(fit.inliers.len() >= 80);
    }

    #[test]
    fn three_points_define_their_plane() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.5),
            Vector3::new(0.0, 1.0, -0.25),
        ];
        let mut rng = StdRng::seed_from_u64(1);
        let fit = ransac_plane(&pts, &RansacConfig::default(), &mut rng).unwrap();
        for p in &pts {
            assert!((p - fit.center).dot(&fit.normal).abs() < 1e-12);
        }
    }

    #[test]
    fn collinear_points_fail() {
        let pts: Vec<Vector3<f64>> = (0..30).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        let mut rng = StdRng::seed_from_u64(2);
        assert!(ransac_plane(&pts, &RansacConfig::default(), &mut rng).is_err());
    }
}
