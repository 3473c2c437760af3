//! Integrated-squared-error comparison of two density surfaces and the
//! permutation test of the null hypothesis that both accident samples come
//! from one spatial density.
//!
//! The observed statistic is the ISE between KDEs of the two samples built
//! with one shared bandwidth, so it measures location shift rather than
//! bandwidth mismatch. The null distribution is formed by relabeling the
//! pooled points uniformly at random, preserving sample sizes. Randomness
//! comes from ChaCha8 keyed by the caller's seed; replicate `r` uses stream
//! `r + 1`, so replicates are independent and the test is reproducible
//! bit-for-bit whether replicates run sequentially or in parallel.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::density::{DensityGrid, FootprintIter, GridSpec, Kernel, PlanarPoint};
use crate::error::{Error, Result};

/// Outcome of the permutation test.
#[derive(Debug, Clone, PartialEq)]
pub struct IseResult {
    /// Observed ISE between the two sample surfaces (units m^-2).
    pub ise: f64,
    /// Add-one Monte-Carlo p-value, in `[1/(1+R), 1]`.
    pub p_value: f64,
    pub n_permutations: usize,
    pub seed: u64,
    pub n_before: usize,
    pub n_after: usize,
    pub bandwidth_m: f64,
    /// ISE of each permutation replicate, in replicate order.
    pub null_ise: Vec<f64>,
}

/// Midpoint-quadrature ISE between two surfaces on identical grid geometry:
/// `sum_cells (f1 - f2)^2 * cell_area`.
pub fn ise(f1: &DensityGrid, f2: &DensityGrid) -> Result<f64> {
    if f1.spec != f2.spec {
        return Err(Error::Geometry(
            "ISE requires identical grid geometry".into(),
        ));
    }
    Ok(ise_values(&f1.values, &f2.values, f1.spec.cell_area_m2()))
}

fn ise_values(v1: &[f64], v2: &[f64], cell_area: f64) -> f64 {
    let mut sum = 0.0;
    for (a, b) in v1.iter().zip(v2) {
        let d = a - b;
        sum += d * d;
    }
    sum * cell_area
}

/// Per-point kernel footprints over the grid, cached so each permutation
/// replicate only re-sums contributions instead of re-evaluating kernels.
/// Accumulation order per cell equals [`kde`]'s, making the sums identical
/// bit-for-bit.
struct Footprints {
    per_point: Vec<Vec<(usize, f64)>>,
    n_cells: usize,
}

impl Footprints {
    fn new(points: &[PlanarPoint], spec: &GridSpec, bandwidth_m: f64, kernel: Kernel) -> Self {
        let per_point = points
            .iter()
            .map(|p| FootprintIter::new(p, spec, bandwidth_m, kernel).collect())
            .collect();
        Self {
            per_point,
            n_cells: spec.n_cells(),
        }
    }

    /// Mean of the selected points' kernels, i.e. the KDE surface of that
    /// subset.
    fn surface(&self, chosen: &[usize]) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.n_cells];
        for &i in chosen {
            for &(idx, v) in &self.per_point[i] {
                acc[idx] += v;
            }
        }
        let n = chosen.len() as f64;
        for v in &mut acc {
            *v /= n;
        }
        acc
    }
}

/// Two-sample permutation test on the ISE statistic. Both samples are
/// smoothed with the same `bandwidth_m` on the shared `spec`; gaussian
/// kernels throughout. Requires `n_permutations >= 99` so the add-one
/// p-value has sub-1% resolution.
pub fn permutation_test(
    before: &[PlanarPoint],
    after: &[PlanarPoint],
    spec: &GridSpec,
    bandwidth_m: f64,
    n_permutations: usize,
    seed: u64,
) -> Result<IseResult> {
    if before.is_empty() || after.is_empty() {
        return Err(Error::Argument(
            "permutation test requires non-empty before and after samples".into(),
        ));
    }
    if n_permutations < 99 {
        return Err(Error::Calibration(format!(
            "need at least 99 permutations for a usable p-value, got {n_permutations}"
        )));
    }
    if !(bandwidth_m > 0.0) {
        return Err(Error::Argument(format!(
            "bandwidth must be positive, got {bandwidth_m}"
        )));
    }

    let n1 = before.len();
    let n = n1 + after.len();
    let mut pooled = Vec::with_capacity(n);
    pooled.extend_from_slice(before);
    pooled.extend_from_slice(after);

    let kernel = Kernel::Gaussian;
    let footprints = Footprints::new(&pooled, spec, bandwidth_m, kernel);
    let cell_area = spec.cell_area_m2();

    let identity: Vec<usize> = (0..n).collect();
    let observed = {
        let f1 = footprints.surface(&identity[..n1]);
        let f2 = footprints.surface(&identity[n1..]);
        ise_values(&f1, &f2, cell_area)
    };

    let null_ise: Vec<f64> = (0..n_permutations)
        .into_par_iter()
        .map(|replicate| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(replicate as u64 + 1);
            let mut labels = identity.clone();
            labels.shuffle(&mut rng);
            let f1 = footprints.surface(&labels[..n1]);
            let f2 = footprints.surface(&labels[n1..]);
            ise_values(&f1, &f2, cell_area)
        })
        .collect();

    let exceed = null_ise.iter().filter(|&&v| v >= observed).count();
    let p_value = (1 + exceed) as f64 / (1 + n_permutations) as f64;

    Ok(IseResult {
        ise: observed,
        p_value,
        n_permutations,
        seed,
        n_before: n1,
        n_after: after.len(),
        bandwidth_m,
        null_ise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::kde;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    fn spec(width: f64, height: f64, cell: f64) -> GridSpec {
        GridSpec::new(40.75, -73.98, width, height, cell).unwrap()
    }

    #[test]
    fn ise_of_identical_grids_is_zero() {
        let s = spec(2000.0, 2000.0, 100.0);
        let g = kde(
            &[PlanarPoint::new(1000.0, 1000.0)],
            &s,
            200.0,
            Kernel::Gaussian,
        )
        .unwrap();
        assert_eq!(ise(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn ise_is_symmetric_exactly() {
        let s = spec(3000.0, 2000.0, 100.0);
        let g1 = kde(&[PlanarPoint::new(800.0, 1000.0)], &s, 150.0, Kernel::Gaussian).unwrap();
        let g2 = kde(&[PlanarPoint::new(2200.0, 900.0)], &s, 150.0, Kernel::Gaussian).unwrap();
        assert_eq!(ise(&g1, &g2).unwrap(), ise(&g2, &g1).unwrap());
    }

    #[test]
    fn ise_rejects_mismatched_geometry() {
        let g1 = kde(
            &[PlanarPoint::new(500.0, 500.0)],
            &spec(1000.0, 1000.0, 100.0),
            150.0,
            Kernel::Gaussian,
        )
        .unwrap();
        let g2 = kde(
            &[PlanarPoint::new(500.0, 500.0)],
            &spec(1000.0, 1000.0, 50.0),
            150.0,
            Kernel::Gaussian,
        )
        .unwrap();
        assert!(matches!(ise(&g1, &g2), Err(Error::Geometry(_))));
    }

    /// Closed-form ISE between two unit-mass isotropic gaussians with common
    /// scale `h`, centers `d` apart:
    /// `(2 - 2 exp(-d^2 / (4 h^2))) / (4 pi h^2)`.
    fn gaussian_ise_closed_form(d: f64, h: f64) -> f64 {
        (2.0 - 2.0 * (-d * d / (4.0 * h * h)).exp()) / (4.0 * std::f64::consts::PI * h * h)
    }

    #[test]
    fn ise_matches_closed_form_for_two_gaussians() {
        let h = 200.0;
        let s = spec(6000.0, 4000.0, h / 4.0);
        let a = PlanarPoint::new(2000.0, 2000.0);
        let b = PlanarPoint::new(4000.0, 2000.0); // 2 km apart
        let g1 = kde(&[a], &s, h, Kernel::Gaussian).unwrap();
        let g2 = kde(&[b], &s, h, Kernel::Gaussian).unwrap();
        let quad = ise(&g1, &g2).unwrap();
        let exact = gaussian_ise_closed_form(2000.0, h);
        assert_relative_eq!(quad, exact, max_relative = 0.01);
    }

    #[test]
    fn ise_scale_quadratic_in_differences() {
        // Doubling every value difference quadruples the ISE.
        let s = spec(1000.0, 1000.0, 100.0);
        let n = s.n_cells();
        let base = DensityGrid {
            spec: s.clone(),
            values: vec![0.0; n],
            bandwidth_m: 100.0,
            n_points: 1,
            kernel: Kernel::Gaussian,
        };
        let mut v1 = vec![0.0; n];
        for (i, v) in v1.iter_mut().enumerate() {
            *v = (i % 7) as f64 * 1e-6;
        }
        let g1 = DensityGrid {
            values: v1.clone(),
            ..base.clone()
        };
        let g2 = DensityGrid {
            values: v1.iter().map(|v| v * 2.0).collect(),
            ..base.clone()
        };
        let i1 = ise(&g1, &base).unwrap();
        let i2 = ise(&g2, &base).unwrap();
        assert_relative_eq!(i2, 4.0 * i1, max_relative = 1e-12);
    }

    #[test]
    fn observed_ise_equals_direct_kde_route() {
        let s = spec(3000.0, 3000.0, 150.0);
        let h = 250.0;
        let before: Vec<PlanarPoint> = (0..40)
            .map(|i| PlanarPoint::new(1000.0 + (i % 7) as f64 * 37.0, 1200.0 + (i % 5) as f64 * 53.0))
            .collect();
        let after: Vec<PlanarPoint> = (0..35)
            .map(|i| PlanarPoint::new(1900.0 + (i % 6) as f64 * 41.0, 1700.0 + (i % 4) as f64 * 29.0))
            .collect();

        let result = permutation_test(&before, &after, &s, h, 99, 3).unwrap();
        let g1 = kde(&before, &s, h, Kernel::Gaussian).unwrap();
        let g2 = kde(&after, &s, h, Kernel::Gaussian).unwrap();
        let direct = ise(&g1, &g2).unwrap();
        assert_eq!(
            result.ise, direct,
            "footprint route must match the kde route bit-for-bit"
        );
    }

    #[test]
    fn identical_samples_give_zero_ise_and_p_one() {
        let s = spec(2000.0, 2000.0, 100.0);
        let sample: Vec<PlanarPoint> = (0..25)
            .map(|i| PlanarPoint::new(600.0 + (i % 5) as f64 * 150.0, 700.0 + (i / 5) as f64 * 120.0))
            .collect();
        let result = permutation_test(&sample, &sample, &s, 200.0, 99, 1).unwrap();
        assert_eq!(result.ise, 0.0);
        assert_eq!(result.p_value, 1.0);
    }

    #[test]
    fn permutation_test_is_reproducible_bit_for_bit() {
        let s = spec(2000.0, 2000.0, 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let normal = Normal::new(1000.0, 250.0).unwrap();
        let before: Vec<PlanarPoint> = (0..30)
            .map(|_| PlanarPoint::new(normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        let after: Vec<PlanarPoint> = (0..30)
            .map(|_| PlanarPoint::new(normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        let a = permutation_test(&before, &after, &s, 200.0, 120, 42).unwrap();
        let b = permutation_test(&before, &after, &s, 200.0, 120, 42).unwrap();
        assert_eq!(a, b);
        // A different seed reshuffles the null distribution.
        let c = permutation_test(&before, &after, &s, 200.0, 120, 43).unwrap();
        assert_ne!(a.null_ise, c.null_ise);
    }

    #[test]
    fn p_value_stays_in_add_one_range() {
        let s = spec(2000.0, 2000.0, 200.0);
        let before: Vec<PlanarPoint> =
            (0..20).map(|i| PlanarPoint::new(300.0 + i as f64, 400.0)).collect();
        let after: Vec<PlanarPoint> =
            (0..20).map(|i| PlanarPoint::new(1600.0 + i as f64, 1500.0)).collect();
        let r = permutation_test(&before, &after, &s, 150.0, 99, 0).unwrap();
        assert!(r.p_value >= 1.0 / 100.0);
        assert!(r.p_value <= 1.0);
        // Well-separated tight clusters: nothing permuted should reach the
        // observed ISE.
        assert_eq!(r.p_value, 1.0 / 100.0);
    }

    #[test]
    fn empty_sample_is_argument_error() {
        let s = spec(1000.0, 1000.0, 100.0);
        let pts = vec![PlanarPoint::new(500.0, 500.0)];
        assert!(matches!(
            permutation_test(&[], &pts, &s, 100.0, 99, 0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            permutation_test(&pts, &[], &s, 100.0, 99, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn too_few_permutations_is_calibration_error() {
        let s = spec(1000.0, 1000.0, 100.0);
        let pts = vec![PlanarPoint::new(500.0, 500.0)];
        assert!(matches!(
            permutation_test(&pts, &pts, &s, 100.0, 98, 0),
            Err(Error::Calibration(_))
        ));
    }
}
