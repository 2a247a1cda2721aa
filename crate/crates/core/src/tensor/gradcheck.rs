use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct FdConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Above this many coordinates a seeded random subset of this size is checked.
    pub max_coords: usize,
    pub seed: u64,
    /// Combine central differences at `step` and `step / 2` by Richardson
    /// extrapolation (fourth-order). Lets a larger step be used where plain
    /// central differences are dominated by rounding noise.
    pub extrapolate: bool,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-6, max_coords: 10_000, seed: 0, extrapolate: false }
    }
}

impl FdConfig {
    /// Extrapolated differences with step 1e-3, for deep recurrent objectives
    /// whose small gradient components sit below the rounding floor of a 1e-5 step.
    pub fn richardson() -> Self {
        Self { step: 1e-3, extrapolate: true, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error, if any were checked.
    pub worst: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

/// Compare an analytic gradient against central finite differences.
///
/// `f` evaluates the scalar objective at a flat parameter vector. `near_kink`
/// is called with each perturbed point and the coordinate index; returning
/// `true` for either side skips that coordinate (non-differentiable point).
/// The error per coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F, K>(mut f: F, x: &[f64], analytic: &[f64], cfg: &FdConfig, mut near_kink: K) -> FdReport
where
    F: FnMut(&[f64]) -> f64,
    K: FnMut(&[f64], usize) -> bool,
{
    assert_eq!(x.len(), analytic.len(), "gradient length must match input length");
    let coords: Vec<usize> = if x.len() > cfg.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, x.len(), cfg.max_coords).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..x.len()).collect()
    };

    let mut point = x.to_vec();
    let mut report = FdReport { max_rel_error: 0.0, worst: None, checked: 0, skipped: 0, passed: true };
    for i in coords {
        let mut skip = false;
        let mut central = |h: f64| {
            let orig = point[i];
            point[i] = orig + h;
            skip |= near_kink(&point, i);
            let hi = f(&point);
            point[i] = orig - h;
            skip |= near_kink(&point, i);
            let lo = f(&point);
            point[i] = orig;
            (hi - lo) / (2.0 * h)
        };
        let numeric = if cfg.extrapolate {
            let coarse = central(cfg.step);
            let fine = central(cfg.step / 2.0);
            (4.0 * fine - coarse) / 3.0
        } else {
            central(cfg.step)
        };
        if skip {
            report.skipped += 1;
            continue;
        }
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some(i);
        }
    }
    report.passed = report.max_rel_error <= cfg.tolerance;
    report
}
