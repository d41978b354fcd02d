//! Central finite-difference gradient checking.

use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::AdError;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    /// Check a seeded random subset of coordinates when there are more.
    pub max_coordinates: Option<usize>,
    pub seed: u64,
    /// Denominator floor for the relative error; differences between two
    /// gradients that are both smaller than this are scored against it.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-5, max_coordinates: None, seed: 0, floor: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_coordinate: usize,
    pub checked: usize,
    /// Worst relative error per named coordinate range, in the order given.
    pub groups: Vec<(String, f64)>,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `f` around `point`.
///
/// `groups` names coordinate ranges for the per-group report; coordinates
/// outside every range are still checked.
pub fn grad_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    groups: &[(String, Range<usize>)],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, AdError>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(opts.step > 0.0) {
        return Err(AdError::InvalidStep(opts.step));
    }
    if analytic.len() != point.len() {
        return Err(AdError::DirectionMismatch { expected: point.len(), got: analytic.len() });
    }
    let coords: Vec<usize> = match opts.max_coordinates {
        Some(limit) if limit < point.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut picked = sample(&mut rng, point.len(), limit).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..point.len()).collect(),
    };

    let mut x = point.to_vec();
    let mut worst = (0.0f64, 0usize);
    let mut group_worst = vec![0.0f64; groups.len()];
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + opts.step;
        let plus = f(&x);
        x[i] = orig - opts.step;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(AdError::NonFiniteValue { coordinate: i });
        }
        let numeric = (plus - minus) / (2.0 * opts.step);
        let err = relative_error(analytic[i], numeric, opts.floor);
        if err > worst.0 {
            worst = (err, i);
        }
        for (slot, (_, range)) in group_worst.iter_mut().zip(groups) {
            if range.contains(&i) {
                *slot = slot.max(err);
            }
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst_coordinate: worst.1,
        checked: coords.len(),
        groups: groups.iter().map(|(n, _)| n.clone()).zip(group_worst).collect(),
    })
}
