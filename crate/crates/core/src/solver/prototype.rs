use serde::{Deserialize, Serialize};

use super::SolverError;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrototypeParams<T> {
    /// epochs of the linear warm-up
    pub warmup: usize,
    /// per-vertex clip threshold on the mean offset, model units
    pub tau: T,
}

impl<T: Real> Default for PrototypeParams<T> {
    fn default() -> Self {
        Self {
            warmup: 5,
            tau: T::lit(0.05),
        }
    }
}

impl<T: Real> PrototypeParams<T> {
    /// Warm-up weight for a 1-based epoch.
    pub fn weight(&self, epoch: usize) -> T {
        if self.warmup == 0 {
            return T::one();
        }
        T::lit((epoch as f64 / self.warmup as f64).min(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats<T> {
    pub epoch: usize,
    pub weight: T,
    /// ‖E[ΔS]‖ over all coordinates, before clipping
    pub mean_norm: T,
    pub clipped_norm: T,
    /// norm of the step actually added to S̄
    pub applied_norm: T,
    pub clipped_rows: usize,
    /// ‖E[ΔS]‖ after recentering
    pub residual_norm: T,
}

fn frob<T: Real>(rows: &[[T; 3]]) -> T {
    rows.iter().flatten().fold(T::zero(), |a, &x| a + x * x).sqrt()
}

/// Absorbs the clipped, warm-up-weighted mean offset into the prototype and
/// subtracts the same step from every image's offsets, so `S̄ + ΔS_i` is
/// preserved up to rounding.
pub fn prototype_update<T: Real>(
    prototype: &mut [[T; 3]],
    offsets: &mut [&mut Vec<[T; 3]>],
    epoch: usize,
    params: &PrototypeParams<T>,
) -> Result<UpdateStats<T>, SolverError> {
    let include = vec![true; offsets.len()];
    prototype_update_masked(prototype, offsets, &include, epoch, params)
}

/// Like [`prototype_update`], but the mean only runs over offsets with
/// `include[i]`; every offset is still recentered.
pub fn prototype_update_masked<T: Real>(
    prototype: &mut [[T; 3]],
    offsets: &mut [&mut Vec<[T; 3]>],
    include: &[bool],
    epoch: usize,
    params: &PrototypeParams<T>,
) -> Result<UpdateStats<T>, SolverError> {
    let v = prototype.len();
    let count = include.iter().filter(|&&b| b).count();
    if count == 0 || include.len() != offsets.len() {
        return Err(SolverError::NoImages);
    }
    for o in offsets.iter() {
        if o.len() != v {
            return Err(SolverError::VertexCount {
                expected: v,
                got: o.len(),
            });
        }
    }
    let n = T::lit(count as f64);
    let mut mean = vec![[T::zero(); 3]; v];
    for (o, _) in offsets.iter().zip(include).filter(|(_, &b)| b) {
        for (m, row) in mean.iter_mut().zip(o.iter()) {
            for k in 0..3 {
                m[k] = m[k] + row[k];
            }
        }
    }
    for m in &mut mean {
        for x in m.iter_mut() {
            *x = *x / n;
        }
    }
    let mut clipped = mean.clone();
    let mut clipped_rows = 0;
    for row in &mut clipped {
        let norm = frob(std::slice::from_ref(row));
        if norm > params.tau {
            let s = params.tau / norm;
            for x in row.iter_mut() {
                *x = *x * s;
            }
            clipped_rows += 1;
        }
    }
    let w = params.weight(epoch);
    let step: Vec<[T; 3]> = clipped.iter().map(|r| r.map(|x| w * x)).collect();
    for (p, s) in prototype.iter_mut().zip(&step) {
        for k in 0..3 {
            p[k] = p[k] + s[k];
        }
    }
    for o in offsets.iter_mut() {
        for (row, s) in o.iter_mut().zip(&step) {
            for k in 0..3 {
                row[k] = row[k] - s[k];
            }
        }
    }
    let residual: Vec<[T; 3]> = mean
        .iter()
        .zip(&step)
        .map(|(m, s)| [m[0] - s[0], m[1] - s[1], m[2] - s[2]])
        .collect();
    Ok(UpdateStats {
        epoch,
        weight: w,
        mean_norm: frob(&mean),
        clipped_norm: frob(&clipped),
        applied_norm: frob(&step),
        clipped_rows,
        residual_norm: frob(&residual),
    })
}
