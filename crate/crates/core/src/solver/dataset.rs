use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attribute::{attribute_loop, PrototypeContext, Sample, SolverConfig};
use super::prototype::{prototype_update_masked, PrototypeParams, UpdateStats};
use super::state::ReconState;
use super::SolverError;
use crate::objective::LossReport;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig<T> {
    pub solver: SolverConfig<T>,
    pub epochs: usize,
    pub prototype: PrototypeParams<T>,
}

/// One line of the per-epoch convergence log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow<T> {
    pub epoch: usize,
    /// ‖E[ΔS]‖ before clipping
    pub mean_offset_norm: T,
    pub clipped_offset_norm: T,
    /// ‖E[ΔS]‖ after the prototype absorbed its step
    pub residual_norm: T,
    pub applied_norm: T,
    pub clipped_rows: usize,
    /// mean per-vertex row norm of E[ΔS], before the update
    pub mean_offset_vertex_norm: T,
    /// mean over images of the mean per-vertex ‖ΔS_i‖, before the update
    pub mean_vertex_offset: T,
    pub mean_total_loss: T,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFailure {
    pub epoch: usize,
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct DatasetFit<T> {
    pub prototype: PrototypeContext<T>,
    pub states: Vec<ReconState<T>>,
    /// last loss report per image, if any cycle ran
    pub last_reports: Vec<Option<LossReport<T>>>,
    pub convergence: Vec<ConvergenceRow<T>>,
    pub failures: Vec<ImageFailure>,
}

/// Mean over vertices of the row norm ‖ΔS_v‖.
pub fn mean_vertex_norm<T: Real>(offsets: &[[T; 3]]) -> T {
    if offsets.is_empty() {
        return T::zero();
    }
    let s = offsets
        .iter()
        .fold(T::zero(), |a, r| a + (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt());
    s / T::lit(offsets.len() as f64)
}

/// Alternates the per-image encoder loop (in parallel) with a serial
/// prototype update, once per epoch. `states` holds one starting state per
/// sample. A failing image keeps its previous state and is left out of that
/// epoch's mean.
pub fn fit_dataset<T: Real>(
    samples: &[Sample<T>],
    mut states: Vec<ReconState<T>>,
    mut prototype: PrototypeContext<T>,
    config: &DatasetConfig<T>,
) -> Result<DatasetFit<T>, SolverError> {
    if samples.is_empty() {
        return Err(SolverError::NoImages);
    }
    if states.len() != samples.len() {
        return Err(SolverError::StateCount {
            samples: samples.len(),
            states: states.len(),
        });
    }
    config.solver.schedule.validate()?;
    let mut convergence = Vec::with_capacity(config.epochs);
    let mut failures = Vec::new();
    let mut last_reports = vec![None; samples.len()];

    for epoch in 1..=config.epochs {
        let results: Vec<Result<(ReconState<T>, Vec<LossReport<T>>), SolverError>> = samples
            .par_iter()
            .zip(states.par_iter())
            .map(|(sample, state)| {
                let mut s = state.clone();
                let reports = attribute_loop(&mut s, sample, &prototype, &config.solver, None)?;
                Ok((s, reports))
            })
            .collect();

        let mut include = vec![false; samples.len()];
        let mut loss_sum = 0.0;
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok((s, reports)) => {
                    states[i] = s;
                    include[i] = true;
                    if let Some(last) = reports.last() {
                        loss_sum += last.total.to_f64_lossy();
                        last_reports[i] = Some(*last);
                    }
                }
                Err(e) => {
                    log::warn!("epoch {epoch}: image `{}` failed: {e}", samples[i].id);
                    failures.push(ImageFailure {
                        epoch,
                        id: samples[i].id.clone(),
                        message: e.to_string(),
                    });
                }
            }
        }
        let ok = include.iter().filter(|&&b| b).count();
        if ok == 0 {
            return Err(SolverError::AllFailed { epoch });
        }
        let vertex_norm = states
            .iter()
            .zip(&include)
            .filter(|(_, &b)| b)
            .fold(0.0, |a, (s, _)| a + mean_vertex_norm(&s.offsets).to_f64_lossy())
            / ok as f64;
        let mut mean = vec![[T::zero(); 3]; prototype.mesh.vertex_count()];
        for s in states.iter().zip(&include).filter(|(_, &b)| b).map(|(s, _)| s) {
            for (m, o) in mean.iter_mut().zip(&s.offsets) {
                for k in 0..3 {
                    m[k] = m[k] + o[k];
                }
            }
        }
        let mean_offset_vertex_norm = mean_vertex_norm(&mean) / T::lit(ok as f64);

        let mut vertices = prototype.mesh.vertices().to_vec();
        let mut refs: Vec<&mut Vec<[T; 3]>> = states.iter_mut().map(|s| &mut s.offsets).collect();
        let stats: UpdateStats<T> =
            prototype_update_masked(&mut vertices, &mut refs, &include, epoch, &config.prototype)?;
        prototype = prototype.moved(vertices)?;

        log::info!(
            "epoch {epoch}: |E[dS]| {:.3e} -> {:.3e}, mean |dS_v| {:.3e}, loss {:.4e}",
            stats.mean_norm.to_f64_lossy(),
            stats.residual_norm.to_f64_lossy(),
            vertex_norm,
            loss_sum / ok as f64
        );
        convergence.push(ConvergenceRow {
            epoch,
            mean_offset_norm: stats.mean_norm,
            clipped_offset_norm: stats.clipped_norm,
            residual_norm: stats.residual_norm,
            applied_norm: stats.applied_norm,
            clipped_rows: stats.clipped_rows,
            mean_offset_vertex_norm,
            mean_vertex_offset: T::lit(vertex_norm),
            mean_total_loss: T::lit(loss_sum / ok as f64),
            failed: samples.len() - ok,
        });
    }
    Ok(DatasetFit {
        prototype,
        states,
        last_reports,
        convergence,
        failures,
    })
}
