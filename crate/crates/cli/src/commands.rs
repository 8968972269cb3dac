use std::path::{Path, PathBuf};

use recon_core::gradcheck::{run_gradcheck, GradcheckReport, SuiteOptions};
use recon_core::mesh::{parse_obj, Mesh};
use recon_core::solver::{attribute_loop, current_atlas, evaluate, fit_dataset, render_state};
use recon_core::{DatasetFit, Frame, LossReport, PrototypeContext, ReconState, Sample};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::export::{
    convergence_csv, csv_text, obj_text, write_bundle, LossRow, MetricsRow, ReconBundle,
};
use crate::io::{load_dataset, load_sample, Staging};
use crate::synthetic::make_synthetic;

/// Prototype from an OBJ (keeping its uv when present) or the config's ellipsoid.
pub fn load_prototype(path: Option<&Path>, config: &RunConfig) -> Result<PrototypeContext, CliError> {
    let Some(path) = path else {
        return Ok(PrototypeContext::new(config.prototype_mesh()));
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let data = parse_obj::<f64>(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mesh = Mesh::new(data.vertices, data.faces)?;
    Ok(match data.uv {
        Some(uv) => PrototypeContext::with_uv(mesh, uv),
        None => PrototypeContext::new(mesh),
    })
}

fn run_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub struct ReconOutcome {
    pub bundle: ReconBundle,
    pub frame: Frame,
    pub metrics: MetricsRow,
    pub losses: Vec<LossRow>,
}

fn finish(
    sample: &Sample,
    state: ReconState,
    reports: &[LossReport],
    proto: &PrototypeContext,
    config: &RunConfig,
) -> Result<ReconOutcome, CliError> {
    let solver = config.solver_config()?;
    let atlas = current_atlas(&state, sample)?;
    let frame = render_state(&state, &atlas, proto, &solver)?;
    let report = match reports.last() {
        Some(r) => *r,
        None => evaluate(&state, sample, proto, &solver, 0)?,
    };
    let metrics = MetricsRow::new(sample, &state, &frame, &report);
    let losses = reports.iter().enumerate().map(|(i, r)| LossRow::new(&sample.id, i + 1, r)).collect();
    let bundle = ReconBundle {
        id: sample.id.clone(),
        config: config.to_text(),
        prototype: proto.mesh.vertices().to_vec(),
        faces: proto.mesh.faces().to_vec(),
        uv: proto.uv.clone(),
        state,
        atlas,
    };
    Ok(ReconOutcome {
        bundle,
        frame,
        metrics,
        losses,
    })
}

/// Encoder loop on one sample from a fresh state.
pub fn reconstruct(sample: &Sample, proto: &PrototypeContext, config: &RunConfig) -> Result<ReconOutcome, CliError> {
    let solver = config.solver_config()?;
    let mut state = solver.initial_state(proto.mesh.vertex_count());
    let reports = attribute_loop(&mut state, sample, proto, &solver, None)?;
    finish(sample, state, &reports, proto, config)
}

pub fn cmd_recon(image: &Path, mask: &Path, prototype: Option<&Path>, config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let sample = load_sample(image, mask, config.width, config.height)?;
    let proto = load_prototype(prototype, config)?;
    let out = run_pool(config.threads, || reconstruct(&sample, &proto, config))??;
    let mut stage = Staging::new(&config.output)?;
    stage.write("config.txt", config.to_text())?;
    write_bundle(&mut stage, "", &out.bundle, &out.frame)?;
    stage.write("metrics.csv", csv_text(std::slice::from_ref(&out.metrics))?)?;
    stage.write("losses.csv", csv_text(&out.losses)?)?;
    log::info!(
        "{}: MaskIoU {:.2}, SSIM {:.2}, azimuth {:.2}",
        sample.id,
        out.metrics.mask_iou,
        out.metrics.ssim,
        out.metrics.azimuth
    );
    stage.commit()
}

pub struct DatasetOutcome {
    pub fit: DatasetFit,
    pub per_image: Vec<Option<ReconOutcome>>,
    pub metrics: Vec<MetricsRow>,
}

pub fn fit(samples: &[Sample], proto: PrototypeContext, config: &RunConfig) -> Result<DatasetOutcome, CliError> {
    let dcfg = config.dataset_config()?;
    let states = vec![dcfg.solver.initial_state(proto.mesh.vertex_count()); samples.len()];
    let fit = run_pool(config.threads, || fit_dataset(samples, states, proto, &dcfg))??;
    let mut per_image = Vec::with_capacity(samples.len());
    let mut metrics = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let state = &fit.states[i];
        let failed_last = fit
            .failures
            .iter()
            .any(|f| f.id == sample.id && f.epoch == config.epochs);
        match (&fit.last_reports[i], failed_last) {
            (Some(_), false) => {
                let reports: Vec<LossReport> = fit.last_reports[i].iter().copied().collect();
                let out = finish(sample, state.clone(), &reports, &fit.prototype, config)?;
                metrics.push(out.metrics.clone());
                per_image.push(Some(out));
            }
            _ => {
                metrics.push(MetricsRow::failed(&sample.id, state));
                per_image.push(None);
            }
        }
    }
    Ok(DatasetOutcome {
        fit,
        per_image,
        metrics,
    })
}

pub fn cmd_fit_dataset(dir: &Path, config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let samples = load_dataset(dir, config.width, config.height)?;
    if samples.is_empty() {
        return Err(CliError::Data(format!("no image/mask pairs in {}", dir.display())));
    }
    let proto = PrototypeContext::new(config.prototype_mesh());
    let out = fit(&samples, proto, config)?;
    let mut stage = Staging::new(&config.output)?;
    stage.write("config.txt", config.to_text())?;
    let p = &out.fit.prototype;
    stage.write("prototype.obj", obj_text(p.mesh.vertices(), p.mesh.faces(), &p.uv, None))?;
    stage.write("convergence.csv", convergence_csv(&out.fit.convergence)?)?;
    stage.write("metrics.csv", csv_text(&out.metrics)?)?;
    if !out.fit.failures.is_empty() {
        let rows: Vec<[String; 3]> = out
            .fit
            .failures
            .iter()
            .map(|f| [f.epoch.to_string(), f.id.clone(), f.message.clone()])
            .collect();
        let mut text = String::from("epoch,id,message\n");
        text.push_str(&csv_text(&rows)?);
        stage.write("failures.csv", text)?;
    }
    for o in out.per_image.iter().flatten() {
        write_bundle(&mut stage, &format!("{}/", o.bundle.id), &o.bundle, &o.frame)?;
    }
    if let Some(last) = out.fit.convergence.last() {
        log::info!(
            "fitted {} images over {} epochs: |E[dS]| {:.3e}, mean |dS_v| {:.3e}",
            samples.len(),
            config.epochs,
            last.mean_offset_norm,
            last.mean_vertex_offset
        );
    }
    stage.commit()
}

pub const SWEEP_ATTRIBUTES: [&str; 5] = ["distance", "azimuth", "elevation", "offset_x", "offset_y"];

/// `a:b:step` (inclusive of `b` up to rounding) or a comma list.
pub fn parse_values(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("cannot parse sweep values `{text}` (use a:b:step or a,b,c)"));
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(bad);
    let parts: Vec<&str> = text.split(':').collect();
    match parts.len() {
        1 => text.split(',').filter(|s| !s.trim().is_empty()).map(num).collect(),
        3 => {
            let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if step == 0.0 || (b - a) / step < 0.0 {
                return Err(bad());
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| a + step * i as f64).collect())
        }
        _ => Err(bad()),
    }
}

/// Re-renders the bundle with one camera attribute set to each value.
pub fn sweep_frames(bundle: &ReconBundle, attribute: &str, values: &[f64]) -> Result<Vec<Frame>, CliError> {
    if !SWEEP_ATTRIBUTES.contains(&attribute) {
        return Err(CliError::Usage(format!(
            "unknown camera attribute `{attribute}` (one of {})",
            SWEEP_ATTRIBUTES.join(", ")
        )));
    }
    values
        .iter()
        .map(|&v| {
            let mut state = bundle.state.clone();
            let c = &mut state.camera;
            match attribute {
                "distance" => c.distance = v,
                "azimuth" => c.azimuth = v,
                "elevation" => c.elevation = v,
                "offset_x" => c.offset_x = v,
                _ => c.offset_y = v,
            }
            bundle.render_with(&state, &bundle.atlas)
        })
        .collect()
}

pub fn cmd_render_sweep(recon: &Path, attribute: &str, values: &str, output: &Path) -> Result<Vec<PathBuf>, CliError> {
    let bundle = ReconBundle::read(recon)?;
    let values = parse_values(values)?;
    let frames = sweep_frames(&bundle, attribute, &values)?;
    let mut stage = Staging::new(output)?;
    let mut index = String::from("frame,value\n");
    for (i, (f, v)) in frames.iter().zip(&values).enumerate() {
        stage.write_rgb(&format!("frame_{i:03}.png"), &f.image, f.width, f.height)?;
        index.push_str(&format!("{i},{v}\n"));
    }
    stage.write("sweep.csv", format!("attribute,{attribute}\n{index}"))?;
    stage.commit()
}

pub struct SwapFrames {
    /// shape of `a` with the texture of `b`, under `a`'s camera and light
    pub a_shape_b_texture: Frame,
    pub b_shape_a_texture: Frame,
}

pub fn swap_frames(a: &ReconBundle, b: &ReconBundle) -> Result<SwapFrames, CliError> {
    if a.faces != b.faces || a.prototype.len() != b.prototype.len() {
        return Err(CliError::Data(format!(
            "`{}` and `{}` do not share a mesh topology ({} vs {} vertices, {} vs {} faces)",
            a.id,
            b.id,
            a.prototype.len(),
            b.prototype.len(),
            a.faces.len(),
            b.faces.len()
        )));
    }
    Ok(SwapFrames {
        a_shape_b_texture: a.render_with(&a.state, &b.atlas)?,
        b_shape_a_texture: b.render_with(&b.state, &a.atlas)?,
    })
}

pub fn cmd_swap(a: &Path, b: &Path, output: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (ra, rb) = (ReconBundle::read(a)?, ReconBundle::read(b)?);
    let s = swap_frames(&ra, &rb)?;
    let mut stage = Staging::new(output)?;
    for (name, f) in [("a_shape_b_texture", &s.a_shape_b_texture), ("b_shape_a_texture", &s.b_shape_a_texture)] {
        stage.write_rgb(&format!("{name}.png"), &f.image, f.width, f.height)?;
        stage.write_gray(&format!("{name}_mask.png"), &f.mask, f.width, f.height)?;
    }
    stage.commit()
}

pub fn format_gradcheck(report: &GradcheckReport) -> String {
    let mut s = String::new();
    for c in &report.cases {
        s.push_str(&format!(
            "  {:<10} {:<30} max rel err {:.3e} (tol {:.0e}) {}\n",
            c.component.to_string(),
            c.name,
            c.max_rel_error,
            c.component.tolerance(),
            if c.passed() { "ok" } else { "FAIL" }
        ));
    }
    for (comp, err, ok) in report.by_component() {
        s.push_str(&format!(
            "{:<12} max rel err {:.3e} (tol {:.0e}) {}\n",
            comp.to_string(),
            err,
            comp.tolerance(),
            if ok { "PASS" } else { "FAIL" }
        ));
    }
    s
}

pub fn cmd_gradcheck(opts: &SuiteOptions) -> Result<GradcheckReport, CliError> {
    let report = run_gradcheck(opts)?;
    print!("{}", format_gradcheck(&report));
    if report.passed() {
        Ok(report)
    } else {
        Err(CliError::Numerical("gradient check failed".into()))
    }
}

pub fn cmd_make_synthetic(count: usize, config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    if count == 0 {
        return Err(CliError::Usage("`--count` must be at least 1".into()));
    }
    let set = make_synthetic(config, count)?;
    let mut stage = Staging::new(&config.output)?;
    for s in &set.samples {
        stage.write_rgb(&format!("{}.png", s.id), &s.image, s.width, s.height)?;
        stage.write_gray(&format!("{}_mask.png", s.id), &s.mask, s.width, s.height)?;
    }
    let truth = serde_json::to_string_pretty(&set.truth).map_err(|e| CliError::Data(e.to_string()))?;
    stage.write("truth.json", truth)?;
    stage.write("config.txt", config.to_text())?;
    stage.commit()
}
