use std::path::Path;

use recon_core::mesh::{write_obj, Mesh};
use recon_core::objective::{mask_iou, ssim};
use recon_core::solver::{render_state, ConvergenceRow};
use recon_core::{Frame, LossReport, PrototypeContext, ReconState, Sample, TextureAtlas};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::Staging;

pub const MATERIAL: &str = "recon";

/// Everything needed to re-render one reconstruction without the input
/// photo: the effective config, the prototype it was solved against, the
/// per-image attributes and the materialized texture atlas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconBundle {
    pub id: String,
    pub config: String,
    pub prototype: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub uv: Vec<[f64; 2]>,
    pub state: ReconState,
    pub atlas: TextureAtlas,
}

impl ReconBundle {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Data(e.to_string()))
    }

    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::default();
        c.apply_text(&self.config, &format!("bundle `{}`", self.id))?;
        Ok(c)
    }

    /// Composed vertices `S̄ + ΔS`.
    pub fn shape(&self) -> Vec<[f64; 3]> {
        self.prototype
            .iter()
            .zip(&self.state.offsets)
            .map(|(p, d)| [p[0] + d[0], p[1] + d[1], p[2] + d[2]])
            .collect()
    }

    pub fn context(&self) -> Result<PrototypeContext, CliError> {
        let mesh = Mesh::new(self.prototype.clone(), self.faces.clone())?;
        Ok(PrototypeContext::with_uv(mesh, self.uv.clone()))
    }

    /// Renders with this bundle's config; `state` defaults to the stored one.
    pub fn render_with(&self, state: &ReconState, atlas: &TextureAtlas) -> Result<Frame, CliError> {
        let cfg = self.run_config()?.solver_config()?;
        Ok(render_state(state, atlas, &self.context()?, &cfg)?)
    }

    pub fn render(&self) -> Result<Frame, CliError> {
        self.render_with(&self.state, &self.atlas)
    }
}

pub fn obj_text(vertices: &[[f64; 3]], faces: &[[usize; 3]], uv: &[[f64; 2]], mtl: Option<&str>) -> String {
    let mut buf = Vec::new();
    write_obj(&mut buf, vertices, faces, Some(uv), mtl.map(|m| (m, MATERIAL))).expect("writing to memory");
    String::from_utf8(buf).expect("obj text is utf-8")
}

pub fn mtl_text(texture_file: &str) -> String {
    format!("newmtl {MATERIAL}\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nd 1\nillum 1\nmap_Kd {texture_file}\n")
}

/// Mesh, material, atlas, renders and the JSON bundle under `prefix`.
pub fn write_bundle(stage: &mut Staging, prefix: &str, bundle: &ReconBundle, frame: &Frame) -> Result<(), CliError> {
    let p = |name: &str| format!("{prefix}{name}");
    stage.write(&p("mesh.obj"), obj_text(&bundle.shape(), &bundle.faces, &bundle.uv, Some("mesh.mtl")))?;
    stage.write(&p("mesh.mtl"), mtl_text("texture.png"))?;
    let a = &bundle.atlas;
    stage.write_rgb(&p("texture.png"), &a.texels, a.width, a.height)?;
    stage.write_rgb(&p("render.png"), &frame.image, frame.width, frame.height)?;
    stage.write_gray(&p("render_mask.png"), &frame.mask, frame.width, frame.height)?;
    stage.write(&p("recon.json"), bundle.to_json()?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub id: String,
    pub status: String,
    pub mask_iou: f64,
    pub ssim: f64,
    pub img: f64,
    pub iou: f64,
    pub lpl: f64,
    pub flat: f64,
    pub sym: f64,
    pub deform: f64,
    pub total: f64,
    pub distance: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub skipped_steps: usize,
    pub degenerate_faces: usize,
}

/// Target with its background zeroed, the way the renderer draws it.
pub fn masked_target(sample: &Sample) -> Vec<f64> {
    sample
        .image
        .chunks(3)
        .zip(&sample.mask)
        .flat_map(|(px, &m)| [px[0] * m, px[1] * m, px[2] * m])
        .collect()
}

impl MetricsRow {
    pub fn new(sample: &Sample, state: &ReconState, frame: &Frame, report: &LossReport) -> Self {
        let c = &state.camera;
        Self {
            id: sample.id.clone(),
            status: "ok".into(),
            mask_iou: mask_iou(&sample.mask, &frame.mask),
            ssim: ssim(&masked_target(sample), &frame.image, sample.height, sample.width, 3),
            img: report.img,
            iou: report.iou,
            lpl: report.lpl,
            flat: report.flat,
            sym: report.sym,
            deform: report.deform,
            total: report.total,
            distance: c.distance,
            azimuth: c.azimuth,
            elevation: c.elevation,
            offset_x: c.offset_x,
            offset_y: c.offset_y,
            skipped_steps: state.skipped_steps,
            degenerate_faces: report.degenerate_faces,
        }
    }

    pub fn failed(id: &str, state: &ReconState) -> Self {
        let c = &state.camera;
        Self {
            id: id.to_string(),
            status: "failed".into(),
            mask_iou: f64::NAN,
            ssim: f64::NAN,
            img: f64::NAN,
            iou: f64::NAN,
            lpl: f64::NAN,
            flat: f64::NAN,
            sym: f64::NAN,
            deform: f64::NAN,
            total: f64::NAN,
            distance: c.distance,
            azimuth: c.azimuth,
            elevation: c.elevation,
            offset_x: c.offset_x,
            offset_y: c.offset_y,
            skipped_steps: state.skipped_steps,
            degenerate_faces: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub id: String,
    pub cycle: usize,
    pub step: usize,
    pub img: f64,
    pub iou: f64,
    pub lpl: f64,
    pub flat: f64,
    pub sym: f64,
    pub deform: f64,
    pub total: f64,
}

impl LossRow {
    pub fn new(id: &str, cycle: usize, r: &LossReport) -> Self {
        Self {
            id: id.to_string(),
            cycle,
            step: r.step,
            img: r.img,
            iou: r.iou,
            lpl: r.lpl,
            flat: r.flat,
            sym: r.sym,
            deform: r.deform,
            total: r.total,
        }
    }
}

pub fn csv_text<R: Serialize>(rows: &[R]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn convergence_csv(rows: &[ConvergenceRow<f64>]) -> Result<String, CliError> {
    if rows.is_empty() {
        // header only, so an empty run still yields a well-formed file
        return Ok("epoch,mean_offset_norm,clipped_offset_norm,residual_norm,applied_norm,clipped_rows,mean_offset_vertex_norm,mean_vertex_offset,mean_total_loss,failed\n".into());
    }
    csv_text(rows)
}
