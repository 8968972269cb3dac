use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use recon_core::camera::{CameraParams, Intrinsics};
use recon_core::mesh::{make_ellipsoid, DEFAULT_RADII};
use recon_core::objective::{DeformNorm, LossWeights};
use recon_core::solver::{
    AdamConfig, DatasetConfig, Group, GroupRates, GroupSteps, PrototypeParams, RenderSettingsDef, Schedule,
    SolverConfig, TextureMode,
};
use recon_core::Mesh;

use crate::error::CliError;

/// Every knob of a run. Text form is flat `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub width: usize,
    pub height: usize,
    pub fov: f64,
    pub texture_mode: TextureMode,
    pub sigma: f64,
    pub cutoff: f64,
    pub weights: LossWeights<f64>,
    pub deform_norm: DeformNorm,
    pub cycles: usize,
    pub steps: GroupSteps,
    pub order: Vec<Group>,
    pub rates: GroupRates<f64>,
    pub adam: AdamConfig<f64>,
    pub epochs: usize,
    pub warmup: usize,
    pub tau: f64,
    pub subdivisions: usize,
    pub radii: [f64; 3],
    pub init_camera: CameraParams<f64>,
    pub seed: u64,
    /// worker threads for per-image work; 0 lets rayon decide
    pub threads: usize,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let schedule = Schedule::<f64>::default();
        let proto = PrototypeParams::<f64>::default();
        let render = RenderSettingsDef::<f64>::default();
        Self {
            width: 64,
            height: 128,
            fov: 50.0,
            texture_mode: TextureMode::Atlas,
            sigma: render.sigma,
            cutoff: render.cutoff,
            weights: LossWeights::default(),
            deform_norm: DeformNorm::PerVertex,
            cycles: schedule.cycles,
            steps: schedule.steps,
            order: schedule.order,
            rates: schedule.rates,
            adam: AdamConfig::default(),
            epochs: 10,
            warmup: proto.warmup,
            tau: proto.tau,
            subdivisions: 3,
            radii: DEFAULT_RADII,
            init_camera: CameraParams::default(),
            seed: 0,
            threads: 0,
            output: PathBuf::from("out"),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, CliError> {
    let x: f64 = v
        .parse()
        .map_err(|_| CliError::Config(format!("`{key}`: expected a number, got `{v}`")))?;
    if !x.is_finite() {
        return Err(CliError::Config(format!("`{key}` must be finite, got `{v}`")));
    }
    Ok(x)
}

fn parse_usize(key: &str, v: &str) -> Result<usize, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(format!("`{key}`: expected a non-negative integer, got `{v}`")))
}

fn parse_list<T>(key: &str, v: &str, f: impl Fn(&str) -> Result<T, CliError>) -> Result<Vec<T>, CliError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(&f)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("`{key}`: {e}")))
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Keys accepted by [`RunConfig::set`], in echo order. `steps` is a
    /// shorthand for all four per-group step counts and is not echoed.
    pub const KEYS: &'static [&'static str] = &[
        "width",
        "height",
        "fov",
        "texture_mode",
        "sigma",
        "cutoff",
        "w_rec",
        "w_att",
        "w_adv",
        "w_reg",
        "w_lpl",
        "w_flat",
        "deform_norm",
        "cycles",
        "steps_camera",
        "steps_shape",
        "steps_texture",
        "steps_light",
        "order",
        "lr_camera",
        "lr_shape",
        "lr_texture",
        "lr_light",
        "beta1",
        "beta2",
        "adam_eps",
        "epochs",
        "warmup",
        "tau",
        "subdivisions",
        "radii",
        "init_distance",
        "init_azimuth",
        "init_elevation",
        "seed",
        "threads",
        "output",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        let f = |v: &str| parse_f64(key, v);
        let u = |v: &str| parse_usize(key, v);
        match key {
            "width" => self.width = u(v)?,
            "height" => self.height = u(v)?,
            "fov" => self.fov = f(v)?,
            "texture_mode" => self.texture_mode = v.parse().map_err(CliError::Config)?,
            "sigma" => self.sigma = f(v)?,
            "cutoff" => self.cutoff = f(v)?,
            "w_rec" => self.weights.rec = f(v)?,
            "w_att" => self.weights.att = f(v)?,
            "w_adv" => self.weights.adv = f(v)?,
            "w_reg" => self.weights.reg = f(v)?,
            "w_lpl" => self.weights.lpl = f(v)?,
            "w_flat" => self.weights.flat = f(v)?,
            "deform_norm" => {
                self.deform_norm = match v {
                    "pervertex" => DeformNorm::PerVertex,
                    "global" => DeformNorm::Global,
                    other => return Err(CliError::Config(format!("`deform_norm`: expected pervertex|global, got `{other}`"))),
                }
            }
            "cycles" => self.cycles = u(v)?,
            "steps" => self.steps = GroupSteps::uniform(u(v)?),
            "steps_camera" => self.steps.camera = u(v)?,
            "steps_shape" => self.steps.shape = u(v)?,
            "steps_texture" => self.steps.texture = u(v)?,
            "steps_light" => self.steps.light = u(v)?,
            "order" => self.order = parse_list(key, v, |s| s.parse::<Group>().map_err(CliError::Config))?,
            "lr_camera" => self.rates.camera = f(v)?,
            "lr_shape" => self.rates.shape = f(v)?,
            "lr_texture" => self.rates.texture = f(v)?,
            "lr_light" => self.rates.light = f(v)?,
            "beta1" => self.adam.beta1 = f(v)?,
            "beta2" => self.adam.beta2 = f(v)?,
            "adam_eps" => self.adam.eps = f(v)?,
            "epochs" => self.epochs = u(v)?,
            "warmup" => self.warmup = u(v)?,
            "tau" => self.tau = f(v)?,
            "subdivisions" => self.subdivisions = u(v)?,
            "radii" => {
                let r = parse_list(key, v, |s| parse_f64(key, s))?;
                if r.len() != 3 {
                    return Err(CliError::Config(format!("`radii` needs 3 values, got {}", r.len())));
                }
                self.radii = [r[0], r[1], r[2]];
            }
            "init_distance" => self.init_camera.distance = f(v)?,
            "init_azimuth" => self.init_camera.azimuth = f(v)?,
            "init_elevation" => self.init_camera.elevation = f(v)?,
            "seed" => {
                self.seed = v
                    .parse()
                    .map_err(|_| CliError::Config(format!("`seed`: expected an unsigned integer, got `{v}`")))?
            }
            "threads" => self.threads = u(v)?,
            "output" => self.output = PathBuf::from(v),
            other => return Err(CliError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "width" => self.width.to_string(),
            "height" => self.height.to_string(),
            "fov" => self.fov.to_string(),
            "texture_mode" => self.texture_mode.to_string(),
            "sigma" => self.sigma.to_string(),
            "cutoff" => self.cutoff.to_string(),
            "w_rec" => self.weights.rec.to_string(),
            "w_att" => self.weights.att.to_string(),
            "w_adv" => self.weights.adv.to_string(),
            "w_reg" => self.weights.reg.to_string(),
            "w_lpl" => self.weights.lpl.to_string(),
            "w_flat" => self.weights.flat.to_string(),
            "deform_norm" => match self.deform_norm {
                DeformNorm::PerVertex => "pervertex".into(),
                DeformNorm::Global => "global".into(),
            },
            "cycles" => self.cycles.to_string(),
            "steps_camera" => self.steps.camera.to_string(),
            "steps_shape" => self.steps.shape.to_string(),
            "steps_texture" => self.steps.texture.to_string(),
            "steps_light" => self.steps.light.to_string(),
            "order" => join(&self.order),
            "lr_camera" => self.rates.camera.to_string(),
            "lr_shape" => self.rates.shape.to_string(),
            "lr_texture" => self.rates.texture.to_string(),
            "lr_light" => self.rates.light.to_string(),
            "beta1" => self.adam.beta1.to_string(),
            "beta2" => self.adam.beta2.to_string(),
            "adam_eps" => self.adam.eps.to_string(),
            "epochs" => self.epochs.to_string(),
            "warmup" => self.warmup.to_string(),
            "tau" => self.tau.to_string(),
            "subdivisions" => self.subdivisions.to_string(),
            "radii" => join(&self.radii),
            "init_distance" => self.init_camera.distance.to_string(),
            "init_azimuth" => self.init_camera.azimuth.to_string(),
            "init_elevation" => self.init_camera.elevation.to_string(),
            "seed" => self.seed.to_string(),
            "threads" => self.threads.to_string(),
            "output" => self.output.display().to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Applies `key = value` lines. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| CliError::Config(format!("{origin}:{}: {}", i + 1, e.message())))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut c = Self::default();
        c.apply_text(&text, &path.display().to_string())?;
        Ok(c)
    }

    /// Applies `--key value` pairs (also `--key=value`). Dashes in keys
    /// may be written as underscores or hyphens.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut it = args.iter();
        while let Some(a) = it.next() {
            let body = a
                .strip_prefix("--")
                .ok_or_else(|| CliError::Usage(format!("expected `--key value`, got `{a}`")))?;
            let (key, value) = match body.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| CliError::Usage(format!("missing value for `--{body}`")))?;
                    (body.to_string(), v.clone())
                }
            };
            self.set(&key.replace('-', "_"), &value)?;
        }
        Ok(())
    }

    /// Defaults, then the file if any, then command-line overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut c = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        c.apply_overrides(overrides)?;
        c.validate()?;
        Ok(c)
    }

    /// The effective config as text; parsing it back gives the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.intrinsics()?;
        self.solver_config()?.schedule.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.weights.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.sigma > 0.0) || !(self.cutoff > 0.0) {
            return Err(CliError::Config("`sigma` and `cutoff` must be positive".into()));
        }
        for (k, lr) in [
            ("lr_camera", self.rates.camera),
            ("lr_shape", self.rates.shape),
            ("lr_texture", self.rates.texture),
            ("lr_light", self.rates.light),
        ] {
            if !(lr > 0.0) {
                return Err(CliError::Config(format!("`{k}` must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return Err(CliError::Config("Adam needs beta1, beta2 in [0, 1) and adam_eps > 0".into()));
        }
        if !(self.tau > 0.0) {
            return Err(CliError::Config("`tau` must be positive".into()));
        }
        if self.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(CliError::Config("`radii` must be positive".into()));
        }
        if self.subdivisions > 5 {
            return Err(CliError::Config(format!("`subdivisions` = {} is too fine (max 5)", self.subdivisions)));
        }
        if !(self.init_camera.distance > 0.0) {
            return Err(CliError::Config("`init_distance` must be positive".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics<f64>, CliError> {
        Intrinsics::new(self.fov, self.width, self.height).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn solver_config(&self) -> Result<SolverConfig<f64>, CliError> {
        let mut c = SolverConfig::new(self.intrinsics()?);
        c.render = RenderSettingsDef {
            sigma: self.sigma,
            cutoff: self.cutoff,
        };
        c.weights = self.weights;
        c.deform_norm = self.deform_norm;
        c.adam = self.adam;
        c.schedule = Schedule {
            cycles: self.cycles,
            steps: self.steps,
            order: self.order.clone(),
            rates: self.rates,
        };
        c.texture_mode = self.texture_mode;
        c.init_camera = self.init_camera;
        Ok(c)
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig<f64>, CliError> {
        Ok(DatasetConfig {
            solver: self.solver_config()?,
            epochs: self.epochs,
            prototype: PrototypeParams {
                warmup: self.warmup,
                tau: self.tau,
            },
        })
    }

    pub fn prototype_mesh(&self) -> Mesh {
        make_ellipsoid(self.subdivisions, self.radii)
    }
}
