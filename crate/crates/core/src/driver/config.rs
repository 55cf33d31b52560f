//! Run configuration. Files are flat `section.key = value` lines with `#`
//! comments (a subset of TOML). An optional `preset = "<benchmark>"` line
//! selects the defaults that the remaining keys override.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::DriverError;
use crate::fem::StressInterpolation;
use crate::levelset::HolePattern;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub mesh: MeshConfig,
    pub material: MaterialConfig,
    pub load: LoadConfig,
    pub constraint: ConstraintConfig,
    pub bspline: BsplineConfig,
    pub velocity: VelocityConfig,
    pub design: DesignConfig,
    pub mma: MmaConfig,
    pub opt: OptConfig,
    pub levelset: LevelSetConfig,
    pub holes: HoleConfig,
    pub output: OutputConfig,
    /// Reserved; the optimizer itself is deterministic.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    /// Removes the upper-right 60% x 60% block (L-bracket).
    pub bracket_cutout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "E_min")]
    pub e_min: f64,
    pub nu: f64,
    /// Modulus used for the p-norm stress; buckling always uses the
    /// interpolated one.
    pub stress_interpolation: StressInterpolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadCase {
    /// Total downward force.
    pub magnitude: f64,
    /// Number of loaded nodes the force is spread over.
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    pub stress: LoadCase,
    pub buckling: LoadCase,
    /// Element layers around the loaded nodes held solid; 0 leaves them free.
    pub solid_layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressConstraintConfig {
    pub enabled: bool,
    pub bound: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucklingConstraintConfig {
    pub enabled: bool,
    /// Upper bound μ* on the KS aggregate of μ = 1/λ.
    pub bound: f64,
    pub gamma: f64,
    pub modes: usize,
    /// Modulus of the prestress in the geometric stiffness.
    pub prestress: StressInterpolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub stress: StressConstraintConfig,
    pub buckling: BucklingConstraintConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsplineConfig {
    pub degree_x: usize,
    pub degree_y: usize,
    /// Knot spacing Δ in length units.
    pub knot_interval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityConfig {
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    /// Box bounds on the B-spline coefficients.
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmaConfig {
    pub move_limit: f64,
    pub asyinit: f64,
    pub asyincr: f64,
    pub asydecr: f64,
    /// Multiplier on the volume objective handed to MMA.
    pub objective_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptConfig {
    pub max_iter: usize,
    /// Relative volume change below which the run may stop.
    pub tolerance: f64,
    /// Allowed relative constraint excess at convergence.
    pub constraint_tolerance: f64,
    /// Consecutive iterations the volume change must stay below `tolerance`.
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSetConfig {
    /// Heaviside half-width in units of h.
    pub heaviside_width: f64,
    pub reinit_sweeps: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoleConfig {
    pub rows: usize,
    pub cols: usize,
    pub radius: f64,
    /// Whether the domain edges start as part of the interface.
    pub edges_are_boundary: bool,
}

impl HoleConfig {
    pub fn pattern(&self) -> HolePattern {
        HolePattern { rows: self.rows, cols: self.cols, radius: self.radius }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub vtk: bool,
}

pub const BENCHMARKS: [&str; 6] =
    ["square-stress", "square-buckling", "square-combined", "lbracket-stress", "lbracket-buckling", "lbracket-combined"];

/// Compressed square of `n` x `n` unit elements.
pub fn square_config(n: usize, stress: bool, buckling: bool) -> ProblemConfig {
    let side = n as f64;
    ProblemConfig {
        mesh: MeshConfig { nx: n, ny: n, h: 1.0, bracket_cutout: false },
        material: MaterialConfig { e: 1.0, e_min: 1e-6, nu: 0.3, stress_interpolation: StressInterpolation::Ersatz },
        load: LoadConfig {
            stress: LoadCase { magnitude: 1.0, nodes: 6 },
            buckling: LoadCase { magnitude: 1e-3, nodes: 4 },
            solid_layers: 0,
        },
        constraint: ConstraintConfig {
            stress: StressConstraintConfig { enabled: stress, bound: 1.3, p: 8.0 },
            buckling: BucklingConstraintConfig {
                enabled: buckling,
                bound: 0.15,
                gamma: 50.0,
                modes: 6,
                prestress: StressInterpolation::Ersatz,
            },
        },
        bspline: BsplineConfig { degree_x: 3, degree_y: 2, knot_interval: 0.01 * side },
        velocity: VelocityConfig { v_max: 0.1 },
        design: DesignConfig { lower: -0.2, upper: 0.2 },
        mma: MmaConfig { move_limit: 0.2, asyinit: 0.5, asyincr: 1.2, asydecr: 0.7, objective_scale: 100.0 },
        opt: OptConfig { max_iter: 500, tolerance: 1e-4, constraint_tolerance: 1e-3, window: 5 },
        levelset: LevelSetConfig { heaviside_width: 2.0, reinit_sweeps: 20, dt: 1.0 },
        holes: HoleConfig { rows: 4, cols: 4, radius: 0.06 * side, edges_are_boundary: true },
        output: OutputConfig { dir: PathBuf::from("out"), vtk: false },
        seed: 0,
    }
}

/// L-bracket: `n` x `n` elements of unit size with the upper-right
/// 0.6n x 0.6n block removed.
pub fn lbracket_config(n: usize, stress: bool, buckling: bool) -> ProblemConfig {
    let side = n as f64;
    let mut c = square_config(n, stress, buckling);
    c.mesh = MeshConfig { nx: n, ny: n, h: 1.0, bracket_cutout: true };
    c.load.stress = LoadCase { magnitude: 1.0, nodes: 5 };
    c.load.buckling = LoadCase { magnitude: 1e-3, nodes: 5 };
    c.constraint.stress.bound = 0.65;
    c.constraint.stress.p = if buckling { 8.0 } else { 10.0 };
    c.constraint.buckling.bound = 2.5;
    c.bspline.knot_interval = 0.02 * side;
    c.holes.rows = 3;
    c.holes.cols = 3;
    c.holes.radius = 0.05 * side;
    c.opt.max_iter = if buckling { 800 } else { 600 };
    c
}

pub fn preset(name: &str) -> Option<ProblemConfig> {
    let c = match name {
        "square-stress" => square_config(300, true, false),
        "square-buckling" => square_config(300, false, true),
        "square-combined" => square_config(300, true, true),
        "lbracket-stress" => lbracket_config(100, true, false),
        "lbracket-buckling" => lbracket_config(100, false, true),
        "lbracket-combined" => lbracket_config(100, true, true),
        _ => return None,
    };
    Some(c)
}

impl Default for ProblemConfig {
    fn default() -> Self {
        square_config(300, true, false)
    }
}

fn merge(base: &mut Table, overrides: Table, path: &str) -> Result<(), DriverError> {
    for (key, value) in overrides {
        let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o, &full)?,
            (Some(Value::Table(_)), _) => {
                return Err(DriverError::Config(format!("{full}: expected a section, found a value")));
            }
            (Some(slot), Value::Integer(i)) if slot.is_float() => *slot = Value::Float(i as f64),
            (Some(slot), v) => *slot = v,
            (None, _) => return Err(DriverError::Config(format!("unknown key {full}"))),
        }
    }
    Ok(())
}

impl ProblemConfig {
    /// Parses configuration text: preset defaults overridden by the keys given.
    pub fn parse(text: &str) -> Result<Self, DriverError> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| DriverError::Config(e.to_string()))?;
        let base = match table.remove("preset") {
            Some(Value::String(name)) => {
                preset(&name).ok_or_else(|| DriverError::Config(format!("preset: unknown benchmark {name:?}")))?
            }
            Some(_) => return Err(DriverError::Config("preset: expected a benchmark name".into())),
            None => ProblemConfig::default(),
        };
        let mut merged = Table::try_from(&base).map_err(|e| DriverError::Config(e.to_string()))?;
        merge(&mut merged, table, "")?;
        let config: ProblemConfig = merged.try_into().map_err(|e: toml::de::Error| DriverError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, DriverError> {
        let text = std::fs::read_to_string(path).map_err(|e| DriverError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn width(&self) -> f64 {
        self.mesh.nx as f64 * self.mesh.h
    }

    pub fn height(&self) -> f64 {
        self.mesh.ny as f64 * self.mesh.h
    }

    /// Checks every field; the error names the offending key.
    pub fn validate(&self) -> Result<(), DriverError> {
        fn positive(name: &str, v: f64) -> Result<(), DriverError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(DriverError::Config(format!("{name} must be positive, got {v}")))
            }
        }
        fn require(ok: bool, msg: String) -> Result<(), DriverError> {
            if ok {
                Ok(())
            } else {
                Err(DriverError::Config(msg))
            }
        }
        let c = self;
        require(c.mesh.nx >= 1 && c.mesh.ny >= 1, "mesh.nx and mesh.ny must be at least 1".into())?;
        positive("mesh.h", c.mesh.h)?;
        if c.mesh.bracket_cutout {
            require(
                c.mesh.nx >= 5 && c.mesh.ny >= 5,
                "mesh.bracket_cutout needs at least 5 elements per side".into(),
            )?;
        }
        positive("material.E", c.material.e)?;
        positive("material.E_min", c.material.e_min)?;
        require(c.material.e_min < c.material.e, "material.E_min must be below material.E".into())?;
        require((0.0..0.5).contains(&c.material.nu), format!("material.nu must lie in [0, 0.5), got {}", c.material.nu))?;
        for (name, case) in [("load.stress", &c.load.stress), ("load.buckling", &c.load.buckling)] {
            positive(&format!("{name}.magnitude"), case.magnitude)?;
            require(
                case.nodes >= 1 && case.nodes <= c.mesh.nx + 1,
                format!("{name}.nodes must lie in [1, {}]", c.mesh.nx + 1),
            )?;
        }
        positive("constraint.stress.bound", c.constraint.stress.bound)?;
        require(c.constraint.stress.p >= 1.0, "constraint.stress.p must be at least 1".into())?;
        positive("constraint.buckling.bound", c.constraint.buckling.bound)?;
        require(c.constraint.buckling.gamma >= 1.0, "constraint.buckling.gamma must be at least 1".into())?;
        require(c.constraint.buckling.modes >= 1, "constraint.buckling.modes must be at least 1".into())?;
        positive("bspline.knot_interval", c.bspline.knot_interval)?;
        for (name, len) in [("x", self.width()), ("y", self.height())] {
            let spans = len / c.bspline.knot_interval;
            require(
                spans.round() >= 1.0 && (spans - spans.round()).abs() <= 1.0,
                format!("bspline.knot_interval does not divide the {name} extent {len}"),
            )?;
        }
        positive("velocity.v_max", c.velocity.v_max)?;
        require(c.design.lower < c.design.upper, "design.lower must be below design.upper".into())?;
        require(
            c.design.lower <= 0.0 && c.design.upper >= 0.0,
            "design bounds must contain the zero velocity".into(),
        )?;
        positive("mma.move_limit", c.mma.move_limit)?;
        positive("mma.asyinit", c.mma.asyinit)?;
        require(c.mma.asyincr >= 1.0, "mma.asyincr must be at least 1".into())?;
        require(c.mma.asydecr > 0.0 && c.mma.asydecr <= 1.0, "mma.asydecr must lie in (0, 1]".into())?;
        positive("mma.objective_scale", c.mma.objective_scale)?;
        positive("opt.tolerance", c.opt.tolerance)?;
        require(c.opt.constraint_tolerance >= 0.0, "opt.constraint_tolerance must be nonnegative".into())?;
        require(c.opt.window >= 1, "opt.window must be at least 1".into())?;
        positive("levelset.heaviside_width", c.levelset.heaviside_width)?;
        positive("levelset.dt", c.levelset.dt)?;
        require(
            c.velocity.v_max * c.levelset.dt <= 0.5 * c.mesh.h,
            "velocity.v_max * levelset.dt violates the CFL limit 0.5 h".into(),
        )?;
        require(c.holes.radius >= 0.0, "holes.radius must be nonnegative".into())?;
        Ok(())
    }
}
