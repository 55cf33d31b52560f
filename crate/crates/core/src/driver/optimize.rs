//! The optimization loop.

use super::config::ProblemConfig;
use super::problem::Problem;
use super::DriverError;
use crate::bspline::velocity_field_from_knots;
use crate::buckling::{solve_buckling_modes, BucklingModes, EigenOptions};
use crate::fem::{
    assemble_stiffness, assemble_stress_stiffness, element_stresses, factorize, solve_with, MaterialModel,
    StiffnessFactorization,
    SymmetricSparseMatrix,
};
use crate::levelset::{advect_upwind, density_from_levelset, reinitialize, DensityField, LevelSetGrid};
use crate::mma::{MmaParams, MmaState};
use crate::sensitivity::{
    buckling_eigen_sensitivity, dmu_from_dlambda, ks_aggregate, ks_sensitivity, pnorm_stress,
    pnorm_stress_sensitivity, project_to_coefficients, volume_and_sensitivity, SensitivityVector,
};

#[derive(Debug, Clone)]
pub struct StressResponse {
    pub sigma_pm: f64,
    pub von_mises: Vec<f64>,
    pub gradient: SensitivityVector,
}

#[derive(Debug, Clone)]
pub struct BucklingResponse {
    pub modes: BucklingModes,
    pub ks: f64,
    /// dKS/dρ.
    pub gradient: SensitivityVector,
}

/// Structural responses and density sensitivities of one design.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub density: DensityField,
    pub volume: f64,
    pub volume_gradient: SensitivityVector,
    pub stress: Option<StressResponse>,
    pub buckling: Option<BucklingResponse>,
}

impl Evaluation {
    /// Constraint values in g ≤ 0 form, stress first.
    pub fn constraints(&self, config: &ProblemConfig) -> Vec<f64> {
        let mut g = Vec::new();
        if let Some(s) = &self.stress {
            g.push(s.sigma_pm / config.constraint.stress.bound - 1.0);
        }
        if let Some(b) = &self.buckling {
            g.push(b.ks / config.constraint.buckling.bound - 1.0);
        }
        g
    }

    pub fn is_feasible(&self, config: &ProblemConfig) -> bool {
        self.constraints(config).iter().all(|&g| g <= config.opt.constraint_tolerance)
    }
}

/// Heaviside half-width in length units.
pub fn heaviside_delta(config: &ProblemConfig) -> f64 {
    config.levelset.heaviside_width * config.mesh.h
}

/// Factorized stiffness of a density field.
pub fn stiffness(
    problem: &Problem,
    density: &[f64],
) -> Result<(SymmetricSparseMatrix, StiffnessFactorization), DriverError> {
    let k = assemble_stiffness(&problem.mesh, density, &problem.material)?;
    let factor = factorize(&k, &problem.mesh)?;
    Ok((k, factor))
}

/// The material with the configured prestress interpolation.
pub fn buckling_material(problem: &Problem, config: &ProblemConfig) -> MaterialModel {
    MaterialModel { stress_interpolation: config.constraint.buckling.prestress, ..problem.material }
}

/// Buckling modes of a density field under the buckling load case, with
/// the displacement they were computed from.
pub fn buckling_analysis(
    problem: &Problem,
    config: &ProblemConfig,
    density: &[f64],
    k: &SymmetricSparseMatrix,
    factor: &StiffnessFactorization,
    start: Option<&[f64]>,
) -> Result<(Vec<f64>, BucklingModes), DriverError> {
    let u = solve_with(factor, k, &problem.buckling_load)?;
    let g = assemble_stress_stiffness(&problem.mesh, &u, density, &buckling_material(problem, config))?;
    let options = EigenOptions { seed: config.seed, ..EigenOptions::default() };
    let modes = solve_buckling_modes(k, &g, factor, config.constraint.buckling.modes, &options, start)?;
    Ok((u.u, modes))
}

/// Density, volume, and the enabled constraint responses with their
/// adjoint sensitivities.
pub fn evaluate(
    problem: &Problem,
    config: &ProblemConfig,
    levelset: &LevelSetGrid,
    warm_start: Option<&[f64]>,
) -> Result<Evaluation, DriverError> {
    let mesh = &problem.mesh;
    let material = &problem.material;
    let density = density_from_levelset(levelset, mesh, heaviside_delta(config))?;
    let (volume, volume_gradient) = volume_and_sensitivity(&density, mesh)?;
    let needs_fe = config.constraint.stress.enabled || config.constraint.buckling.enabled;
    let mut stress = None;
    let mut buckling = None;
    if needs_fe {
        let (k, factor) = stiffness(problem, &density)?;
        if config.constraint.stress.enabled {
            let p = config.constraint.stress.p;
            let stress_material =
                MaterialModel { stress_interpolation: config.material.stress_interpolation, ..*material };
            let u = solve_with(&factor, &k, &problem.stress_load)?;
            let von_mises = element_stresses(mesh, &u, &density, &stress_material)?.von_mises;
            let sigma_pm = pnorm_stress(&von_mises, p)?;
            let gradient = pnorm_stress_sensitivity(mesh, &u, &density, &stress_material, p, &factor)?;
            stress = Some(StressResponse { sigma_pm, von_mises, gradient });
        }
        if config.constraint.buckling.enabled {
            let (u, modes) = buckling_analysis(problem, config, &density, &k, &factor, warm_start)?;
            let prestress = buckling_material(problem, config);
            let dlambda = buckling_eigen_sensitivity(mesh, &u, &density, &prestress, &k, &modes, &factor)?;
            let mus = modes.mus();
            let dmus: Vec<SensitivityVector> =
                modes.lambdas.iter().zip(&dlambda).map(|(&l, d)| dmu_from_dlambda(l, d)).collect();
            let gamma = config.constraint.buckling.gamma;
            let ks = ks_aggregate(&mus, gamma)?;
            let gradient = ks_sensitivity(&mus, &dmus, gamma)?;
            buckling = Some(BucklingResponse { modes, ks, gradient });
        }
    }
    Ok(Evaluation { density, volume, volume_gradient, stress, buckling })
}

/// One row of the convergence history.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub volume: f64,
    pub sigma_pm: Option<f64>,
    pub ks_mu: Option<f64>,
    pub lambda1: Option<f64>,
    /// max |V| of the knot values before the velocity cap.
    pub max_vn: f64,
    /// |V_k − V_{k−1}| / max(V_{k−1}, 1e-12); absent on the first iteration.
    pub rel_change: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunHistory {
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub history: RunHistory,
    /// The last evaluated design and its level set.
    pub density: DensityField,
    pub levelset: LevelSetGrid,
    pub evaluation: Option<Evaluation>,
}

fn with_iteration<T>(iter: usize, r: Result<T, DriverError>) -> Result<T, DriverError> {
    r.map_err(|e| DriverError::Iteration { iter, source: Box::new(e) })
}

/// Runs the optimization from the problem's initial level set. `observer`
/// sees every history record as it is produced.
pub fn run_optimization(
    problem: &Problem,
    config: &ProblemConfig,
    mut observer: impl FnMut(&IterationRecord),
) -> Result<RunOutcome, DriverError> {
    let mesh = &problem.mesh;
    let delta = heaviside_delta(config);
    let n = problem.surface.n_coeffs();
    let params = MmaParams {
        move_limit: config.mma.move_limit,
        asyinit: config.mma.asyinit,
        asyincr: config.mma.asyincr,
        asydecr: config.mma.asydecr,
        ..MmaParams::default()
    };
    // MMA works on the accumulated coefficients, so the current design is
    // always the linearization point; each step is one velocity field,
    // boxed to the coefficient bounds around the current point.
    let step_box = |x: &[f64]| -> (Vec<f64>, Vec<f64>) {
        (x.iter().map(|v| v + config.design.lower).collect(), x.iter().map(|v| v + config.design.upper).collect())
    };
    let start = vec![0.0; n];
    let (lo, hi) = step_box(&start);
    let mut mma = MmaState::new(start, lo, hi, params)?;
    let scale = config.mma.objective_scale;

    let mut levelset = problem.initial_levelset.clone();
    let mut history = RunHistory::default();
    let mut previous_volume: Option<f64> = None;
    let mut warm_start: Option<Vec<f64>> = None;
    let mut last: Option<Evaluation> = None;
    let mut quiet_steps = 0;

    for iter in 0..config.opt.max_iter {
        let eval = with_iteration(iter, evaluate(problem, config, &levelset, warm_start.as_deref()))?;
        let rel_change = previous_volume.map(|v| (eval.volume - v).abs() / v.max(1e-12));
        let mut record = IterationRecord {
            iter,
            volume: eval.volume,
            sigma_pm: eval.stress.as_ref().map(|s| s.sigma_pm),
            ks_mu: eval.buckling.as_ref().map(|b| b.ks),
            lambda1: eval.buckling.as_ref().map(|b| b.modes.lambdas[0]),
            max_vn: 0.0,
            rel_change,
        };
        quiet_steps = if rel_change.is_some_and(|r| r < config.opt.tolerance) { quiet_steps + 1 } else { 0 };
        if quiet_steps >= config.opt.window && eval.is_feasible(config) {
            observer(&record);
            history.records.push(record);
            return Ok(RunOutcome {
                status: RunStatus::Converged,
                history,
                density: eval.density.clone(),
                levelset,
                evaluation: Some(eval),
            });
        }

        let project = |d: &[f64]| project_to_coefficients(d, &levelset, mesh, &problem.basis, delta);
        let df0: Vec<f64> = with_iteration(iter, project(&eval.volume_gradient).map_err(Into::into))?
            .iter()
            .map(|v| scale * v)
            .collect();
        let g = eval.constraints(config);
        let mut dg = Vec::new();
        if let Some(s) = &eval.stress {
            let bound = config.constraint.stress.bound;
            let d = with_iteration(iter, project(&s.gradient).map_err(Into::into))?;
            dg.push(d.iter().map(|v| v / bound).collect());
        }
        if let Some(b) = &eval.buckling {
            let bound = config.constraint.buckling.bound;
            let d = with_iteration(iter, project(&b.gradient).map_err(Into::into))?;
            dg.push(d.iter().map(|v| v / bound).collect());
        }
        let (lo, hi) = step_box(&mma.x);
        with_iteration(iter, mma.set_bounds(lo, hi).map_err(Into::into))?;
        let before = mma.x.clone();
        let x = with_iteration(iter, mma.update(scale * eval.volume, &df0, &g, &dg).map_err(Into::into))?;
        let step: Vec<f64> = x.iter().zip(&before).map(|(a, b)| a - b).collect();
        let knots = problem.basis.evaluate(&step);
        let velocity = velocity_field_from_knots(&knots, config.velocity.v_max);
        record.max_vn = velocity.raw_max;

        let advected = with_iteration(
            iter,
            advect_upwind(&levelset, mesh, &velocity.vn, config.levelset.dt).map_err(Into::into),
        )?;
        let mut next =
            with_iteration(iter, reinitialize(&advected, config.levelset.reinit_sweeps).map_err(Into::into))?;
        next.hold_at_least(&problem.solid_nodes, delta);

        observer(&record);
        history.records.push(record);
        previous_volume = Some(eval.volume);
        warm_start = eval.buckling.as_ref().map(|b| {
            let mut s = vec![0.0; mesh.n_dofs()];
            for m in &b.modes.modes {
                s.iter_mut().zip(m).for_each(|(a, v)| *a += v);
            }
            s
        });
        last = Some(eval);
        if iter + 1 < config.opt.max_iter {
            levelset = next;
        }
    }

    let density = match &last {
        Some(e) => e.density.clone(),
        None => density_from_levelset(&levelset, mesh, delta)?,
    };
    Ok(RunOutcome { status: RunStatus::IterationCap, history, density, levelset, evaluation: last })
}
