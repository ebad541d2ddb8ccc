//! Fast closed-form and round-trip checks on small grids.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;

use shearstab::grid::{build_grid, solve_helmholtz_dirichlet, ScalarField};
use shearstab::linear::{run, sinh_kernel_constant, weighted_inequality, ForcingSchedule, LinState, LinearStepper};
use shearstab::nonlinear::{init_perturbation, Checkpoint, InitSpec, NonlinearStepper};
use shearstab::profile::{Preset, ShearProfile};
use shearstab::resolvent::{resolution_nodes, ProblemParams, ResolventOperator};
use shearstab::Result;

/// One selftest verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> SelfCheck {
    match body() {
        Ok((pass, detail)) => SelfCheck { name, pass, detail },
        Err(e) => SelfCheck {
            name,
            pass: false,
            detail: e.to_string(),
        },
    }
}

pub fn run_all() -> Vec<SelfCheck> {
    vec![
        check("helmholtz closed form", helmholtz),
        check("heat closed form", heat),
        check("resolvent recomposition", recomposition),
        check("sinh kernel constants", kernels),
        check("weighted inequality", inequality),
        check("linear zero state", zero_state),
        check("checkpoint round trip", checkpoint),
    ]
}

fn helmholtz() -> Result<(bool, String)> {
    let g = build_grid(65)?;
    let rhs = ScalarField::from_real_fn(g.clone(), |y| (PI * y).sin());
    let u = solve_helmholtz_dirichlet(&g, 2.0, &rhs)?;
    let err = u
        .values()
        .iter()
        .zip(g.nodes())
        .map(|(v, &y)| (v + (PI * y).sin() / (PI * PI + 4.0)).norm())
        .fold(0.0, f64::max);
    Ok((err <= 1e-10, format!("max error {err:.2e}")))
}

fn heat() -> Result<(bool, String)> {
    let g = build_grid(65)?;
    let (eps, nu, t) = (0.1, 1e-3, 50.0);
    let p = ShearProfile::from_preset(Preset::SinusConcave(eps), g.clone())?.heat_evolve(nu, t)?;
    let decay = (-nu * PI * PI * t).exp();
    let err = g
        .nodes()
        .iter()
        .zip(&p.u)
        .map(|(&y, &u)| (u - (y + eps * decay * (PI * y).sin())).abs())
        .fold(0.0, f64::max);
    Ok((err <= 1e-10, format!("max error {err:.2e}")))
}

fn recomposition() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for (nu, k, lambda) in [(1e-3, 1i64, 0.3), (1e-4, -2, 0.7), (1e-3, 4, 1.2)] {
        let g = build_grid(resolution_nodes(nu, k))?;
        let p = ShearProfile::from_preset(Preset::SinusConcave(0.1), g.clone())?;
        let op = ResolventOperator::new(nu, k, C64::new(0.0, 0.0), &p, g.clone())?;
        let f: Vec<C64> = g
            .nodes()
            .iter()
            .map(|&y| C64::new((PI * y).sin(), 0.5 * (2.0 * PI * y).sin()))
            .collect();
        worst = worst.max(op.factor(lambda)?.solve(&f)?.recomposition_residual());
    }
    Ok((worst <= 1e-7, format!("worst residual {worst:.2e}")))
}

fn kernels() -> Result<(bool, String)> {
    let g = build_grid(65)?;
    let values: Vec<f64> = [1.0, 2.0, 4.0].iter().map(|&k| sinh_kernel_constant(&g, k)).collect();
    let pass = values.iter().all(|&c| c > 0.0 && c <= 1.0);
    Ok((pass, format!("constants {values:.3?}")))
}

fn inequality() -> Result<(bool, String)> {
    let g = build_grid(65)?;
    let omega: Vec<C64> = g
        .nodes()
        .iter()
        .map(|&y| C64::new((3.0 * PI * y).cos() + y, (PI * y).sin()))
        .collect();
    let (lhs, rhs) = weighted_inequality(&g, 1.0, &omega);
    Ok((lhs <= rhs, format!("lhs {lhs:.3e}, rhs {rhs:.3e}")))
}

fn zero_state() -> Result<(bool, String)> {
    let g = build_grid(33)?;
    let p = ShearProfile::from_preset(Preset::Couette, g.clone())?;
    let stepper = LinearStepper::for_profile(g.clone(), 1e-3, 1, &p)?;
    let params = ProblemParams::new(1e-3, 1, 0.0)?;
    let s0 = LinState::new(params, &p, g.clone(), vec![C64::new(0.0, 0.0); g.n()])?;
    let out = run(&stepper, s0, 20, ForcingSchedule::None, 1)?;
    let norm = out.final_state.norm_omega();
    Ok((norm == 0.0, format!("final norm {norm:.2e}")))
}

fn checkpoint() -> Result<(bool, String)> {
    let g = build_grid(33)?;
    let p = ShearProfile::from_preset(Preset::Couette, g.clone())?;
    let k_max = 6;
    let stepper = NonlinearStepper::for_profile(g.clone(), 1e-2, k_max, &p)?;
    let init = init_perturbation(&p, g, 1e-2, 0.0, k_max, &InitSpec::random(vec![1, 2], 3), 1e-3)?;
    let state = stepper.step(&init)?;
    let saved = Checkpoint::of(&state);
    let bytes = saved.to_bytes();
    let loaded = Checkpoint::from_bytes(&bytes)?;
    // Fields are stored in single precision.
    let scale = saved.fields.iter().flatten().fold(0.0f64, |m, z| m.max(z.norm()));
    let err = saved
        .fields
        .iter()
        .flatten()
        .zip(loaded.fields.iter().flatten())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
    let pass = loaded.to_bytes() == bytes && loaded.t == saved.t && err <= 1e-6 * scale;
    Ok((pass, format!("{} bytes, relative field error {:.1e}", bytes.len(), err / scale)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_selftest_passes() {
        for c in run_all() {
            assert!(c.pass, "{}: {}", c.name, c.detail);
        }
    }
}
