use rand::Rng;

use super::PolicyParams;
use crate::action::ManagementAction;
use crate::model::Expertise;
use crate::world::WorldView;

/// Hire above `upper` mean utilization, fire below `lower`, else no-op.
/// Levels are drawn from the hiring prior. Never fires the last retained
/// personnel.
pub fn manage_threshold<R: Rng + ?Sized>(view: &WorldView<'_>, rng: &mut R, params: &PolicyParams) -> ManagementAction {
    let pur = view.pur_mean();
    if pur > params.upper {
        ManagementAction::Hire(Expertise::sample(rng))
    } else if pur < params.lower && view.retained_headcount() > 1 {
        ManagementAction::Fire(Expertise::sample(rng))
    } else {
        ManagementAction::NoOp
    }
}

/// With probability `epsilon` a uniform random decision, otherwise the
/// threshold decision.
pub fn manage_epsilon<R: Rng + ?Sized>(view: &WorldView<'_>, rng: &mut R, params: &PolicyParams) -> ManagementAction {
    let u: f64 = rng.random();
    if u < params.epsilon {
        manage_random(view, rng)
    } else {
        manage_threshold(view, rng, params)
    }
}

/// Uniform over {hire, fire, no-op}; a fire that would empty the workforce
/// becomes a no-op.
pub fn manage_random<R: Rng + ?Sized>(view: &WorldView<'_>, rng: &mut R) -> ManagementAction {
    let u: f64 = rng.random();
    match ((u * 3.0) as usize).min(2) {
        0 => ManagementAction::Hire(Expertise::sample(rng)),
        1 if view.retained_headcount() > 1 => ManagementAction::Fire(Expertise::sample(rng)),
        _ => ManagementAction::NoOp,
    }
}
