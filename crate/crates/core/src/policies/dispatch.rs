use rand::Rng;

use super::{sample_weighted, DispatchOrder};
use crate::action::Assignment;
use crate::model::Personnel;
use crate::world::WorldView;

/// Nearest-idle dispatch. Ties go to the lowest id.
pub fn dispatch_greedy(view: &WorldView<'_>, order: DispatchOrder) -> Vec<Assignment> {
    let requests = view.open_requests();
    let mut idle = view.available_personnel();
    let mut out = Vec::new();
    match order {
        DispatchOrder::RequestFirst => {
            for f in requests {
                let Some(best) = nearest(idle.iter().map(|p| (p.id.0, view.metric.distance(p.position, f.location))))
                else {
                    break;
                };
                let p = idle.remove(best);
                out.push(Assignment {
                    personnel: p.id,
                    facility: f.id,
                });
            }
        }
        DispatchOrder::PersonnelFirst => {
            let mut open = requests;
            open.sort_by_key(|f| f.id);
            for p in idle {
                let Some(best) = nearest(open.iter().map(|f| (f.id.0, view.metric.distance(p.position, f.location))))
                else {
                    break;
                };
                let f = open.remove(best);
                out.push(Assignment {
                    personnel: p.id,
                    facility: f.id,
                });
            }
        }
    }
    out
}

/// Position of the smallest distance, ties broken by the smaller id.
fn nearest(candidates: impl Iterator<Item = (u32, f64)>) -> Option<usize> {
    let mut best: Option<(usize, u32, f64)> = None;
    for (i, (id, d)) in candidates.enumerate() {
        match best {
            Some((_, bid, bd)) if d > bd || (d == bd && id > bid) => {}
            _ => best = Some((i, id, d)),
        }
    }
    best.map(|b| b.0)
}

/// Like [`dispatch_greedy`] (request-first) but samples the personnel with
/// probability proportional to `1 / (distance + delta)`.
pub fn dispatch_stochastic<R: Rng + ?Sized>(view: &WorldView<'_>, rng: &mut R, delta: f64) -> Vec<Assignment> {
    let mut idle: Vec<&Personnel> = view.available_personnel();
    let mut out = Vec::new();
    for f in view.open_requests() {
        if idle.is_empty() {
            break;
        }
        let weights: Vec<f64> = idle
            .iter()
            .map(|p| 1.0 / (view.metric.distance(p.position, f.location) + delta))
            .collect();
        let p = idle.remove(sample_weighted(&weights, rng));
        out.push(Assignment {
            personnel: p.id,
            facility: f.id,
        });
    }
    out
}

/// Each open request gets a uniformly random idle personnel or a no-op,
/// sampled without replacement.
pub fn dispatch_random<R: Rng + ?Sized>(view: &WorldView<'_>, rng: &mut R) -> Vec<Assignment> {
    let mut idle: Vec<&Personnel> = view.available_personnel();
    let mut out = Vec::new();
    for f in view.open_requests() {
        if idle.is_empty() {
            break;
        }
        let u: f64 = rng.random();
        let choice = ((u * (idle.len() + 1) as f64) as usize).min(idle.len());
        if choice == idle.len() {
            continue;
        }
        let p = idle.remove(choice);
        out.push(Assignment {
            personnel: p.id,
            facility: f.id,
        });
    }
    out
}
