use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::sample_weighted;
use crate::action::FacilityWeight;
use crate::model::{Expertise, Facility, Location, Personnel, StaffChangeKind, StaffTarget};
use crate::world::WorldView;

/// Blend between recent request frequency and windowed downtime.
pub const DEFAULT_DEMAND_ALPHA: f64 = 0.5;

/// `alpha * opened / T_AFD + (1 - alpha) * AFD` for one facility.
pub fn demand_score(facility: &Facility, alpha: f64) -> f64 {
    let recent = facility.request_history.count() as f64 / facility.request_history.capacity() as f64;
    alpha * recent + (1.0 - alpha) * facility.downtime.ratio()
}

/// Normalized per-facility weights. An all-zero input becomes uniform.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DemandMap {
    pub weights: Vec<FacilityWeight>,
}

impl DemandMap {
    pub fn from_raw(raw: Vec<FacilityWeight>) -> Self {
        let total: f64 = raw.iter().map(|w| w.weight.max(0.0)).sum();
        let n = raw.len() as f64;
        let weights = raw
            .into_iter()
            .map(|w| FacilityWeight {
                facility: w.facility,
                weight: if total > 0.0 { w.weight.max(0.0) / total } else { 1.0 / n },
            })
            .collect();
        Self { weights }
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn located<'a>(&self, view: &WorldView<'a>) -> Vec<(&'a Facility, f64)> {
        self.weights
            .iter()
            .filter_map(|w| view.facility(w.facility).map(|f| (f, w.weight)))
            .collect()
    }

    /// Demand-weighted centroid of facility locations; the grid center when
    /// no facility is known.
    pub fn centroid(&self, view: &WorldView<'_>) -> Location {
        let located = self.located(view);
        let total: f64 = located.iter().map(|(_, w)| w).sum();
        if located.is_empty() || !(total > 0.0) {
            return view.grid.center();
        }
        let x = located.iter().map(|(f, w)| f.location.x * w).sum::<f64>() / total;
        let y = located.iter().map(|(f, w)| f.location.y * w).sum::<f64>() / total;
        Location::new(x, y)
    }
}

/// Normalized demand scores of the operational facilities.
pub fn demand_map(view: &WorldView<'_>, alpha: f64) -> DemandMap {
    DemandMap::from_raw(
        view.facilities
            .iter()
            .filter(|f| f.operational)
            .map(|f| FacilityWeight {
                facility: f.id,
                weight: demand_score(f, alpha),
            })
            .collect(),
    )
}

/// Personnel a fire of `level` may target: fire candidates of that level,
/// or every fire candidate when none has it.
pub fn fire_pool<'a>(view: &WorldView<'a>, level: Expertise) -> Vec<&'a Personnel> {
    let all: Vec<&Personnel> = view.fire_candidates().collect();
    let matching: Vec<&Personnel> = all.iter().copied().filter(|p| p.expertise == level).collect();
    if matching.is_empty() {
        all
    } else {
        matching
    }
}

/// Hire at the demand-weighted centroid; fire the (preferably idle)
/// personnel whose home is farthest from it.
pub fn position_spatial_average(
    map: &DemandMap,
    kind: StaffChangeKind,
    level: Expertise,
    view: &WorldView<'_>,
) -> Option<StaffTarget> {
    let centroid = map.centroid(view);
    match kind {
        StaffChangeKind::Hire => Some(StaffTarget::Location(view.grid.clamp(centroid))),
        StaffChangeKind::Fire => {
            let pool = fire_pool(view, level);
            let idle: Vec<&Personnel> = pool.iter().copied().filter(|p| p.is_idle()).collect();
            let candidates = if idle.is_empty() { pool } else { idle };
            let mut best: Option<(&Personnel, f64)> = None;
            for p in candidates {
                let d = view.metric.distance(p.home, centroid);
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((p, d));
                }
            }
            best.map(|(p, _)| StaffTarget::Personnel(p.id))
        }
    }
}

/// Hire near a facility sampled by demand, with isotropic Gaussian noise of
/// standard deviation `sigma` clamped to the grid; fire a personnel sampled
/// in proportion to its home's distance from the demand centroid.
pub fn position_gaussian<R: Rng + ?Sized>(
    map: &DemandMap,
    kind: StaffChangeKind,
    level: Expertise,
    view: &WorldView<'_>,
    rng: &mut R,
    sigma: f64,
) -> Option<StaffTarget> {
    match kind {
        StaffChangeKind::Hire => {
            let located = map.located(view);
            let base = if located.is_empty() {
                view.grid.center()
            } else {
                let weights: Vec<f64> = located.iter().map(|(_, w)| *w).collect();
                located[sample_weighted(&weights, rng)].0.location
            };
            let (dx, dy) = if sigma > 0.0 {
                let nx: f64 = StandardNormal.sample(rng);
                let ny: f64 = StandardNormal.sample(rng);
                (sigma * nx, sigma * ny)
            } else {
                (0.0, 0.0)
            };
            Some(StaffTarget::Location(
                view.grid.clamp(Location::new(base.x + dx, base.y + dy)),
            ))
        }
        StaffChangeKind::Fire => {
            let pool = fire_pool(view, level);
            if pool.is_empty() {
                return None;
            }
            let centroid = map.centroid(view);
            let weights: Vec<f64> = pool.iter().map(|p| view.metric.distance(p.home, centroid)).collect();
            Some(StaffTarget::Personnel(pool[sample_weighted(&weights, rng)].id))
        }
    }
}

/// Uniform grid location for a hire, uniform personnel for a fire.
pub fn position_random<R: Rng + ?Sized>(
    kind: StaffChangeKind,
    level: Expertise,
    view: &WorldView<'_>,
    rng: &mut R,
) -> Option<StaffTarget> {
    match kind {
        StaffChangeKind::Hire => Some(StaffTarget::Location(view.grid.sample_uniform(rng))),
        StaffChangeKind::Fire => {
            let pool = fire_pool(view, level);
            if pool.is_empty() {
                return None;
            }
            let u: f64 = rng.random();
            let i = ((u * pool.len() as f64) as usize).min(pool.len() - 1);
            Some(StaffTarget::Personnel(pool[i].id))
        }
    }
}
