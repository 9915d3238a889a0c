//! Domain types shared by the engine, the policies and the episode API.
//!
//! Coordinates are reals on an integer-sized grid; every entity lives in
//! `[0, width) x [0, height)`. Randomness comes from four named ChaCha
//! streams derived from one master seed so that policy randomness never
//! perturbs exogenous events.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::window::RollingWindow;

/// Integer-sized service area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub width: u32,
    pub height: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self::square(64)
    }
}

impl GridConfig {
    pub fn new(width: u32, height: u32) -> Result<Self, ConfigError> {
        let grid = Self { width, height };
        grid.validate()?;
        Ok(grid)
    }

    pub const fn square(side: u32) -> Self {
        Self {
            width: side,
            height: side,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.width == 0 {
            return Err(ConfigError::new("grid.width", "must be at least 1"));
        }
        if self.height == 0 {
            return Err(ConfigError::new("grid.height", "must be at least 1"));
        }
        Ok(())
    }

    pub fn contains(&self, loc: Location) -> bool {
        loc.x >= 0.0 && loc.y >= 0.0 && loc.x < self.width as f64 && loc.y < self.height as f64
    }

    /// Projects a point onto the half-open grid rectangle.
    pub fn clamp(&self, loc: Location) -> Location {
        let max_x = (self.width as f64).next_down();
        let max_y = (self.height as f64).next_down();
        let fix = |v: f64, max: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, max) };
        Location::new(fix(loc.x, max_x), fix(loc.y, max_y))
    }

    pub fn center(&self) -> Location {
        Location::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Uniform location inside the grid. Always consumes exactly two draws.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Location {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        self.clamp(Location::new(u * self.width as f64, v * self.height as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Euclidean distance between two locations.
pub fn distance(a: Location, b: Location) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Manhattan,
}

impl DistanceMetric {
    pub fn distance(self, a: Location, b: Location) -> f64 {
        match self {
            DistanceMetric::Euclidean => distance(a, b),
            DistanceMetric::Manhattan => (a.x - b.x).abs() + (a.y - b.y).abs(),
        }
    }

    /// Moves `from` toward `to` by at most `speed`, returning the new
    /// position and whether the target was reached.
    pub fn advance(self, from: Location, to: Location, speed: f64) -> (Location, bool) {
        let remaining = self.distance(from, to);
        if remaining <= speed {
            return (to, true);
        }
        match self {
            DistanceMetric::Euclidean => {
                let f = speed / remaining;
                let next = Location::new(from.x + (to.x - from.x) * f, from.y + (to.y - from.y) * f);
                (next, false)
            }
            DistanceMetric::Manhattan => {
                // x leg first, then y
                let dx = to.x - from.x;
                if dx.abs() >= speed {
                    return (Location::new(from.x + speed * dx.signum(), from.y), false);
                }
                let left = speed - dx.abs();
                let dy = to.y - from.y;
                (Location::new(to.x, from.y + left * dy.signum()), false)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expertise {
    Novice,
    Mid,
    Expert,
}

impl Expertise {
    pub const ALL: [Expertise; 3] = [Expertise::Novice, Expertise::Mid, Expertise::Expert];

    /// Hiring / initialization distribution, biased toward the middle level.
    pub const PRIOR: [f64; 3] = [0.25, 0.5, 0.25];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// First-visit repair probability: `base^2`, `base`, `sqrt(base)`.
    pub fn repair_probability(self, base: f64) -> f64 {
        match self {
            Expertise::Novice => base * base,
            Expertise::Mid => base,
            Expertise::Expert => base.sqrt(),
        }
    }

    /// Draws a level from [`Expertise::PRIOR`] using a single uniform.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let u: f64 = rng.random();
        if u < Self::PRIOR[0] {
            Expertise::Novice
        } else if u < Self::PRIOR[0] + Self::PRIOR[1] {
            Expertise::Mid
        } else {
            Expertise::Expert
        }
    }
}

macro_rules! entity_id {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

entity_id!(PersonnelId, "p");
entity_id!(FacilityId, "f");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Idle,
    TravelingToFacility,
    Servicing,
    TravelingHome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Personnel {
    pub id: PersonnelId,
    /// Observation row; stable for the personnel's lifetime.
    pub slot: usize,
    pub home: Location,
    pub position: Location,
    pub expertise: Expertise,
    pub activity: Activity,
    pub assigned_facility: Option<FacilityId>,
    pub utilization: RollingWindow,
    /// Fired; removed once back home.
    pub offboarding: bool,
    pub service_ends_at: Option<u64>,
    pub hired_at: u64,
}

impl Personnel {
    pub fn new(
        id: PersonnelId,
        slot: usize,
        home: Location,
        expertise: Expertise,
        window: usize,
        clock: u64,
    ) -> Self {
        Self {
            id,
            slot,
            home,
            position: home,
            expertise,
            activity: Activity::Idle,
            assigned_facility: None,
            utilization: RollingWindow::new(window),
            offboarding: false,
            service_ends_at: None,
            hired_at: clock,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.activity == Activity::Idle
    }

    /// Idle and not leaving: the only state a dispatch may target.
    pub fn is_available(&self) -> bool {
        self.is_idle() && !self.offboarding
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub facility_id: FacilityId,
    pub opened_at: u64,
    /// Failed visits so far.
    pub visits: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Facility {
    pub id: FacilityId,
    pub slot: usize,
    pub location: Location,
    pub operational: bool,
    pub request: Option<ServiceRequest>,
    pub assigned_personnel: Option<PersonnelId>,
    pub downtime: RollingWindow,
    /// 1 on steps where a request was opened; feeds the demand score.
    pub request_history: RollingWindow,
    pub demand_stat: f64,
    /// Only used with per-facility arrival clocks.
    pub next_arrival_at: Option<u64>,
    pub entered_at: u64,
}

impl Facility {
    pub fn new(id: FacilityId, slot: usize, location: Location, window: usize, clock: u64) -> Self {
        Self {
            id,
            slot,
            location,
            operational: true,
            request: None,
            assigned_personnel: None,
            downtime: RollingWindow::new(window),
            request_history: RollingWindow::new(window),
            demand_stat: 0.0,
            next_arrival_at: None,
            entered_at: clock,
        }
    }

    /// Open, operational and nobody assigned.
    pub fn awaiting_dispatch(&self) -> bool {
        self.operational && self.request.is_some() && self.assigned_personnel.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaffChangeKind {
    Hire,
    Fire,
}

/// Where a hire lands, or who a fire removes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaffTarget {
    Location(Location),
    Personnel(PersonnelId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendingStaffChange {
    pub kind: StaffChangeKind,
    pub expertise: Expertise,
    pub target: StaffTarget,
    pub issued_at: u64,
    pub execute_at: u64,
}

/// The four independent random streams of a world.
#[derive(Debug, Clone, PartialEq)]
pub struct RngStreams {
    /// Exogenous events: layout, facility flux, service arrivals.
    pub arrivals: ChaCha8Rng,
    pub repairs: ChaCha8Rng,
    /// Built-in policy randomness.
    pub policy: ChaCha8Rng,
    /// Heat-map positioning resolution inside the engine.
    pub positioning: ChaCha8Rng,
}

impl RngStreams {
    pub fn from_seed(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Self {
            arrivals: stream(1),
            repairs: stream(2),
            policy: stream(3),
            positioning: stream(4),
        }
    }
}

/// Integer inter-arrival time with mean `mean_rate` time-steps.
///
/// Draws an exponential variate and takes its ceiling (at least one step).
/// The exponential rate is calibrated so that the ceiled, i.e. geometric,
/// distribution has mean exactly `mean_rate`; means at or below one step
/// always yield 1.
pub fn sample_poisson_interarrival<R: Rng + ?Sized>(
    rng: &mut R,
    mean_rate: f64,
) -> Result<u64, ConfigError> {
    if !(mean_rate > 0.0) || !mean_rate.is_finite() {
        return Err(ConfigError::new(
            "interarrival_mean",
            format!("must be a positive finite number of steps, got {mean_rate}"),
        ));
    }
    if mean_rate <= 1.0 {
        // keep stream consumption uniform
        let _: f64 = rng.random();
        return Ok(1);
    }
    let lambda = -(1.0 - 1.0 / mean_rate).ln();
    let exp = Exp::new(lambda).map_err(|e| ConfigError::new("interarrival_mean", e.to_string()))?;
    let draw: f64 = exp.sample(rng);
    Ok((draw.ceil() as u64).max(1))
}
