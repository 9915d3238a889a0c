//! Built-in baseline decision makers for dispatch, workforce management and
//! positioning, each with deterministic, stochastic and random variants.

mod dispatch;
mod management;
mod positioning;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{ActionSet, Assignment, ManagementAction, Positioning};
use crate::engine::Violation;
use crate::error::ConfigError;
use crate::world::WorldView;

pub use dispatch::{dispatch_greedy, dispatch_random, dispatch_stochastic};
pub use management::{manage_epsilon, manage_random, manage_threshold};
pub use positioning::{
    demand_map, demand_score, fire_pool, position_gaussian, position_random,
    position_spatial_average, DemandMap, DEFAULT_DEMAND_ALPHA,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispatchPolicy {
    Random,
    Greedy,
    Stochastic,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManagementPolicy {
    Random,
    Threshold,
    Epsilon,
    External,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositioningPolicy {
    Random,
    SpatialAverage,
    Gaussian,
    External,
}

/// Iteration order of the greedy dispatcher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispatchOrder {
    /// Oldest request first, each taking its nearest idle personnel.
    #[default]
    RequestFirst,
    /// Idle personnel in id order, each taking its nearest open request.
    PersonnelFirst,
}

/// The three controllable aspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Dispatch,
    Management,
    Positioning,
}

impl FromStr for Aspect {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "dispatch" => Ok(Aspect::Dispatch),
            "management" | "mgmt" => Ok(Aspect::Management),
            "positioning" | "pos" => Ok(Aspect::Positioning),
            other => Err(ConfigError::new("aspect", format!("unknown aspect `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    pub epsilon: f64,
    /// Hire when mean utilization exceeds this.
    pub upper: f64,
    /// Fire when mean utilization falls below this.
    pub lower: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Guard added to distances in inverse-distance sampling.
    pub delta: f64,
    pub dispatch_order: DispatchOrder,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            upper: 0.85,
            lower: 0.5,
            sigma: 3.0,
            alpha: DEFAULT_DEMAND_ALPHA,
            delta: 1e-6,
            dispatch_order: DispatchOrder::RequestFirst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySpec {
    pub dispatch: DispatchPolicy,
    pub management: ManagementPolicy,
    pub positioning: PositioningPolicy,
    pub params: PolicyParams,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self::heuristic()
    }
}

impl PolicySpec {
    pub fn new(dispatch: DispatchPolicy, management: ManagementPolicy, positioning: PositioningPolicy) -> Self {
        Self {
            dispatch,
            management,
            positioning,
            params: PolicyParams::default(),
        }
    }

    /// Greedy dispatch, threshold management, spatial-average positioning.
    pub fn heuristic() -> Self {
        Self::new(
            DispatchPolicy::Greedy,
            ManagementPolicy::Threshold,
            PositioningPolicy::SpatialAverage,
        )
    }

    pub fn random() -> Self {
        Self::new(DispatchPolicy::Random, ManagementPolicy::Random, PositioningPolicy::Random)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.params;
        if !(0.0..=1.0).contains(&p.epsilon) {
            return Err(ConfigError::new("policy.params.epsilon", "must lie in [0, 1]"));
        }
        if !(p.lower <= p.upper) {
            return Err(ConfigError::new("policy.params.lower", "must not exceed upper"));
        }
        if !(p.sigma >= 0.0 && p.sigma.is_finite()) {
            return Err(ConfigError::new("policy.params.sigma", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&p.alpha) {
            return Err(ConfigError::new("policy.params.alpha", "must lie in [0, 1]"));
        }
        if !(p.delta > 0.0) {
            return Err(ConfigError::new("policy.params.delta", "must be positive"));
        }
        Ok(())
    }

    /// Aspects that must be supplied by an external agent.
    pub fn external_aspects(&self) -> Vec<Aspect> {
        let mut out = Vec::new();
        if self.dispatch == DispatchPolicy::External {
            out.push(Aspect::Dispatch);
        }
        if self.management == ManagementPolicy::External {
            out.push(Aspect::Management);
        }
        if self.positioning == PositioningPolicy::External {
            out.push(Aspect::Positioning);
        }
        out
    }

    /// Applies a command-line policy string such as
    /// `dispatch=greedy,mgmt=threshold:upper=0.9,pos=gaussian:sigma=2`.
    pub fn apply_cli(&mut self, spec: &str) -> Result<(), ConfigError> {
        for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (aspect, rest) = part
                .split_once('=')
                .ok_or_else(|| ConfigError::new("policy", format!("expected aspect=name in `{part}`")))?;
            let mut pieces = rest.split(':');
            let name = pieces.next().unwrap_or_default().trim();
            match aspect.trim().parse::<Aspect>()? {
                Aspect::Dispatch => self.dispatch = parse_variant("policy.dispatch", name)?,
                Aspect::Management => self.management = parse_variant("policy.management", name)?,
                Aspect::Positioning => self.positioning = parse_variant("policy.positioning", name)?,
            }
            for kv in pieces {
                let (key, value) = kv
                    .split_once('=')
                    .ok_or_else(|| ConfigError::new("policy.params", format!("expected key=value in `{kv}`")))?;
                self.set_param(key.trim(), value.trim())?;
            }
        }
        self.validate()
    }

    fn set_param(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let full = format!("policy.params.{key}");
        if key == "dispatch_order" || key == "order" {
            self.params.dispatch_order = parse_variant(&full, value)?;
            return Ok(());
        }
        let v: f64 = value
            .parse()
            .map_err(|_| ConfigError::new(&full, format!("`{value}` is not a number")))?;
        match key {
            "epsilon" | "eps" => self.params.epsilon = v,
            "upper" => self.params.upper = v,
            "lower" => self.params.lower = v,
            "sigma" => self.params.sigma = v,
            "alpha" => self.params.alpha = v,
            "delta" => self.params.delta = v,
            _ => return Err(ConfigError::new(full, "unknown policy parameter")),
        }
        Ok(())
    }
}

fn parse_variant<T: serde::de::DeserializeOwned>(key: &str, name: &str) -> Result<T, ConfigError> {
    let alias = match name {
        "nearest" | "greedy-nearest" => "greedy",
        "stochastic-nearest" => "stochastic",
        "epsilon-threshold" => "epsilon",
        "spatial" | "spatial-average" | "heuristic" if key.ends_with("positioning") => "spatial-average",
        "heuristic" if key.ends_with("dispatch") => "greedy",
        "heuristic" if key.ends_with("management") => "threshold",
        other => other,
    };
    serde_json::from_value(serde_json::Value::String(alias.to_string()))
        .map_err(|_| ConfigError::new(key, format!("unknown variant `{name}`")))
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |v: serde_json::Value| v.as_str().unwrap_or("?").to_string();
        write!(
            f,
            "dispatch={},mgmt={},pos={}",
            name(serde_json::to_value(self.dispatch).unwrap_or_default()),
            name(serde_json::to_value(self.management).unwrap_or_default()),
            name(serde_json::to_value(self.positioning).unwrap_or_default()),
        )
    }
}

/// Action parts supplied from outside for aspects marked `External`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalAction {
    pub dispatch: Option<Vec<Assignment>>,
    pub management: Option<ManagementAction>,
    pub positioning: Option<Positioning>,
    pub rejected: Vec<Violation>,
}

impl ExternalAction {
    /// Keeps only the parts (and decode violations) of `aspects`.
    pub fn restricted_to(mut self, aspects: &[Aspect]) -> Self {
        use crate::engine::ViolationReason as R;
        let keep = |a: Aspect| aspects.contains(&a);
        if !keep(Aspect::Dispatch) {
            self.dispatch = None;
        }
        if !keep(Aspect::Management) {
            self.management = None;
        }
        if !keep(Aspect::Positioning) {
            self.positioning = None;
        }
        self.rejected.retain(|v| {
            keep(match v.reason {
                R::InvalidManagementCode | R::OffTurnManagement | R::FireBelowFloor => Aspect::Management,
                R::PositioningMismatch
                | R::InvalidFireTarget
                | R::TargetOutOfGrid
                | R::UnknownWeightFacility
                | R::WeightOutOfRange => Aspect::Positioning,
                _ => Aspect::Dispatch,
            })
        });
        self
    }
}

/// Builds one step's joint action: built-in policies fill every aspect not
/// marked `External`; external parts fill the rest.
///
/// Aspects are decided in order dispatch, management, positioning, all
/// from the policy stream.
pub fn decide(
    spec: &PolicySpec,
    view: &WorldView<'_>,
    rng: &mut ChaCha8Rng,
    management_turn: bool,
    external: ExternalAction,
) -> ActionSet {
    let params = &spec.params;
    let dispatch = match spec.dispatch {
        DispatchPolicy::External => external.dispatch.unwrap_or_default(),
        DispatchPolicy::Greedy => dispatch_greedy(view, params.dispatch_order),
        DispatchPolicy::Stochastic => dispatch_stochastic(view, rng, params.delta),
        DispatchPolicy::Random => dispatch_random(view, rng),
    };
    let management = match spec.management {
        ManagementPolicy::External => external.management.unwrap_or_default(),
        _ if !management_turn => ManagementAction::NoOp,
        ManagementPolicy::None => ManagementAction::NoOp,
        ManagementPolicy::Threshold => manage_threshold(view, rng, params),
        ManagementPolicy::Epsilon => manage_epsilon(view, rng, params),
        ManagementPolicy::Random => manage_random(view, rng),
    };
    let positioning = management.kind().and_then(|(kind, level)| match spec.positioning {
        PositioningPolicy::External => external.positioning.clone(),
        PositioningPolicy::SpatialAverage => {
            let map = demand_map(view, params.alpha);
            position_spatial_average(&map, kind, level, view).map(Positioning::Target)
        }
        PositioningPolicy::Gaussian => {
            let map = demand_map(view, params.alpha);
            position_gaussian(&map, kind, level, view, rng, params.sigma).map(Positioning::Target)
        }
        PositioningPolicy::Random => position_random(kind, level, view, rng).map(Positioning::Target),
    });
    ActionSet {
        dispatch,
        management,
        positioning,
        rejected: external.rejected,
    }
}

/// Index drawn with probability proportional to `weights`, using exactly
/// one uniform; an all-zero (or empty-mass) vector falls back to uniform.
pub(crate) fn sample_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    debug_assert!(!weights.is_empty());
    let u: f64 = rng.random();
    let total: f64 = weights.iter().filter(|w| **w > 0.0).sum();
    if !(total > 0.0) {
        return ((u * weights.len() as f64) as usize).min(weights.len() - 1);
    }
    let mut target = u * total;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        last = i;
        if target < *w {
            return i;
        }
        target -= w;
    }
    last
}
