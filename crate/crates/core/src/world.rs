use sha2::{Digest, Sha256};

use crate::model::{
    Activity, DistanceMetric, Facility, FacilityId, GridConfig, PendingStaffChange, Personnel,
    PersonnelId, RngStreams, StaffChangeKind, StaffTarget,
};

/// Full simulation state. Entity collections are kept sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub clock: u64,
    pub grid: GridConfig,
    pub facilities: Vec<Facility>,
    pub personnel: Vec<Personnel>,
    pub pending: Vec<PendingStaffChange>,
    pub next_service_arrival: u64,
    pub next_flux: u64,
    pub(crate) next_facility_id: u32,
    pub(crate) next_personnel_id: u32,
    pub rng: RngStreams,
}

impl WorldState {
    pub fn new(grid: GridConfig, seed: u64) -> Self {
        Self {
            clock: 0,
            grid,
            facilities: Vec::new(),
            personnel: Vec::new(),
            pending: Vec::new(),
            next_service_arrival: 0,
            next_flux: 0,
            next_facility_id: 0,
            next_personnel_id: 0,
            rng: RngStreams::from_seed(seed),
        }
    }

    pub fn facility(&self, id: FacilityId) -> Option<&Facility> {
        self.facility_index(id).map(|i| &self.facilities[i])
    }

    pub fn personnel_by_id(&self, id: PersonnelId) -> Option<&Personnel> {
        self.personnel_index(id).map(|i| &self.personnel[i])
    }

    pub(crate) fn facility_index(&self, id: FacilityId) -> Option<usize> {
        self.facilities.binary_search_by_key(&id, |f| f.id).ok()
    }

    pub(crate) fn personnel_index(&self, id: PersonnelId) -> Option<usize> {
        self.personnel.binary_search_by_key(&id, |p| p.id).ok()
    }

    pub(crate) fn personnel_mut(&mut self, id: PersonnelId) -> Option<&mut Personnel> {
        self.personnel_index(id).map(move |i| &mut self.personnel[i])
    }

    pub(crate) fn alloc_facility_id(&mut self) -> FacilityId {
        let id = FacilityId(self.next_facility_id);
        self.next_facility_id += 1;
        id
    }

    pub(crate) fn alloc_personnel_id(&mut self) -> PersonnelId {
        let id = PersonnelId(self.next_personnel_id);
        self.next_personnel_id += 1;
        id
    }

    pub(crate) fn free_facility_slot(&self) -> usize {
        lowest_free(self.facilities.iter().map(|f| f.slot))
    }

    pub(crate) fn free_personnel_slot(&self) -> usize {
        lowest_free(self.personnel.iter().map(|p| p.slot))
    }

    pub fn view(&self, metric: DistanceMetric) -> WorldView<'_> {
        WorldView {
            clock: self.clock,
            grid: self.grid,
            metric,
            facilities: &self.facilities,
            personnel: &self.personnel,
            pending: &self.pending,
        }
    }

    /// Stable digest of the observable state (entities, queue, clocks).
    /// RNG positions are excluded so that replays which skip policy draws
    /// still compare equal.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut put = |v: u64| h.update(v.to_le_bytes());
        put(self.clock);
        put(self.next_service_arrival);
        put(self.next_flux);
        put(self.facilities.len() as u64);
        for f in &self.facilities {
            put(f.id.0 as u64);
            put(f.slot as u64);
            put(f.location.x.to_bits());
            put(f.location.y.to_bits());
            put(f.operational as u64);
            match f.request {
                Some(r) => {
                    put(1 + r.opened_at);
                    put(r.visits as u64);
                }
                None => put(0),
            }
            put(f.assigned_personnel.map_or(u64::MAX, |p| p.0 as u64));
            put(f.downtime.len() as u64);
            put(f.downtime.count() as u64);
            put(f.request_history.count() as u64);
            put(f.next_arrival_at.unwrap_or(u64::MAX));
        }
        put(self.personnel.len() as u64);
        for p in &self.personnel {
            put(p.id.0 as u64);
            put(p.slot as u64);
            put(p.home.x.to_bits());
            put(p.home.y.to_bits());
            put(p.position.x.to_bits());
            put(p.position.y.to_bits());
            put(p.expertise.index() as u64);
            put(p.activity as u64);
            put(p.assigned_facility.map_or(u64::MAX, |f| f.0 as u64));
            put(p.offboarding as u64);
            put(p.service_ends_at.unwrap_or(u64::MAX));
            put(p.utilization.len() as u64);
            put(p.utilization.count() as u64);
        }
        put(self.pending.len() as u64);
        for c in &self.pending {
            put(c.kind as u64);
            put(c.expertise.index() as u64);
            put(c.execute_at);
            match c.target {
                StaffTarget::Location(l) => {
                    put(l.x.to_bits());
                    put(l.y.to_bits());
                }
                StaffTarget::Personnel(id) => put(id.0 as u64),
            }
        }
        let out = h.finalize();
        out[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks the cross-references between personnel and facilities.
    pub fn check_integrity(&self, max_facilities: usize, max_personnel: usize) -> Result<(), String> {
        if self.facilities.len() > max_facilities {
            return Err(format!("{} facilities exceed cap {max_facilities}", self.facilities.len()));
        }
        if self.personnel.len() > max_personnel {
            return Err(format!("{} personnel exceed cap {max_personnel}", self.personnel.len()));
        }
        if !self.facilities.windows(2).all(|w| w[0].id < w[1].id) {
            return Err("facilities not sorted by id".into());
        }
        if !self.personnel.windows(2).all(|w| w[0].id < w[1].id) {
            return Err("personnel not sorted by id".into());
        }
        for p in &self.personnel {
            if !self.grid.contains(p.position) || !self.grid.contains(p.home) {
                return Err(format!("{} outside grid", p.id));
            }
            match (p.activity, p.assigned_facility) {
                (Activity::Idle, Some(_)) | (Activity::TravelingHome, Some(_)) => {
                    return Err(format!("{} holds an assignment while {:?}", p.id, p.activity));
                }
                (Activity::TravelingToFacility, None) | (Activity::Servicing, None) => {
                    return Err(format!("{} is {:?} without an assignment", p.id, p.activity));
                }
                (Activity::Idle, None) if p.position != p.home => {
                    return Err(format!("{} idle away from home", p.id));
                }
                _ => {}
            }
            if let Some(fid) = p.assigned_facility {
                let Some(f) = self.facility(fid) else {
                    return Err(format!("{} assigned to missing {fid}", p.id));
                };
                if f.assigned_personnel != Some(p.id) {
                    return Err(format!("{fid} does not point back to {}", p.id));
                }
            }
        }
        for f in &self.facilities {
            if !self.grid.contains(f.location) {
                return Err(format!("{} outside grid", f.id));
            }
            if f.request.is_some() && !f.operational {
                return Err(format!("{} has a request while not operational", f.id));
            }
            if let Some(pid) = f.assigned_personnel {
                if f.request.is_none() {
                    return Err(format!("{} assigned without a request", f.id));
                }
                match self.personnel_by_id(pid) {
                    Some(p) if p.assigned_facility == Some(f.id) => {}
                    _ => return Err(format!("{} points to {pid} which does not point back", f.id)),
                }
            }
        }
        let mut slots: Vec<usize> = self.facilities.iter().map(|f| f.slot).collect();
        slots.sort_unstable();
        if slots.windows(2).any(|w| w[0] == w[1]) || slots.last().is_some_and(|s| *s >= max_facilities) {
            return Err("facility slots collide or overflow".into());
        }
        let mut slots: Vec<usize> = self.personnel.iter().map(|p| p.slot).collect();
        slots.sort_unstable();
        if slots.windows(2).any(|w| w[0] == w[1]) || slots.last().is_some_and(|s| *s >= max_personnel) {
            return Err("personnel slots collide or overflow".into());
        }
        Ok(())
    }
}

fn lowest_free(used: impl Iterator<Item = usize>) -> usize {
    let mut used: Vec<usize> = used.collect();
    used.sort_unstable();
    let mut slot = 0;
    for u in used {
        if u == slot {
            slot += 1;
        } else if u > slot {
            break;
        }
    }
    slot
}

/// Read-only view handed to policies.
#[derive(Debug, Clone, Copy)]
pub struct WorldView<'a> {
    pub clock: u64,
    pub grid: GridConfig,
    pub metric: DistanceMetric,
    pub facilities: &'a [Facility],
    pub personnel: &'a [Personnel],
    pub pending: &'a [PendingStaffChange],
}

impl<'a> WorldView<'a> {
    pub fn facility(&self, id: FacilityId) -> Option<&'a Facility> {
        self.facilities
            .binary_search_by_key(&id, |f| f.id)
            .ok()
            .map(|i| &self.facilities[i])
    }

    pub fn personnel_by_id(&self, id: PersonnelId) -> Option<&'a Personnel> {
        self.personnel
            .binary_search_by_key(&id, |p| p.id)
            .ok()
            .map(|i| &self.personnel[i])
    }

    /// Mean windowed utilization over employed personnel.
    pub fn pur_mean(&self) -> f64 {
        if self.personnel.is_empty() {
            return 0.0;
        }
        self.personnel.iter().map(|p| p.utilization.ratio()).sum::<f64>()
            / self.personnel.len() as f64
    }

    pub fn is_pending_fire(&self, id: PersonnelId) -> bool {
        self.pending.iter().any(|c| {
            c.kind == StaffChangeKind::Fire && c.target == StaffTarget::Personnel(id)
        })
    }

    /// Personnel a new fire may still target.
    pub fn fire_candidates(&self) -> impl Iterator<Item = &'a Personnel> + '_ {
        self.personnel
            .iter()
            .filter(move |p| !p.offboarding && !self.is_pending_fire(p.id))
    }

    /// Headcount once every queued or in-progress fire has completed.
    pub fn retained_headcount(&self) -> usize {
        self.fire_candidates().count()
    }

    /// Open requests nobody is assigned to, oldest first (ties by id).
    pub fn open_requests(&self) -> Vec<&'a Facility> {
        let mut open: Vec<&Facility> = self.facilities.iter().filter(|f| f.awaiting_dispatch()).collect();
        open.sort_by_key(|f| (f.request.map_or(0, |r| r.opened_at), f.id));
        open
    }

    pub fn available_personnel(&self) -> Vec<&'a Personnel> {
        self.personnel.iter().filter(|p| p.is_available()).collect()
    }
}
