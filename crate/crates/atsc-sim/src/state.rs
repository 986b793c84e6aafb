//! Mutable simulation state: per-lane vehicle deques, service credits,
//! virtual entry queues, and conservation counters.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;

use crate::topology::{LinkId, Network, Turn};
use crate::vehicle::Vehicle;
use crate::{Result, SimError};

/// Runtime of one lane. The deque is ordered front-to-back: index 0 is the
/// vehicle nearest the stop line. The first `queued` entries are the
/// standing queue (speed 0); everything after is moving at free-flow.
/// Queued vehicle k stands (k+1) × jam-spacing metres from the stop line.
#[derive(Debug, Clone)]
pub struct LaneRuntime {
    pub vehicles: VecDeque<Vehicle>,
    pub queued: usize,
    /// Fractional saturation-service credit. Accrues sat × Δt while the
    /// lane is actively served, pays one whole vehicle per unit, is capped
    /// at 1.0 between steps, and resets to 0 whenever the lane is idle
    /// (red, empty, or its head movement unprotected) — so a burst after
    /// idle time can never exceed sat × Δt + 1 vehicles in one step.
    pub credit: f64,
}

impl LaneRuntime {
    fn new() -> LaneRuntime {
        LaneRuntime {
            vehicles: VecDeque::new(),
            queued: 0,
            credit: 0.0,
        }
    }

    /// Speed of the vehicle at deque index `k` given its link's free-flow.
    pub fn speed_of(&self, k: usize, free_flow: f64) -> f64 {
        if k < self.queued {
            0.0
        } else {
            free_flow
        }
    }
}

/// Virtual waiting room at a boundary entry link. Arrivals that cannot be
/// admitted (their target lane is full) wait here, outside the network;
/// they are not counted as entered until admission, and the head-of-line
/// vehicle's turn draw is staged so blocking never re-consumes randomness.
#[derive(Debug, Clone)]
pub struct EntryRuntime {
    pub link: LinkId,
    pub wait: u64,
    pub staged: Option<Turn>,
}

/// Full simulator state for one episode.
#[derive(Debug, Clone)]
pub struct SimState {
    /// Completed steps since reset; wall time is `clock × Δt` seconds.
    pub clock: u32,
    /// One runtime per lane, indexed by lane id.
    pub lanes: Vec<LaneRuntime>,
    /// One waiting room per entry link, in `Network::entry_links` order.
    pub entries: Vec<EntryRuntime>,
    /// Vehicles admitted into the network since reset.
    pub entered: u64,
    /// Vehicles that left the network since reset.
    pub exited: u64,
    /// Cumulative queued-vehicle-seconds per intersection — the episodic
    /// delay measure.
    pub delay_s: Vec<f64>,
    /// Sum of queued-seconds carried by exited vehicles (cross-check).
    pub exited_queued_delay: f64,
    /// Sum of (travel − free-flow) time over exited vehicles (cross-check).
    pub exited_travel_delay: f64,
    /// Next vehicle id.
    pub next_id: u64,
    pub arrivals_rng: ChaCha8Rng,
    pub turns_rng: ChaCha8Rng,
}

impl SimState {
    pub fn new(net: &Network, arrivals_rng: ChaCha8Rng, turns_rng: ChaCha8Rng) -> SimState {
        SimState {
            clock: 0,
            lanes: (0..net.lanes.len()).map(|_| LaneRuntime::new()).collect(),
            entries: net
                .entry_links
                .iter()
                .map(|&link| EntryRuntime {
                    link,
                    wait: 0,
                    staged: None,
                })
                .collect(),
            entered: 0,
            exited: 0,
            delay_s: vec![0.0; net.n],
            exited_queued_delay: 0.0,
            exited_travel_delay: 0.0,
            next_id: 0,
            arrivals_rng,
            turns_rng,
        }
    }

    /// Vehicles currently inside the network (virtual waiting rooms are
    /// outside). Conservation demands entered == exited + this, exactly.
    pub fn vehicles_in_network(&self) -> u64 {
        self.lanes.iter().map(|l| l.vehicles.len() as u64).sum()
    }

    /// Vehicles standing in queues right now, network-wide.
    pub fn queue_total(&self) -> usize {
        self.lanes.iter().map(|l| l.queued).sum()
    }

    /// Cumulative queued-vehicle-seconds of intersection `i` since reset.
    pub fn intersection_delay(&self, i: usize) -> Result<f64> {
        self.delay_s
            .get(i)
            .copied()
            .ok_or(SimError::UnknownIntersection(i))
    }

    /// Admits one vehicle onto `lane` at the link entry.
    pub(crate) fn admit(&mut self, lane: usize, turn: Turn, freeflow_time: f64) {
        let v = Vehicle {
            id: self.next_id,
            pos: 0.0,
            turn,
            staged_next: None,
            entry_clock: self.clock,
            accumulated_delay: 0.0,
            freeflow_time,
        };
        self.next_id += 1;
        self.entered += 1;
        self.lanes[lane].vehicles.push_back(v);
    }

    /// Records a vehicle leaving the network.
    pub(crate) fn record_exit(&mut self, v: &Vehicle, dt: f64) {
        self.exited += 1;
        self.exited_queued_delay += v.accumulated_delay;
        let travel = (self.clock - v.entry_clock) as f64 * dt;
        self.exited_travel_delay += travel - v.freeflow_time;
    }
}
