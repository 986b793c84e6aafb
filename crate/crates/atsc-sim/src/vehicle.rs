//! The vehicle record carried through the network.

use crate::topology::Turn;

/// One vehicle. Speed is not stored: under the two-regime model it is 0 for
/// queued vehicles (deque index < the lane's queued count) and the link's
/// free-flow speed otherwise.
#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: u64,
    /// Metres from the entry of the current link.
    pub pos: f64,
    /// Movement this vehicle will take at the end of its current link,
    /// drawn when it entered the link.
    pub turn: Turn,
    /// Movement at the end of the *next* link, drawn on the first crossing
    /// attempt and kept while downstream blocking holds the vehicle back,
    /// so a blocked discharge never re-rolls the dice.
    pub staged_next: Option<Turn>,
    /// Simulation clock (steps) when the vehicle was admitted.
    pub entry_clock: u32,
    /// Seconds spent standing in queues; non-decreasing.
    pub accumulated_delay: f64,
    /// Free-flow traversal time of every link segment this vehicle has
    /// entered, used for the travel-minus-free-flow cross-check at exit.
    pub freeflow_time: f64,
}
