//! Non-learning baseline controllers: fixed-time plans and gap-out
//! semi-actuated control.
//!
//! Both produce a *desired* phase; the environment's valid-action mask has
//! final authority, so callers project the desired phase through the mask
//! with [`project_to_mask`] before stepping. This keeps baselines under
//! exactly the same timing constraints as learning agents.

use crate::signal::{IntervalKind, PhaseScheme, SignalInterval};
use crate::topology::Network;
use crate::{Result, SimError};

/// A cyclic fixed-time plan: ordered (phase, duration) entries plus an
/// offset shifting the cycle start.
#[derive(Debug, Clone)]
pub struct FixedTimePlan {
    pub entries: Vec<(usize, f64)>,
    pub offset: f64,
}

impl FixedTimePlan {
    pub fn new(entries: Vec<(usize, f64)>) -> FixedTimePlan {
        FixedTimePlan {
            entries,
            offset: 0.0,
        }
    }

    pub fn cycle(&self) -> f64 {
        self.entries.iter().map(|(_, d)| d).sum()
    }
}

/// Phase scheduled at `clock` seconds: pure modular lookup.
pub fn fixed_time_phase(plan: &FixedTimePlan, clock: f64) -> Result<usize> {
    if plan.entries.is_empty() {
        return Err(SimError::EmptyPlan);
    }
    if let Some(&(_, bad)) = plan.entries.iter().find(|(_, d)| *d <= 0.0) {
        return Err(SimError::BadConfig(format!(
            "fixed-time plan entry has non-positive duration {bad}"
        )));
    }
    let cycle = plan.cycle();
    let mut t = (clock + plan.offset) % cycle;
    if t < 0.0 {
        t += cycle;
    }
    for &(phase, dur) in &plan.entries {
        if t < dur {
            return Ok(phase);
        }
        t -= dur;
    }
    // Floating-point edge: t landed exactly on the cycle boundary.
    Ok(plan.entries[0].0)
}

/// Projects a desired phase through the current valid-action mask: the
/// desire wins when legal, otherwise the lowest-index valid phase (which is
/// the pinned pending phase during transitions and the held current phase
/// under min-green).
pub fn project_to_mask(desired: usize, mask: &[bool]) -> usize {
    if desired < mask.len() && mask[desired] {
        return desired;
    }
    mask.iter()
        .position(|&b| b)
        .expect("valid-action masks are never all-false")
}

/// Gap-out state for one semi-actuated intersection: the last clock at
/// which the currently green phase registered demand.
#[derive(Debug, Clone)]
pub struct ActuatedState {
    pub last_demand_clock: f64,
}

impl ActuatedState {
    pub fn new() -> ActuatedState {
        ActuatedState {
            last_demand_clock: 0.0,
        }
    }
}

impl Default for ActuatedState {
    fn default() -> Self {
        Self::new()
    }
}

/// True when any sensed lane of intersection `i` feeds a movement the
/// phase protects — the phase "has demand".
fn phase_has_demand(
    net: &Network,
    scheme: &PhaseScheme,
    i: usize,
    phase: usize,
    sensed_counts: &[f64],
) -> bool {
    let lanes = net.incoming_lanes(i);
    debug_assert_eq!(lanes.len(), sensed_counts.len());
    for (k, &lane) in lanes.iter().enumerate() {
        if sensed_counts[k] <= 0.0 {
            continue;
        }
        let approach = net.links[net.lanes[lane].link].approach;
        if net.lanes[lane]
            .turns
            .iter()
            .any(|&t| scheme.protects(phase, (approach, t)))
        {
            return true;
        }
    }
    false
}

/// Semi-actuated gap-out controller. Extends the current green while its
/// movements keep registering sensed demand within `gap` seconds (and
/// max-green has not elapsed); on gap-out it requests the next phase with
/// demand in cyclic order, defaulting to the recall phase when the whole
/// intersection is quiet.
///
/// `sensed_counts` are the per-lane vehicle counts of intersection `i` in
/// observation order, i.e. exactly what the detection range reports.
#[allow(clippy::too_many_arguments)]
pub fn actuated_controller(
    iv: &SignalInterval,
    net: &Network,
    scheme: &PhaseScheme,
    i: usize,
    sensed_counts: &[f64],
    clock: f64,
    gap: f64,
    recall_phase: usize,
    state: &mut ActuatedState,
) -> usize {
    if iv.kind != IntervalKind::Green {
        return iv.pending.expect("transition carries a pending phase");
    }
    if phase_has_demand(net, scheme, i, iv.phase, sensed_counts) {
        state.last_demand_clock = clock;
    }
    let gapped_out = clock - state.last_demand_clock >= gap;
    if !gapped_out && iv.elapsed < scheme.max_green {
        return iv.phase;
    }
    let n = scheme.n_phases();
    for step in 1..n {
        let candidate = (iv.phase + step) % n;
        if phase_has_demand(net, scheme, i, candidate, sensed_counts) {
            return candidate;
        }
    }
    recall_phase
}
