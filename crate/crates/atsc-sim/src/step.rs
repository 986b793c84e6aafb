//! The simulation step: two-regime kinematics, saturation-credit queue
//! discharge, spillback, boundary arrivals, and delay accrual.
//!
//! Substep order within one Δt (signals have already been advanced by the
//! caller, so the post-advance interval is what traffic sees):
//!
//! 1. **Advance** every moving vehicle by free-flow × Δt. A vehicle
//!    reaching the back of its lane's queue joins it; a vehicle reaching
//!    the stop line with an *empty* queue under a protecting green crosses
//!    without stopping (free pass), entering the downstream link at its
//!    entry or leaving the network.
//! 2. **Discharge** standing queues at saturation rate via fractional
//!    credits, head-first, subject to downstream storage (spillback) and
//!    phase protection of the head vehicle's movement.
//! 3. **Arrivals** at boundary entries (Poisson or periodic), admitted
//!    through per-link virtual waiting rooms so a full lane delays rather
//!    than drops demand.
//! 4. **Accrual**: every vehicle still queued collects Δt of delay and Δt
//!    of queued-vehicle-seconds for its intersection; the clock advances.
//!
//! Randomness: arrival counts come from the arrivals stream; turning
//! movements come from the turns stream, drawn once per vehicle per link
//! (staged under blocking, so a blocked discharge never re-rolls).

use rand::RngCore;

use crate::arrivals::{arrival_count, DemandSpec};
use crate::signal::{IntervalKind, PhaseScheme, SignalInterval};
use crate::state::SimState;
use crate::topology::{Approach, LaneId, Network, Turn};
use crate::vehicle::Vehicle;

/// Uniform draw in [0, 1) with 53-bit resolution.
fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Samples a turning movement from `[left, through, right]` fractions.
fn draw_turn(rng: &mut impl RngCore, ratios: [f64; 3]) -> Turn {
    let u = uniform(rng);
    if u < ratios[0] {
        Turn::Left
    } else if u < ratios[0] + ratios[1] {
        Turn::Through
    } else {
        Turn::Right
    }
}

/// Storage admission: can `lane` take one more vehicle (plus `pending`
/// already-committed entrants this substep) without its occupancy
/// exceeding link length at jam spacing?
fn has_room(state: &SimState, net: &Network, lane: LaneId, pending: usize) -> bool {
    let link = &net.links[net.lanes[lane].link];
    (state.lanes[lane].vehicles.len() + pending + 1) as f64 * net.jam_spacing <= link.length
}

/// Whether the signal currently protects `(approach, turn)` at
/// intersection `i` — i.e. the interval is green and the phase serves it.
fn is_protected(iv: &SignalInterval, scheme: &PhaseScheme, approach: Approach, turn: Turn) -> bool {
    iv.kind == IntervalKind::Green && scheme.protects(iv.phase, (approach, turn))
}

/// Advances the world by one step. `signals` must already reflect this
/// step (apply actions, then advance intervals, then call this).
pub fn step_sim(
    state: &mut SimState,
    net: &Network,
    scheme: &PhaseScheme,
    signals: &[SignalInterval],
    demand: &DemandSpec,
    dt: f64,
) {
    debug_assert_eq!(signals.len(), net.n);
    let jam = net.jam_spacing;

    // ---- substep 1: advance movers (joins, free passes) ----------------
    // Cross-lane transfers are buffered so a vehicle never advances twice
    // in one step; all entrants land at position 0, so deques stay ordered.
    let mut transfers: Vec<Vec<Vehicle>> = vec![Vec::new(); net.lanes.len()];
    let mut pending: Vec<usize> = vec![0; net.lanes.len()];

    for lane in 0..net.lanes.len() {
        let link_id = net.lanes[lane].link;
        let (to, approach, length, free_flow) = {
            let l = &net.links[link_id];
            (l.to, l.approach, l.length, l.free_flow)
        };
        let mut k = state.lanes[lane].queued;
        while k < state.lanes[lane].vehicles.len() {
            let new_pos = state.lanes[lane].vehicles[k].pos + free_flow * dt;
            let queued_now = state.lanes[lane].queued;
            let join_limit = length - (queued_now as f64 + 1.0) * jam;

            // Free pass: empty queue, stop line reached, movement green.
            if queued_now == 0 && new_pos >= length {
                let turn = state.lanes[lane].vehicles[k].turn;
                if is_protected(&signals[to], scheme, approach, turn) {
                    match net.route_target(to, approach, turn) {
                        None => {
                            let v = state.lanes[lane].vehicles.remove(k).unwrap();
                            state.record_exit(&v, dt);
                            continue;
                        }
                        Some(target_link) => {
                            if state.lanes[lane].vehicles[k].staged_next.is_none() {
                                let tl = &net.links[target_link];
                                let ratios = net.ratios(tl.to, tl.approach);
                                let next = draw_turn(&mut state.turns_rng, ratios);
                                state.lanes[lane].vehicles[k].staged_next = Some(next);
                            }
                            let next = state.lanes[lane].vehicles[k].staged_next.unwrap();
                            let tgt_lane = net.lane_for_turn(target_link, next);
                            if has_room(state, net, tgt_lane, pending[tgt_lane]) {
                                let mut v = state.lanes[lane].vehicles.remove(k).unwrap();
                                let tl = &net.links[target_link];
                                v.pos = 0.0;
                                v.turn = next;
                                v.staged_next = None;
                                v.freeflow_time += tl.length / tl.free_flow;
                                pending[tgt_lane] += 1;
                                transfers[tgt_lane].push(v);
                                continue;
                            }
                            // Downstream full: fall through and stop at the line.
                        }
                    }
                }
                // Red, unprotected movement, or blocked: fall through.
            }

            if new_pos >= join_limit {
                // Join the standing queue. Only the frontmost mover can
                // cross the limit (uniform speeds preserve ordering), so it
                // absorbs into the queue prefix in place.
                debug_assert_eq!(k, queued_now);
                let lane_rt = &mut state.lanes[lane];
                lane_rt.vehicles[k].pos = join_limit;
                lane_rt.queued += 1;
            } else {
                state.lanes[lane].vehicles[k].pos = new_pos;
            }
            k += 1;
        }
    }
    for (lane, arrivals) in transfers.into_iter().enumerate() {
        for v in arrivals {
            state.lanes[lane].vehicles.push_back(v);
        }
    }

    // ---- substep 2: queue discharge under green ------------------------
    for i in 0..net.n {
        let iv = &signals[i];
        for approach in Approach::ALL {
            let link_id = net.incoming[i][approach.index()];
            let (length, sat) = (net.links[link_id].length, net.sat_flow);
            for &lane in &net.links[link_id].lanes {
                let head_served = state.lanes[lane].queued > 0 && {
                    let head_turn = state.lanes[lane].vehicles[0].turn;
                    is_protected(iv, scheme, approach, head_turn)
                };
                if !head_served {
                    // Idle lane (red, empty, or blocked head movement):
                    // stored service evaporates.
                    state.lanes[lane].credit = 0.0;
                    continue;
                }
                state.lanes[lane].credit += sat * dt;
                let mut served = 0usize;
                loop {
                    if state.lanes[lane].credit < 1.0 || state.lanes[lane].queued == 0 {
                        break;
                    }
                    let head_turn = state.lanes[lane].vehicles[0].turn;
                    if !scheme.protects(iv.phase, (approach, head_turn)) {
                        break; // a newly exposed head turns an unserved way
                    }
                    match net.route_target(i, approach, head_turn) {
                        None => {
                            let v = state.lanes[lane].vehicles.pop_front().unwrap();
                            state.lanes[lane].queued -= 1;
                            state.lanes[lane].credit -= 1.0;
                            state.record_exit(&v, dt);
                            served += 1;
                        }
                        Some(target_link) => {
                            if state.lanes[lane].vehicles[0].staged_next.is_none() {
                                let tl = &net.links[target_link];
                                let ratios = net.ratios(tl.to, tl.approach);
                                let next = draw_turn(&mut state.turns_rng, ratios);
                                state.lanes[lane].vehicles[0].staged_next = Some(next);
                            }
                            let next = state.lanes[lane].vehicles[0].staged_next.unwrap();
                            let tgt_lane = net.lane_for_turn(target_link, next);
                            if !has_room(state, net, tgt_lane, 0) {
                                break; // spillback: hold the head, keep its draw
                            }
                            let mut v = state.lanes[lane].vehicles.pop_front().unwrap();
                            state.lanes[lane].queued -= 1;
                            state.lanes[lane].credit -= 1.0;
                            let tl = &net.links[target_link];
                            v.pos = 0.0;
                            v.turn = next;
                            v.staged_next = None;
                            v.freeflow_time += tl.length / tl.free_flow;
                            state.lanes[tgt_lane].vehicles.push_back(v);
                            served += 1;
                        }
                    }
                }
                if served > 0 {
                    // Survivors close up to the stop line instantly.
                    let lane_rt = &mut state.lanes[lane];
                    for k in 0..lane_rt.queued {
                        lane_rt.vehicles[k].pos = length - (k as f64 + 1.0) * jam;
                    }
                }
                let lane_rt = &mut state.lanes[lane];
                if lane_rt.queued == 0 {
                    lane_rt.credit = 0.0;
                } else {
                    lane_rt.credit = lane_rt.credit.min(1.0);
                }
            }
        }
    }

    // ---- substep 3: boundary arrivals ----------------------------------
    let t_now = state.clock as f64 * dt;
    for e in 0..state.entries.len() {
        let link_id = state.entries[e].link;
        let (to, approach, length, free_flow, lanes_n, class) = {
            let l = &net.links[link_id];
            (
                l.to,
                l.approach,
                l.length,
                l.free_flow,
                l.lanes.len(),
                l.entry_class.expect("entry links carry a demand class"),
            )
        };
        let rate = demand.rate_for(class, t_now);
        let fresh = arrival_count(
            demand.model,
            &mut state.arrivals_rng,
            rate,
            lanes_n,
            state.clock,
            dt,
        );
        state.entries[e].wait += fresh as u64;
        while state.entries[e].wait > 0 {
            if state.entries[e].staged.is_none() {
                let turn = draw_turn(&mut state.turns_rng, net.ratios(to, approach));
                state.entries[e].staged = Some(turn);
            }
            let turn = state.entries[e].staged.unwrap();
            let lane = net.lane_for_turn(link_id, turn);
            if !has_room(state, net, lane, 0) {
                break; // waits outside the network, turn draw kept
            }
            state.entries[e].staged = None;
            state.entries[e].wait -= 1;
            state.admit(lane, turn, length / free_flow);
        }
    }

    // ---- substep 4: delay accrual and clock -----------------------------
    for lane in 0..net.lanes.len() {
        let q = state.lanes[lane].queued;
        if q == 0 {
            continue;
        }
        let i = net.links[net.lanes[lane].link].to;
        state.delay_s[i] += q as f64 * dt;
        let lane_rt = &mut state.lanes[lane];
        for k in 0..q {
            lane_rt.vehicles[k].accumulated_delay += dt;
        }
    }
    state.clock += 1;
}
