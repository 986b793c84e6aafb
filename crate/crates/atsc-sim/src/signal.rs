//! Signal phase interval machine: green/yellow/all-red sequencing with
//! min/max green realized through valid-action masks.
//!
//! Timing contract: within one control step the caller first applies the
//! agent's action ([`apply_action`]), then advances the machine by Δt
//! ([`advance_interval`]), then runs the traffic step, so the simulator
//! always sees the post-advance interval. `advance_interval` completes an
//! interval *before* accumulating the new step: a yellow of 3 s is visible
//! to traffic for exactly 3 steps (elapsed 1, 2, 3), then the all-red for
//! its full duration, so a change blocks service for exactly
//! yellow + all-red seconds and pins the mask for the same 5 steps under
//! the default 3 s + 2 s timings.

use crate::topology::{Approach, Turn};
use crate::{Result, SimError};

/// A movement is an (approach, turn) pair at one intersection.
pub type Movement = (Approach, Turn);

/// What the signal head shows for the interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalKind {
    Green,
    Yellow,
    AllRed,
}

/// One phase: a named set of protected (simultaneously green) movements.
#[derive(Debug, Clone)]
pub struct PhaseSpec {
    pub name: String,
    pub protected: Vec<Movement>,
}

/// Which phase-to-phase transitions the controller may request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionMatrix {
    /// Any phase may follow any other.
    All,
    /// Phase i may only be followed by phase (i+1) mod n — a restricted
    /// stand-in for ring-and-barrier ordering.
    Cyclic,
}

/// Per-intersection phase scheme and interval timings.
#[derive(Debug, Clone)]
pub struct PhaseScheme {
    pub phases: Vec<PhaseSpec>,
    /// `allowed[i][j]` = a change from phase i to phase j may be requested.
    /// The diagonal is always true (EXTEND is always representable).
    pub allowed: Vec<Vec<bool>>,
    pub min_green: f64,
    pub max_green: f64,
    pub yellow: f64,
    pub all_red: f64,
}

/// Geometric conflict between two movements, simplified for a 4-leg
/// intersection with right-hand driving:
///
/// * movements from the same approach never conflict;
/// * right turns never conflict (merges are not crossings);
/// * between opposite approaches, only left vs. through crosses;
/// * between perpendicular approaches, every left/through pairing crosses.
pub fn conflicts(a: Movement, b: Movement) -> bool {
    let (aa, at) = a;
    let (ba, bt) = b;
    if aa == ba {
        return false;
    }
    if at == Turn::Right || bt == Turn::Right {
        return false;
    }
    if aa == ba.opposite() {
        // through/through and left/left glide past each other head-on.
        at != bt
    } else {
        true
    }
}

fn build_allowed(n: usize, matrix: TransitionMatrix) -> Vec<Vec<bool>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| match matrix {
                    TransitionMatrix::All => true,
                    TransitionMatrix::Cyclic => j == i || j == (i + 1) % n,
                })
                .collect()
        })
        .collect()
}

/// Interval timing knobs shared by the scheme constructors.
#[derive(Debug, Clone, Copy)]
pub struct Timings {
    pub min_green: f64,
    pub max_green: f64,
    pub yellow: f64,
    pub all_red: f64,
}

impl Default for Timings {
    fn default() -> Self {
        Timings {
            min_green: 10.0,
            max_green: 60.0,
            yellow: 3.0,
            all_red: 2.0,
        }
    }
}

impl PhaseScheme {
    /// Four combined phases: NS-through, NS-left, EW-through, EW-left.
    /// Right turns ride with the through phases.
    pub fn four_phase(t: Timings, matrix: TransitionMatrix) -> PhaseScheme {
        use Approach::*;
        use Turn::*;
        let phases = vec![
            PhaseSpec {
                name: "NS-through".into(),
                protected: vec![(N, Through), (N, Right), (S, Through), (S, Right)],
            },
            PhaseSpec {
                name: "NS-left".into(),
                protected: vec![(N, Left), (S, Left)],
            },
            PhaseSpec {
                name: "EW-through".into(),
                protected: vec![(E, Through), (E, Right), (W, Through), (W, Right)],
            },
            PhaseSpec {
                name: "EW-left".into(),
                protected: vec![(E, Left), (W, Left)],
            },
        ];
        let allowed = build_allowed(phases.len(), matrix);
        PhaseScheme {
            phases,
            allowed,
            min_green: t.min_green,
            max_green: t.max_green,
            yellow: t.yellow,
            all_red: t.all_red,
        }
    }

    /// Two phases: NS and EW, serving through + right only. Left-turn
    /// demand cannot be served under this scheme; the environment rejects
    /// configs that pair it with non-zero left ratios.
    pub fn two_phase(t: Timings, matrix: TransitionMatrix) -> PhaseScheme {
        use Approach::*;
        use Turn::*;
        let phases = vec![
            PhaseSpec {
                name: "NS".into(),
                protected: vec![(N, Through), (N, Right), (S, Through), (S, Right)],
            },
            PhaseSpec {
                name: "EW".into(),
                protected: vec![(E, Through), (E, Right), (W, Through), (W, Right)],
            },
        ];
        let allowed = build_allowed(phases.len(), matrix);
        PhaseScheme {
            phases,
            allowed,
            min_green: t.min_green,
            max_green: t.max_green,
            yellow: t.yellow,
            all_red: t.all_red,
        }
    }

    pub fn n_phases(&self) -> usize {
        self.phases.len()
    }

    /// Whether `phase` allows `movement` to discharge.
    pub fn protects(&self, phase: usize, movement: Movement) -> bool {
        self.phases[phase].protected.contains(&movement)
    }

    /// Whether any phase serves `movement` (used to reject configs whose
    /// demand could never discharge).
    pub fn serves(&self, movement: Movement) -> bool {
        (0..self.phases.len()).any(|p| self.protects(p, movement))
    }

    /// Structural validation: timing bounds, diagonal transitions, and the
    /// pairwise conflict table within every phase.
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(SimError::BadConfig("scheme has no phases".into()));
        }
        if self.min_green > self.max_green {
            return Err(SimError::BadConfig(format!(
                "min-green {} exceeds max-green {}",
                self.min_green, self.max_green
            )));
        }
        if self.yellow <= 0.0 {
            return Err(SimError::BadConfig("yellow duration must be > 0".into()));
        }
        if self.all_red < 0.0 {
            return Err(SimError::BadConfig("all-red duration must be >= 0".into()));
        }
        if self.allowed.len() != self.phases.len()
            || self.allowed.iter().any(|r| r.len() != self.phases.len())
        {
            return Err(SimError::BadConfig(
                "transition matrix shape does not match phase count".into(),
            ));
        }
        for (i, row) in self.allowed.iter().enumerate() {
            if !row[i] {
                return Err(SimError::BadConfig(format!(
                    "phase {i} cannot extend itself (diagonal must be true)"
                )));
            }
        }
        for (pi, phase) in self.phases.iter().enumerate() {
            for (k, &a) in phase.protected.iter().enumerate() {
                for &b in &phase.protected[k + 1..] {
                    if conflicts(a, b) {
                        return Err(SimError::BadConfig(format!(
                            "phase {pi} ({}) greens conflicting movements {}-{} and {}-{}",
                            phase.name,
                            a.0.name(),
                            a.1.name(),
                            b.0.name(),
                            b.1.name()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// The live interval of one intersection's controller.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalInterval {
    pub phase: usize,
    pub kind: IntervalKind,
    /// Seconds of this interval elapsed through the end of the current
    /// step (post-advance).
    pub elapsed: f64,
    /// Target of an in-progress change; set iff kind is yellow or all-red.
    pub pending: Option<usize>,
}

impl SignalInterval {
    /// Fresh controller: green on `phase`, nothing elapsed.
    pub fn start(phase: usize) -> SignalInterval {
        SignalInterval {
            phase,
            kind: IntervalKind::Green,
            elapsed: 0.0,
            pending: None,
        }
    }

    /// True while a change is being served (yellow or all-red).
    pub fn in_transition(&self) -> bool {
        self.kind != IntervalKind::Green
    }

    /// The phase the one-hot observation should mark: the pending target
    /// during a transition, else the current phase.
    pub fn display_phase(&self) -> usize {
        self.pending.unwrap_or(self.phase)
    }
}

/// Mask of phases an agent may legally request right now. Never all-false:
/// transitions pin the pending phase, min-green pins the current phase,
/// max-green excludes the current phase (falling back to it only if the
/// transition matrix offers no alternative).
pub fn valid_actions(iv: &SignalInterval, scheme: &PhaseScheme) -> Vec<bool> {
    let n = scheme.n_phases();
    let mut mask = vec![false; n];
    match iv.kind {
        IntervalKind::Yellow | IntervalKind::AllRed => {
            mask[iv.pending.expect("transition carries a pending phase")] = true;
        }
        IntervalKind::Green => {
            if iv.elapsed < scheme.min_green {
                mask[iv.phase] = true;
            } else if iv.elapsed >= scheme.max_green {
                for (j, m) in mask.iter_mut().enumerate() {
                    *m = j != iv.phase && scheme.allowed[iv.phase][j];
                }
                if !mask.iter().any(|&b| b) {
                    mask[iv.phase] = true;
                }
            } else {
                for (j, m) in mask.iter_mut().enumerate() {
                    *m = j == iv.phase || scheme.allowed[iv.phase][j];
                }
            }
        }
    }
    mask
}

/// Applies an agent action: EXTEND (action == current) keeps the green
/// running; CHANGE starts a yellow toward the action. During a transition
/// only the pending phase is legal and applying it is a no-op. An action
/// outside the current mask is a contract violation.
pub fn apply_action(iv: &mut SignalInterval, action: usize, scheme: &PhaseScheme) -> Result<()> {
    let mask = valid_actions(iv, scheme);
    if action >= mask.len() || !mask[action] {
        return Err(SimError::InvalidAction {
            agent: usize::MAX,
            action,
            detail: format!(
                "interval {:?} phase {} elapsed {}",
                iv.kind, iv.phase, iv.elapsed
            ),
        });
    }
    if iv.kind == IntervalKind::Green && action != iv.phase {
        iv.kind = IntervalKind::Yellow;
        iv.elapsed = 0.0;
        iv.pending = Some(action);
    }
    Ok(())
}

/// Advances the machine by Δt. Completed yellow/all-red intervals flip
/// before the new step accumulates (see the module docs for the timing
/// contract); greens never auto-expire — max-green is enforced by the mask.
pub fn advance_interval(iv: &mut SignalInterval, dt: f64, scheme: &PhaseScheme) {
    loop {
        match iv.kind {
            IntervalKind::Green => break,
            IntervalKind::Yellow => {
                if iv.elapsed >= scheme.yellow {
                    iv.kind = IntervalKind::AllRed;
                    iv.elapsed = 0.0;
                } else {
                    break;
                }
            }
            IntervalKind::AllRed => {
                if iv.elapsed >= scheme.all_red {
                    iv.phase = iv.pending.take().expect("all-red carries a pending phase");
                    iv.kind = IntervalKind::Green;
                    iv.elapsed = 0.0;
                } else {
                    break;
                }
            }
        }
    }
    iv.elapsed += dt;
}
