//! Corridor network topology: directed links, lanes, turn ratios, routing.
//!
//! The builder produces a north–south main street with `n` signalized
//! intersections (indexed 0 at the north end) and east/west side-street
//! stubs at every intersection. Every link in the model is an *incoming*
//! link terminating at an intersection; traffic that turns onto a direction
//! with no downstream intersection leaves the network at the stop line.

use crate::{Result, SimError};

/// Compass approach of a link at its downstream intersection: the side the
/// traffic arrives from. A vehicle on the `N` approach is heading south.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Approach {
    N,
    E,
    S,
    W,
}

impl Approach {
    /// Fixed observation/processing order.
    pub const ALL: [Approach; 4] = [Approach::N, Approach::E, Approach::S, Approach::W];

    pub fn index(self) -> usize {
        match self {
            Approach::N => 0,
            Approach::E => 1,
            Approach::S => 2,
            Approach::W => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Approach::N => "N",
            Approach::E => "E",
            Approach::S => "S",
            Approach::W => "W",
        }
    }

    /// The approach facing this one across the intersection.
    pub fn opposite(self) -> Approach {
        match self {
            Approach::N => Approach::S,
            Approach::S => Approach::N,
            Approach::E => Approach::W,
            Approach::W => Approach::E,
        }
    }
}

/// Turning movement a vehicle executes at the stop line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Turn {
    Left,
    Through,
    Right,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Left, Turn::Through, Turn::Right];

    pub fn index(self) -> usize {
        match self {
            Turn::Left => 0,
            Turn::Through => 1,
            Turn::Right => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Turn::Left => "left",
            Turn::Through => "through",
            Turn::Right => "right",
        }
    }
}

/// Compass side a movement exits on. Derived from right-hand driving
/// geometry: e.g. a vehicle arriving from the north (heading south) exits
/// east on a left turn, south on a through movement, west on a right turn.
pub fn exit_side(approach: Approach, turn: Turn) -> Approach {
    use Approach::*;
    use Turn::*;
    match (approach, turn) {
        (N, Left) => E,
        (N, Through) => S,
        (N, Right) => W,
        (S, Left) => W,
        (S, Through) => N,
        (S, Right) => E,
        (E, Left) => S,
        (E, Through) => W,
        (E, Right) => N,
        (W, Left) => N,
        (W, Through) => E,
        (W, Right) => S,
    }
}

pub type LinkId = usize;
pub type LaneId = usize;

/// Demand class of a boundary entry link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemandClass {
    /// Corridor ends of the main street (north entry of intersection 0,
    /// south entry of the last intersection).
    Main,
    /// East/west side-street stubs.
    Side,
}

/// A directed link terminating at an intersection.
#[derive(Debug, Clone)]
pub struct Link {
    pub id: LinkId,
    /// Downstream intersection this link feeds.
    pub to: usize,
    /// Which side of `to` the traffic arrives from.
    pub approach: Approach,
    /// Upstream intersection, or `None` for a boundary entry.
    pub from: Option<usize>,
    pub length: f64,
    pub free_flow: f64,
    /// Lane ids in slot order (0 = leftmost).
    pub lanes: Vec<LaneId>,
    /// Set iff this is a boundary entry link.
    pub entry_class: Option<DemandClass>,
}

/// One lane of a link and the turning movements it serves.
#[derive(Debug, Clone)]
pub struct Lane {
    pub id: LaneId,
    pub link: LinkId,
    /// Slot within the link, 0 = leftmost.
    pub slot: usize,
    pub turns: Vec<Turn>,
}

/// Validated corridor network.
#[derive(Debug, Clone)]
pub struct Network {
    /// Number of signalized intersections, north to south.
    pub n: usize,
    pub links: Vec<Link>,
    pub lanes: Vec<Lane>,
    /// Incoming link per intersection, indexed `[intersection][approach]`.
    pub incoming: Vec<[LinkId; 4]>,
    /// Internal outgoing link per exit side, `None` where traffic leaves
    /// the network. Indexed `[intersection][exit side]`.
    pub outgoing: Vec<[Option<LinkId>; 4]>,
    /// Turn fractions, indexed `[intersection][approach][turn]`.
    pub turn_ratios: Vec<[[f64; 3]; 4]>,
    /// Stopped-vehicle spacing, m/veh (shared by all lanes).
    pub jam_spacing: f64,
    /// Queue discharge capacity, veh/s per lane.
    pub sat_flow: f64,
    /// Boundary entry links in deterministic order.
    pub entry_links: Vec<LinkId>,
}

/// Parameters for the corridor builder.
#[derive(Debug, Clone)]
pub struct CorridorConfig {
    pub intersections: usize,
    pub link_length: f64,
    pub free_flow: f64,
    pub jam_spacing: f64,
    pub sat_flow: f64,
    /// Lanes per approach on the main street (1 or 2).
    pub main_lanes: usize,
    /// Lanes per approach on the side streets (1 or 2).
    pub side_lanes: usize,
    /// Turn fractions `[left, through, right]` on main-street approaches.
    pub main_turns: [f64; 3],
    /// Turn fractions `[left, through, right]` on side-street approaches.
    pub side_turns: [f64; 3],
}

impl Default for CorridorConfig {
    fn default() -> Self {
        CorridorConfig {
            intersections: 3,
            link_length: 300.0,
            free_flow: 15.0,
            jam_spacing: 7.0,
            sat_flow: 0.5,
            main_lanes: 2,
            side_lanes: 2,
            main_turns: [0.1, 0.8, 0.1],
            side_turns: [0.25, 0.5, 0.25],
        }
    }
}

/// Movements served by each lane slot of an approach with `lanes` lanes:
/// a single lane serves everything; with two lanes the left lane is a
/// dedicated left-turn bay and the right lane serves through + right.
fn lane_turns(lanes: usize, slot: usize) -> Vec<Turn> {
    match (lanes, slot) {
        (1, 0) => vec![Turn::Left, Turn::Through, Turn::Right],
        (2, 0) => vec![Turn::Left],
        (2, 1) => vec![Turn::Through, Turn::Right],
        _ => unreachable!("lane counts validated to 1 or 2"),
    }
}

/// Formats a ratio sum with float noise stripped, so e.g. 0.5+0.3+0.1
/// reports as "0.9" and not a 17-digit artifact.
fn tidy(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

fn check_turn_group(label: &str, group: [f64; 3]) -> Result<()> {
    if group.iter().any(|&r| r < 0.0) {
        return Err(SimError::BadConfig(format!(
            "{label} turn ratios contain a negative entry"
        )));
    }
    let sum: f64 = group.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SimError::BadConfig(format!(
            "{label} turn ratios sum to {}",
            tidy(sum)
        )));
    }
    Ok(())
}

impl Network {
    /// Builds and validates the standard corridor.
    pub fn corridor(cfg: &CorridorConfig) -> Result<Network> {
        if cfg.intersections == 0 {
            return Err(SimError::BadConfig(
                "corridor needs at least 1 intersection".into(),
            ));
        }
        if cfg.link_length <= 0.0 || cfg.free_flow <= 0.0 || cfg.jam_spacing <= 0.0 {
            return Err(SimError::BadConfig(
                "link length, free-flow speed, and jam spacing must be positive".into(),
            ));
        }
        if cfg.sat_flow <= 0.0 {
            return Err(SimError::BadConfig(
                "saturation flow must be positive".into(),
            ));
        }
        for (label, lanes) in [("main", cfg.main_lanes), ("side", cfg.side_lanes)] {
            if !(1..=2).contains(&lanes) {
                return Err(SimError::BadConfig(format!(
                    "{label} lane count must be 1 or 2, got {lanes}"
                )));
            }
        }
        check_turn_group("main", cfg.main_turns)?;
        check_turn_group("side", cfg.side_turns)?;
        // A dedicated left lane with zero left demand would strand nothing,
        // but a shared single lane serves all drawn turns, so any ratio set
        // is structurally routable; scheme compatibility is checked by the
        // environment, which knows the phase scheme.

        let n = cfg.intersections;
        let mut net = Network {
            n,
            links: Vec::new(),
            lanes: Vec::new(),
            incoming: vec![[usize::MAX; 4]; n],
            outgoing: vec![[None; 4]; n],
            turn_ratios: vec![[[0.0; 3]; 4]; n],
            jam_spacing: cfg.jam_spacing,
            sat_flow: cfg.sat_flow,
            entry_links: Vec::new(),
        };

        let add_link = |net: &mut Network,
                            to: usize,
                            approach: Approach,
                            from: Option<usize>,
                            lanes: usize,
                            entry_class: Option<DemandClass>| {
            let id = net.links.len();
            let mut lane_ids = Vec::with_capacity(lanes);
            for slot in 0..lanes {
                let lane_id = net.lanes.len();
                net.lanes.push(Lane {
                    id: lane_id,
                    link: id,
                    slot,
                    turns: lane_turns(lanes, slot),
                });
                lane_ids.push(lane_id);
            }
            net.links.push(Link {
                id,
                to,
                approach,
                from,
                length: cfg.link_length,
                free_flow: cfg.free_flow,
                lanes: lane_ids,
                entry_class,
            });
            net.incoming[to][approach.index()] = id;
            if entry_class.is_some() {
                net.entry_links.push(id);
            }
            id
        };

        for i in 0..n {
            // North approach: boundary at the corridor head, else internal.
            if i == 0 {
                add_link(&mut net, i, Approach::N, None, cfg.main_lanes, Some(DemandClass::Main));
            } else {
                add_link(&mut net, i, Approach::N, Some(i - 1), cfg.main_lanes, None);
            }
            // Side streets are always boundary entries.
            add_link(&mut net, i, Approach::E, None, cfg.side_lanes, Some(DemandClass::Side));
            // South approach: boundary at the corridor tail, else internal.
            if i == n - 1 {
                add_link(&mut net, i, Approach::S, None, cfg.main_lanes, Some(DemandClass::Main));
            } else {
                add_link(&mut net, i, Approach::S, Some(i + 1), cfg.main_lanes, None);
            }
            add_link(&mut net, i, Approach::W, None, cfg.side_lanes, Some(DemandClass::Side));
        }

        // Internal routing: exiting south from i enters i+1 on its north
        // approach; exiting north from i enters i-1 on its south approach.
        for i in 0..n {
            if i + 1 < n {
                net.outgoing[i][Approach::S.index()] =
                    Some(net.incoming[i + 1][Approach::N.index()]);
            }
            if i > 0 {
                net.outgoing[i][Approach::N.index()] =
                    Some(net.incoming[i - 1][Approach::S.index()]);
            }
        }

        for i in 0..n {
            for a in Approach::ALL {
                let ratios = match a {
                    Approach::N | Approach::S => cfg.main_turns,
                    Approach::E | Approach::W => cfg.side_turns,
                };
                net.turn_ratios[i][a.index()] = ratios;
            }
        }

        net.validate()?;
        Ok(net)
    }

    /// Structural consistency checks (also run by the builder).
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.incoming.iter().enumerate() {
            for (ai, &l) in row.iter().enumerate() {
                if l >= self.links.len() {
                    return Err(SimError::BadConfig(format!(
                        "intersection {i} approach {ai} has a dangling link reference"
                    )));
                }
                if self.links[l].to != i {
                    return Err(SimError::BadConfig(format!(
                        "link {l} registered as incoming to {i} but terminates at {}",
                        self.links[l].to
                    )));
                }
            }
        }
        for link in &self.links {
            if link.length <= 0.0 || link.free_flow <= 0.0 {
                return Err(SimError::BadConfig(format!(
                    "link {} has non-positive geometry",
                    link.id
                )));
            }
            if let Some(up) = link.from {
                if up >= self.n {
                    return Err(SimError::BadConfig(format!(
                        "link {} references unknown upstream intersection {up}",
                        link.id
                    )));
                }
            }
        }
        for (i, per_approach) in self.turn_ratios.iter().enumerate() {
            for (ai, group) in per_approach.iter().enumerate() {
                check_turn_group(
                    &format!("intersection {i} approach {}", Approach::ALL[ai].name()),
                    *group,
                )?;
            }
        }
        // Corridor adjacency symmetry: i's downstream must name i as its
        // upstream, and vice versa.
        for i in 0..self.n {
            let (up, down) = self.neighbors(i);
            if let Some(u) = up {
                if self.neighbors(u).1 != Some(i) {
                    return Err(SimError::BadConfig(format!(
                        "asymmetric adjacency between {u} and {i}"
                    )));
                }
            }
            if let Some(d) = down {
                if self.neighbors(d).0 != Some(i) {
                    return Err(SimError::BadConfig(format!(
                        "asymmetric adjacency between {i} and {d}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Main-street neighbors of intersection `i`: `(upstream, downstream)`
    /// in the fixed (north, south) order.
    pub fn neighbors(&self, i: usize) -> (Option<usize>, Option<usize>) {
        let up = if i > 0 { Some(i - 1) } else { None };
        let down = if i + 1 < self.n { Some(i + 1) } else { None };
        (up, down)
    }

    /// The lane on `link` that serves `turn`.
    pub fn lane_for_turn(&self, link: LinkId, turn: Turn) -> LaneId {
        let l = &self.links[link];
        for &lane in &l.lanes {
            if self.lanes[lane].turns.contains(&turn) {
                return lane;
            }
        }
        unreachable!("every turn is served by some lane slot")
    }

    /// Incoming lanes of intersection `i` in the fixed observation order:
    /// approaches N, E, S, W, lanes left-to-right within each approach.
    pub fn incoming_lanes(&self, i: usize) -> Vec<LaneId> {
        let mut out = Vec::new();
        for a in Approach::ALL {
            let link = self.incoming[i][a.index()];
            out.extend(self.links[link].lanes.iter().copied());
        }
        out
    }

    /// Downstream link for a movement, or `None` when traffic exits the
    /// network at the stop line.
    pub fn route_target(&self, i: usize, approach: Approach, turn: Turn) -> Option<LinkId> {
        self.outgoing[i][exit_side(approach, turn).index()]
    }

    /// Turn fractions for an approach of intersection `i`.
    pub fn ratios(&self, i: usize, approach: Approach) -> [f64; 3] {
        self.turn_ratios[i][approach.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_intersection_corridor_shape() {
        let cfg = CorridorConfig {
            intersections: 5,
            ..CorridorConfig::default()
        };
        let net = Network::corridor(&cfg).unwrap();
        assert_eq!(net.n, 5);
        assert_eq!(net.links.len(), 20); // 4 incoming per intersection
        for i in 0..5 {
            for a in Approach::ALL {
                let l = net.incoming[i][a.index()];
                assert_eq!(net.links[l].to, i);
                assert_eq!(net.links[l].approach, a);
            }
        }
        assert_eq!(net.neighbors(0), (None, Some(1)));
        assert_eq!(net.neighbors(2), (Some(1), Some(3)));
        assert_eq!(net.neighbors(4), (Some(3), None));
        // Internal links: 2 per adjacent pair; everything else is an entry.
        let internal = net.links.iter().filter(|l| l.from.is_some()).count();
        assert_eq!(internal, 8);
        assert_eq!(net.entry_links.len(), 12);
    }

    #[test]
    fn single_intersection_has_no_neighbors() {
        let cfg = CorridorConfig {
            intersections: 1,
            ..CorridorConfig::default()
        };
        let net = Network::corridor(&cfg).unwrap();
        assert_eq!(net.neighbors(0), (None, None));
        // All four approaches are boundary entries.
        assert_eq!(net.entry_links.len(), 4);
        assert!(net.outgoing[0].iter().all(|o| o.is_none()));
    }

    #[test]
    fn bad_turn_ratios_report_their_sum() {
        let cfg = CorridorConfig {
            main_turns: [0.5, 0.3, 0.1],
            ..CorridorConfig::default()
        };
        let err = Network::corridor(&cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ratios sum to 0.9"), "got: {msg}");
    }

    #[test]
    fn non_positive_geometry_rejected() {
        let cfg = CorridorConfig {
            link_length: 0.0,
            ..CorridorConfig::default()
        };
        assert!(Network::corridor(&cfg).is_err());
    }

    #[test]
    fn routing_compass_arithmetic() {
        let cfg = CorridorConfig {
            intersections: 3,
            ..CorridorConfig::default()
        };
        let net = Network::corridor(&cfg).unwrap();
        // Through traffic from the north at intersection 0 continues to 1.
        let target = net.route_target(0, Approach::N, Turn::Through).unwrap();
        assert_eq!(net.links[target].to, 1);
        assert_eq!(net.links[target].approach, Approach::N);
        // Northbound through at intersection 1 enters 0 on its south side.
        let target = net.route_target(1, Approach::S, Turn::Through).unwrap();
        assert_eq!(net.links[target].to, 0);
        assert_eq!(net.links[target].approach, Approach::S);
        // Side-street through always exits the network.
        assert!(net.route_target(1, Approach::E, Turn::Through).is_none());
        // Left from the north heads east: off the corridor.
        assert!(net.route_target(1, Approach::N, Turn::Left).is_none());
        // Left from a side street can continue along the corridor.
        let target = net.route_target(0, Approach::E, Turn::Left).unwrap();
        assert_eq!(net.links[target].to, 1);
    }

    #[test]
    fn lane_assignment_by_turn() {
        let net = Network::corridor(&CorridorConfig::default()).unwrap();
        let link = net.incoming[0][Approach::N.index()];
        let left = net.lane_for_turn(link, Turn::Left);
        let through = net.lane_for_turn(link, Turn::Through);
        let right = net.lane_for_turn(link, Turn::Right);
        assert_ne!(left, through);
        assert_eq!(through, right);
        assert_eq!(net.lanes[left].slot, 0);
        // Observation order: N lanes, E lanes, S lanes, W lanes.
        let lanes = net.incoming_lanes(0);
        assert_eq!(lanes.len(), 8);
        assert_eq!(lanes[0], net.links[net.incoming[0][0]].lanes[0]);
    }
}
