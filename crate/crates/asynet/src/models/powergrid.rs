//! Coupled phase-oscillator grids with permanent line tripping.
//!
//! Nodes are rotating machines on the circle: second-order nodes carry
//! `(theta, nu)` with `M theta'' + D theta' = omega + sum_j a_ij sin(theta_j
//! - theta_i + phi_ij)`, first-order (droop-controlled or frequency-
//! dependent) nodes carry `theta` alone with `D theta' = omega + sum_j
//! ...`. Diagonal `a_ii` entries are shunt terms contributing the constant
//! `a_ii sin(phi_ii)` to the drive. Each line whose threshold is below
//! `pi/2` gets a sticky guard: once the phase gap `|theta_i - theta_j|`
//! exceeds the threshold, the line is removed for the rest of the run, and
//! the active structure drops to the one with that line cut.

use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

use crate::connection::ConnectionStructure;
use crate::expr::{parse_pred, Expr, Func};
use crate::network::{Network, NetworkBuilder};
use crate::phase::Factor;

/// Hard cap on trippable lines: structures enumerate every reachable
/// tripped subset, and 2^12 is already generous for a workstation.
pub const MAX_TRIPPABLE_LINES: usize = 12;

/// One machine in the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridNode {
    pub name: String,
    /// `Some(m)` for a second-order machine with inertia `m`; `None` for a
    /// first-order node.
    pub inertia: Option<f64>,
    /// Damping `D > 0`.
    pub damping: f64,
    /// Net power drive: positive generation, negative load.
    pub drive: f64,
}

impl GridNode {
    pub fn second_order(name: impl Into<String>, inertia: f64, damping: f64, drive: f64) -> Self {
        GridNode { name: name.into(), inertia: Some(inertia), damping, drive }
    }

    pub fn first_order(name: impl Into<String>, damping: f64, drive: f64) -> Self {
        GridNode { name: name.into(), inertia: None, damping, drive }
    }
}

/// Grid description: node list plus symmetric coupling, phase-shift, and
/// trip-threshold matrices. A threshold of `pi/2` leaves the line
/// untrippable.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerGridParams {
    pub nodes: Vec<GridNode>,
    /// `a[i][j] >= 0`, symmetric; `a[i][i]` is a shunt magnitude.
    pub coupling: Vec<Vec<f64>>,
    /// `phi[i][j]`, radians; `phi[i][i]` pairs with the shunt.
    pub phase_shift: Vec<Vec<f64>>,
    /// `t[i][j]` in `(0, pi/2]`, symmetric; `pi/2` disables tripping.
    pub trip: Vec<Vec<f64>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum PowerGridError {
    #[error("grid needs at least one node")]
    Empty,
    #[error("matrix {name} must be {n}x{n}")]
    BadShape { name: &'static str, n: usize },
    #[error("matrix {name} must be symmetric at ({i},{j})")]
    Asymmetric { name: &'static str, i: usize, j: usize },
    #[error("coupling[{i}][{j}] must be finite and nonnegative")]
    BadCoupling { i: usize, j: usize },
    #[error("trip[{i}][{j}] must lie in (0, pi/2]")]
    BadTrip { i: usize, j: usize },
    #[error("node {0}: damping must be positive and finite")]
    BadDamping(usize),
    #[error("node {0}: inertia must be positive and finite")]
    BadInertia(usize),
    #[error("{count} trippable lines exceed the supported maximum {max}")]
    TooManyLines { count: usize, max: usize },
}

impl PowerGridParams {
    /// Square matrix of zeros sized to the node count.
    fn zeros(n: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; n]; n]
    }

    /// Uniform untrippable thresholds.
    fn no_trips(n: usize) -> Vec<Vec<f64>> {
        vec![vec![FRAC_PI_2; n]; n]
    }

    /// Two second-order machines (`M = D = 1`) with drives `+p`/`-p`,
    /// coupling `k`, and a shared trip threshold.
    pub fn two_machine(p: f64, k: f64, trip: f64) -> Self {
        let mut coupling = Self::zeros(2);
        coupling[0][1] = k;
        coupling[1][0] = k;
        let mut t = Self::no_trips(2);
        t[0][1] = trip;
        t[1][0] = trip;
        PowerGridParams {
            nodes: vec![
                GridNode::second_order("gen", 1.0, 1.0, p),
                GridNode::second_order("load", 1.0, 1.0, -p),
            ],
            coupling,
            phase_shift: Self::zeros(2),
            trip: t,
        }
    }

    /// Five first-order nodes on a coupled ring with a chord: the droop /
    /// frequency-dependent-load form with zero phase shifts.
    pub fn droop_five() -> Self {
        let n = 5;
        let nodes = vec![
            GridNode::first_order("n1", 1.0, 0.3),
            GridNode::first_order("n2", 1.2, -0.2),
            GridNode::first_order("n3", 0.8, 0.5),
            GridNode::first_order("n4", 1.5, -0.4),
            GridNode::first_order("n5", 1.1, 0.1),
        ];
        let mut coupling = Self::zeros(n);
        for i in 0..n {
            let j = (i + 1) % n;
            coupling[i][j] = 1.0;
            coupling[j][i] = 1.0;
        }
        coupling[0][2] = 0.6;
        coupling[2][0] = 0.6;
        PowerGridParams {
            nodes,
            coupling,
            phase_shift: Self::zeros(n),
            trip: Self::no_trips(n),
        }
    }

    pub fn validate(&self) -> Result<(), PowerGridError> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(PowerGridError::Empty);
        }
        for (name, m) in [
            ("coupling", &self.coupling),
            ("phase_shift", &self.phase_shift),
            ("trip", &self.trip),
        ] {
            if m.len() != n || m.iter().any(|row| row.len() != n) {
                return Err(PowerGridError::BadShape { name, n });
            }
        }
        for i in 0..n {
            for j in 0..n {
                let a = self.coupling[i][j];
                if !(a >= 0.0) || !a.is_finite() {
                    return Err(PowerGridError::BadCoupling { i, j });
                }
                if a != self.coupling[j][i] {
                    return Err(PowerGridError::Asymmetric { name: "coupling", i, j });
                }
                let t = self.trip[i][j];
                if !(t > 0.0 && t <= FRAC_PI_2) {
                    return Err(PowerGridError::BadTrip { i, j });
                }
                if t != self.trip[j][i] {
                    return Err(PowerGridError::Asymmetric { name: "trip", i, j });
                }
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !(node.damping > 0.0) || !node.damping.is_finite() {
                return Err(PowerGridError::BadDamping(i));
            }
            if let Some(m) = node.inertia {
                if !(m > 0.0) || !m.is_finite() {
                    return Err(PowerGridError::BadInertia(i));
                }
            }
        }
        Ok(())
    }

    /// Lines (i < j) that both carry coupling and can trip.
    fn trippable_lines(&self) -> Vec<(usize, usize)> {
        let n = self.nodes.len();
        let mut lines = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.coupling[i][j] > 0.0 && self.trip[i][j] < FRAC_PI_2 {
                    lines.push((i, j));
                }
            }
        }
        lines
    }

    /// Pack per-node phases and frequencies into a flat state vector
    /// (frequencies are ignored for first-order nodes).
    pub fn pack_state(&self, theta: &[f64], freq: &[f64]) -> Vec<f64> {
        assert_eq!(theta.len(), self.nodes.len());
        assert_eq!(freq.len(), self.nodes.len());
        let mut x = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            x.push(theta[i]);
            if node.inertia.is_some() {
                x.push(freq[i]);
            }
        }
        x
    }
}

/// Build the grid network: one structure per reachable tripped-line subset,
/// sticky trip rules keyed on phase gaps, fields with the cut lines zeroed.
pub fn build_powergrid(p: &PowerGridParams) -> Result<Network, PowerGridError> {
    p.validate()?;
    let n = p.nodes.len();
    let lines = p.trippable_lines();
    if lines.len() > MAX_TRIPPABLE_LINES {
        return Err(PowerGridError::TooManyLines {
            count: lines.len(),
            max: MAX_TRIPPABLE_LINES,
        });
    }

    let mut b = NetworkBuilder::new("powergrid");
    let mut coord_names: Vec<(String, Option<String>)> = Vec::with_capacity(n);
    for (i, node) in p.nodes.iter().enumerate() {
        coord_names.push((
            format!("theta{}", i + 1),
            node.inertia.map(|_| format!("nu{}", i + 1)),
        ));
    }
    for (i, node) in p.nodes.iter().enumerate() {
        let (th, nu) = &coord_names[i];
        match nu {
            Some(nu) => {
                b.node_named(
                    node.name.clone(),
                    vec![Factor::Circle, Factor::RealLine],
                    vec![th.as_str(), nu.as_str()],
                );
            }
            None => {
                b.node_named(node.name.clone(), vec![Factor::Circle], vec![th.as_str()]);
            }
        }
    }

    for (i, node) in p.nodes.iter().enumerate() {
        b.param(format!("om{}", i + 1), node.drive);
        b.param(format!("d{}", i + 1), node.damping);
        if let Some(m) = node.inertia {
            b.param(format!("m{}", i + 1), m);
        }
    }
    for i in 0..n {
        for j in i..n {
            if p.coupling[i][j] > 0.0 {
                b.param(format!("a{}_{}", i + 1, j + 1), p.coupling[i][j]);
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            if p.coupling[i.min(j)][i.max(j)] > 0.0 && p.phase_shift[i][j] != 0.0 {
                b.param(format!("phi{}_{}", i + 1, j + 1), p.phase_shift[i][j]);
            }
        }
    }
    for &(i, j) in &lines {
        b.param(format!("t{}_{}", i + 1, j + 1), p.trip[i][j]);
    }

    // One structure per subset of tripped lines; lines outside the
    // trippable set are always live.
    let masks = 1usize << lines.len();
    let mut alphas = Vec::with_capacity(masks);
    for mask in 0..masks {
        let tripped =
            |i: usize, j: usize| match lines.iter().position(|&l| l == (i.min(j), i.max(j))) {
                Some(bit) => mask & (1 << bit) != 0,
                None => false,
            };
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && p.coupling[i][j] > 0.0 && !tripped(i, j) {
                    edges.push((j, i)); // node i listens to node j
                }
            }
        }
        let name = if mask == 0 {
            "intact".to_string()
        } else {
            let mut s = String::from("cut");
            for (bit, &(i, j)) in lines.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    s.push_str(&format!("_{}_{}", i + 1, j + 1));
                }
            }
            s
        };
        let cs = ConnectionStructure::new(n, vec![0; n], &edges)
            .expect("grid adjacency has no self-loops");
        let alpha = b.structure(name, cs);

        let mut field = Vec::new();
        for (i, node) in p.nodes.iter().enumerate() {
            // Drive plus shunt constant plus live coupling terms.
            let mut rhs = Expr::param(format!("om{}", i + 1));
            if p.coupling[i][i] > 0.0 {
                let shunt = Expr::param(format!("a{}_{}", i + 1, i + 1));
                let angle = if p.phase_shift[i][i] != 0.0 {
                    Expr::param(format!("phi{}_{}", i + 1, i + 1))
                } else {
                    Expr::num(0.0)
                };
                rhs = rhs.add(shunt.mul(Expr::call(Func::Sin, vec![angle])));
            }
            for j in 0..n {
                if j == i || p.coupling[i.min(j)][i.max(j)] == 0.0 || tripped(i, j) {
                    continue;
                }
                let a = Expr::param(format!("a{}_{}", i.min(j) + 1, i.max(j) + 1));
                let mut angle = Expr::state(j + 1, 1).sub(Expr::state(i + 1, 1));
                if p.phase_shift[i][j] != 0.0 {
                    angle = angle.add(Expr::param(format!("phi{}_{}", i + 1, j + 1)));
                }
                rhs = rhs.add(a.mul(Expr::call(Func::Sin, vec![angle])));
            }
            let d = Expr::param(format!("d{}", i + 1));
            match node.inertia {
                Some(_) => {
                    let nu = Expr::state(i + 1, 2);
                    field.push(nu.clone());
                    field.push(
                        rhs.sub(d.mul(nu)).div(Expr::param(format!("m{}", i + 1))),
                    );
                }
                None => field.push(rhs.div(d)),
            }
        }
        b.field(alpha, field, vec![]);
        alphas.push(alpha);
    }

    // Most-specific first: the rule for a tripped set fires over any of its
    // subsets. Atoms are sticky, so a line once tripped stays tripped.
    let mut order: Vec<usize> = (1..masks).collect();
    order.sort_by_key(|m| std::cmp::Reverse(m.count_ones()));
    for mask in order {
        let clauses: Vec<String> = lines
            .iter()
            .enumerate()
            .filter(|(bit, _)| mask & (1 << bit) != 0)
            .map(|(_, &(i, j))| {
                format!(
                    "circ_dist(x[{}][1], x[{}][1]) > t{}_{}",
                    i + 1,
                    j + 1,
                    i + 1,
                    j + 1
                )
            })
            .collect();
        let when = parse_pred(&clauses.join(" && ")).expect("trip guard must parse");
        b.rule_sticky(when, alphas[mask]);
    }
    b.default_structure(alphas[0]);
    Ok(b.build().expect("power grid network must build"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{factorize, Factorization};
    use crate::integrator::{integrate, IntegratorConfig, RunStatus};

    fn cfg(t_max: f64) -> IntegratorConfig {
        IntegratorConfig::default().with_t_max(t_max)
    }

    /// With balanced drives the two-machine grid settles at the phase gap
    /// whose line flow carries the power: sin(gap) = p / k.
    #[test]
    fn two_machine_reaches_the_closed_form_equilibrium() {
        let p = PowerGridParams::two_machine(0.5, 1.0, FRAC_PI_2);
        let net = build_powergrid(&p).unwrap();
        let x0 = p.pack_state(&[0.0, 0.0], &[0.0, 0.0]);
        let tr = integrate(&net, net.initial_state(0.0, x0).unwrap(), &cfg(50.0));
        assert_eq!(tr.status, RunStatus::Completed);
        assert!(tr.events.is_empty());
        let x = &tr.final_state.x;
        let gap = (x[0] - x[2]).rem_euclid(std::f64::consts::TAU);
        let gap = gap.min(std::f64::consts::TAU - gap);
        assert!(
            (gap - 0.5f64.asin()).abs() < 1e-4,
            "gap {} != arcsin(1/2) {}",
            gap,
            0.5f64.asin()
        );
        // Equilibrium is corotating at the mean drive, which is zero here.
        assert!(x[1].abs() < 1e-4 && x[3].abs() < 1e-4, "residual frequencies {:?}", x);
        // The leading machine is the generator.
        assert!(x[0] > x[2]);
    }

    /// An undersized threshold trips while the gap is still opening; after
    /// the cut each machine is an exactly solvable linear system.
    #[test]
    fn undersized_threshold_trips_and_matches_the_decoupled_closed_form() {
        let p = PowerGridParams::two_machine(0.5, 1.0, 0.4);
        let net = build_powergrid(&p).unwrap();
        let x0 = p.pack_state(&[0.0, 0.0], &[0.0, 0.0]);
        let tr = integrate(&net, net.initial_state(0.0, x0).unwrap(), &cfg(20.0));
        assert!(!tr.status.is_error());

        let cut = net.structure_by_name("cut_1_2").unwrap();
        assert_eq!(tr.events.len(), 1, "exactly one permanent trip: {:?}", tr.events);
        let trip = &tr.events[0];
        assert_eq!(trip.to, cut);
        let gap_at_trip = (trip.x[0] - trip.x[2]).abs();
        assert!((gap_at_trip - 0.4).abs() < 1e-6, "gap at trip {gap_at_trip}");

        // Decoupled: m nu' = p - d nu, so nu -> p/d and theta grows
        // linearly; compare against the exponential closed form.
        for (k, sign) in [(0usize, 1.0), (1usize, -1.0)] {
            let p_k = 0.5 * sign;
            let (th0, nu0) = (trip.x[2 * k], trip.x[2 * k + 1]);
            for step in 1..=10 {
                let t = trip.t + step as f64 * (20.0 - trip.t) / 10.0;
                let dt = t - trip.t;
                let (x, _) = tr.state_at(t).unwrap();
                let nu_exact = p_k + (nu0 - p_k) * (-dt).exp();
                let th_exact = th0 + p_k * dt + (nu0 - p_k) * (1.0 - (-dt).exp());
                assert!(
                    (x[2 * k + 1] - nu_exact).abs() < 1e-3,
                    "nu{k} at t={t}: {} vs {nu_exact}",
                    x[2 * k + 1]
                );
                assert!(
                    (x[2 * k] - th_exact).abs() < 1e-3,
                    "theta{k} at t={t}: {} vs {th_exact}",
                    x[2 * k]
                );
            }
        }
    }

    /// Summing the first-order equations cancels the antisymmetric coupling
    /// exactly: sum of D_i theta_i' equals the total drive pointwise.
    #[test]
    fn first_order_drive_sum_is_conserved() {
        let p = PowerGridParams::droop_five();
        let net = build_powergrid(&p).unwrap();
        let theta0 = [0.0, 1.0, -0.5, 2.0, 0.3];
        let x0 = p.pack_state(&theta0, &[0.0; 5]);
        let tr = integrate(&net, net.initial_state(0.0, x0).unwrap(), &cfg(20.0));
        assert_eq!(tr.status, RunStatus::Completed);
        assert!(tr.events.is_empty());

        let total_drive: f64 = p.nodes.iter().map(|n| n.drive).sum();
        let mut dx = vec![0.0; net.dim()];
        let mut dtau = vec![];
        for sample in &tr.samples {
            let state = net.initial_state(sample.t, sample.x.clone()).unwrap();
            net.eval_field(tr.final_alpha, &state, &mut dx, &mut dtau).unwrap();
            let aggregate: f64 = p
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| n.damping * dx[i])
                .sum();
            assert!(
                (aggregate - total_drive).abs() < 1e-8,
                "t={}: {} vs {}",
                sample.t,
                aggregate,
                total_drive
            );
        }
    }

    #[test]
    fn uncoupled_grid_factorizes_into_single_machines() {
        let p = PowerGridParams {
            nodes: vec![
                GridNode::second_order("g1", 1.0, 1.0, 0.2),
                GridNode::first_order("g2", 1.0, -0.1),
                GridNode::first_order("g3", 2.0, -0.1),
            ],
            coupling: PowerGridParams::zeros(3),
            phase_shift: PowerGridParams::zeros(3),
            trip: PowerGridParams::no_trips(3),
        };
        let net = build_powergrid(&p).unwrap();
        assert_eq!(net.structure_count(), 1);
        match factorize(&net, 200, 7) {
            Factorization::Factored { factors, nodes, .. } => {
                assert_eq!(factors.len(), 3);
                assert_eq!(nodes, vec![vec![0], vec![1], vec![2]]);
            }
            other => panic!("expected a full factorization, got {other:?}"),
        }
    }

    #[test]
    fn shunt_terms_shift_the_drive() {
        // A single node with a shunt: theta' = (om + a sin(phi)) / d.
        let mut p = PowerGridParams {
            nodes: vec![GridNode::first_order("solo", 2.0, 0.3)],
            coupling: vec![vec![0.8]],
            phase_shift: vec![vec![0.25]],
            trip: PowerGridParams::no_trips(1),
        };
        p.trip[0][0] = FRAC_PI_2;
        let net = build_powergrid(&p).unwrap();
        let tr = integrate(&net, net.initial_state(0.0, vec![0.0]).unwrap(), &cfg(2.0));
        let rate = (0.3 + 0.8 * 0.25f64.sin()) / 2.0;
        let (x, _) = tr.state_at(2.0).unwrap();
        assert!((x[0] - 2.0 * rate).abs() < 1e-9, "{} vs {}", x[0], 2.0 * rate);
    }

    #[test]
    fn rejects_malformed_grids() {
        let mut p = PowerGridParams::two_machine(0.5, 1.0, 0.4);
        p.coupling[0][1] = 2.0;
        assert_eq!(
            build_powergrid(&p).unwrap_err(),
            PowerGridError::Asymmetric { name: "coupling", i: 0, j: 1 }
        );
        let mut p = PowerGridParams::two_machine(0.5, 1.0, 0.4);
        p.trip[0][1] = 2.0;
        p.trip[1][0] = 2.0;
        assert_eq!(build_powergrid(&p).unwrap_err(), PowerGridError::BadTrip { i: 0, j: 1 });
        let mut p = PowerGridParams::two_machine(0.5, 1.0, 0.4);
        p.nodes[0].damping = 0.0;
        assert_eq!(build_powergrid(&p).unwrap_err(), PowerGridError::BadDamping(0));
    }

    #[test]
    fn grids_validate_clean() {
        for p in [
            PowerGridParams::two_machine(0.5, 1.0, FRAC_PI_2),
            PowerGridParams::two_machine(0.5, 1.0, 0.4),
            PowerGridParams::droop_five(),
        ] {
            let net = build_powergrid(&p).unwrap();
            assert!(
                crate::checks::validate_network(&net).is_empty(),
                "{} has validation findings",
                net.name()
            );
        }
    }
}
