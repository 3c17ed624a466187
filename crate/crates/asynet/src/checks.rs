//! Randomized structural audits of a built network.
//!
//! Three probes, all report-based (they never abort on a finding):
//!
//! * [`check_admissibility`] — does the declared vector field of one
//!   structure actually respect that structure? Central finite differences
//!   catch components that respond to nodes the matrix says they cannot see
//!   (violation) or fail to respond to nodes it says they must (warning),
//!   and frozen coordinates are required to carry an exactly-zero component
//!   on their constraint region.
//! * [`check_constraint_regularity`] — do the event sets that hold a node on
//!   a constraint stay inside (and away from the boundary of) the region
//!   where that constraint is defined?
//! * [`validate_network`] — cheap aggregate diagnostics: field coverage,
//!   rule-target reachability, constraint references, idle clocks.
//!
//! Sampling is seeded and uniform per factor; equality-gated event rules are
//! reached by snapping their affine equality atoms onto the zero set before
//! evaluating the map, mirroring how the integrator lands on such states.

use std::f64::consts::TAU;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::connection::AlphaId;
use crate::expr::{CmpOp, EvalCtx, VarRef};
use crate::network::Network;
use crate::phase::Factor;
use crate::state::NetworkState;

/// Sampling half-width for unbounded line coordinates.
const LINE_RANGE: f64 = 10.0;
/// Sampling range for clock values.
const CLOCK_RANGE: f64 = 10.0;
/// Relative step for central finite-difference probes.
const FD_STEP: f64 = 1e-6;
/// A probe registers a dependence when the two-sided difference exceeds this
/// fraction of the local field scale.
const FD_TOL: f64 = 1e-9;
/// Equality tolerance used when evaluating the event map on samples.
const EVAL_EPS: f64 = 1e-9;
/// Cap on stored per-sample findings; totals keep counting past it.
const MAX_STORED: usize = 32;

/// Draw one state uniformly: intervals over their range, circles over
/// `[0, 2π)`, lines over `±LINE_RANGE`, clocks over `[0, CLOCK_RANGE]`.
pub(crate) fn sample_state(net: &Network, rng: &mut ChaCha8Rng) -> NetworkState {
    let x = net
        .phase()
        .factors_flat()
        .map(|f| match f {
            Factor::Interval { lo, hi } => rng.random_range(lo..=hi),
            Factor::RealLine => rng.random_range(-LINE_RANGE..=LINE_RANGE),
            Factor::Circle => rng.random_range(0.0..TAU),
        })
        .collect();
    let tau = (0..net.clock_count())
        .map(|_| rng.random_range(0.0..=CLOCK_RANGE))
        .collect();
    NetworkState::new(0.0, x, tau)
}

/// Move `state` onto the zero sets of the affine equality atoms of rule
/// `ri`, so equality-gated rules become reachable by random sampling.
/// Non-affine or clock-involving atoms are left alone.
pub(crate) fn snap_rule_equalities(net: &Network, ri: usize, state: &mut NetworkState) {
    let em = net.event_map();
    for i in em.rule_shape(ri).atom_ids() {
        let atom = &em.atoms()[i];
        if atom.atom.op != CmpOp::Eq {
            continue;
        }
        let Some(af) = em.atom_expr(i).affine(net.param_values()) else {
            continue;
        };
        if !af.terms.iter().all(|(v, _)| matches!(v, VarRef::X(_))) {
            continue;
        }
        let ctx = net.ctx(state);
        let Ok(g) = em.atom_residual(i, &ctx) else {
            continue;
        };
        let norm2: f64 = af.terms.iter().map(|(_, w)| w * w).sum();
        if norm2 == 0.0 {
            continue;
        }
        // Orthogonal projection onto {g = 0}; exact for a single variable.
        for &(v, w) in &af.terms {
            let VarRef::X(c) = v else { continue };
            state.x[c] -= g * w / norm2;
        }
    }
}

/// One detected response of a field component to a coordinate its structure
/// declares invisible.
#[derive(Debug, Clone)]
pub struct DependencyFinding {
    /// Node whose field component moved.
    pub node: usize,
    /// Flat coordinate of the moved component.
    pub coord: usize,
    /// Node whose coordinate was perturbed (no edge from `node` to it).
    pub on_node: usize,
    /// Flat coordinate that was perturbed.
    pub on_coord: usize,
    /// Central-difference derivative estimate.
    pub sensitivity: f64,
    /// The sampled state exhibiting the response.
    pub x: Vec<f64>,
    pub tau: Vec<f64>,
}

/// A nonzero field component on a coordinate the active constraint freezes.
#[derive(Debug, Clone)]
pub struct TangencyFinding {
    pub node: usize,
    /// Constraint index the structure holds the node on.
    pub constraint: u32,
    /// Flat coordinate that must be frozen.
    pub coord: usize,
    /// Offending component value (must be exactly 0).
    pub value: f64,
    pub x: Vec<f64>,
    pub tau: Vec<f64>,
}

/// Findings of [`check_admissibility`] for one structure.
#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    pub alpha: AlphaId,
    pub samples: usize,
    /// Stored examples of forbidden dependencies (capped; see totals).
    pub dependency_violations: Vec<DependencyFinding>,
    pub dependency_total: usize,
    /// Stored examples of motion on frozen coordinates (capped; see totals).
    pub tangency_violations: Vec<TangencyFinding>,
    pub tangency_total: usize,
    /// `(i, j)` pairs wired in the structure for which no sampled probe of
    /// node `i`'s field responded to node `j` — nontriviality unverified at
    /// this sample size, not a proven defect.
    pub nontriviality_warnings: Vec<(usize, usize)>,
    /// Constraints held by this structure whose region no sample entered,
    /// leaving the tangency condition unprobed there.
    pub unprobed_regions: Vec<(usize, u32)>,
    /// Samples discarded because an expression failed to evaluate.
    pub eval_failures: usize,
}

impl AdmissibilityReport {
    /// No violations; warnings and unprobed regions are allowed.
    pub fn is_clean(&self) -> bool {
        self.dependency_total == 0 && self.tangency_total == 0
    }
}

/// Probe whether `alpha`'s field respects `alpha`'s matrix: off-pattern
/// sensitivities are violations, on-pattern insensitivity across all samples
/// is a warning, and frozen coordinates must evaluate to exactly zero on
/// their constraint region.
pub fn check_admissibility(
    net: &Network,
    alpha: AlphaId,
    n_samples: usize,
    seed: u64,
) -> AdmissibilityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = net.structure(alpha);
    let field = net.field(alpha);
    let k = net.node_count();
    let dim = net.dim();
    let params = net.param_values();

    let mut report = AdmissibilityReport {
        alpha,
        samples: n_samples,
        dependency_violations: Vec::new(),
        dependency_total: 0,
        tangency_violations: Vec::new(),
        tangency_total: 0,
        nontriviality_warnings: Vec::new(),
        unprobed_regions: Vec::new(),
        eval_failures: 0,
    };

    // seen[i][j]: some component of node i's field responded to node j.
    let mut seen = vec![vec![false; k]; k];
    let mut region_hits: Vec<usize> = Vec::new();
    let held: Vec<(usize, u32)> = (0..k)
        .filter_map(|i| {
            let l = s.constraint_index(i);
            (l > 0).then_some((i, l))
        })
        .collect();
    region_hits.resize(held.len(), 0);

    let mut plus = vec![0.0; dim];
    let mut minus = vec![0.0; dim];
    let mut f_plus = vec![0.0; dim];
    let mut f_minus = vec![0.0; dim];
    let mut f_here = vec![0.0; dim];

    'samples: for _ in 0..n_samples {
        let st = sample_state(net, &mut rng);

        // Dependency pattern: perturb each coordinate, watch every component
        // of every other node.
        for d in 0..dim {
            let (j, _) = net.phase().node_of_flat(d);
            let h = FD_STEP * st.x[d].abs().max(1.0);
            plus.copy_from_slice(&st.x);
            minus.copy_from_slice(&st.x);
            plus[d] += h;
            minus[d] -= h;
            let ctx_p = EvalCtx { x: &plus, tau: &st.tau, params };
            let ctx_m = EvalCtx { x: &minus, tau: &st.tau, params };
            if field.eval_into(&ctx_p, &mut f_plus).is_err()
                || field.eval_into(&ctx_m, &mut f_minus).is_err()
            {
                report.eval_failures += 1;
                continue 'samples;
            }
            for c in 0..dim {
                let (i, _) = net.phase().node_of_flat(c);
                if i == j {
                    continue;
                }
                let diff = (f_plus[c] - f_minus[c]).abs();
                let scale = f_plus[c].abs().max(f_minus[c].abs()).max(1.0);
                if diff > FD_TOL * scale {
                    seen[i][j] = true;
                    if !s.depends(i, j) {
                        report.dependency_total += 1;
                        if report.dependency_violations.len() < MAX_STORED {
                            report.dependency_violations.push(DependencyFinding {
                                node: i,
                                coord: c,
                                on_node: j,
                                on_coord: d,
                                sensitivity: diff / (2.0 * h),
                                x: st.x.clone(),
                                tau: st.tau.clone(),
                            });
                        }
                    }
                }
            }
        }

        // Tangency: on each held constraint's region, frozen components of
        // the field must be exactly zero.
        let ctx = net.ctx(&st);
        if field.eval_into(&ctx, &mut f_here).is_err() {
            report.eval_failures += 1;
            continue;
        }
        for (hi, &(i, l)) in held.iter().enumerate() {
            let cs = net.constraint(i, l).expect("validated at build");
            match cs.region_contains(&ctx) {
                Ok(true) => {}
                Ok(false) => continue,
                Err(_) => {
                    report.eval_failures += 1;
                    continue;
                }
            }
            region_hits[hi] += 1;
            let off = net.phase().node_offset(i);
            for &c in &cs.frozen {
                let flat = off + c;
                if f_here[flat] != 0.0 {
                    report.tangency_total += 1;
                    if report.tangency_violations.len() < MAX_STORED {
                        report.tangency_violations.push(TangencyFinding {
                            node: i,
                            constraint: l,
                            coord: flat,
                            value: f_here[flat],
                            x: st.x.clone(),
                            tau: st.tau.clone(),
                        });
                    }
                }
            }
        }
    }

    for i in 0..k {
        for j in 0..k {
            if i != j && s.depends(i, j) && !seen[i][j] {
                report.nontriviality_warnings.push((i, j));
            }
        }
    }
    for (hi, &(i, l)) in held.iter().enumerate() {
        if region_hits[hi] == 0 {
            report.unprobed_regions.push((i, l));
        }
    }
    report
}

/// Why a sampled event-set point was flagged by the regularity check.
#[derive(Debug, Clone, PartialEq)]
pub enum RegularityKind {
    /// The node projection left the region where its constraint is defined.
    Outside,
    /// Inside the region but within `margin` of one of its boundary atoms.
    NearBoundary {
        /// Ordinal of the region atom (visit order) whose residual is small.
        atom: usize,
        residual: f64,
    },
}

/// One flagged sample from [`check_constraint_regularity`].
#[derive(Debug, Clone)]
pub struct RegularityFinding {
    /// Structure the event map selected at the sample.
    pub alpha: AlphaId,
    /// Rule that selected it (`None` = default).
    pub rule: Option<usize>,
    pub node: usize,
    pub constraint: u32,
    pub kind: RegularityKind,
    pub x: Vec<f64>,
    pub tau: Vec<f64>,
}

/// Findings of [`check_constraint_regularity`].
#[derive(Debug, Clone)]
pub struct RegularityReport {
    pub samples: usize,
    /// Accepted samples per structure (how well each event set was covered).
    pub hits: Vec<usize>,
    pub findings: Vec<RegularityFinding>,
    pub findings_total: usize,
    pub eval_failures: usize,
}

impl RegularityReport {
    pub fn is_clean(&self) -> bool {
        self.findings_total == 0
    }
}

/// Sample the event sets and verify every sample that holds a node on a
/// constraint lies inside that constraint's region, at least `margin` away
/// from its boundary atoms (an approximation of closure containment).
pub fn check_constraint_regularity(
    net: &Network,
    n_samples: usize,
    margin: f64,
    seed: u64,
) -> RegularityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_rules = net.event_map().rules().len();
    let k = net.node_count();

    let mut report = RegularityReport {
        samples: n_samples,
        hits: vec![0; net.structure_count()],
        findings: Vec::new(),
        findings_total: 0,
        eval_failures: 0,
    };

    for n in 0..n_samples {
        let mut st = sample_state(net, &mut rng);
        // Cycle through "snap onto rule ri's equality atoms" and "leave as
        // drawn", so both equality-gated and open event sets get coverage.
        let choice = n % (n_rules + 1);
        if choice < n_rules {
            snap_rule_equalities(net, choice, &mut st);
        }

        let sel = match net.eval_event_map(&st, EVAL_EPS) {
            Ok(sel) => sel,
            Err(_) => {
                report.eval_failures += 1;
                continue;
            }
        };
        report.hits[sel.alpha.0] += 1;

        let s = net.structure(sel.alpha);
        let ctx = net.ctx(&st);
        for node in 0..k {
            let l = s.constraint_index(node);
            if l == 0 {
                continue;
            }
            let cs = net.constraint(node, l).expect("validated at build");
            let inside = match cs.region_contains(&ctx) {
                Ok(v) => v,
                Err(_) => {
                    report.eval_failures += 1;
                    continue;
                }
            };
            let flag = |kind: RegularityKind, report: &mut RegularityReport| {
                report.findings_total += 1;
                if report.findings.len() < MAX_STORED {
                    report.findings.push(RegularityFinding {
                        alpha: sel.alpha,
                        rule: sel.rule,
                        node,
                        constraint: l,
                        kind,
                        x: st.x.clone(),
                        tau: st.tau.clone(),
                    });
                }
            };
            if !inside {
                flag(RegularityKind::Outside, &mut report);
                continue;
            }
            let mut ordinal = 0usize;
            let mut near: Option<(usize, f64)> = None;
            cs.bound_region().visit_atoms(&mut |atom| {
                if near.is_none() {
                    if let Ok(g) = atom.g.eval(&ctx) {
                        if g.abs() < margin {
                            near = Some((ordinal, g));
                        }
                    }
                }
                ordinal += 1;
            });
            if let Some((atom, residual)) = near {
                flag(RegularityKind::NearBoundary { atom, residual }, &mut report);
            }
        }
    }
    report
}

/// Aggregate structural diagnostics. All conditions here are also enforced
/// by the builder, so a constructed network reports an empty list; the
/// function re-derives them from the finished value as a safety net and adds
/// lint-level notes (clocks that never run).
pub fn validate_network(net: &Network) -> Vec<String> {
    let mut out = Vec::new();
    let k = net.node_count();

    for (idx, s) in net.structures().iter().enumerate() {
        let alpha = AlphaId(idx);
        let name = net.structure_name(alpha);
        let f = net.field(alpha);
        if f.dim() != net.dim() {
            out.push(format!(
                "field for `{name}` covers {} coordinates, phase space has {}",
                f.dim(),
                net.dim()
            ));
        }
        if f.clock_rates().len() != net.clock_count() {
            out.push(format!(
                "field for `{name}` rates {} clocks, network declares {}",
                f.clock_rates().len(),
                net.clock_count()
            ));
        }
        if s.node_count() != k {
            out.push(format!(
                "structure `{name}` spans {} nodes, network has {k}",
                s.node_count()
            ));
        }
        for i in 0..k.min(s.node_count()) {
            let l = s.constraint_index(i);
            if l > 0 && net.constraint(i, l).is_none() {
                out.push(format!(
                    "structure `{name}` holds node {i} on undeclared constraint {l}"
                ));
            }
            if s.depends(i, i) {
                out.push(format!("structure `{name}` has a self-edge on node {i}"));
            }
        }
    }

    let mut covered = vec![false; net.structure_count()];
    for (ri, rule) in net.event_map().rules().iter().enumerate() {
        if rule.target.0 >= covered.len() {
            out.push(format!("rule {ri} targets unknown structure {}", rule.target));
        } else {
            covered[rule.target.0] = true;
        }
    }
    let d = net.event_map().default_target();
    if d.0 >= covered.len() {
        out.push(format!("default targets unknown structure {d}"));
    } else {
        covered[d.0] = true;
    }
    for (idx, c) in covered.iter().enumerate() {
        if !c {
            out.push(format!(
                "structure `{}` is unreachable: no rule or default selects it",
                net.structure_name(AlphaId(idx))
            ));
        }
    }

    for j in 0..net.clock_count() {
        if net.clock_contexts(j).is_empty() {
            out.push(format!(
                "clock `{}` never advances in any structure",
                net.clock_names()[j]
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::ConnectionStructure;
    use crate::expr::{parse_pred, Expr};
    use crate::field::ClockRate;
    use crate::models::{build_trains, TrainsParams};
    use crate::network::NetworkBuilder;

    #[test]
    fn reference_model_is_clean() {
        let net = build_trains(&TrainsParams::default());
        assert!(validate_network(&net).is_empty());
        for idx in 0..net.structure_count() {
            let rep = check_admissibility(&net, AlphaId(idx), 500, 7);
            assert!(
                rep.is_clean(),
                "structure `{}`: {:?} / {:?}",
                net.structure_name(AlphaId(idx)),
                rep.dependency_violations.first(),
                rep.tangency_violations.first()
            );
            assert_eq!(rep.eval_failures, 0);
        }
        let reg = check_constraint_regularity(&net, 2000, 1e-2, 11);
        assert!(reg.is_clean(), "{:?}", reg.findings.first());
        // Equality snapping must actually reach the stop structures.
        let a1 = net.structure_by_name("alpha1").unwrap();
        assert!(reg.hits[a1.0] > 0, "event-set sampling missed alpha1");
    }

    /// A field component moving a frozen coordinate is flagged at every
    /// sample whose node projection lies in the constraint region.
    #[test]
    fn constant_drift_on_frozen_coordinate_is_tangency_violation() {
        let mut b = NetworkBuilder::new("bad-tangency");
        b.node("u", vec![Factor::Interval { lo: -1.0, hi: 1.0 }]);
        b.node("v", vec![Factor::Interval { lo: -1.0, hi: 1.0 }]);
        b.constraint(0, 1, crate::expr::Pred::Lit(true), vec![0]);
        let free = b.structure("free", ConnectionStructure::empty(2));
        let mut hold = ConnectionStructure::empty(2);
        hold.set_constraint_index(0, 1);
        let hold = b.structure("hold", hold);
        b.field(free, vec![Expr::num(1.0), Expr::num(-1.0)], vec![]);
        // Deliberately nonzero on the frozen coordinate.
        b.field(hold, vec![Expr::num(0.1), Expr::num(-1.0)], vec![]);
        b.rule(parse_pred("x[1][1] == 0").unwrap(), hold);
        b.default_structure(free);
        let net = b.build().unwrap();

        let rep = check_admissibility(&net, hold, 300, 3);
        assert_eq!(rep.tangency_total, 300);
        assert_eq!(rep.dependency_total, 0);
    }

    /// A field that reads a node its matrix does not wire in is flagged;
    /// the same field under a matrix with the edge is not.
    #[test]
    fn off_pattern_dependence_is_flagged() {
        let build = |with_edge: bool| {
            let mut b = NetworkBuilder::new("dep");
            b.node("u", vec![Factor::RealLine]);
            b.node("v", vec![Factor::RealLine]);
            let mut s = ConnectionStructure::empty(2);
            if with_edge {
                s.set_depends(0, 1, true);
            }
            let s = b.structure("only", s);
            // f_u = x_v, f_v = 0: u listens to v.
            b.field(s, vec![Expr::state(2, 1), Expr::num(0.0)], vec![]);
            b.default_structure(s);
            (b.build().unwrap(), s)
        };

        let (net, s) = build(false);
        let rep = check_admissibility(&net, s, 200, 5);
        assert!(rep.dependency_total > 0);
        let v = &rep.dependency_violations[0];
        assert_eq!((v.node, v.on_node), (0, 1));
        assert!((v.sensitivity - 1.0).abs() < 1e-3);

        let (net, s) = build(true);
        let rep = check_admissibility(&net, s, 200, 5);
        assert_eq!(rep.dependency_total, 0);
        assert!(rep.nontriviality_warnings.is_empty());
    }

    /// An always-zero field under a wired matrix cannot demonstrate the
    /// dependence, which surfaces as a warning, not a violation.
    #[test]
    fn unused_edge_warns_but_passes() {
        let mut b = NetworkBuilder::new("lazy");
        b.node("u", vec![Factor::RealLine]);
        b.node("v", vec![Factor::RealLine]);
        let mut s = ConnectionStructure::empty(2);
        s.set_depends(0, 1, true);
        let s = b.structure("only", s);
        b.field(s, vec![Expr::num(0.0), Expr::num(0.0)], vec![]);
        b.default_structure(s);
        let net = b.build().unwrap();

        let rep = check_admissibility(&net, s, 100, 9);
        assert!(rep.is_clean());
        assert_eq!(rep.nontriviality_warnings, vec![(0, 1)]);
    }

    /// Event sets firing near the edge of an open constraint region are
    /// flagged under the requested margin; interior firings pass.
    #[test]
    fn near_boundary_event_set_is_flagged() {
        let build = |fire_at: f64| {
            let mut b = NetworkBuilder::new("edge");
            b.node("u", vec![Factor::RealLine]);
            b.clock("w");
            let region = parse_pred("x[1][1] > -1 && x[1][1] < 1").unwrap();
            b.constraint(0, 1, region, vec![0]);
            let free = b.structure("free", ConnectionStructure::empty(1));
            let mut h = ConnectionStructure::empty(1);
            h.set_constraint_index(0, 1);
            let hold = b.structure("hold", h);
            b.field(free, vec![Expr::num(1.0)], vec![ClockRate::Stopped]);
            b.field(hold, vec![Expr::num(0.0)], vec![ClockRate::Running]);
            b.rule(parse_pred(&format!("x[1][1] == {fire_at}")).unwrap(), hold);
            b.default_structure(free);
            b.build().unwrap()
        };

        let near = check_constraint_regularity(&build(0.999), 400, 0.01, 13);
        assert!(near.findings_total > 0);
        assert!(matches!(
            near.findings[0].kind,
            RegularityKind::NearBoundary { residual, .. } if residual.abs() < 0.01
        ));

        let interior = check_constraint_regularity(&build(0.0), 400, 0.01, 13);
        assert!(interior.is_clean(), "{:?}", interior.findings.first());
    }

    #[test]
    fn idle_clock_is_reported() {
        let mut b = NetworkBuilder::new("idle");
        b.node("u", vec![Factor::RealLine]);
        b.clock("never");
        let s = b.structure("only", ConnectionStructure::empty(1));
        b.field(s, vec![Expr::num(1.0)], vec![ClockRate::Stopped]);
        b.default_structure(s);
        let net = b.build().unwrap();
        let diags = validate_network(&net);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].contains("never advances"));
    }
}
