//! Trajectory construction: smooth RK4 flow pieces composed at event points.
//!
//! Between events the active structure's field is integrated with classical
//! fixed-step RK4 (clocks advance exactly linearly). Each macro step is
//! scanned for guard-atom sign changes, phase-space boundary hits,
//! event-map selection flips, and termination-set entry; the earliest is
//! localized by bisection to within `eps_loc`, the state is snapped onto the
//! crossed surface where that is exact (affine equality atoms, interval
//! endpoints), and the event map is re-evaluated at the snapped state — the
//! map, not the crossing, decides the next piece.
//!
//! Holding rules:
//! - *Latching*: a coordinate snapped onto an equality surface is pinned to
//!   the exact value; it unpins as soon as the active field moves it faster
//!   than `eps_eq`. Equality guards are meaningful only through this
//!   mechanism — an unlatched comparison sees a `|g| ≤ eps_eq` band.
//! - *Boundary freeze*: a node whose interval coordinate sits on an endpoint
//!   with the field pointing outward is frozen whole (field forced to zero)
//!   and thaws only if a later piece's field points back inside.
//!
//! Degenerate behaviour is reported, not looped on: event accumulation
//! trips the Zeno guard, and an event state whose selected field immediately
//! exits its own event set (probed with a short Euler step, cycling through
//! selections without settling) stops the run with `NoContinuation`.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::connection::AlphaId;
use crate::expr::{EvalCtx, EvalError, VarRef};
use crate::network::Network;
use crate::phase::Factor;
use crate::state::NetworkState;

/// Integration parameters. `Default` gives the documented defaults; callers
/// usually override `t_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    /// Macro step size.
    pub h: f64,
    /// Event localization tolerance (bisection width, in time).
    pub eps_loc: f64,
    /// Guard tolerance: equality band half-width and latch threshold.
    pub eps_eq: f64,
    /// Simulated time horizon.
    pub t_max: f64,
    /// Hard cap on recorded events (safety valve).
    pub max_events: usize,
    /// Minimum time between processed events; crossings closer than this to
    /// the previous event are ignored. Zero disables.
    pub dwell: f64,
    /// Zeno guard window; `None` means `100·h`.
    pub zeno_window: Option<f64>,
    /// Events allowed within one window before the run stops.
    pub zeno_max_events: usize,
    /// Seed for the stochastic mode's generator.
    pub seed: u64,
    /// Write every `stride`-th step to the sample list (events always).
    pub stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            h: 1e-3,
            eps_loc: 1e-9,
            eps_eq: 1e-9,
            t_max: 10.0,
            max_events: 1_000_000,
            dwell: 0.0,
            zeno_window: None,
            zeno_max_events: 50,
            seed: 0,
            stride: 10,
        }
    }
}

/// Config validation errors.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("step h must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("eps_loc must satisfy 0 < eps_loc < h, got {0}")]
    BadEpsLoc(f64),
    #[error("eps_eq must be nonnegative and finite, got {0}")]
    BadEpsEq(f64),
    #[error("t_max must be positive and finite, got {0}")]
    BadTMax(f64),
    #[error("stride must be at least 1")]
    BadStride,
    #[error("zeno_max_events must be at least 1")]
    BadZeno,
}

impl IntegratorConfig {
    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn zeno_window(&self) -> f64 {
        self.zeno_window.unwrap_or(100.0 * self.h)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(ConfigError::BadStep(self.h));
        }
        if !(self.eps_loc > 0.0 && self.eps_loc < self.h) {
            return Err(ConfigError::BadEpsLoc(self.eps_loc));
        }
        if !(self.eps_eq >= 0.0 && self.eps_eq.is_finite()) {
            return Err(ConfigError::BadEpsEq(self.eps_eq));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(ConfigError::BadTMax(self.t_max));
        }
        if self.stride == 0 {
            return Err(ConfigError::BadStride);
        }
        if self.zeno_max_events == 0 {
            return Err(ConfigError::BadZeno);
        }
        Ok(())
    }
}

/// Why an event happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventCause {
    /// A guard atom of the event map crossed (atom index in the compiled
    /// atom table).
    Guard { atom: usize },
    /// A guard atom depending only on clocks crossed.
    ClockThreshold { atom: usize },
    /// A coordinate reached its interval endpoint and the node froze.
    BoundaryStop { coord: usize },
    /// Poisson-clocked redraw of the active structure.
    StochasticSwitch,
}

/// One event: a change of active structure, a boundary stop, or a
/// stochastic switch, with the (post-transition) state snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub t: f64,
    pub from: AlphaId,
    pub to: AlphaId,
    pub cause: EventCause,
    pub x: Vec<f64>,
    pub tau: Vec<f64>,
}

/// One trajectory sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub tau: Vec<f64>,
    pub alpha: AlphaId,
}

/// Terminal status of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    /// Reached `t_max`.
    Completed,
    /// Entered the termination set.
    Terminated { t: f64 },
    /// Every node is frozen on the phase-space boundary and all clocks are
    /// stopped; nothing can change any more.
    StoppedAtBoundary { t: f64 },
    /// More than `zeno_max_events` events inside one Zeno window.
    ZenoDetected { t: f64, count: usize, window: f64 },
    /// At an event point the selected field immediately leaves its own
    /// event set and reselection cycles without settling.
    NoContinuation { t: f64 },
    /// `max_events` recorded events.
    EventCapExceeded { t: f64, cap: usize },
    /// Expression evaluation failed (division by zero / non-finite value).
    EvalFailed { t: f64, message: String },
}

impl RunStatus {
    pub fn is_error(&self) -> bool {
        matches!(
            self,
            RunStatus::ZenoDetected { .. }
                | RunStatus::NoContinuation { .. }
                | RunStatus::EventCapExceeded { .. }
                | RunStatus::EvalFailed { .. }
        )
    }
}

/// The output of a run: samples (every `stride`-th step plus every event
/// point), the event log, and how the run ended.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
    pub status: RunStatus,
    pub final_state: NetworkState,
    pub final_alpha: AlphaId,
}

impl Trajectory {
    /// Piecewise-linear interpolation of `(x, tau)` at `t`. Exact at sample
    /// times; exact everywhere when the flow is piecewise linear (events are
    /// always sample points). At an event time the post-event state is
    /// returned. `None` outside the sampled range.
    pub fn state_at(&self, t: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let samples = &self.samples;
        if samples.is_empty() || t < samples[0].t || t > samples[samples.len() - 1].t {
            return None;
        }
        // Last sample with s.t <= t, preferring the later of equal times.
        let hi = samples.partition_point(|s| s.t <= t);
        let a = &samples[hi - 1];
        if hi == samples.len() || a.t == t {
            return Some((a.x.clone(), a.tau.clone()));
        }
        let b = &samples[hi];
        let w = (t - a.t) / (b.t - a.t);
        let lerp = |u: &[f64], v: &[f64]| {
            u.iter().zip(v).map(|(p, q)| p + w * (q - p)).collect()
        };
        Some((lerp(&a.x, &b.x), lerp(&a.tau, &b.tau)))
    }

    pub fn event_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|e| e.t)
    }
}

/// Errors from the standalone piece/locate helpers.
#[derive(Debug, thiserror::Error)]
pub enum PieceError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("bracket [{t0}, {t1}] contains no sign change or selection flip")]
    NoCrossing { t0: f64, t1: f64 },
    #[error("bracket width must be positive and finite, got {0}")]
    BadBracket(f64),
}

// ---------------------------------------------------------------------------
// Internal stepping machinery.

#[derive(Debug, Clone, Copy, PartialEq)]
enum CandKind {
    /// Guard atom root (atom table index).
    Atom(usize),
    /// Interval endpoint hit: flat coordinate, endpoint value.
    Boundary(usize, f64),
    /// Event-map selection flip not tied to a single atom root.
    Selection,
    /// Termination predicate became true.
    Termination,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    tau: f64,
    kind: CandKind,
}

struct Run<'n> {
    net: &'n Network,
    cfg: &'n IntegratorConfig,
    zeno_window: f64,
    state: NetworkState,
    alpha: AlphaId,
    /// Per-node boundary freeze.
    node_frozen: Vec<bool>,
    /// Interval coordinates: (flat index, lo, hi).
    intervals: Vec<(usize, f64, f64)>,
    samples: Vec<Sample>,
    events: Vec<EventRecord>,
    recent_events: VecDeque<f64>,
    steps_since_sample: usize,
    stochastic: bool,
}

/// RK4 stage scratch, sized once per run.
struct Scratch {
    k: [Vec<f64>; 4],
    xs: Vec<f64>,
    taus: Vec<f64>,
    x_end: Vec<f64>,
    tau_end: Vec<f64>,
    raw: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize, clocks: usize) -> Scratch {
        Scratch {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            xs: vec![0.0; dim],
            taus: vec![0.0; clocks],
            x_end: vec![0.0; dim],
            tau_end: vec![0.0; clocks],
            raw: vec![0.0; dim],
        }
    }
}

impl<'n> Run<'n> {
    fn new(net: &'n Network, x0: NetworkState, cfg: &'n IntegratorConfig, stochastic: bool) -> Run<'n> {
        let mut intervals = Vec::new();
        for flat in 0..net.dim() {
            if let Factor::Interval { lo, hi } = net.phase().factor_flat(flat) {
                intervals.push((flat, lo, hi));
            }
        }
        Run {
            net,
            cfg,
            zeno_window: cfg.zeno_window(),
            state: x0,
            alpha: AlphaId(0),
            node_frozen: vec![false; net.node_count()],
            intervals,
            samples: Vec::new(),
            events: Vec::new(),
            recent_events: VecDeque::new(),
            steps_since_sample: 0,
            stochastic,
        }
    }

    fn ctx_of<'a>(&'a self, x: &'a [f64], tau: &'a [f64]) -> EvalCtx<'a> {
        EvalCtx { x, tau, params: self.net.param_values() }
    }

    /// Raw field of `alpha` (no freezing, no latches) at explicit buffers.
    fn raw_deriv(&self, alpha: AlphaId, x: &[f64], tau: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        self.net.field(alpha).eval_into(&self.ctx_of(x, tau), out)
    }

    /// Field actually integrated: frozen nodes and latched coordinates held.
    fn deriv(&self, alpha: AlphaId, x: &[f64], tau: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        self.raw_deriv(alpha, x, tau, out)?;
        for (node, &frozen) in self.node_frozen.iter().enumerate() {
            if frozen {
                let off = self.net.phase().node_offset(node);
                for c in off..off + self.net.phase().node_dim(node) {
                    out[c] = 0.0;
                }
            }
        }
        for (&c, _) in self.state.latched.iter() {
            out[c] = 0.0;
        }
        Ok(())
    }

    /// One RK4 step of size `dt` from the current state under `alpha`,
    /// into `x_end`/`tau_end` (clocks advanced exactly).
    fn rk4(&self, alpha: AlphaId, dt: f64, s: &mut Scratch) -> Result<(), EvalError> {
        let x0 = &self.state.x;
        let tau0 = &self.state.tau;
        let rates: Vec<f64> = self.net.field(alpha).clock_rates().iter().map(|r| r.value()).collect();
        // Stage offsets for classical RK4.
        const C: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
        for stage in 0..4 {
            if stage == 0 {
                s.xs.copy_from_slice(x0);
            } else {
                let prev = stage - 1;
                for (i, xi) in s.xs.iter_mut().enumerate() {
                    *xi = x0[i] + dt * C[stage] * s.k[prev][i];
                }
            }
            for (j, t) in s.taus.iter_mut().enumerate() {
                *t = tau0[j] + dt * C[stage] * rates[j];
            }
            let (iter, rest) = s.k.split_at_mut(stage);
            let _ = iter;
            self.deriv(alpha, &s.xs, &s.taus, &mut rest[0])?;
        }
        for i in 0..s.x_end.len() {
            s.x_end[i] = x0[i]
                + dt / 6.0 * (s.k[0][i] + 2.0 * s.k[1][i] + 2.0 * s.k[2][i] + s.k[3][i]);
        }
        for (j, t) in s.tau_end.iter_mut().enumerate() {
            *t = tau0[j] + dt * rates[j];
        }
        // Hold latched coordinates exactly.
        for (&c, &v) in self.state.latched.iter() {
            s.x_end[c] = v;
        }
        // Frozen nodes do not move at all.
        for (node, &frozen) in self.node_frozen.iter().enumerate() {
            if frozen {
                let off = self.net.phase().node_offset(node);
                for c in off..off + self.net.phase().node_dim(node) {
                    s.x_end[c] = x0[c];
                }
            }
        }
        Ok(())
    }

    /// State a sub-step `tau_step ∈ [0, dt]` into the current macro step.
    fn state_at_offset(&self, tau_step: f64, s: &mut Scratch) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
        if tau_step == 0.0 {
            return Ok((self.state.x.clone(), self.state.tau.clone()));
        }
        self.rk4(self.alpha, tau_step, s)?;
        Ok((s.x_end.clone(), s.tau_end.clone()))
    }

    /// Derive the boundary freeze for the current state/alpha: node frozen
    /// iff an interval coordinate sits on an endpoint with the raw field not
    /// pointing strictly inward.
    fn refresh_freeze(&mut self, s: &mut Scratch) -> Result<(), EvalError> {
        self.raw_deriv(self.alpha, &self.state.x, &self.state.tau, &mut s.raw)?;
        let eps = self.cfg.eps_eq;
        for node in 0..self.net.node_count() {
            let off = self.net.phase().node_offset(node);
            let dim = self.net.phase().node_dim(node);
            let mut frozen = false;
            for &(c, lo, hi) in &self.intervals {
                if c < off || c >= off + dim {
                    continue;
                }
                let x = self.state.x[c];
                let f = s.raw[c];
                if (x - lo).abs() <= eps && f <= eps {
                    frozen = true;
                }
                if (x - hi).abs() <= eps && f >= -eps {
                    frozen = true;
                }
            }
            self.node_frozen[node] = frozen;
        }
        Ok(())
    }

    /// Unpin latched coordinates the active field moves beyond `eps_eq`.
    fn refresh_latches(&mut self, s: &mut Scratch) -> Result<(), EvalError> {
        if self.state.latched.is_empty() {
            return Ok(());
        }
        self.raw_deriv(self.alpha, &self.state.x, &self.state.tau, &mut s.raw)?;
        let depart: Vec<usize> = self
            .state
            .latched
            .keys()
            .copied()
            .filter(|&c| s.raw[c].abs() > self.cfg.eps_eq)
            .collect();
        for c in depart {
            self.state.unlatch(c);
        }
        Ok(())
    }

    /// Warn when a held coordinate's raw field is materially nonzero: the
    /// right-hand derivative of the trajectory then differs from the active
    /// field, which indicates an inadmissible model, not an integrator step.
    fn diagnose_held(&self, s: &mut Scratch) {
        if self.state.latched.is_empty() {
            return;
        }
        if self
            .raw_deriv(self.alpha, &self.state.x, &self.state.tau, &mut s.raw)
            .is_err()
        {
            return;
        }
        for (&c, _) in self.state.latched.iter() {
            if s.raw[c].abs() > 1e-6 {
                log::warn!(
                    "t={:.6}: coordinate {} held on an equality surface while field component = {:.3e} under structure {}; the model's field is not admissible there",
                    self.state.t,
                    c,
                    s.raw[c],
                    self.net.structure_name(self.alpha),
                );
            }
        }
    }

    fn selection_at(&self, x: &[f64], tau: &[f64]) -> Result<AlphaId, EvalError> {
        Ok(self
            .net
            .event_map()
            .eval(&self.ctx_of(x, tau), self.cfg.eps_eq, &self.state.sticky_fired)?
            .alpha)
    }

    fn termination_holds(&self, x: &[f64], tau: &[f64]) -> Result<bool, EvalError> {
        match self.net.termination_bound() {
            None => Ok(false),
            Some(p) => p.holds(&self.ctx_of(x, tau), self.cfg.eps_eq),
        }
    }

    /// Scan one macro step `[0, dt]` for crossings; `s.x_end`/`s.tau_end`
    /// must already hold the step's endpoint. Returns candidates sorted by
    /// time.
    fn scan(&self, dt: f64, s: &mut Scratch) -> Result<Vec<Candidate>, EvalError> {
        let mut found = Vec::new();
        let em = self.net.event_map();
        let ctx0 = EvalCtx { x: &self.state.x, tau: &self.state.tau, params: self.net.param_values() };
        let ctx1 = EvalCtx { x: &s.x_end, tau: &s.tau_end, params: self.net.param_values() };

        for i in 0..em.atoms().len() {
            let g0 = em.atom_residual(i, &ctx0)?;
            let g1 = em.atom_residual(i, &ctx1)?;
            if g0 != 0.0 && g1 != 0.0 && g0.signum() != g1.signum() {
                found.push((i, g0 < 0.0, CandKind::Atom(i)));
            }
        }

        let mut cands = Vec::new();
        for (_, below0, kind) in &found {
            let CandKind::Atom(i) = *kind else { unreachable!() };
            let tau = self.bisect_root(dt, s, |run, x, tau, sc| {
                let g = run.net.event_map().atom_residual(
                    i,
                    &EvalCtx { x, tau, params: run.net.param_values() },
                )?;
                let _ = sc;
                Ok(if *below0 { g >= 0.0 } else { g <= 0.0 })
            })?;
            cands.push(Candidate { tau, kind: *kind });
        }

        for &(c, lo, hi) in &self.intervals {
            let (node, _) = self.net.phase().node_of_flat(c);
            if self.node_frozen[node] {
                continue;
            }
            for end in [lo, hi] {
                let r0 = self.state.x[c] - end;
                let r1 = s.x_end[c] - end;
                if r0 != 0.0 && r1 != 0.0 && r0.signum() != r1.signum() {
                    let below = r0 < 0.0;
                    let tau = self.bisect_root(dt, s, |_, x, _, _| {
                        let r = x[c] - end;
                        Ok(if below { r >= 0.0 } else { r <= 0.0 })
                    })?;
                    cands.push(Candidate { tau, kind: CandKind::Boundary(c, end) });
                }
            }
        }

        let sel_end = self.selection_at(&s.x_end, &s.tau_end)?;
        if sel_end != self.alpha {
            let tau = self.bisect_root(dt, s, |run, x, tau, _| {
                Ok(run.selection_at(x, tau)? != run.alpha)
            })?;
            cands.push(Candidate { tau, kind: CandKind::Selection });
        }

        if self.net.termination_bound().is_some() && self.termination_holds(&s.x_end, &s.tau_end)? {
            let tau = self.bisect_root(dt, s, |run, x, tau, _| run.termination_holds(x, tau))?;
            cands.push(Candidate { tau, kind: CandKind::Termination });
        }

        cands.sort_by(|a, b| a.tau.total_cmp(&b.tau));
        Ok(cands)
    }

    /// Earliest `tau ∈ (0, dt]` where `flipped` becomes true, to within
    /// `eps_loc`; `flipped` must be false at 0 and true at `dt`.
    fn bisect_root(
        &self,
        dt: f64,
        s: &mut Scratch,
        flipped: impl Fn(&Run<'n>, &[f64], &[f64], &mut Scratch) -> Result<bool, EvalError>,
    ) -> Result<f64, EvalError> {
        let mut lo = 0.0;
        let mut hi = dt;
        while hi - lo > self.cfg.eps_loc {
            let mid = 0.5 * (lo + hi);
            let (x, tau) = self.state_at_offset(mid, s)?;
            if flipped(self, &x, &tau, s)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Probe whether flowing under `start` is self-consistent at `state`;
    /// returns the settled selection, or `None` for a reselection cycle.
    fn settle(&self, start: AlphaId, x: &[f64], tau: &[f64], s: &mut Scratch) -> Result<Option<AlphaId>, EvalError> {
        const SETTLE_BOUND: usize = 8;
        let delta = self
            .cfg
            .eps_loc
            .max(10.0 * self.cfg.eps_eq)
            .max(self.cfg.h * 1e-3);
        let mut visited: Vec<AlphaId> = Vec::with_capacity(SETTLE_BOUND);
        let mut cur = start;
        for _ in 0..SETTLE_BOUND {
            // Euler probe under `cur`, honoring holds as a fresh piece would.
            self.raw_deriv(cur, x, tau, &mut s.raw)?;
            let rates = self.net.field(cur).clock_rates();
            let mut px = x.to_vec();
            let mut ptau = tau.to_vec();
            for (&c, _) in self.state.latched.iter() {
                if s.raw[c].abs() <= self.cfg.eps_eq {
                    s.raw[c] = 0.0;
                }
            }
            // Boundary: outward motion at an endpoint is suppressed.
            for &(c, lo, hi) in &self.intervals {
                let at_lo = (x[c] - lo).abs() <= self.cfg.eps_eq && s.raw[c] < 0.0;
                let at_hi = (x[c] - hi).abs() <= self.cfg.eps_eq && s.raw[c] > 0.0;
                if at_lo || at_hi {
                    let (node, _) = self.net.phase().node_of_flat(c);
                    let off = self.net.phase().node_offset(node);
                    for cc in off..off + self.net.phase().node_dim(node) {
                        s.raw[cc] = 0.0;
                    }
                }
            }
            for (i, v) in px.iter_mut().enumerate() {
                *v += delta * s.raw[i];
            }
            for (j, v) in ptau.iter_mut().enumerate() {
                *v += delta * rates[j].value();
            }
            let next = self.selection_at(&px, &ptau)?;
            if next == cur {
                return Ok(Some(cur));
            }
            if visited.contains(&next) {
                return Ok(None);
            }
            visited.push(cur);
            cur = next;
        }
        Ok(None)
    }

    fn push_sample(&mut self, force: bool) {
        let sample = Sample {
            t: self.state.t,
            x: self.state.x.clone(),
            tau: self.state.tau.clone(),
            alpha: self.alpha,
        };
        if let Some(last) = self.samples.last() {
            if *last == sample {
                return;
            }
            if !force && last.t == sample.t {
                return;
            }
        }
        self.samples.push(sample);
    }

    /// Zeno bookkeeping; returns the status if the guard trips.
    fn note_event(&mut self, t: f64) -> Option<RunStatus> {
        self.recent_events.push_back(t);
        while let Some(&front) = self.recent_events.front() {
            if front < t - self.zeno_window {
                self.recent_events.pop_front();
            } else {
                break;
            }
        }
        if self.recent_events.len() > self.cfg.zeno_max_events {
            return Some(RunStatus::ZenoDetected {
                t,
                count: self.recent_events.len(),
                window: self.zeno_window,
            });
        }
        if self.events.len() >= self.cfg.max_events {
            return Some(RunStatus::EventCapExceeded { t, cap: self.cfg.max_events });
        }
        None
    }

    /// Snap the state onto the surfaces crossed by a cluster of candidates.
    fn snap_cluster(&mut self, cluster: &[Candidate]) {
        for cand in cluster {
            match cand.kind {
                CandKind::Boundary(c, end) => {
                    self.state.x[c] = end;
                }
                CandKind::Atom(i) => self.snap_equality_atom(i, false),
                CandKind::Selection | CandKind::Termination => {}
            }
        }
        // A selection flip localizes at the *edge* of an equality band, so
        // the crossing atom itself can fall just outside the cluster window.
        // Snap every equality atom holding within the band, or a residue up
        // to `eps_eq` survives the event and re-crosses zero later.
        for i in 0..self.net.event_map().atoms().len() {
            self.snap_equality_atom(i, true);
        }
    }

    /// Snap one equality atom's surface: pin a single-coordinate surface,
    /// orthogonally project onto a multi-coordinate affine one. With
    /// `band_only`, act only when the residual is inside the equality band.
    fn snap_equality_atom(&mut self, i: usize, band_only: bool) {
        let em = self.net.event_map();
        if em.atoms()[i].atom.op != crate::expr::CmpOp::Eq {
            return;
        }
        let Some(af) = em.atom_expr(i).affine(self.net.param_values()) else {
            return;
        };
        let ctx = EvalCtx {
            x: &self.state.x,
            tau: &self.state.tau,
            params: self.net.param_values(),
        };
        let Ok(g) = em.atom_residual(i, &ctx) else { return };
        if band_only && (g == 0.0 || g.abs() > self.cfg.eps_eq) {
            return;
        }
        if let Some((VarRef::X(c), w, _)) = af.single_var() {
            let v = self.state.x[c] - g / w;
            self.state.latch(c, v);
        } else if af.terms.iter().all(|(v, _)| matches!(v, VarRef::X(_))) {
            // Multi-coordinate affine surface: orthogonal projection onto
            // {g = 0}; no pin (the surface is held only if the selected
            // field vanishes there).
            let norm2: f64 = af.terms.iter().map(|(_, w)| w * w).sum();
            if norm2 > 0.0 {
                for &(v, w) in &af.terms {
                    let VarRef::X(c) = v else { continue };
                    self.state.x[c] -= g * w / norm2;
                }
            }
        }
    }

    /// Choose the recorded cause for a selection change at an event point.
    fn attribute_cause(
        &self,
        cluster: &[Candidate],
        pre_x: &[f64],
        pre_tau: &[f64],
    ) -> EventCause {
        let em = self.net.event_map();
        // A crossing atom from the cluster, if any, is the direct cause.
        for cand in cluster {
            if let CandKind::Atom(i) = cand.kind {
                return if em.atoms()[i].clock_only {
                    EventCause::ClockThreshold { atom: i }
                } else {
                    EventCause::Guard { atom: i }
                };
            }
        }
        // Else find an atom whose truth differs between the pre-step state
        // and the snapped state (band-edge flips localize this way).
        let ctx0 = EvalCtx { x: pre_x, tau: pre_tau, params: self.net.param_values() };
        let ctx1 = EvalCtx {
            x: &self.state.x,
            tau: &self.state.tau,
            params: self.net.param_values(),
        };
        for i in 0..em.atoms().len() {
            let t0 = em.atom_truth(i, &ctx0, self.cfg.eps_eq).unwrap_or(false)
                || self.state.sticky_fired.contains(&i) && em.atoms()[i].sticky;
            let t1 = em.atom_truth(i, &ctx1, self.cfg.eps_eq).unwrap_or(false)
                || self.state.sticky_fired.contains(&i) && em.atoms()[i].sticky;
            if t0 != t1 {
                return if em.atoms()[i].clock_only {
                    EventCause::ClockThreshold { atom: i }
                } else {
                    EventCause::Guard { atom: i }
                };
            }
        }
        for cand in cluster {
            if let CandKind::Boundary(c, _) = cand.kind {
                return EventCause::BoundaryStop { coord: c };
            }
        }
        EventCause::Guard { atom: 0 }
    }

    /// True when nothing can ever change: every node boundary-frozen or
    /// zero-field-held is too strong a claim, so this only fires when all
    /// nodes are frozen on the boundary and every clock is stopped.
    fn fully_stopped(&self) -> bool {
        if self.stochastic {
            return false;
        }
        self.node_frozen.iter().all(|&f| f)
            && self
                .net
                .field(self.alpha)
                .clock_rates()
                .iter()
                .all(|r| r.value() == 0.0)
    }

    fn finish(self, status: RunStatus) -> Trajectory {
        Trajectory {
            samples: self.samples,
            events: self.events,
            status,
            final_state: self.state,
            final_alpha: self.alpha,
        }
    }
}

/// Integrate the network from `x0` until `t_max`, the termination set, a
/// full boundary stop, or an error. See the module docs for the event
/// semantics.
pub fn integrate(net: &Network, x0: NetworkState, cfg: &IntegratorConfig) -> Trajectory {
    let mut run = Run::new(net, x0, cfg, false);
    let mut s = Scratch::new(net.dim(), net.clock_count());

    macro_rules! try_eval {
        ($run:expr, $e:expr) => {
            match $e {
                Ok(v) => v,
                Err(err) => {
                    let t = $run.state.t;
                    return $run.finish(RunStatus::EvalFailed { t, message: err.to_string() });
                }
            }
        };
    }

    // Initial selection: fire initially-true sticky atoms, evaluate the
    // map, and require the very first piece to be self-consistent.
    {
        let ctx = EvalCtx { x: &run.state.x, tau: &run.state.tau, params: net.param_values() };
        let fired = try_eval!(run, net.event_map().newly_fired(&ctx, cfg.eps_eq, &run.state.sticky_fired));
        run.state.sticky_fired.extend(fired);
        let sel = try_eval!(run, run.selection_at(&run.state.x, &run.state.tau));
        match try_eval!(run, run.settle(sel, &run.state.x, &run.state.tau, &mut s)) {
            Some(alpha) => run.alpha = alpha,
            None => {
                let t = run.state.t;
                run.push_sample(true);
                return run.finish(RunStatus::NoContinuation { t });
            }
        }
        try_eval!(run, run.refresh_freeze(&mut s));
        try_eval!(run, run.refresh_latches(&mut s));
        run.push_sample(true);
        if try_eval!(run, run.termination_holds(&run.state.x, &run.state.tau)) {
            let t = run.state.t;
            return run.finish(RunStatus::Terminated { t });
        }
        if run.fully_stopped() {
            let t = run.state.t;
            return run.finish(RunStatus::StoppedAtBoundary { t });
        }
    }

    let t_end = run.state.t + cfg.t_max;
    loop {
        let dt = (t_end - run.state.t).min(cfg.h);
        if dt <= cfg.h * 1e-12 {
            run.push_sample(true);
            return run.finish(RunStatus::Completed);
        }

        try_eval!(run, run.rk4(run.alpha, dt, &mut s));
        let cands = try_eval!(run, run.scan(dt, &mut s));

        // Respect the dwell floor: drop crossings too close to the last event.
        let last_event_t = run.events.last().map(|e| e.t);
        let cands: Vec<Candidate> = cands
            .into_iter()
            .filter(|c| match last_event_t {
                Some(te) if cfg.dwell > 0.0 => run.state.t + c.tau - te >= cfg.dwell,
                _ => true,
            })
            .collect();

        if cands.is_empty() {
            run.state.t += dt;
            std::mem::swap(&mut run.state.x, &mut s.x_end);
            std::mem::swap(&mut run.state.tau, &mut s.tau_end);
            run.state.apply_latches();
            run.steps_since_sample += 1;
            if run.steps_since_sample >= cfg.stride {
                run.steps_since_sample = 0;
                run.push_sample(false);
            }
            continue;
        }

        // Process the earliest crossing (with everything inside eps_loc of it).
        let t_star = run.state.t + cands[0].tau;
        let cluster: Vec<Candidate> = cands
            .iter()
            .copied()
            .take_while(|c| c.tau <= cands[0].tau + cfg.eps_loc)
            .collect();

        let (x_star, tau_star) = try_eval!(run, run.state_at_offset(cands[0].tau, &mut s));
        let pre_x = run.state.x.clone();
        let pre_tau = run.state.tau.clone();
        run.state.t = t_star;
        run.state.x = x_star;
        run.state.tau = tau_star;
        run.state.apply_latches();
        run.snap_cluster(&cluster);

        let ctx = EvalCtx { x: &run.state.x, tau: &run.state.tau, params: net.param_values() };
        let fired = try_eval!(run, net.event_map().newly_fired(&ctx, cfg.eps_eq, &run.state.sticky_fired));
        run.state.sticky_fired.extend(fired);

        let sel = try_eval!(run, run.selection_at(&run.state.x, &run.state.tau));
        let settled = match try_eval!(run, run.settle(sel, &run.state.x, &run.state.tau, &mut s)) {
            Some(alpha) => alpha,
            None => {
                run.push_sample(true);
                let t = run.state.t;
                return run.finish(RunStatus::NoContinuation { t });
            }
        };

        let boundary_hit = cluster
            .iter()
            .find_map(|c| match c.kind {
                CandKind::Boundary(coord, _) => Some(coord),
                _ => None,
            });

        let from = run.alpha;
        run.alpha = settled;
        try_eval!(run, run.refresh_latches(&mut s));
        try_eval!(run, run.refresh_freeze(&mut s));
        run.diagnose_held(&mut s);

        let record = if settled != from {
            Some(EventRecord {
                t: t_star,
                from,
                to: settled,
                cause: match boundary_hit {
                    Some(coord) if !cluster.iter().any(|c| matches!(c.kind, CandKind::Atom(_))) => {
                        EventCause::BoundaryStop { coord }
                    }
                    _ => run.attribute_cause(&cluster, &pre_x, &pre_tau),
                },
                x: run.state.x.clone(),
                tau: run.state.tau.clone(),
            })
        } else if let Some(coord) = boundary_hit {
            Some(EventRecord {
                t: t_star,
                from,
                to: settled,
                cause: EventCause::BoundaryStop { coord },
                x: run.state.x.clone(),
                tau: run.state.tau.clone(),
            })
        } else {
            None
        };

        run.push_sample(true);
        if let Some(rec) = record {
            // Strictly increasing event times: merge-suppress duplicates at
            // the same localized instant.
            if run.events.last().map(|e| e.t >= rec.t).unwrap_or(false) {
                log::debug!("suppressing coincident event at t={}", rec.t);
            } else {
                run.events.push(rec);
                if let Some(status) = run.note_event(t_star) {
                    return run.finish(status);
                }
            }
        }

        if try_eval!(run, run.termination_holds(&run.state.x, &run.state.tau)) {
            let t = run.state.t;
            return run.finish(RunStatus::Terminated { t });
        }
        if run.fully_stopped() {
            let t = run.state.t;
            return run.finish(RunStatus::StoppedAtBoundary { t });
        }
    }
}

/// Flow the single smooth piece of `alpha` for `dt` (no event detection):
/// fixed-step RK4 with the final partial step shortened, clocks advanced
/// exactly, boundary freeze and latches honored as a fresh piece would.
pub fn flow_under_alpha(
    net: &Network,
    alpha: AlphaId,
    state: &NetworkState,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<NetworkState, PieceError> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(PieceError::BadBracket(dt));
    }
    let mut run = Run::new(net, state.clone(), cfg, false);
    run.alpha = alpha;
    let mut s = Scratch::new(net.dim(), net.clock_count());
    run.refresh_freeze(&mut s)?;
    run.refresh_latches(&mut s)?;
    let t_end = state.t + dt;
    loop {
        let step = (t_end - run.state.t).min(cfg.h);
        if step <= cfg.h * 1e-12 {
            run.state.t = t_end;
            return Ok(run.state);
        }
        run.rk4(alpha, step, &mut s)?;
        run.state.t += step;
        std::mem::swap(&mut run.state.x, &mut s.x_end);
        std::mem::swap(&mut run.state.tau, &mut s.tau_end);
        run.state.apply_latches();
    }
}

/// Localize the earliest event in `[state.t, state.t + h_bracket]` under
/// `alpha`: the first guard-atom sign change, boundary hit, or selection
/// flip. Returns the event time and the crossing atom's table index (`None`
/// for boundary hits and pure selection flips).
pub fn locate_event(
    net: &Network,
    alpha: AlphaId,
    state: &NetworkState,
    h_bracket: f64,
    cfg: &IntegratorConfig,
) -> Result<(f64, Option<usize>), PieceError> {
    if !(h_bracket > 0.0) || !h_bracket.is_finite() {
        return Err(PieceError::BadBracket(h_bracket));
    }
    let mut run = Run::new(net, state.clone(), cfg, false);
    run.alpha = alpha;
    let mut s = Scratch::new(net.dim(), net.clock_count());
    run.refresh_freeze(&mut s)?;
    run.rk4(alpha, h_bracket, &mut s)?;
    let cands = run.scan(h_bracket, &mut s)?;
    match cands.first() {
        None => Err(PieceError::NoCrossing { t0: state.t, t1: state.t + h_bracket }),
        Some(c) => Ok((
            state.t + c.tau,
            match c.kind {
                CandKind::Atom(i) => Some(i),
                _ => None,
            },
        )),
    }
}

/// Integrate with Poisson-clocked switching instead of the event map: gaps
/// between switches are Exponential(λ) draws from a generator seeded by
/// `cfg.seed`, and at each switch `sampler` picks the next structure.
/// Every switch is recorded (`cause: StochasticSwitch`), even when the draw
/// repeats the current structure. Boundary freezing, latching, and clock
/// advancement behave exactly as in [`integrate`]; the event map is not
/// consulted after the initial selection.
pub fn integrate_stochastic(
    net: &Network,
    lambda: f64,
    mut sampler: impl FnMut(&mut ChaCha8Rng) -> AlphaId,
    x0: NetworkState,
    cfg: &IntegratorConfig,
) -> Trajectory {
    let mut run = Run::new(net, x0, cfg, true);
    let mut s = Scratch::new(net.dim(), net.clock_count());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let exp = Exp::new(lambda).expect("switching rate must be positive");

    macro_rules! try_eval {
        ($run:expr, $e:expr) => {
            match $e {
                Ok(v) => v,
                Err(err) => {
                    let t = $run.state.t;
                    return $run.finish(RunStatus::EvalFailed { t, message: err.to_string() });
                }
            }
        };
    }

    run.alpha = try_eval!(run, run.selection_at(&run.state.x, &run.state.tau));
    try_eval!(run, run.refresh_freeze(&mut s));
    try_eval!(run, run.refresh_latches(&mut s));
    run.push_sample(true);

    let t_end = run.state.t + cfg.t_max;
    let mut t_switch = run.state.t + exp.sample(&mut rng);
    loop {
        let horizon = t_switch.min(t_end);
        let dt = (horizon - run.state.t).min(cfg.h);
        if dt > cfg.h * 1e-12 {
            try_eval!(run, run.rk4(run.alpha, dt, &mut s));

            // Boundary hits still stop nodes in stochastic mode.
            let mut boundary: Option<(f64, usize, f64)> = None;
            for &(c, lo, hi) in &run.intervals {
                let (node, _) = net.phase().node_of_flat(c);
                if run.node_frozen[node] {
                    continue;
                }
                for end in [lo, hi] {
                    let r0 = run.state.x[c] - end;
                    let r1 = s.x_end[c] - end;
                    if r0 != 0.0 && r1 != 0.0 && r0.signum() != r1.signum() {
                        let below = r0 < 0.0;
                        let tau = try_eval!(
                            run,
                            run.bisect_root(dt, &mut s, |_, x, _, _| {
                                let r = x[c] - end;
                                Ok(if below { r >= 0.0 } else { r <= 0.0 })
                            })
                        );
                        if boundary.map(|(bt, _, _)| tau < bt).unwrap_or(true) {
                            boundary = Some((tau, c, end));
                        }
                    }
                }
            }

            if let Some((tau, c, end)) = boundary {
                let t_star = run.state.t + tau;
                let (x, tau_v) = try_eval!(run, run.state_at_offset(tau, &mut s));
                run.state.t = t_star;
                run.state.x = x;
                run.state.tau = tau_v;
                run.state.apply_latches();
                run.state.x[c] = end;
                try_eval!(run, run.refresh_freeze(&mut s));
                let alpha = run.alpha;
                run.events.push(EventRecord {
                    t: t_star,
                    from: alpha,
                    to: alpha,
                    cause: EventCause::BoundaryStop { coord: c },
                    x: run.state.x.clone(),
                    tau: run.state.tau.clone(),
                });
                run.push_sample(true);
                if let Some(status) = run.note_event(t_star) {
                    return run.finish(status);
                }
                continue;
            }

            run.state.t += dt;
            std::mem::swap(&mut run.state.x, &mut s.x_end);
            std::mem::swap(&mut run.state.tau, &mut s.tau_end);
            run.state.apply_latches();
            run.steps_since_sample += 1;
            if run.steps_since_sample >= cfg.stride {
                run.steps_since_sample = 0;
                run.push_sample(false);
            }
            continue;
        }

        if t_switch >= t_end {
            run.state.t = t_end;
            run.push_sample(true);
            return run.finish(RunStatus::Completed);
        }

        // Switch point reached.
        run.state.t = t_switch;
        let from = run.alpha;
        run.alpha = sampler(&mut rng);
        try_eval!(run, run.refresh_latches(&mut s));
        try_eval!(run, run.refresh_freeze(&mut s));
        run.events.push(EventRecord {
            t: t_switch,
            from,
            to: run.alpha,
            cause: EventCause::StochasticSwitch,
            x: run.state.x.clone(),
            tau: run.state.tau.clone(),
        });
        run.push_sample(true);
        if let Some(status) = run.note_event(t_switch) {
            return run.finish(status);
        }
        t_switch = run.state.t + exp.sample(&mut rng);
    }
}
