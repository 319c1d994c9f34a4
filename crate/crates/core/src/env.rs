//! Flappy Ball: a deterministic, seeded side-scroller with tunable physics.
//!
//! The world is a `width × height` box with the origin at the top-left corner,
//! so `y` grows downward and an upward flap produces a negative vertical
//! velocity. The agent is a circle pinned at `agent_x`; pipes scroll left by
//! the agent's horizontal speed every step.
//!
//! One call to [`EpisodeState::step`] applies the update in a fixed order:
//!
//! 1. `v_y += gravity`, plus `flap` when flapping up, clamped to `±vy_abs_max`;
//! 2. `v_x -= drag`, plus `forward` when flapping forward, clamped to
//!    `[vx_min, vx_max]`;
//! 3. `y += v_y` and every pipe moves left by `v_x`;
//! 4. ceiling/ground contact clamps `y`, zeroes `v_y` and costs 5;
//! 5. overlapping either column of the nearest pipe costs 1 and marks the pipe;
//! 6. a pipe whose right edge is strictly left of the agent's left edge is
//!    passed; it earns 1 only if it was never overlapped, then a new pipe is
//!    appended to keep the spacing;
//! 7. `t += 1`.

use std::collections::VecDeque;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOUNDARY_PENALTY: u32 = 5;
pub const PIPE_PENALTY: u32 = 1;

pub const BASE_FLAP: f64 = -12.0;
pub const BASE_GRAVITY: f64 = 1.0;
pub const BASE_FORWARD: f64 = 5.0;
pub const BASE_DRAG: f64 = 1.0;

/// Physics of one task: what the two actions do and which forces act.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    /// Seed of the pipe layout.
    pub seed: u32,
    /// Vertical velocity added by an upward flap (negative is up).
    pub flap: f64,
    pub gravity: f64,
    pub forward: f64,
    pub drag: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        TaskParams::base(0)
    }
}

impl TaskParams {
    pub fn base(seed: u32) -> Self {
        TaskParams {
            seed,
            flap: BASE_FLAP,
            gravity: BASE_GRAVITY,
            forward: BASE_FORWARD,
            drag: BASE_DRAG,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.flap, self.gravity, self.forward, self.drag]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("task parameters must be finite"));
        }
        if self.flap >= 0.0 {
            return Err(Error::config(format!("flap must be negative, got {}", self.flap)));
        }
        if self.gravity <= 0.0 {
            return Err(Error::config(format!("gravity must be positive, got {}", self.gravity)));
        }
        if self.forward <= 0.0 {
            return Err(Error::config(format!("forward must be positive, got {}", self.forward)));
        }
        if self.drag <= 0.0 {
            return Err(Error::config(format!("drag must be positive, got {}", self.drag)));
        }
        Ok(())
    }
}

/// One of the four tunable physical effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhysicsParam {
    Flap,
    Gravity,
    Forward,
    Drag,
}

impl PhysicsParam {
    pub const ALL: [PhysicsParam; 4] =
        [PhysicsParam::Flap, PhysicsParam::Gravity, PhysicsParam::Forward, PhysicsParam::Drag];

    pub fn name(self) -> &'static str {
        match self {
            PhysicsParam::Flap => "flap",
            PhysicsParam::Gravity => "gravity",
            PhysicsParam::Forward => "forward",
            PhysicsParam::Drag => "drag",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for PhysicsParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PhysicsParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PhysicsParam::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::config(format!("unknown physics parameter {s:?}")))
    }
}

/// Reference values the task perturbations and test grids are relative to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsBase {
    pub flap: f64,
    pub gravity: f64,
    pub forward: f64,
    pub drag: f64,
}

impl Default for PhysicsBase {
    fn default() -> Self {
        PhysicsBase { flap: BASE_FLAP, gravity: BASE_GRAVITY, forward: BASE_FORWARD, drag: BASE_DRAG }
    }
}

impl PhysicsBase {
    pub fn get(&self, p: PhysicsParam) -> f64 {
        match p {
            PhysicsParam::Flap => self.flap,
            PhysicsParam::Gravity => self.gravity,
            PhysicsParam::Forward => self.forward,
            PhysicsParam::Drag => self.drag,
        }
    }

    pub fn task(&self, seed: u32) -> TaskParams {
        TaskParams { seed, flap: self.flap, gravity: self.gravity, forward: self.forward, drag: self.drag }
    }
}

impl TaskParams {
    pub fn get(&self, p: PhysicsParam) -> f64 {
        match p {
            PhysicsParam::Flap => self.flap,
            PhysicsParam::Gravity => self.gravity,
            PhysicsParam::Forward => self.forward,
            PhysicsParam::Drag => self.drag,
        }
    }

    pub fn set(&mut self, p: PhysicsParam, v: f64) {
        match p {
            PhysicsParam::Flap => self.flap = v,
            PhysicsParam::Gravity => self.gravity = v,
            PhysicsParam::Forward => self.forward = v,
            PhysicsParam::Drag => self.drag = v,
        }
    }
}

/// Static geometry and kinematic limits of the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub width: f64,
    pub height: f64,
    pub agent_x: f64,
    pub agent_radius: f64,
    pub pipe_width: f64,
    /// Vertical opening between the two columns of a pipe.
    pub pipe_gap: f64,
    /// Horizontal free corridor between consecutive pipes (edge to edge).
    pub pipe_spacing: f64,
    /// Gap centres are drawn uniformly in `[gap_center_lo, gap_center_hi] · height`.
    pub gap_center_lo: f64,
    pub gap_center_hi: f64,
    pub vx_min: f64,
    pub vx_max: f64,
    pub vx_init: f64,
    pub vy_abs_max: f64,
    pub episode_steps: u32,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            width: 288.0,
            height: 512.0,
            agent_x: 60.0,
            agent_radius: 12.0,
            pipe_width: 40.0,
            pipe_gap: 160.0,
            pipe_spacing: 140.0,
            gap_center_lo: 0.3,
            gap_center_hi: 0.7,
            vx_min: 0.0,
            vx_max: 12.0,
            vx_init: 4.0,
            vy_abs_max: 12.0,
            episode_steps: 500,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.width,
            self.height,
            self.agent_x,
            self.agent_radius,
            self.pipe_width,
            self.pipe_gap,
            self.pipe_spacing,
            self.gap_center_lo,
            self.gap_center_hi,
            self.vx_min,
            self.vx_max,
            self.vx_init,
            self.vy_abs_max,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("world geometry must be finite"));
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::config("world width and height must be positive"));
        }
        if !(self.agent_x > 0.0 && self.agent_x < self.width) {
            return Err(Error::config(format!(
                "agent_x must lie in (0, width={}), got {}",
                self.width, self.agent_x
            )));
        }
        if self.agent_radius <= 0.0 || self.pipe_width <= 0.0 {
            return Err(Error::config("agent_radius and pipe_width must be positive"));
        }
        if self.pipe_gap <= 2.0 * self.agent_radius {
            return Err(Error::config(format!(
                "pipe_gap ({}) must exceed the agent diameter ({})",
                self.pipe_gap,
                2.0 * self.agent_radius
            )));
        }
        if self.pipe_spacing < 2.0 * self.agent_radius {
            return Err(Error::config(format!(
                "pipe_spacing ({}) must be at least the agent diameter ({})",
                self.pipe_spacing,
                2.0 * self.agent_radius
            )));
        }
        if !(0.0 <= self.vx_min && self.vx_min < self.vx_max) {
            return Err(Error::config(format!(
                "require 0 <= vx_min < vx_max, got [{}, {}]",
                self.vx_min, self.vx_max
            )));
        }
        if self.vx_init < self.vx_min || self.vx_init > self.vx_max {
            return Err(Error::config("vx_init must lie in [vx_min, vx_max]"));
        }
        if self.vy_abs_max <= 0.0 {
            return Err(Error::config("vy_abs_max must be positive"));
        }
        if self.gap_center_lo > self.gap_center_hi {
            return Err(Error::config("gap_center_lo must not exceed gap_center_hi"));
        }
        let half_gap = self.pipe_gap / 2.0;
        if self.gap_center_lo * self.height - half_gap < 0.0
            || self.gap_center_hi * self.height + half_gap > self.height
        {
            return Err(Error::config(
                "gap centre range leaves no room for the gap inside the world",
            ));
        }
        if self.episode_steps == 0 {
            return Err(Error::config("episode_steps must be positive"));
        }
        Ok(())
    }

    fn pipe_pitch(&self) -> f64 {
        self.pipe_width + self.pipe_spacing
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipe {
    pub x_right: f64,
    /// Length of the top column, measured down from the ceiling.
    pub h_top: f64,
    /// Length of the bottom column, measured up from the floor.
    pub h_bottom: f64,
    pub overlapped: bool,
    pub passed: bool,
}

impl Pipe {
    fn x_left(&self, wc: &WorldConfig) -> f64 {
        self.x_right - wc.pipe_width
    }
}

/// The six normalised sensor readings, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub x: f64,
    pub h_top: f64,
    pub h_bottom: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; 6] {
        [self.y, self.vx, self.vy, self.x, self.h_top, self.h_bottom]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ActionPair {
    pub flap_up: bool,
    pub flap_forward: bool,
}

impl ActionPair {
    pub const NONE: ActionPair = ActionPair { flap_up: false, flap_forward: false };

    pub fn new(flap_up: bool, flap_forward: bool) -> Self {
        ActionPair { flap_up, flap_forward }
    }
}

/// What happened during one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepEvents {
    pub reward: f64,
    pub boundary_contact: bool,
    pub pipe_contact: bool,
    pub pipe_passed: bool,
    /// The passed pipe was never overlapped and earned a point.
    pub pipe_credited: bool,
}

impl StepEvents {
    /// Bit 0: pipe overlap, bit 1: ceiling/ground contact.
    pub fn collision_code(&self) -> u8 {
        u8::from(self.pipe_contact) | (u8::from(self.boundary_contact) << 1)
    }
}

/// Full simulator state of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub y: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub pipes: VecDeque<Pipe>,
    pub t: u32,
    rng: ChaCha8Rng,
    /// Pipes passed without ever overlapping them.
    pub pipes_passed: u32,
    /// Penalty units: 1 per pipe-overlap step plus 5 per boundary-contact step.
    pub hit_units: u32,
    pub pipe_contact_steps: u32,
    pub boundary_contact_steps: u32,
}

impl EpisodeState {
    pub fn new(tp: &TaskParams, wc: &WorldConfig) -> Result<Self> {
        tp.validate()?;
        wc.validate()?;
        let mut state = EpisodeState {
            y: wc.height / 2.0,
            v_x: wc.vx_init,
            v_y: 0.0,
            pipes: VecDeque::new(),
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(u64::from(tp.seed)),
            pipes_passed: 0,
            hit_units: 0,
            pipe_contact_steps: 0,
            boundary_contact_steps: 0,
        };
        let mut x_right = wc.width;
        while x_right < wc.width + wc.pipe_pitch() {
            let pipe = state.spawn_pipe(x_right, wc);
            state.pipes.push_back(pipe);
            x_right += wc.pipe_pitch();
        }
        let pipe = state.spawn_pipe(x_right, wc);
        state.pipes.push_back(pipe);
        Ok(state)
    }

    fn spawn_pipe(&mut self, x_right: f64, wc: &WorldConfig) -> Pipe {
        let lo = wc.gap_center_lo * wc.height;
        let hi = wc.gap_center_hi * wc.height;
        let center = if hi > lo { self.rng.random_range(lo..=hi) } else { lo };
        let h_top = center - wc.pipe_gap / 2.0;
        let h_bottom = wc.height - wc.pipe_gap - h_top;
        Pipe { x_right, h_top, h_bottom, overlapped: false, passed: false }
    }

    pub fn is_finished(&self, wc: &WorldConfig) -> bool {
        self.t >= wc.episode_steps
    }

    /// The closest pipe that is not yet behind the agent.
    pub fn nearest_pipe(&self) -> &Pipe {
        self.pipes.front().expect("pipe queue is never empty")
    }

    pub fn observe(&self, wc: &WorldConfig) -> Observation {
        let pipe = self.nearest_pipe();
        let unit = |v: f64| v.clamp(0.0, 1.0);
        Observation {
            y: unit(self.y / wc.height),
            vx: unit((self.v_x - wc.vx_min) / (wc.vx_max - wc.vx_min)),
            vy: unit((self.v_y + wc.vy_abs_max) / (2.0 * wc.vy_abs_max)),
            x: unit((pipe.x_right - wc.agent_x) / wc.width),
            h_top: unit(pipe.h_top / wc.height),
            h_bottom: unit(pipe.h_bottom / wc.height),
        }
    }

    pub fn step(&mut self, action: ActionPair, tp: &TaskParams, wc: &WorldConfig) -> Result<StepEvents> {
        if self.is_finished(wc) {
            return Err(Error::EpisodeFinished(self.t));
        }
        let mut events = StepEvents::default();

        self.v_y += tp.gravity;
        if action.flap_up {
            self.v_y += tp.flap;
        }
        self.v_y = self.v_y.clamp(-wc.vy_abs_max, wc.vy_abs_max);

        self.v_x -= tp.drag;
        if action.flap_forward {
            self.v_x += tp.forward;
        }
        self.v_x = self.v_x.clamp(wc.vx_min, wc.vx_max);

        self.y += self.v_y;
        for pipe in self.pipes.iter_mut() {
            pipe.x_right -= self.v_x;
        }

        let r = wc.agent_radius;
        if self.y - r <= 0.0 || self.y + r >= wc.height {
            self.y = self.y.clamp(r, wc.height - r);
            self.v_y = 0.0;
            events.boundary_contact = true;
            events.reward -= f64::from(BOUNDARY_PENALTY);
            self.hit_units += BOUNDARY_PENALTY;
            self.boundary_contact_steps += 1;
        }

        let y = self.y;
        if let Some(pipe) = self.pipes.front_mut() {
            if circle_hits_pipe(wc.agent_x, y, pipe, wc) {
                pipe.overlapped = true;
                events.pipe_contact = true;
                events.reward -= f64::from(PIPE_PENALTY);
                self.hit_units += PIPE_PENALTY;
                self.pipe_contact_steps += 1;
            }
        }

        while self.nearest_pipe().x_right < wc.agent_x - r {
            let mut pipe = self.pipes.pop_front().expect("pipe queue is never empty");
            pipe.passed = true;
            events.pipe_passed = true;
            if !pipe.overlapped {
                events.pipe_credited = true;
                events.reward += 1.0;
                self.pipes_passed += 1;
            }
            let last_right = self.pipes.back().map_or(pipe.x_right, |p| p.x_right);
            let next = self.spawn_pipe(last_right + wc.pipe_pitch(), wc);
            self.pipes.push_back(next);
        }

        self.t += 1;
        Ok(events)
    }
}

fn circle_hits_pipe(cx: f64, cy: f64, pipe: &Pipe, wc: &WorldConfig) -> bool {
    let x_left = pipe.x_left(wc);
    let top = (0.0, pipe.h_top);
    let bottom = (wc.height - pipe.h_bottom, wc.height);
    [top, bottom].into_iter().any(|(y0, y1)| {
        if y1 <= y0 {
            return false;
        }
        let nx = cx.clamp(x_left, pipe.x_right);
        let ny = cy.clamp(y0, y1);
        let (dx, dy) = (cx - nx, cy - ny);
        dx * dx + dy * dy < wc.agent_radius * wc.agent_radius
    })
}

/// Anything that maps an observation to an action, one step at a time.
pub trait Policy {
    fn act(&mut self, obs: &Observation) -> ActionPair;
}

impl<F> Policy for F
where
    F: FnMut(&Observation) -> ActionPair,
{
    fn act(&mut self, obs: &Observation) -> ActionPair {
        self(obs)
    }
}

/// One row of an episode trace, recorded after the step was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub t: u32,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    /// Raw horizontal distance from the agent to the nearest pipe's right edge.
    pub pipe_x: f64,
    pub h_top: f64,
    pub h_bottom: f64,
    pub action: ActionPair,
    pub reward: f64,
    pub collision: u8,
}

pub const TRACE_HEADER: &str = "t,y,vx,vy,pipe_x,h_top,h_bottom,flap_up,flap_forward,reward,collision";

pub fn write_trace<W: Write>(mut out: W, trace: &[StepTrace]) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.y,
            r.vx,
            r.vy,
            r.pipe_x,
            r.h_top,
            r.h_bottom,
            u8::from(r.action.flap_up),
            u8::from(r.action.flap_forward),
            r.reward,
            r.collision
        )?;
    }
    Ok(())
}

/// Steps spent in each of the four action combinations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ActionUsage {
    pub flap_only: u32,
    pub forward_only: u32,
    pub both: u32,
    pub none: u32,
}

impl ActionUsage {
    pub fn record(&mut self, a: ActionPair) {
        match (a.flap_up, a.flap_forward) {
            (true, false) => self.flap_only += 1,
            (false, true) => self.forward_only += 1,
            (true, true) => self.both += 1,
            (false, false) => self.none += 1,
        }
    }

    pub fn total(&self) -> u32 {
        self.flap_only + self.forward_only + self.both + self.none
    }

    pub fn add(&mut self, other: &ActionUsage) {
        self.flap_only += other.flap_only;
        self.forward_only += other.forward_only;
        self.both += other.both;
        self.none += other.none;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    /// f0: pipes passed cleanly.
    pub pipes: u32,
    /// f1: penalty-weighted contact steps.
    pub hits: u32,
    pub pipe_contact_steps: u32,
    pub boundary_contact_steps: u32,
    pub usage: ActionUsage,
    pub trace: Option<Vec<StepTrace>>,
}

/// Runs a full episode of `episode_steps` steps under `policy`.
pub fn run_episode<P: Policy + ?Sized>(
    policy: &mut P,
    tp: &TaskParams,
    wc: &WorldConfig,
    record_trace: bool,
) -> Result<EpisodeOutcome> {
    let mut state = EpisodeState::new(tp, wc)?;
    let mut usage = ActionUsage::default();
    let mut trace = record_trace.then(|| Vec::with_capacity(wc.episode_steps as usize));
    while !state.is_finished(wc) {
        let obs = state.observe(wc);
        let action = policy.act(&obs);
        usage.record(action);
        let t = state.t;
        let events = state.step(action, tp, wc)?;
        if let Some(rows) = trace.as_mut() {
            let pipe = state.nearest_pipe();
            rows.push(StepTrace {
                t,
                y: state.y,
                vx: state.v_x,
                vy: state.v_y,
                pipe_x: pipe.x_right - wc.agent_x,
                h_top: pipe.h_top,
                h_bottom: pipe.h_bottom,
                action,
                reward: events.reward,
                collision: events.collision_code(),
            });
        }
    }
    Ok(EpisodeOutcome {
        pipes: state.pipes_passed,
        hits: state.hit_units,
        pipe_contact_steps: state.pipe_contact_steps,
        boundary_contact_steps: state.boundary_contact_steps,
        usage,
        trace,
    })
}

/// A hand-written baseline pilot that reads the world back out of the
/// normalised observation.
///
/// It flaps up whenever the position predicted for the next step without
/// flapping lies below the centre of the nearest gap, and flaps forward
/// whenever `v_x` drops under `min_speed`.
#[derive(Debug, Clone)]
pub struct HeuristicPilot {
    pub world: WorldConfig,
    pub gravity: f64,
    pub min_speed: f64,
}

impl HeuristicPilot {
    pub fn new(world: WorldConfig, gravity: f64) -> Self {
        HeuristicPilot { world, gravity, min_speed: 4.0 }
    }
}

impl Policy for HeuristicPilot {
    fn act(&mut self, obs: &Observation) -> ActionPair {
        let wc = &self.world;
        let y = obs.y * wc.height;
        let vy = obs.vy * 2.0 * wc.vy_abs_max - wc.vy_abs_max;
        let vx = obs.vx * (wc.vx_max - wc.vx_min) + wc.vx_min;
        let gap_center = obs.h_top * wc.height + wc.pipe_gap / 2.0;
        let predicted = y + (vy + self.gravity).clamp(-wc.vy_abs_max, wc.vy_abs_max);
        ActionPair::new(predicted > gap_center, vx < self.min_speed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> (TaskParams, WorldConfig) {
        (TaskParams::base(7), WorldConfig::default())
    }

    #[test]
    fn new_episode_is_deterministic() {
        let (tp, wc) = base();
        let a = EpisodeState::new(&tp, &wc).unwrap();
        let b = EpisodeState::new(&tp, &wc).unwrap();
        assert_eq!(a.pipes, b.pipes);
        assert_eq!(a.y.to_bits(), b.y.to_bits());
        assert_eq!(a.y, wc.height / 2.0);
        assert_eq!(a.v_x, wc.vx_init);
        assert_eq!(a.v_y, 0.0);
        assert_eq!(a.t, 0);
        assert_eq!((a.pipes_passed, a.hit_units), (0, 0));
    }

    #[test]
    fn seed_changes_pipes_only() {
        let wc = WorldConfig::default();
        let a = EpisodeState::new(&TaskParams::base(1), &wc).unwrap();
        let b = EpisodeState::new(&TaskParams::base(2), &wc).unwrap();
        assert_eq!((a.y, a.v_x, a.v_y), (b.y, b.v_x, b.v_y));
        assert_eq!(a.pipes.len(), b.pipes.len());
        let xa: Vec<f64> = a.pipes.iter().map(|p| p.x_right).collect();
        let xb: Vec<f64> = b.pipes.iter().map(|p| p.x_right).collect();
        assert_eq!(xa, xb);
        assert!(a.pipes.iter().zip(&b.pipes).any(|(p, q)| p.h_top != q.h_top));
    }

    #[test]
    fn first_pipe_respects_gap_identity() {
        let (tp, wc) = base();
        let s = EpisodeState::new(&tp, &wc).unwrap();
        let p = s.nearest_pipe();
        assert!((p.h_top + wc.pipe_gap + p.h_bottom - wc.height).abs() < 1e-9);
        assert!(p.h_top >= 0.0 && p.h_bottom >= 0.0);
    }

    #[test]
    fn rejects_gap_smaller_than_agent() {
        let tp = TaskParams::base(0);
        let wc = WorldConfig { pipe_gap: 24.0, ..WorldConfig::default() };
        let err = EpisodeState::new(&tp, &wc).unwrap_err();
        assert!(err.to_string().contains("pipe_gap"), "{err}");
    }

    #[test]
    fn rejects_bad_task_params() {
        let wc = WorldConfig::default();
        for tp in [
            TaskParams { flap: 1.0, ..TaskParams::base(0) },
            TaskParams { gravity: 0.0, ..TaskParams::base(0) },
            TaskParams { forward: -1.0, ..TaskParams::base(0) },
            TaskParams { drag: 0.0, ..TaskParams::base(0) },
        ] {
            assert!(matches!(EpisodeState::new(&tp, &wc), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn observe_midpoints_and_bounds() {
        let (tp, wc) = base();
        let mut s = EpisodeState::new(&tp, &wc).unwrap();
        let o = s.observe(&wc);
        assert_eq!(o.y, 0.5);
        assert_eq!(o.vy, 0.5);
        s.v_x = wc.vx_max;
        assert_eq!(s.observe(&wc).vx, 1.0);
    }

    #[test]
    fn gravity_only_step() {
        let (tp, wc) = base();
        let mut s = EpisodeState::new(&tp, &wc).unwrap();
        let e = s.step(ActionPair::NONE, &tp, &wc).unwrap();
        assert_eq!(s.v_y, 1.0);
        assert_eq!(e.reward, 0.0);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn flap_up_from_rest() {
        let (tp, wc) = base();
        let mut s = EpisodeState::new(&tp, &wc).unwrap();
        s.step(ActionPair::new(true, false), &tp, &wc).unwrap();
        assert_eq!(s.v_y, -11.0);
    }

    #[test]
    fn drag_and_forward() {
        let (tp, wc) = base();
        let mut s = EpisodeState::new(&tp, &wc).unwrap();
        s.step(ActionPair::NONE, &tp, &wc).unwrap();
        assert_eq!(s.v_x, 3.0);
        s.step(ActionPair::new(false, true), &tp, &wc).unwrap();
        assert_eq!(s.v_x, 7.0);
        for _ in 0..20 {
            s.step(ActionPair::NONE, &tp, &wc).unwrap();
        }
        assert_eq!(s.v_x, wc.vx_min);
    }

    #[test]
    fn ground_contact_costs_five() {
        let (tp, wc) = base();
        let mut s = EpisodeState::new(&tp, &wc).unwrap();
        s.y = wc.height - wc.agent_radius - 0.5;
        // Keep the pipes far away.
        for p in s.pipes.iter_mut() {
            p.x_right += 1000.0;
        }
        let e = s.step(ActionPair::NONE, &tp, &wc).unwrap();
        assert!(e.boundary_contact);
        assert_eq!(e.reward, -5.0);
        assert_eq!(s.v_y, 0.0);
        assert_eq!(s.y, wc.height - wc.agent_radius);
        assert_eq!(s.hit_units, 5);
    }

    #[test]
    fn ceiling_contact_costs_five() {
        let (tp, wc) = base();
        let mut s = EpisodeState::new(&tp, &wc).unwrap();
        s.y = wc.agent_radius + 2.0;
        for p in s.pipes.iter_mut() {
            p.x_right += 1000.0;
        }
        let e = s.step(ActionPair::new(true, false), &tp, &wc).unwrap();
        assert!(e.boundary_contact);
        assert_eq!(e.reward, -5.0);
        assert_eq!(s.y, wc.agent_radius);
    }

    #[test]
    fn pipe_overlap_costs_one_and_voids_credit() {
        let (tp, wc) = base();
        let mut s = EpisodeState::new(&tp, &wc).unwrap();
        // Put the nearest pipe right on top of the agent, agent inside the top column.
        let h_top = s.pipes[0].h_top;
        s.pipes[0].x_right = wc.agent_x + wc.pipe_width / 2.0 + s.v_x;
        s.y = h_top / 2.0 + wc.agent_radius + 1.0;
        s.v_y = -tp.gravity;
        let e = s.step(ActionPair::NONE, &tp, &wc).unwrap();
        assert!(e.pipe_contact && !e.boundary_contact);
        assert_eq!(e.reward, -1.0);
        assert!(s.pipes[0].overlapped);

        // Drift past it: no credit.
        let mut passed = false;
        for _ in 0..40 {
            s.y = wc.height / 2.0;
            s.v_y = -tp.gravity;
            s.v_x = 6.0;
            let e = s.step(ActionPair::new(false, true), &tp, &wc).unwrap();
            if e.pipe_passed {
                assert!(!e.pipe_credited);
                passed = true;
                break;
            }
        }
        assert!(passed);
        assert_eq!(s.pipes_passed, 0);
    }

    #[test]
    fn clean_pass_earns_one() {
        let (tp, wc) = base();
        let mut s = EpisodeState::new(&tp, &wc).unwrap();
        let n = s.pipes.len();
        let mut credited = 0;
        for _ in 0..200 {
            let center = s.pipes[0].h_top + wc.pipe_gap / 2.0;
            s.y = center;
            s.v_y = -tp.gravity;
            s.v_x = 6.0;
            let e = s.step(ActionPair::new(false, true), &tp, &wc).unwrap();
            assert!(!e.pipe_contact);
            if e.pipe_credited {
                credited += 1;
                assert_eq!(e.reward, 1.0);
            }
        }
        assert!(credited > 0);
        assert_eq!(s.pipes_passed, credited);
        assert_eq!(s.pipes.len(), n);
    }

    #[test]
    fn stepping_finished_episode_is_rejected() {
        let (tp, _) = base();
        let wc = WorldConfig { episode_steps: 3, ..WorldConfig::default() };
        let mut s = EpisodeState::new(&tp, &wc).unwrap();
        for _ in 0..3 {
            s.step(ActionPair::NONE, &tp, &wc).unwrap();
        }
        assert!(matches!(s.step(ActionPair::NONE, &tp, &wc), Err(Error::EpisodeFinished(3))));
    }

    #[test]
    fn idle_policy_falls_and_scores_nothing() {
        let (tp, wc) = base();
        let mut idle = |_: &Observation| ActionPair::NONE;
        let out = run_episode(&mut idle, &tp, &wc, false).unwrap();
        assert_eq!(out.pipes, 0);
        assert!(out.boundary_contact_steps > 400, "{out:?}");
        assert_eq!(out.hits, 5 * out.boundary_contact_steps + out.pipe_contact_steps);
    }

    #[test]
    fn heuristic_pilot_scores_cleanly() {
        let (_, wc) = base();
        let tp = TaskParams::base(1);
        let mut pilot = HeuristicPilot::new(wc.clone(), tp.gravity);
        let out = run_episode(&mut pilot, &tp, &wc, false).unwrap();
        assert!(out.pipes >= 10, "{out:?}");
        assert_eq!(out.hits, 0, "{out:?}");
    }

    #[test]
    fn trace_has_one_row_per_step() {
        let (tp, wc) = base();
        let mut pilot = HeuristicPilot::new(wc.clone(), tp.gravity);
        let out = run_episode(&mut pilot, &tp, &wc, true).unwrap();
        let trace = out.trace.unwrap();
        assert_eq!(trace.len(), wc.episode_steps as usize);
        assert!(trace.iter().enumerate().all(|(i, r)| r.t as usize == i));
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), trace.len() + 1);
        assert_eq!(text.lines().next().unwrap(), TRACE_HEADER);
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 11);
    }

    #[test]
    fn usage_partitions_steps() {
        let (tp, wc) = base();
        let mut k = 0u32;
        let mut cycle = |_: &Observation| {
            k += 1;
            ActionPair::new(k % 2 == 0, k % 3 == 0)
        };
        let out = run_episode(&mut cycle, &tp, &wc, false).unwrap();
        assert_eq!(out.usage.total(), wc.episode_steps);
    }
}
