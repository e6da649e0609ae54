//! Deterministic closed-loop 2D world: a kinematic ego vehicle executing
//! trajectory actions, scripted traffic agents, event detection, and
//! procedural scenario generation for the two evaluation suites.
//!
//! Control model: each step the ego tracks only the FIRST waypoint of the
//! commanded trajectory (receding-horizon replanning). Heading turns toward
//! the waypoint rate-limited by `omega_max`; speed is the waypoint distance
//! over dt clamped to [0, v_max]. Everything is a pure function of its
//! inputs, so two executions of the same episode are bitwise identical.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    obb_intersects, project_onto_polyline, ray_box_intersect, ray_segment_intersect,
};
use crate::hashing::derive_seed;
use crate::scalar::wrap_angle;
use crate::vocabulary;
use crate::{Polyline, Pose2D, Scalar};

pub type Trajectory = vocabulary::Trajectory<Scalar>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
    #[error("step called on a terminal world")]
    SteppedTerminal,
    #[error("action has {got} waypoints, controller expects {expected}")]
    BadAction { expected: usize, got: usize },
}

/// Fixed simulator parameters shared by all scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Control period in seconds.
    pub dt: Scalar,
    /// Waypoints per trajectory action.
    pub horizon: usize,
    /// Speed ceiling, m/s.
    pub v_max: Scalar,
    /// Yaw-rate ceiling, rad/s.
    pub omega_max: Scalar,
    /// Ego footprint half extents (length/2, width/2), meters.
    pub ego_half_extents: [Scalar; 2],
    /// Ray count for the clearance scan (spread over 360°).
    pub num_rays: usize,
    /// Ray clearance cap, meters.
    pub ray_max_range: Scalar,
    /// Nearest-agent slots in the observation.
    pub max_observed_agents: usize,
    /// Off-route threshold as a multiple of road halfwidth.
    pub offroute_factor: Scalar,
    /// Fraction of route arclength that counts as completion.
    pub completion_fraction: Scalar,
    /// Preview arclengths for the curvature features, meters.
    pub curvature_previews: [Scalar; 3],
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 0.5,
            horizon: 6,
            v_max: 15.0,
            omega_max: 1.0,
            ego_half_extents: [2.0, 0.9],
            num_rays: 16,
            ray_max_range: 30.0,
            max_observed_agents: 4,
            offroute_factor: 2.0,
            completion_fraction: 0.99,
            curvature_previews: [5.0, 10.0, 20.0],
        }
    }
}

impl SimParams {
    /// Total observation vector width: rays + speed + 5 route features +
    /// 4 entries per observed agent.
    pub fn observation_dim(&self) -> usize {
        self.num_rays + 1 + 5 + 4 * self.max_observed_agents
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Suite {
    General,
    SafetyCritical,
}

impl Suite {
    pub fn label(&self) -> &'static str {
        match self {
            Suite::General => "general",
            Suite::SafetyCritical => "safety",
        }
    }
}

/// Adversarial pattern of a safety-critical scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Archetype {
    SideApproach,
    Frontal,
    StationaryInLane,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
    StaticObstacle,
}

/// A scripted traffic agent: piecewise-linear pose schedule over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScript {
    pub initial_pose: Pose2D,
    /// Footprint half extents (length/2, width/2).
    pub half_extents: [Scalar; 2],
    /// Timestamped poses; strictly increasing timestamps, all > 0.
    pub waypoint_schedule: Vec<(Scalar, Pose2D)>,
    pub kind: AgentKind,
    /// Injected hazard (excluded from expert reference logs).
    pub adversarial: bool,
}

impl AgentScript {
    pub fn validate(&self) -> Result<(), SimError> {
        let mut prev = 0.0;
        for (t, _) in &self.waypoint_schedule {
            if *t <= prev {
                return Err(SimError::InvalidSpec(
                    "agent schedule timestamps must be strictly increasing and positive".into(),
                ));
            }
            prev = *t;
        }
        if self.kind == AgentKind::StaticObstacle && self.waypoint_schedule.len() != 1 {
            return Err(SimError::InvalidSpec(
                "static obstacle schedule must have exactly one entry".into(),
            ));
        }
        if self.half_extents[0] <= 0.0 || self.half_extents[1] <= 0.0 {
            return Err(SimError::InvalidSpec("agent half extents must be positive".into()));
        }
        Ok(())
    }

    /// Pose at time `t`: initial pose before the schedule starts, linear
    /// interpolation between entries, parked at the last entry afterwards.
    pub fn pose_at(&self, t: Scalar) -> Pose2D {
        let mut prev_t = 0.0;
        let mut prev_p = self.initial_pose;
        for &(ti, pi) in &self.waypoint_schedule {
            if t <= ti {
                let lambda = if ti > prev_t { (t - prev_t) / (ti - prev_t) } else { 1.0 };
                let lambda = lambda.clamp(0.0, 1.0);
                return Pose2D::new(
                    prev_p.x + (pi.x - prev_p.x) * lambda,
                    prev_p.y + (pi.y - prev_p.y) * lambda,
                    prev_p.heading + wrap_angle(pi.heading - prev_p.heading) * lambda,
                );
            }
            prev_t = ti;
            prev_p = pi;
        }
        prev_p
    }

    /// World-frame velocity at time `t` from the active schedule segment.
    pub fn velocity_at(&self, t: Scalar) -> [Scalar; 2] {
        let mut prev_t = 0.0;
        let mut prev_p = self.initial_pose;
        for &(ti, pi) in &self.waypoint_schedule {
            if t <= ti {
                let dt = ti - prev_t;
                if dt <= 0.0 {
                    return [0.0, 0.0];
                }
                return [(pi.x - prev_p.x) / dt, (pi.y - prev_p.y) / dt];
            }
            prev_t = ti;
            prev_p = pi;
        }
        [0.0, 0.0]
    }
}

/// Full description of one episode's world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub suite: Suite,
    pub archetype: Archetype,
    pub route: Polyline,
    pub road_halfwidth: Scalar,
    pub agents: Vec<AgentScript>,
    pub max_steps: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        match self.suite {
            Suite::SafetyCritical if self.archetype == Archetype::None => {
                return Err(SimError::InvalidSpec(
                    "safety-critical scenario needs an archetype".into(),
                ))
            }
            Suite::General if self.archetype != Archetype::None => {
                return Err(SimError::InvalidSpec(
                    "general scenario must not carry an archetype".into(),
                ))
            }
            _ => {}
        }
        if self.max_steps == 0 {
            return Err(SimError::InvalidSpec("max_steps must be at least 1".into()));
        }
        if self.road_halfwidth <= 0.0 {
            return Err(SimError::InvalidSpec("road halfwidth must be positive".into()));
        }
        for a in &self.agents {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalEvent {
    Collision,
    OffRoad,
    OffRoute,
    RouteComplete,
    Timeout,
}

impl TerminalEvent {
    pub fn label(&self) -> &'static str {
        match self {
            TerminalEvent::Collision => "collision",
            TerminalEvent::OffRoad => "off_road",
            TerminalEvent::OffRoute => "off_route",
            TerminalEvent::RouteComplete => "route_complete",
            TerminalEvent::Timeout => "timeout",
        }
    }
}

/// Raw event flags for one state, before precedence is applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSet {
    pub collision: bool,
    pub off_road: bool,
    pub off_route: bool,
    pub route_complete: bool,
    pub timeout: bool,
}

impl EventSet {
    pub fn is_empty(&self) -> bool {
        *self == EventSet::default()
    }

    /// Single-cause attribution with fixed precedence:
    /// Collision > OffRoad > OffRoute > RouteComplete > Timeout.
    pub fn primary(&self) -> Option<TerminalEvent> {
        if self.collision {
            Some(TerminalEvent::Collision)
        } else if self.off_road {
            Some(TerminalEvent::OffRoad)
        } else if self.off_route {
            Some(TerminalEvent::OffRoute)
        } else if self.route_complete {
            Some(TerminalEvent::RouteComplete)
        } else if self.timeout {
            Some(TerminalEvent::Timeout)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ego_pose: Pose2D,
    pub ego_speed: Scalar,
    pub ego_accel: Scalar,
    pub step_index: usize,
    pub agent_poses: Vec<Pose2D>,
    pub done: bool,
    pub terminal_event: Option<TerminalEvent>,
}

impl WorldState {
    pub fn mark_terminal(&mut self, event: TerminalEvent) {
        self.done = true;
        self.terminal_event = Some(event);
    }
}

/// Seed-deterministic initial ego speed for a scenario.
pub fn initial_speed(spec_seed: u64) -> Scalar {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(spec_seed, "initial_speed"));
    3.0 + 4.0 * rng.random::<f64>()
}

/// Place the ego at the route start and the agents at their t=0 poses.
pub fn build_world(spec: &ScenarioSpec) -> Result<WorldState, SimError> {
    spec.validate()?;
    let start = spec.route.points()[0];
    let heading = spec.route.heading_at(0.0);
    Ok(WorldState {
        ego_pose: Pose2D::new(start[0], start[1], heading),
        ego_speed: initial_speed(spec.seed),
        ego_accel: 0.0,
        step_index: 0,
        agent_poses: spec.agents.iter().map(|a| a.pose_at(0.0)).collect(),
        done: false,
        terminal_event: None,
    })
}

pub fn ego_box(world: &WorldState, params: &SimParams) -> crate::OrientedBox {
    crate::OrientedBox {
        center: world.ego_pose.position(),
        half_extents: params.ego_half_extents,
        heading: world.ego_pose.heading,
    }
}

fn agent_box(script: &AgentScript, pose: &Pose2D) -> crate::OrientedBox {
    crate::OrientedBox {
        center: pose.position(),
        half_extents: script.half_extents,
        heading: pose.heading,
    }
}

/// Evaluate all event conditions on a state. Precedence is applied by
/// [`EventSet::primary`].
pub fn detect_events(world: &WorldState, spec: &ScenarioSpec, params: &SimParams) -> EventSet {
    let ego = ego_box(world, params);
    let collision = spec
        .agents
        .iter()
        .zip(&world.agent_poses)
        .any(|(script, pose)| obb_intersects(&ego, &agent_box(script, pose)));

    let proj = project_onto_polyline(world.ego_pose.position(), &spec.route);
    let lat = proj.lateral_offset.abs();
    let off_road = lat > spec.road_halfwidth;
    let off_route = lat > params.offroute_factor * spec.road_halfwidth;
    let route_complete = proj.arclength >= params.completion_fraction * spec.route.total_length();
    let timeout = world.step_index >= spec.max_steps;

    EventSet { collision, off_road, off_route, route_complete, timeout }
}

/// Fraction of the route reached by the ego's current projection.
pub fn route_progress(world: &WorldState, spec: &ScenarioSpec) -> Scalar {
    let proj = project_onto_polyline(world.ego_pose.position(), &spec.route);
    (proj.arclength / spec.route.total_length()).clamp(0.0, 1.0)
}

/// Advance the world one control period under a trajectory action.
///
/// Returns the successor state and the raw event set evaluated on it; the
/// successor's `done`/`terminal_event` reflect the precedence-selected event.
pub fn step(
    world: &WorldState,
    spec: &ScenarioSpec,
    action: &Trajectory,
    params: &SimParams,
) -> Result<(WorldState, EventSet), SimError> {
    if world.done {
        return Err(SimError::SteppedTerminal);
    }
    if action.len() != params.horizon {
        return Err(SimError::BadAction { expected: params.horizon, got: action.len() });
    }
    let dt = params.dt;
    let target = world.ego_pose.point_to_world(action.waypoints[0]);
    let dx = target[0] - world.ego_pose.x;
    let dy = target[1] - world.ego_pose.y;
    let distance = (dx * dx + dy * dy).sqrt();

    let new_heading = if distance > 1e-9 {
        let desired = dy.atan2(dx);
        let delta = wrap_angle(desired - world.ego_pose.heading);
        let max_turn = params.omega_max * dt;
        world.ego_pose.heading + delta.clamp(-max_turn, max_turn)
    } else {
        world.ego_pose.heading
    };
    let new_speed = (distance / dt).clamp(0.0, params.v_max);

    let (sin, cos) = wrap_angle(new_heading).sin_cos();
    let step_index = world.step_index + 1;
    let t_now = step_index as Scalar * dt;
    let mut next = WorldState {
        ego_pose: Pose2D::new(
            world.ego_pose.x + new_speed * dt * cos,
            world.ego_pose.y + new_speed * dt * sin,
            new_heading,
        ),
        ego_speed: new_speed,
        ego_accel: (new_speed - world.ego_speed) / dt,
        step_index,
        agent_poses: spec.agents.iter().map(|a| a.pose_at(t_now)).collect(),
        done: false,
        terminal_event: None,
    };

    let events = detect_events(&next, spec, params);
    if let Some(event) = events.primary() {
        next.mark_terminal(event);
    }
    Ok((next, events))
}

/// Fixed-width feature vector observed by the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Clearance per ray, capped at the ray range.
    pub rays: Vec<Scalar>,
    pub ego_speed: Scalar,
    /// (lateral_offset, heading_error, three preview curvatures).
    pub route_features: [Scalar; 5],
    /// Up to M nearest agents as ego-frame (dx, dy, vx, vy), zero-padded.
    pub nearest_agents: Vec<[Scalar; 4]>,
}

impl Observation {
    pub fn dim(&self) -> usize {
        self.rays.len() + 1 + 5 + 4 * self.nearest_agents.len()
    }

    pub fn to_vector(&self) -> Vec<Scalar> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.rays);
        v.push(self.ego_speed);
        v.extend_from_slice(&self.route_features);
        for a in &self.nearest_agents {
            v.extend_from_slice(a);
        }
        v
    }
}

/// Offset each vertex along its angle-bisector normal (miter join).
/// Positive offsets go to the left of travel.
pub fn offset_polyline(line: &Polyline, offset: Scalar) -> Vec<[Scalar; 2]> {
    let pts = line.points();
    let n = pts.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let dir_in = if i > 0 {
            seg_dir(pts[i - 1], pts[i])
        } else {
            seg_dir(pts[0], pts[1])
        };
        let dir_out = if i + 1 < n {
            seg_dir(pts[i], pts[i + 1])
        } else {
            seg_dir(pts[n - 2], pts[n - 1])
        };
        let mut bx = dir_in[0] + dir_out[0];
        let mut by = dir_in[1] + dir_out[1];
        let norm = (bx * bx + by * by).sqrt();
        if norm < 1e-9 {
            bx = dir_in[0];
            by = dir_in[1];
        } else {
            bx /= norm;
            by /= norm;
        }
        // left normal of the bisector, scaled to keep the true lateral offset
        let cos_half = (bx * dir_in[0] + by * dir_in[1]).max(0.25);
        let scale = offset / cos_half;
        out.push([pts[i][0] - by * scale, pts[i][1] + bx * scale]);
    }
    out
}

fn seg_dir(a: [Scalar; 2], b: [Scalar; 2]) -> [Scalar; 2] {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let n = (dx * dx + dy * dy).sqrt();
    [dx / n, dy / n]
}

/// Deterministic feature extraction for a world state.
///
/// Rays measure clearance from the ego footprint boundary to agent
/// footprints and road edges; route features come from projecting onto the
/// route; agent slots hold ego-frame relative position and velocity.
pub fn observe(world: &WorldState, spec: &ScenarioSpec, params: &SimParams) -> Observation {
    let t_now = world.step_index as Scalar * params.dt;
    let ego = ego_box(world, params);
    let origin = world.ego_pose.position();

    let left = offset_polyline(&spec.route, spec.road_halfwidth);
    let right = offset_polyline(&spec.route, -spec.road_halfwidth);

    let mut rays = Vec::with_capacity(params.num_rays);
    for k in 0..params.num_rays {
        let angle =
            world.ego_pose.heading + std::f64::consts::TAU * k as Scalar / params.num_rays as Scalar;
        let dir = [angle.cos(), angle.sin()];
        let mut nearest = Scalar::INFINITY;
        for (script, pose) in spec.agents.iter().zip(&world.agent_poses) {
            if let Some(t) = ray_box_intersect(origin, dir, &agent_box(script, pose)) {
                nearest = nearest.min(t);
            }
        }
        for boundary in [&left, &right] {
            for w in boundary.windows(2) {
                if let Some(t) = ray_segment_intersect(origin, dir, w[0], w[1]) {
                    nearest = nearest.min(t);
                }
            }
        }
        let clearance = if nearest.is_finite() {
            (nearest - ego.exit_distance(dir)).clamp(0.0, params.ray_max_range)
        } else {
            params.ray_max_range
        };
        rays.push(clearance);
    }

    let proj = project_onto_polyline(origin, &spec.route);
    let heading_error = wrap_angle(world.ego_pose.heading - spec.route.heading_at(proj.arclength));
    let kappa = params
        .curvature_previews
        .map(|d| spec.route.curvature_at(proj.arclength + d, 2.0));
    let route_features =
        [proj.lateral_offset, heading_error, kappa[0], kappa[1], kappa[2]];

    let ego_vel = [
        world.ego_speed * world.ego_pose.heading.cos(),
        world.ego_speed * world.ego_pose.heading.sin(),
    ];
    let mut slots: Vec<(Scalar, usize)> = world
        .agent_poses
        .iter()
        .enumerate()
        .map(|(i, p)| (crate::geometry::dist_sq(origin, p.position()), i))
        .collect();
    slots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut nearest_agents = Vec::with_capacity(params.max_observed_agents);
    for &(_, idx) in slots.iter().take(params.max_observed_agents) {
        let pose = &world.agent_poses[idx];
        let rel = world.ego_pose.point_to_frame(pose.position());
        let v = spec.agents[idx].velocity_at(t_now);
        let dv = [v[0] - ego_vel[0], v[1] - ego_vel[1]];
        let (sin, cos) = world.ego_pose.heading.sin_cos();
        let rel_v = [dv[0] * cos + dv[1] * sin, -dv[0] * sin + dv[1] * cos];
        nearest_agents.push([rel[0], rel[1], rel_v[0], rel_v[1]]);
    }
    while nearest_agents.len() < params.max_observed_agents {
        nearest_agents.push([0.0; 4]);
    }

    Observation { rays, ego_speed: world.ego_speed, route_features, nearest_agents }
}

// ---------------------------------------------------------------------------
// Procedural scenario generation
// ---------------------------------------------------------------------------

const CRUISE_SPEED: Scalar = 8.0;
const ACCEL_NOMINAL: Scalar = 2.0;

/// Rough time for the nominal ego to reach arclength `s` (accelerate at a
/// fixed rate toward cruise speed, then hold). Used only to time adversaries.
fn nominal_arrival_time(v0: Scalar, s: Scalar) -> Scalar {
    let v_c = CRUISE_SPEED;
    let t_acc = (v_c - v0).max(0.0) / ACCEL_NOMINAL;
    let s_acc = v0 * t_acc + 0.5 * ACCEL_NOMINAL * t_acc * t_acc;
    if s <= s_acc {
        // s = v0 t + a t^2 / 2
        let disc = (v0 * v0 + 2.0 * ACCEL_NOMINAL * s).sqrt();
        (disc - v0) / ACCEL_NOMINAL
    } else {
        t_acc + (s - s_acc) / v_c
    }
}

fn route_pose(route: &Polyline, s: Scalar, lateral: Scalar, heading_offset: Scalar) -> Pose2D {
    let p = route.point_at(s);
    let h = route.heading_at(s);
    let (sin, cos) = h.sin_cos();
    Pose2D::new(p[0] - sin * lateral, p[1] + cos * lateral, h + heading_offset)
}

fn static_obstacle(pose: Pose2D, half_extents: [Scalar; 2], adversarial: bool) -> AgentScript {
    AgentScript {
        initial_pose: pose,
        half_extents,
        waypoint_schedule: vec![(1.0, pose)],
        kind: AgentKind::StaticObstacle,
        adversarial,
    }
}

const VEHICLE_HALF: [Scalar; 2] = [2.0, 0.9];

fn general_scenario(index: usize, seed: u64) -> ScenarioSpec {
    let spec_seed = derive_seed(seed, &format!("general/{index}"));
    let mut rng = ChaCha20Rng::seed_from_u64(spec_seed);

    // route: random-walk curvature, |kappa| <= 1/25 m
    let start = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
    let mut heading: Scalar = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let length: Scalar = rng.random_range(100.0..160.0);
    let ds = 5.0;
    let n_seg = (length / ds).ceil() as usize;
    let mut kappa: Scalar = 0.0;
    let mut pts = vec![start];
    let mut p = start;
    for _ in 0..n_seg {
        kappa = (0.9 * kappa + rng.random_range(-0.01..0.01)).clamp(-0.04, 0.04);
        heading += kappa * ds;
        p = [p[0] + ds * heading.cos(), p[1] + ds * heading.sin()];
        pts.push(p);
    }
    let route = Polyline::new(pts).expect("generated route is valid");
    let road_halfwidth: Scalar = rng.random_range(3.0..4.5);
    let total = route.total_length();

    let v0 = initial_speed(spec_seed);
    let mut agents = Vec::new();

    // lead vehicle in lane, possibly stop-and-go
    if rng.random::<f64>() < 0.7 {
        let s0 = rng.random_range(25.0..60.0);
        let v_lead = rng.random_range(2.0..6.0);
        let stop_go = rng.random::<f64>() < 0.35;
        let stop_at = rng.random_range(0.3..0.6) * total;
        let stop_for = rng.random_range(5.0..10.0);
        let mut schedule = Vec::new();
        let mut s = s0;
        let mut t = 0.0;
        let mut stopped_until = -1.0;
        while t < 120.0 && s < total - 2.0 {
            t += 1.0;
            if stop_go && s >= stop_at && stopped_until < 0.0 {
                stopped_until = t + stop_for;
            }
            if t > stopped_until {
                s = (s + v_lead).min(total - 2.0);
            }
            schedule.push((t, route_pose(&route, s, 0.0, 0.0)));
        }
        agents.push(AgentScript {
            initial_pose: route_pose(&route, s0, 0.0, 0.0),
            half_extents: VEHICLE_HALF,
            waypoint_schedule: schedule,
            kind: AgentKind::Vehicle,
            adversarial: false,
        });
    }

    // oncoming vehicle in the opposite lane, only when the road is wide
    // enough for clearance; parks before the ego start region
    if road_halfwidth >= 3.6 && rng.random::<f64>() < 0.5 {
        let lat = (road_halfwidth - 1.1).max(2.4);
        let s_start = rng.random_range(70.0..90.0_f64).min(total - 5.0);
        let s_end = 15.0;
        let v_on = rng.random_range(3.0..6.0);
        let t_total = (s_start - s_end) / v_on;
        let n_pts = (t_total.ceil() as usize).max(1);
        let mut schedule = Vec::new();
        for j in 1..=n_pts {
            let t = j as Scalar * t_total / n_pts as Scalar;
            let s = s_start - v_on * t;
            schedule.push((t, route_pose(&route, s, lat, std::f64::consts::PI)));
        }
        agents.push(AgentScript {
            initial_pose: route_pose(&route, s_start, lat, std::f64::consts::PI),
            half_extents: VEHICLE_HALF,
            waypoint_schedule: schedule,
            kind: AgentKind::Vehicle,
            adversarial: false,
        });
    }

    // roadside furniture: parked vehicle or standing pedestrian off the road
    if rng.random::<f64>() < 0.5 {
        let s = rng.random_range(0.2..0.8) * total;
        let side = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
        let lat = side * (road_halfwidth + 1.5);
        if rng.random::<f64>() < 0.5 {
            agents.push(static_obstacle(route_pose(&route, s, lat, 0.0), VEHICLE_HALF, false));
        } else {
            agents.push(AgentScript {
                initial_pose: route_pose(&route, s, lat, 0.0),
                half_extents: [0.3, 0.3],
                waypoint_schedule: vec![(1.0, route_pose(&route, s, lat, 0.0)), (2.0, route_pose(&route, s, lat, 0.0))],
                kind: AgentKind::Pedestrian,
                adversarial: false,
            });
        }
    }

    let max_steps = ((total / 2.0) / 0.5) as usize + 60;
    let _ = v0;
    ScenarioSpec {
        id: format!("general_{index:04}"),
        suite: Suite::General,
        archetype: Archetype::None,
        route,
        road_halfwidth,
        agents,
        max_steps,
        seed: spec_seed,
    }
}

fn safety_scenario(index: usize, seed: u64) -> ScenarioSpec {
    let spec_seed = derive_seed(seed, &format!("safety/{index}"));
    let mut rng = ChaCha20Rng::seed_from_u64(spec_seed);
    let archetype = match index % 3 {
        0 => Archetype::SideApproach,
        1 => Archetype::Frontal,
        _ => Archetype::StationaryInLane,
    };

    // straight route (navigation fixed to "straight")
    let start = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
    let heading: Scalar = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let length = 90.0;
    let n_seg = 18;
    let ds = length / n_seg as Scalar;
    let pts: Vec<[Scalar; 2]> = (0..=n_seg)
        .map(|j| {
            let s = j as Scalar * ds;
            [start[0] + s * heading.cos(), start[1] + s * heading.sin()]
        })
        .collect();
    let route = Polyline::new(pts).expect("straight route is valid");
    let road_halfwidth = 5.0;

    let v0 = initial_speed(spec_seed);
    let s_enc = rng.random_range(30.0..50.0);
    let t_enc = nominal_arrival_time(v0, s_enc);
    let jitter = rng.random_range(-1.0..1.0);

    let adversary = match archetype {
        Archetype::SideApproach => {
            let side = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
            let gap = 22.0;
            let v_adv = rng.random_range(4.0..7.0);
            let travel_time = gap / v_adv;
            let t_start = (t_enc - travel_time + jitter).max(0.1);
            let start_pose = route_pose(&route, s_enc, side * gap, -side * std::f64::consts::FRAC_PI_2);
            // crosses the route and continues to the far side, then parks
            let end_pose = route_pose(&route, s_enc, -side * gap, -side * std::f64::consts::FRAC_PI_2);
            AgentScript {
                initial_pose: start_pose,
                half_extents: VEHICLE_HALF,
                waypoint_schedule: vec![
                    (t_start, start_pose),
                    (t_start + 2.0 * travel_time, end_pose),
                ],
                kind: AgentKind::Vehicle,
                adversarial: true,
            }
        }
        Archetype::Frontal => {
            let s_start = (s_enc + 35.0).min(length - 3.0);
            let v_adv = rng.random_range(4.0..6.0);
            let s_stop = 12.0; // never reaches the ego start region
            let t_start = (t_enc - (s_start - s_enc) / v_adv + jitter).max(0.1);
            let travel_time = (s_start - s_stop) / v_adv;
            let start_pose = route_pose(&route, s_start, 0.0, std::f64::consts::PI);
            let end_pose = route_pose(&route, s_stop, 0.0, std::f64::consts::PI);
            AgentScript {
                initial_pose: start_pose,
                half_extents: VEHICLE_HALF,
                waypoint_schedule: vec![(t_start, start_pose), (t_start + travel_time, end_pose)],
                kind: AgentKind::Vehicle,
                adversarial: true,
            }
        }
        _ => {
            let s_obs = rng.random_range(28.0..45.0);
            static_obstacle(route_pose(&route, s_obs, 0.0, 0.0), VEHICLE_HALF, true)
        }
    };

    ScenarioSpec {
        id: format!("safety_{index:04}"),
        suite: Suite::SafetyCritical,
        archetype,
        route,
        road_halfwidth,
        agents: vec![adversary],
        max_steps: 100,
        seed: spec_seed,
    }
}

/// Seed-deterministic scenario suite. Safety-critical scenes cycle through
/// the three adversarial archetypes in fixed order.
pub fn generate_suite(suite: Suite, n: usize, seed: u64) -> Vec<ScenarioSpec> {
    (0..n)
        .map(|i| match suite {
            Suite::General => general_scenario(i, seed),
            Suite::SafetyCritical => safety_scenario(i, seed),
        })
        .collect()
}

/// Scenario suite file: the generating seed plus the specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteFile {
    pub suite: Suite,
    pub seed: u64,
    pub scenarios: Vec<ScenarioSpec>,
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    pub x: Scalar,
    pub y: Scalar,
    pub heading: Scalar,
    pub speed: Scalar,
    pub accel: Scalar,
    pub action_index: usize,
    /// Primary event label, empty until the terminal step.
    pub event: String,
}

/// Serialize step records as line-delimited JSON.
pub fn episode_to_jsonl(steps: &[StepRecord]) -> String {
    let mut out = String::new();
    for s in steps {
        out.push_str(&serde_json::to_string(s).expect("step record serializes"));
        out.push('\n');
    }
    out
}

pub fn episode_from_jsonl(text: &str) -> Result<Vec<StepRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

// re-export used by the observation builder
pub use crate::geometry::Point;

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_spec(agents: Vec<AgentScript>) -> ScenarioSpec {
        let pts: Vec<[Scalar; 2]> = (0..=20).map(|i| [5.0 * i as Scalar, 0.0]).collect();
        ScenarioSpec {
            id: "test".into(),
            suite: Suite::General,
            archetype: Archetype::None,
            route: Polyline::new(pts).unwrap(),
            road_halfwidth: 4.0,
            agents,
            max_steps: 50,
            seed: 7,
        }
    }

    fn params() -> SimParams {
        SimParams::default()
    }

    #[test]
    fn build_world_initial_state() {
        let spec = straight_spec(vec![]);
        let w = build_world(&spec).unwrap();
        assert_eq!(w.terminal_event, None);
        assert!(!w.done);
        assert_eq!(w.step_index, 0);
        assert_eq!(w.ego_pose.x, 0.0);
        assert!(w.ego_speed >= 3.0 && w.ego_speed < 7.0);
    }

    #[test]
    fn build_world_is_deterministic() {
        let spec = straight_spec(vec![]);
        assert_eq!(build_world(&spec).unwrap(), build_world(&spec).unwrap());
    }

    #[test]
    fn static_obstacle_on_start_collides_at_step_zero() {
        let pose = Pose2D::new(0.0, 0.0, 0.0);
        let spec = straight_spec(vec![static_obstacle(pose, VEHICLE_HALF, false)]);
        let w = build_world(&spec).unwrap();
        let events = detect_events(&w, &spec, &params());
        assert!(events.collision);
        assert_eq!(events.primary(), Some(TerminalEvent::Collision));
    }

    #[test]
    fn null_action_stops_and_holds_pose() {
        let spec = straight_spec(vec![]);
        let w = build_world(&spec).unwrap();
        let action = Trajectory::zeros(params().horizon);
        let (next, _) = step(&w, &spec, &action, &params()).unwrap();
        assert_eq!(next.ego_speed, 0.0);
        assert!((next.ego_pose.x - w.ego_pose.x).abs() < 1e-9);
        assert!((next.ego_pose.y - w.ego_pose.y).abs() < 1e-9);
        assert!((next.ego_pose.heading - w.ego_pose.heading).abs() < 1e-9);
    }

    #[test]
    fn step_is_deterministic() {
        let spec = straight_spec(vec![]);
        let w = build_world(&spec).unwrap();
        let action =
            Trajectory::new((1..=6).map(|i| [i as Scalar * 2.0, 0.0]).collect()).unwrap();
        let a = step(&w, &spec, &action, &params()).unwrap();
        let b = step(&w, &spec, &action, &params()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_on_done_world_errors() {
        let spec = straight_spec(vec![]);
        let mut w = build_world(&spec).unwrap();
        w.mark_terminal(TerminalEvent::Timeout);
        let action = Trajectory::zeros(params().horizon);
        assert!(matches!(step(&w, &spec, &action, &params()), Err(SimError::SteppedTerminal)));
    }

    #[test]
    fn step_rejects_wrong_horizon() {
        let spec = straight_spec(vec![]);
        let w = build_world(&spec).unwrap();
        let action = Trajectory::zeros(3);
        assert!(matches!(
            step(&w, &spec, &action, &params()),
            Err(SimError::BadAction { expected: 6, got: 3 })
        ));
    }

    #[test]
    fn speed_and_yaw_limits_hold() {
        let spec = straight_spec(vec![]);
        let p = params();
        let mut w = build_world(&spec).unwrap();
        // demand a huge jump with a sharp turn
        let action =
            Trajectory::new(vec![[100.0, 100.0]; p.horizon]).unwrap();
        let h0 = w.ego_pose.heading;
        let (next, _) = step(&w, &spec, &action, &p).unwrap();
        assert!(next.ego_speed <= p.v_max);
        assert!(wrap_angle(next.ego_pose.heading - h0).abs() <= p.omega_max * p.dt + 1e-12);
        w = next;
        let _ = w;
    }

    #[test]
    fn offroad_event_thresholds() {
        let spec = straight_spec(vec![]);
        let p = params();
        let mut w = build_world(&spec).unwrap();
        w.ego_pose = Pose2D::new(50.0, spec.road_halfwidth + 0.01, 0.0);
        let e = detect_events(&w, &spec, &p);
        assert!(e.off_road && !e.off_route);
        assert_eq!(e.primary(), Some(TerminalEvent::OffRoad));

        w.ego_pose = Pose2D::new(50.0, 2.0 * spec.road_halfwidth + 0.01, 0.0);
        let e = detect_events(&w, &spec, &p);
        assert!(e.off_road && e.off_route);
        assert_eq!(e.primary(), Some(TerminalEvent::OffRoad));
    }

    #[test]
    fn collision_takes_precedence_over_offroad() {
        let pose = Pose2D::new(50.0, 5.0, 0.0);
        let spec = straight_spec(vec![static_obstacle(pose, VEHICLE_HALF, false)]);
        let p = params();
        let mut w = build_world(&spec).unwrap();
        w.ego_pose = Pose2D::new(50.0, 5.0, 0.0); // on the obstacle, off the road
        let e = detect_events(&w, &spec, &p);
        assert!(e.collision && e.off_road);
        assert_eq!(e.primary(), Some(TerminalEvent::Collision));
    }

    #[test]
    fn route_complete_near_end() {
        let spec = straight_spec(vec![]);
        let p = params();
        let mut w = build_world(&spec).unwrap();
        w.ego_pose = Pose2D::new(99.5, 0.0, 0.0);
        let e = detect_events(&w, &spec, &p);
        assert!(e.route_complete);
        assert_eq!(e.primary(), Some(TerminalEvent::RouteComplete));
    }

    #[test]
    fn timeout_detected() {
        let spec = straight_spec(vec![]);
        let p = params();
        let mut w = build_world(&spec).unwrap();
        w.ego_pose = Pose2D::new(50.0, 0.0, 0.0);
        w.step_index = spec.max_steps;
        let e = detect_events(&w, &spec, &p);
        assert_eq!(e.primary(), Some(TerminalEvent::Timeout));
    }

    #[test]
    fn observe_centered_on_straight_route() {
        let spec = straight_spec(vec![]);
        let p = params();
        let mut w = build_world(&spec).unwrap();
        w.ego_pose = Pose2D::new(30.0, 0.0, 0.0);
        let obs = observe(&w, &spec, &p);
        assert_eq!(obs.to_vector().len(), p.observation_dim());
        assert!(obs.route_features[0].abs() < 1e-12); // lateral offset
        assert!(obs.route_features[1].abs() < 1e-12); // heading error
        for a in &obs.nearest_agents {
            assert_eq!(a, &[0.0; 4]);
        }
        // side rays see the road edges at halfwidth minus ego halfwidth
        let quarter = p.num_rays / 4;
        let expected = spec.road_halfwidth - p.ego_half_extents[1];
        assert!((obs.rays[quarter] - expected).abs() < 1e-9, "{}", obs.rays[quarter]);
    }

    #[test]
    fn observe_agent_directly_ahead() {
        let p = params();
        let agent_pose = Pose2D::new(35.0, 0.0, 0.0);
        let spec = straight_spec(vec![static_obstacle(agent_pose, VEHICLE_HALF, false)]);
        let mut w = build_world(&spec).unwrap();
        w.ego_pose = Pose2D::new(30.0, 0.0, 0.0);
        w.agent_poses = vec![agent_pose];
        let obs = observe(&w, &spec, &p);
        let expected = 5.0 - VEHICLE_HALF[0] - p.ego_half_extents[0];
        assert!((obs.rays[0] - expected).abs() < 1e-9, "{}", obs.rays[0]);
        // nearest agent slot: dx=5 ahead, zero lateral
        assert!((obs.nearest_agents[0][0] - 5.0).abs() < 1e-12);
        assert!(obs.nearest_agents[0][1].abs() < 1e-12);
    }

    #[test]
    fn suite_generation_is_deterministic() {
        let a = generate_suite(Suite::General, 10, 5);
        let b = generate_suite(Suite::General, 10, 5);
        assert_eq!(a, b);
        for s in &a {
            assert!(s.validate().is_ok());
            assert_eq!(s.archetype, Archetype::None);
        }
    }

    #[test]
    fn safety_suite_archetype_cycle() {
        let suite = generate_suite(Suite::SafetyCritical, 20, 9);
        let mut counts = [0usize; 3];
        for (i, s) in suite.iter().enumerate() {
            assert!(s.validate().is_ok());
            let expected = match i % 3 {
                0 => Archetype::SideApproach,
                1 => Archetype::Frontal,
                _ => Archetype::StationaryInLane,
            };
            assert_eq!(s.archetype, expected);
            counts[i % 3] += 1;
        }
        assert_eq!(counts, [7, 7, 6]);
    }

    #[test]
    fn agent_schedule_interpolation() {
        let a = AgentScript {
            initial_pose: Pose2D::new(0.0, 0.0, 0.0),
            half_extents: VEHICLE_HALF,
            waypoint_schedule: vec![
                (2.0, Pose2D::new(0.0, 0.0, 0.0)),
                (4.0, Pose2D::new(10.0, 0.0, 0.0)),
            ],
            kind: AgentKind::Vehicle,
            adversarial: false,
        };
        assert_eq!(a.pose_at(0.0).x, 0.0);
        assert_eq!(a.pose_at(2.0).x, 0.0);
        assert!((a.pose_at(3.0).x - 5.0).abs() < 1e-12);
        assert_eq!(a.pose_at(10.0).x, 10.0);
        assert_eq!(a.velocity_at(3.0), [5.0, 0.0]);
        assert_eq!(a.velocity_at(10.0), [0.0, 0.0]);
        // never faster than the segment's linear speed
        let mut t = 0.0;
        while t < 6.0 {
            let d = crate::geometry::dist(a.pose_at(t).position(), a.pose_at(t + 0.1).position());
            assert!(d <= 5.0 * 0.1 + 1e-9);
            t += 0.1;
        }
    }

    #[test]
    fn episode_jsonl_round_trip() {
        let steps = vec![
            StepRecord {
                step_index: 0,
                x: 1.5,
                y: -0.25,
                heading: 0.1,
                speed: 4.0,
                accel: 0.0,
                action_index: 3,
                event: String::new(),
            },
            StepRecord {
                step_index: 1,
                x: 3.5,
                y: -0.20,
                heading: 0.1,
                speed: 4.2,
                accel: 0.4,
                action_index: 5,
                event: "route_complete".into(),
            },
        ];
        let text = episode_to_jsonl(&steps);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(episode_from_jsonl(&text).unwrap(), steps);
    }

    #[test]
    fn spec_validation_rejects_inconsistent_suites() {
        let mut spec = straight_spec(vec![]);
        spec.suite = Suite::SafetyCritical;
        assert!(spec.validate().is_err());
        spec.suite = Suite::General;
        spec.archetype = Archetype::Frontal;
        assert!(spec.validate().is_err());
        spec.archetype = Archetype::None;
        spec.max_steps = 0;
        assert!(spec.validate().is_err());
    }
}
