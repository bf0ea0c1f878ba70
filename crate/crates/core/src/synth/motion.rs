use super::config::{AgentSpec, AnomalyKind, AnomalySpec, ScenarioConfig};
use crate::data::ObjectClass;
use crate::error::Result;
use crate::rng::{self, Rng64};

/// One agent in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: u32,
    pub class: ObjectClass,
    pub size: [u32; 2],
    /// Box center where the agent is drawn.
    pub center: [f64; 2],
    /// Ground-truth displacement into this frame (frame 0: out of it).
    /// Relocations are scene edits, not motion, and are excluded.
    pub motion: [f64; 2],
    pub anomalous: bool,
}

impl AgentState {
    /// Integer top-left corner of the drawn box.
    pub fn top_left(&self) -> (i64, i64) {
        (
            (self.center[0] - self.size[0] as f64 / 2.0).round() as i64,
            (self.center[1] - self.size[1] as f64 / 2.0).round() as i64,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub frames: Vec<Vec<AgentState>>,
    pub labels: Vec<bool>,
}

/// Arc-length parametrization of a waypoint polyline, traversed back and
/// forth.
struct Polyline {
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
}

impl Polyline {
    fn new(points: &[[f64; 2]]) -> Self {
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Self {
            points: points.to_vec(),
            cumulative,
        }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn at(&self, s: f64) -> [f64; 2] {
        let len = self.length();
        if len == 0.0 {
            return self.points[0];
        }
        let u = s.rem_euclid(2.0 * len);
        let u = if u > len { 2.0 * len - u } else { u };
        let seg = self.cumulative.partition_point(|&c| c <= u).clamp(1, self.points.len() - 1);
        let (a, b) = (self.points[seg - 1], self.points[seg]);
        let (c0, c1) = (self.cumulative[seg - 1], self.cumulative[seg]);
        if c1 == c0 {
            return a;
        }
        let t = (u - c0) / (c1 - c0);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }
}

fn active(cfg: &ScenarioConfig, id: u32, frame: u32) -> Option<&AnomalySpec> {
    cfg.anomalies
        .iter()
        .find(|a| a.covers(frame) && a.agents.contains(&id))
}

/// Positions split into real motion (path progress plus erratic jitter) and
/// relocation, per frame.
fn trajectory(cfg: &ScenarioConfig, agent: &AgentSpec) -> Vec<([f64; 2], [f64; 2], bool)> {
    let line = Polyline::new(&agent.path);
    let mut s = agent.phase;
    let mut rng = Rng64::new(rng::mix(cfg.seed, 0x5EED_0000 + agent.id as u64));
    let mut out = Vec::with_capacity(cfg.frames as usize);
    for t in 0..cfg.frames {
        let an = active(cfg, agent.id, t);
        if t > 0 {
            let step = match an.map(|a| a.kind) {
                Some(AnomalyKind::OverSpeed) => agent.speed * an.unwrap().factor.unwrap_or(3.0),
                Some(
                    AnomalyKind::StoppedOnRoad
                    | AnomalyKind::WrongZoneParking
                    | AnomalyKind::PedestrianGathering,
                ) => 0.0,
                _ => agent.speed,
            };
            s += step;
        }
        let base = line.at(s);
        let (mut moving, mut relocation) = (base, [0.0, 0.0]);
        if let Some(a) = an {
            match a.kind {
                AnomalyKind::ErraticTrajectory if t < a.end => {
                    let amp = a.factor.unwrap_or((2.0 * agent.speed).max(2.0));
                    let r = amp * rng.uniform();
                    let th = std::f64::consts::TAU * rng.uniform();
                    moving = [base[0] + r * th.cos(), base[1] + r * th.sin()];
                }
                AnomalyKind::PedestrianOnRoad | AnomalyKind::VehicleOffRoad => {
                    relocation = a.offset.expect("validated");
                }
                AnomalyKind::WrongZoneParking => {
                    let tg = a.target.expect("validated");
                    relocation = [tg[0] - base[0], tg[1] - base[1]];
                }
                AnomalyKind::PedestrianGathering => {
                    let tg = a.target.expect("validated");
                    let k = a.agents.iter().position(|&i| i == agent.id).unwrap() as f64;
                    let th = std::f64::consts::TAU * k / a.agents.len() as f64;
                    let r = a.radius.unwrap_or(6.0);
                    relocation = [tg[0] + r * th.cos() - base[0], tg[1] + r * th.sin() - base[1]];
                }
                _ => {}
            }
        }
        out.push((moving, relocation, an.is_some()));
    }
    out
}

pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let n = cfg.frames as usize;
    let mut frames: Vec<Vec<AgentState>> = vec![Vec::with_capacity(cfg.agents.len()); n];
    for agent in &cfg.agents {
        let traj = trajectory(cfg, agent);
        for t in 0..n {
            let (prev, cur) = if t == 0 { (0, 1) } else { (t - 1, t) };
            let motion = [traj[cur].0[0] - traj[prev].0[0], traj[cur].0[1] - traj[prev].0[1]];
            let (m, r, anomalous) = traj[t];
            frames[t].push(AgentState {
                id: agent.id,
                class: agent.class,
                size: agent.size,
                center: [m[0] + r[0], m[1] + r[1]],
                motion,
                anomalous,
            });
        }
    }
    let labels = (0..cfg.frames)
        .map(|t| cfg.anomalies.iter().any(|a| a.covers(t)))
        .collect();
    Ok(Scenario { frames, labels })
}
