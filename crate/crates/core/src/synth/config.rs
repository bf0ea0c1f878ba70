use serde::{Deserialize, Serialize};

use crate::data::{BgClass, ObjectClass};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub class: BgClass,
    /// `[x, y, w, h]` in pixels; clipped to the scene when painted.
    pub rect: [i64; 4],
}

/// Base class plus rectangles painted in order (later ones win).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneLayout {
    pub background: BgClass,
    #[serde(default)]
    pub regions: Vec<Region>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: u32,
    pub class: ObjectClass,
    /// Box size `[w, h]` in pixels.
    pub size: [u32; 2],
    /// Waypoints for the box center; traversed back and forth.
    pub path: Vec<[f64; 2]>,
    /// Pixels per frame along the path.
    pub speed: f64,
    /// Arc-length offset of the starting point.
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    PedestrianOnRoad,
    VehicleOffRoad,
    OverSpeed,
    ErraticTrajectory,
    StoppedOnRoad,
    PedestrianGathering,
    WrongZoneParking,
}

impl AnomalyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::PedestrianOnRoad => "pedestrian-on-road",
            AnomalyKind::VehicleOffRoad => "vehicle-off-road",
            AnomalyKind::OverSpeed => "over-speed",
            AnomalyKind::ErraticTrajectory => "erratic-trajectory",
            AnomalyKind::StoppedOnRoad => "stopped-on-road",
            AnomalyKind::PedestrianGathering => "pedestrian-gathering",
            AnomalyKind::WrongZoneParking => "wrong-zone-parking",
        }
    }
}

/// An injected anomaly active on frames `start..=end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub agents: Vec<u32>,
    pub start: u32,
    pub end: u32,
    /// Speed multiplier for over-speed (default 3); jitter radius in pixels
    /// for erratic trajectories (default 2·speed, at least 2).
    #[serde(default)]
    pub factor: Option<f64>,
    /// Displacement applied while the anomaly is active (on-road / off-road).
    #[serde(default)]
    pub offset: Option<[f64; 2]>,
    /// Parking spot or gathering point.
    #[serde(default)]
    pub target: Option<[f64; 2]>,
    /// Gathering radius in pixels (default 6).
    #[serde(default)]
    pub radius: Option<f64>,
}

impl AnomalySpec {
    pub fn covers(&self, frame: u32) -> bool {
        (self.start..=self.end).contains(&frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Amplitude of the static per-pixel background texture.
    pub texture: f64,
    /// Amplitude of the per-frame sensor noise.
    pub noise: f64,
    /// Maximum detection box perturbation in pixels.
    pub detection_jitter: u32,
    /// Share of class-mask pixels relabelled to a random class, standing in
    /// for segmentation errors. Frames are rendered from the clean layout.
    pub mask_noise: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            texture: 0.08,
            noise: 0.02,
            detection_jitter: 0,
            mask_noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    #[serde(default)]
    pub seed: u64,
    pub layout: SceneLayout,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub anomalies: Vec<AnomalySpec>,
    #[serde(default)]
    pub render: RenderConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn agent(&self, id: u32) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.id == id)
    }

    fn inside(&self, p: [f64; 2]) -> bool {
        p[0] >= 0.0 && p[1] >= 0.0 && p[0] < self.width as f64 && p[1] < self.height as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scenario `{}`: {m}", self.name)));
        if self.width == 0 || self.height == 0 {
            return bad("scene must be non-empty".into());
        }
        if self.frames < 2 {
            return bad(format!("needs at least 2 frames, got {}", self.frames));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\', ',']) {
            return bad("name must be non-empty and free of path separators and commas".into());
        }
        if !(self.render.texture >= 0.0 && self.render.noise >= 0.0) {
            return bad("texture and noise amplitudes must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.render.mask_noise) {
            return bad(format!("mask_noise {} must lie in [0,1]", self.render.mask_noise));
        }
        let mut ids = std::collections::HashSet::new();
        for a in &self.agents {
            if !ids.insert(a.id) {
                return bad(format!("duplicate agent id {}", a.id));
            }
            if a.size[0] == 0 || a.size[1] == 0 {
                return bad(format!("agent {} has an empty box", a.id));
            }
            if a.path.is_empty() {
                return bad(format!("agent {} has no waypoints", a.id));
            }
            if !(a.speed >= 0.0 && a.speed.is_finite() && a.phase.is_finite()) {
                return bad(format!("agent {} has an invalid speed or phase", a.id));
            }
            if let Some(p) = a.path.iter().find(|p| !self.inside(**p)) {
                return bad(format!("agent {} waypoint {p:?} leaves the scene", a.id));
            }
        }
        for (i, an) in self.anomalies.iter().enumerate() {
            let kind = an.kind.as_str();
            if an.start > an.end || an.end >= self.frames {
                return bad(format!(
                    "anomaly {i} ({kind}) interval {}..={} is outside 0..{}",
                    an.start, an.end, self.frames
                ));
            }
            if an.agents.is_empty() {
                return bad(format!("anomaly {i} ({kind}) names no agents"));
            }
            for id in &an.agents {
                let Some(agent) = self.agent(*id) else {
                    return bad(format!("anomaly {i} ({kind}) references unknown agent {id}"));
                };
                let want = match an.kind {
                    AnomalyKind::PedestrianOnRoad | AnomalyKind::PedestrianGathering => Some(ObjectClass::Human),
                    AnomalyKind::VehicleOffRoad | AnomalyKind::WrongZoneParking => Some(ObjectClass::Vehicle),
                    _ => None,
                };
                if want.is_some_and(|w| w != agent.class) {
                    return bad(format!("anomaly {i} ({kind}) cannot apply to agent {id}"));
                }
            }
            match an.kind {
                AnomalyKind::PedestrianOnRoad | AnomalyKind::VehicleOffRoad if an.offset.is_none() => {
                    return bad(format!("anomaly {i} ({kind}) needs an offset"));
                }
                AnomalyKind::PedestrianGathering if an.agents.len() < 3 => {
                    return bad(format!("anomaly {i} (gathering) needs at least 3 pedestrians"));
                }
                AnomalyKind::PedestrianGathering | AnomalyKind::WrongZoneParking => match an.target {
                    Some(t) if self.inside(t) => {}
                    _ => return bad(format!("anomaly {i} ({kind}) needs a target inside the scene")),
                },
                _ => {}
            }
            if an.factor.is_some_and(|f| !(f > 0.0 && f.is_finite())) {
                return bad(format!("anomaly {i} ({kind}) factor must be > 0"));
            }
            if an.radius.is_some_and(|r| !(r >= 0.0 && r.is_finite())) {
                return bad(format!("anomaly {i} ({kind}) radius must be >= 0"));
            }
        }
        // at most one anomaly per agent per frame keeps the motion model unambiguous
        for (i, a) in self.anomalies.iter().enumerate() {
            for b in &self.anomalies[i + 1..] {
                let overlap = a.start <= b.end && b.start <= a.end;
                if overlap && a.agents.iter().any(|id| b.agents.contains(id)) {
                    return bad(format!(
                        "anomalies {} and {} overlap on the same agent",
                        a.kind.as_str(),
                        b.kind.as_str()
                    ));
                }
            }
        }
        Ok(())
    }
}
