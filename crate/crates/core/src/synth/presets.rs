//! Randomized benchmark scenes built from two road templates.

use serde::{Deserialize, Serialize};

use super::config::{AgentSpec, AnomalyKind, AnomalySpec, Region, RenderConfig, ScenarioConfig, SceneLayout};
use crate::data::{BgClass, ObjectClass};
use crate::error::{Error, Result};
use crate::rng::{self, Rng64};

pub const SCENE_WIDTH: u32 = 128;
pub const SCENE_HEIGHT: u32 = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Every anomaly type.
    Demo,
    /// Only pedestrian-on-road and vehicle-off-road.
    Context,
    /// Mild over-speed and short stops: anomalies close to normal motion.
    Fewshot,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "demo" => Ok(Preset::Demo),
            "context" => Ok(Preset::Context),
            "fewshot" => Ok(Preset::Fewshot),
            _ => Err(Error::Config(format!(
                "unknown preset `{s}` (expected demo, context or fewshot)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkParams {
    pub train_videos: usize,
    pub test_videos: usize,
    pub frames: u32,
    pub render: RenderConfig,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        Self {
            train_videos: 2,
            test_videos: 2,
            frames: 120,
            render: RenderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub train: Vec<ScenarioConfig>,
    pub test: Vec<ScenarioConfig>,
}

struct Template {
    layout: SceneLayout,
    /// Lane paths with the vehicle box size for that orientation.
    lanes: Vec<(Vec<[f64; 2]>, [u32; 2])>,
    walkways: Vec<Vec<[f64; 2]>>,
    /// Offset moving a walkway onto the road, per walkway.
    onto_road: Vec<[f64; 2]>,
    /// Offset moving a lane off the road, per lane.
    off_road: Vec<[f64; 2]>,
    road_point: [f64; 2],
    parking_spots: Vec<[f64; 2]>,
}

fn crossing() -> Template {
    Template {
        layout: SceneLayout {
            background: BgClass::Greenery,
            regions: vec![
                Region { class: BgClass::Road, rect: [0, 36, 128, 24] },
                Region { class: BgClass::Construction, rect: [0, 68, 56, 28] },
                Region { class: BgClass::Water, rect: [92, 72, 36, 24] },
            ],
        },
        lanes: vec![
            (vec![[6.0, 42.0], [122.0, 42.0]], [12, 7]),
            (vec![[122.0, 54.0], [6.0, 54.0]], [12, 7]),
        ],
        walkways: vec![
            vec![[6.0, 18.0], [60.0, 14.0], [122.0, 20.0]],
            vec![[8.0, 80.0], [50.0, 84.0], [84.0, 80.0]],
        ],
        onto_road: vec![[0.0, 30.0], [0.0, -32.0]],
        off_road: vec![[0.0, -26.0], [0.0, 26.0]],
        road_point: [64.0, 48.0],
        parking_spots: vec![[30.0, 16.0], [100.0, 14.0], [70.0, 80.0]],
    }
}

fn avenue() -> Template {
    Template {
        layout: SceneLayout {
            background: BgClass::Greenery,
            regions: vec![
                Region { class: BgClass::Road, rect: [52, 0, 24, 96] },
                Region { class: BgClass::Water, rect: [84, 0, 44, 36] },
                Region { class: BgClass::Construction, rect: [84, 44, 44, 52] },
            ],
        },
        lanes: vec![
            (vec![[58.0, 6.0], [58.0, 90.0]], [7, 12]),
            (vec![[70.0, 90.0], [70.0, 6.0]], [7, 12]),
        ],
        walkways: vec![
            vec![[22.0, 6.0], [28.0, 50.0], [22.0, 90.0]],
            vec![[106.0, 54.0], [110.0, 72.0], [104.0, 90.0]],
        ],
        onto_road: vec![[40.0, 0.0], [-42.0, 0.0]],
        off_road: vec![[-30.0, 0.0], [34.0, 0.0]],
        road_point: [64.0, 48.0],
        parking_spots: vec![[24.0, 30.0], [30.0, 76.0], [104.0, 60.0]],
    }
}

struct Builder<'a> {
    template: &'a Template,
    rng: Rng64,
    agents: Vec<AgentSpec>,
    /// (agent index, lane or walkway index)
    vehicles: Vec<(usize, usize)>,
    pedestrians: Vec<(usize, usize)>,
}

impl<'a> Builder<'a> {
    fn new(template: &'a Template, seed: u64) -> Self {
        Self {
            template,
            rng: Rng64::new(seed),
            agents: vec![],
            vehicles: vec![],
            pedestrians: vec![],
        }
    }

    fn populate(&mut self) {
        let t = self.template;
        for (li, (path, size)) in t.lanes.iter().enumerate() {
            let len: f64 = path.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum();
            let count = 1 + self.rng.below(2);
            for k in 0..count {
                let id = self.agents.len() as u32 + 1;
                let phase = len * (k as f64 + self.rng.uniform() * 0.5) / count as f64;
                self.vehicles.push((self.agents.len(), li));
                self.agents.push(AgentSpec {
                    id,
                    class: ObjectClass::Vehicle,
                    size: *size,
                    path: path.clone(),
                    speed: self.rng.range(1.5, 2.5),
                    phase,
                });
            }
        }
        for (wi, path) in t.walkways.iter().enumerate() {
            let count = 2 + self.rng.below(2);
            for k in 0..count {
                let id = self.agents.len() as u32 + 1;
                self.pedestrians.push((self.agents.len(), wi));
                self.agents.push(AgentSpec {
                    id,
                    class: ObjectClass::Human,
                    size: [4, 8],
                    path: path.clone(),
                    speed: self.rng.range(0.5, 1.0),
                    phase: 40.0 * k as f64 + self.rng.range(0.0, 20.0),
                });
            }
        }
    }

    fn pick(&mut self, pool: &[(usize, usize)]) -> (u32, usize) {
        let (ai, slot) = pool[self.rng.below(pool.len())];
        (self.agents[ai].id, slot)
    }

    fn anomaly(&mut self, kind: AnomalyKind, start: u32, end: u32) -> AnomalySpec {
        let mut spec = AnomalySpec {
            kind,
            agents: vec![],
            start,
            end,
            factor: None,
            offset: None,
            target: None,
            radius: None,
        };
        let t = self.template;
        match kind {
            AnomalyKind::PedestrianOnRoad => {
                let peds = self.pedestrians.clone();
                let (id, w) = self.pick(&peds);
                spec.agents = vec![id];
                spec.offset = Some(t.onto_road[w]);
            }
            AnomalyKind::VehicleOffRoad => {
                let vs = self.vehicles.clone();
                let (id, l) = self.pick(&vs);
                spec.agents = vec![id];
                spec.offset = Some(t.off_road[l]);
            }
            AnomalyKind::OverSpeed => {
                let vs = self.vehicles.clone();
                spec.agents = vec![self.pick(&vs).0];
                spec.factor = Some(self.rng.range(1.6, 2.2));
            }
            AnomalyKind::ErraticTrajectory => {
                let all: Vec<(usize, usize)> = self.vehicles.iter().chain(&self.pedestrians).copied().collect();
                spec.agents = vec![self.pick(&all).0];
            }
            AnomalyKind::StoppedOnRoad => {
                let vs = self.vehicles.clone();
                spec.agents = vec![self.pick(&vs).0];
            }
            AnomalyKind::WrongZoneParking => {
                let vs = self.vehicles.clone();
                spec.agents = vec![self.pick(&vs).0];
                let spot = t.parking_spots[self.rng.below(t.parking_spots.len())];
                spec.target = Some(spot);
            }
            AnomalyKind::PedestrianGathering => {
                let idx = self.rng.sample_indices(self.pedestrians.len(), 3);
                spec.agents = idx.iter().map(|&i| self.agents[self.pedestrians[i].0].id).collect();
                spec.target = Some(t.road_point);
                spec.radius = Some(6.0);
            }
        }
        spec
    }
}

/// Non-overlapping anomaly windows covering roughly a third of the video.
fn schedule(rng: &mut Rng64, frames: u32, kinds: &[AnomalyKind]) -> Vec<(AnomalyKind, u32, u32)> {
    let slot = 30u32;
    let mut out = Vec::new();
    let mut start = 6u32;
    while start + 12 < frames {
        let len = 8 + rng.below(7) as u32;
        let s = start + rng.below(6) as u32;
        let e = (s + len).min(frames - 1);
        out.push((kinds[rng.below(kinds.len())], s, e));
        start += slot.min(frames);
    }
    out
}

fn kinds(preset: Preset) -> Vec<AnomalyKind> {
    use AnomalyKind::*;
    match preset {
        Preset::Demo => vec![
            PedestrianOnRoad,
            VehicleOffRoad,
            OverSpeed,
            ErraticTrajectory,
            StoppedOnRoad,
            PedestrianGathering,
            WrongZoneParking,
        ],
        Preset::Context => vec![PedestrianOnRoad, VehicleOffRoad],
        Preset::Fewshot => vec![OverSpeed, StoppedOnRoad],
    }
}

pub fn scenario(preset: Preset, name: &str, seed: u64, params: &BenchmarkParams, template: usize) -> Result<ScenarioConfig> {
    let tpl = if template.is_multiple_of(2) { crossing() } else { avenue() };
    let mut b = Builder::new(&tpl, rng::mix(seed, 0xC0FFEE));
    b.populate();
    let mut rng = Rng64::new(rng::mix(seed, 0xA40));
    let anomalies = schedule(&mut rng, params.frames, &kinds(preset))
        .into_iter()
        .map(|(k, s, e)| b.anomaly(k, s, e))
        .collect();
    let cfg = ScenarioConfig {
        name: name.to_string(),
        width: SCENE_WIDTH,
        height: SCENE_HEIGHT,
        frames: params.frames,
        seed,
        layout: tpl.layout.clone(),
        agents: b.agents,
        anomalies,
        render: params.render.clone(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn benchmark(preset: Preset, seed: u64, params: &BenchmarkParams) -> Result<Benchmark> {
    let make = |split: &str, count: usize, salt: u64| -> Result<Vec<ScenarioConfig>> {
        (0..count)
            .map(|i| {
                scenario(
                    preset,
                    &format!("{split}{i:02}"),
                    rng::mix(seed, salt + i as u64),
                    params,
                    i,
                )
            })
            .collect()
    };
    Ok(Benchmark {
        train: make("train", params.train_videos, 0x1000)?,
        test: make("test", params.test_videos, 0x2000)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{contextual_histogram, contextual_region, DEFAULT_RING_WIDTH};
    use crate::synth::synthesize;

    #[test]
    fn presets_validate_and_label() {
        for p in [Preset::Demo, Preset::Context, Preset::Fewshot] {
            let b = benchmark(p, 11, &BenchmarkParams::default()).unwrap();
            for cfg in b.train.iter().chain(&b.test) {
                assert!(!cfg.anomalies.is_empty());
                let v = synthesize(cfg).unwrap();
                let labels = v.frame_labels();
                let frac = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
                assert!((0.1..0.6).contains(&frac), "{p:?} {frac}");
            }
        }
    }

    #[test]
    fn pedestrians_on_road_change_context() {
        let b = benchmark(Preset::Context, 5, &BenchmarkParams::default()).unwrap();
        let mut seen = (0, 0);
        for cfg in b.test.iter().chain(&b.train) {
            let v = synthesize(cfg).unwrap();
            for (d, l) in v.detections.iter().zip(&v.object_labels) {
                if d.object_class != ObjectClass::Human {
                    continue;
                }
                let region = contextual_region(&d.bbox, DEFAULT_RING_WIDTH, v.width(), v.height()).unwrap();
                let road = contextual_histogram(&region, &v.mask).unwrap()[1];
                if l.anomalous {
                    assert!(road > 0.5, "anomalous pedestrian road fraction {road}");
                    seen.0 += 1;
                } else {
                    assert!(road < 0.5, "normal pedestrian road fraction {road}");
                    seen.1 += 1;
                }
            }
        }
        assert!(seen.0 > 0 && seen.1 > 0);
    }
}
