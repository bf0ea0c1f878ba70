use super::config::ScenarioConfig;
use super::motion::{AgentState, Scenario};
use crate::data::{
    BgClass, BoundingBox, ClassMask, DetectionRecord, FlowField, FrameAnnotation, ImagePatch,
    ObjectClass, ObjectLabel,
};
use crate::dataset::VideoData;
use crate::error::Result;
use crate::rng::{self, Rng64};

// Background colors share a luminance band so the class is carried by hue.
fn bg_color(c: BgClass) -> [f64; 3] {
    match c {
        BgClass::Greenery => [0.30, 0.50, 0.22],
        BgClass::Road => [0.45, 0.45, 0.47],
        BgClass::Construction => [0.62, 0.44, 0.30],
        BgClass::Water => [0.18, 0.40, 0.72],
    }
}

pub fn paint_mask(cfg: &ScenarioConfig) -> ClassMask {
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let mut mask = ClassMask::filled(w, h, cfg.layout.background);
    for r in &cfg.layout.regions {
        let [x, y, rw, rh] = r.rect;
        let x0 = x.clamp(0, w as i64) as usize;
        let y0 = y.clamp(0, h as i64) as usize;
        let x1 = (x + rw).clamp(0, w as i64) as usize;
        let y1 = (y + rh).clamp(0, h as i64) as usize;
        for yy in y0..y1 {
            for xx in x0..x1 {
                mask.set(xx, yy, r.class);
            }
        }
    }
    mask
}

/// The class mask a segmenter would report: the painted layout with a
/// seeded share of pixels relabelled uniformly at random.
pub fn segmentation_mask(cfg: &ScenarioConfig, clean: &ClassMask) -> ClassMask {
    let mut out = clean.clone();
    if cfg.render.mask_noise <= 0.0 {
        return out;
    }
    let mut rng = Rng64::new(rng::mix(cfg.seed, 0x5E6));
    for y in 0..clean.height {
        for x in 0..clean.width {
            if rng.uniform() < cfg.render.mask_noise {
                let class = BgClass::from_index(rng.below(BgClass::ALL.len()) as u8).expect("class index in range");
                out.set(x, y, class);
            }
        }
    }
    out
}

fn background(cfg: &ScenarioConfig, mask: &ClassMask) -> Vec<f64> {
    let mut rng = Rng64::new(rng::mix(cfg.seed, 0xB6));
    let mut data = Vec::with_capacity(mask.labels().len() * 3);
    for &l in mask.labels() {
        let base = bg_color(BgClass::from_index(l).expect("valid mask"));
        let t = cfg.render.texture * (2.0 * rng.uniform() - 1.0);
        data.extend(base.iter().map(|b| b + t));
    }
    data
}

/// Object pixel color at relative position (fx, fy) ∈ [0,1)² of its box.
fn object_color(class: ObjectClass, tint: f64, fx: f64, fy: f64) -> [f64; 3] {
    match class {
        ObjectClass::Vehicle => {
            let body = [0.80 + tint, 0.16, 0.12];
            let glass = [0.10, 0.12, 0.16];
            if (0.55..0.75).contains(&fx) && (0.2..0.8).contains(&fy) {
                glass
            } else {
                body
            }
        }
        ObjectClass::Human => {
            if fy < 0.3 {
                [0.90, 0.72, 0.58]
            } else if fy < 0.65 {
                [0.95, 0.90 + tint, 0.20]
            } else {
                [0.15, 0.15, 0.45]
            }
        }
    }
}

fn draw(frame: &mut [f64], flow: &mut FlowField, width: usize, height: usize, a: &AgentState, tint: f64) {
    let (x0, y0) = a.top_left();
    let [bw, bh] = a.size;
    for dy in 0..bh as i64 {
        let y = y0 + dy;
        if y < 0 || y >= height as i64 {
            continue;
        }
        for dx in 0..bw as i64 {
            let x = x0 + dx;
            if x < 0 || x >= width as i64 {
                continue;
            }
            let c = object_color(a.class, tint, dx as f64 / bw as f64, dy as f64 / bh as f64);
            let i = y as usize * width + x as usize;
            frame[3 * i..3 * i + 3].copy_from_slice(&c);
            flow.u[i] = a.motion[0] as f32;
            flow.v[i] = a.motion[1] as f32;
        }
    }
}

fn jittered_box(a: &AgentState, jitter: u32, rng: &mut Rng64, width: u32, height: u32) -> BoundingBox {
    let (x, y) = a.top_left();
    let [w, h] = a.size;
    if jitter == 0 {
        return BoundingBox { x, y, w, h };
    }
    let j = jitter as i64;
    let mut d = || rng.below(2 * jitter as usize + 1) as i64 - j;
    let (dx, dy, dw, dh) = (d(), d(), d(), d());
    let w = (w as i64 + dw).max(1) as u32;
    let h = (h as i64 + dh).max(1) as u32;
    // keep at least one pixel inside the frame
    let x = (x + dx).clamp(1 - w as i64, width as i64 - 1);
    let y = (y + dy).clamp(1 - h as i64, height as i64 - 1);
    BoundingBox { x, y, w, h }
}

fn quantize8(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

pub fn render_dataset(scenario: &Scenario, cfg: &ScenarioConfig) -> Result<VideoData> {
    cfg.validate()?;
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let mask = paint_mask(cfg);
    let bg = background(cfg, &mask);
    let tints: std::collections::HashMap<u32, f64> = cfg
        .agents
        .iter()
        .map(|a| {
            let mut r = Rng64::new(rng::mix(cfg.seed, 0x71_0000 + a.id as u64));
            (a.id, 0.08 * (r.uniform() - 0.5))
        })
        .collect();
    let mut noise_rng = Rng64::new(rng::mix(cfg.seed, 0x4E));
    let mut det_rng = Rng64::new(rng::mix(cfg.seed, 0xDE));
    let mut frames = Vec::with_capacity(scenario.frames.len());
    let mut flows = Vec::with_capacity(scenario.frames.len());
    let mut detections = Vec::new();
    let mut object_labels = Vec::new();
    for (t, agents) in scenario.frames.iter().enumerate() {
        let mut img = bg.clone();
        let mut flow = FlowField::zeros(w, h);
        for a in agents {
            draw(&mut img, &mut flow, w, h, a, tints[&a.id]);
        }
        for v in img.iter_mut() {
            *v = quantize8(*v + cfg.render.noise * (2.0 * noise_rng.uniform() - 1.0));
        }
        frames.push(ImagePatch::new(w, h, img)?);
        flows.push(flow);
        for a in agents {
            let bbox = jittered_box(a, cfg.render.detection_jitter, &mut det_rng, cfg.width, cfg.height);
            if bbox.clip(w, h).is_none() {
                continue;
            }
            detections.push(DetectionRecord {
                video_id: cfg.name.clone(),
                frame_index: t as u32,
                object_id: a.id,
                object_class: a.class,
                bbox,
            });
            object_labels.push(ObjectLabel {
                video_id: cfg.name.clone(),
                frame_index: t as u32,
                object_id: a.id,
                anomalous: a.anomalous,
            });
        }
    }
    detections.sort_by_key(|d| (d.frame_index, d.object_id));
    object_labels.sort_by_key(|d| (d.frame_index, d.object_id));
    Ok(VideoData {
        id: cfg.name.clone(),
        frames,
        mask: segmentation_mask(cfg, &mask),
        flows: Some(flows),
        detections,
        annotations: scenario
            .labels
            .iter()
            .enumerate()
            .map(|(i, &anomalous)| FrameAnnotation {
                frame_index: i as u32,
                anomalous,
            })
            .collect(),
        object_labels,
        anomalies: cfg.anomalies.clone(),
    })
}
