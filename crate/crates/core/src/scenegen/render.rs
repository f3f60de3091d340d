use serde::{Deserialize, Serialize};

use super::templates::{Part, Polygon, NUM_TEMPLATES, TEMPLATES};
use crate::error::{Error, Result};
use crate::image::{Image, Mask, SIZE};
use crate::seed;

pub const YAW_LIMIT: f64 = 75.0;
pub const NUM_BACKGROUNDS: u8 = 4;
/// Horizontal shear per unit height, scaled by `sin(yaw)`.
pub const SHEAR: f64 = 0.15;
const GROUND_ROW: f64 = 23.0;
const SUPERSAMPLE: usize = 4;
const NOISE_STD: f32 = 0.015;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub template_id: u8,
    pub yaw_deg: f64,
    pub scale: f64,
    pub body_color: [f64; 3],
    pub background_id: u8,
    pub jitter_seed: u64,
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if usize::from(self.template_id) >= NUM_TEMPLATES {
            return Err(Error::param("template_id", format!("{} not in [0,11]", self.template_id)));
        }
        if !(-YAW_LIMIT..=YAW_LIMIT).contains(&self.yaw_deg) {
            return Err(Error::param("yaw_deg", format!("{} not in [-75,75]", self.yaw_deg)));
        }
        if !(0.6..=1.0).contains(&self.scale) {
            return Err(Error::param("scale", format!("{} not in [0.6,1.0]", self.scale)));
        }
        if !self.body_color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::param("body_color", "components must lie in [0,1]"));
        }
        if self.background_id >= NUM_BACKGROUNDS {
            return Err(Error::param("background_id", format!("{} not in [0,3]", self.background_id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedSample {
    pub image: Image,
    pub mask: Mask,
    pub params: SceneParams,
}

/// Silhouette polygons in image pixel coordinates (x right, y down), after
/// yaw, scale and placement.
pub fn silhouette(params: &SceneParams) -> Result<Vec<(Part, Polygon)>> {
    params.validate()?;
    let tpl = TEMPLATES[usize::from(params.template_id)];
    let yaw = params.yaw_deg.to_radians();
    let (sin, cos) = yaw.sin_cos();
    let half = SIZE as f64 / 2.0;
    Ok(tpl
        .polygons()
        .into_iter()
        .map(|(part, poly)| {
            let poly = poly
                .into_iter()
                .map(|(x, y)| {
                    let xs = x * cos + SHEAR * y * sin;
                    (half + params.scale * xs, GROUND_ROW - params.scale * y)
                })
                .collect();
            (part, poly)
        })
        .collect())
}

fn inside_convex(poly: &Polygon, px: f64, py: f64) -> bool {
    let mut pos = false;
    let mut neg = false;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        let cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
        pos |= cross > 0.0;
        neg |= cross < 0.0;
        if pos && neg {
            return false;
        }
    }
    true
}

/// Background colour at a pixel; every background is mirror symmetric.
pub fn background(id: u8, y: usize, x: usize) -> [f32; 3] {
    let ground = y as f64 >= GROUND_ROW;
    let t = (y as f32 / GROUND_ROW as f32).min(1.0);
    let g = ((y as f32 - GROUND_ROW as f32) / (SIZE as f32 - GROUND_ROW as f32)).clamp(0.0, 1.0);
    let lerp = |a: [f32; 3], b: [f32; 3], t: f32| [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t);
    match id {
        0 => {
            if ground {
                lerp([0.50, 0.50, 0.50], [0.40, 0.40, 0.42], g)
            } else {
                lerp([0.55, 0.75, 0.95], [0.85, 0.90, 0.95], t)
            }
        }
        1 => {
            if ground {
                lerp([0.18, 0.14, 0.12], [0.10, 0.08, 0.08], g)
            } else {
                lerp([0.20, 0.15, 0.35], [0.90, 0.55, 0.30], t)
            }
        }
        2 => {
            if ground {
                lerp([0.35, 0.60, 0.28], [0.22, 0.42, 0.18], g)
            } else {
                lerp([0.80, 0.85, 0.72], [0.90, 0.92, 0.80], t)
            }
        }
        _ => {
            if ground {
                [0.26, 0.26, 0.28]
            } else {
                let d = (x as f64 + 0.5 - SIZE as f64 / 2.0).abs();
                if (d / 4.0) as usize % 2 == 0 {
                    [0.56, 0.50, 0.45]
                } else {
                    [0.40, 0.38, 0.36]
                }
            }
        }
    }
}

/// Plain background image (no noise).
pub fn background_image(id: u8) -> Image {
    let mut img = Image::new(SIZE, SIZE, 3);
    for y in 0..SIZE {
        for x in 0..SIZE {
            let c = background(id, y, x);
            for (ch, v) in c.iter().enumerate() {
                img.set(y, x, ch, *v);
            }
        }
    }
    img
}

fn part_color(part: Part, body: [f64; 3]) -> [f32; 3] {
    match part {
        Part::Body => body.map(|v| v as f32),
        Part::Cab => body.map(|v| (v * 0.8) as f32),
        Part::Window => [0.72, 0.82, 0.92],
        Part::Wheel => [0.08, 0.08, 0.08],
        Part::Hub => [0.60, 0.60, 0.60],
    }
}

/// Renders a scene. Pure function of `params`.
pub fn render(params: &SceneParams) -> Result<Image> {
    Ok(render_with_mask(params)?.image)
}

pub fn render_with_mask(params: &SceneParams) -> Result<RenderedSample> {
    let polys = silhouette(params)?;
    let bboxes: Vec<(f64, f64, f64, f64)> = polys
        .iter()
        .map(|(_, p)| {
            p.iter().fold(
                (f64::MAX, f64::MAX, f64::MIN, f64::MIN),
                |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
            )
        })
        .collect();
    let mut rng = seed::rng(params.jitter_seed);
    let noise = crate::numerics::Array::<f32>::randn(&[SIZE * SIZE * 3], f64::from(NOISE_STD), &mut rng);
    let mut image = Image::new(SIZE, SIZE, 3);
    let mut mask = Mask {
        height: SIZE,
        width: SIZE,
        data: vec![false; SIZE * SIZE],
    };
    let n_sub = SUPERSAMPLE * SUPERSAMPLE;
    for y in 0..SIZE {
        for x in 0..SIZE {
            let bg = background(params.background_id, y, x);
            let mut acc = [0.0f32; 3];
            let mut covered = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                    let mut color = None;
                    for ((part, poly), bb) in polys.iter().zip(&bboxes) {
                        if px < bb.0 || px > bb.2 || py < bb.1 || py > bb.3 {
                            continue;
                        }
                        if inside_convex(poly, px, py) {
                            color = Some(part_color(*part, params.body_color));
                        }
                    }
                    let c = match color {
                        Some(c) => {
                            covered += 1;
                            c
                        }
                        None => bg,
                    };
                    for i in 0..3 {
                        acc[i] += c[i];
                    }
                }
            }
            mask.data[y * SIZE + x] = covered * 2 >= n_sub;
            for (ch, a) in acc.iter().enumerate() {
                let v = a / n_sub as f32 + noise.data()[(y * SIZE + x) * 3 + ch];
                image.set(y, x, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(RenderedSample {
        image,
        mask,
        params: *params,
    })
}
