//! Car silhouette templates.
//!
//! Units are pixels at scale 1.0. The frame has `x` to the right, centred on
//! the car, and `y` up from the ground line. Every template is left/right
//! symmetric, so the yaw shear alone encodes the sign of the pose.
//!
//! Templates come in pairs `(2k, 2k+1)` that share body dimensions and differ
//! only in cab length and wheel radius. Templates 8–11 (tall pickup and van
//! shapes) never appear in the source world the generator is trained on.
//!
//! | id | body len | body h | cab len | cab h | wheel r |
//! |----|----------|--------|---------|-------|---------|
//! |  0 | 24 | 5.0 | 10 | 4.5 | 2.6 |
//! |  1 | 24 | 5.0 | 13 | 4.5 | 3.3 |
//! |  2 | 22 | 5.5 |  9 | 5.0 | 2.8 |
//! |  3 | 22 | 5.5 | 12 | 5.0 | 3.5 |
//! |  4 | 26 | 4.5 | 12 | 4.0 | 2.7 |
//! |  5 | 26 | 4.5 | 15 | 4.0 | 3.4 |
//! |  6 | 20 | 6.0 |  8 | 5.0 | 3.0 |
//! |  7 | 20 | 6.0 | 11 | 5.0 | 3.7 |
//! |  8 | 25 | 6.5 |  8 | 6.0 | 3.2 |
//! |  9 | 25 | 6.5 | 11 | 6.0 | 3.9 |
//! | 10 | 23 | 8.0 | 16 | 3.5 | 3.0 |
//! | 11 | 23 | 8.0 | 19 | 3.5 | 3.7 |

pub const NUM_TEMPLATES: usize = 12;
/// Templates the source world may contain.
pub const SOURCE_TEMPLATES: std::ops::RangeInclusive<u8> = 0..=7;
/// Templates excluded from the source world.
pub const HELD_OUT_TEMPLATES: [u8; 4] = [8, 9, 10, 11];
/// Templates that form the labelled target classes.
pub const TARGET_TEMPLATES: std::ops::RangeInclusive<u8> = 2..=11;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Template {
    pub body_len: f64,
    pub body_h: f64,
    pub cab_len: f64,
    pub cab_h: f64,
    pub wheel_r: f64,
}

const WHEEL_INSET: f64 = 4.5;
const CHAMFER: f64 = 1.2;

pub const TEMPLATES: [Template; NUM_TEMPLATES] = [
    t(24.0, 5.0, 10.0, 4.5, 2.6),
    t(24.0, 5.0, 13.0, 4.5, 3.3),
    t(22.0, 5.5, 9.0, 5.0, 2.8),
    t(22.0, 5.5, 12.0, 5.0, 3.5),
    t(26.0, 4.5, 12.0, 4.0, 2.7),
    t(26.0, 4.5, 15.0, 4.0, 3.4),
    t(20.0, 6.0, 8.0, 5.0, 3.0),
    t(20.0, 6.0, 11.0, 5.0, 3.7),
    t(25.0, 6.5, 8.0, 6.0, 3.2),
    t(25.0, 6.5, 11.0, 6.0, 3.9),
    t(23.0, 8.0, 16.0, 3.5, 3.0),
    t(23.0, 8.0, 19.0, 3.5, 3.7),
];

const fn t(body_len: f64, body_h: f64, cab_len: f64, cab_h: f64, wheel_r: f64) -> Template {
    Template {
        body_len,
        body_h,
        cab_len,
        cab_h,
        wheel_r,
    }
}

/// Part of the silhouette; parts are drawn in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Body,
    Cab,
    Window,
    Wheel,
    Hub,
}

pub type Polygon = Vec<(f64, f64)>;

impl Template {
    /// Bottom of the body above the ground line.
    fn clearance(&self) -> f64 {
        0.6 * self.wheel_r
    }

    /// Convex polygons of the silhouette in template units, before yaw.
    pub fn polygons(&self) -> Vec<(Part, Polygon)> {
        let hl = self.body_len / 2.0;
        let y0 = self.clearance();
        let y1 = y0 + self.body_h;
        let c = CHAMFER;
        let body = vec![
            (-hl, y0),
            (hl, y0),
            (hl, y1 - c),
            (hl - c, y1),
            (-hl + c, y1),
            (-hl, y1 - c),
        ];
        let hc = self.cab_len / 2.0;
        let slant = 0.45 * self.cab_h;
        let y2 = y1 + self.cab_h;
        let cab = vec![(-hc, y1), (hc, y1), (hc - slant, y2), (-hc + slant, y2)];
        let inset = 0.8;
        let window = vec![
            (-hc + inset + 0.3, y1 + 0.5),
            (hc - inset - 0.3, y1 + 0.5),
            (hc - slant - inset * 0.6, y2 - inset),
            (-hc + slant + inset * 0.6, y2 - inset),
        ];
        let mut parts = vec![(Part::Body, body), (Part::Cab, cab), (Part::Window, window)];
        let xw = hl - WHEEL_INSET;
        for sx in [-1.0, 1.0] {
            parts.push((Part::Wheel, circle(sx * xw, self.wheel_r, self.wheel_r)));
            parts.push((Part::Hub, circle(sx * xw, self.wheel_r, 0.4 * self.wheel_r)));
        }
        parts
    }
}

fn circle(cx: f64, cy: f64, r: f64) -> Polygon {
    const SEGMENTS: usize = 16;
    // Vertices symmetric about the vertical through the centre.
    (0..SEGMENTS)
        .map(|i| {
            let a = (i as f64 + 0.5) * std::f64::consts::TAU / SEGMENTS as f64;
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_differ_only_in_cab_and_wheels() {
        for k in 0..6 {
            let (a, b) = (TEMPLATES[2 * k], TEMPLATES[2 * k + 1]);
            assert_eq!(a.body_len, b.body_len);
            assert_eq!(a.body_h, b.body_h);
            assert_eq!(a.cab_h, b.cab_h);
            assert!(a.cab_len < b.cab_len && a.wheel_r < b.wheel_r);
        }
    }

    #[test]
    fn silhouettes_fit_the_frame() {
        for tpl in TEMPLATES {
            for (_, poly) in tpl.polygons() {
                for (x, y) in poly {
                    assert!(x.abs() <= tpl.body_len / 2.0 + 1e-9);
                    assert!((-1e-9..=15.0).contains(&y));
                }
            }
        }
    }
}
