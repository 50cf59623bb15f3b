//! Random tissue-like speed-of-sound phantoms: a constant background plus
//! smoothed elliptical or polygonal inclusions.

use super::SosMap;
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InclusionShape {
    Ellipse,
    Polygon,
}

impl std::str::FromStr for InclusionShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipse" => Ok(InclusionShape::Ellipse),
            "polygon" => Ok(InclusionShape::Polygon),
            other => Err(Error::config(
                "dataset.inclusion_shape",
                format!("unknown shape family '{other}'"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub spacing: f64,
    pub background: f64,
    pub inclusion_count: (usize, usize),
    pub inclusion_speed: (f64, f64),
    pub shape: InclusionShape,
    /// Box-blur smoothing radius in cells; 0 disables smoothing.
    pub smoothing_radius: usize,
    /// Physical bounds written into the generated map.
    pub c_min: f64,
    pub c_max: f64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::config(
                "dataset.extent",
                "phantom grid must be at least 8x8",
            ));
        }
        if self.spacing <= 0.0 {
            return Err(Error::config("dataset.spacing", "spacing must be positive"));
        }
        let (lo, hi) = self.inclusion_speed;
        if !(self.c_min < lo && lo <= hi && hi < self.c_max)
            || !(self.c_min < self.background && self.background < self.c_max)
        {
            return Err(Error::config(
                "dataset.speeds",
                format!(
                    "speed ranges must sit strictly inside ({}, {})",
                    self.c_min, self.c_max
                ),
            ));
        }
        if self.inclusion_count.0 > self.inclusion_count.1 {
            return Err(Error::config(
                "dataset.inclusions",
                "inclusion count range is inverted",
            ));
        }
        Ok(())
    }
}

/// Draws one phantom. Deterministic given the rng state.
pub fn generate_phantom(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Result<SosMap> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut grid = vec![spec.background; h * w];
    let count = if spec.inclusion_count.0 == spec.inclusion_count.1 {
        spec.inclusion_count.0
    } else {
        rng.gen_range(spec.inclusion_count.0..=spec.inclusion_count.1)
    };

    let max_radius = (h.min(w) as f64) / 3.0;
    for _ in 0..count {
        // Bounded retries to place the inclusion fully inside the grid.
        let mut placed = false;
        for _ in 0..100 {
            let a = rng.gen_range(2.0..max_radius);
            let b = rng.gen_range(2.0..max_radius);
            let reach = a.max(b);
            let lo_y = reach.ceil() as usize + 1;
            let lo_x = reach.ceil() as usize + 1;
            if lo_y + 1 >= h - lo_y || lo_x + 1 >= w - lo_x {
                continue;
            }
            let cy = rng.gen_range(lo_y..h - lo_y) as f64;
            let cx = rng.gen_range(lo_x..w - lo_x) as f64;
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let speed = rng.gen_range(spec.inclusion_speed.0..=spec.inclusion_speed.1);
            match spec.shape {
                InclusionShape::Ellipse => {
                    paint_ellipse(&mut grid, h, w, cy, cx, a, b, angle, speed)
                }
                InclusionShape::Polygon => {
                    let sides = rng.gen_range(3..=6);
                    paint_polygon(&mut grid, h, w, cy, cx, a.max(b), angle, sides, speed)
                }
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::invalid(
                "phantom inclusion placement failed after 100 retries",
            ));
        }
    }

    if spec.smoothing_radius > 0 {
        grid = box_blur(&grid, h, w, spec.smoothing_radius);
    }
    for v in &mut grid {
        *v = v.clamp(spec.c_min, spec.c_max);
    }

    Ok(SosMap {
        grid,
        height: h,
        width: w,
        spacing: spec.spacing,
        c_min: spec.c_min,
        c_max: spec.c_max,
    })
}

#[allow(clippy::too_many_arguments)]
fn paint_ellipse(
    grid: &mut [f64],
    h: usize,
    w: usize,
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    angle: f64,
    speed: f64,
) {
    let (sin, cos) = angle.sin_cos();
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let u = (dx * cos + dy * sin) / a;
            let v = (-dx * sin + dy * cos) / b;
            if u * u + v * v <= 1.0 {
                grid[y * w + x] = speed;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn paint_polygon(
    grid: &mut [f64],
    h: usize,
    w: usize,
    cy: f64,
    cx: f64,
    radius: f64,
    angle: f64,
    sides: usize,
    speed: f64,
) {
    let verts: Vec<(f64, f64)> = (0..sides)
        .map(|i| {
            let a = angle + 2.0 * std::f64::consts::PI * i as f64 / sides as f64;
            (cy + radius * a.sin(), cx + radius * a.cos())
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            if point_in_polygon(y as f64, x as f64, &verts) {
                grid[y * w + x] = speed;
            }
        }
    }
}

fn point_in_polygon(py: f64, px: f64, verts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = verts.len();
    let mut j = n - 1;
    for i in 0..n {
        let (yi, xi) = verts[i];
        let (yj, xj) = verts[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Separable box blur with edge clamping.
fn box_blur(grid: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut cnt = 0.0;
            for d in -r..=r {
                let xx = x as isize + d;
                if (0..w as isize).contains(&xx) {
                    acc += grid[y * w + xx as usize];
                    cnt += 1.0;
                }
            }
            tmp[y * w + x] = acc / cnt;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut cnt = 0.0;
            for d in -r..=r {
                let yy = y as isize + d;
                if (0..h as isize).contains(&yy) {
                    acc += tmp[yy as usize * w + x];
                    cnt += 1.0;
                }
            }
            out[y * w + x] = acc / cnt;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    fn spec() -> PhantomSpec {
        PhantomSpec {
            height: 32,
            width: 32,
            spacing: 1.5e-3,
            background: 1500.0,
            inclusion_count: (1, 4),
            inclusion_speed: (1420.0, 1580.0),
            shape: InclusionShape::Ellipse,
            smoothing_radius: 1,
            c_min: 1400.0,
            c_max: 1600.0,
        }
    }

    #[test]
    fn zero_inclusions_gives_constant_background() {
        let mut s = spec();
        s.inclusion_count = (0, 0);
        let mut rng = Streams::new(1).stream("ph", &[]);
        let map = generate_phantom(&s, &mut rng).unwrap();
        assert!(map.grid.iter().all(|&v| v == 1500.0));
    }

    #[test]
    fn cells_stay_within_speed_bounds() {
        let s = spec();
        for i in 0..20u64 {
            let mut rng = Streams::new(2).stream("ph", &[i]);
            let map = generate_phantom(&s, &mut rng).unwrap();
            map.validate().unwrap();
            let lo = s.background.min(s.inclusion_speed.0);
            let hi = s.background.max(s.inclusion_speed.1);
            assert!(map.grid.iter().all(|&v| (lo..=hi).contains(&v)));
        }
    }

    #[test]
    fn different_seeds_differ_substantially() {
        let s = spec();
        let mut r1 = Streams::new(3).stream("ph", &[0]);
        let mut r2 = Streams::new(3).stream("ph", &[1]);
        let a = generate_phantom(&s, &mut r1).unwrap();
        let b = generate_phantom(&s, &mut r2).unwrap();
        let differing = a
            .grid
            .iter()
            .zip(&b.grid)
            .filter(|(x, y)| x != y)
            .count();
        assert!(
            differing * 100 > a.grid.len(),
            "only {differing} of {} cells differ",
            a.grid.len()
        );
    }

    #[test]
    fn polygon_family_paints_inclusions() {
        let mut s = spec();
        s.shape = InclusionShape::Polygon;
        s.inclusion_count = (2, 2);
        s.smoothing_radius = 0;
        let mut rng = Streams::new(5).stream("ph", &[]);
        let map = generate_phantom(&s, &mut rng).unwrap();
        assert!(map.grid.iter().any(|&v| v != s.background));
    }

    #[test]
    fn deterministic_given_stream() {
        let s = spec();
        let a = generate_phantom(&s, &mut Streams::new(9).stream("ph", &[7])).unwrap();
        let b = generate_phantom(&s, &mut Streams::new(9).stream("ph", &[7])).unwrap();
        assert_eq!(a, b);
    }
}
