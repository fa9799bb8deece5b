//! Hexagonal multi-cell layout, device placement, random-walk mobility and
//! cell re-association with a dwell requirement.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::uniform;
use crate::scalar::{lit, Scalar};

pub type Point<T> = [T; 2];

#[inline]
pub fn distance<T: Scalar>(a: Point<T>, b: Point<T>) -> T {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Axial hex directions, walked in this order around each ring.
const HEX_DIRECTIONS: [(i64, i64); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

/// Pointy-top hexagonal cells in ring order: the center cell first, then each
/// concentric ring.
#[derive(Clone, Debug, PartialEq)]
pub struct CellLayout<T> {
    centers: Vec<Point<T>>,
    cell_radius: T,
}

/// Axis-aligned box enclosing every cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds<T> {
    pub min: Point<T>,
    pub max: Point<T>,
}

impl<T: Scalar> Bounds<T> {
    pub fn contains(&self, p: Point<T>) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }
}

pub fn build_layout<T: Scalar>(num_cells: usize, cell_radius: T) -> Result<CellLayout<T>> {
    if num_cells == 0 {
        return Err(Error::InvalidArgument("layout needs at least one cell".into()));
    }
    if !(cell_radius > T::zero()) || !cell_radius.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "cell radius must be positive, got {cell_radius}"
        )));
    }
    let mut axial = vec![(0i64, 0i64)];
    let mut ring = 1i64;
    while axial.len() < num_cells {
        let (dq, dr) = HEX_DIRECTIONS[4];
        let mut hex = (dq * ring, dr * ring);
        'ring: for &(dq, dr) in &HEX_DIRECTIONS {
            for _ in 0..ring {
                axial.push(hex);
                if axial.len() == num_cells {
                    break 'ring;
                }
                hex = (hex.0 + dq, hex.1 + dr);
            }
        }
        ring += 1;
    }
    let sqrt3 = lit::<T>(3.0).sqrt();
    let centers = axial
        .into_iter()
        .map(|(q, r)| {
            let (q, r) = (lit::<T>(q as f64), lit::<T>(r as f64));
            [
                sqrt3 * cell_radius * (q + r / lit(2.0)),
                lit::<T>(1.5) * cell_radius * r,
            ]
        })
        .collect();
    Ok(CellLayout {
        centers,
        cell_radius,
    })
}

impl<T: Scalar> CellLayout<T> {
    pub fn num_cells(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[Point<T>] {
        &self.centers
    }

    pub fn center(&self, k: usize) -> Point<T> {
        self.centers[k]
    }

    pub fn cell_radius(&self) -> T {
        self.cell_radius
    }

    /// Cell whose center is closest; the Voronoi cells of a hex grid are
    /// exactly its hexagons. Ties go to the lower index.
    pub fn nearest_cell(&self, p: Point<T>) -> usize {
        let mut best = 0;
        let mut best_d = T::infinity();
        for (k, &c) in self.centers.iter().enumerate() {
            let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Strict interior test for the hexagon of cell `k`.
    pub fn contains(&self, k: usize, p: Point<T>) -> bool {
        let c = self.centers[k];
        in_unit_hexagon([(p[0] - c[0]) / self.cell_radius, (p[1] - c[1]) / self.cell_radius])
    }

    pub fn bounds(&self) -> Bounds<T> {
        let half_width = lit::<T>(3.0).sqrt() / lit(2.0) * self.cell_radius;
        let mut min = [T::infinity(); 2];
        let mut max = [T::neg_infinity(); 2];
        for c in &self.centers {
            min[0] = min[0].min(c[0] - half_width);
            max[0] = max[0].max(c[0] + half_width);
            min[1] = min[1].min(c[1] - self.cell_radius);
            max[1] = max[1].max(c[1] + self.cell_radius);
        }
        Bounds { min, max }
    }
}

/// Pointy-top hexagon with unit circumradius centered at the origin.
fn in_unit_hexagon<T: Scalar>(p: Point<T>) -> bool {
    let half_width = lit::<T>(3.0).sqrt() / lit(2.0);
    let ax = p[0].abs();
    ax < half_width && p[1].abs() < T::one() - ax / lit::<T>(3.0).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceKinematics<T> {
    pub position: Point<T>,
    /// m/s, within `[0, v_max]`.
    pub speed: T,
    /// Radians in `[0, 2π)`.
    pub heading: T,
    /// Distance moved during the last slot.
    pub displacement: T,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Association {
    pub serving_cell: usize,
    /// Consecutive slots spent inside `candidate`.
    pub dwell_counter: u64,
    pub candidate: Option<usize>,
}

impl Association {
    pub fn new(cell: usize) -> Self {
        Self {
            serving_cell: cell,
            dwell_counter: 0,
            candidate: None,
        }
    }
}

/// Uniform placement over the union of hexagons by picking a cell uniformly
/// (all cells have equal area) and rejection-sampling inside it.
pub fn init_devices<T: Scalar, R: Rng + ?Sized>(
    layout: &CellLayout<T>,
    num_devices: usize,
    max_speed: T,
    rng: &mut R,
) -> Vec<(DeviceKinematics<T>, Association)> {
    let r = layout.cell_radius().as_f64();
    let half_width = 3f64.sqrt() / 2.0;
    (0..num_devices)
        .map(|_| {
            let k = rng.random_range(0..layout.num_cells());
            let offset = loop {
                let u = [uniform(rng, -half_width, half_width), uniform(rng, -1.0, 1.0)];
                if in_unit_hexagon(u) {
                    break u;
                }
            };
            let c = layout.center(k);
            let position = [c[0] + lit::<T>(offset[0] * r), c[1] + lit::<T>(offset[1] * r)];
            let speed = lit::<T>(uniform(rng, 0.0, 1.0)) * max_speed;
            let heading = lit::<T>(uniform(rng, 0.0, std::f64::consts::TAU));
            let device = DeviceKinematics {
                position,
                speed,
                heading,
                displacement: T::zero(),
            };
            (device, Association::new(k))
        })
        .collect()
}

/// Constants of the random-walk mobility process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MobilityParams<T> {
    pub max_speed: T,
    pub speed_step: T,
    pub heading_step: T,
    pub slot_seconds: T,
    /// Slots between speed/heading perturbations.
    pub cadence: u64,
}

#[inline]
fn wrap_angle<T: Scalar>(a: T) -> T {
    let tau = T::TAU();
    let w = a % tau;
    let w = if w < T::zero() { w + tau } else { w };
    // `-tiny % tau + tau` can round to exactly tau.
    if w >= tau {
        T::zero()
    } else {
        w
    }
}

/// Advances every device by one slot. On cadence boundaries (slot index a
/// positive multiple of `cadence`) speed and heading are first perturbed
/// uniformly; speed is clamped to `[0, max_speed]`. Devices leaving `bounds`
/// are reflected back inside with the matching heading component mirrored.
pub fn step_mobility<T: Scalar, R: Rng + ?Sized>(
    devices: &mut [DeviceKinematics<T>],
    bounds: &Bounds<T>,
    slot_index: u64,
    params: &MobilityParams<T>,
    rng: &mut R,
) {
    let perturb = slot_index > 0 && slot_index % params.cadence == 0;
    for d in devices.iter_mut() {
        if perturb {
            let dv = lit::<T>(uniform(rng, -1.0, 1.0)) * params.speed_step;
            let dh = lit::<T>(uniform(rng, -1.0, 1.0)) * params.heading_step;
            d.speed = (d.speed + dv).max(T::zero()).min(params.max_speed);
            d.heading = wrap_angle(d.heading + dh);
        }
        let step = d.speed * params.slot_seconds;
        let old = d.position;
        let mut p = [
            old[0] + step * d.heading.cos(),
            old[1] + step * d.heading.sin(),
        ];
        let mut heading = d.heading;
        if p[0] < bounds.min[0] {
            p[0] = bounds.min[0] + bounds.min[0] - p[0];
            heading = T::PI() - heading;
        } else if p[0] > bounds.max[0] {
            p[0] = bounds.max[0] + bounds.max[0] - p[0];
            heading = T::PI() - heading;
        }
        if p[1] < bounds.min[1] {
            p[1] = bounds.min[1] + bounds.min[1] - p[1];
            heading = -heading;
        } else if p[1] > bounds.max[1] {
            p[1] = bounds.max[1] + bounds.max[1] - p[1];
            heading = -heading;
        }
        // A single step is far shorter than a cell, so one reflection suffices;
        // clamp anyway against rounding at the edge.
        p[0] = p[0].max(bounds.min[0]).min(bounds.max[0]);
        p[1] = p[1].max(bounds.min[1]).min(bounds.max[1]);
        d.heading = wrap_angle(heading);
        d.displacement = distance(old, p);
        d.position = p;
    }
}

/// Applies the dwell rule: a device is handed over to the cell containing it
/// only after `register_slots` consecutive slots inside that same cell.
/// Returns the number of handovers performed.
pub fn update_association<T: Scalar>(
    devices: &[DeviceKinematics<T>],
    associations: &mut [Association],
    layout: &CellLayout<T>,
    register_slots: u64,
) -> usize {
    let mut handovers = 0;
    for (d, a) in devices.iter().zip(associations.iter_mut()) {
        let here = layout.nearest_cell(d.position);
        if here == a.serving_cell {
            a.dwell_counter = 0;
            a.candidate = None;
            continue;
        }
        if a.candidate == Some(here) {
            a.dwell_counter += 1;
        } else {
            a.candidate = Some(here);
            a.dwell_counter = 1;
        }
        if a.dwell_counter >= register_slots {
            a.serving_cell = here;
            a.dwell_counter = 0;
            a.candidate = None;
            handovers += 1;
        }
    }
    handovers
}
