//! Coarse-pose deformations and procedural wrinkles.

use std::f64::consts::TAU;

use nalgebra::{Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{vertex_normals, TriangleMesh};

use super::cloth::{ClothSpec, PanelLayout};
use super::SynthError;

/// Number of coarse pose degrees of freedom: bend x, bend z, twist,
/// swing x, swing z, flare.
pub const POSE_DOFS: usize = 6;

// Animation periods in frames, pairwise coprime so the pose sequence does
// not repeat over desk-scale datasets.
const POSE_PERIODS: [f64; POSE_DOFS] = [61.0, 97.0, 41.0, 53.0, 71.0, 83.0];

// Extrapolation frames shift the first bend DOF by this many bend
// amplitudes; the resulting range [1.2, 3.2] * amplitude is disjoint from
// the in-range band [-1, 1] * amplitude.
const EXTRAPOLATION_BEND_OFFSET: f64 = 2.2;

// Wrinkle lattice parameters: a seed tag decorrelating the lattice stream
// from the pose-phase stream, the time-axis resolution, and how many frames
// one time cell spans.
const WRINKLE_STREAM: u64 = 0x5752_4e4b;
const TIME_CELLS: usize = 128;
const FRAMES_PER_TIME_CELL: f64 = 8.0;

/// Coarse pose and wrinkle-field parameters of a deformation sequence.
///
/// The coarse pose is a six-DOF analytic map (two hem bends, a twist, two
/// waist swings, a radial flare), each DOF animated as a sinusoid with a
/// seed-derived phase. Wrinkles are periodic value noise displaced along the
/// coarse surface normals and suppressed where the coarse map stretches the
/// surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationParams {
    /// Peak hem bend displacement, meters (two horizontal DOFs).
    pub bend_amplitude: f64,
    /// Peak hem twist against the waist, radians.
    pub twist_amplitude: f64,
    /// Peak rigid tilt about the waist, radians (two DOFs).
    pub swing_amplitude: f64,
    /// Peak radial hem flare, as a fraction of the rest radius.
    pub flare_amplitude: f64,
    /// Wrinkle displacement bound, meters.
    pub wrinkle_amplitude: f64,
    /// Wrinkle wavelength, meters. Must exceed twice the mesh edge length so
    /// the mesh can represent the wrinkles.
    pub wrinkle_wavelength: f64,
    /// How strongly in-plane stretch suppresses wrinkles (0 disables the
    /// coupling; wrinkles vanish where stretch exceeds 1 + 1/coupling).
    pub compression_coupling: f64,
    /// Seed for the pose phases and the wrinkle lattice.
    pub seed: u64,
}

impl Default for DeformationParams {
    fn default() -> Self {
        Self {
            bend_amplitude: 0.18,
            twist_amplitude: 0.5,
            swing_amplitude: 0.25,
            flare_amplitude: 0.15,
            wrinkle_amplitude: 0.008,
            wrinkle_wavelength: 0.15,
            compression_coupling: 5.0,
            seed: 0,
        }
    }
}

impl DeformationParams {
    pub fn validate(&self, spec: &ClothSpec) -> Result<(), SynthError> {
        for amp in [
            self.bend_amplitude,
            self.twist_amplitude,
            self.swing_amplitude,
            self.flare_amplitude,
            self.wrinkle_amplitude,
        ] {
            if !(amp.is_finite() && amp >= 0.0) {
                return Err(SynthError::BadAmplitude(amp));
            }
        }
        if !(self.compression_coupling.is_finite() && self.compression_coupling >= 0.0) {
            return Err(SynthError::BadCoupling(self.compression_coupling));
        }
        let edge = spec.max_edge_len();
        if !self.wrinkle_wavelength.is_finite() || self.wrinkle_wavelength <= 2.0 * edge {
            return Err(SynthError::WavelengthTooShort {
                wavelength: self.wrinkle_wavelength,
                edge,
            });
        }
        Ok(())
    }
}

/// The six coarse DOFs at a frame: sinusoids with seed-derived phases.
/// Extrapolation shifts the first bend DOF outside the in-range band.
pub fn pose_at(params: &DeformationParams, frame: usize, extrapolate: bool) -> [f64; POSE_DOFS] {
    let mut rng = ChaCha12Rng::seed_from_u64(params.seed);
    let amps = [
        params.bend_amplitude,
        params.bend_amplitude,
        params.twist_amplitude,
        params.swing_amplitude,
        params.swing_amplitude,
        params.flare_amplitude,
    ];
    let mut pose = [0.0; POSE_DOFS];
    for (k, dof) in pose.iter_mut().enumerate() {
        let phase: f64 = rng.gen_range(0.0..TAU);
        *dof = amps[k] * (TAU * frame as f64 / POSE_PERIODS[k] + phase).sin();
    }
    if extrapolate {
        pose[0] += EXTRAPOLATION_BEND_OFFSET * params.bend_amplitude;
    }
    pose
}

/// Coarse deformation of one vertex. The garment hangs from its waist (top
/// row); flare, twist and bend fade quadratically or linearly to zero there
/// and grow toward the free hem, while swing tilts rigidly about the waist
/// center. A zero pose reproduces the rest position bit for bit.
fn coarse_vertex(spec: &ClothSpec, pose: &[f64; POSE_DOFS], c: usize, j: usize) -> Point3<f64> {
    let rest = spec.mean_vertex(c, j);
    let hem = 1.0 - rest.y / spec.panel_height; // 1 at the hem, 0 at the waist
    let flare = 1.0 + pose[5] * hem;
    let (x0, z0) = (rest.x * flare, rest.z * flare);
    let (s, co) = (pose[2] * hem).sin_cos();
    let mut p = Vector3::new(co * x0 + s * z0, rest.y, co * z0 - s * x0);
    p.x += pose[0] * hem * hem;
    p.z += pose[1] * hem * hem;
    if pose[3] != 0.0 || pose[4] != 0.0 {
        let pivot = Vector3::new(0.0, spec.panel_height, 0.0);
        let tilt = Rotation3::from_axis_angle(&Vector3::x_axis(), pose[4])
            * Rotation3::from_axis_angle(&Vector3::z_axis(), -pose[3]);
        p = tilt * (p - pivot) + pivot;
    }
    Point3::from(p)
}

/// Periodic value-noise lattice: uniform values in [-1, 1] on an
/// (arc, height, time) grid, sampled with trilinear interpolation under a
/// quintic fade. Samples stay in [-1, 1].
struct WrinkleField {
    values: Vec<f64>,
    arc_cells: usize,
    height_cells: usize,
    /// Lattice cells advanced per unit of the arc coordinate (column index).
    cells_per_column: f64,
}

impl WrinkleField {
    fn new(spec: &ClothSpec, params: &DeformationParams) -> Self {
        let wavelength = params.wrinkle_wavelength;
        let (arc_cells, cells_per_column) = match spec.layout {
            PanelLayout::Tube => {
                // round to an integer cell count so the field closes around
                // the ring (the effective arc wavelength is circumference /
                // cells, the nearest periodic fit)
                let circumference = 2.0 * spec.panel_width;
                let cells = (circumference / wavelength).round().max(1.0);
                (cells as usize, cells / spec.ring() as f64)
            }
            PanelLayout::Sheet => {
                let widths = spec.panel_width / wavelength;
                let cells = widths.ceil().max(1.0) as usize;
                (cells, widths / (spec.cols - 1) as f64)
            }
        };
        let height_cells = (spec.panel_height / wavelength).ceil().max(1.0) as usize;
        let mut rng = ChaCha12Rng::seed_from_u64(params.seed ^ WRINKLE_STREAM);
        let values = (0..TIME_CELLS * height_cells * arc_cells)
            .map(|_| rng.gen_range(-1.0..=1.0))
            .collect();
        Self {
            values,
            arc_cells,
            height_cells,
            cells_per_column,
        }
    }

    fn value(&self, a: usize, h: usize, t: usize) -> f64 {
        let a = a % self.arc_cells;
        let h = h % self.height_cells;
        let t = t % TIME_CELLS;
        self.values[(t * self.height_cells + h) * self.arc_cells + a]
    }

    fn sample(&self, arc: f64, height: f64, time: f64) -> f64 {
        let split = |x: f64, n: usize| {
            let x = x.rem_euclid(n as f64);
            let cell = (x.floor() as usize).min(n - 1);
            (cell, fade(x - x.floor()))
        };
        let (ia, wa) = split(arc, self.arc_cells);
        let (ih, wh) = split(height, self.height_cells);
        let (it, wt) = split(time, TIME_CELLS);
        let mut acc = 0.0;
        for (da, fa) in [(0, 1.0 - wa), (1, wa)] {
            for (dh, fh) in [(0, 1.0 - wh), (1, wh)] {
                for (dt, ft) in [(0, 1.0 - wt), (1, wt)] {
                    acc += fa * fh * ft * self.value(ia + da, ih + dh, it + dt);
                }
            }
        }
        acc
    }
}

fn fade(u: f64) -> f64 {
    u * u * u * (u * (6.0 * u - 15.0) + 10.0)
}

/// Mean in-plane stretch of the coarse map around vertex (c, j): deformed
/// over rest distance to the lattice neighbors (ring wraps, rows clamp).
fn stretch_factor(
    spec: &ClothSpec,
    rest: &[Point3<f64>],
    coarse: &[Point3<f64>],
    c: usize,
    j: usize,
) -> f64 {
    let ring = spec.ring();
    let idx = |cc: usize, jj: usize| jj * ring + cc;
    let me = idx(c, j);
    let mut neighbors = Vec::with_capacity(4);
    match spec.layout {
        PanelLayout::Tube => {
            neighbors.push(idx((c + 1) % ring, j));
            neighbors.push(idx((c + ring - 1) % ring, j));
        }
        PanelLayout::Sheet => {
            if c + 1 < ring {
                neighbors.push(idx(c + 1, j));
            }
            if c > 0 {
                neighbors.push(idx(c - 1, j));
            }
        }
    }
    if j + 1 < spec.rows {
        neighbors.push(idx(c, j + 1));
    }
    if j > 0 {
        neighbors.push(idx(c, j - 1));
    }
    let deformed: f64 = neighbors
        .iter()
        .map(|&n| (coarse[n] - coarse[me]).norm())
        .sum();
    let at_rest: f64 = neighbors.iter().map(|&n| (rest[n] - rest[me]).norm()).sum();
    deformed / at_rest
}

/// Deformed vertex positions for an explicit pose: the coarse map plus
/// wrinkles along the coarse surface normals, bounded by
/// `wrinkle_amplitude` and suppressed where the surface is stretched.
///
/// Deterministic in `(params, pose, frame)`; the spec and params must be
/// valid. Vertex order matches `build_template`.
pub fn generate_posed(
    spec: &ClothSpec,
    params: &DeformationParams,
    pose: &[f64; POSE_DOFS],
    frame: usize,
) -> Vec<Point3<f64>> {
    let ring = spec.ring();
    let count = spec.vertex_count();
    let mut rest = Vec::with_capacity(count);
    let mut coarse = Vec::with_capacity(count);
    for j in 0..spec.rows {
        for c in 0..ring {
            rest.push(spec.mean_vertex(c, j));
            coarse.push(coarse_vertex(spec, pose, c, j));
        }
    }
    if params.wrinkle_amplitude == 0.0 {
        return coarse;
    }
    let (faces, _) = spec.topology();
    let mesh = TriangleMesh::new(coarse.clone(), faces).expect("coarse frame mesh");
    let normals = vertex_normals(&mesh).normals;
    let field = WrinkleField::new(spec, params);
    let time = frame as f64 / FRAMES_PER_TIME_CELL;
    let mut out = coarse.clone();
    for j in 0..spec.rows {
        for c in 0..ring {
            let i = j * ring + c;
            let noise = field.sample(
                c as f64 * field.cells_per_column,
                rest[i].y / params.wrinkle_wavelength,
                time,
            );
            let stretch = stretch_factor(spec, &rest, &coarse, c, j);
            let gain = (1.0 - params.compression_coupling * (stretch - 1.0)).clamp(0.0, 1.0);
            out[i] = coarse[i] + params.wrinkle_amplitude * gain * noise * normals[i];
        }
    }
    out
}

/// Deformed vertex positions at a frame of the in-range animation.
/// Deterministic in `(params.seed, frame)`.
pub fn generate_frame(
    spec: &ClothSpec,
    params: &DeformationParams,
    frame: usize,
) -> Vec<Point3<f64>> {
    generate_posed(spec, params, &pose_at(params, frame, false), frame)
}
