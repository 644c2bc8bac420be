//! Dense 3D grid containers and the morphological primitives built on them.
//!
//! All grids share the same layout: `dims = (nx, ny, nz)`, data stored with x
//! fastest, so voxel `(x, y, z)` lives at index `x + nx * (y + ny * z)`.
//! Balls and spheres use the Euclidean metric with radii in voxel units.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Grid dimensions `(nx, ny, nz)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::invalid(format!(
                "dims must be positive, got ({nx}, {ny}, {nz})"
            )));
        }
        nx.checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Error::invalid(format!("dims ({nx}, {ny}, {nz}) overflow")))?;
        Ok(Dims { nx, ny, nz })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, p: Point3) -> bool {
        p.x >= 0
            && p.y >= 0
            && p.z >= 0
            && (p.x as usize) < self.nx
            && (p.y as usize) < self.ny
            && (p.z as usize) < self.nz
    }

    /// Linear index of an in-bounds point.
    pub fn index(&self, p: Point3) -> usize {
        debug_assert!(self.contains(p));
        p.x as usize + self.nx * (p.y as usize + self.ny * p.z as usize)
    }

    /// Inverse of `index`.
    pub fn point(&self, idx: usize) -> Point3 {
        let x = idx % self.nx;
        let y = (idx / self.nx) % self.ny;
        let z = idx / (self.nx * self.ny);
        Point3::new(x as i32, y as i32, z as i32)
    }
}

/// Integer voxel coordinates. Serialized as the array `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 3]", into = "[i32; 3]")]
pub struct Point3 {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl From<[i32; 3]> for Point3 {
    fn from(a: [i32; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl From<Point3> for [i32; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

impl Point3 {
    pub fn new(x: i32, y: i32, z: i32) -> Self {
        Point3 { x, y, z }
    }

    pub fn offset(&self, dx: i32, dy: i32, dz: i32) -> Point3 {
        Point3::new(self.x + dx, self.y + dy, self.z + dz)
    }

    pub fn dist2(&self, other: Point3) -> f64 {
        let dx = (self.x - other.x) as f64;
        let dy = (self.y - other.y) as f64;
        let dz = (self.z - other.z) as f64;
        dx * dx + dy * dy + dz * dz
    }

    pub fn dist(&self, other: Point3) -> f64 {
        self.dist2(other).sqrt()
    }

    /// Ordering key used for deterministic tie-breaking: z, then y, then x.
    pub fn zyx(&self) -> (i32, i32, i32) {
        (self.z, self.y, self.x)
    }
}

/// 3D grayscale intensity grid, the raw EM image proxy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayVolume {
    dims: Dims,
    data: Vec<u8>,
}

/// 3D segment-id grid. Id 0 is the "ignored/unassigned" sentinel and is never
/// counted as a body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    dims: Dims,
    data: Vec<u32>,
}

/// Real-valued per-voxel score field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    dims: Dims,
    data: Vec<f64>,
}

macro_rules! grid_common {
    ($t:ty, $elem:ty) => {
        impl $t {
            pub fn dims(&self) -> Dims {
                self.dims
            }

            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            pub fn get(&self, p: Point3) -> $elem {
                self.data[self.dims.index(p)]
            }

            pub fn set(&mut self, p: Point3, v: $elem) {
                let idx = self.dims.index(p);
                self.data[idx] = v;
            }
        }
    };
}

grid_common!(GrayVolume, u8);
grid_common!(LabelVolume, u32);
grid_common!(ScalarField, f64);

impl GrayVolume {
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::invalid(format!(
                "gray volume data length {} != nx*ny*nz = {}",
                data.len(),
                dims.len()
            )));
        }
        Ok(GrayVolume { dims, data })
    }

    pub fn filled(dims: Dims, value: u8) -> Self {
        GrayVolume {
            dims,
            data: vec![value; dims.len()],
        }
    }
}

impl LabelVolume {
    pub fn new(dims: Dims, data: Vec<u32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::invalid(format!(
                "label volume data length {} != nx*ny*nz = {}",
                data.len(),
                dims.len()
            )));
        }
        Ok(LabelVolume { dims, data })
    }

    pub fn filled(dims: Dims, value: u32) -> Self {
        LabelVolume {
            dims,
            data: vec![value; dims.len()],
        }
    }
}

impl ScalarField {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::invalid(format!(
                "scalar field data length {} != nx*ny*nz = {}",
                data.len(),
                dims.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("scalar field contains non-finite value {v}")));
        }
        Ok(ScalarField { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        ScalarField {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub(crate) fn from_raw_unchecked(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.len());
        ScalarField { dims, data }
    }
}

/// Per-voxel boolean mask sharing the grid layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelMask {
    dims: Dims,
    data: Vec<bool>,
}

impl VoxelMask {
    pub fn falses(dims: Dims) -> Self {
        VoxelMask {
            dims,
            data: vec![false; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, p: Point3) -> bool {
        self.data[self.dims.index(p)]
    }

    pub fn set(&mut self, p: Point3, v: bool) {
        let idx = self.dims.index(p);
        self.data[idx] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn intersect(&self, other: &VoxelMask) -> Result<VoxelMask> {
        if self.dims != other.dims {
            return Err(Error::invalid("mask dims mismatch"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a && b)
            .collect();
        Ok(VoxelMask {
            dims: self.dims,
            data,
        })
    }

    /// In-bounds points of the mask in scan order.
    pub fn points(&self) -> impl Iterator<Item = Point3> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| self.dims.point(i))
    }
}

/// All integer offsets `(dx, dy, dz)` with `dx² + dy² + dz² ≤ radius²`,
/// sorted ascending by `(dz, dy, dx)`.
pub fn ball_mask(radius: f64) -> Result<Vec<(i32, i32, i32)>> {
    if !radius.is_finite() || radius < 0.0 {
        return Err(Error::invalid(format!("ball radius must be finite and >= 0, got {radius}")));
    }
    let r = radius.floor() as i32;
    let r2 = radius * radius;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = (dx * dx + dy * dy + dz * dz) as f64;
                if d2 <= r2 {
                    out.push((dx, dy, dz));
                }
            }
        }
    }
    Ok(out)
}

/// Mask of voxels within `radius` of any voxel labeled `body`
/// (Euclidean ball structuring element, clipped at the volume border).
pub fn dilate_segment(labels: &LabelVolume, body: u32, radius: f64) -> Result<VoxelMask> {
    if body == 0 {
        return Err(Error::invalid("cannot dilate the ignore label 0"));
    }
    let offsets = ball_mask(radius)?;
    let dims = labels.dims();
    let mut mask = VoxelMask::falses(dims);
    for (idx, &lab) in labels.data().iter().enumerate() {
        if lab != body {
            continue;
        }
        let p = dims.point(idx);
        for &(dx, dy, dz) in &offsets {
            let q = p.offset(dx, dy, dz);
            if dims.contains(q) {
                mask.set(q, true);
            }
        }
    }
    Ok(mask)
}

/// Distinct nonzero segment ids intersecting the sphere around `center`.
pub fn bodies_in_sphere(
    labels: &LabelVolume,
    center: Point3,
    radius: f64,
) -> Result<std::collections::BTreeSet<u32>> {
    let dims = labels.dims();
    if !dims.contains(center) {
        return Err(Error::invalid(format!("sphere center {center:?} out of bounds")));
    }
    if !radius.is_finite() || radius < 0.0 {
        return Err(Error::invalid(format!("sphere radius must be finite and >= 0, got {radius}")));
    }
    let mut out = std::collections::BTreeSet::new();
    for (dx, dy, dz) in ball_mask(radius)? {
        let q = center.offset(dx, dy, dz);
        if dims.contains(q) {
            let lab = labels.get(q);
            if lab != 0 {
                out.insert(lab);
            }
        }
    }
    Ok(out)
}

/// Argmax of intensity over in-bounds voxels within the ball around `center`.
/// Ties broken by smallest `(z, y, x)`.
pub fn brightest_in_ball(gray: &GrayVolume, center: Point3, radius: f64) -> Result<Point3> {
    let dims = gray.dims();
    if !dims.contains(center) {
        return Err(Error::invalid(format!("ball center {center:?} out of bounds")));
    }
    if !radius.is_finite() || radius < 0.0 {
        return Err(Error::invalid(format!("ball radius must be finite and >= 0, got {radius}")));
    }
    let mut best: Option<(u8, Point3)> = None;
    // ball_mask offsets are sorted by (dz, dy, dx), so the first strict
    // maximum encountered is the (z, y, x)-smallest.
    for (dx, dy, dz) in ball_mask(radius)? {
        let q = center.offset(dx, dy, dz);
        if !dims.contains(q) {
            continue;
        }
        let v = gray.get(q);
        match best {
            Some((bv, _)) if bv >= v => {}
            _ => best = Some((v, q)),
        }
    }
    Ok(best.expect("center is always in the ball").1)
}

/// All unordered pairs of 6-adjacent voxels carrying different nonzero labels.
/// Each pair appears exactly once, as `(u, v)` with `u` the scan-order-earlier
/// voxel.
pub fn boundary_voxel_pairs(labels: &LabelVolume) -> Vec<(Point3, Point3)> {
    let dims = labels.dims();
    let mut out = Vec::new();
    for idx in 0..dims.len() {
        let p = dims.point(idx);
        let a = labels.data()[idx];
        if a == 0 {
            continue;
        }
        for q in [
            p.offset(1, 0, 0),
            p.offset(0, 1, 0),
            p.offset(0, 0, 1),
        ] {
            if !dims.contains(q) {
                continue;
            }
            let b = labels.get(q);
            if b != 0 && b != a {
                out.push((p, q));
            }
        }
    }
    out
}
