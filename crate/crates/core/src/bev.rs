//! Two-channel binary bird's-eye-view raster of a vehicle-frame point cloud.
//!
//! Image layout: the vehicle sits at the image center with +x (forward)
//! pointing up. For a point `(px, py)`:
//!
//! ```text
//! row = floor((half_length - px) / resolution)
//! col = floor((py + half_width) / resolution)
//! ```
//!
//! so row 0 is the far-forward edge and columns grow toward the vehicle's left.
//! Points with height below `ground_z_max` land in the ground channel, the rest
//! in the non-ground channel.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lidar::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BevParams {
    /// Cells per side.
    pub grid: usize,
    /// Square footprint side length, m.
    pub extent: f64,
    /// Height of the crop volume, m.
    pub height: f64,
    /// Points lower than this are ground, m.
    pub ground_z_max: f64,
}

impl Default for BevParams {
    fn default() -> Self {
        BevParams {
            grid: 256,
            extent: 32.0,
            height: 5.0,
            ground_z_max: 0.2,
        }
    }
}

impl BevParams {
    /// Default extent at a different grid size.
    pub fn with_grid(grid: usize) -> Self {
        BevParams {
            grid,
            ..Default::default()
        }
    }

    pub fn resolution(&self) -> f64 {
        self.extent / self.grid as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.grid % 8 != 0 {
            return Err(Error::config(format!(
                "BEV grid side {} must be a positive multiple of 8",
                self.grid
            )));
        }
        if !(self.extent > 0.0 && self.height > 0.0) {
            return Err(Error::config("BEV extent and height must be positive"));
        }
        Ok(())
    }

    /// Cell containing a vehicle-frame point, or `None` when it is cropped.
    pub fn cell_of(&self, px: f64, py: f64, pz: f64) -> Option<(usize, usize)> {
        let half = self.extent / 2.0;
        if !(px.abs() <= half && py.abs() <= half && (0.0..=self.height).contains(&pz)) {
            return None;
        }
        let res = self.resolution();
        let last = self.grid - 1;
        // points exactly on the far boundary fold into the last cell
        let row = (((half - px) / res).floor() as usize).min(last);
        let col = (((py + half) / res).floor() as usize).min(last);
        Some((row, col))
    }

    /// Vehicle-frame bounds `(px_min, px_max, py_min, py_max)` of a cell.
    pub fn cell_bounds(&self, row: usize, col: usize) -> (f64, f64, f64, f64) {
        let half = self.extent / 2.0;
        let res = self.resolution();
        let px_max = half - row as f64 * res;
        let py_min = col as f64 * res - half;
        (px_max - res, px_max, py_min, py_min + res)
    }
}

/// Square bit plane, row-major, most significant bit first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitGrid {
    side: usize,
    bits: Vec<u8>,
}

impl BitGrid {
    pub fn new(side: usize) -> Self {
        BitGrid {
            side,
            bits: vec![0; (side * side).div_ceil(8)],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        let i = row * self.side + col;
        self.bits[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn set(&mut self, row: usize, col: usize) {
        let i = row * self.side + col;
        self.bits[i / 8] |= 0x80 >> (i % 8);
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// `(row, col)` of every set cell in row-major order.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let side = self.side;
        self.bits.iter().enumerate().flat_map(move |(k, &b)| {
            (0..8)
                .filter(move |i| b & (0x80 >> i) != 0)
                .map(move |i| ((8 * k + i) / side, (8 * k + i) % side))
        })
    }

    /// Row-major bits, most significant bit first, `side^2 / 8` bytes.
    pub fn to_packed(&self) -> Vec<u8> {
        self.bits.clone()
    }

    pub fn as_packed(&self) -> &[u8] {
        &self.bits
    }

    pub fn from_packed(side: usize, bytes: &[u8]) -> Result<Self> {
        if side % 8 != 0 || bytes.len() != side * side / 8 {
            return Err(Error::format(
                "bit plane",
                format!("{} bytes for side {side}", bytes.len()),
            ));
        }
        Ok(BitGrid {
            side,
            bits: bytes.to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevImage {
    pub ground: BitGrid,
    pub nonground: BitGrid,
    pub params: BevParams,
}

/// Outcome of rasterizing one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub image: BevImage,
    /// Points dropped for non-finite coordinates.
    pub non_finite: usize,
}

impl BevImage {
    pub fn empty(params: BevParams) -> Self {
        BevImage {
            ground: BitGrid::new(params.grid),
            nonground: BitGrid::new(params.grid),
            params,
        }
    }

    pub fn side(&self) -> usize {
        self.params.grid
    }

    /// Writes both channels as one binary PBM (P4): ground on top, non-ground below.
    pub fn write_pbm<W: Write>(&self, mut w: W) -> Result<()> {
        let side = self.side();
        write!(w, "P4\n{} {}\n", side, 2 * side)?;
        w.write_all(&self.ground.to_packed())?;
        w.write_all(&self.nonground.to_packed())?;
        Ok(())
    }
}

/// Bins the cloud into the two occupancy channels.
pub fn rasterize(cloud: &PointCloud, params: &BevParams) -> Raster {
    let mut image = BevImage::empty(*params);
    let mut non_finite = 0;
    for p in &cloud.points {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            non_finite += 1;
            continue;
        }
        if let Some((r, c)) = params.cell_of(p.x, p.y, p.z) {
            if p.z < params.ground_z_max {
                image.ground.set(r, c);
            } else {
                image.nonground.set(r, c);
            }
        }
    }
    Raster { image, non_finite }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lidar::CloudPoint;

    fn pt(x: f64, y: f64, z: f64) -> CloudPoint {
        CloudPoint {
            x,
            y,
            z,
            ground: z < 0.2,
        }
    }

    fn cloud(points: Vec<CloudPoint>) -> PointCloud {
        PointCloud { points }
    }

    #[test]
    fn empty_cloud_gives_empty_image() {
        let r = rasterize(&PointCloud::default(), &BevParams::default());
        assert_eq!(r.image.ground.count() + r.image.nonground.count(), 0);
        assert_eq!(r.image.side(), 256);
    }

    #[test]
    fn origin_maps_to_center() {
        let r = rasterize(&cloud(vec![pt(0.0, 0.0, 0.0)]), &BevParams::default());
        // (16 - 0) / 0.125 = 128 for both axes
        assert!(r.image.ground.get(128, 128));
        assert_eq!(r.image.ground.count(), 1);
        assert_eq!(r.image.nonground.count(), 0);
    }

    #[test]
    fn height_threshold_splits_channels() {
        let r = rasterize(&cloud(vec![pt(0.0, 0.0, 1.0)]), &BevParams::default());
        assert_eq!(r.image.ground.count(), 0);
        assert!(r.image.nonground.get(128, 128));
    }

    #[test]
    fn crop_and_non_finite() {
        let r = rasterize(
            &cloud(vec![pt(16.1, 0.0, 0.0), pt(0.0, -20.0, 0.0), pt(0.0, 0.0, 5.5), pt(f64::NAN, 0.0, 0.0)]),
            &BevParams::default(),
        );
        assert_eq!(r.image.ground.count() + r.image.nonground.count(), 0);
        assert_eq!(r.non_finite, 1);
    }

    #[test]
    fn boundary_points_fold_into_edge_cells() {
        let p = BevParams::default();
        assert_eq!(p.cell_of(16.0, -16.0, 0.0), Some((0, 0)));
        assert_eq!(p.cell_of(-16.0, 16.0, 0.0), Some((255, 255)));
    }

    #[test]
    fn forward_is_up_left_is_right_columns() {
        let p = BevParams::default();
        let (r, c) = p.cell_of(10.0, 3.0, 0.0).unwrap();
        assert!(r < 128 && c > 128);
    }

    #[test]
    fn packed_round_trip() {
        let mut g = BitGrid::new(16);
        g.set(0, 0);
        g.set(3, 9);
        g.set(15, 15);
        let packed = g.to_packed();
        assert_eq!(packed.len(), 32);
        assert_eq!(packed[0], 0b1000_0000);
        assert_eq!(BitGrid::from_packed(16, &packed).unwrap(), g);
    }

    #[test]
    fn pbm_header() {
        let img = BevImage::empty(BevParams::with_grid(64));
        let mut buf = Vec::new();
        img.write_pbm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P4\n64 128\n"));
        assert_eq!(buf.len(), 10 + 2 * 64 * 64 / 8);
    }
}
