use std::collections::HashSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{cfg_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// Half circle, endpoints inclusive.
    Arc,
    /// Full circle, `n_angles` equal steps.
    Circle,
    /// Half-circle arc in the first two dims, repeated over `n_z` planes of
    /// the third.
    Cylinder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub geometry: Geometry,
    pub n_angles: usize,
    pub n_z: usize,
    pub radius: f64,
    pub center: Vec<f64>,
}

/// Grid-node sensor positions, ordered angle-major then by z plane.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorArray {
    pub(crate) positions: Vec<Vec<usize>>,
    pub(crate) layout: SensorLayout,
}

impl SensorArray {
    pub fn positions(&self) -> &[Vec<usize>] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn layout(&self) -> &SensorLayout {
        &self.layout
    }

    /// Ideal point sensors at explicit nodes.
    pub fn from_positions(positions: Vec<Vec<usize>>, extents: &[usize]) -> Result<SensorArray> {
        check_positions(&positions, extents)?;
        Ok(SensorArray {
            positions,
            layout: SensorLayout {
                geometry: Geometry::Arc,
                n_angles: 0,
                n_z: 0,
                radius: 0.0,
                center: vec![],
            },
        })
    }

    /// Same geometry with every position moved by `offset` cells.
    pub fn shifted(&self, offset: &[usize]) -> SensorArray {
        let mut out = self.clone();
        for p in &mut out.positions {
            for (c, o) in p.iter_mut().zip(offset) {
                *c += o;
            }
        }
        for (c, &o) in out.layout.center.iter_mut().zip(offset) {
            *c += o as f64;
        }
        out
    }
}

fn check_positions(positions: &[Vec<usize>], extents: &[usize]) -> Result<()> {
    let mut seen = HashSet::new();
    for p in positions {
        if p.len() != extents.len() || p.iter().zip(extents).any(|(&i, &e)| i >= e) {
            return Err(cfg_err!("sensor {p:?} lies outside the grid {extents:?}"));
        }
        if !seen.insert(p) {
            return Err(cfg_err!(
                "sensor {p:?} appears twice; too many angles for the radius"
            ));
        }
    }
    Ok(())
}

pub fn sensor_angles(geometry: Geometry, n_angles: usize) -> Vec<f64> {
    match geometry {
        Geometry::Circle => (0..n_angles).map(|j| 2.0 * PI * j as f64 / n_angles as f64).collect(),
        _ if n_angles == 1 => vec![0.0],
        _ => (0..n_angles).map(|j| PI * j as f64 / (n_angles - 1) as f64).collect(),
    }
}

/// Sensors on an arc (or full circle) of `radius_cells` about `center`,
/// snapped to the nearest grid node of a grid with `extents`.
pub fn make_sensor_array(
    geometry: Geometry,
    n_angles: usize,
    n_z: usize,
    radius_cells: f64,
    center: &[f64],
    extents: &[usize],
) -> Result<SensorArray> {
    if n_angles == 0 {
        return Err(cfg_err!("sensor array needs at least one angle"));
    }
    if !(radius_cells >= 0.0 && radius_cells.is_finite()) {
        return Err(cfg_err!("sensor radius must be non-negative, got {radius_cells}"));
    }
    let dims = extents.len();
    let planar_ok = matches!(geometry, Geometry::Arc | Geometry::Circle) && dims == 2;
    if !(planar_ok || geometry == Geometry::Cylinder && dims == 3) {
        return Err(cfg_err!("{geometry:?} sensors do not fit a {dims}-D grid"));
    }
    if center.len() != dims {
        return Err(cfg_err!("sensor center {center:?} does not match the grid rank"));
    }
    let n_z = if geometry == Geometry::Cylinder { n_z.max(1) } else { 1 };
    let z_planes: Vec<usize> = if dims == 3 {
        (0..n_z)
            .map(|k| ((k as f64 + 0.5) * extents[2] as f64 / n_z as f64 - 0.5).round() as usize)
            .collect()
    } else {
        vec![0]
    };
    let mut positions = Vec::with_capacity(n_angles * n_z);
    for theta in sensor_angles(geometry, n_angles) {
        let i = (center[0] + radius_cells * theta.cos()).round();
        let j = (center[1] + radius_cells * theta.sin()).round();
        if i < 0.0 || j < 0.0 || i >= extents[0] as f64 || j >= extents[1] as f64 {
            return Err(cfg_err!(
                "sensor radius {radius_cells} about {center:?} leaves the grid {extents:?}"
            ));
        }
        for &z in &z_planes {
            let mut p = vec![i as usize, j as usize];
            if dims == 3 {
                p.push(z);
            }
            positions.push(p);
        }
    }
    check_positions(&positions, extents)?;
    Ok(SensorArray {
        positions,
        layout: SensorLayout {
            geometry,
            n_angles,
            n_z,
            radius: radius_cells,
            center: center.to_vec(),
        },
    })
}
