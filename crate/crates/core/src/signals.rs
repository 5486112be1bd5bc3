//! Synthetic 2D intensity fields that play the role of image objects, and
//! the coordinate grids they are sampled on.

use std::f64::consts::TAU;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Range of the randomized shape center, per coordinate.
pub const CENTER_RANGE: f64 = 0.4;
pub const MIN_SIZE: f64 = 0.15;
pub const MAX_SIZE: f64 = 0.45;
const RING_HALF_WIDTH: f64 = 0.06;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disk,
    Ring,
    Cross,
    Checker,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Disk, ShapeKind::Ring, ShapeKind::Cross, ShapeKind::Checker];

    pub fn class_id(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(ShapeKind::Disk),
            "ring" => Ok(ShapeKind::Ring),
            "cross" => Ok(ShapeKind::Cross),
            "checker" => Ok(ShapeKind::Checker),
            other => Err(Error::InvalidArgument(format!("unknown shape kind {other:?}"))),
        }
    }
}

/// Generator parameters of a shape signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub center: [f64; 2],
    /// Scale of the shape, clamped to `[MIN_SIZE, MAX_SIZE]`; see
    /// `signed_distance` for how each family uses it.
    pub size: f64,
    pub angle: f64,
    pub seed: u64,
}

impl ShapeParams {
    pub fn random(seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        Self {
            center: [
                rng.random_range(-CENTER_RANGE..=CENTER_RANGE),
                rng.random_range(-CENTER_RANGE..=CENTER_RANGE),
            ],
            size: rng.random_range(MIN_SIZE..=MAX_SIZE),
            angle: rng.random_range(0.0..TAU),
            seed,
        }
    }
}

/// A discretized target function: `coords[i] -> targets[i]`, packed
/// row-major, with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    coords: Vec<f32>,
    targets: Vec<f32>,
    coord_dim: usize,
    target_dim: usize,
    class_id: usize,
    kind: Option<ShapeKind>,
    params: Option<ShapeParams>,
}

impl Signal {
    pub fn new(coords: Vec<f32>, coord_dim: usize, targets: Vec<f32>, target_dim: usize, class_id: usize) -> Result<Self> {
        if coord_dim == 0 || target_dim == 0 {
            return Err(Error::InvalidArgument("zero signal dimension".to_string()));
        }
        if !coords.len().is_multiple_of(coord_dim) || !targets.len().is_multiple_of(target_dim) {
            return Err(Error::Dimension("ragged signal arrays".to_string()));
        }
        if coords.len() / coord_dim != targets.len() / target_dim {
            return Err(Error::Dimension(format!(
                "{} coordinates but {} targets",
                coords.len() / coord_dim,
                targets.len() / target_dim
            )));
        }
        if coords.iter().any(|c| !(c.abs() <= 1.0)) {
            return Err(Error::InvalidArgument("coordinates must lie in [-1, 1]".to_string()));
        }
        if targets.iter().any(|t| !(t.abs() <= 1.0)) {
            return Err(Error::InvalidArgument("targets must lie in [-1, 1]".to_string()));
        }
        Ok(Self {
            coords,
            targets,
            coord_dim,
            target_dim,
            class_id,
            kind: None,
            params: None,
        })
    }

    /// A signal that is `value` everywhere on `coords`.
    pub fn constant(coords: Vec<f32>, coord_dim: usize, value: f32, class_id: usize) -> Result<Self> {
        let n = coords.len() / coord_dim.max(1);
        Self::new(coords, coord_dim, vec![value; n], 1, class_id)
    }

    pub fn len(&self) -> usize {
        self.targets.len() / self.target_dim
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn coords(&self) -> &[f32] {
        &self.coords
    }

    pub fn targets(&self) -> &[f32] {
        &self.targets
    }

    pub fn coord_dim(&self) -> usize {
        self.coord_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn kind(&self) -> Option<ShapeKind> {
        self.kind
    }

    pub fn params(&self) -> Option<&ShapeParams> {
        self.params.as_ref()
    }
}

/// `resolution^2` points of `[-1, 1]^2`, row-major (first coordinate
/// slowest), endpoints included.
pub fn sample_grid(resolution: usize) -> Result<Vec<f32>> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }
    let step = 2.0 / (resolution - 1) as f64;
    let axis: Vec<f32> = (0..resolution).map(|i| (-1.0 + i as f64 * step) as f32).collect();
    let mut out = Vec::with_capacity(2 * resolution * resolution);
    for &a in &axis {
        for &b in &axis {
            out.push(a);
            out.push(b);
        }
    }
    Ok(out)
}

/// A randomized shape of `kind` drawn from `seed`.
pub fn make_signal(kind: ShapeKind, resolution: usize, seed: u64) -> Signal {
    shape_signal(kind, resolution, ShapeParams::random(seed)).expect("random params are valid")
}

/// Renders `kind` with explicit parameters; `size` is clamped into range.
pub fn shape_signal(kind: ShapeKind, resolution: usize, params: ShapeParams) -> Result<Signal> {
    let coords = sample_grid(resolution)?;
    let params = ShapeParams {
        size: params.size.clamp(MIN_SIZE, MAX_SIZE),
        ..params
    };
    let edge = 2.0 / resolution as f64;
    let (s, c) = params.angle.sin_cos();
    let targets = coords
        .chunks_exact(2)
        .map(|p| {
            let dx = p[0] as f64 - params.center[0];
            let dy = p[1] as f64 - params.center[1];
            // Rotate into the shape's frame.
            let u = c * dx + s * dy;
            let w = -s * dx + c * dy;
            let sd = signed_distance(kind, params.size, u, w);
            (2.0 * smoothstep(-edge / 2.0, edge / 2.0, sd) - 1.0) as f32
        })
        .collect();
    Ok(Signal {
        coords,
        targets,
        coord_dim: 2,
        target_dim: 1,
        class_id: kind.class_id(),
        kind: Some(kind),
        params: Some(params),
    })
}

/// Positive inside the foreground, negative outside.
///
/// `size` sets each family's scale: disk radius `0.4 + size`, ring radius
/// `0.45 + size`, cross bar half-width `0.04 + 0.1 * size` (bars span the
/// field), checker cell side `size`. The offsets keep the classes separable
/// by raw intensity statistics.
fn signed_distance(kind: ShapeKind, size: f64, u: f64, w: f64) -> f64 {
    let r = (u * u + w * w).sqrt();
    match kind {
        ShapeKind::Disk => 0.4 + size - r,
        ShapeKind::Ring => RING_HALF_WIDTH - (r - (0.45 + size)).abs(),
        ShapeKind::Cross => {
            let half_width = 0.04 + 0.1 * size;
            (half_width - u.abs()).max(half_width - w.abs())
        }
        ShapeKind::Checker => {
            let fu = u / size;
            let fw = w / size;
            let parity = (fu.floor() as i64 + fw.floor() as i64).rem_euclid(2);
            let d = (fu - fu.round()).abs().min((fw - fw.round()).abs()) * size;
            if parity == 0 {
                d
            } else {
                -d
            }
        }
    }
}

fn smoothstep(lo: f64, hi: f64, x: f64) -> f64 {
    let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}
