//! Synthetic instance scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridShape, InstanceMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    /// Two side-`s` squares (cubes in 3D) sharing a side, with a notch
    /// carved into part of the shared side.
    TwoSquaresNotch,
    /// Non-overlapping discs (spheres in 3D) at seeded positions.
    RandomBlobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub dims: Vec<usize>,
    /// Square side, or minimum blob diameter.
    pub side: usize,
    pub notch_width: usize,
    pub notch_length: usize,
    /// Number of blobs for `RandomBlobs`.
    pub blobs: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn two_squares(dims: &[usize], side: usize, notch_width: usize, notch_length: usize) -> Self {
        Self {
            kind: SceneKind::TwoSquaresNotch,
            dims: dims.to_vec(),
            side,
            notch_width,
            notch_length,
            blobs: 2,
            seed: 0,
        }
    }

    pub fn random_blobs(dims: &[usize], min_diameter: usize, blobs: usize, seed: u64) -> Self {
        Self {
            kind: SceneKind::RandomBlobs,
            dims: dims.to_vec(),
            side: min_diameter,
            notch_width: 1,
            notch_length: 0,
            blobs,
            seed,
        }
    }

    /// Scene used by the shrinkwrap simulation and the toy trainer.
    pub fn default_notch() -> Self {
        Self::two_squares(&[32, 24], 8, 1, 4)
    }

    pub fn validate(&self) -> Result<GridShape> {
        let shape = GridShape::new(&self.dims)?;
        if self.side == 0 {
            return Err(Error::InvalidConfig("side must be positive".into()));
        }
        match self.kind {
            SceneKind::TwoSquaresNotch => {
                if self.notch_width == 0 {
                    return Err(Error::InvalidConfig("notch width must be >= 1".into()));
                }
                if self.notch_length > self.side {
                    return Err(Error::InvalidConfig("notch length exceeds side".into()));
                }
                if self.notch_width.div_ceil(2) > self.side {
                    return Err(Error::InvalidConfig("notch width exceeds side".into()));
                }
            }
            SceneKind::RandomBlobs => {
                if self.blobs == 0 {
                    return Err(Error::InvalidConfig("need at least one blob".into()));
                }
            }
        }
        Ok(shape)
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<InstanceMap> {
    let shape = spec.validate()?;
    match spec.kind {
        SceneKind::TwoSquaresNotch => two_squares_notch(shape, spec),
        SceneKind::RandomBlobs => random_blobs(shape, spec),
    }
}

fn two_squares_notch(shape: GridShape, spec: &SceneSpec) -> Result<InstanceMap> {
    let dims = shape.dims().to_vec();
    let nd = dims.len();
    let s = spec.side;
    // Cells stack along the longest axis (first on ties).
    let stack = (0..nd).fold(0, |best, a| if dims[a] > dims[best] { a } else { best });
    let transverse = (0..nd).find(|&a| a != stack).unwrap();

    let mut extent = vec![s; nd];
    extent[stack] = 2 * s;
    if (0..nd).any(|a| extent[a] > dims[a]) {
        return Err(Error::InvalidConfig(format!(
            "two cells of side {s} do not fit in grid {dims:?}"
        )));
    }
    let start: Vec<usize> = (0..nd).map(|a| (dims[a] - extent[a]) / 2).collect();

    let before = spec.notch_width.div_ceil(2);
    let after = spec.notch_width / 2;
    let mut g = InstanceMap::zeros(shape.clone());
    for (i, label) in g.labels_mut().iter_mut().enumerate() {
        let c = unpadded(&shape, i);
        let local: Vec<isize> = (0..nd).map(|a| c[a] as isize - start[a] as isize).collect();
        if (0..nd).any(|a| local[a] < 0 || local[a] >= extent[a] as isize) {
            continue;
        }
        let along = local[stack] as usize;
        let cell = if along < s { 1 } else { 2 };
        let in_notch_layer = (along < s && along >= s - before) || (along >= s && along < s + after);
        let in_notch_span = (local[transverse] as usize) < spec.notch_length;
        if !(in_notch_layer && in_notch_span) {
            *label = cell;
        }
    }
    Ok(g)
}

fn unpadded(shape: &GridShape, i: usize) -> Vec<usize> {
    let c = shape.coords(i);
    if shape.ndim() == 2 {
        vec![c[1], c[2]]
    } else {
        c.to_vec()
    }
}

const PLACEMENT_ATTEMPTS: usize = 2000;

fn random_blobs(shape: GridShape, spec: &SceneSpec) -> Result<InstanceMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ext = shape.padded();
    let three_d = shape.ndim() == 3;
    let base_r = spec.side.div_ceil(2) as isize;
    let mut g = InstanceMap::zeros(shape.clone());
    let mut placed: Vec<([isize; 3], isize)> = Vec::new();

    for label in 1..=spec.blobs as u32 {
        let mut done = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let r = base_r + rng.random_range(0..=2i64) as isize;
            let center = if !placed.is_empty() && rng.random_bool(0.5) {
                // Put the new blob next to an existing one so scenes contain
                // touching instances.
                let (c0, r0) = placed[rng.random_range(0..placed.len())];
                let dist = (r0 + r + 1 + rng.random_range(0..=1i64) as isize) as f64;
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let phi = if three_d {
                    rng.random_range(0.0..std::f64::consts::PI)
                } else {
                    std::f64::consts::FRAC_PI_2
                };
                [
                    c0[0] + (dist * phi.cos()).round() as isize,
                    c0[1] + (dist * phi.sin() * theta.sin()).round() as isize,
                    c0[2] + (dist * phi.sin() * theta.cos()).round() as isize,
                ]
            } else {
                let mut c = [0isize; 3];
                for a in 0..3 {
                    c[a] = rng.random_range(0..ext[a] as i64) as isize;
                }
                c
            };
            if let Some(cells) = disc_elements(&shape, center, r) {
                if cells.iter().all(|&i| g.labels()[i] == 0) {
                    for i in cells {
                        g.labels_mut()[i] = label;
                    }
                    placed.push((center, r));
                    done = true;
                    break;
                }
            }
        }
        if !done {
            return Err(Error::InvalidConfig(format!(
                "could not place blob {label} of {} in grid {:?}",
                spec.blobs,
                shape.dims()
            )));
        }
    }
    Ok(g)
}

/// Element indices of the disc or ball `|x|^2 <= r (r + 1)`, or `None` if
/// its bounding box leaves the grid. The extra `r` avoids one-element tips.
fn disc_elements(shape: &GridShape, center: [isize; 3], r: isize) -> Option<Vec<usize>> {
    let ext = shape.padded();
    let rz = if shape.ndim() == 3 { r } else { 0 };
    let lo = [center[0] - rz, center[1] - r, center[2] - r];
    let hi = [center[0] + rz, center[1] + r, center[2] + r];
    for a in 0..3 {
        if lo[a] < 0 || hi[a] >= ext[a] as isize {
            return None;
        }
    }
    let mut out = Vec::new();
    for dz in -rz..=rz {
        for dy in -r..=r {
            for dx in -r..=r {
                if dz * dz + dy * dy + dx * dx <= r * (r + 1) {
                    let c = [
                        (center[0] + dz) as usize,
                        (center[1] + dy) as usize,
                        (center[2] + dx) as usize,
                    ];
                    out.push(shape.index(c));
                }
            }
        }
    }
    Some(out)
}
