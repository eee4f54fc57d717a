//! Instance annotation to three- or four-class semantic ground truth.
//!
//! Classes are evaluated top-down per element:
//! background (`g = 0`, no bottom-hat response), gap (`g = 0`, bottom-hat
//! response), touching (another nonzero label within Chebyshev distance `k`),
//! cell otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridShape, InstanceMap, SemanticMap, BACKGROUND, CELL, GAP, TOUCHING};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassMode {
    Three,
    Four,
}

impl ClassMode {
    pub fn channels(self) -> usize {
        match self {
            ClassMode::Three => 3,
            ClassMode::Four => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformConfig {
    /// Chebyshev radius of the touching neighborhood.
    pub k: usize,
    /// Radius of the ball used by the closing.
    pub gap_radius: usize,
    pub mode: ClassMode,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            k: 2,
            gap_radius: 3,
            mode: ClassMode::Four,
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if self.mode == ClassMode::Four && self.gap_radius == 0 {
            return Err(Error::InvalidConfig("gap radius must be >= 1".into()));
        }
        Ok(())
    }
}

/// Bottom-hat response of the binarized foreground: 1 where the closing
/// filled a background element, 0 elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BottomHatMap {
    shape: GridShape,
    values: Vec<u8>,
}

impl BottomHatMap {
    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }
}

/// Row spans of a discrete Euclidean ball: `(dz, dy, half_width)`.
fn ball_spans(ndim: usize, radius: usize) -> Vec<(isize, isize, usize)> {
    let r = radius as isize;
    let rz = if ndim == 3 { r } else { 0 };
    let mut spans = Vec::new();
    for dz in -rz..=rz {
        for dy in -r..=r {
            let rest = r * r - dz * dz - dy * dy;
            if rest >= 0 {
                let mut w = (rest as f64).sqrt() as isize;
                while w * w > rest {
                    w -= 1;
                }
                while (w + 1) * (w + 1) <= rest {
                    w += 1;
                }
                spans.push((dz, dy, w as usize));
            }
        }
    }
    spans
}

/// Per-row prefix counts of set elements along the last axis.
fn row_prefix(shape: &GridShape, mask: &[bool]) -> Vec<u32> {
    let w = shape.padded()[2];
    let rows = mask.len() / w;
    let mut prefix = vec![0u32; rows * (w + 1)];
    for row in 0..rows {
        let base = row * (w + 1);
        for x in 0..w {
            prefix[base + x + 1] = prefix[base + x] + mask[row * w + x] as u32;
        }
    }
    prefix
}

/// Dilation (`want_all = false`) or erosion (`want_all = true`) of `mask`
/// by a ball. Dilation treats outside elements as background; erosion only
/// inspects elements inside the grid.
fn ball_sweep(shape: &GridShape, src: &[bool], radius: usize, want_all: bool) -> Vec<bool> {
    let [d, h, w] = shape.padded();
    let spans = ball_spans(shape.ndim(), radius);
    let prefix = row_prefix(shape, src);
    let mut out = vec![false; src.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let [z, y, x] = shape.coords(i);
        let mut hit = want_all;
        for &(dz, dy, half) in &spans {
            let (zz, yy) = (z as isize + dz, y as isize + dy);
            if zz < 0 || yy < 0 || zz >= d as isize || yy >= h as isize {
                continue;
            }
            let row = zz as usize * h + yy as usize;
            let lo = x.saturating_sub(half);
            let hi = (x + half).min(w - 1);
            let base = row * (w + 1);
            let count = (prefix[base + hi + 1] - prefix[base + lo]) as usize;
            if want_all {
                if count != hi - lo + 1 {
                    hit = false;
                    break;
                }
            } else if count > 0 {
                hit = true;
                break;
            }
        }
        *o = hit;
    }
    out
}

/// Euclidean-ball dilation of `mask`, clipped to the grid.
pub fn dilate(shape: &GridShape, mask: &[bool], radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    ball_sweep(shape, mask, radius, false)
}

fn closing(shape: &GridShape, mask: &[bool], radius: usize) -> Vec<bool> {
    let dilated = ball_sweep(shape, mask, radius, false);
    ball_sweep(shape, &dilated, radius, true)
}

pub fn bottom_hat(g: &InstanceMap, radius: usize) -> Result<BottomHatMap> {
    if radius == 0 {
        return Err(Error::InvalidConfig("structuring element radius must be >= 1".into()));
    }
    let fg: Vec<bool> = g.labels().iter().map(|&l| l != 0).collect();
    let closed = closing(g.shape(), &fg, radius);
    let values = closed
        .iter()
        .zip(&fg)
        .map(|(&c, &b)| (c && !b) as u8)
        .collect();
    Ok(BottomHatMap {
        shape: g.shape().clone(),
        values,
    })
}

/// Smallest and largest nonzero label in every element's `(2k+1)^d` window,
/// by separable sliding filters. Windows without foreground give
/// `(u32::MAX, 0)`.
fn window_label_extrema(g: &InstanceMap, k: usize) -> (Vec<u32>, Vec<u32>) {
    let shape = g.shape();
    let ext = shape.padded();
    let mut lo: Vec<u32> = g
        .labels()
        .iter()
        .map(|&l| if l == 0 { u32::MAX } else { l })
        .collect();
    let mut hi: Vec<u32> = g.labels().to_vec();
    let axes: &[usize] = if shape.ndim() == 3 { &[0, 1, 2] } else { &[1, 2] };
    for &axis in axes {
        let len = ext[axis];
        let mut next_lo = lo.clone();
        let mut next_hi = hi.clone();
        for i in 0..lo.len() {
            let c = shape.coords(i);
            let a = c[axis];
            let from = a.saturating_sub(k);
            let to = (a + k).min(len - 1);
            let mut mn = u32::MAX;
            let mut mx = 0;
            for t in from..=to {
                let mut cc = c;
                cc[axis] = t;
                let j = shape.index(cc);
                mn = mn.min(lo[j]);
                mx = mx.max(hi[j]);
            }
            next_lo[i] = mn;
            next_hi[i] = mx;
        }
        lo = next_lo;
        hi = next_hi;
    }
    (lo, hi)
}

pub fn to_semantic(g: &InstanceMap, cfg: &TransformConfig) -> Result<SemanticMap> {
    cfg.validate()?;
    let gap = match cfg.mode {
        ClassMode::Four => Some(bottom_hat(g, cfg.gap_radius)?),
        ClassMode::Three => None,
    };
    let (lo, hi) = window_label_extrema(g, cfg.k);
    let classes = g
        .labels()
        .iter()
        .enumerate()
        .map(|(p, &l)| {
            if l == 0 {
                match &gap {
                    Some(bh) if bh.values[p] > 0 => GAP,
                    _ => BACKGROUND,
                }
            } else if lo[p] < l || hi[p] > l {
                TOUCHING
            } else {
                CELL
            }
        })
        .collect();
    SemanticMap::new(g.shape().clone(), classes)
}
