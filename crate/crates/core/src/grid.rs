//! Grid containers shared by every other module.
//!
//! All grids are 2D or 3D, stored row-major (C order) with channels last.
//! Internally a 2D grid is addressed as a 3D grid whose leading axis has
//! extent 1, so neighborhood code only has to deal with one layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of semantic classes (background, cell, touching, gap).
pub const MAX_CLASSES: usize = 4;

pub const BACKGROUND: u8 = 0;
pub const CELL: u8 = 1;
pub const TOUCHING: u8 = 2;
pub const GAP: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct GridShape {
    dims: Vec<usize>,
}

impl GridShape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() != 2 && dims.len() != 3 {
            return Err(Error::InvalidShape(format!(
                "expected 2 or 3 dims, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape(format!("zero extent in {dims:?}")));
        }
        Ok(Self {
            dims: dims.to_vec(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Extents as a 3D triple, with a leading 1 for 2D grids.
    pub fn padded(&self) -> [usize; 3] {
        match self.dims.as_slice() {
            [h, w] => [1, *h, *w],
            [d, h, w] => [*d, *h, *w],
            _ => unreachable!("GridShape invariant"),
        }
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [_, h, w] = self.padded();
        [index / (h * w), (index / w) % h, index % w]
    }

    pub fn index(&self, coords: [usize; 3]) -> usize {
        let [_, h, w] = self.padded();
        (coords[0] * h + coords[1]) * w + coords[2]
    }

    /// Index of `coords + delta`, or `None` when it falls outside the grid.
    #[inline]
    pub fn shifted(&self, coords: [usize; 3], delta: [isize; 3]) -> Option<usize> {
        let ext = self.padded();
        let mut out = [0usize; 3];
        for a in 0..3 {
            let c = coords[a] as isize + delta[a];
            if c < 0 || c >= ext[a] as isize {
                return None;
            }
            out[a] = c as usize;
        }
        Some(self.index(out))
    }

    /// Offsets of the `(2r+1)^d` Chebyshev window, excluding the center.
    pub fn chebyshev_offsets(&self, radius: usize) -> Vec<[isize; 3]> {
        let r = radius as isize;
        let rz = if self.ndim() == 3 { r } else { 0 };
        let mut out = Vec::new();
        for dz in -rz..=rz {
            for dy in -r..=r {
                for dx in -r..=r {
                    if (dz, dy, dx) != (0, 0, 0) {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }

    /// Offsets of the face-sharing neighbors (4 in 2D, 6 in 3D).
    pub fn face_offsets(&self) -> Vec<[isize; 3]> {
        let mut out = vec![[0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];
        if self.ndim() == 3 {
            out.extend([[-1, 0, 0], [1, 0, 0]]);
        }
        out
    }
}

impl TryFrom<Vec<usize>> for GridShape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        GridShape::new(&dims)
    }
}

impl From<GridShape> for Vec<usize> {
    fn from(shape: GridShape) -> Self {
        shape.dims
    }
}

/// Instance annotation: 0 is background, every object has its own label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    shape: GridShape,
    labels: Vec<u32>,
}

impl InstanceMap {
    pub fn new(shape: GridShape, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for shape {:?}",
                labels.len(),
                shape.dims()
            )));
        }
        Ok(Self { shape, labels })
    }

    pub fn zeros(shape: GridShape) -> Self {
        let labels = vec![0; shape.len()];
        Self { shape, labels }
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    pub fn into_labels(self) -> Vec<u32> {
        self.labels
    }

    /// Largest label present (`m`); 0 for an all-background map.
    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Sorted distinct nonzero labels.
    pub fn instance_labels(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// Per-element semantic class in `0..MAX_CLASSES`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMap {
    shape: GridShape,
    classes: Vec<u8>,
}

impl SemanticMap {
    pub fn new(shape: GridShape, classes: Vec<u8>) -> Result<Self> {
        if classes.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} classes for shape {:?}",
                classes.len(),
                shape.dims()
            )));
        }
        if let Some(bad) = classes.iter().find(|&&c| c as usize >= MAX_CLASSES) {
            return Err(Error::InvalidValue(format!("semantic class {bad} out of range")));
        }
        Ok(Self { shape, classes })
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    /// Element count per class, `n_l`.
    pub fn class_counts(&self) -> [usize; MAX_CLASSES] {
        let mut n = [0; MAX_CLASSES];
        for &c in &self.classes {
            n[c as usize] += 1;
        }
        n
    }
}

/// Per-element probability vectors over `channels` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityField {
    shape: GridShape,
    channels: usize,
    values: Vec<f64>,
}

const SIMPLEX_TOL: f64 = 1e-6;

impl ProbabilityField {
    /// Builds a field after checking every element is a simplex vector.
    pub fn new(shape: GridShape, channels: usize, values: Vec<f64>) -> Result<Self> {
        check_layout(&shape, channels, values.len())?;
        for (p, v) in values.chunks_exact(channels).enumerate() {
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::InvalidValue(format!(
                    "probability outside [0,1] at element {p}"
                )));
            }
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidValue(format!(
                    "probabilities at element {p} sum to {s}"
                )));
            }
        }
        Ok(Self {
            shape,
            channels,
            values,
        })
    }

    pub(crate) fn from_raw(shape: GridShape, channels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len() * channels, values.len());
        Self {
            shape,
            channels,
            values,
        }
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn element(&self, p: usize) -> &[f64] {
        &self.values[p * self.channels..(p + 1) * self.channels]
    }

    pub fn elements(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.channels)
    }

    /// Per-channel sums; for a one-hot field these are the class counts.
    pub fn channel_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.channels];
        for v in self.elements() {
            for (s, x) in sums.iter_mut().zip(v) {
                *s += x;
            }
        }
        sums
    }

    /// Class index per element if the field is one-hot.
    pub fn one_hot_classes(&self) -> Result<Vec<usize>> {
        self.elements()
            .enumerate()
            .map(|(p, v)| {
                let mut hot = None;
                for (l, &x) in v.iter().enumerate() {
                    if x == 1.0 && hot.is_none() {
                        hot = Some(l);
                    } else if x != 0.0 {
                        return Err(Error::NotOneHot(p));
                    }
                }
                hot.ok_or(Error::NotOneHot(p))
            })
            .collect()
    }

    /// Element-wise `ln z`, the logits that reproduce this field under softmax.
    /// Fails if any probability is zero.
    pub fn to_logits(&self) -> Result<LogitField> {
        LogitField::new(
            self.shape.clone(),
            self.channels,
            self.values.iter().map(|x| x.ln()).collect(),
        )
    }
}

/// Unbounded per-element real vectors, mapped to probabilities by softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitField {
    shape: GridShape,
    channels: usize,
    values: Vec<f64>,
}

impl LogitField {
    pub fn new(shape: GridShape, channels: usize, values: Vec<f64>) -> Result<Self> {
        check_layout(&shape, channels, values.len())?;
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidValue("non-finite logit".into()));
        }
        Ok(Self {
            shape,
            channels,
            values,
        })
    }

    pub(crate) fn from_raw(shape: GridShape, channels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len() * channels, values.len());
        Self {
            shape,
            channels,
            values,
        }
    }

    pub fn zeros(shape: GridShape, channels: usize) -> Self {
        let values = vec![0.0; shape.len() * channels];
        Self {
            shape,
            channels,
            values,
        }
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn element(&self, p: usize) -> &[f64] {
        &self.values[p * self.channels..(p + 1) * self.channels]
    }

    pub fn softmax(&self) -> Result<ProbabilityField> {
        softmax(self)
    }
}

fn check_layout(shape: &GridShape, channels: usize, len: usize) -> Result<()> {
    if channels == 0 {
        return Err(Error::InvalidShape("zero channels".into()));
    }
    if len != shape.len() * channels {
        return Err(Error::ShapeMismatch(format!(
            "{len} values for shape {:?} x {channels} channels",
            shape.dims()
        )));
    }
    Ok(())
}

/// Per-element softmax with max subtraction.
pub fn softmax(logits: &LogitField) -> Result<ProbabilityField> {
    let c = logits.channels;
    let mut out = vec![0.0; logits.values.len()];
    for (p, (src, dst)) in logits
        .values
        .chunks_exact(c)
        .zip(out.chunks_exact_mut(c))
        .enumerate()
    {
        let mut max = f64::NEG_INFINITY;
        for &x in src {
            if !x.is_finite() {
                return Err(Error::InvalidValue(format!("non-finite logit at element {p}")));
            }
            max = max.max(x);
        }
        let mut sum = 0.0;
        for (d, &x) in dst.iter_mut().zip(src) {
            *d = (x - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    Ok(ProbabilityField::from_raw(logits.shape.clone(), c, out))
}

/// One-hot encoding of a semantic map over `channels` classes.
pub fn one_hot(h: &SemanticMap, channels: usize) -> Result<ProbabilityField> {
    if channels == 0 {
        return Err(Error::InvalidShape("zero channels".into()));
    }
    let mut values = vec![0.0; h.classes.len() * channels];
    for (p, &c) in h.classes.iter().enumerate() {
        let c = c as usize;
        if c >= channels {
            return Err(Error::InvalidValue(format!(
                "class {c} at element {p} does not fit {channels} channels"
            )));
        }
        values[p * channels + c] = 1.0;
    }
    Ok(ProbabilityField::from_raw(h.shape.clone(), channels, values))
}

/// Index of the largest entry; ties go to the lowest index.
#[inline]
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
