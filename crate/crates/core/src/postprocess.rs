//! Probability field to instance map: MAP decision, gap reassignment and
//! region growing of cell cores into touching elements.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    argmax, GridShape, InstanceMap, ProbabilityField, SemanticMap, BACKGROUND, CELL, GAP,
    MAX_CLASSES, TOUCHING,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapMode {
    /// Re-decide gap elements by MAP over the first three classes.
    Map3,
    /// Gap elements become background.
    Background,
    /// Background unless the first three classes are nearly tied, in which
    /// case MAP over them.
    Dubious { tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connectivity {
    /// Neighbors sharing a face.
    Face,
    /// Every neighbor in the 3^d window.
    Full,
}

impl Connectivity {
    pub fn offsets(self, shape: &GridShape) -> Vec<[isize; 3]> {
        match self {
            Connectivity::Face => shape.face_offsets(),
            Connectivity::Full => shape.chebyshev_offsets(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub gap_mode: GapMode,
    pub connectivity: Connectivity,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            gap_mode: GapMode::Map3,
            connectivity: Connectivity::Face,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if let GapMode::Dubious { tau } = self.gap_mode {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::InvalidConfig(format!("tau must lie in (0, 1), got {tau}")));
            }
        }
        Ok(())
    }
}

/// Per-element argmax, ties to the lowest class.
pub fn map_decision(z: &ProbabilityField) -> Result<SemanticMap> {
    if z.channels() > MAX_CLASSES {
        return Err(Error::InvalidShape(format!(
            "{} channels, at most {MAX_CLASSES} supported",
            z.channels()
        )));
    }
    let classes = z.elements().map(|e| argmax(e) as u8).collect();
    SemanticMap::new(z.shape().clone(), classes)
}

pub fn resolve_gaps(
    h: &SemanticMap,
    z: &ProbabilityField,
    cfg: &PostprocessConfig,
) -> Result<SemanticMap> {
    cfg.validate()?;
    if h.shape() != z.shape() {
        return Err(Error::ShapeMismatch(format!(
            "labels {:?} vs probabilities {:?}",
            h.shape().dims(),
            z.shape().dims()
        )));
    }
    let classes = h
        .classes()
        .iter()
        .zip(z.elements())
        .map(|(&c, e)| {
            if c != GAP {
                return c;
            }
            let first = &e[..3];
            match cfg.gap_mode {
                GapMode::Map3 => argmax(first) as u8,
                GapMode::Background => BACKGROUND,
                GapMode::Dubious { tau } => {
                    let mut sorted = [first[0], first[1], first[2]];
                    sorted.sort_by(f64::total_cmp);
                    if sorted[2] - sorted[1] < tau {
                        argmax(first) as u8
                    } else {
                        BACKGROUND
                    }
                }
            }
        })
        .collect();
    SemanticMap::new(h.shape().clone(), classes)
}

/// Cell components under `connectivity` get labels `1..=m` in raster order
/// of their first element. Touching elements are then claimed by
/// synchronous one-step dilations over the full `3^d` window, so growth
/// follows the same Chebyshev metric that defines the touching band. Ties go
/// to the lower label; touching elements never reached become background.
pub fn to_instances(h: &SemanticMap, connectivity: Connectivity) -> Result<InstanceMap> {
    if h.classes().contains(&GAP) {
        return Err(Error::InvalidValue(
            "gap elements must be resolved before labeling".into(),
        ));
    }
    let shape = h.shape();
    let offsets = connectivity.offsets(shape);
    let classes = h.classes();
    let mut labels = vec![0u32; classes.len()];

    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..classes.len() {
        if classes[start] != CELL || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let c = shape.coords(p);
            for &d in &offsets {
                if let Some(q) = shape.shifted(c, d) {
                    if classes[q] == CELL && labels[q] == 0 {
                        labels[q] = next;
                        queue.push_back(q);
                    }
                }
            }
        }
    }

    let window = shape.chebyshev_offsets(1);
    let mut pending: Vec<usize> = (0..classes.len())
        .filter(|&p| classes[p] == TOUCHING)
        .collect();
    loop {
        let claims: Vec<(usize, u32)> = pending
            .iter()
            .filter_map(|&p| {
                let c = shape.coords(p);
                window
                    .iter()
                    .filter_map(|&d| {
                        let q = shape.shifted(c, d)?;
                        let len2 = d.iter().map(|x| x * x).sum::<isize>();
                        (labels[q] != 0).then_some((len2, labels[q]))
                    })
                    .min()
                    .map(|(_, l)| (p, l))
            })
            .collect();
        if claims.is_empty() {
            break;
        }
        for &(p, l) in &claims {
            labels[p] = l;
        }
        pending.retain(|&p| labels[p] == 0);
    }

    InstanceMap::new(shape.clone(), labels)
}

/// MAP decision, gap resolution and instance labeling in one call.
pub fn postprocess(z: &ProbabilityField, cfg: &PostprocessConfig) -> Result<InstanceMap> {
    let h = map_decision(z)?;
    let h3 = resolve_gaps(&h, z, cfg)?;
    to_instances(&h3, cfg.connectivity)
}
