use super::CtError;

/// Split of a measurement vector into per-angle projections.
///
/// Offsets are monotone with `offsets[0] = 0` and `offsets[m_θ] = m`. A fresh
/// scan has equal segments of `n_det`; after zero-row removal the segments
/// shrink to the rays that survived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnglePartition {
    offsets: Vec<usize>,
}

impl AnglePartition {
    pub fn uniform(n_det: usize, n_angles: usize) -> Self {
        AnglePartition {
            offsets: (0..=n_angles).map(|l| l * n_det).collect(),
        }
    }

    pub fn from_offsets(offsets: Vec<usize>) -> Result<Self, CtError> {
        if offsets.first() != Some(&0) || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(CtError::Layout("offsets must start at 0 and be monotone".into()));
        }
        Ok(AnglePartition { offsets })
    }

    pub fn n_angles(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total length `m`.
    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn segment(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    /// Shortest segment length.
    pub fn min_segment(&self) -> usize {
        self.offsets.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(0)
    }

    /// Partition of the rows in `kept` (sorted original indices).
    pub fn restrict(&self, kept: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(self.offsets.len());
        offsets.push(0);
        let mut pos = 0;
        for w in self.offsets.windows(2) {
            while pos < kept.len() && kept[pos] < w[1] {
                pos += 1;
            }
            offsets.push(pos);
        }
        AnglePartition { offsets }
    }

    /// Iterates over the per-angle sub-slices of `v`.
    pub fn split<'a>(&'a self, v: &'a [f64]) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.offsets.windows(2).map(move |w| &v[w[0]..w[1]])
    }
}

/// Angle-major measurement vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub values: Vec<f64>,
    pub partition: AnglePartition,
}

impl Sinogram {
    pub fn new(values: Vec<f64>, partition: AnglePartition) -> Result<Self, CtError> {
        if values.len() != partition.len() {
            return Err(CtError::Layout(format!(
                "{} values for a partition of length {}",
                values.len(),
                partition.len()
            )));
        }
        Ok(Sinogram { values, partition })
    }

    pub fn uniform(values: Vec<f64>, n_det: usize) -> Result<Self, CtError> {
        if n_det == 0 || values.len() % n_det != 0 {
            return Err(CtError::Layout(format!(
                "{} values do not split into projections of {n_det}",
                values.len()
            )));
        }
        let n_angles = values.len() / n_det;
        Self::new(values, AnglePartition::uniform(n_det, n_angles))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_angles(&self) -> usize {
        self.partition.n_angles()
    }

    pub fn projection(&self, l: usize) -> &[f64] {
        &self.values[self.partition.segment(l)]
    }

    pub fn projections(&self) -> impl Iterator<Item = &[f64]> {
        self.partition.split(&self.values)
    }

    /// Keeps only the rows listed in `kept`, preserving the angle structure.
    pub fn restrict(&self, kept: &[usize]) -> Self {
        Sinogram {
            values: kept.iter().map(|&i| self.values[i]).collect(),
            partition: self.partition.restrict(kept),
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, CtError> {
        Self::new(values, self.partition.clone())
    }
}
