use crate::error::{Error, Result};

/// Labeled samples: an N×P feature matrix (row-major) and labels in `1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u32>,
    dim: usize,
    num_classes: usize,
    /// Original label values for each class when the labels were remapped
    /// (class `k` came from `label_values[k - 1]`).
    label_values: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<u32>,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::data("dataset has no samples"));
        }
        if dim == 0 {
            return Err(Error::data("feature dimension must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::data(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::data(format!(
                "feature matrix has {} values, expected {} rows x {} columns",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "non-finite feature in row {}",
                i / dim
            )));
        }
        if let Some(i) = labels
            .iter()
            .position(|&y| y == 0 || y as usize > num_classes)
        {
            return Err(Error::data(format!(
                "label {} in row {i} outside 1..={num_classes}",
                labels[i]
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
            num_classes,
            label_values: None,
        })
    }

    pub(crate) fn with_label_values(mut self, values: Vec<i64>) -> Self {
        self.label_values = Some(values);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension P.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Class count K.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Label of sample `i`, in `1..=K`.
    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_values(&self) -> Option<&[i64]> {
        self.label_values.as_deref()
    }

    /// Number of samples per class; entry `k - 1` counts class `k`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y as usize - 1] += 1;
        }
        counts
    }

    /// Sample indices grouped by class, each group in ascending order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            groups[y as usize - 1].push(i);
        }
        groups
    }

    /// Standardize every feature to zero mean and unit variance using the
    /// statistics of `reference` (usually the training set). Constant
    /// features are only centered.
    pub fn standardize_with(&mut self, reference: &Dataset) -> Result<()> {
        if reference.dim != self.dim {
            return Err(Error::data(
                "standardization reference has a different dimension",
            ));
        }
        let (mean, std) = reference.feature_moments();
        for row in self.features.chunks_mut(self.dim) {
            for ((v, m), s) in row.iter_mut().zip(&mean).zip(&std) {
                *v = if *s > 0.0 { (*v - m) / s } else { *v - m };
            }
        }
        Ok(())
    }

    fn feature_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for row in self.features.chunks(self.dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; self.dim];
        for row in self.features.chunks(self.dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        (mean, std)
    }

    /// A new dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        let mut out = Dataset::new(features, labels, self.dim, self.num_classes)?;
        out.label_values = self.label_values.clone();
        Ok(out)
    }
}

/// A borrowed selection of samples from a [`Dataset`].
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub data: &'a Dataset,
    pub indices: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn new(data: &'a Dataset, indices: &'a [usize]) -> Self {
        Self { data, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a [f64], u32)> + 'a {
        let data = self.data;
        self.indices
            .iter()
            .map(move |&i| (data.features(i), data.label(i)))
    }
}
