//! Feature containers: flat `n × d` activations and `n × c × h × w` conv maps.

use std::collections::HashSet;

use ndarray::{Array2, Array4, Axis};

use crate::error::{DdsError, Result};

fn check_ids(ids: &[String], n: usize) -> Result<()> {
    if ids.len() != n {
        return Err(DdsError::validation(format!("{} image ids for {} rows", ids.len(), n)));
    }
    let mut seen = HashSet::with_capacity(n);
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(DdsError::validation(format!("duplicate image id {id:?}")));
        }
    }
    Ok(())
}

fn check_finite<'a>(mut values: impl Iterator<Item = &'a f64>) -> Result<()> {
    if values.any(|v| !v.is_finite()) {
        return Err(DdsError::validation("features contain NaN or infinite values"));
    }
    Ok(())
}

/// `n × d` activations for `n` images, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
    image_ids: Vec<String>,
    source: String,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>, image_ids: Vec<String>, source: impl Into<String>) -> Result<Self> {
        let (n, d) = data.dim();
        if n < 2 {
            return Err(DdsError::validation(format!("need at least 2 images, got {n}")));
        }
        if d < 1 {
            return Err(DdsError::validation("feature dimension must be at least 1"));
        }
        check_ids(&image_ids, n)?;
        check_finite(data.iter())?;
        Ok(Self {
            data,
            image_ids,
            source: source.into(),
        })
    }

    /// Matrix with ids `img0..img{n-1}`; handy for synthetic data.
    pub fn with_default_ids(data: Array2<f64>) -> Result<Self> {
        let ids = default_ids(data.nrows());
        Self::new(data, ids, "")
    }

    /// Skips the duplicate-id check; bootstrap resamples repeat images.
    pub(crate) fn from_parts_unchecked(data: Array2<f64>, image_ids: Vec<String>, source: String) -> Self {
        Self {
            data,
            image_ids,
            source,
        }
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn n_images(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }
}

/// `n × c × h × w` convolutional activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array4<f64>,
    image_ids: Vec<String>,
    source: String,
}

impl FeatureMap {
    pub fn new(data: Array4<f64>, image_ids: Vec<String>, source: impl Into<String>) -> Result<Self> {
        let (n, c, h, w) = data.dim();
        if n < 2 {
            return Err(DdsError::validation(format!("need at least 2 images, got {n}")));
        }
        if c == 0 || h == 0 || w == 0 {
            return Err(DdsError::validation(format!(
                "feature map dims must be positive, got c={c} h={h} w={w}"
            )));
        }
        check_ids(&image_ids, n)?;
        check_finite(data.iter())?;
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
            image_ids,
            source: source.into(),
        })
    }

    pub fn with_default_ids(data: Array4<f64>) -> Result<Self> {
        let ids = default_ids(data.dim().0);
        Self::new(data, ids, "")
    }

    pub(crate) fn from_parts_unchecked(data: Array4<f64>, image_ids: Vec<String>, source: String) -> Self {
        Self {
            data,
            image_ids,
            source,
        }
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn n_images(&self) -> usize {
        self.data.dim().0
    }

    /// Flattens to `n × (c·h·w)`: channel-major, then row-major spatial order.
    pub fn flatten(&self) -> FeatureMatrix {
        let (n, c, h, w) = self.data.dim();
        let flat = self
            .data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, c * h * w))
            .expect("standard layout reshapes");
        FeatureMatrix::from_parts_unchecked(flat, self.image_ids.clone(), self.source.clone())
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(flat: &FeatureMatrix, c: usize, h: usize, w: usize) -> Result<Self> {
        let n = flat.n_images();
        if flat.dim() != c * h * w {
            return Err(DdsError::validation(format!(
                "cannot reshape {} columns into {c}x{h}x{w}",
                flat.dim()
            )));
        }
        let data = flat
            .data()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, c, h, w))
            .expect("checked above");
        Ok(Self::from_parts_unchecked(
            data,
            flat.image_ids().to_vec(),
            flat.source().to_string(),
        ))
    }
}

/// Either kind of feature dump.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Matrix(FeatureMatrix),
    Map(FeatureMap),
}

impl Features {
    pub fn image_ids(&self) -> &[String] {
        match self {
            Features::Matrix(m) => m.image_ids(),
            Features::Map(m) => m.image_ids(),
        }
    }

    pub fn n_images(&self) -> usize {
        self.image_ids().len()
    }

    pub fn source(&self) -> &str {
        match self {
            Features::Matrix(m) => m.source(),
            Features::Map(m) => m.source(),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            Features::Matrix(m) => m.data().shape().to_vec(),
            Features::Map(m) => m.data().shape().to_vec(),
        }
    }

    /// Flattened view; a no-op clone for matrices.
    pub fn to_matrix(&self) -> FeatureMatrix {
        match self {
            Features::Matrix(m) => m.clone(),
            Features::Map(m) => m.flatten(),
        }
    }

    /// Selects images by index along the first axis, in the given order.
    ///
    /// Repeated indices are allowed; their ids get a `#k` suffix (k = position
    /// in `indices`) so downstream error messages stay unambiguous.
    pub fn select_images(&self, indices: &[usize]) -> Features {
        let mut seen = HashSet::new();
        let ids: Vec<String> = indices
            .iter()
            .enumerate()
            .map(|(pos, &i)| {
                let id = &self.image_ids()[i];
                if seen.insert(i) {
                    id.clone()
                } else {
                    format!("{id}#{pos}")
                }
            })
            .collect();
        match self {
            Features::Matrix(m) => Features::Matrix(FeatureMatrix::from_parts_unchecked(
                m.data().select(Axis(0), indices),
                ids,
                m.source().to_string(),
            )),
            Features::Map(m) => Features::Map(FeatureMap::from_parts_unchecked(
                m.data().select(Axis(0), indices),
                ids,
                m.source().to_string(),
            )),
        }
    }
}

impl From<FeatureMatrix> for Features {
    fn from(m: FeatureMatrix) -> Self {
        Features::Matrix(m)
    }
}

impl From<FeatureMap> for Features {
    fn from(m: FeatureMap) -> Self {
        Features::Map(m)
    }
}

pub fn default_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("img{i}")).collect()
}

/// Fails with an alignment error unless both sides list the same ids in the same order.
pub fn check_aligned(left: &[String], right: &[String], context: &str) -> Result<()> {
    if left == right {
        return Ok(());
    }
    let l: HashSet<&String> = left.iter().collect();
    let r: HashSet<&String> = right.iter().collect();
    let mut only_left: Vec<String> = l.difference(&r).map(|s| s.to_string()).collect();
    let mut only_right: Vec<String> = r.difference(&l).map(|s| s.to_string()).collect();
    only_left.sort();
    only_right.sort();
    let context = if only_left.is_empty() && only_right.is_empty() {
        format!("{context}: same ids in a different order")
    } else {
        context.to_string()
    };
    Err(DdsError::Alignment {
        context,
        only_left,
        only_right,
    })
}
