use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl PatchShape {
    pub fn numel(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Per-spot image content: pixel patches `[S, C, H, W]` with values in
/// `[0, 1]`, or precomputed features `[S, F]`.
#[derive(Debug, Clone, PartialEq)]
pub enum SlideImage {
    Patches(Tensor<f32>),
    Features(Tensor<f32>),
}

impl SlideImage {
    pub fn tensor(&self) -> &Tensor<f32> {
        match self {
            SlideImage::Patches(t) | SlideImage::Features(t) => t,
        }
    }

    pub fn patch_shape(&self) -> Option<PatchShape> {
        match self {
            SlideImage::Patches(t) => {
                let s = t.shape();
                Some(PatchShape {
                    c: s[1],
                    h: s[2],
                    w: s[3],
                })
            }
            SlideImage::Features(_) => None,
        }
    }

    pub fn feat_dim(&self) -> Option<usize> {
        match self {
            SlideImage::Features(t) => Some(t.shape()[1]),
            SlideImage::Patches(_) => None,
        }
    }

    /// Rows `indices` of the underlying tensor.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Ok(match self {
            SlideImage::Patches(t) => SlideImage::Patches(t.select(indices)?),
            SlideImage::Features(t) => SlideImage::Features(t.select(indices)?),
        })
    }
}

/// One tissue section.
#[derive(Debug, Clone, PartialEq)]
pub struct Slide {
    pub slide_id: String,
    pub gene_names: Vec<String>,
    /// `[spot_num × gene_num]`.
    pub expression: Tensor<f32>,
    /// `(x, y)` per spot, each `< coord_max`.
    pub coords: Vec<[u32; 2]>,
    pub coord_max: u32,
    pub image: SlideImage,
    pub labels: Option<Vec<u16>>,
}

impl Slide {
    pub fn spot_num(&self) -> usize {
        self.coords.len()
    }

    pub fn gene_num(&self) -> usize {
        self.gene_names.len()
    }

    fn err(&self, field: &'static str, reason: String) -> Error {
        Error::InvalidSlide {
            slide: self.slide_id.clone(),
            field,
            reason,
        }
    }

    /// Checks every structural invariant, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let spots = self.coords.len();
        if spots == 0 {
            return Err(self.err("coords", "slide has no spots".into()));
        }
        let genes = self.gene_names.len();
        if self.expression.shape() != [spots, genes] {
            return Err(self.err(
                "expression",
                format!(
                    "shape {:?}, expected [{spots}, {genes}]",
                    self.expression.shape()
                ),
            ));
        }
        if let Some(i) = self.expression.data().iter().position(|x| !x.is_finite()) {
            return Err(self.err("expression", format!("non-finite value at flat index {i}")));
        }
        if let Some((i, c)) = self
            .coords
            .iter()
            .enumerate()
            .find(|(_, c)| c[0] >= self.coord_max || c[1] >= self.coord_max)
        {
            return Err(self.err(
                "coords",
                format!("spot {i} at {c:?} is outside coord_max {}", self.coord_max),
            ));
        }
        let (name, t) = match &self.image {
            SlideImage::Patches(t) => ("patches", t),
            SlideImage::Features(t) => ("features", t),
        };
        let expected_rank = if matches!(self.image, SlideImage::Patches(_)) {
            4
        } else {
            2
        };
        if t.rank() != expected_rank || t.shape()[0] != spots {
            return Err(self.err(name, format!("shape {:?} for {spots} spots", t.shape())));
        }
        if let Some(i) = t.data().iter().position(|x| !x.is_finite()) {
            return Err(self.err(name, format!("non-finite value at flat index {i}")));
        }
        if let SlideImage::Patches(t) = &self.image {
            if let Some(i) = t.data().iter().position(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(self.err("patches", format!("pixel at flat index {i} outside [0, 1]")));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != spots {
                return Err(self.err(
                    "labels",
                    format!("{} labels for {spots} spots", labels.len()),
                ));
            }
        }
        Ok(())
    }

    /// Keeps only the spots in `keep`, in that order.
    pub fn select_spots(&self, keep: &[usize]) -> Result<Slide> {
        Ok(Slide {
            slide_id: self.slide_id.clone(),
            gene_names: self.gene_names.clone(),
            expression: self.expression.select(keep)?,
            coords: keep.iter().map(|&i| self.coords[i]).collect(),
            coord_max: self.coord_max,
            image: self.image.select(keep)?,
            labels: self
                .labels
                .as_ref()
                .map(|l| keep.iter().map(|&i| l[i]).collect()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn tiny() -> Slide {
        Slide {
            slide_id: "s0".into(),
            gene_names: vec!["a".to_string(), "b".to_string()],
            expression: Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            coords: vec![[0, 1], [2, 3]],
            coord_max: 4,
            image: SlideImage::Features(Tensor::new(&[2, 3], vec![0.0; 6]).unwrap()),
            labels: Some(vec![0, 1]),
        }
    }

    fn field_of(e: Error) -> &'static str {
        match e {
            Error::InvalidSlide { field, .. } => field,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn valid_slide_passes() {
        tiny().validate().unwrap();
    }

    #[test]
    fn coords_out_of_range() {
        let mut s = tiny();
        s.coords[1] = [4, 0];
        assert_eq!(field_of(s.validate().unwrap_err()), "coords");
    }

    #[test]
    fn nan_expression() {
        let mut s = tiny();
        s.expression.data_mut()[3] = f32::NAN;
        assert_eq!(field_of(s.validate().unwrap_err()), "expression");
    }

    #[test]
    fn label_count() {
        let mut s = tiny();
        s.labels = Some(vec![1]);
        assert_eq!(field_of(s.validate().unwrap_err()), "labels");
    }

    #[test]
    fn select_spots_reorders_everything() {
        let s = tiny().select_spots(&[1]).unwrap();
        assert_eq!(s.coords, vec![[2, 3]]);
        assert_eq!(s.expression.data(), &[3.0, 4.0]);
        assert_eq!(s.labels, Some(vec![1]));
        s.validate().unwrap();
    }
}
