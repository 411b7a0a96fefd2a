//! Minimal tensor core: plain row-major value tensors, a reverse-mode tape,
//! and the layer primitives the four networks are made of.
//!
//! Training runs on `f32`; gradient-verification tests instantiate the same
//! code with `f64` (see `Scalar`).

pub mod gradcheck;
mod init;
mod kernels;
mod optim;
mod tape;

pub use init::{fan_in_uniform, uniform};
pub use kernels::{conv2d_out_dim, same_pad_begin, transpose_pad_begin};
pub use optim::{clip_params, OptimConfig, OptimKind, Optimizer, Parameter};
pub use tape::{ActKind, GradMap, Tape, Var};

use crate::error::{Error, Result};

/// Element type of a tensor. `f32` is the training dtype; `f64` is the
/// verification dtype used by the finite-difference suites.
pub trait Scalar:
    num_traits::Float + Default + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an `f64` literal into the active scalar type.
pub(crate) fn sc<T: Scalar>(x: f64) -> T {
    T::from(x).expect("scalar conversion")
}

/// Dense n-dimensional array, row-major. Rank-0 (`shape == []`) holds one
/// scalar element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(|i| f(i)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// True when the tensor holds exactly one element (rank 0 or any
    /// all-ones shape).
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<T> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::Shape(format!(
                "expected scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) into {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Interpret as an image-like `[H, W, C]` tensor.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::Shape(format!(
                "expected rank-3 [H,W,C] tensor, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn at3(&self, y: usize, x: usize, c: usize) -> T {
        let (_, w, ch) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(y * w + x) * ch + c]
    }

    pub fn set3(&mut self, y: usize, x: usize, c: usize, v: T) {
        let (_, w, ch) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(y * w + x) * ch + c] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    /// Element-wise accumulate. Shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add_assign shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
        Ok(())
    }
}

/// Stitch four same-shape `[H,W,C]` images into one `[2H,2W,C]` image.
/// Placement is row-major: inputs 0..4 go to top-left, top-right,
/// bottom-left, bottom-right.
pub fn pack2x2_values<T: Scalar>(images: [&Tensor<T>; 4]) -> Result<Tensor<T>> {
    let (h, w, c) = images[0].hwc()?;
    for img in &images[1..] {
        if img.shape() != images[0].shape() {
            return Err(Error::Shape(format!(
                "pack2x2 inputs must share a shape: {:?} vs {:?}",
                images[0].shape(),
                img.shape()
            )));
        }
    }
    let mut out = Tensor::zeros(&[2 * h, 2 * w, c]);
    for (q, img) in images.iter().enumerate() {
        let oy = (q / 2) * h;
        let ox = (q % 2) * w;
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out.set3(oy + y, ox + x, ch, img.at3(y, x, ch));
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pack2x2_values`]: split a `[2H,2W,C]` image back into its
/// four quadrants in placement order.
pub fn unpack2x2<T: Scalar>(packed: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
    let (ph, pw, c) = packed.hwc()?;
    if ph % 2 != 0 || pw % 2 != 0 {
        return Err(Error::Shape(format!(
            "unpack2x2 needs even extents, got {:?}",
            packed.shape()
        )));
    }
    let (h, w) = (ph / 2, pw / 2);
    let mut quads = [
        Tensor::zeros(&[h, w, c]),
        Tensor::zeros(&[h, w, c]),
        Tensor::zeros(&[h, w, c]),
        Tensor::zeros(&[h, w, c]),
    ];
    for (q, quad) in quads.iter_mut().enumerate() {
        let oy = (q / 2) * h;
        let ox = (q % 2) * w;
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    quad.set3(y, x, ch, packed.at3(oy + y, ox + x, ch));
                }
            }
        }
    }
    Ok(quads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0f32; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0f32; 6]).is_ok());
    }

    #[test]
    fn rank0_scalar_roundtrip() {
        let t = Tensor::scalar(4.5f32);
        assert_eq!(t.numel(), 1);
        assert_eq!(t.scalar_value().unwrap(), 4.5);
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::from_fn(&[2, 3], |i| i as f32);
        let r = t.reshape(&[6]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[4]).is_err());
    }

    #[test]
    fn check_finite_flags_nan() {
        let mut t = Tensor::<f32>::zeros(&[4]);
        assert!(t.check_finite("t").is_ok());
        t.data_mut()[2] = f32::NAN;
        assert!(t.check_finite("t").is_err());
    }

    #[test]
    fn pack_places_quadrants_row_major() {
        let imgs: Vec<Tensor<f32>> = (0..4)
            .map(|q| Tensor::full(&[2, 2, 1], q as f32))
            .collect();
        let packed = pack2x2_values([&imgs[0], &imgs[1], &imgs[2], &imgs[3]]).unwrap();
        assert_eq!(packed.shape(), &[4, 4, 1]);
        assert_eq!(packed.at3(0, 0, 0), 0.0); // top-left
        assert_eq!(packed.at3(0, 3, 0), 1.0); // top-right
        assert_eq!(packed.at3(3, 0, 0), 2.0); // bottom-left
        assert_eq!(packed.at3(3, 3, 0), 3.0); // bottom-right
    }

    #[test]
    fn pack_rejects_mixed_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 2, 1]);
        let b = Tensor::<f32>::zeros(&[2, 3, 1]);
        assert!(pack2x2_values([&a, &a, &a, &b]).is_err());
    }
}
