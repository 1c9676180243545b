//! Dense n-dimensional tensors with optional per-tensor affine quantization.

pub mod ops;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ops::*;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dtype error: {0}")]
    DType(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::tensor::TensorError::Shape(alloc::format!($($arg)*)) };
}
pub(crate) use shape_err;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I8,
    I16,
    I32,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::I16 => 2,
            DType::I8 => 1,
        }
    }

    pub fn is_integer(self) -> bool {
        self != DType::F32
    }

    /// Representable range of an integer dtype.
    pub fn int_range(self) -> (i64, i64) {
        match self {
            DType::I8 => (i8::MIN as i64, i8::MAX as i64),
            DType::I16 => (i16::MIN as i64, i16::MAX as i64),
            DType::I32 => (i32::MIN as i64, i32::MAX as i64),
            DType::F32 => (0, 0),
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DType::F32 => "FLOAT32",
            DType::I8 => "INT8",
            DType::I16 => "INT16",
            DType::I32 => "INT32",
        };
        f.write_str(s)
    }
}

/// Real value ≈ `scale · (q − zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

/// Smallest scale handed out for degenerate (constant) ranges.
pub const MIN_SCALE: f32 = 1e-8;

impl QuantParams {
    pub fn new(scale: f32, zero_point: i32, dtype: DType) -> Result<Self, TensorError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(TensorError::Numerical(alloc::format!("scale must be positive, got {scale}")));
        }
        let (lo, hi) = dtype.int_range();
        if !dtype.is_integer() || (zero_point as i64) < lo || (zero_point as i64) > hi {
            return Err(TensorError::DType(alloc::format!(
                "zero point {zero_point} outside {dtype} range"
            )));
        }
        Ok(Self { scale, zero_point })
    }

    /// Asymmetric INT8 parameters covering `[min, max]` (widened to include 0).
    pub fn from_range(min: f32, max: f32) -> Self {
        let min = min.min(0.0);
        let max = max.max(0.0);
        let span = max - min;
        if !(span > 0.0) || span / 255.0 < MIN_SCALE {
            return Self { scale: MIN_SCALE, zero_point: 0 };
        }
        let scale = span / 255.0;
        let zp = libm::round((-128.0 - min as f64 / scale as f64) as f64) as i32;
        Self { scale, zero_point: zp.clamp(-128, 127) }
    }

    /// Symmetric INT8 parameters for values in `[-absmax, absmax]`.
    pub fn symmetric(absmax: f32) -> Self {
        if !(absmax > 0.0) || absmax / 127.0 < MIN_SCALE {
            return Self { scale: MIN_SCALE, zero_point: 0 };
        }
        Self { scale: absmax / 127.0, zero_point: 0 }
    }

    pub fn quantize(&self, x: f32) -> i8 {
        let q = libm::round(x as f64 / self.scale as f64) + self.zero_point as f64;
        q.clamp(-128.0, 127.0) as i8
    }

    pub fn quantize_i32(&self, x: f32) -> i32 {
        let q = libm::round(x as f64 / self.scale as f64) + self.zero_point as f64;
        q.clamp(i32::MIN as f64, i32::MAX as f64) as i32
    }

    pub fn dequantize(&self, q: i32) -> f32 {
        self.scale * (q - self.zero_point) as f32
    }

    /// Real interval representable in INT8.
    pub fn real_range(&self) -> (f32, f32) {
        (self.dequantize(-128), self.dequantize(127))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dtype", content = "values", rename_all = "lowercase")]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I8(v) => v.len(),
            TensorData::I16(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I8(_) => DType::I8,
            TensorData::I16(_) => DType::I16,
            TensorData::I32(_) => DType::I32,
        }
    }

    /// Little-endian byte image.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::I8(v) => v.iter().map(|&x| x as u8).collect(),
            TensorData::I16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() % dtype.size_bytes() != 0 {
            return Err(TensorError::DType(alloc::format!(
                "{} bytes is not a whole number of {dtype} elements",
                bytes.len()
            )));
        }
        Ok(match dtype {
            DType::F32 => TensorData::F32(
                bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
            ),
            DType::I8 => TensorData::I8(bytes.iter().map(|&b| b as i8).collect()),
            DType::I16 => {
                TensorData::I16(bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect())
            }
            DType::I32 => TensorData::I32(
                bytes.chunks_exact(4).map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
    quant: Option<QuantParams>,
}

pub fn num_elements(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData, quant: Option<QuantParams>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(shape_err!("extents must be positive: {shape:?}"));
        }
        if num_elements(&shape) != data.len() {
            return Err(shape_err!("shape {shape:?} needs {} elements, got {}", num_elements(&shape), data.len()));
        }
        match (data.dtype().is_integer(), quant.is_some()) {
            (false, true) => return Err(TensorError::DType("float tensors carry no quant params".into())),
            (true, false) => return Err(TensorError::DType("integer tensors need quant params".into())),
            _ => {}
        }
        Ok(Self { shape, data, quant })
    }

    pub fn from_f32(shape: Vec<usize>, values: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F32(values), None)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = num_elements(&shape);
        Self { shape, data: TensorData::F32(alloc::vec![0.0; n]), quant: None }
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Self {
        let n = num_elements(&shape);
        Self { shape, data: TensorData::F32(alloc::vec![value; n]), quant: None }
    }

    pub fn from_i8(shape: Vec<usize>, values: Vec<i8>, qp: QuantParams) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::I8(values), Some(qp))
    }

    pub fn from_i32(shape: Vec<usize>, values: Vec<i32>, qp: QuantParams) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::I32(values), Some(qp))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn quant(&self) -> Option<QuantParams> {
        self.quant
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn size_bytes(&self) -> usize {
        self.len() * self.dtype().size_bytes()
    }

    pub fn as_f32(&self) -> Result<&[f32], TensorError> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            other => Err(TensorError::DType(alloc::format!("expected FLOAT32, got {}", other.dtype()))),
        }
    }

    pub fn as_f32_mut(&mut self) -> Result<&mut [f32], TensorError> {
        match &mut self.data {
            TensorData::F32(v) => Ok(v),
            other => Err(TensorError::DType(alloc::format!("expected FLOAT32, got {}", other.dtype()))),
        }
    }

    pub fn as_i8(&self) -> Result<&[i8], TensorError> {
        match &self.data {
            TensorData::I8(v) => Ok(v),
            other => Err(TensorError::DType(alloc::format!("expected INT8, got {}", other.dtype()))),
        }
    }

    pub fn as_i32(&self) -> Result<&[i32], TensorError> {
        match &self.data {
            TensorData::I32(v) => Ok(v),
            other => Err(TensorError::DType(alloc::format!("expected INT32, got {}", other.dtype()))),
        }
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        if num_elements(&shape) != self.len() || shape.iter().any(|&d| d == 0) {
            return Err(shape_err!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        Ok(Tensor { shape, data: self.data.clone(), quant: self.quant })
    }

    pub fn into_reshaped(mut self, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        if num_elements(&shape) != self.len() || shape.iter().any(|&d| d == 0) {
            return Err(shape_err!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Index of the largest element (first on ties).
    pub fn argmax(&self) -> Result<usize, TensorError> {
        let v = self.as_f32()?;
        Ok(argmax(v))
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `q = clamp(round(x/scale) + zp, −128, 127)`.
pub fn quantize_tensor(t: &Tensor, qp: QuantParams) -> Result<Tensor, TensorError> {
    let values = t.as_f32()?.iter().map(|&x| qp.quantize(x)).collect();
    Tensor::from_i8(t.shape.clone(), values, qp)
}

/// Quantizes to INT32 (used for biases at scale `s_in · s_w`).
pub fn quantize_tensor_i32(t: &Tensor, qp: QuantParams) -> Result<Tensor, TensorError> {
    let values = t.as_f32()?.iter().map(|&x| qp.quantize_i32(x)).collect();
    Tensor::from_i32(t.shape.clone(), values, qp)
}

/// `x = scale · (q − zp)` for any integer tensor.
pub fn dequantize_tensor(t: &Tensor) -> Result<Tensor, TensorError> {
    let qp = t.quant.ok_or_else(|| TensorError::DType("tensor is not quantized".into()))?;
    let values: Vec<f32> = match &t.data {
        TensorData::I8(v) => v.iter().map(|&q| qp.dequantize(q as i32)).collect(),
        TensorData::I16(v) => v.iter().map(|&q| qp.dequantize(q as i32)).collect(),
        TensorData::I32(v) => v.iter().map(|&q| qp.dequantize(q)).collect(),
        TensorData::F32(_) => return Err(TensorError::DType("tensor is not quantized".into())),
    };
    Tensor::from_f32(t.shape.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn quantize_examples() {
        let qp = QuantParams::new(0.5, 0, DType::I8).unwrap();
        assert_eq!(qp.quantize(1.0), 2);
        assert_eq!(qp.quantize(200.0), 127);
        assert_eq!(qp.quantize(-200.0), -128);
        let t = Tensor::from_f32(vec![2], vec![1.0, 200.0]).unwrap();
        let q = quantize_tensor(&t, qp).unwrap();
        assert_eq!(q.as_i8().unwrap(), &[2, 127]);
        assert_eq!(dequantize_tensor(&q).unwrap().as_f32().unwrap(), &[1.0, 63.5]);
    }

    #[test]
    fn range_rules() {
        let qp = QuantParams::from_range(0.0, 6.0);
        assert!((qp.scale - 6.0 / 255.0).abs() < 1e-9);
        assert_eq!(qp.zero_point, -128);
        let qp = QuantParams::from_range(0.0, 0.0);
        assert_eq!((qp.scale, qp.zero_point), (MIN_SCALE, 0));
        let qp = QuantParams::symmetric(2.54);
        assert!((qp.scale - 0.02).abs() < 1e-7);
        assert_eq!(qp.zero_point, 0);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(QuantParams::new(0.0, 0, DType::I8).is_err());
        assert!(QuantParams::new(1.0, 200, DType::I8).is_err());
        assert!(QuantParams::new(1.0, 200, DType::I16).is_ok());
        assert!(QuantParams::new(1.0, 0, DType::F32).is_err());
    }

    #[test]
    fn tensor_invariants() {
        assert!(Tensor::from_f32(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_f32(vec![0, 2], vec![]).is_err());
        assert!(Tensor::new(vec![1], TensorData::I8(vec![0]), None).is_err());
        let qp = QuantParams::symmetric(1.0);
        assert!(Tensor::new(vec![1], TensorData::F32(vec![0.0]), Some(qp)).is_err());
    }

    #[test]
    fn byte_round_trip() {
        let d = TensorData::I32(vec![-5, 7, i32::MAX]);
        assert_eq!(TensorData::from_le_bytes(DType::I32, &d.to_le_bytes()).unwrap(), d);
        assert!(TensorData::from_le_bytes(DType::F32, &[0; 5]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_within_half_scale(x in -100.0f32..100.0, scale in 0.01f32..2.0, zp in -20i32..20) {
            let qp = QuantParams { scale, zero_point: zp };
            let (lo, hi) = qp.real_range();
            let clamped = x.clamp(lo, hi);
            let back = qp.dequantize(qp.quantize(x) as i32);
            prop_assert!((back - clamped).abs() <= scale / 2.0 + 1e-4 * scale.max(1.0));
        }
    }
}
