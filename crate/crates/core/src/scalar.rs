use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar field the numerical kernels are generic over.
///
/// `RealField` supplies the linear algebra (QR, SVD, eigen) while the
/// `num-traits` conversions move values in and out of `f64`, which is the
/// type random samples are drawn in.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {}

impl<T> Real for T where T: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {}

/// Converts an `f64` constant into `T`.
#[inline]
pub fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 is representable in every Real")
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("Real converts to f64")
}

/// Relative difference `|a - b| / max(|b|, floor)`, as `f64`.
pub fn rel_diff<T: Real>(a: T, b: T, floor: f64) -> f64 {
    let diff = to_f64((a - b).abs());
    diff / to_f64(b.abs()).max(floor)
}
