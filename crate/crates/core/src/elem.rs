//! Element types that can live in symmetric memory and be reduced.
//!
//! Values are stored little-endian. Integer addition wraps so reductions are
//! total and bit-reproducible regardless of overflow.

pub trait Elem: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    const WIDTH: usize;

    fn read_le(bytes: &[u8]) -> Self;
    fn write_le(self, out: &mut [u8]);
    fn add(self, other: Self) -> Self;
    fn mul(self, other: Self) -> Self;
}

macro_rules! int_elem {
    ($($t:ty),*) => {$(
        impl Elem for $t {
            const WIDTH: usize = std::mem::size_of::<$t>();

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes[..Self::WIDTH].try_into().unwrap())
            }
            fn write_le(self, out: &mut [u8]) {
                out[..Self::WIDTH].copy_from_slice(&self.to_le_bytes());
            }
            fn add(self, other: Self) -> Self {
                self.wrapping_add(other)
            }
            fn mul(self, other: Self) -> Self {
                self.wrapping_mul(other)
            }
        }
    )*};
}

macro_rules! float_elem {
    ($($t:ty),*) => {$(
        impl Elem for $t {
            const WIDTH: usize = std::mem::size_of::<$t>();

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes[..Self::WIDTH].try_into().unwrap())
            }
            fn write_le(self, out: &mut [u8]) {
                out[..Self::WIDTH].copy_from_slice(&self.to_le_bytes());
            }
            fn add(self, other: Self) -> Self {
                self + other
            }
            fn mul(self, other: Self) -> Self {
                self * other
            }
        }
    )*};
}

int_elem!(i32, u32, i64, u64);
float_elem!(f32, f64);

pub fn to_bytes<T: Elem>(values: &[T]) -> Vec<u8> {
    let mut out = vec![0u8; values.len() * T::WIDTH];
    for (v, chunk) in values.iter().zip(out.chunks_exact_mut(T::WIDTH)) {
        v.write_le(chunk);
    }
    out
}

pub fn from_bytes<T: Elem>(bytes: &[u8]) -> Vec<T> {
    bytes.chunks_exact(T::WIDTH).map(T::read_le).collect()
}

/// Element-wise `acc += other` over little-endian encoded buffers.
pub fn add_assign_bytes<T: Elem>(acc: &mut [u8], other: &[u8]) {
    debug_assert_eq!(acc.len(), other.len());
    for (a, b) in acc
        .chunks_exact_mut(T::WIDTH)
        .zip(other.chunks_exact(T::WIDTH))
    {
        T::read_le(a).add(T::read_le(b)).write_le(a);
    }
}
