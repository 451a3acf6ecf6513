//! Dense f32 tensors with row-major layout and a fixed on-disk format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// File magic for the tensor interchange format.
pub const TENSOR_MAGIC: &[u8; 8] = b"FPTENSR1";

/// A dense numeric array: shape metadata over a flat row-major f32 buffer.
///
/// Tensors are immutable once constructed; every constructor rejects
/// non-finite values and shape/length mismatches.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "tensor shape {shape:?} contains a zero dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} implies {expected} values but {} were provided",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "tensor with shape {shape:?} contains non-finite value {bad}"
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Result<Self> {
        let len = shape.iter().product();
        Tensor::new(shape, vec![value; len])
    }

    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        let len = data.len();
        Tensor::new(vec![len], data)
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same buffer under a new shape of equal volume.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::Dimension(format!(
                "matmul needs rank-2 operands, got {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f32;
                for p in 0..k {
                    acc += self.data[i * k + p] * other.data[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Element-wise product. `mask` must either match `self`'s shape exactly
    /// or be rank-1 with one value per leading-axis slice (the per-channel
    /// rule used when masking convolutional feature maps).
    pub fn elementwise_mul(&self, mask: &Tensor) -> Result<Tensor> {
        if self.shape == mask.shape {
            let data = self
                .data
                .iter()
                .zip(&mask.data)
                .map(|(a, b)| a * b)
                .collect();
            return Tensor::new(self.shape.clone(), data);
        }
        if mask.rank() == 1 && self.rank() > 1 && mask.len() == self.shape[0] {
            let slice = self.len() / self.shape[0];
            let mut data = Vec::with_capacity(self.len());
            for (c, &m) in mask.data.iter().enumerate() {
                data.extend(self.data[c * slice..(c + 1) * slice].iter().map(|v| v * m));
            }
            return Tensor::new(self.shape.clone(), data);
        }
        Err(Error::Dimension(format!(
            "cannot broadcast {:?} onto {:?} for element-wise multiply",
            mask.shape, self.shape
        )))
    }

    /// Index of the maximum value of a rank-1 tensor; ties break toward the
    /// lowest index so derived labels are deterministic.
    pub fn argmax(&self) -> Result<usize> {
        if self.is_empty() {
            return Err(Error::EmptyInput("argmax of empty tensor"));
        }
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Writes the tensor in the interchange format: magic, u32 rank,
    /// rank x u64 dims, then the raw little-endian f32 payload.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&(self.rank() as u32).to_le_bytes())?;
        for &dim in &self.shape {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Tensor> {
        fn eof(what: &str) -> Error {
            Error::Format(format!("tensor file truncated while reading {what}"))
        }
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| eof("magic"))?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::Format(format!(
                "bad tensor magic {magic:?}, expected {TENSOR_MAGIC:?}"
            )));
        }
        let mut rank_buf = [0u8; 4];
        r.read_exact(&mut rank_buf).map_err(|_| eof("rank"))?;
        let rank = u32::from_le_bytes(rank_buf) as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("unsupported tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut dim_buf = [0u8; 8];
            r.read_exact(&mut dim_buf).map_err(|_| eof("dims"))?;
            shape.push(u64::from_le_bytes(dim_buf) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = vec![0.0f32; len];
        let mut buf = [0u8; 4];
        for slot in &mut data {
            r.read_exact(&mut buf).map_err(|_| eof("payload"))?;
            *slot = f32::from_le_bytes(buf);
        }
        Tensor::new(shape, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        Tensor::read_from(&mut r).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(eye.matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2]] x [[3],[4]] = [[11]]
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Tensor::zeros(vec![2, 3]);
        let m = Tensor::new(vec![3, 4], (0..12).map(|i| i as f32).collect()).unwrap();
        let c = z.matmul(&m).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![4, 2]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn elementwise_mask_identity_and_annihilator() {
        let x = Tensor::from_vec(vec![2.0, 3.0, 5.0]).unwrap();
        let mask = Tensor::from_vec(vec![1.0, 0.0, 1.0]).unwrap();
        assert_eq!(x.elementwise_mul(&mask).unwrap().data(), &[2.0, 0.0, 5.0]);
        let ones = Tensor::filled(vec![3], 1.0).unwrap();
        assert_eq!(x.elementwise_mul(&ones).unwrap(), x);
        let zeros = Tensor::zeros(vec![3]);
        assert!(x
            .elementwise_mul(&zeros)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn elementwise_channel_broadcast() {
        // 2 channels of 2x2; masking channel 1 zeroes its whole map
        let x = Tensor::new(vec![2, 2, 2], (1..=8).map(|i| i as f32).collect()).unwrap();
        let mask = Tensor::from_vec(vec![1.0, 0.0]).unwrap();
        let y = x.elementwise_mul(&mask).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn elementwise_rejects_non_broadcastable() {
        let x = Tensor::zeros(vec![2, 3]);
        let mask = Tensor::zeros(vec![4]);
        assert!(matches!(x.elementwise_mul(&mask), Err(Error::Dimension(_))));
    }

    #[test]
    fn argmax_tie_breaks_low() {
        let t = Tensor::from_vec(vec![0.5, 0.5]).unwrap();
        assert_eq!(t.argmax().unwrap(), 0);
        let t = Tensor::from_vec(vec![0.1, 0.7, 0.2]).unwrap();
        assert_eq!(t.argmax().unwrap(), 1);
        for i in 0..4 {
            let mut one_hot = vec![0.0; 4];
            one_hot[i] = 1.0;
            assert_eq!(Tensor::from_vec(one_hot).unwrap().argmax().unwrap(), i);
        }
    }

    #[test]
    fn constructor_rejects_nan_and_bad_lengths() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f32::NAN]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let t = Tensor::new(vec![2, 3], vec![0.1, -2.5, 3.75, 1e-20, 7.0, -0.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = Tensor::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let t = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            Tensor::read_from(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let buf = b"NOTATNSR\x01\x00\x00\x00".to_vec();
        assert!(matches!(
            Tensor::read_from(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
