//! IDX container format used by the MNIST family of datasets.
//!
//! Layout: a big-endian magic word `0x0000_08NN` (unsigned bytes, `NN`
//! dimensions), `NN` big-endian `u32` dimension sizes, then the row-major
//! payload.

use super::DataError;

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

/// A decoded IDX payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(raw: &[u8]) -> Result<IdxArray, DataError> {
    if raw.len() < 4 {
        return Err(DataError::Truncated {
            expected: 4,
            actual: raw.len(),
        });
    }
    let magic = read_u32_be(&raw[..4]);
    let rank = match magic {
        LABELS_MAGIC => 1,
        IMAGES_MAGIC => 3,
        other => return Err(DataError::BadMagic(other)),
    };
    let header = 4 + 4 * rank;
    if raw.len() < header {
        return Err(DataError::Truncated {
            expected: header,
            actual: raw.len(),
        });
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| read_u32_be(&raw[4 + 4 * i..8 + 4 * i]) as usize)
        .collect();
    let expected = header + dims.iter().product::<usize>();
    match raw.len().cmp(&expected) {
        std::cmp::Ordering::Less => Err(DataError::Truncated {
            expected,
            actual: raw.len(),
        }),
        std::cmp::Ordering::Greater => Err(DataError::TrailingBytes {
            expected,
            actual: raw.len(),
        }),
        std::cmp::Ordering::Equal => Ok(IdxArray {
            dims,
            data: raw[header..].to_vec(),
        }),
    }
}

/// Encodes a 1-D (labels) or 3-D (images) byte array.
pub fn serialize_idx(array: &IdxArray) -> Result<Vec<u8>, DataError> {
    let magic = match array.dims.len() {
        1 => LABELS_MAGIC,
        3 => IMAGES_MAGIC,
        n => {
            return Err(DataError::Inconsistent(format!(
                "IDX arrays must be 1-D or 3-D, got {n} dimensions"
            )))
        }
    };
    if array.dims.iter().product::<usize>() != array.data.len() {
        return Err(DataError::Inconsistent(format!(
            "payload of {} bytes does not match dims {:?}",
            array.data.len(),
            array.dims
        )));
    }
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    write_u32_be(&mut out, magic);
    for &d in &array.dims {
        let d = u32::try_from(d)
            .map_err(|_| DataError::Inconsistent(format!("dimension {d} exceeds u32")))?;
        write_u32_be(&mut out, d);
    }
    out.extend_from_slice(&array.data);
    Ok(out)
}

fn read_u32_be(bytes: &[u8]) -> u32 {
    u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
}

fn write_u32_be(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}
