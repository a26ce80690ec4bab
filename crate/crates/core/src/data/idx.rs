//! IDX files: a big-endian header `0x00 0x00 type rank`, `rank` big-endian
//! u32 extents, then the payload in row-major order. Images use unsigned
//! bytes (`type = 0x08`) with rank 3 (`n, rows, cols`, grayscale) or rank 4
//! (`n, rows, cols, channels`); labels are rank 1.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, WriteBytesExt};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const UBYTE: u8 = 0x08;

fn format_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        kind: "IDX",
        offset: offset as u64,
        detail: detail.into(),
    }
}

/// Parses the header; returns the extents and the payload offset.
fn parse_header(bytes: &[u8], ranks: &[u8]) -> Result<(Vec<usize>, usize)> {
    if bytes.len() < 4 {
        return Err(format_err(
            bytes.len(),
            "file shorter than the 4-byte magic",
        ));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(0, format!("bad magic {:02x?}", &bytes[..4])));
    }
    if bytes[2] != UBYTE {
        return Err(format_err(
            2,
            format!("unsupported element type 0x{:02x}", bytes[2]),
        ));
    }
    let rank = bytes[3];
    if !ranks.contains(&rank) {
        return Err(format_err(
            3,
            format!("unsupported rank {rank}, expected one of {ranks:?}"),
        ));
    }
    let header = 4 + 4 * rank as usize;
    if bytes.len() < header {
        return Err(format_err(bytes.len(), "truncated extents"));
    }
    let dims: Vec<usize> = (0..rank as usize)
        .map(|i| BigEndian::read_u32(&bytes[4 + 4 * i..]) as usize)
        .collect();
    let payload: usize = dims.iter().product();
    if bytes.len() < header + payload {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {payload} bytes after offset {header}"),
        ));
    }
    if bytes.len() > header + payload {
        return Err(format_err(header + payload, "trailing bytes after payload"));
    }
    Ok((dims, header))
}

/// Decodes an image file into `rows x cols x channels` tensors scaled by
/// `1/255`.
pub fn read_idx_images(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let (dims, start) = parse_header(bytes, &[3, 4])?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let channels = dims.get(3).copied().unwrap_or(1);
    if rows == 0 || cols == 0 || channels == 0 {
        return Err(format_err(4, format!("zero image extent in {dims:?}")));
    }
    let per = rows * cols * channels;
    Ok((0..n)
        .map(|s| {
            let img = &bytes[start + s * per..start + (s + 1) * per];
            Tensor::from_fn(&[rows, cols, channels], |ix| {
                img[(ix[0] * cols + ix[1]) * channels + ix[2]] as f64 / 255.0
            })
        })
        .collect())
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let (_, start) = parse_header(bytes, &[1])?;
    Ok(bytes[start..].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label pair. The class count is one more than the largest
/// label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = read_idx_images(&fs::read(images_path)?)?;
    let label_bytes = fs::read(labels_path)?;
    let labels = read_idx_labels(&label_bytes)?;
    if labels.len() != images.len() {
        return Err(format_err(
            4,
            format!(
                "label count {} does not match image count {}",
                labels.len(),
                images.len()
            ),
        ));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(images, labels, classes)
}

fn write_header(out: &mut impl Write, dims: &[usize]) -> Result<()> {
    out.write_all(&[0, 0, UBYTE, dims.len() as u8])?;
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidArgument(format!("extent {d} exceeds u32")))?;
        out.write_u32::<BigEndian>(d)?;
    }
    Ok(())
}

/// Encodes images, rounding `255 * value` after clamping to `[0, 1]`.
/// Single-channel images are written as rank 3.
pub fn write_idx_images(images: &[Tensor], out: &mut impl Write) -> Result<()> {
    let shape = images.first().map_or([0, 0, 1], |t| {
        let s = t.shape();
        [s[0], s[1], s[2]]
    });
    let [rows, cols, channels] = shape;
    if channels == 1 {
        write_header(out, &[images.len(), rows, cols])?;
    } else {
        write_header(out, &[images.len(), rows, cols, channels])?;
    }
    let mut buf = vec![0u8; rows * cols * channels];
    for img in images {
        if img.shape() != shape {
            return Err(Error::shape("write_idx_images", "images differ in shape"));
        }
        for y in 0..rows {
            for x in 0..cols {
                for c in 0..channels {
                    let v = img.get(&[y, x, c]).clamp(0.0, 1.0);
                    buf[(y * cols + x) * channels + c] = (v * 255.0).round() as u8;
                }
            }
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn write_idx_labels(labels: &[usize], out: &mut impl Write) -> Result<()> {
    write_header(out, &[labels.len()])?;
    for &l in labels {
        let b = u8::try_from(l)
            .map_err(|_| Error::InvalidArgument(format!("label {l} does not fit in a byte")))?;
        out.write_u8(b)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend([0, 51, 102, 255, 10, 20, 30, 40]);
        b
    }

    #[test]
    fn decodes_grayscale_fixture() {
        let imgs = read_idx_images(&fixture()).unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!(imgs[0].shape(), [2, 2, 1]);
        // row-major on disk: (row 0, col 1) is the second byte
        assert_eq!(imgs[0].get(&[0, 1, 0]), 0.2);
        assert_eq!(imgs[0].get(&[1, 0, 0]), 0.4);
        assert_eq!(imgs[0].get(&[1, 1, 0]), 1.0);
        assert_eq!(imgs[1].get(&[0, 0, 0]), 10.0 / 255.0);
    }

    #[test]
    fn round_trips_color() {
        let img = Tensor::from_fn(&[2, 3, 3], |ix| {
            (ix[0] + 2 * ix[1] + 6 * ix[2]) as f64 / 255.0
        });
        let mut bytes = Vec::new();
        write_idx_images(std::slice::from_ref(&img), &mut bytes).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 4]);
        assert_eq!(bytes.len(), 4 + 16 + 18);
        let back = read_idx_images(&bytes).unwrap();
        assert!(back[0].max_abs_diff(&img) < 1e-15);
    }

    #[test]
    fn diagnostics_carry_offsets() {
        let mut b = fixture();
        b[0] = 1;
        assert!(matches!(
            read_idx_images(&b),
            Err(Error::Format { offset: 0, .. })
        ));
        let b = &fixture()[..20];
        assert!(matches!(
            read_idx_images(b),
            Err(Error::Format { offset: 20, .. })
        ));
        let mut b = fixture();
        b.push(0);
        assert!(matches!(
            read_idx_images(&b),
            Err(Error::Format { offset: 24, .. })
        ));
        assert!(read_idx_labels(&fixture()).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let mut bytes = Vec::new();
        write_idx_labels(&[3, 0, 9], &mut bytes).unwrap();
        assert_eq!(bytes, [0, 0, 8, 1, 0, 0, 0, 3, 3, 0, 9]);
        assert_eq!(read_idx_labels(&bytes).unwrap(), [3, 0, 9]);
    }
}
