//! SKNN checkpoint files. The byte layout is documented in
//! `docs/checkpoint.md`; all integers and floats are little-endian.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::conv::ConvGeometry;
use crate::error::{Error, Result};
use crate::layers::{DenseConv, DenseFc, Layer, MaxPool, SkConv, SkFc};
use crate::network::Network;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SKNN";
pub const VERSION: u32 = 1;

const TAG_FC: u8 = 1;
const TAG_CONV: u8 = 2;
const TAG_SK_FC: u8 = 3;
const TAG_SK_CONV: u8 = 4;
const TAG_RELU: u8 = 5;
const TAG_MAXPOOL: u8 = 6;

fn dim(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("extent {v} exceeds u32")))
}

fn put_dims(out: &mut impl Write, dims: &[usize]) -> Result<()> {
    for &d in dims {
        out.write_u32::<LE>(dim(d)?)?;
    }
    Ok(())
}

fn put_tensor(out: &mut impl Write, t: &Tensor) -> Result<()> {
    for &v in t.data() {
        out.write_f64::<LE>(v)?;
    }
    Ok(())
}

fn put_geometry(out: &mut impl Write, g: &ConvGeometry) -> Result<()> {
    put_dims(
        out,
        &[
            g.in_h,
            g.in_w,
            g.in_channels,
            g.kernel_h,
            g.kernel_w,
            g.out_channels,
            g.stride,
            g.pad,
        ],
    )
}

fn put_seeds(out: &mut impl Write, seeds: &[(u64, u64)]) -> Result<()> {
    for &(a, b) in seeds {
        out.write_u64::<LE>(a)?;
        out.write_u64::<LE>(b)?;
    }
    Ok(())
}

pub fn write_checkpoint(net: &Network, out: &mut impl Write) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_u32::<LE>(VERSION)?;
    out.write_u32::<LE>(dim(net.input_shape().len())?)?;
    put_dims(out, net.input_shape())?;
    out.write_u32::<LE>(dim(net.layers().len())?)?;
    for layer in net.layers() {
        match layer {
            Layer::DenseFc(l) => {
                out.write_u8(TAG_FC)?;
                put_dims(out, &[l.d1(), l.d2()])?;
                put_tensor(out, l.weight())?;
                put_tensor(out, l.bias())?;
            }
            Layer::DenseConv(l) => {
                out.write_u8(TAG_CONV)?;
                put_geometry(out, l.geometry())?;
                put_tensor(out, l.kernel())?;
                put_tensor(out, l.bias())?;
            }
            Layer::SkFc(l) => {
                out.write_u8(TAG_SK_FC)?;
                put_dims(out, &[l.d1(), l.d2(), l.k(), l.ell()])?;
                put_seeds(out, &l.seeds())?;
                for t in l.params() {
                    put_tensor(out, t)?;
                }
            }
            Layer::SkConv(l) => {
                out.write_u8(TAG_SK_CONV)?;
                put_geometry(out, l.geometry())?;
                put_dims(out, &[l.k(), l.ell()])?;
                out.write_u8(l.bias().is_some() as u8)?;
                put_seeds(out, &l.seeds())?;
                for t in l.params() {
                    put_tensor(out, t)?;
                }
            }
            Layer::Relu => out.write_u8(TAG_RELU)?,
            Layer::MaxPool(p) => {
                out.write_u8(TAG_MAXPOOL)?;
                out.write_u32::<LE>(dim(p.window)?)?;
            }
        }
    }
    Ok(())
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl Reader<'_> {
    fn offset(&self) -> u64 {
        self.cur.position()
    }

    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            kind: "checkpoint",
            offset: self.offset(),
            detail: detail.into(),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let at = self.offset();
        self.cur.read_u8().map_err(|_| truncated(at, what))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let at = self.offset();
        self.cur
            .read_u32::<LE>()
            .map(|v| v as usize)
            .map_err(|_| truncated(at, what))
    }

    fn dims<const N: usize>(&mut self, what: &str) -> Result<[usize; N]> {
        let mut d = [0; N];
        for v in &mut d {
            *v = self.u32(what)?;
        }
        Ok(d)
    }

    fn seeds(&mut self, ell: usize) -> Result<Vec<(u64, u64)>> {
        (0..ell)
            .map(|_| {
                let at = self.offset();
                let a = self
                    .cur
                    .read_u64::<LE>()
                    .map_err(|_| truncated(at, "seed"))?;
                let b = self
                    .cur
                    .read_u64::<LE>()
                    .map_err(|_| truncated(at, "seed"))?;
                Ok((a, b))
            })
            .collect()
    }

    fn tensor(&mut self, shape: &[usize], what: &str) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        let at = self.offset();
        let remaining = self.cur.get_ref().len() as u64 - at;
        if (len as u64).saturating_mul(8) > remaining {
            return Err(truncated(at, what));
        }
        let mut data = vec![0.0; len];
        self.cur
            .read_f64_into::<LE>(&mut data)
            .map_err(|_| truncated(at, what))?;
        Tensor::new(shape, data).map_err(|e| Error::Format {
            kind: "checkpoint",
            offset: at,
            detail: e.to_string(),
        })
    }

    fn geometry(&mut self) -> Result<ConvGeometry> {
        let at = self.offset();
        let [ih, iw, ic, kh, kw, oc, stride, pad] = self.dims::<8>("conv geometry")?;
        ConvGeometry::new(ih, iw, ic, kh, kw, oc, stride, pad).map_err(|e| Error::Format {
            kind: "checkpoint",
            offset: at,
            detail: e.to_string(),
        })
    }
}

fn truncated(offset: u64, what: &str) -> Error {
    Error::Format {
        kind: "checkpoint",
        offset,
        detail: format!("truncated while reading {what}"),
    }
}

fn at_offset(offset: u64) -> impl Fn(Error) -> Error {
    move |e| match e {
        e @ Error::Format { .. } => e,
        other => Error::Format {
            kind: "checkpoint",
            offset,
            detail: other.to_string(),
        },
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader {
        cur: Cursor::new(bytes),
    };
    let mut magic = [0u8; 4];
    r.cur
        .read_exact(&mut magic)
        .map_err(|_| truncated(0, "magic"))?;
    if &magic != MAGIC {
        return Err(Error::Format {
            kind: "checkpoint",
            offset: 0,
            detail: format!("bad magic {magic:02x?}, expected \"SKNN\""),
        });
    }
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let rank = r.u32("input rank")?;
    if !(1..=4).contains(&rank) {
        return Err(r.err(format!("input rank {rank} outside 1..=4")));
    }
    let input_shape = (0..rank)
        .map(|_| r.u32("input shape"))
        .collect::<Result<Vec<_>>>()?;
    let count = r.u32("layer count")?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let start = r.offset();
        let tag = r.u8("layer tag")?;
        let layer = match tag {
            TAG_FC => {
                let [d1, d2] = r.dims::<2>("fc dims")?;
                let w = r.tensor(&[d1, d2], "fc weight")?;
                let b = r.tensor(&[d1], "fc bias")?;
                Layer::DenseFc(DenseFc::new(w, b).map_err(at_offset(start))?)
            }
            TAG_CONV => {
                let g = r.geometry()?;
                let kern = r.tensor(&g.kernel_shape(), "conv kernel")?;
                let b = r.tensor(&[g.out_channels], "conv bias")?;
                Layer::DenseConv(DenseConv::new(g, kern, b).map_err(at_offset(start))?)
            }
            TAG_SK_FC => {
                let [d1, d2, k, ell] = r.dims::<4>("sk-fc dims")?;
                let seeds = r.seeds(ell)?;
                let s1 = (0..ell)
                    .map(|_| r.tensor(&[k, d2], "S1"))
                    .collect::<Result<_>>()?;
                let s2 = (0..ell)
                    .map(|_| r.tensor(&[d1, k], "S2"))
                    .collect::<Result<_>>()?;
                let b = r.tensor(&[d1], "sk-fc bias")?;
                Layer::SkFc(
                    SkFc::from_parts(d1, d2, k, &seeds, s1, s2, b).map_err(at_offset(start))?,
                )
            }
            TAG_SK_CONV => {
                let g = r.geometry()?;
                let [k, ell] = r.dims::<2>("sk-conv dims")?;
                let has_bias = match r.u8("bias flag")? {
                    0 => false,
                    1 => true,
                    other => return Err(r.err(format!("bias flag {other} is not 0 or 1"))),
                };
                let seeds = r.seeds(ell)?;
                let s1 = (0..ell)
                    .map(|_| r.tensor(&SkConv::s1_shape(&g, k), "S1"))
                    .collect::<Result<_>>()?;
                let s2 = (0..ell)
                    .map(|_| r.tensor(&SkConv::s2_shape(&g, k), "S2"))
                    .collect::<Result<_>>()?;
                let b = if has_bias {
                    Some(r.tensor(&[g.out_channels], "sk-conv bias")?)
                } else {
                    None
                };
                Layer::SkConv(
                    SkConv::from_parts(g, k, &seeds, s1, s2, b).map_err(at_offset(start))?,
                )
            }
            TAG_RELU => Layer::Relu,
            TAG_MAXPOOL => Layer::MaxPool(MaxPool {
                window: r.u32("pool window")?,
            }),
            other => {
                return Err(Error::Format {
                    kind: "checkpoint",
                    offset: start,
                    detail: format!("unknown layer tag {other}"),
                })
            }
        };
        layers.push(layer);
    }
    if (r.offset() as usize) < bytes.len() {
        return Err(r.err("trailing bytes after the last layer"));
    }
    let end = r.offset();
    Network::new(input_shape, layers).map_err(at_offset(end))
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(net, &mut bytes)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    read_checkpoint(&fs::read(path)?)
}
