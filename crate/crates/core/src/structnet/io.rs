//! Flat binary snapshot of trained parameters, all fields little-endian:
//!
//! ```text
//! magic   "SNCE"
//! u32     version (1)
//! u32     nr, nt, n_sc, constellation order, n_sizes
//! u32     classifier layer widths [n_sizes]
//! u32     pilot subcarrier indices [n_sc]
//! f64     W payload, re/im interleaved, ordered (subcarrier, stream, rx)
//! f64     classifier parameters, layer by layer (weights row-major, then biases)
//! ```

use std::io::{Read, Write};

use super::{Classifier, StructNetParams};
use crate::error::{Error, Result};
use crate::numerics::C64;
use crate::phy::Modulation;

const MAGIC: &[u8; 4] = b"SNCE";
const VERSION: u32 = 1;

fn put_u32<W: Write>(out: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit the u32 header field")))?;
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(inp: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    inp.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64<R: Read>(inp: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    inp.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_params<W: Write>(params: &StructNetParams, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    put_u32(&mut out, VERSION as usize)?;
    let sizes = params.classifier.sizes();
    for v in [params.nr, params.nt, params.subcarriers.len(), params.modulation.order(), sizes.len()] {
        put_u32(&mut out, v)?;
    }
    for &v in sizes.iter().chain(&params.subcarriers) {
        put_u32(&mut out, v)?;
    }
    for c in params.weights() {
        out.write_all(&c.re.to_le_bytes())?;
        out.write_all(&c.im.to_le_bytes())?;
    }
    for p in params.classifier.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_params<R: Read>(mut inp: R) -> Result<StructNetParams> {
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a parameter snapshot".into()));
    }
    let version = get_u32(&mut inp)?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported snapshot version {version}")));
    }
    let (nr, nt, n_sc, order, n_sizes) =
        (get_u32(&mut inp)?, get_u32(&mut inp)?, get_u32(&mut inp)?, get_u32(&mut inp)?, get_u32(&mut inp)?);
    if !(2..=16).contains(&n_sizes) {
        return Err(Error::Format(format!("implausible layer count {n_sizes}")));
    }
    let sizes = (0..n_sizes).map(|_| get_u32(&mut inp)).collect::<Result<Vec<_>>>()?;
    if sizes.last() != Some(&1) || sizes[0] != 2 * nt {
        return Err(Error::Format("classifier shape does not match stream count".into()));
    }
    let subcarriers = (0..n_sc).map(|_| get_u32(&mut inp)).collect::<Result<Vec<_>>>()?;
    let modulation = Modulation::from_order(order).map_err(|e| Error::Format(e.to_string()))?;
    let mut params = StructNetParams::new(nr, nt, subcarriers, Classifier::zeros(&sizes), modulation)?;
    for c in params.weights_mut() {
        *c = C64::new(get_f64(&mut inp)?, get_f64(&mut inp)?);
    }
    for p in params.classifier.params_mut() {
        *p = get_f64(&mut inp)?;
    }
    let mut rest = [0u8; 1];
    if inp.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after snapshot".into()));
    }
    Ok(params)
}
