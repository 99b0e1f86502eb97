use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dcl::CodeAllocation;
use crate::error::{Error, Result};
use crate::nn::{NetworkSpec, Network};
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 8] = b"CKPT3D01";

/// Trained network plus its iteration counter.
///
/// Layout: magic, spec text (u32 length + UTF-8), input shape (u8 rank +
/// u64 extents), code allocation (u8 flag, then u64 classes, length,
/// priority count and priority classes), u64 iteration, u64 tensor count,
/// then parameter tensor blobs in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub network: Network<T>,
    pub iteration: u64,
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_usize(r: &mut impl Read, what: &str) -> Result<usize> {
    let v = get_u64(r)?;
    usize::try_from(v)
        .ok()
        .filter(|&v| v < 1 << 40)
        .ok_or_else(|| Error::Format(format!("implausible {what} {v}")))
}

impl<T: Real> Checkpoint<T> {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let net = &self.network;
        w.write_all(MAGIC)?;
        let spec = net.spec().to_string();
        w.write_all(&(spec.len() as u32).to_le_bytes())?;
        w.write_all(spec.as_bytes())?;
        w.write_all(&[net.input_shape().len() as u8])?;
        for &e in net.input_shape() {
            put_u64(w, e as u64)?;
        }
        match net.allocation() {
            Some(a) => {
                w.write_all(&[1])?;
                put_u64(w, a.classes() as u64)?;
                put_u64(w, a.code_length() as u64)?;
                put_u64(w, a.priority_classes().len() as u64)?;
                for &c in a.priority_classes() {
                    put_u64(w, c as u64)?;
                }
            }
            None => w.write_all(&[0])?,
        }
        put_u64(w, self.iteration)?;
        let params = net.params();
        put_u64(w, params.len() as u64)?;
        for p in params {
            p.write_to(w)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_le_bytes(len) as usize;
        if len > 1 << 20 {
            return Err(Error::Format(format!("implausible spec length {len}")));
        }
        let mut text = vec![0u8; len];
        r.read_exact(&mut text)?;
        let text = String::from_utf8(text).map_err(|_| Error::Format("spec text is not UTF-8".into()))?;
        let spec: NetworkSpec = text.parse()?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let input_shape = (0..rank[0]).map(|_| get_usize(r, "extent")).collect::<Result<Vec<_>>>()?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let allocation = match flag[0] {
            0 => None,
            1 => {
                let classes = get_usize(r, "class count")?;
                let length = get_usize(r, "code length")?;
                let count = get_usize(r, "priority count")?;
                if count > length {
                    return Err(Error::Format(format!("implausible priority count {count}")));
                }
                let priority = (0..count).map(|_| get_usize(r, "priority class")).collect::<Result<Vec<_>>>()?;
                Some(CodeAllocation::with_priority(classes, length, priority)?)
            }
            f => return Err(Error::Format(format!("bad allocation flag {f}"))),
        };
        let iteration = get_u64(r)?;
        let count = get_usize(r, "tensor count")?;
        if count > 1 << 16 {
            return Err(Error::Format(format!("implausible tensor count {count}")));
        }
        let params = (0..count).map(|_| Tensor::read_from(r)).collect::<Result<Vec<_>>>()?;
        let network = Network::from_params(spec, &input_shape, params, allocation)?;
        Ok(Self { network, iteration })
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    #[test]
    fn round_trip_is_byte_identical() {
        let spec: NetworkSpec = "C(3,2,1)-P(2,2,2,2)-FC(6)-SM(3)-DC(7)".parse().unwrap();
        let net: Network<f32> = Network::new(spec, &[3, 4, 4, 4], Init::Gaussian { seed: 1 }).unwrap();
        let net = net.with_allocation(CodeAllocation::with_priority(3, 7, vec![2]).unwrap()).unwrap();
        let ck = Checkpoint { network: net, iteration: 42 };
        let bytes = ck.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::<f32>::from_bytes(b"CKPT3D02").is_err());
        let spec: NetworkSpec = "FC(2)-SM(2)".parse().unwrap();
        let ck = Checkpoint { network: Network::<f32>::new(spec, &[3], Init::Zeros).unwrap(), iteration: 0 };
        let bytes = ck.to_bytes();
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
