//! Binary checkpoints for networks and Fisher factors.
//!
//! A text header of `key=value` lines terminated by `end`, then every tensor
//! as raw little-endian `f64` in header order:
//!
//! ```text
//! eaktr-checkpoint 1
//! kind=policy
//! seed=0
//! env_steps=32000
//! updates=100
//! layers=4
//! layer=0 inputs=124 outputs=64
//! ...
//! end
//! ```
//!
//! Policy files store each layer's weight (row-major, outputs x inputs) then
//! bias. Fisher files store each layer's `A` then `S`. Eigendecomposition
//! caches are not stored; they are rebuilt on first use after loading.

use std::fmt::Write as _;
use std::path::Path;

use eaktr_core::kfac::{FisherState, KfacConfig, SymMatrix};
use eaktr_core::policy::{Dense, PolicyNet};

use crate::error::{format_err, io_err, Result};

pub const MAGIC: &str = "eaktr-checkpoint 1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub env_steps: u64,
    pub updates: u64,
}

fn push_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn policy_bytes(net: &PolicyNet, meta: CheckpointMeta) -> Vec<u8> {
    let mut h = String::new();
    let _ = writeln!(h, "{MAGIC}\nkind=policy\nseed={}\nenv_steps={}\nupdates={}\nlayers={}", meta.seed, meta.env_steps, meta.updates, net.layers().len());
    for (i, l) in net.layers().iter().enumerate() {
        let _ = writeln!(h, "layer={i} inputs={} outputs={}", l.inputs, l.outputs);
    }
    h.push_str("end\n");
    let mut out = h.into_bytes();
    for l in net.layers() {
        push_f64s(&mut out, &l.weight);
        push_f64s(&mut out, &l.bias);
    }
    out
}

pub fn fisher_bytes(fs: &FisherState, meta: CheckpointMeta) -> Vec<u8> {
    let c = fs.config;
    let mut h = String::new();
    let _ = writeln!(
        h,
        "{MAGIC}\nkind=fisher\nseed={}\nenv_steps={}\nupdates={}\nupdate_count={}\nema_decay={}\ndamping={}\nrefresh_interval={}\nlayers={}",
        meta.seed,
        meta.env_steps,
        meta.updates,
        fs.update_count,
        c.ema_decay,
        c.damping,
        c.refresh_interval,
        fs.layers.len()
    );
    for (i, l) in fs.layers.iter().enumerate() {
        let _ = writeln!(h, "layer={i} a_dim={} s_dim={} fixed_s={}", l.a.dim, l.s.dim, l.fixed_s);
    }
    h.push_str("end\n");
    let mut out = h.into_bytes();
    for l in &fs.layers {
        push_f64s(&mut out, &l.a.data);
        push_f64s(&mut out, &l.s.data);
    }
    out
}

struct Parsed<'a> {
    header: Vec<(usize, &'a str)>,
    payload: &'a [u8],
    origin: &'a Path,
}

impl<'a> Parsed<'a> {
    fn split(bytes: &'a [u8], origin: &'a Path, kind: &str) -> Result<Parsed<'a>> {
        let mut header = Vec::new();
        let mut pos = 0;
        let mut line_no = 0;
        loop {
            let nl = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| format_err(origin, line_no + 1, "truncated header"))?;
            let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| format_err(origin, line_no + 1, "header is not UTF-8"))?;
            pos += nl + 1;
            line_no += 1;
            if line == "end" {
                break;
            }
            header.push((line_no, line));
        }
        if header.first().map(|h| h.1) != Some(MAGIC) {
            return Err(format_err(origin, 1, format!("expected {MAGIC:?}")));
        }
        let p = Parsed { header, payload: &bytes[pos..], origin };
        let found = p.value(2, "kind")?;
        if found != kind {
            return Err(format_err(origin, 2, format!("expected a {kind} checkpoint, found {found}")));
        }
        Ok(p)
    }

    fn line(&self, idx: usize) -> Result<(usize, &'a str)> {
        self.header.get(idx - 1).copied().ok_or_else(|| format_err(self.origin, idx, "truncated header"))
    }

    fn value(&self, idx: usize, key: &str) -> Result<&'a str> {
        let (n, l) = self.line(idx)?;
        l.strip_prefix(key).and_then(|r| r.strip_prefix('=')).ok_or_else(|| format_err(self.origin, n, format!("expected {key}=...")))
    }

    fn parse<T: std::str::FromStr>(&self, idx: usize, key: &str) -> Result<T> {
        let v = self.value(idx, key)?;
        v.parse().map_err(|_| format_err(self.origin, idx, format!("{key}: cannot parse {v:?}")))
    }

    /// `layer=i k1=v1 k2=v2 ...` fields in the given order.
    fn layer_fields(&self, idx: usize, layer: usize, keys: &[&str]) -> Result<Vec<&'a str>> {
        let (n, l) = self.line(idx)?;
        let mut parts = l.split(' ');
        let bad = || format_err(self.origin, n, format!("malformed layer line {l:?}"));
        if parts.next() != Some(format!("layer={layer}").as_str()) {
            return Err(bad());
        }
        let mut out = Vec::new();
        for k in keys {
            let p = parts.next().ok_or_else(bad)?;
            out.push(p.strip_prefix(k).and_then(|r| r.strip_prefix('=')).ok_or_else(bad)?);
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(out)
    }

    fn meta(&self) -> Result<CheckpointMeta> {
        Ok(CheckpointMeta { seed: self.parse(3, "seed")?, env_steps: self.parse(4, "env_steps")?, updates: self.parse(5, "updates")? })
    }

    fn floats(&self, expected: usize) -> Result<Vec<f64>> {
        if self.payload.len() != expected * 8 {
            return Err(format_err(self.origin, self.header.len() + 1, format!("payload holds {} bytes, header implies {}", self.payload.len(), expected * 8)));
        }
        Ok(self.payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
    }
}

fn num<T: std::str::FromStr>(v: &str, origin: &Path, line: usize) -> Result<T> {
    v.parse().map_err(|_| format_err(origin, line, format!("cannot parse {v:?}")))
}

pub fn parse_policy(bytes: &[u8], origin: &Path) -> Result<(PolicyNet, CheckpointMeta)> {
    let p = Parsed::split(bytes, origin, "policy")?;
    let meta = p.meta()?;
    let n: usize = p.parse(6, "layers")?;
    let mut shapes = Vec::with_capacity(n);
    for i in 0..n {
        let f = p.layer_fields(7 + i, i, &["inputs", "outputs"])?;
        shapes.push((num::<usize>(f[0], origin, 7 + i)?, num::<usize>(f[1], origin, 7 + i)?));
    }
    if p.header.len() != 6 + n {
        return Err(format_err(origin, 7 + n, "unexpected header line"));
    }
    let total = shapes.iter().map(|(i, o)| i * o + o).sum();
    let data = p.floats(total)?;
    let mut at = 0;
    let mut layers = Vec::with_capacity(n);
    for (inputs, outputs) in shapes {
        let mut l = Dense::zeros(inputs, outputs);
        l.weight.copy_from_slice(&data[at..at + inputs * outputs]);
        at += inputs * outputs;
        l.bias.copy_from_slice(&data[at..at + outputs]);
        at += outputs;
        layers.push(l);
    }
    Ok((PolicyNet::from_layers(layers)?, meta))
}

pub fn parse_fisher(bytes: &[u8], origin: &Path) -> Result<(FisherState, CheckpointMeta)> {
    let p = Parsed::split(bytes, origin, "fisher")?;
    let meta = p.meta()?;
    let update_count: u64 = p.parse(6, "update_count")?;
    let config = KfacConfig { ema_decay: p.parse(7, "ema_decay")?, damping: p.parse(8, "damping")?, refresh_interval: p.parse(9, "refresh_interval")? };
    let n: usize = p.parse(10, "layers")?;
    let mut shapes = Vec::with_capacity(n);
    for i in 0..n {
        let f = p.layer_fields(11 + i, i, &["a_dim", "s_dim", "fixed_s"])?;
        shapes.push((num::<usize>(f[0], origin, 11 + i)?, num::<usize>(f[1], origin, 11 + i)?, num::<bool>(f[2], origin, 11 + i)?));
    }
    if p.header.len() != 10 + n {
        return Err(format_err(origin, 11 + n, "unexpected header line"));
    }
    let total = shapes.iter().map(|(a, s, _)| a * a + s * s).sum();
    let data = p.floats(total)?;
    let mut at = 0;
    let mut factors = Vec::with_capacity(n);
    for (a_dim, s_dim, fixed_s) in shapes {
        let a = SymMatrix { dim: a_dim, data: data[at..at + a_dim * a_dim].to_vec() };
        at += a_dim * a_dim;
        let s = SymMatrix { dim: s_dim, data: data[at..at + s_dim * s_dim].to_vec() };
        at += s_dim * s_dim;
        factors.push((a, s, fixed_s));
    }
    Ok((FisherState::from_factors(factors, config, update_count), meta))
}

pub fn save_policy(net: &PolicyNet, meta: CheckpointMeta, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, &policy_bytes(net, meta))
}

pub fn save_fisher(fs: &FisherState, meta: CheckpointMeta, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, &fisher_bytes(fs, meta))
}

pub fn load_policy(path: &Path) -> Result<(PolicyNet, CheckpointMeta)> {
    parse_policy(&std::fs::read(path).map_err(io_err(path))?, path)
}

pub fn load_fisher(path: &Path) -> Result<(FisherState, CheckpointMeta)> {
    parse_fisher(&std::fs::read(path).map_err(io_err(path))?, path)
}
