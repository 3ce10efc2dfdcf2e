//! Transceiver checkpoint files.
//!
//! Layout (all integers little-endian):
//!   magic "SLFCKPT1" (8 bytes)
//!   version u32
//!   tensor count u32
//!   per tensor, sorted by name:
//!     name length u16, UTF-8 name bytes
//!     ndim u8, dims u32 each
//!     raw f32 data
//!   metadata:
//!     task name (u16 length + UTF-8)
//!     trained epsilon f64
//!     dataset id (u16 length + UTF-8)
//!     seed u64
//!
//! Round-trips are bit-exact: loading and re-saving reproduces the file.

use std::collections::BTreeMap;
use std::path::Path;

use semcom::arch;
use semcom::layers::{ParamStore, Stack};
use semcom::tensor::Tensor;
use semcom::transceiver::{Task, Transceiver};
use semcom::vq::Codebook;

use crate::error::{CliError, Result};

pub const MAGIC: [u8; 8] = *b"SLFCKPT1";
pub const VERSION: u32 = 1;

fn bad(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::checkpoint(format!("{}: {what}", path.display()))
}

pub fn save(path: &Path, trx: &Transceiver<f32>) -> Result<()> {
    let mut tensors: BTreeMap<&str, &Tensor<f32>> = BTreeMap::new();
    for (name, t) in trx.theta.iter().chain(trx.phi.iter()) {
        tensors.insert(name, t);
    }
    tensors.insert("codebook", trx.codebook.entries());
    if let Some(gamma) = &trx.gamma {
        for (name, t) in gamma.iter() {
            tensors.insert(name, t);
        }
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        put_str(&mut buf, name)?;
        let shape = t.shape();
        if shape.len() > u8::MAX as usize {
            return Err(CliError::checkpoint(format!(
                "tensor `{name}` has {} dims, format allows {}",
                shape.len(),
                u8::MAX
            )));
        }
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    put_str(&mut buf, trx.task.name())?;
    buf.extend_from_slice(&trx.trained_epsilon.to_le_bytes());
    put_str(&mut buf, &trx.dataset_id)?;
    buf.extend_from_slice(&trx.seed.to_le_bytes());

    std::fs::write(path, &buf).map_err(|e| CliError::io(path.display(), e))
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    if s.len() > u16::MAX as usize {
        return Err(CliError::checkpoint(format!(
            "string of {} bytes exceeds the u16 length field",
            s.len()
        )));
    }
    buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(bad(
                self.path,
                format!("truncated reading {what} at byte {}", self.pos),
            )),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn str(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let b = self.take(len, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| bad(self.path, format!("{what} is not UTF-8")))
    }
}

pub fn load(path: &Path) -> Result<Transceiver<f32>> {
    let bytes = std::fs::read(path).map_err(|e| {
        CliError::checkpoint(format!(
            "{}: {e} (expected a checkpoint written by the pretrain step)",
            path.display()
        ))
    })?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };

    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(bad(path, format!("bad magic {magic:02x?}")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;

    let mut tensors: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    for i in 0..count {
        let name = r.str(&format!("tensor {i} name"))?;
        let ndim = r.take(1, "ndim")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32(&format!("dims of `{name}`"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4, &format!("data of `{name}`"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(path, e))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(bad(path, format!("duplicate tensor `{name}`")));
        }
    }

    let task_name = r.str("task name")?;
    let trained_epsilon = r.f64("trained epsilon")?;
    let dataset_id = r.str("dataset id")?;
    let seed = r.u64("seed")?;
    if r.pos != bytes.len() {
        return Err(bad(
            path,
            format!("{} trailing bytes after metadata", bytes.len() - r.pos),
        ));
    }

    assemble(path, tensors, &task_name, trained_epsilon, dataset_id, seed)
}

fn assemble(
    path: &Path,
    mut tensors: BTreeMap<String, Tensor<f32>>,
    task_name: &str,
    trained_epsilon: f64,
    dataset_id: String,
    seed: u64,
) -> Result<Transceiver<f32>> {
    let entries = tensors
        .remove("codebook")
        .ok_or_else(|| bad(path, "missing tensor `codebook`"))?;
    if entries.shape() != [arch::CODEBOOK_K, arch::CODE_DIM] {
        return Err(bad(
            path,
            format!(
                "codebook shape {:?} does not match the resident {}x{} architecture",
                entries.shape(),
                arch::CODEBOOK_K,
                arch::CODE_DIM
            ),
        ));
    }
    let codebook = Codebook::new(entries).map_err(|e| bad(path, e))?;

    let mut theta = ParamStore::new();
    let mut phi = ParamStore::new();
    let mut cls = ParamStore::new();
    for (name, t) in tensors {
        if name.starts_with("enc.") {
            theta.insert(name, t);
        } else if name.starts_with("dec.") {
            phi.insert(name, t);
        } else if name.starts_with("cls.") {
            cls.insert(name, t);
        } else {
            return Err(bad(path, format!("unrecognized tensor `{name}`")));
        }
    }

    check_against(path, "encoder", &arch::encoder(), &theta)?;
    check_against(path, "decoder", &arch::decoder(), &phi)?;

    let (task, gamma) = match task_name {
        "reconstruction" => {
            if !cls.is_empty() {
                return Err(bad(path, "reconstruction checkpoint carries a classifier head"));
            }
            (Task::Reconstruction, None)
        }
        "classification" => {
            let fc2_b = cls
                .get("cls.fc2.b")
                .ok_or_else(|| bad(path, "classification checkpoint lacks `cls.fc2.b`"))?;
            let n_classes = fc2_b.numel();
            check_against(path, "classifier", &arch::classifier(n_classes), &cls)?;
            (Task::Classification { n_classes }, Some(cls))
        }
        other => return Err(bad(path, format!("unknown task `{other}`"))),
    };

    Ok(Transceiver {
        task,
        theta,
        phi,
        codebook,
        gamma,
        trained_epsilon,
        dataset_id,
        seed,
    })
}

/// The store must hold exactly the stack's parameters at their shapes.
fn check_against(
    path: &Path,
    what: &str,
    stack: &Stack,
    store: &ParamStore<f32>,
) -> Result<()> {
    let mut expected = 0usize;
    for (layer, spec) in &stack.layers {
        let Some((w_shape, b_shape)) = spec.param_shapes() else {
            continue;
        };
        for (name, shape) in [
            (stack.weight_name(layer), w_shape),
            (stack.bias_name(layer), b_shape),
        ] {
            expected += 1;
            let t = store
                .get(&name)
                .ok_or_else(|| bad(path, format!("{what} is missing tensor `{name}`")))?;
            if t.shape() != shape {
                return Err(bad(
                    path,
                    format!(
                        "{what} tensor `{name}` has shape {:?}, architecture wants {shape:?}",
                        t.shape()
                    ),
                ));
            }
        }
    }
    if store.len() != expected {
        let extra: Vec<&String> = store.names().collect();
        return Err(bad(
            path,
            format!("{what} holds {} tensors, expected {expected}: {extra:?}", store.len()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use semcom::transceiver::build_transceiver;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("semcom-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut trx: Transceiver<f32> =
            build_transceiver(Task::Classification { n_classes: 5 }, [1, 28, 28], 3).unwrap();
        trx.trained_epsilon = 0.1;
        trx.dataset_id = "glyphs".into();

        let a = tmp("rt_a.ckpt");
        save(&a, &trx).unwrap();
        let loaded = load(&a).unwrap();
        let b = tmp("rt_b.ckpt");
        save(&b, &loaded).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(loaded.task, trx.task);
        assert_eq!(loaded.trained_epsilon, trx.trained_epsilon);
        assert_eq!(loaded.dataset_id, trx.dataset_id);
        assert_eq!(loaded.seed, trx.seed);
    }

    #[test]
    fn truncated_file_is_rejected_with_position() {
        let trx: Transceiver<f32> =
            build_transceiver(Task::Reconstruction, [1, 28, 28], 1).unwrap();
        let p = tmp("trunc.ckpt");
        save(&p, &trx).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() / 2);
        std::fs::write(&p, &bytes).unwrap();
        let err = load(&p).unwrap_err();
        assert_eq!(err.category, crate::Category::Checkpoint);
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let p = tmp("magic.ckpt");
        std::fs::write(&p, b"NOTACKPTxxxxxxxxxxx").unwrap();
        let err = load(&p).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn foreign_tensor_name_is_rejected() {
        let trx: Transceiver<f32> =
            build_transceiver(Task::Reconstruction, [1, 28, 28], 1).unwrap();
        let p = tmp("foreign.ckpt");
        save(&p, &trx).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        // Rename enc.conv1.b -> xnc.conv1.b in place; the name set check trips.
        let needle = b"enc.conv1.b";
        let at = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        bytes[at] = b'x';
        std::fs::write(&p, &bytes).unwrap();
        assert!(load(&p).is_err());
    }

    #[test]
    fn task_and_head_presence_must_agree() {
        let trx: Transceiver<f32> =
            build_transceiver(Task::Classification { n_classes: 4 }, [1, 28, 28], 2).unwrap();
        let p = tmp("mismatch.ckpt");
        save(&p, &trx).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        // Flip the metadata task to "reconstruction" (same length) while the
        // cls.* tensors stay in the file.
        let needle = b"\x0e\x00classification";
        let at = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .expect("metadata task string present");
        let repl = b"\x0e\x00reconstruction";
        bytes[at..at + repl.len()].copy_from_slice(repl);
        std::fs::write(&p, &bytes).unwrap();
        let err = load(&p).unwrap_err();
        assert!(err.to_string().contains("classifier head"), "{err}");
    }
}
