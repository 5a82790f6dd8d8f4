//! Binary checkpoint container: "ADKN" magic, a format version, the model
//! configuration, and a sequence of named tensor records with 32-bit
//! little-endian payloads — bit-exact across platforms. Model-only
//! checkpoints hold just the parameters; training checkpoints add optimizer
//! moments, schedule state, counters, and the RNG position as further
//! records (exact integers ride in the 32-bit slots as raw bit patterns).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{build, ModelConfig, ModelParams};
use crate::optim::{AdamState, PlateauSchedule};
use crate::tensor::{Tensor, MAX_RANK};
use crate::train::TrainState;

pub const MAGIC: [u8; 4] = *b"ADKN";
pub const VERSION: u32 = 1;

/// Caps applied when reading untrusted files.
const MAX_NAME_LEN: usize = 1 << 16;
const MAX_RECORDS: u64 = 1 << 20;
const MAX_ELEMENTS: usize = 1 << 31;

#[derive(Debug, Clone, PartialEq)]
struct Record {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Record {
    fn tensor(name: &str, t: &Tensor<f32>) -> Record {
        Record {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    fn words(name: &str, words: Vec<f32>) -> Record {
        Record {
            shape: vec![words.len()],
            name: name.to_string(),
            data: words,
        }
    }

    fn expect_len(&self, n: usize) -> Result<&[f32]> {
        if self.data.len() != n {
            return Err(Error::Checkpoint(format!(
                "record '{}' holds {} elements, expected {n}",
                self.name,
                self.data.len()
            )));
        }
        Ok(&self.data)
    }
}

// Exact integers are stored as raw bit patterns inside the 32-bit payload
// slots; to/from_bits round-trips every pattern unchanged.
fn u64_words(x: u64) -> Vec<f32> {
    vec![f32::from_bits(x as u32), f32::from_bits((x >> 32) as u32)]
}

fn words_u64(w: &[f32]) -> u64 {
    (w[0].to_bits() as u64) | ((w[1].to_bits() as u64) << 32)
}

fn u128_words(x: u128) -> Vec<f32> {
    (0..4)
        .map(|i| f32::from_bits((x >> (32 * i)) as u32))
        .collect()
}

fn words_u128(w: &[f32]) -> u128 {
    w.iter()
        .enumerate()
        .fold(0u128, |acc, (i, v)| acc | ((v.to_bits() as u128) << (32 * i)))
}

// ---- raw container I/O ----

fn write_container(path: &Path, config: &ModelConfig, records: &[Record]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut w = BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [
            config.scale,
            config.channels,
            config.feature_width,
            config.kernel_size,
            config.backbone_blocks,
            config.trunk_blocks,
            config.branch_blocks,
        ] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&config.variant.tag().to_le_bytes())?;
        w.write_all(&config.norm_mode.tag().to_le_bytes())?;
        w.write_all(&config.seed.to_le_bytes())?;
        w.write_all(&(records.len() as u64).to_le_bytes())?;
        for rec in records {
            w.write_all(&(rec.name.len() as u32).to_le_bytes())?;
            w.write_all(rec.name.as_bytes())?;
            w.write_all(&(rec.shape.len() as u32).to_le_bytes())?;
            for &e in &rec.shape {
                w.write_all(&(e as u64).to_le_bytes())?;
            }
            for &v in &rec.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path.to_path_buf(), e))
}

struct Reader<'p> {
    r: BufReader<File>,
    path: &'p Path,
}

impl<'p> Reader<'p> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.r.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Checkpoint(format!("{}: truncated checkpoint file", self.path.display()))
            } else {
                Error::io(self.path.to_path_buf(), e)
            }
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }

    fn fail(&self, msg: String) -> Error {
        Error::Checkpoint(format!("{}: {msg}", self.path.display()))
    }
}

fn read_container(path: &Path) -> Result<(ModelConfig, Vec<Record>)> {
    let file = File::open(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut r = Reader {
        r: BufReader::new(file),
        path,
    };
    let magic: [u8; 4] = r.bytes()?;
    if magic != MAGIC {
        return Err(r.fail("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let scale = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let feature_width = r.u32()? as usize;
    let kernel_size = r.u32()? as usize;
    let backbone_blocks = r.u32()? as usize;
    let trunk_blocks = r.u32()? as usize;
    let branch_blocks = r.u32()? as usize;
    let variant = crate::model::Variant::from_tag(r.u32()?)?;
    let norm_mode = crate::model::NormMode::from_tag(r.u32()?)?;
    let seed = r.u64()?;
    let config = ModelConfig {
        scale,
        channels,
        feature_width,
        kernel_size,
        backbone_blocks,
        trunk_blocks,
        branch_blocks,
        variant,
        norm_mode,
        seed,
    };
    let count = r.u64()?;
    if count > MAX_RECORDS {
        return Err(r.fail(format!("implausible record count {count}")));
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        if name_len > MAX_NAME_LEN {
            return Err(r.fail(format!("implausible record name length {name_len}")));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.r.read_exact(&mut name_bytes)
            .map_err(|_| r.fail("truncated checkpoint file".into()))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| r.fail("record name is not valid UTF-8".into()))?;
        let rank = r.u32()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(r.fail(format!("record '{name}' has invalid rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut elements: usize = 1;
        for _ in 0..rank {
            let e = r.u64()? as usize;
            elements = elements
                .checked_mul(e)
                .filter(|&n| n <= MAX_ELEMENTS)
                .ok_or_else(|| r.fail(format!("record '{name}' has implausible extents")))?;
            shape.push(e);
        }
        let mut data = Vec::with_capacity(elements);
        for _ in 0..elements {
            data.push(r.f32()?);
        }
        records.push(Record { name, shape, data });
    }
    let mut probe = [0u8; 1];
    match r.r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => return Err(r.fail("trailing data after the last record".into())),
        Err(e) => return Err(Error::io(path.to_path_buf(), e)),
    }
    Ok((config, records))
}

fn index_records(path: &Path, records: Vec<Record>) -> Result<std::collections::BTreeMap<String, Record>> {
    let mut map = std::collections::BTreeMap::new();
    for rec in records {
        let name = rec.name.clone();
        if map.insert(name.clone(), rec).is_some() {
            return Err(Error::Checkpoint(format!(
                "{}: duplicate record '{name}'",
                path.display()
            )));
        }
    }
    Ok(map)
}

fn take_tensor(
    path: &Path,
    map: &mut std::collections::BTreeMap<String, Record>,
    name: &str,
    shape: &[usize],
) -> Result<Tensor<f32>> {
    let rec = map.remove(name).ok_or_else(|| {
        Error::Checkpoint(format!("{}: missing record '{name}'", path.display()))
    })?;
    if rec.shape != shape {
        return Err(Error::Checkpoint(format!(
            "{}: record '{name}' has shape {:?}, expected {shape:?}",
            path.display(),
            rec.shape
        )));
    }
    Tensor::new(rec.shape, rec.data)
}

fn fill_params(
    path: &Path,
    params: &mut ModelParams<f32>,
    map: &mut std::collections::BTreeMap<String, Record>,
) -> Result<()> {
    for (name, t) in params.named_params_mut() {
        let shape = t.shape().to_vec();
        let loaded = take_tensor(path, map, &name, &shape)?;
        t.data_mut().copy_from_slice(loaded.data());
    }
    Ok(())
}

// ---- model checkpoints ----

/// Write a model-only checkpoint: configuration plus parameter records.
pub fn save_model(params: &ModelParams<f32>, path: &Path) -> Result<()> {
    let records: Vec<Record> = params
        .named_params()
        .into_iter()
        .map(|(name, t)| Record::tensor(&name, t))
        .collect();
    write_container(path, params.config(), &records)
}

/// Load model parameters from a model-only or training checkpoint.
pub fn load_model(path: &Path) -> Result<ModelParams<f32>> {
    let (config, records) = read_container(path)?;
    let mut params = build::<f32>(&config)?;
    let mut map = index_records(path, records)?;
    fill_params(path, &mut params, &mut map)?;
    for name in map.keys() {
        if !(name.starts_with("adam.") || name.starts_with("state.")) {
            return Err(Error::Checkpoint(format!(
                "{}: unexpected record '{name}'",
                path.display()
            )));
        }
    }
    Ok(params)
}

// ---- training checkpoints ----

/// Write a full training checkpoint: parameters, Adam moments, schedule,
/// counters, and the RNG position.
pub fn save_train_state(state: &TrainState, path: &Path) -> Result<()> {
    let named = state.params.named_params();
    let mut records: Vec<Record> = named
        .iter()
        .map(|(name, t)| Record::tensor(name, t))
        .collect();
    let (m, v) = state.opt.moments();
    for ((name, _), moment) in named.iter().zip(m) {
        records.push(Record::tensor(&format!("adam.m.{name}"), moment));
    }
    for ((name, _), moment) in named.iter().zip(v) {
        records.push(Record::tensor(&format!("adam.v.{name}"), moment));
    }
    records.push(Record::words("state.adam_t", u64_words(state.opt.step_count())));
    records.push(Record::words("state.lr", vec![state.schedule.lr()]));
    let (best_flag, best_value) = match state.schedule.best() {
        Some(b) => (1.0f32, b),
        None => (0.0f32, 0.0f32),
    };
    records.push(Record::words(
        "state.sched",
        vec![
            best_flag,
            best_value,
            f32::from_bits(state.schedule.wait()),
            f32::from_bits(state.schedule.patience()),
            state.schedule.factor(),
            state.schedule.min_lr(),
        ],
    ));
    records.push(Record::words("state.epoch", u64_words(state.epoch)));
    records.push(Record::words("state.step", u64_words(state.step)));
    let seed_words = state
        .rng
        .get_seed()
        .chunks_exact(4)
        .map(|c| f32::from_bits(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    records.push(Record::words("state.rng_seed", seed_words));
    records.push(Record::words(
        "state.rng_word_pos",
        u128_words(state.rng.get_word_pos()),
    ));
    records.push(Record::words(
        "state.rng_stream",
        u64_words(state.rng.get_stream()),
    ));
    write_container(path, state.params.config(), &records)
}

/// Restore a full training state; resumption is bit-exact.
pub fn load_train_state(path: &Path) -> Result<TrainState> {
    let (config, records) = read_container(path)?;
    let mut params = build::<f32>(&config)?;
    let mut map = index_records(path, records)?;
    fill_params(path, &mut params, &mut map)?;

    let named: Vec<(String, Vec<usize>)> = params
        .named_params()
        .into_iter()
        .map(|(name, t)| (name, t.shape().to_vec()))
        .collect();
    let mut m = Vec::with_capacity(named.len());
    let mut v = Vec::with_capacity(named.len());
    for (name, shape) in &named {
        m.push(take_tensor(path, &mut map, &format!("adam.m.{name}"), shape)?);
        v.push(take_tensor(path, &mut map, &format!("adam.v.{name}"), shape)?);
    }
    let mut scalar = |name: &str, n: usize| -> Result<Vec<f32>> {
        let rec = map
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing record '{name}'", path.display())))?;
        rec.expect_len(n).map(|w| w.to_vec())
    };
    let t = words_u64(&scalar("state.adam_t", 2)?);
    let lr = scalar("state.lr", 1)?[0];
    let sched = scalar("state.sched", 6)?;
    let best = if sched[0] == 1.0 { Some(sched[1]) } else { None };
    let (wait, patience) = (sched[2].to_bits(), sched[3].to_bits());
    let (factor, min_lr) = (sched[4], sched[5]);
    let epoch = words_u64(&scalar("state.epoch", 2)?);
    let step = words_u64(&scalar("state.step", 2)?);
    let seed_words = scalar("state.rng_seed", 8)?;
    let mut seed = [0u8; 32];
    for (chunk, w) in seed.chunks_exact_mut(4).zip(&seed_words) {
        chunk.copy_from_slice(&w.to_bits().to_le_bytes());
    }
    let word_pos = words_u128(&scalar("state.rng_word_pos", 4)?);
    let stream = words_u64(&scalar("state.rng_stream", 2)?);
    if let Some(name) = map.keys().next() {
        return Err(Error::Checkpoint(format!(
            "{}: unexpected record '{name}'",
            path.display()
        )));
    }

    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(TrainState {
        params,
        opt: AdamState::from_parts(m, v, t)?,
        schedule: PlateauSchedule::from_parts(lr, best, wait, patience, factor, min_lr),
        epoch,
        step,
        rng,
    })
}
