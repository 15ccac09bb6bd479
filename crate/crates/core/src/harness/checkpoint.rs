//! Checkpoint files: a text header followed by little-endian binary64 arrays.
//!
//! ```text
//! QMIXDSA-CKPT v1
//! config <byte count>
//! <config TOML>
//! counter <name> <u64>            (repeated)
//! rng <name> <generator state>    (repeated)
//! env <depth> <current|-> <model state|-> <generator state> [<epoch>]
//! detector <best bits in hex|->
//! array <name> <d0>x<d1>...       (repeated, payload order)
//! payload <byte count> <sha256 of payload>
//! <payload>
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::detector::DegradationDetector;
use crate::agentnet::ActionSpace;
use crate::envsim::{observe, ChannelStateVector, EnvSnapshot};
use crate::error::{data, Error, Result};
use crate::ndmath::{AdamState, ParamStore};
use crate::qmixcore::{EpisodeRecord, QmixModel, ReplayBuffer, Trainer, TrainerRngs, TrainerState};
use crate::rng::RngSnapshot;

pub const CHECKPOINT_MAGIC: &str = "QMIXDSA-CKPT v1";
const RNG_NAMES: [&str; 4] = ["exploration", "tie_break", "batch_sampling", "weight_init"];

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub state: TrainerState,
    pub buffer: ReplayBuffer,
    pub rngs: [RngSnapshot; 4],
    pub env: EnvSnapshot,
    pub detector: DegradationDetector,
    /// Training episodes collected so far.
    pub episodes_seen: u64,
    /// Training-episode indices at which the degradation detector fired.
    pub resets: Vec<u64>,
}

impl Checkpoint {
    pub fn epoch(&self) -> u64 {
        self.state.epoch
    }

    /// Trainer with the saved parameters, optimizer, buffer and generators.
    pub fn trainer(&self) -> Result<Trainer> {
        Trainer::from_parts(
            self.config.trainer_config(),
            self.state.clone(),
            self.buffer.clone(),
            TrainerRngs::from_snapshots(&self.rngs),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{CHECKPOINT_MAGIC}\n");
        let cfg = self.config.to_toml();
        header += &format!("config {}\n{cfg}", cfg.len());
        let st = &self.state;
        for (name, v) in [
            ("global_slots", st.global_slots),
            ("train_steps", st.train_steps),
            ("epoch", st.epoch),
            ("adam_step", st.adam.step_count()),
            ("episodes_seen", self.episodes_seen),
        ] {
            header += &format!("counter {name} {v}\n");
        }
        for (name, snap) in RNG_NAMES.iter().zip(&self.rngs) {
            header += &format!("rng {name} {}\n", snap.encode());
        }
        let mut env = Some(&self.env);
        let mut depth = 0;
        while let Some(e) = env {
            let current = e
                .current
                .as_ref()
                .map_or("-".to_string(), |c| c.iter().map(|b| b.to_string()).collect());
            let model = if e.model_state.is_empty() {
                "-".to_string()
            } else {
                e.model_state.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
            };
            header += &format!("env {depth} {current} {model} {}", e.rng.encode());
            if let Some((epoch, _)) = &e.switched {
                header += &format!(" {epoch}");
            }
            header.push('\n');
            env = e.switched.as_ref().map(|(_, s)| s.as_ref());
            depth += 1;
        }
        let best = self.detector.best().map_or("-".to_string(), |b| format!("{:016x}", b.to_bits()));
        header += &format!("detector {best}\n");

        let mut payload = Vec::new();
        for (name, shape, values) in self.arrays() {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            header += &format!("array {name} {}\n", dims.join("x"));
            for v in values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        header += &format!("payload {} {}\n", payload.len(), sha256_hex(&payload));
        let mut out = header.into_bytes();
        out.extend_from_slice(&payload);
        out
    }

    fn arrays(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        let st = &self.state;
        for (prefix, store) in [("theta", &st.theta), ("target", &st.target)] {
            for (name, t) in store.iter() {
                out.push((format!("{prefix}/{name}"), t.shape().to_vec(), t.values().to_vec()));
            }
        }
        for ((name, t), s) in st.theta.iter().zip(st.adam.states()) {
            out.push((format!("adam.m/{name}"), t.shape().to_vec(), s.m.clone()));
            out.push((format!("adam.v/{name}"), t.shape().to_vec(), s.v.clone()));
        }
        let cfg = &self.config;
        let (e, t, k, n) = (self.buffer.len(), cfg.slots_per_episode, cfg.num_channels, cfg.num_users);
        let mut states = Vec::with_capacity(e * t * k);
        let mut actions = Vec::with_capacity(e * t * n);
        let mut rewards = Vec::with_capacity(e * t * n);
        for ep in self.buffer.iter() {
            states.extend(ep.states().iter().flat_map(|s| s.as_slice().iter().map(|&b| f64::from(b))));
            actions.extend(ep.actions().iter().flatten().map(|&a| a as f64));
            rewards.extend(ep.rewards().iter().flatten().copied());
        }
        out.push(("buffer/states".into(), vec![e, t, k], states));
        out.push(("buffer/actions".into(), vec![e, t, n], actions));
        out.push(("buffer/rewards".into(), vec![e, t, n], rewards));
        let recent: Vec<f64> = self.detector.recent().collect();
        out.push(("detector/recent".into(), vec![recent.len()], recent));
        out.push(("resets".into(), vec![self.resets.len()], self.resets.iter().map(|&r| r as f64).collect()));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut p = Parser { bytes, pos: 0 };
        if p.line()? != CHECKPOINT_MAGIC {
            return data("not a v1 checkpoint (bad version tag)");
        }
        let cfg_len: usize = parse_num(p.expect("config")?.first().copied(), "config length")?;
        let cfg_bytes = p.take(cfg_len, "config")?;
        let cfg_text = std::str::from_utf8(cfg_bytes).map_err(|_| Error::Data("checkpoint config is not UTF-8".into()))?;
        let config = ExperimentConfig::from_toml(cfg_text)
            .map_err(|e| Error::Data(format!("checkpoint config: {e}")))?;

        let mut counters = [0u64; 5];
        for (slot, name) in counters
            .iter_mut()
            .zip(["global_slots", "train_steps", "epoch", "adam_step", "episodes_seen"])
        {
            let f = p.expect("counter")?;
            if f.first() != Some(&name) {
                return data(format!("checkpoint: expected counter {name}"));
            }
            *slot = parse_num(f.get(1).copied(), name)?;
        }
        let mut rngs = Vec::with_capacity(4);
        for name in RNG_NAMES {
            let f = p.expect("rng")?;
            if f.first() != Some(&name) || f.len() != 2 {
                return data(format!("checkpoint: expected rng {name}"));
            }
            rngs.push(RngSnapshot::decode(f[1])?);
        }
        let env = parse_env(&mut p, 0)?;
        let f = p.expect("detector")?;
        let best = match f.first().copied() {
            Some("-") => None,
            Some(h) => Some(f64::from_bits(
                u64::from_str_radix(h, 16).map_err(|_| Error::Data("checkpoint: bad detector maximum".into()))?,
            )),
            None => return data("checkpoint: bad detector line"),
        };

        let mut decls = Vec::new();
        loop {
            let line = p.line()?;
            let f: Vec<&str> = line.split(' ').collect();
            match f.as_slice() {
                ["array", name, dims] => {
                    let shape = if dims.is_empty() {
                        vec![]
                    } else {
                        dims.split('x')
                            .map(|d| d.parse::<usize>().map_err(|_| Error::Data(format!("checkpoint array {name}: bad shape"))))
                            .collect::<Result<Vec<_>>>()?
                    };
                    decls.push((name.to_string(), shape));
                }
                ["payload", len, hash] => {
                    let len: usize = parse_num(Some(len), "payload length")?;
                    let payload = p.take(len, "payload")?;
                    if p.pos != bytes.len() {
                        return data("checkpoint: trailing bytes after payload");
                    }
                    if sha256_hex(payload) != *hash {
                        return data("checkpoint: payload checksum mismatch (file corrupt)");
                    }
                    let arrays = split_payload(&decls, payload)?;
                    return assemble(config, counters, rngs, env, best, arrays);
                }
                _ => return data(format!("checkpoint: unexpected header line {line:?}")),
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        // write-then-rename so a crash never leaves a half-written checkpoint behind
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(format!("cannot write {}", tmp.display()), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("cannot write {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_num<T: std::str::FromStr>(s: Option<&str>, what: &str) -> Result<T> {
    s.and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Data(format!("checkpoint: bad {what}")))
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return data("checkpoint truncated in header");
        };
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Data("checkpoint header is not UTF-8".into()))
    }

    fn expect(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.line()?;
        let mut f = line.split(' ');
        if f.next() != Some(key) {
            return data(format!("checkpoint: expected {key} line, found {line:?}"));
        }
        Ok(f.collect())
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return data(format!("checkpoint truncated in {what}"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

fn parse_env(p: &mut Parser<'_>, depth: usize) -> Result<EnvSnapshot> {
    let f = p.expect("env")?;
    if f.len() < 4 || f[0] != depth.to_string() {
        return data("checkpoint: bad env line");
    }
    let current = match f[1] {
        "-" => None,
        s => Some(
            s.bytes()
                .map(|b| match b {
                    b'0' | b'1' => Ok(b - b'0'),
                    _ => data("checkpoint: bad env channel state"),
                })
                .collect::<Result<Vec<u8>>>()?,
        ),
    };
    let model_state = match f[2] {
        "-" => vec![],
        s => s.split(',').map(|v| parse_num(Some(v), "env model state")).collect::<Result<_>>()?,
    };
    let rng = RngSnapshot::decode(f[3])?;
    let switched = match f.get(4) {
        Some(epoch) => Some((parse_num(Some(epoch), "env epoch")?, Box::new(parse_env(p, depth + 1)?))),
        None => None,
    };
    Ok(EnvSnapshot {
        current,
        model_state,
        rng,
        switched,
    })
}

struct Arrays(Vec<(String, Vec<usize>, Vec<f64>)>);

impl Arrays {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let Some(i) = self.0.iter().position(|(n, _, _)| n == name) else {
            return data(format!("checkpoint is missing array {name}"));
        };
        let (_, s, v) = self.0.swap_remove(i);
        if s != shape {
            return data(format!("checkpoint array {name} has shape {s:?}, expected {shape:?}"));
        }
        Ok(v)
    }

    fn take_vector(&mut self, name: &str) -> Result<Vec<f64>> {
        let len = match self.0.iter().find(|(n, _, _)| n == name) {
            Some((_, s, _)) if s.len() == 1 => s[0],
            Some(_) => return data(format!("checkpoint array {name} must be one-dimensional")),
            None => return data(format!("checkpoint is missing array {name}")),
        };
        self.take(name, &[len])
    }
}

fn split_payload(decls: &[(String, Vec<usize>)], payload: &[u8]) -> Result<Arrays> {
    let mut out = Vec::with_capacity(decls.len());
    let mut pos = 0;
    for (name, shape) in decls {
        let n: usize = shape.iter().product();
        let end = pos + 8 * n;
        if end > payload.len() {
            return data(format!("checkpoint array {name} extends past the payload"));
        }
        let values: Vec<f64> = payload[pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        pos = end;
        out.push((name.clone(), shape.clone(), values));
    }
    if pos != payload.len() {
        return data("checkpoint payload is longer than its declared arrays");
    }
    Ok(Arrays(out))
}

fn fill_store(template: &ParamStore, prefix: &str, arrays: &mut Arrays) -> Result<ParamStore> {
    let mut store = template.clone();
    for id in template.ids() {
        let name = format!("{prefix}/{}", template.name(id));
        let values = arrays.take(&name, template.get(id).shape())?;
        store
            .set_values(id, &values)
            .map_err(|e| Error::Data(format!("checkpoint array {name}: {e}")))?;
    }
    Ok(store)
}

fn to_index(v: f64, bound: usize, name: &str) -> Result<usize> {
    if v.fract() != 0.0 || v < 0.0 || v >= bound as f64 {
        return data(format!("checkpoint array {name} holds an invalid entry {v}"));
    }
    Ok(v as usize)
}

fn assemble(
    config: ExperimentConfig,
    counters: [u64; 5],
    rngs: Vec<RngSnapshot>,
    env: EnvSnapshot,
    best: Option<f64>,
    mut arrays: Arrays,
) -> Result<Checkpoint> {
    let [global_slots, train_steps, epoch, adam_step, episodes_seen] = counters;
    let fresh = Trainer::new(config.trainer_config())?;
    let template = fresh.theta();
    let theta = fill_store(template, "theta", &mut arrays)?;
    let target = fill_store(template, "target", &mut arrays)?;
    let mut moments = Vec::new();
    for id in template.ids() {
        let shape = template.get(id).shape();
        let name = template.name(id);
        moments.push(AdamState {
            m: arrays.take(&format!("adam.m/{name}"), shape)?,
            v: arrays.take(&format!("adam.v/{name}"), shape)?,
        });
    }
    let mut adam = fresh.state().adam.clone();
    adam.restore(adam_step, moments)
        .map_err(|e| Error::Data(format!("checkpoint optimizer state: {e}")))?;

    let buffer = restore_buffer(&config, fresh.model(), &mut arrays)?;
    let recent = arrays.take_vector("detector/recent")?;
    let resets = arrays.take_vector("resets")?;
    if let Some((name, _, _)) = arrays.0.first() {
        return data(format!("checkpoint has unexpected array {name}"));
    }
    let detector = DegradationDetector::from_parts(config.degradation_window, config.degradation_ratio, recent, best);
    Ok(Checkpoint {
        state: TrainerState {
            theta,
            target,
            adam,
            global_slots,
            train_steps,
            epoch,
        },
        buffer,
        rngs: rngs.try_into().expect("four generators parsed"),
        env,
        detector,
        episodes_seen,
        resets: resets.into_iter().map(|r| r as u64).collect(),
        config,
    })
}

fn restore_buffer(config: &ExperimentConfig, model: &QmixModel, arrays: &mut Arrays) -> Result<ReplayBuffer> {
    let (t, k, n) = (config.slots_per_episode, config.num_channels, config.num_users);
    let e = match arrays.0.iter().find(|(name, _, _)| name == "buffer/states") {
        Some((_, s, _)) if !s.is_empty() => s[0],
        _ => return data("checkpoint is missing array buffer/states"),
    };
    if e > config.buffer_capacity {
        return data("checkpoint array buffer/states holds more episodes than the buffer capacity");
    }
    let states = arrays.take("buffer/states", &[e, t, k])?;
    let actions = arrays.take("buffer/actions", &[e, t, n])?;
    let rewards = arrays.take("buffer/rewards", &[e, t, n])?;
    let space: &ActionSpace = model.space();
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    for i in 0..e {
        let mut ep_states = Vec::with_capacity(t);
        let mut ep_actions = Vec::with_capacity(t);
        let mut ep_obs = Vec::with_capacity(t);
        let mut ep_rewards = Vec::with_capacity(t);
        for slot in 0..t {
            let row = &states[(i * t + slot) * k..(i * t + slot + 1) * k];
            let s = ChannelStateVector::new(
                row.iter().map(|&v| to_index(v, 2, "buffer/states").map(|b| b as u8)).collect::<Result<_>>()?,
            )?;
            let acts: Vec<usize> = actions[(i * t + slot) * n..(i * t + slot + 1) * n]
                .iter()
                .map(|&a| to_index(a, space.count(), "buffer/actions"))
                .collect::<Result<_>>()?;
            let obs = acts
                .iter()
                .map(|&a| observe(&s, space.unrank(a)?))
                .collect::<Result<Vec<_>>>()?;
            ep_rewards.push(rewards[(i * t + slot) * n..(i * t + slot + 1) * n].to_vec());
            ep_states.push(s);
            ep_actions.push(acts);
            ep_obs.push(obs);
        }
        let ep = EpisodeRecord::new(ep_states, ep_actions, ep_obs, ep_rewards)
            .map_err(|e| Error::Data(format!("checkpoint array buffer/rewards: {e}")))?;
        buffer.store_episode(ep);
    }
    Ok(buffer)
}
