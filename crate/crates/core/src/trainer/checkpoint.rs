//! Binary trainer checkpoint: everything needed to continue a run
//! bit-for-bit (config, network, optimizer, replay memory, ReF-ER state,
//! random stream position and counters).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Config, Trainer};
use crate::codec::{CodecError, Reader, Writer};
use crate::learner::ReferState;
use crate::net::{NetCheckpoint, Trace};
use crate::replay::ReplayMemory;

const MAGIC: &[u8] = b"RFTC";
const VERSION: u32 = 1;

pub struct TrainerCheckpoint;

impl TrainerCheckpoint {
    pub fn encode(t: &Trainer) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.str(&t.cfg.to_text());
        NetCheckpoint { net: t.net.clone(), adam: t.adam.clone() }.encode_into(&mut w);
        t.memory.encode_into(&mut w);
        w.f64(t.refer.beta);
        w.f64(t.refer.c_max);
        w.f64(t.refer.f_star);
        w.f64(t.refer.eta_beta);
        w.bytes(&t.rng.get_seed());
        w.u64(t.rng.get_stream());
        w.bytes(&t.rng.get_word_pos().to_le_bytes());
        w.u64(t.episodes);
        w.u64(t.warmup_episodes);
        w.u64(t.train_steps);
        w.u64(t.skipped_steps);
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Trainer, CodecError> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let cfg = Config::parse(&r.str()?).map_err(|e| CodecError::Invalid(e.to_string()))?;
        let mut t = Trainer::new(cfg).map_err(|e| CodecError::Invalid(e.to_string()))?;
        let nc = NetCheckpoint::decode_from(&mut r)?;
        if nc.net.layout() != t.net.layout() {
            return Err(CodecError::Invalid("network layout does not match the configured environment".into()));
        }
        let space = t.env.action_space();
        let memory = ReplayMemory::decode_from(&mut r, &space)?;
        if memory.n_agents() != t.env.n_agents() || memory.capacity() != t.cfg.capacity {
            return Err(CodecError::Invalid("replay memory does not match the configuration".into()));
        }
        let refer = ReferState { beta: r.f64()?, c_max: r.f64()?, f_star: r.f64()?, eta_beta: r.f64()? };
        if !(0.0..=1.0).contains(&refer.beta) || !(refer.c_max > 1.0) {
            return Err(CodecError::Invalid("ReF-ER state out of range".into()));
        }
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        t.episodes = r.u64()?;
        t.warmup_episodes = r.u64()?;
        t.train_steps = r.u64()?;
        t.skipped_steps = r.u64()?;
        r.finish()?;
        t.net = nc.net;
        t.adam = nc.adam;
        t.memory = memory;
        t.refer = refer;
        t.rng = rng;
        t.traces = vec![Trace::default(); t.env.n_agents()];
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::Variant;
    use crate::trainer::RunOptions;

    fn cfg() -> Config {
        Config {
            capacity: 1000,
            min_experiences_before_training: 150,
            batch: 4,
            hidden_widths: vec![6],
            env: "coop-targets:2".parse().unwrap(),
            variant: Variant::FdCo,
            max_episodes: 4,
            grad_steps_per_episode: 3,
            ..Config::default()
        }
    }

    #[test]
    fn roundtrip_and_continue_identically() {
        let mut a = Trainer::new(cfg()).unwrap();
        a.run(&RunOptions { stop_at: Some(2), ..Default::default() }, |_| {}).unwrap();
        let bytes = TrainerCheckpoint::encode(&a);
        let mut b = TrainerCheckpoint::decode(&bytes).unwrap();
        assert_eq!(TrainerCheckpoint::encode(&b), bytes);
        let (mut ma, mut mb) = (Vec::new(), Vec::new());
        a.run(&RunOptions::default(), |m| ma.push(m.clone())).unwrap();
        b.run(&RunOptions::default(), |m| mb.push(m.clone())).unwrap();
        assert_eq!(ma.len(), 2);
        assert!(ma.iter().zip(&mb).all(|(x, y)| x.same_run_as(y)));
        assert_eq!(a.net().params(), b.net().params());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let t = Trainer::new(cfg()).unwrap();
        let bytes = TrainerCheckpoint::encode(&t);
        assert!(TrainerCheckpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(TrainerCheckpoint::decode(b"RFTCxxxx").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(TrainerCheckpoint::decode(&bad).is_err());
    }
}
