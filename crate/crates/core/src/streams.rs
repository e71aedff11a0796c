//! Keyed random streams derived from one master seed.
//!
//! Every role gets its own ChaCha stream id under the master key, so the
//! stream for a role never depends on how many other streams exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PARTITION: u64 = 1;
const SYNTHETIC: u64 = 2;
const CHANNEL: u64 = 3;
const NOISE: u64 = 4;
const DEVICE_BASE: u64 = 1 << 32;

pub type Stream = ChaCha8Rng;

fn keyed(master: u64, stream: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// Stream factory for one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Mini-batch sampling for device `k`.
    pub fn device(&self, k: usize) -> Stream {
        keyed(self.master, DEVICE_BASE + k as u64)
    }

    pub fn channel(&self) -> Stream {
        keyed(self.master, CHANNEL)
    }

    pub fn noise(&self) -> Stream {
        keyed(self.master, NOISE)
    }

    pub fn partition(&self) -> Stream {
        keyed(self.master, PARTITION)
    }

    pub fn synthetic(&self) -> Stream {
        keyed(self.master, SYNTHETIC)
    }
}

/// Every stream an experiment with `devices` devices consumes.
#[derive(Debug, Clone)]
pub struct Streams {
    pub devices: Vec<Stream>,
    pub channel: Stream,
    pub noise: Stream,
    pub partition: Stream,
    pub synthetic: Stream,
}

pub fn seed_streams(master: u64, devices: usize) -> Streams {
    let seeds = SeedStreams::new(master);
    Streams {
        devices: (0..devices).map(|k| seeds.device(k)).collect(),
        channel: seeds.channel(),
        noise: seeds.noise(),
        partition: seeds.partition(),
        synthetic: seeds.synthetic(),
    }
}
