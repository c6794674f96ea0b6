//! Persistence: the tensor container used for datasets, checkpoints and
//! samples, plus the flat key=value run configuration.

mod config;
mod container;

pub use config::{ConfigError, RunConfig, KEYS};
pub use container::{
    decode_container, encode_container, read_container, write_container, ContainerError,
    CONTAINER_MAGIC, CONTAINER_VERSION,
};

/// 64-bit FNV-1a.
#[derive(Clone, Debug)]
pub struct Fnv64(u64);

impl Fnv64 {
    pub fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = Fnv64::new();
    h.write(bytes);
    h.finish()
}
