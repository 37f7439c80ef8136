//! Derivation of independent seeds from one master seed.
//!
//! Each derived seed is a SplitMix64 chain over the master seed, a stream tag
//! and the identifying components of the run. Changing any component moves
//! every derived value; repeating them reproduces it exactly.

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over bytes, for folding names into seeds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xCBF2_9CE4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Sampling,
    Init,
    Order,
    Corruption,
    Data,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Sampling => 1,
            Stream::Init => 2,
            Stream::Order => 3,
            Stream::Corruption => 4,
            Stream::Data => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSplitter {
    master: u64,
}

impl SeedSplitter {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn derive(&self, stream: Stream, components: &[u64]) -> u64 {
        let mut h = splitmix64(self.master ^ splitmix64(stream.tag()));
        for &c in components {
            h = splitmix64(h ^ c);
        }
        h
    }

    /// Seed for one grid run. The objective is deliberately not a component,
    /// so every objective sees the same split and initialization.
    pub fn run_seed(&self, stream: Stream, dataset: &str, train_size: usize, seed_index: usize) -> u64 {
        self.derive(stream, &[fnv1a(dataset.as_bytes()), train_size as u64, seed_index as u64])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(0x9E37_79B9_7F4A_7C15), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn streams_and_components_separate() {
        let s = SeedSplitter::new(7);
        let a = s.run_seed(Stream::Sampling, "syn", 16, 0);
        assert_eq!(a, s.run_seed(Stream::Sampling, "syn", 16, 0));
        assert_ne!(a, s.run_seed(Stream::Init, "syn", 16, 0));
        assert_ne!(a, s.run_seed(Stream::Sampling, "syn", 16, 1));
        assert_ne!(a, s.run_seed(Stream::Sampling, "syn", 32, 0));
        assert_ne!(a, s.run_seed(Stream::Sampling, "other", 16, 0));
        assert_ne!(a, SeedSplitter::new(8).run_seed(Stream::Sampling, "syn", 16, 0));
    }
}
