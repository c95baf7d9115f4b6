//! Fixtures shared by the benchmarks under `benches/`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smq_core::channel::{sample_channel, ChannelMatrix, ChannelStatistics};
use smq_core::{ServiceGroups, SystemConfig};

/// A desk-scale beamforming problem with `streams` random multicast groups.
pub fn instance(streams: usize, seed: u64) -> (SystemConfig, ServiceGroups, ChannelMatrix) {
    let config = SystemConfig { streams, ..SystemConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = ServiceGroups::random(config.users, streams, &mut rng).expect("valid group sizes");
    let stats = ChannelStatistics::new(config.gain_vec()).expect("positive gains");
    let h = sample_channel(&stats, config.antennas, &mut rng);
    (config, groups, h)
}
