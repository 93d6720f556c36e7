//! Randomised simulation scenarios for safety testing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::client::OpStream;
use crate::config::{ClusterConfig, Mutation, MILLIS};
use crate::harness::faults::{random_schedule, Fault};
use crate::harness::sim::SimConfig;

pub const CONFLICT_RATES: [f64; 4] = [0.0, 0.02, 0.1, 1.0];

pub struct Scenario {
    pub config: SimConfig,
    pub workload: Vec<OpStream>,
    pub faults: Vec<Fault>,
}

/// A small cluster with lossy links and up to `f` crashes per role. `f`
/// alternates between 1 and 2 and the conflict rate cycles through
/// [`CONFLICT_RATES`] with the seed.
pub fn scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = 1 + (seed % 2) as usize;
    let rate = CONFLICT_RATES[(seed / 2 % 4) as usize];
    let mut cluster = ClusterConfig::minimal(f);
    cluster.leaders += rng.gen_range(0..=1);
    cluster.replicas += rng.gen_range(0..=1);
    let p = &mut cluster.protocol;
    p.thrifty = rng.gen_bool(0.3);
    p.compaction = rng.gen_bool(0.3);
    p.batch_size = *[1, 1, 3].choose(&mut rng).expect("non-empty");
    p.recovery_timeout = rng.gen_range(20..=100) * MILLIS;
    p.client_retry = 100 * MILLIS;

    let mut config = SimConfig::new(cluster.clone(), seed);
    config.delay = (100, rng.gen_range(200..=3_000));
    config.drop_prob = rng.gen_range(0.0..=0.2);
    config.dup_prob = rng.gen_range(0.0..=0.1);
    config.time_limit = 20_000 * MILLIS;

    let clients = rng.gen_range(3..=6);
    let each = rng.gen_range(5..=15);
    let workload = (0..clients).map(|c| OpStream::conflict(rate, Some(each), c, seed)).collect();
    let faults = random_schedule(&cluster, 200 * MILLIS, &mut rng);
    Scenario { config, workload, faults }
}

/// A scenario tuned so that `mutation` has a chance to show: contended
/// keys, reordering and slow recovery.
pub fn mutation_scenario(mutation: Mutation, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbad);
    let mut cluster = ClusterConfig::minimal(1);
    cluster.protocol.mutation = Some(mutation);
    cluster.protocol.client_retry = 100 * MILLIS;
    let mut config = SimConfig::new(cluster.clone(), seed);
    config.delay = (100, 5_000);
    config.time_limit = 10_000 * MILLIS;
    let mut faults = Vec::new();
    let rate = match mutation {
        Mutation::DepQuorumOne => 1.0,
        Mutation::AcceptorIgnoresPromises => {
            // force recovery to race the designated proposer
            config.cluster.protocol.recovery_timeout = rng.gen_range(1..=3) * MILLIS;
            config.delay = (100, 3_000);
            1.0
        }
        Mutation::ReplicaSkipsSccOrdering => 1.0,
        Mutation::ClientTableLargestIdOnly => {
            config.drop_prob = 0.1;
            0.5
        }
    };
    if mutation == Mutation::ClientTableLargestIdOnly {
        faults.extend(random_schedule(&config.cluster, 100 * MILLIS, &mut rng).into_iter().filter(|f| {
            !matches!(f, Fault::Crash { node, .. } if node.role == crate::message::Role::Replica)
        }));
    }
    let workload = (0..4).map(|c| OpStream::conflict(rate, Some(10), c, seed)).collect();
    Scenario { config, workload, faults }
}
