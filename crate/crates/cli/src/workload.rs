//! Closed-loop client workloads over 8-byte keys and values.

use bpaxos::client::OpStream;
use rand::Rng;

use crate::bench::BenchConfig;

/// One op stream per client. A fraction `conflict_rate` of draws are writes
/// to the shared hot key; the rest read a key no other draw touches.
pub fn generate_workload<R: Rng>(cfg: &BenchConfig, rng: &mut R) -> Vec<OpStream> {
    (0..cfg.clients as u32)
        .map(|c| OpStream::conflict(cfg.conflict_rate, cfg.commands_per_client, c, rng.gen()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use bpaxos::client::HOT_KEY;
    use bpaxos::{conflicts, CmdOrNoop, Command, ClientId, KvOp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn drain(cfg: &BenchConfig, seed: u64) -> Vec<KvOp> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for mut s in generate_workload(cfg, &mut rng) {
            while let Some(op) = s.next_op() {
                out.push(op);
            }
        }
        out
    }

    fn cfg(clients: usize, each: u64, rate: f64) -> BenchConfig {
        BenchConfig { clients, commands_per_client: Some(each), conflict_rate: rate, ..BenchConfig::default() }
    }

    fn as_cmd(op: &KvOp) -> CmdOrNoop {
        CmdOrNoop::Command(Command::new(ClientId(0), 1, op.clone()))
    }

    #[test]
    fn no_conflicts_at_rate_zero() {
        let ops = drain(&cfg(20, 50, 0.0), 1);
        assert_eq!(ops.len(), 1000);
        let cmds: Vec<CmdOrNoop> = ops.iter().map(as_cmd).collect();
        for (i, a) in cmds.iter().enumerate() {
            for b in &cmds[i + 1..] {
                assert!(!conflicts(a, b));
            }
        }
    }

    #[test]
    fn rate_one_writes_hot_key_only() {
        let ops = drain(&cfg(5, 40, 1.0), 2);
        assert!(ops.iter().all(|op| op.is_write() && op.key() == HOT_KEY));
    }

    #[test]
    fn keys_and_values_are_eight_bytes() {
        for op in drain(&cfg(4, 100, 0.5), 3) {
            assert_eq!(op.key().len(), 8);
            if let KvOp::Set { value, .. } = op {
                assert_eq!(value.len(), 8);
            }
        }
    }

    #[test]
    fn hot_fraction_concentrates() {
        let ops = drain(&cfg(10, 1_000, 0.02), 4);
        let n = ops.len() as f64;
        let hot = ops.iter().filter(|op| op.is_write()).count() as f64;
        let sigma = (n * 0.02 * 0.98).sqrt();
        assert!((hot - n * 0.02).abs() <= 3.0 * sigma, "{hot} hot writes of {n}");
    }
}
