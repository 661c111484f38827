//! Turning block rewards into per-entity credit: a split coinbase, a raw
//! public-key output and a builder-paid block.

use decentrality::attribution::{attribute_proportional, resolve_pbs_proposer, BuilderLabels, BuilderTransfer};
use decentrality::RewardPayout;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let coinbase = RewardPayout::new("800000")
        .pay("bc1q-pool-a", 4.5)
        .pay("bc1q-pool-b", 1.5)
        .pay_pubkey(format!("04{}", "ab".repeat(64)), 0.25);
    println!("block {}:", coinbase.block_id);
    for (entity, weight) in attribute_proportional(&coinbase)? {
        println!("  {entity:<12} {weight:.4}");
    }

    let labels = BuilderLabels::parse("# builders\n0xbeaver\n0xtitan\n".as_bytes())?;
    let blocks = [
        BuilderTransfer::new("17000000", "0xbeaver").with_transfer("0xlido-7", 0.08),
        BuilderTransfer::new("17000001", "0xsolo-validator"),
        BuilderTransfer::new("17000002", "0xtitan")
            .with_transfer("0xrefund", 0.001)
            .with_transfer("0xcoinbase-3", 0.05),
        BuilderTransfer::new("17000003", "0xtitan"),
    ];
    for t in &blocks {
        println!("block {} proposer {}", t.block_id, resolve_pbs_proposer(t, &labels)?);
    }
    Ok(())
}
