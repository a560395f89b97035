//! Sample a dataset, write it in the SMB1 format, read it back.
//!
//! cargo run --example generate_dataset -- [n_bags] [seed]

use milbench::datagen::{self, sample_dataset, Manifest};
use milbench::GenParams;

fn main() -> milbench::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let params = GenParams::default().with_seed(seed);
    let ds = sample_dataset(&params, n)?;
    let dir = std::env::temp_dir().join("milbench-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("dataset.smb");
    let checksum = datagen::write_dataset(&ds, &path)?;
    datagen::write_manifest(&Manifest::describe(&ds, checksum.clone()), Manifest::path_for(&path))?;

    println!("{} bags, {:.3} positive, sha256 {checksum}", ds.len(), ds.positive_fraction());
    for bag in ds.bags.iter().take(5) {
        let window = bag.window_start.map(|u| format!("window at {u}")).unwrap_or_else(|| "-".into());
        println!("  bag {:>3}: y={} S={:>2} {window}", bag.id, bag.label as u8, bag.num_instances());
    }

    let back = datagen::read_dataset(&path)?;
    assert_eq!(datagen::dataset_checksum(&back), checksum);
    println!("round trip ok: {}", path.display());
    Ok(())
}
