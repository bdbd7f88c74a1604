use adaptseg::data::{generate_domain, write_dataset, Domain, ShiftParams, MANIFEST};

use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::fsutil::prepare_dir;

/// First scene index of each split; the splits never share a scene.
pub const SOURCE_FIRST: u64 = 0;
pub const TARGET_TRAIN_FIRST: u64 = 1_000_000;
pub const TARGET_TEST_FIRST: u64 = 2_000_000;

const DATASET_FILES: [&str; 3] = ["images", "labels", MANIFEST];

pub fn gen_data(c: &ExperimentConfig, force: bool) -> CliResult<()> {
    prepare_dir(&c.source_dir, &DATASET_FILES, force)?;
    prepare_dir(&c.target_dir, &["train", "test"], force)?;
    let splits = [
        (&c.source_dir, Domain::Source, SOURCE_FIRST, c.source_count, true),
        (&c.target_train_dir(), Domain::Target, TARGET_TRAIN_FIRST, c.target_train_count, false),
        (&c.target_test_dir(), Domain::Target, TARGET_TEST_FIRST, c.target_test_count, true),
    ];
    for (dir, domain, first, count, labeled) in splits {
        let shift = if domain == Domain::Source { ShiftParams::identity() } else { c.shift.clone() };
        let ds = generate_domain(&c.scene, &shift, domain, first, count, labeled)?;
        write_dataset(&ds, dir)?;
        eprintln!("wrote {count} {domain} samples to {}", dir.display());
    }
    Ok(())
}
