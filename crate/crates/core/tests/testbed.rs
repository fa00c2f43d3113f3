use proptest::prelude::*;
use stylespace::generator::{build_planted, GeneratorConfig};
use stylespace::testbed::{build_bank, segment, Classifier, ImageBank, LatentMode, SemanticMask};

fn planted_bank(n: usize, seed: u64, mode: LatentMode) -> ImageBank {
    let (g, _) = build_planted(GeneratorConfig::desk_planted(1, 0.0)).unwrap();
    let cls = Classifier::for_generator(&g).unwrap();
    build_bank(&g, &cls, n, seed, mode).unwrap()
}

#[test]
fn bank_roundtrips_through_disk() {
    let bank = planted_bank(64, 5, LatentMode::W);
    let dir = tempfile::tempdir().unwrap();
    bank.save(dir.path()).unwrap();
    let back = ImageBank::load(dir.path()).unwrap();
    assert_eq!(back.entries, bank.entries);
    assert_eq!(back.stats, bank.stats);
    assert_eq!(back.content_hash(), bank.content_hash());
}

#[test]
fn bank_is_a_function_of_its_seed() {
    let a = planted_bank(32, 9, LatentMode::WPlus);
    let b = planted_bank(32, 9, LatentMode::WPlus);
    let c = planted_bank(32, 10, LatentMode::WPlus);
    assert_eq!(a.content_hash(), b.content_hash());
    assert_ne!(a.content_hash(), c.content_hash());
}

#[test]
fn bank_prefixes_agree() {
    // entry i depends on (seed, i) only
    let small = planted_bank(8, 4, LatentMode::W);
    let big = planted_bank(20, 4, LatentMode::W);
    assert_eq!(small.entries[..], big.entries[..8]);
}

#[test]
fn truncated_bank_files_are_rejected() {
    let bank = planted_bank(16, 1, LatentMode::W);
    let dir = tempfile::tempdir().unwrap();
    bank.save(dir.path()).unwrap();
    let styles = std::fs::read(dir.path().join("styles.bin")).unwrap();
    std::fs::write(dir.path().join("styles.bin"), &styles[..styles.len() - 8]).unwrap();
    assert!(ImageBank::load(dir.path()).is_err());
    assert!(matches!(
        ImageBank::load(&dir.path().join("nowhere")),
        Err(stylespace::Error::Missing(_))
    ));
}

#[test]
fn calibrated_logits_are_centred() {
    let bank = planted_bank(1000, 2, LatentMode::W);
    for a in 0..bank.meta.attributes.len() {
        let col = bank.logit_column(a);
        let neg = col.iter().filter(|&&v| v < 0.0).count() as f64 / col.len() as f64;
        assert!((0.4..=0.6).contains(&neg), "attribute {a}: {neg}");
    }
}

proptest! {
    #[test]
    fn tile_masks_partition_evenly(grid in 1usize..4, r_pow in 0u32..4) {
        let tiles = grid * grid;
        let size = 32;
        let r = 2usize.pow(r_pow) * grid;
        prop_assume!(size % r == 0);
        let m: SemanticMask = segment(size, tiles, r).unwrap();
        prop_assert_eq!(m.labels.len(), r * r);
        let counts = m.counts();
        prop_assert!(counts.iter().all(|&c| c == r * r / tiles));
    }
}
