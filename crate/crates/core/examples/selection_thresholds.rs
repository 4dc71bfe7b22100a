//! Trains the reference classifier, calibrates the accuracy cut points on
//! clean data and selects subpopulations from a bugged population.

use fedgen::datasets::{apply_pixel_inversion, make_glyph_population};
use fedgen::models::DenseArch;
use fedgen::reports::accuracy_histogram;
use fedgen::selection::{
    calibrate_thresholds, pooled_accuracy, select_by_example, select_by_user, train_fixture_classifier, AccuracySide,
    ExampleKind, FixtureSpec,
};

fn main() -> fedgen::Result<()> {
    let clean = make_glyph_population(200, (20, 40), 4, 8, 1)?;
    let spec = FixtureSpec {
        arch: DenseArch {
            input: clean.pixels(),
            hidden: vec![32],
            output: clean.classes,
        },
        epochs: 5,
        batch_size: 16,
        lr: 0.1,
        seed: 3,
    };
    let clf = train_fixture_classifier(&clean, &spec)?;
    println!("pooled clean accuracy {:.3}", pooled_accuracy(&clf, &clean)?);

    let thresholds = calibrate_thresholds(&clean, &clf)?;
    println!("cut points: low <= {:.3}, high >= {:.3}", thresholds.low_cut, thresholds.high_cut);

    let (bugged, affected) = apply_pixel_inversion(&clean, 0.3, 9)?;
    let hist = accuracy_histogram(&bugged, &clf, 10)?;
    println!("per-user accuracy histogram: {:?}", hist.counts);

    for side in [AccuracySide::Low, AccuracySide::High] {
        let sub = select_by_user(&bugged, &clf, side, thresholds)?;
        let hit = sub.members.iter().filter(|id| affected.binary_search(id).is_ok()).count();
        println!("{side:?}: {} users, {hit} of them bugged", sub.len());
    }
    let mis = select_by_example(&bugged, &clf, ExampleKind::Misclassified, 5)?;
    let kept: usize = mis.filters.iter().flat_map(|f| f.values()).map(Vec::len).sum();
    println!("misclassified: {} users keep {kept} examples", mis.len());
    Ok(())
}
