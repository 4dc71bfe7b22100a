//! Writes image and text populations to the on-disk container format and
//! reads them back.

use fedgen::datasets::{export_population, load_population, make_glyph_population, make_text_population, Population};

fn main() -> fedgen::Result<()> {
    let root = std::env::temp_dir().join(format!("fedgen-containers-{}", std::process::id()));
    let pops = [
        ("glyphs", Population::Images(make_glyph_population(25, (5, 10), 4, 8, 2)?)),
        ("text", Population::Text(make_text_population(25, 6, 2)?)),
    ];
    for (name, pop) in &pops {
        let dir = root.join(name);
        export_population(pop, &dir)?;
        let back = load_population(&dir)?;
        let bytes = std::fs::metadata(dir.join("records.bin"))?.len();
        println!("{name}: {bytes} bytes in {}, round trip equal: {}", dir.display(), &back == pop);
    }
    Ok(())
}
