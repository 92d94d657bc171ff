//! Toggle each knowledge source off in turn and compare clustering quality.

use kec::pipeline::{Pipeline, Toggles};
use kec::synthetic::{rescue_config, RescueFixture, RescueParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let fixture = RescueFixture::generate(RescueParams::default());
    let paths = fixture.write_to(&dir.path().join("data"))?;

    let all = Toggles::default();
    let variants = [
        ("full", all),
        ("no name", Toggles { use_concept_name: false, ..all }),
        ("no description", Toggles { use_description: false, ..all }),
        ("no uni attributes", Toggles { use_uni_attr: false, ..all }),
        ("no bi attributes", Toggles { use_bi_attr: false, ..all }),
        ("concepts only", Toggles { use_uni_attr: false, use_bi_attr: false, ..all }),
        (
            "visual only",
            Toggles {
                use_concept_name: false,
                use_description: false,
                use_uni_attr: false,
                use_bi_attr: false,
            },
        ),
    ];
    for (i, (name, toggles)) in variants.into_iter().enumerate() {
        let mut config = rescue_config(&paths, &dir.path().join(format!("run{i}")), 0);
        config.toggles = toggles;
        // share one response cache so every variant reuses the same LLM replies
        config.llm.cache_dir = Some(dir.path().join("llm_cache"));
        let report = Pipeline::new(config)?.run_all()?.report.expect("labels given");
        println!("{name:<18} {}", report.to_json_line(false));
    }
    Ok(())
}
