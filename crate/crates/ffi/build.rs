fn main() {
    // The committed include/driftline.h is the source of truth for default
    // builds; enable `generate-header` to refresh it from the source.
    #[cfg(feature = "generate-header")]
    {
        let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
        let out = std::path::Path::new(&crate_dir).join("include/driftline.h");
        cbindgen::generate(&crate_dir)
            .expect("header generation failed")
            .write_to_file(out);
    }
}
